use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heat_code::ExtractionConfig;
use heat_core::bugs::{inject_bug, BugSample};
use heat_core::bugtask::{self, BugModel, Prepared, TrainError, TrainOptions};
use heat_core::bundle::{self, Meta};
use heat_core::kg::{self, KgDataset, SyntheticSpec};
use heat_core::kgtask::{self, KgData, KgModel, KgTrainOptions};
use heat_core::packing::{BRUTEFORCE_MAX_ITEMS, DEFAULT_WIDTHS};
use heat_core::{gradsuite, reference, rng_stream, HeatConfig, MicrobatchSpec, Variant};
use heat_graph::Hypergraph;
use heat_tensor::{ParameterStore, Scalar};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "heat", version, about = "HEAT hypergraph transformer: extraction, training and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract hypergraphs from every `.py` file under a directory.
    Extract(ExtractArgs),
    /// Inject one synthetic bug (or none) into each program.
    InjectBugs(InjectArgs),
    /// Report bucket usage of greedy hyperedge packing.
    PackStats(PackStatsArgs),
    /// Train the bug localization and repair model.
    TrainBugs(TrainBugsArgs),
    /// Evaluate a bug model checkpoint.
    EvalBugs(EvalBugsArgs),
    /// Train the qualified link prediction model.
    TrainKg(TrainKgArgs),
    /// Evaluate a link prediction checkpoint.
    EvalKg(EvalKgArgs),
    /// Finite-difference gradient suite in double precision.
    Gradcheck(CheckArgs),
    /// Compare single-sequence-hyperedge HEAT (single precision) with a plain transformer.
    DegenerationTest(DegenerationArgs),
    /// Extract the reference snippet and check its expected relations.
    GoldenTest,
}

#[derive(Args)]
struct ExtractArgs {
    src_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    chunk_len: usize,
    /// Defaults to a quarter of the chunk length.
    #[arg(long)]
    overlap: Option<usize>,
}

#[derive(Args)]
struct InjectArgs {
    /// Programs to use; without it, synthetic programs are generated.
    #[arg(long)]
    src_dir: Option<PathBuf>,
    /// Number of synthetic programs.
    #[arg(long, default_value_t = 5000)]
    programs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PackStatsArgs {
    /// Hypergraphs, one JSON object per line.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated microbatch widths.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_WIDTHS)]
    widths: Vec<usize>,
    /// Graphs packed together.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Count only the incidences of each hyperedge, without its edge token.
    #[arg(long)]
    drop_edge_token: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

impl Precision {
    fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Encoder settings. Applied in order: preset, config file, variant, flags.
#[derive(Args)]
struct ModelArgs {
    /// `desk` or `large`.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// File of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    heads: Option<String>,
    #[arg(long)]
    ffn_dim: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    /// `max` or `cross_attention`.
    #[arg(long)]
    agg: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    deepset_messages: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    no_qualifiers: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    no_ffn: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    static_edge_state: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    drop_edge_token: Option<String>,
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainBugsArgs {
    /// Bug samples from `inject-bugs`.
    #[arg(long)]
    data: PathBuf,
    /// Held-out samples evaluated after training.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct EvalBugsArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

#[derive(Args)]
struct TrainKgArgs {
    /// Directory with entities, relations and split files.
    #[arg(long, required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Generate the synthetic dataset instead; it is saved under `<out>/dataset`.
    #[arg(long, conflicts_with = "data")]
    synthetic: bool,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct EvalKgArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `valid` or `test`.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    cases: usize,
}

#[derive(Args)]
struct DegenerationArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    cases: usize,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

/// Exit code 1 for bad input or configuration, 2 for failures while running.
enum Failure {
    Invalid(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn invalid(e: impl ToString) -> Failure {
    Failure::Invalid(e.to_string())
}

fn runtime(e: impl ToString) -> Failure {
    Failure::Runtime(e.to_string())
}

fn train_failure(e: TrainError) -> Failure {
    runtime(e)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Extract(a) => extract(a),
        Command::InjectBugs(a) => inject_bugs(a),
        Command::PackStats(a) => pack_stats(a),
        Command::TrainBugs(a) => match a.model.precision {
            Precision::F32 => train_bugs::<f32>(a),
            Precision::F64 => train_bugs::<f64>(a),
        },
        Command::EvalBugs(a) => eval_bugs(a),
        Command::TrainKg(a) => match a.model.precision {
            Precision::F32 => train_kg::<f32>(a),
            Precision::F64 => train_kg::<f64>(a),
        },
        Command::EvalKg(a) => eval_kg(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::DegenerationTest(a) => degeneration_test(a),
        Command::GoldenTest => golden_test(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

/// Prints a metrics table followed by one JSON record.
fn report(title: &str, rows: &[(&str, String)], record: serde_json::Value) {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    println!("{title}");
    for (k, v) in rows {
        println!("  {k:<width$}  {v}");
    }
    println!("{record}");
}

fn resolve_config(args: &ModelArgs, base: Option<HeatConfig>) -> Result<HeatConfig, Failure> {
    let mut config = match base {
        Some(c) => c,
        None => HeatConfig::preset(&args.preset).ok_or_else(|| invalid(format!("unknown preset `{}`", args.preset)))?,
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        config.apply_text(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    }
    if let Some(v) = args.variant {
        config = config.with_variant(v);
    }
    let flags = [
        ("layers", &args.layers),
        ("dim", &args.dim),
        ("heads", &args.heads),
        ("ffn_dim", &args.ffn_dim),
        ("dropout", &args.dropout),
        ("agg", &args.agg),
        ("deepset_messages", &args.deepset_messages),
        ("no_qualifiers", &args.no_qualifiers),
        ("no_ffn", &args.no_ffn),
        ("static_edge_state", &args.static_edge_state),
        ("drop_edge_token", &args.drop_edge_token),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, v).map_err(invalid)?;
        }
    }
    config.validate().map_err(invalid)?;
    Ok(config)
}

fn log_config(config: &HeatConfig, extra: &impl Serialize) {
    eprintln!("resolved config:");
    for line in config.to_string().lines() {
        eprintln!("  {line}");
    }
    if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(extra) {
        for (k, v) in map {
            eprintln!("  {k} = {v}");
        }
    }
}

fn python_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "py") {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, &mut files).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
    files.sort();
    Ok(files)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn extract(args: ExtractArgs) -> Outcome {
    let mut config = ExtractionConfig::with_chunk_len(args.chunk_len);
    if let Some(k) = args.overlap {
        config.overlap = k;
    }
    config.check().map_err(invalid)?;
    let files = python_files(&args.src_dir)?;
    let mut out = create(&args.out)?;
    let (mut ok, mut failed, mut nodes, mut edges) = (0, 0, 0, 0);
    for path in &files {
        let source = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        match heat_code::extract(&source, &config) {
            Ok(mut g) => {
                g.meta.insert("path".into(), path.display().to_string());
                nodes += g.num_nodes();
                edges += g.num_edges();
                writeln!(out, "{}", heat_graph::to_json_line(&g)).map_err(runtime)?;
                ok += 1;
            }
            Err(e) => {
                eprintln!("{}:{}:{}: {}", path.display(), e.line, e.col, e.message);
                failed += 1;
            }
        }
    }
    out.flush().map_err(runtime)?;
    report(
        "extract",
        &[
            ("files", files.len().to_string()),
            ("graphs", ok.to_string()),
            ("failed", failed.to_string()),
            ("nodes", nodes.to_string()),
            ("edges", edges.to_string()),
        ],
        json!({"command": "extract", "files": files.len(), "graphs": ok, "failed": failed, "nodes": nodes, "edges": edges}),
    );
    if failed > 0 {
        return Err(invalid(format!("{failed} file(s) failed to parse")));
    }
    Ok(())
}

fn inject_bugs(args: InjectArgs) -> Outcome {
    let samples: Vec<BugSample> = match &args.src_dir {
        None => bugtask::generate_samples(args.seed, args.programs),
        Some(dir) => {
            let config = ExtractionConfig::default();
            let mut rng = rng_stream(args.seed, "injection");
            let mut samples = Vec::new();
            for path in python_files(dir)? {
                let source = fs::read_to_string(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                match inject_bug(&source, &config, &mut rng) {
                    Ok(s) => samples.push(s),
                    Err(e) => eprintln!("{}: skipped: {e}", path.display()),
                }
            }
            samples
        }
    };
    let mut out = create(&args.out)?;
    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    for s in &samples {
        let kind = s.bug.as_ref().map_or("NoBug".to_string(), |b| format!("{:?}", b.kind));
        *kinds.entry(kind).or_default() += 1;
        writeln!(out, "{}", serde_json::to_string(s).map_err(runtime)?).map_err(runtime)?;
    }
    out.flush().map_err(runtime)?;
    let mut rows = vec![("samples", samples.len().to_string())];
    rows.extend(kinds.iter().map(|(k, v)| (k.as_str(), v.to_string())));
    report(
        "inject-bugs",
        &rows,
        json!({"command": "inject-bugs", "seed": args.seed, "samples": samples.len(), "kinds": kinds}),
    );
    Ok(())
}

fn read_lines<T>(path: &Path, parse: impl Fn(&str, usize) -> Result<T, String>) -> Result<Vec<T>, Failure> {
    let file = File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line, i + 1).map_err(|e| invalid(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

fn read_graphs(path: &Path) -> Result<Vec<Hypergraph>, Failure> {
    read_lines(path, |l, n| heat_graph::from_json_line(l, n).map_err(|e| e.to_string()))
}

fn read_samples(path: &Path) -> Result<Vec<BugSample>, Failure> {
    read_lines(path, |l, _| serde_json::from_str(l).map_err(|e| e.to_string()))
}

fn pack_stats(args: PackStatsArgs) -> Outcome {
    let spec = MicrobatchSpec::new(args.widths.clone()).map_err(invalid)?;
    let graphs = read_graphs(&args.data)?;
    let extra = usize::from(!args.drop_edge_token);
    let mut per_width: BTreeMap<usize, usize> = spec.widths().iter().map(|&w| (w, 0)).collect();
    let (mut used, mut capacity, mut cost, mut packs) = (0usize, 0usize, 0u64, 0usize);
    let (mut tractable, mut greedy_small, mut optimal_small) = (0usize, 0u64, 0u64);
    for chunk in graphs.chunks(args.batch.max(1)) {
        let lengths: Vec<usize> = chunk.iter().flat_map(|g| g.edges.iter().map(|e| e.width() + extra)).collect();
        let buckets = heat_core::greedy_pack(&lengths, &spec).map_err(invalid)?;
        packs += 1;
        for b in &buckets {
            *per_width.entry(b.width).or_default() += 1;
            used += b.used();
            capacity += b.width;
        }
        let c = heat_core::packing_cost(&buckets);
        cost += c;
        if !lengths.is_empty() && lengths.len() <= BRUTEFORCE_MAX_ITEMS {
            let (opt, _) = heat_core::optimal_pack_bruteforce(&lengths, &spec).map_err(runtime)?;
            tractable += 1;
            greedy_small += c;
            optimal_small += opt;
        }
    }
    let fill = if capacity == 0 { 0.0 } else { used as f64 / capacity as f64 };
    let ratio = (optimal_small > 0).then(|| greedy_small as f64 / optimal_small as f64);
    let mut rows: Vec<(String, String)> = vec![("graphs".into(), graphs.len().to_string()), ("packs".into(), packs.to_string())];
    rows.extend(per_width.iter().map(|(w, n)| (format!("buckets[{w}]"), n.to_string())));
    rows.push(("fill_ratio".into(), format!("{fill:.4}")));
    rows.push(("packing_cost".into(), cost.to_string()));
    rows.push((
        "greedy/optimal".into(),
        match ratio {
            Some(r) => format!("{r:.4} over {tractable} tractable packs"),
            None => "n/a".into(),
        },
    ));
    let rows: Vec<(&str, String)> = rows.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    let buckets: BTreeMap<String, usize> = per_width.iter().map(|(w, n)| (w.to_string(), *n)).collect();
    report(
        "pack-stats",
        &rows,
        json!({
            "command": "pack-stats",
            "graphs": graphs.len(),
            "packs": packs,
            "buckets": buckets,
            "fill_ratio": fill,
            "packing_cost": cost,
            "greedy_optimal_ratio": ratio,
            "tractable_packs": tractable,
        }),
    );
    Ok(())
}

fn save_bundle<T: Scalar>(dir: &Path, meta: &Meta, config: &HeatConfig, vocab: &heat_core::Vocab, store: &ParameterStore<T>) -> Outcome {
    bundle::save(dir, meta, config, vocab, store).map_err(runtime)
}

fn bug_rows(m: &bugtask::BugMetrics) -> Vec<(&'static str, String)> {
    vec![
        ("samples", m.samples.to_string()),
        ("joint", format!("{:.4}", m.joint)),
        ("localization", format!("{:.4}", m.loc)),
        ("repair", format!("{:.4}", m.repair)),
    ]
}

fn train_bugs<T: Scalar>(args: TrainBugsArgs) -> Outcome {
    let config = resolve_config(&args.model, None)?;
    let defaults = TrainOptions::default();
    let options = TrainOptions {
        epochs: args.train.epochs.unwrap_or(defaults.epochs),
        batch_size: args.train.batch_size.unwrap_or(defaults.batch_size),
        lr: args.train.lr.unwrap_or(defaults.lr),
        seed: args.train.seed,
    };
    log_config(&config, &json!({"precision": args.model.precision.name(), "training": options}));
    let samples = read_samples(&args.data)?;
    if samples.is_empty() {
        return Err(invalid(format!("{}: no samples", args.data.display())));
    }
    let vocab = bugtask::build_vocab(&samples);
    let prepared: Vec<Prepared> = samples.iter().map(|s| Prepared::new(s, &vocab)).collect();
    let mut store = ParameterStore::<T>::new();
    let model = BugModel::register(&mut store, &config, vocab.len(), &mut rng_stream(options.seed, "init")).map_err(invalid)?;
    eprintln!(
        "{} samples, vocab {}, {} parameters",
        samples.len(),
        vocab.len(),
        store.num_scalars()
    );
    let start = Instant::now();
    println!("epoch  loss");
    let logs = bugtask::train(&model, &mut store, &prepared, &options, |log, _| {
        println!("{:>5}  {:.6}", log.epoch, log.loss);
        eprintln!("epoch {} done after {:.0}s", log.epoch, start.elapsed().as_secs_f64());
    })
    .map_err(train_failure)?;
    let meta = Meta {
        task: "bugs".into(),
        precision: args.model.precision.name().into(),
        seed: options.seed,
        epochs: options.epochs,
        num_entities: None,
    };
    save_bundle(&args.train.out, &meta, &config, &vocab, &store)?;
    let mut record = json!({"command": "train-bugs", "seed": options.seed, "losses": logs.iter().map(|l| l.loss).collect::<Vec<_>>()});
    if let Some(valid) = &args.valid {
        let held: Vec<Prepared> = read_samples(valid)?.iter().map(|s| Prepared::new(s, &vocab)).collect();
        let m = bugtask::evaluate(&model, &store, &held, options.batch_size.max(32)).map_err(runtime)?;
        record["valid"] = serde_json::to_value(m).map_err(runtime)?;
        report("validation", &bug_rows(&m), record);
    } else {
        println!("{record}");
    }
    Ok(())
}

fn load_bundle<T: Scalar>(dir: &Path, task: &str) -> Result<(Meta, HeatConfig, heat_core::Vocab), Failure> {
    let meta = bundle::load_meta(dir).map_err(invalid)?;
    if meta.task != task {
        return Err(invalid(format!(
            "{}: checkpoint is for task `{}`, not `{task}`",
            dir.display(),
            meta.task
        )));
    }
    if meta.precision != T::DTYPE {
        return Err(invalid(format!("{}: precision mismatch", dir.display())));
    }
    let config = bundle::load_config(dir).map_err(invalid)?;
    let vocab = bundle::load_vocab(dir).map_err(invalid)?;
    Ok((meta, config, vocab))
}

fn eval_bugs(args: EvalBugsArgs) -> Outcome {
    let meta = bundle::load_meta(&args.ckpt).map_err(invalid)?;
    match meta.precision.as_str() {
        "f64" => eval_bugs_as::<f64>(args),
        _ => eval_bugs_as::<f32>(args),
    }
}

fn eval_bugs_as<T: Scalar>(args: EvalBugsArgs) -> Outcome {
    let (meta, config, vocab) = load_bundle::<T>(&args.ckpt, "bugs")?;
    log_config(&config, &meta);
    let mut store = ParameterStore::<T>::new();
    let model = BugModel::register(&mut store, &config, vocab.len(), &mut rng_stream(meta.seed, "init")).map_err(invalid)?;
    bundle::load_params(&args.ckpt, &mut store).map_err(invalid)?;
    let samples: Vec<Prepared> = read_samples(&args.data)?.iter().map(|s| Prepared::new(s, &vocab)).collect();
    let m = bugtask::evaluate(&model, &store, &samples, args.batch_size).map_err(runtime)?;
    let mut record = serde_json::to_value(m).map_err(runtime)?;
    record["command"] = json!("eval-bugs");
    report("eval-bugs", &bug_rows(&m), record);
    Ok(())
}

fn rank_rows(m: &kg::RankMetrics) -> Vec<(&'static str, String)> {
    vec![
        ("queries", m.queries.to_string()),
        ("MRR", format!("{:.4}", m.mrr)),
        ("H@1", format!("{:.4}", m.hits1)),
        ("H@10", format!("{:.4}", m.hits10)),
    ]
}

fn train_kg<T: Scalar>(args: TrainKgArgs) -> Outcome {
    let mut base = HeatConfig::preset(&args.model.preset).ok_or_else(|| invalid(format!("unknown preset `{}`", args.model.preset)))?;
    base.layers = 1;
    let config = resolve_config(&args.model, Some(base))?;
    let defaults = KgTrainOptions::default();
    let options = KgTrainOptions {
        epochs: args.train.epochs.unwrap_or(defaults.epochs),
        batch_size: args.train.batch_size.unwrap_or(defaults.batch_size),
        lr: args.train.lr.unwrap_or(defaults.lr),
        seed: args.train.seed,
    };
    log_config(&config, &json!({"precision": args.model.precision.name(), "training": options}));
    let ds = match &args.data {
        Some(dir) => KgDataset::load(dir).map_err(invalid)?,
        None => {
            let ds = kg::synthetic(&SyntheticSpec::default(), &mut rng_stream(args.data_seed, "kg"));
            ds.save(&args.train.out.join("dataset")).map_err(runtime)?;
            ds
        }
    };
    let data = KgData::new(&ds);
    let mut store = ParameterStore::<T>::new();
    let model = KgModel::register(
        &mut store,
        &config,
        data.vocab.len(),
        data.num_entities,
        &mut rng_stream(options.seed, "init"),
    )
    .map_err(invalid)?;
    eprintln!(
        "{} entities, {} training queries, {} parameters",
        data.num_entities,
        data.train.len(),
        store.num_scalars()
    );
    let start = Instant::now();
    println!("epoch  loss");
    let losses = kgtask::train(&model, &mut store, &data, &options, |epoch, loss, _| {
        println!("{epoch:>5}  {loss:.6}");
        eprintln!("epoch {epoch} done after {:.0}s", start.elapsed().as_secs_f64());
    })
    .map_err(train_failure)?;
    let meta = Meta {
        task: "kg".into(),
        precision: args.model.precision.name().into(),
        seed: options.seed,
        epochs: options.epochs,
        num_entities: Some(data.num_entities),
    };
    save_bundle(&args.train.out, &meta, &config, &data.vocab, &store)?;
    let m = kgtask::evaluate(&model, &store, &data, &data.valid, 256).map_err(runtime)?;
    report(
        "validation",
        &rank_rows(&m),
        json!({"command": "train-kg", "seed": options.seed, "losses": losses, "valid": m}),
    );
    Ok(())
}

fn eval_kg(args: EvalKgArgs) -> Outcome {
    let meta = bundle::load_meta(&args.ckpt).map_err(invalid)?;
    match meta.precision.as_str() {
        "f64" => eval_kg_as::<f64>(args),
        _ => eval_kg_as::<f32>(args),
    }
}

fn eval_kg_as<T: Scalar>(args: EvalKgArgs) -> Outcome {
    let (meta, config, vocab) = load_bundle::<T>(&args.ckpt, "kg")?;
    log_config(&config, &meta);
    let ds = KgDataset::load(&args.data).map_err(invalid)?;
    let data = KgData::new(&ds);
    if data.vocab != vocab || Some(data.num_entities) != meta.num_entities {
        return Err(invalid("dataset does not match the checkpoint vocabulary or entity count"));
    }
    let queries = match args.split.as_str() {
        "valid" => &data.valid,
        "test" => &data.test,
        other => return Err(invalid(format!("unknown split `{other}`"))),
    };
    let mut store = ParameterStore::<T>::new();
    let model = KgModel::register(
        &mut store,
        &config,
        vocab.len(),
        data.num_entities,
        &mut rng_stream(meta.seed, "init"),
    )
    .map_err(invalid)?;
    bundle::load_params(&args.ckpt, &mut store).map_err(invalid)?;
    let m = kgtask::evaluate(&model, &store, &data, queries, args.batch_size).map_err(runtime)?;
    let mut record = serde_json::to_value(m).map_err(runtime)?;
    record["command"] = json!("eval-kg");
    record["split"] = json!(args.split);
    report(&format!("eval-kg ({})", args.split), &rank_rows(&m), record);
    Ok(())
}

fn gradcheck(args: CheckArgs) -> Outcome {
    let r = gradsuite::run(args.seed, args.cases).map_err(runtime)?;
    let mut record = serde_json::to_value(&r).map_err(runtime)?;
    record["command"] = json!("gradcheck");
    record["threshold"] = json!(gradsuite::TOLERANCE);
    record["passed"] = json!(r.passed());
    report(
        "gradcheck",
        &[
            ("cases", r.cases.to_string()),
            ("checks", r.checks.to_string()),
            ("entries", r.checked_entries.to_string()),
            ("skipped (kinks)", r.skipped_nonsmooth.to_string()),
            ("max rel err", format!("{:.3e}", r.max_rel_err)),
            ("worst", r.worst.clone()),
            ("threshold", format!("{:.0e}", gradsuite::TOLERANCE)),
        ],
        record,
    );
    if r.passed() {
        Ok(())
    } else {
        Err(runtime(format!(
            "max relative error {:.3e} is not below {:.0e}",
            r.max_rel_err,
            gradsuite::TOLERANCE
        )))
    }
}

fn degeneration_test(args: DegenerationArgs) -> Outcome {
    let r = reference::degeneration_check::<f32>(args.seed, args.cases).map_err(runtime)?;
    let passed = r.max_abs_diff < args.tolerance;
    report(
        "degeneration-test",
        &[
            ("cases", r.cases.to_string()),
            ("max abs diff", format!("{:.3e}", r.max_abs_diff)),
            ("tolerance", format!("{:.0e}", args.tolerance)),
        ],
        json!({"command": "degeneration-test", "cases": r.cases, "max_abs_diff": r.max_abs_diff, "tolerance": args.tolerance, "passed": passed}),
    );
    if passed {
        Ok(())
    } else {
        Err(runtime("single-sequence HEAT diverges from the reference transformer"))
    }
}

fn golden_test() -> Outcome {
    match heat_code::golden::run() {
        Ok(g) => {
            report(
                "golden-test",
                &[
                    ("nodes", g.num_nodes().to_string()),
                    ("edges", g.num_edges().to_string()),
                    ("missing", "0".into()),
                ],
                json!({"command": "golden-test", "nodes": g.num_nodes(), "edges": g.num_edges(), "missing": [], "passed": true}),
            );
            Ok(())
        }
        Err(missing) => {
            for m in &missing {
                eprintln!("missing: {m}");
            }
            println!("{}", json!({"command": "golden-test", "missing": missing, "passed": false}));
            Err(runtime(format!("{} expected relation(s) missing", missing.len())))
        }
    }
}

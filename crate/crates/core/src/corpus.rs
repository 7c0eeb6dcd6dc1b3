//! Seeded generator of small, conventionally written mini-language programs.
//!
//! Each program follows fixed idioms (counters count up to a bound, budgets
//! shrink, a search midpoint is compared against its target), so a single
//! rewritten operator or variable is detectable from the code alone.
//! Comparisons are written in either orientation (`i < n` or `n > i`), which
//! makes operand roles, not operand sets, decide whether a comparison is
//! correct.

use rand::seq::SliceRandom;
use rand::Rng;

const COUNTERS: &[&str] = &["i", "j", "k", "idx", "pos", "step"];
const BOUNDS: &[&str] = &["n", "size", "limit", "count", "length", "end"];
const TOTALS: &[&str] = &["total", "acc", "result", "score"];
const BUDGETS: &[&str] = &["rest", "budget", "remaining", "left"];
const DATA: &[&str] = &["x", "val", "item", "delta", "weight"];
const CAPS: &[&str] = &["cap", "maximum", "ceiling"];
const FLAGS: &[&str] = &["done", "found", "stop", "ready"];
const LOWS: &[&str] = &["lo", "low", "base"];
const HIGHS: &[&str] = &["hi", "high", "top"];
const MIDS: &[&str] = &["mid", "middle", "pivot"];
const TARGETS: &[&str] = &["target", "goal", "key"];
const FUNCS: &[&str] = &[
    "compute",
    "scan",
    "walk",
    "measure",
    "tally",
    "process",
    "reduce_all",
    "sum_up",
    "search",
];

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("non-empty pool")
}

/// `small OP big` in a random orientation with a strict or non-strict
/// operator.
fn ordered<R: Rng + ?Sized>(rng: &mut R, small: &str, big: &str, strict: bool) -> String {
    let (lt, gt) = if strict { ("<", ">") } else { ("<=", ">=") };
    if rng.gen_bool(0.5) {
        format!("{small} {lt} {big}")
    } else {
        format!("{big} {gt} {small}")
    }
}

struct Writer {
    out: String,
}

impl Writer {
    fn line(&mut self, depth: usize, text: impl AsRef<str>) {
        for _ in 0..depth {
            self.out.push_str("    ");
        }
        self.out.push_str(text.as_ref());
        self.out.push('\n');
    }
}

fn counting<R: Rng + ?Sized>(rng: &mut R, w: &mut Writer) {
    let (f, c, b, a, d) = (
        pick(rng, FUNCS),
        pick(rng, COUNTERS),
        pick(rng, BOUNDS),
        pick(rng, TOTALS),
        pick(rng, DATA),
    );
    let cap = rng.gen_bool(0.4).then(|| pick(rng, CAPS));
    let flag = (cap.is_none() && rng.gen_bool(0.4)).then(|| pick(rng, FLAGS));
    let mut params = vec![b, d];
    params.extend(cap);
    w.line(0, format!("def {f}({}):", params.join(", ")));
    w.line(1, format!("{a} = 0"));
    w.line(1, format!("{c} = 0"));
    if let Some(fl) = flag {
        w.line(1, format!("{fl} = 0"));
        w.line(1, format!("while {} and not {fl}:", ordered(rng, c, b, true)));
    } else {
        w.line(1, format!("while {}:", ordered(rng, c, b, true)));
    }
    let mut body: Vec<Vec<String>> = vec![
        vec![format!("{a} += {d}")],
        vec![format!("{a} += {c}")],
        vec![format!("{a} = {a} + {c} * {d}")],
        vec![format!("if {c} % 2 == 0 or {d} == 0:"), format!("    {a} += {d}")],
        vec![format!("if {c} % 2 == 0:"), format!("    {a} += {c}")],
    ];
    body.shuffle(rng);
    for stmt in body.iter().take(rng.gen_range(1..=2)) {
        for l in stmt {
            w.line(2, l);
        }
    }
    if let Some(fl) = flag {
        w.line(2, format!("if {}:", ordered(rng, d, a, false)));
        w.line(3, format!("{fl} = 1"));
    }
    if let Some(cp) = cap {
        w.line(2, format!("if {}:", ordered(rng, cp, a, true)));
        w.line(3, format!("return {a}"));
    }
    w.line(2, format!("{c} += 1"));
    w.line(1, format!("return {a}"));
}

fn budget<R: Rng + ?Sized>(rng: &mut R, w: &mut Writer) {
    let (f, r, d, c, b) = (
        pick(rng, FUNCS),
        pick(rng, BUDGETS),
        pick(rng, DATA),
        pick(rng, COUNTERS),
        pick(rng, BOUNDS),
    );
    let bounded = rng.gen_bool(0.5);
    if bounded {
        w.line(0, format!("def {f}({r}, {d}, {b}):"));
    } else {
        w.line(0, format!("def {f}({r}, {d}):"));
    }
    w.line(1, format!("{c} = 0"));
    let fits = ordered(rng, d, r, false);
    if bounded {
        w.line(1, format!("while {fits} and {}:", ordered(rng, c, b, true)));
    } else {
        w.line(1, format!("while {fits}:"));
    }
    w.line(2, format!("{r} -= {d}"));
    if rng.gen_bool(0.5) {
        w.line(2, format!("{d} = {d} * 2"));
    }
    w.line(2, format!("{c} += 1"));
    w.line(1, format!("return {c}"));
}

fn bisect<R: Rng + ?Sized>(rng: &mut R, w: &mut Writer) {
    let (f, lo, hi, m, t) = (
        pick(rng, FUNCS),
        pick(rng, LOWS),
        pick(rng, HIGHS),
        pick(rng, MIDS),
        pick(rng, TARGETS),
    );
    w.line(0, format!("def {f}({lo}, {hi}, {t}):"));
    w.line(1, format!("while {}:", ordered(rng, lo, hi, true)));
    w.line(2, format!("{m} = ({lo} + {hi}) // 2"));
    w.line(2, format!("if {}:", ordered(rng, m, t, true)));
    w.line(3, format!("{lo} = {m} + 1"));
    w.line(2, "else:");
    w.line(3, format!("{hi} = {m}"));
    w.line(1, format!("return {lo}"));
}

/// One random program.
pub fn program<R: Rng + ?Sized>(rng: &mut R) -> String {
    let mut w = Writer { out: String::new() };
    match rng.gen_range(0..5) {
        0..=2 => counting(rng, &mut w),
        3 => budget(rng, &mut w),
        _ => bisect(rng, &mut w),
    }
    w.out
}

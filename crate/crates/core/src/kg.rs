//! Hyper-relational knowledge graphs: qualified statements, their
//! hyperedge form, the tab-separated dataset format, filtered ranking, and a
//! synthetic dataset whose answers are decided by one qualifier.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use heat_graph::{Hypergraph, Incidence, NodeKind};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

pub const SUBJECT_QUALIFIER: &str = "src";
pub const OBJECT_QUALIFIER: &str = "obj";

/// `(subject, relation, object, qualifiers)`; qualifiers form a multiset of
/// `(qualifier relation, qualifier value)` pairs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QualifiedStatement {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub qualifiers: Vec<(String, String)>,
}

impl QualifiedStatement {
    /// Qualifiers sorted, for multiset comparison.
    pub fn qualifier_multiset(&self) -> Vec<(&str, &str)> {
        let mut q: Vec<(&str, &str)> = self.qualifiers.iter().map(|(r, v)| (r.as_str(), v.as_str())).collect();
        q.sort();
        q
    }

    /// The statement without its object, in multiset-normal form.
    pub fn query(&self) -> Query {
        Query {
            subject: self.subject.clone(),
            relation: self.relation.clone(),
            qualifiers: self
                .qualifier_multiset()
                .into_iter()
                .map(|(r, v)| (r.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl fmt::Display for QualifiedStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.subject, self.relation, self.object)?;
        for (r, v) in &self.qualifiers {
            write!(f, "\t{r}={v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Query {
    pub subject: String,
    pub relation: String,
    /// Sorted.
    pub qualifiers: Vec<(String, String)>,
}

/// `make_query`: the statement minus its object, and the object.
pub fn make_query(stmt: &QualifiedStatement) -> (Query, String) {
    (stmt.query(), stmt.object.clone())
}

/// The statement as one hyperedge over entity ids: `(r, {(src, s), (obj, o)} ∪ Q)`.
/// `entity` maps entity names to node ids.
pub fn statement_to_hyperedge(stmt: &QualifiedStatement, entity: impl Fn(&str) -> usize) -> (String, Vec<Incidence>) {
    let mut incs = vec![
        Incidence::new(SUBJECT_QUALIFIER, entity(&stmt.subject)),
        Incidence::new(OBJECT_QUALIFIER, entity(&stmt.object)),
    ];
    incs.extend(stmt.qualifiers.iter().map(|(r, v)| Incidence::new(r.clone(), entity(v))));
    (stmt.relation.clone(), incs)
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{file}:{line}: {detail}")]
    Parse { file: String, line: usize, detail: String },
    #[error("unknown {what} `{name}` in {split} statement {index}")]
    Unresolved {
        what: &'static str,
        name: String,
        split: &'static str,
        index: usize,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Id and optional natural-language label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Named {
    pub id: String,
    pub label: Option<String>,
}

impl Named {
    /// The label if present, else the id.
    pub fn text(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KgDataset {
    pub entities: Vec<Named>,
    pub relations: Vec<Named>,
    pub train: Vec<QualifiedStatement>,
    pub valid: Vec<QualifiedStatement>,
    pub test: Vec<QualifiedStatement>,
}

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

/// Parses one statement line: `s\tr\to\tqr1=qv1\tqr2=qv2...`.
pub fn parse_statement(line: &str) -> Result<QualifiedStatement, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 3 {
        return Err(format!("expected at least 3 tab-separated fields, found {}", fields.len()));
    }
    if fields[..3].iter().any(|f| f.is_empty()) {
        return Err("empty subject, relation or object".into());
    }
    let qualifiers = fields[3..]
        .iter()
        .map(|f| match f.split_once('=') {
            Some((r, v)) if !r.is_empty() && !v.is_empty() => Ok((r.to_string(), v.to_string())),
            _ => Err(format!("qualifier `{f}` is not `relation=value`")),
        })
        .collect::<Result<_, _>>()?;
    Ok(QualifiedStatement {
        subject: fields[0].to_string(),
        relation: fields[1].to_string(),
        object: fields[2].to_string(),
        qualifiers,
    })
}

fn parse_named(file: &str, text: &str) -> Result<Vec<Named>, KgError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let id = parts.next().unwrap_or_default();
        if id.is_empty() {
            return Err(KgError::Parse {
                file: file.into(),
                line: i + 1,
                detail: "empty id".into(),
            });
        }
        out.push(Named {
            id: id.to_string(),
            label: parts.next().filter(|l| !l.is_empty()).map(str::to_string),
        });
    }
    Ok(out)
}

fn parse_statements(file: &str, text: &str) -> Result<Vec<QualifiedStatement>, KgError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            parse_statement(l).map_err(|detail| KgError::Parse {
                file: file.into(),
                line: i + 1,
                detail,
            })
        })
        .collect()
}

impl KgDataset {
    /// Reads `entities.tsv`, `relations.tsv` and one statement file per
    /// split (`train.tsv`, `valid.tsv`, `test.tsv`) from `dir`.
    pub fn load(dir: &Path) -> Result<Self, KgError> {
        let read = |name: &str| fs::read_to_string(dir.join(name));
        let mut ds = KgDataset {
            entities: parse_named("entities.tsv", &read("entities.tsv")?)?,
            relations: parse_named("relations.tsv", &read("relations.tsv")?)?,
            ..Default::default()
        };
        for split in SPLITS {
            let file = format!("{split}.tsv");
            *ds.split_mut(split) = parse_statements(&file, &read(&file)?)?;
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, dir: &Path) -> Result<(), KgError> {
        fs::create_dir_all(dir)?;
        let named = |items: &[Named]| -> String {
            items
                .iter()
                .map(|n| match &n.label {
                    Some(l) => format!("{}\t{l}\n", n.id),
                    None => format!("{}\n", n.id),
                })
                .collect()
        };
        fs::write(dir.join("entities.tsv"), named(&self.entities))?;
        fs::write(dir.join("relations.tsv"), named(&self.relations))?;
        for split in SPLITS {
            let text: String = self.split(split).iter().map(|s| format!("{s}\n")).collect();
            fs::write(dir.join(format!("{split}.tsv")), text)?;
        }
        Ok(())
    }

    pub fn split(&self, name: &str) -> &[QualifiedStatement] {
        match name {
            "train" => &self.train,
            "valid" => &self.valid,
            _ => &self.test,
        }
    }

    fn split_mut(&mut self, name: &str) -> &mut Vec<QualifiedStatement> {
        match name {
            "train" => &mut self.train,
            "valid" => &mut self.valid,
            _ => &mut self.test,
        }
    }

    /// Every statement id resolves; qualifier relations may be any relation
    /// id.
    pub fn validate(&self) -> Result<(), KgError> {
        let entities: BTreeSet<&str> = self.entities.iter().map(|e| e.id.as_str()).collect();
        let relations: BTreeSet<&str> = self.relations.iter().map(|r| r.id.as_str()).collect();
        for split in SPLITS {
            for (index, s) in self.split(split).iter().enumerate() {
                let missing = |what, name: &str| KgError::Unresolved {
                    what,
                    name: name.to_string(),
                    split,
                    index,
                };
                for e in [&s.subject, &s.object].into_iter().chain(s.qualifiers.iter().map(|(_, v)| v)) {
                    if !entities.contains(e.as_str()) {
                        return Err(missing("entity", e));
                    }
                }
                for r in std::iter::once(&s.relation).chain(s.qualifiers.iter().map(|(r, _)| r)) {
                    if !relations.contains(r.as_str()) {
                        return Err(missing("relation", r));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn entity_index(&self) -> HashMap<&str, usize> {
        self.entities.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect()
    }

    /// One entity node per entity (labelled with its text), one hyperedge
    /// per statement of `split`. Edge types and qualifiers use relation
    /// texts.
    pub fn build_graph(&self, split: &str) -> Hypergraph {
        let mut g = Hypergraph::new();
        for e in &self.entities {
            g.add_node(e.text(), NodeKind::Entity);
        }
        let index = self.entity_index();
        let texts: HashMap<&str, String> = self.relations.iter().map(|r| (r.id.as_str(), r.text().to_string())).collect();
        let text = |id: &str| texts.get(id).cloned().unwrap_or_else(|| id.to_string());
        for stmt in self.split(split) {
            let (rel, incs) = statement_to_hyperedge(stmt, |e| index[e]);
            let incs: Vec<(String, usize)> = incs
                .into_iter()
                .enumerate()
                .map(|(i, inc)| {
                    let q = if i < 2 { inc.qualifier } else { text(&inc.qualifier) };
                    (q, inc.node)
                })
                .collect();
            g.add_edge(text(&rel), incs);
        }
        g
    }

    /// Objects of every statement in any split, grouped by query.
    pub fn known_answers(&self) -> HashMap<Query, BTreeSet<String>> {
        let mut out: HashMap<Query, BTreeSet<String>> = HashMap::new();
        for split in SPLITS {
            for s in self.split(split) {
                out.entry(s.query()).or_default().insert(s.object.clone());
            }
        }
        out
    }

    /// Natural-language text of a relation id, falling back to the id.
    pub fn relation_label(&self, id: &str) -> String {
        self.relations.iter().find(|r| r.id == id).map_or(id, |r| r.text()).to_string()
    }
}

/// Rank of `answer` among `scores`, ignoring every index in `filtered`
/// except the answer itself. Ties count half: the mean of the best and
/// worst position among equal scores.
pub fn filtered_rank(scores: &[f64], answer: usize, filtered: &BTreeSet<usize>) -> f64 {
    let target = scores[answer];
    let (mut above, mut ties) = (0usize, 0usize);
    for (i, &s) in scores.iter().enumerate() {
        if i == answer || filtered.contains(&i) {
            continue;
        }
        if s > target {
            above += 1;
        } else if s == target {
            ties += 1;
        }
    }
    1.0 + above as f64 + ties as f64 / 2.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RankMetrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits10: f64,
    pub queries: usize,
}

pub fn metrics(ranks: &[f64]) -> RankMetrics {
    let n = ranks.len().max(1) as f64;
    RankMetrics {
        mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
        hits1: ranks.iter().filter(|&&r| r <= 1.0).count() as f64 / n,
        hits10: ranks.iter().filter(|&&r| r <= 10.0).count() as f64 / n,
        queries: ranks.len(),
    }
}

/// Shape of the synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub entities: usize,
    /// Entities used as subjects and qualifier values; the rest are objects.
    pub pool: usize,
    pub relations: usize,
    /// Statements per (relation, deciding value) pair.
    pub per_key: usize,
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            entities: 500,
            pool: 100,
            relations: 4,
            per_key: 4,
            test_fraction: 0.2,
        }
    }
}

pub const DECIDING_QUALIFIER: &str = "according_to";
pub const DISTRACTING_QUALIFIER: &str = "noted_by";

/// Statements `(s, r, M_r(v), {according_to: v, noted_by: d})` where
/// `M_r` is a fixed random map from pool entities to object entities and
/// `s`, `v`, `d` are distinct pool entities. The object depends on the
/// qualifier value `v` only; a model that cannot tell the three pool
/// entities of a query apart can do no better than guess among them.
///
/// Every (relation, value) pair keeps at least one training statement so
/// test queries are answerable from training data.
pub fn synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> KgDataset {
    assert!(spec.pool >= 3 && spec.entities > spec.pool && spec.per_key >= 2);
    let entities: Vec<Named> = (0..spec.entities)
        .map(|i| Named {
            id: format!("E{i}"),
            label: Some(format!("entity {i}")),
        })
        .collect();
    let mut relations: Vec<Named> = (0..spec.relations)
        .map(|i| Named {
            id: format!("R{i}"),
            label: Some(format!("relation {i}")),
        })
        .collect();
    for q in [DECIDING_QUALIFIER, DISTRACTING_QUALIFIER] {
        relations.push(Named {
            id: q.to_string(),
            label: Some(q.replace('_', " ")),
        });
    }
    let objects: Vec<usize> = (spec.pool..spec.entities).collect();
    let mut ds = KgDataset {
        entities,
        relations,
        ..Default::default()
    };
    let mut seen = BTreeSet::new();
    for r in 0..spec.relations {
        let map: Vec<usize> = (0..spec.pool).map(|_| *objects.choose(rng).expect("objects")).collect();
        for v in 0..spec.pool {
            let mut stmts = Vec::with_capacity(spec.per_key);
            while stmts.len() < spec.per_key {
                let s = rng.gen_range(0..spec.pool);
                let d = rng.gen_range(0..spec.pool);
                if s == v || d == v || s == d || !seen.insert((r, v, s, d)) {
                    continue;
                }
                stmts.push(QualifiedStatement {
                    subject: format!("E{s}"),
                    relation: format!("R{r}"),
                    object: format!("E{}", map[v]),
                    qualifiers: vec![
                        (DECIDING_QUALIFIER.to_string(), format!("E{v}")),
                        (DISTRACTING_QUALIFIER.to_string(), format!("E{d}")),
                    ],
                });
            }
            for (i, st) in stmts.into_iter().enumerate() {
                if i > 0 && rng.gen_bool(spec.test_fraction) {
                    if rng.gen_bool(0.5) {
                        ds.test.push(st);
                    } else {
                        ds.valid.push(st);
                    }
                } else {
                    ds.train.push(st);
                }
            }
        }
    }
    ds
}

/// Count of statements per relation, for summaries.
pub fn relation_counts(stmts: &[QualifiedStatement]) -> BTreeMap<&str, usize> {
    let mut out = BTreeMap::new();
    for s in stmts {
        *out.entry(s.relation.as_str()).or_default() += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_stream;

    fn stmt(line: &str) -> QualifiedStatement {
        parse_statement(line).unwrap()
    }

    #[test]
    fn statement_line_round_trip() {
        let line = "Einstein\tEducatedAt\tETH\tdegree=Bachelor\tmajor=Mathematics\tmajor=Physics";
        let s = stmt(line);
        assert_eq!(s.subject, "Einstein");
        assert_eq!(s.qualifiers.len(), 3);
        assert_eq!(s.to_string(), line);
        assert!(parse_statement("a\tb").is_err());
        assert!(parse_statement("a\tb\tc\tnovalue").is_err());
        assert!(parse_statement("a\t\tc").is_err());
    }

    #[test]
    fn hyperedge_keeps_repeated_qualifiers() {
        let s = stmt("s\tr\to\tmajor=m1\tmajor=m2");
        let ids = ["s", "o", "m1", "m2"];
        let (rel, incs) = statement_to_hyperedge(&s, |e| ids.iter().position(|x| *x == e).unwrap());
        assert_eq!(rel, "r");
        let pairs: Vec<(&str, usize)> = incs.iter().map(|i| (i.qualifier.as_str(), i.node)).collect();
        assert_eq!(pairs, [("src", 0), ("obj", 1), ("major", 2), ("major", 3)]);
        let (_, bare) = statement_to_hyperedge(&stmt("s\tr\to"), |e| ids.iter().position(|x| *x == e).unwrap());
        assert_eq!(bare.len(), 2);
    }

    #[test]
    fn filtered_rank_ignores_known_answers() {
        // entity 2 is the answer, tied with entity 1 which is another true
        // answer, and beaten by entity 0
        let scores = [0.9, 0.5, 0.5, 0.1];
        assert_eq!(filtered_rank(&scores, 2, &BTreeSet::new()), 2.5);
        assert_eq!(filtered_rank(&scores, 2, &BTreeSet::from([1])), 2.0);
        assert_eq!(filtered_rank(&scores, 2, &BTreeSet::from([0, 1])), 1.0);
        assert_eq!(filtered_rank(&scores, 0, &BTreeSet::new()), 1.0);
    }

    #[test]
    fn metrics_of_ranks() {
        let m = metrics(&[1.0, 2.0, 20.0]);
        assert!((m.mrr - (1.0 + 0.5 + 0.05) / 3.0).abs() < 1e-12);
        assert!((m.hits1 - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.hits10 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_dataset_is_consistent() {
        let ds = synthetic(&SyntheticSpec::default(), &mut rng_stream(0, "kg"));
        ds.validate().unwrap();
        assert_eq!(ds.entities.len(), 500);
        let total = ds.train.len() + ds.valid.len() + ds.test.len();
        assert_eq!(total, 4 * 100 * 4);
        // the deciding value fixes the object
        let mut decided: HashMap<(&str, &str), &str> = HashMap::new();
        for s in ds.train.iter().chain(&ds.test) {
            let v = &s.qualifiers[0].1;
            let o = decided.entry((&s.relation, v)).or_insert(&s.object);
            assert_eq!(*o, s.object);
        }
        // every test key is seen in training
        let train_keys: BTreeSet<(&str, &str)> = ds.train.iter().map(|s| (s.relation.as_str(), s.qualifiers[0].1.as_str())).collect();
        assert!(ds
            .test
            .iter()
            .all(|s| train_keys.contains(&(s.relation.as_str(), s.qualifiers[0].1.as_str()))));
        let g = ds.build_graph("train");
        assert_eq!(g.edges.len(), ds.train.len());
        assert!(g.edges.iter().all(|e| e.incidences.len() == 4));
    }

    #[test]
    fn save_and_load_round_trip() {
        let ds = synthetic(
            &SyntheticSpec {
                entities: 20,
                pool: 8,
                relations: 2,
                per_key: 2,
                test_fraction: 0.5,
            },
            &mut rng_stream(1, "kg"),
        );
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(KgDataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn load_reports_unknown_entities() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("entities.tsv"), "a\nb\n").unwrap();
        fs::write(dir.path().join("relations.tsv"), "r\tis related to\n").unwrap();
        fs::write(dir.path().join("train.tsv"), "a\tr\tc\n").unwrap();
        fs::write(dir.path().join("valid.tsv"), "").unwrap();
        fs::write(dir.path().join("test.tsv"), "").unwrap();
        let err = KgDataset::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("unknown entity `c`"), "{err}");
    }
}

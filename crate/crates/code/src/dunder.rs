//! Operator to data-model method table, loaded from `data/dunder.tsv`.

use std::sync::OnceLock;

const TABLE: &str = include_str!("../data/dunder.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Context {
    Binary,
    Compare,
    Augmented,
    Unary,
    Attribute,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub context: Context,
    pub operator: String,
    pub relation: String,
    /// Role of the left operand (the augmented target, or the sole unary operand).
    pub left: String,
    pub right: Option<String>,
}

pub fn table() -> &'static [Entry] {
    static PARSED: OnceLock<Vec<Entry>> = OnceLock::new();
    PARSED.get_or_init(|| {
        TABLE
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                assert_eq!(f.len(), 5, "bad dunder row {l:?}");
                let context = match f[0] {
                    "binary" => Context::Binary,
                    "compare" => Context::Compare,
                    "augmented" => Context::Augmented,
                    "unary" => Context::Unary,
                    "attribute" => Context::Attribute,
                    other => panic!("unknown dunder context {other:?}"),
                };
                Entry {
                    context,
                    operator: f[1].into(),
                    relation: f[2].into(),
                    left: f[3].into(),
                    right: (f[4] != "-").then(|| f[4].to_string()),
                }
            })
            .collect()
    })
}

pub fn lookup(context: Context, operator: &str) -> Option<&'static Entry> {
    table().iter().find(|e| e.context == context && e.operator == operator)
}

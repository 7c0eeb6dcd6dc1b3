//! Subtoken splitting and the shared subtoken vocabulary.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const UNK: usize = 0;
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Lower,
    Upper,
    Digit,
    Other,
}

fn class(c: char) -> Class {
    if c.is_ascii_digit() {
        Class::Digit
    } else if c.is_uppercase() {
        Class::Upper
    } else if c.is_alphabetic() {
        Class::Lower
    } else {
        Class::Other
    }
}

/// Splits at underscores, lower-to-upper case changes, the end of an upper
/// case run followed by a word (`HTTPServer`), and letter/digit changes.
/// Pieces are lowercased. Runs of other symbols stay whole (`+=`).
pub fn subtokenize(name: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in name.split('_').filter(|w| !w.is_empty()) {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (a, b) = (class(chars[i - 1]), class(chars[i]));
            let acronym_end = a == Class::Upper && b == Class::Upper && chars.get(i + 1).is_some_and(|&c| class(c) == Class::Lower);
            let split = match (a, b) {
                (Class::Upper, Class::Lower) => false,
                (Class::Lower, Class::Upper) => true,
                _ if a != b => true,
                _ => acronym_end,
            };
            if split {
                out.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        out.push(chars[start..].iter().collect::<String>().to_lowercase());
    }
    if out.is_empty() && !name.is_empty() {
        out.push(name.to_string());
    }
    out
}

/// Subtoken to row index; row 0 is the shared unknown entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Keeps subtokens seen at least `min_count` times across `names`,
    /// ordered by descending count then alphabetically.
    pub fn build<'a>(names: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for n in names {
            for s in subtokenize(n) {
                *counts.entry(s).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(kept.into_iter().map(|(s, _)| s))
    }

    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![UNK_TOKEN.to_string()];
        all.extend(tokens.into_iter().filter(|t| t != UNK_TOKEN));
        let mut v = Vocab {
            tokens: all,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuilds the lookup map, e.g. after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, subtoken: &str) -> usize {
        self.index.get(subtoken).copied().unwrap_or(UNK)
    }

    /// Row indices of a name's subtokens.
    pub fn encode(&self, name: &str) -> Vec<usize> {
        let ids: Vec<usize> = subtokenize(name).iter().map(|s| self.id(s)).collect();
        if ids.is_empty() {
            vec![UNK]
        } else {
            ids
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_names() {
        assert_eq!(subtokenize("foo_bar2"), ["foo", "bar", "2"]);
        assert_eq!(subtokenize("parName"), ["par", "name"]);
        assert_eq!(subtokenize("x"), ["x"]);
        assert_eq!(subtokenize("AstNode"), ["ast", "node"]);
        assert_eq!(subtokenize("HTTPServer"), ["http", "server"]);
        assert_eq!(subtokenize("__add__"), ["add"]);
        assert_eq!(subtokenize("may_last_use"), ["may", "last", "use"]);
        assert_eq!(subtokenize("+="), ["+="]);
        assert_eq!(subtokenize("p12"), ["p", "12"]);
        assert_eq!(subtokenize("_"), ["_"]);
    }

    #[test]
    fn vocabulary_keeps_frequent_subtokens() {
        let v = Vocab::build(["foo_bar", "foo", "bar_baz", "qux"], 2);
        assert_eq!(v.tokens(), [UNK_TOKEN, "bar", "foo"]);
        assert_eq!(v.encode("fooBaz"), vec![2, UNK]);
        let mut back: Vocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        back.reindex();
        assert_eq!(back, v);
    }
}

//! One graph per line as a JSON object:
//! `{"nodes":[{"id","label","kind"}],"edges":[{"id","type","incidences":[[q,n]]}],"meta":{}}`.

use std::io::{BufRead, Write};

use crate::{validate, GraphError, Hypergraph};

pub fn to_json_line(g: &Hypergraph) -> String {
    serde_json::to_string(g).expect("hypergraph serialisation cannot fail")
}

/// Parses and validates one record. `line` is used in error messages only.
pub fn from_json_line(text: &str, line: usize) -> Result<Hypergraph, GraphError> {
    let g: Hypergraph = serde_json::from_str(text).map_err(|e| GraphError::Malformed {
        line,
        detail: e.to_string(),
    })?;
    if let Some(v) = validate(&g).first() {
        return Err(GraphError::Malformed {
            line,
            detail: v.to_string(),
        });
    }
    Ok(g)
}

pub fn write_jsonl<'a, W: Write>(mut out: W, graphs: impl IntoIterator<Item = &'a Hypergraph>) -> Result<(), GraphError> {
    for g in graphs {
        writeln!(out, "{}", to_json_line(g))?;
    }
    Ok(())
}

/// Reads every non-blank line; errors carry 1-based line numbers.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Hypergraph>, GraphError> {
    let mut graphs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        graphs.push(from_json_line(&line, i + 1)?);
    }
    Ok(graphs)
}

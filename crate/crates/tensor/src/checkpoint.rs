//! Text checkpoint container.
//!
//! ```text
//! heat-checkpoint 1
//! dtype f32
//! param <name> <d0>x<d1>x...      (`scalar` for rank 0)
//! <hex bit patterns, space separated>
//! ...
//! end
//! ```
//!
//! Values are stored as IEEE-754 bit patterns, so a load reproduces the saved
//! store bit for bit. Parameter names must not contain whitespace.

use std::io::{BufRead, Write};

use crate::error::{Result, TensorError};
use crate::params::ParameterStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &str = "heat-checkpoint 1";

pub fn save<T: Scalar, W: Write>(store: &ParameterStore<T>, mut out: W) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "dtype {}", T::DTYPE)?;
    let width = std::mem::size_of::<T>() * 2;
    for (_, name, value) in store.iter() {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(TensorError::Invalid {
                op: "checkpoint",
                detail: format!("parameter name `{name}` is not a single word"),
            });
        }
        let shape = if value.rank() == 0 {
            "scalar".to_string()
        } else {
            value.shape().iter().map(usize::to_string).collect::<Vec<_>>().join("x")
        };
        writeln!(out, "param {name} {shape}")?;
        let hex: Vec<String> = value.data().iter().map(|v| format!("{:0width$x}", v.to_bits_u64())).collect();
        writeln!(out, "{}", hex.join(" "))?;
    }
    writeln!(out, "end")?;
    Ok(())
}

pub fn load<T: Scalar, R: BufRead>(input: R) -> Result<ParameterStore<T>> {
    let mut lines = input.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, line)) => Ok((i + 1, line?)),
            None => Err(TensorError::Checkpoint {
                line: 0,
                detail: format!("unexpected end of file, expected {what}"),
            }),
        }
    };
    let bad = |line: usize, detail: String| TensorError::Checkpoint { line, detail };

    let (n, magic) = next("header")?;
    if magic.trim() != MAGIC {
        return Err(bad(n, format!("bad header `{magic}`")));
    }
    let (n, dtype) = next("dtype")?;
    if dtype.trim() != format!("dtype {}", T::DTYPE) {
        return Err(bad(n, format!("expected dtype {}, found `{dtype}`", T::DTYPE)));
    }
    let mut store = ParameterStore::new();
    loop {
        let (n, line) = next("param or end")?;
        let line = line.trim();
        if line == "end" {
            return Ok(store);
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [kw, name, shape] = fields[..] else {
            return Err(bad(n, format!("malformed param line `{line}`")));
        };
        if kw != "param" {
            return Err(bad(n, format!("expected `param`, found `{kw}`")));
        }
        let shape: Vec<usize> = if shape == "scalar" {
            Vec::new()
        } else {
            shape
                .split('x')
                .map(|d| d.parse().map_err(|_| bad(n, format!("bad extent `{d}`"))))
                .collect::<Result<_>>()?
        };
        let (vn, values) = next("values")?;
        let data: Vec<T> = values
            .split_whitespace()
            .map(|h| {
                u64::from_str_radix(h, 16)
                    .map(T::from_bits_u64)
                    .map_err(|_| bad(vn, format!("bad value `{h}`")))
            })
            .collect::<Result<_>>()?;
        let tensor = Tensor::new(shape, data).map_err(|e| bad(vn, e.to_string()))?;
        store.add(name, tensor).map_err(|e| bad(n, e.to_string()))?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParameterStore::<f32>::new();
        store
            .add("w", Tensor::new(vec![2, 2], vec![0.1, -0.0, f32::MIN_POSITIVE, 3.5e7]).unwrap())
            .unwrap();
        store.add("s", Tensor::scalar(std::f32::consts::PI)).unwrap();
        let mut buf = Vec::new();
        save(&store, &mut buf).unwrap();
        let back: ParameterStore<f32> = load(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (id, name, value) in store.iter() {
            let other = back.get(id);
            assert_eq!(back.name(id), name);
            assert_eq!(other.shape(), value.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(other), bits(value));
        }
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let mut store = ParameterStore::<f64>::new();
        store.add("w", Tensor::zeros(&[3])).unwrap();
        let mut buf = Vec::new();
        save(&store, &mut buf).unwrap();
        let err = load::<f32, _>(buf.as_slice()).unwrap_err();
        assert!(matches!(err, TensorError::Checkpoint { line: 2, .. }));
    }

    #[test]
    fn truncated_values_report_the_line() {
        let text = "heat-checkpoint 1\ndtype f64\nparam w 2\n3ff0000000000000\nend\n";
        let err = load::<f64, _>(text.as_bytes()).unwrap_err();
        assert!(matches!(err, TensorError::Checkpoint { line: 4, .. }), "{err}");
    }
}

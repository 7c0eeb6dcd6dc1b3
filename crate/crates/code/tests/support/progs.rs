//! Random mini-language programs for property tests.

use rand::seq::SliceRandom;
use rand::Rng;

const LOCALS: &[&str] = &["x", "y", "z"];
const PARAMS: &[&str] = &["a", "b"];
const GLOBALS: &[&str] = &["g", "h"];
const CALLEES: &[&str] = &["f", "k", "helper"];

pub struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    loops: bool,
    in_function: bool,
}

pub fn program<R: Rng>(rng: &mut R, loops: bool) -> String {
    let mut g = Gen {
        rng,
        loops,
        in_function: false,
    };
    let mut out = String::new();
    let funcs = g.rng.gen_range(0..=2);
    for i in 0..funcs {
        g.in_function = true;
        let params = &PARAMS[..g.rng.gen_range(0..=PARAMS.len())];
        out.push_str(&format!("def fn{i}({}):\n", params.join(", ")));
        g.block(1, 1, &mut out);
        g.in_function = false;
    }
    g.block(0, 0, &mut out);
    out
}

impl<R: Rng> Gen<'_, R> {
    fn name(&mut self) -> &'static str {
        let pool: Vec<&str> = LOCALS.iter().chain(PARAMS).chain(GLOBALS).copied().collect();
        pool.choose(self.rng).unwrap()
    }

    fn expr(&mut self, depth: usize) -> String {
        let leaf = depth >= 2 || self.rng.gen_bool(0.4);
        if leaf {
            return if self.rng.gen_bool(0.75) {
                self.name().to_string()
            } else {
                self.rng.gen_range(0..10).to_string()
            };
        }
        let e = match self.rng.gen_range(0..7) {
            0 => format!("{} + {}", self.expr(depth + 1), self.expr(depth + 1)),
            1 => format!("({}) - {}", self.expr(depth + 1), self.expr(depth + 1)),
            2 => format!("{} < {}", self.expr(2), self.expr(2)),
            3 => format!("({}) and ({})", self.expr(depth + 1), self.expr(depth + 1)),
            4 => format!("not {}", self.expr(2)),
            5 => {
                let callee = *CALLEES.choose(self.rng).unwrap();
                format!("{callee}({})", self.expr(depth + 1))
            }
            _ => format!("{}.attr", self.name()),
        };
        if depth > 0 {
            format!("({e})")
        } else {
            e
        }
    }

    fn block(&mut self, indent: usize, depth: usize, out: &mut String) {
        let n = if indent == 0 {
            self.rng.gen_range(0..=4)
        } else {
            self.rng.gen_range(1..=4)
        };
        for _ in 0..n {
            self.stmt(indent, depth, out);
        }
    }

    fn stmt(&mut self, indent: usize, depth: usize, out: &mut String) {
        let pad = "    ".repeat(indent);
        let nested = depth < 3;
        let kind = self.rng.gen_range(0..10);
        match kind {
            0..=2 => {
                let v = *LOCALS.choose(self.rng).unwrap();
                let e = self.expr(0);
                out.push_str(&format!("{pad}{v} = {e}\n"));
            }
            3 => {
                let v = *LOCALS.choose(self.rng).unwrap();
                let e = self.expr(1);
                out.push_str(&format!("{pad}{v} += {e}\n"));
            }
            4 => {
                let e = self.expr(0);
                out.push_str(&format!("{pad}f({e})\n"));
            }
            5 | 6 if nested => {
                let c = self.expr(1);
                out.push_str(&format!("{pad}if {c}:\n"));
                self.block(indent + 1, depth + 1, out);
                if self.rng.gen_bool(0.6) {
                    out.push_str(&format!("{pad}else:\n"));
                    self.block(indent + 1, depth + 1, out);
                }
            }
            7 if nested && self.loops => {
                let c = self.expr(1);
                out.push_str(&format!("{pad}while {c}:\n"));
                self.block(indent + 1, depth + 1, out);
            }
            8 if self.in_function && indent > 1 => {
                let e = self.expr(1);
                out.push_str(&format!("{pad}return {e}\n"));
            }
            _ => {
                let v = self.name();
                out.push_str(&format!("{pad}{v}\n"));
            }
        }
    }
}

use std::collections::{BTreeSet, HashMap};

use crate::ast::{Ast, AstId, Kind};

pub type SymId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    Module,
    Function(AstId),
}

#[derive(Clone, Debug)]
pub struct Symbol {
    pub name: String,
    pub scope: Scope,
    /// Name and Param leaves, in source order.
    pub occurrences: Vec<AstId>,
}

/// Python-like scoping: parameters and assigned names are local to their
/// function, every other name belongs to the module.
#[derive(Clone, Debug, Default)]
pub struct SymbolTable {
    pub symbols: Vec<Symbol>,
    pub of_node: HashMap<AstId, SymId>,
}

impl SymbolTable {
    pub fn resolve(ast: &Ast) -> SymbolTable {
        let mut table = SymbolTable::default();
        let mut by_key: HashMap<(Scope, String), SymId> = HashMap::new();
        let mut visit = |table: &mut SymbolTable, node: AstId, scope: Scope| {
            let name = ast.text(node).to_string();
            let id = *by_key.entry((scope, name.clone())).or_insert_with(|| {
                table.symbols.push(Symbol {
                    name,
                    scope,
                    occurrences: Vec::new(),
                });
                table.symbols.len() - 1
            });
            table.symbols[id].occurrences.push(node);
            table.of_node.insert(node, id);
        };
        for stmt in ast.suite(ast.root) {
            if ast.kind(stmt) == Kind::FunctionDef {
                let locals = function_locals(ast, stmt);
                for n in ast.preorder(stmt) {
                    if matches!(ast.kind(n), Kind::Name | Kind::Param) {
                        let scope = if locals.contains(ast.text(n)) {
                            Scope::Function(stmt)
                        } else {
                            Scope::Module
                        };
                        visit(&mut table, n, scope);
                    }
                }
            } else {
                for n in ast.preorder(stmt) {
                    if ast.kind(n) == Kind::Name {
                        visit(&mut table, n, Scope::Module);
                    }
                }
            }
        }
        table
    }

    pub fn symbol_of(&self, node: AstId) -> Option<SymId> {
        self.of_node.get(&node).copied()
    }

    /// Local symbols of a function, in first-occurrence order.
    pub fn locals(&self, func: AstId) -> Vec<SymId> {
        (0..self.symbols.len())
            .filter(|&s| self.symbols[s].scope == Scope::Function(func))
            .collect()
    }
}

/// Parameters plus every assigned or augmented name in the body.
pub fn function_locals(ast: &Ast, func: AstId) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = ast.numbered(func, "param").into_iter().map(|p| ast.text(p).to_string()).collect();
    for n in ast.preorder(func) {
        if matches!(ast.kind(n), Kind::Assign | Kind::AugAssign) {
            out.insert(ast.text(ast.child(n, "target").unwrap()).to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    #[test]
    fn locals_shadow_module_names() {
        let src = "x = 1\ndef f(a):\n    y = a + x\n    return y\nf(x)\n";
        let ast = parse(src).unwrap();
        let t = SymbolTable::resolve(&ast);
        let names: Vec<(&str, bool)> = t.symbols.iter().map(|s| (s.name.as_str(), s.scope == Scope::Module)).collect();
        assert_eq!(names, [("x", true), ("a", false), ("y", false), ("f", true)]);
        assert_eq!(t.symbols[0].occurrences.len(), 3);
        assert_eq!(t.symbols[1].occurrences.len(), 2);
        let func = ast.suite(ast.root)[1];
        assert_eq!(t.locals(func), vec![1, 2]);
    }
}

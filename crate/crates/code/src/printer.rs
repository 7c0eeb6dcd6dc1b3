use crate::ast::{Ast, AstId, Kind};

/// Renders an AST back to source with four-space indentation and the
/// minimal parentheses the grammar needs.
pub fn print(ast: &Ast) -> String {
    let mut out = String::new();
    for s in ast.suite(ast.root) {
        stmt(ast, s, 0, &mut out);
    }
    out
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn suite(ast: &Ast, id: AstId, depth: usize, out: &mut String) {
    out.push_str(":\n");
    for s in ast.suite(id) {
        stmt(ast, s, depth + 1, out);
    }
}

fn stmt(ast: &Ast, id: AstId, depth: usize, out: &mut String) {
    indent(depth, out);
    let c = |role| ast.child(id, role).expect("fixed roles");
    match ast.kind(id) {
        Kind::FunctionDef => {
            let params: Vec<&str> = ast.numbered(id, "param").into_iter().map(|p| ast.text(p)).collect();
            out.push_str(&format!("def {}({})", ast.text(c("name")), params.join(", ")));
            suite(ast, c("body"), depth, out);
        }
        Kind::If => if_chain(ast, id, "if", depth, out),
        Kind::While => {
            out.push_str("while ");
            out.push_str(&expr(ast, c("test"), 0));
            suite(ast, c("body"), depth, out);
        }
        Kind::Assign => {
            out.push_str(&format!("{} = {}\n", ast.text(c("target")), expr(ast, c("value"), 0)));
        }
        Kind::AugAssign => {
            out.push_str(&format!(
                "{} {} {}\n",
                ast.text(c("target")),
                ast.text(c("op")),
                expr(ast, c("value"), 0)
            ));
        }
        Kind::Return => match ast.child(id, "value") {
            Some(v) => out.push_str(&format!("return {}\n", expr(ast, v, 0))),
            None => out.push_str("return\n"),
        },
        _ => {
            out.push_str(&expr(ast, id, 0));
            out.push('\n');
        }
    }
}

fn if_chain(ast: &Ast, id: AstId, keyword: &str, depth: usize, out: &mut String) {
    out.push_str(keyword);
    out.push(' ');
    out.push_str(&expr(ast, ast.child(id, "test").unwrap(), 0));
    suite(ast, ast.child(id, "body").unwrap(), depth, out);
    if let Some(orelse) = ast.child(id, "orelse") {
        indent(depth, out);
        if ast.kind(orelse) == Kind::If {
            if_chain(ast, orelse, "elif", depth, out);
        } else {
            out.push_str("else");
            suite(ast, orelse, depth, out);
        }
    }
}

fn precedence(ast: &Ast, id: AstId) -> u8 {
    let op = || ast.text(ast.child(id, "op").unwrap());
    match ast.kind(id) {
        Kind::BoolOp if op() == "or" => 1,
        Kind::BoolOp => 2,
        Kind::UnaryOp if op() == "not" => 3,
        Kind::Compare => 4,
        Kind::BinOp if matches!(op(), "+" | "-") => 5,
        Kind::BinOp => 6,
        Kind::UnaryOp => 7,
        Kind::Call | Kind::Attribute => 8,
        _ => 9,
    }
}

fn expr(ast: &Ast, id: AstId, min: u8) -> String {
    let p = precedence(ast, id);
    let c = |role| ast.child(id, role).expect("fixed roles");
    let text = match ast.kind(id) {
        Kind::BoolOp | Kind::BinOp => format!("{} {} {}", expr(ast, c("left"), p), ast.text(c("op")), expr(ast, c("right"), p + 1)),
        Kind::Compare => format!(
            "{} {} {}",
            expr(ast, c("left"), p + 1),
            ast.text(c("op")),
            expr(ast, c("right"), p + 1)
        ),
        Kind::UnaryOp => {
            let op = ast.text(c("op"));
            let sep = if op == "not" { " " } else { "" };
            format!("{op}{sep}{}", expr(ast, c("operand"), p))
        }
        Kind::Attribute => format!("{}.{}", expr(ast, c("value"), p), ast.text(c("attr"))),
        Kind::Call => {
            let args = match ast.child(id, "args") {
                Some(a) => ast.numbered(a, "arg"),
                None => ast.numbered(id, "arg"),
            };
            let args: Vec<String> = args.into_iter().map(|a| expr(ast, a, 0)).collect();
            format!("{}({})", expr(ast, c("func"), p), args.join(", "))
        }
        _ => ast.text(id).to_string(),
    };
    if p < min {
        format!("({text})")
    } else {
        text
    }
}

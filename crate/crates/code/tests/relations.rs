use heat_code::{extract, golden, ExtractionConfig};
use heat_graph::{validate, Hypergraph};

fn graph(src: &str) -> Hypergraph {
    extract(src, &ExtractionConfig::default()).unwrap()
}

/// Edges rendered with node labels, e.g. `__isub__(self:a, other:b)`.
fn rendered(g: &Hypergraph, ty: &str) -> Vec<String> {
    g.edges_of_type(ty)
        .map(|e| {
            let parts: Vec<String> = e
                .incidences
                .iter()
                .map(|i| format!("{}:{}", i.qualifier, g.nodes[i.node].label))
                .collect();
            format!("{ty}({})", parts.join(", "))
        })
        .collect()
}

#[test]
fn golden_snippet_yields_every_sample_edge() {
    let g = golden::run().unwrap_or_else(|missing| panic!("missing: {missing:?}"));
    assert!(validate(&g).is_empty());
    // nK in the listing is node K-1
    assert_eq!(g.nodes[18].label, "If");
    assert_eq!(g.nodes[16].label, "Assign");
    assert_eq!(g.nodes[7].label, "[INDENT]");
    assert_eq!(g.nodes[17].label, "[DEDENT]");
}

#[test]
fn golden_check_notices_missing_edges() {
    let mut g = golden::run().unwrap();
    g.edges.retain(|e| e.edge_type != "CtrlF");
    assert_eq!(golden::missing(&g), vec!["CtrlF(prev:n6, prev:n16, succ:n23)"]);
}

#[test]
fn containment_and_augmented_operators() {
    assert_eq!(rendered(&graph("a in b\n"), "__contains__"), ["__contains__(item:a, self:b)"]);
    assert_eq!(rendered(&graph("a -= b\n"), "__isub__"), ["__isub__(self:a, other:b)"]);
    assert_eq!(rendered(&graph("a + b\n"), "__add__"), ["__add__(self:a, other:b)"]);
    assert_eq!(
        rendered(&graph("y.bar\n"), "__getattribute__"),
        ["__getattribute__(rval:Attribute, self:y, name:bar)"]
    );
}

#[test]
fn ast_edges_name_their_children() {
    let g = graph("a + b\n");
    assert_eq!(rendered(&g, "AstNode")[0], "AstNode(node:BinOp, left:a, op:+, right:b)");
    let g = graph("if c:\n    p = 1\nelse:\n    p = 2\n");
    assert!(rendered(&g, "AstNode").contains(&"AstNode(node:If, test:c, body:Assign, orelse:Assign)".to_string()));
    let g = graph("def f():\n    a = 1\n    b = 2\n    c = 3\n");
    assert!(rendered(&g, "AstNode").contains(&"AstNode(node:Block, s1:Assign, s2:Assign, s3:Assign)".to_string()));
}

#[test]
fn control_flow_merges_branches() {
    let g = graph("if c:\n    p1()\nelse:\n    p2()\ns1()\n");
    assert!(rendered(&g, "CtrlF").contains(&"CtrlF(prev:Call, prev:Call, succ:Call)".to_string()));
    let ctrl: Vec<_> = g.edges_of_type("CtrlF").collect();
    // c -> p1, c -> p2 grouped; {p1, p2} -> s1
    assert_eq!(ctrl.len(), 2);
    assert_eq!(ctrl[0].width(), 3);

    let g = graph("a()\nb()\n");
    assert_eq!(rendered(&g, "CtrlF"), ["CtrlF(prev:Call, succ:Call)"]);
}

#[test]
fn loop_back_edge() {
    let src = "def f(n):\n    while n > 0:\n        n -= 1\n    return n\n";
    let g = graph(src);
    let ctrl = rendered(&g, "CtrlF");
    assert!(ctrl.contains(&"CtrlF(prev:AugAssign, succ:Compare)".to_string()), "{ctrl:?}");
    assert!(
        ctrl.contains(&"CtrlF(prev:Compare, succ:AugAssign, succ:Return)".to_string()),
        "{ctrl:?}"
    );
    // the loop test's read of n is preceded only by the decrement, via the back edge
    assert_eq!(
        rendered(&g, "MayRead"),
        ["MayRead(prev:n, succ:n)", "MayRead(prev:n, succ:n, succ:n)"]
    );
    let back = g.edges_of_type("MayRead").next().unwrap();
    assert!(back.incidences[0].node > back.incidences[1].node);
}

#[test]
fn per_successor_control_flow_flag() {
    let cfg = ExtractionConfig {
        ctrlf_per_successor: true,
        ..ExtractionConfig::default()
    };
    let g = extract("if c:\n    p1()\nelse:\n    p2()\ns1()\n", &cfg).unwrap();
    assert_eq!(g.edges_of_type("CtrlF").count(), 3);
}

#[test]
fn symbols_and_last_uses() {
    let g = graph("def f(a):\n    return a\n");
    assert_eq!(rendered(&g, "Symbol"), ["Symbol(sym:a, occ:a, may_last_use:a)"]);
    let g = graph("def f(a, c):\n    if c:\n        g(a)\n    else:\n        h(a)\n");
    let a = rendered(&g, "Symbol").into_iter().find(|s| s.starts_with("Symbol(sym:a")).unwrap();
    assert_eq!(a, "Symbol(sym:a, occ:a, may_last_use:a, may_last_use:a)");
}

#[test]
fn calls_use_parameter_names_for_known_functions() {
    let g = graph("def area(width, height):\n    return width * height\narea(3, 4)\nmystery(3, 4)\nbox.grow(2)\n");
    assert_eq!(rendered(&g, "area"), ["area(rval:Call, width:3, height:4)"]);
    assert_eq!(rendered(&g, "mystery"), ["mystery(rval:Call, arg1:3, arg2:4)"]);
    assert_eq!(rendered(&g, "grow"), ["grow(rval:Call, self:box, arg1:2)"]);
    assert_eq!(rendered(&g, "Returns"), ["Returns(fn:FunctionDef, from:Return)"]);
}

#[test]
fn tokens_are_chunked() {
    let src: String = (0..33).map(|i| format!("v{i}\n")).collect();
    let cfg = ExtractionConfig {
        chunk_len: 8,
        overlap: 2,
        ctrlf_per_successor: false,
    };
    let g = extract(&src, &cfg).unwrap();
    let chunks: Vec<_> = g.edges_of_type("Tokens").collect();
    // 33 name tokens, stride 6: starts 0, 6, .., 30
    assert_eq!(chunks.len(), 6);
    assert!(chunks.iter().all(|e| e.incidences[0].qualifier == "p1"));
    assert_eq!(chunks[5].width(), 3);
    assert_eq!(extract("", &cfg).unwrap().edges_of_type("Tokens").count(), 0);

    let short = graph("a = b\n");
    let tokens: Vec<_> = short.edges_of_type("Tokens").collect();
    assert_eq!(tokens.len(), 1);
    assert_eq!(tokens[0].width(), 3);
}

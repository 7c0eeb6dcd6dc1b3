use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokKind {
    Name,
    Int,
    Keyword,
    Op,
    Newline,
    Indent,
    Dedent,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub kind: TokKind,
    pub text: String,
    /// 1-based.
    pub line: usize,
    /// 1-based, in characters.
    pub col: usize,
    /// Byte offset into the source; synthetic tokens have zero length.
    pub offset: usize,
}

impl Token {
    pub fn is(&self, kind: TokKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }

    /// Synthetic layout tokens are never rewritten in source.
    pub fn is_layout(&self) -> bool {
        matches!(self.kind, TokKind::Newline | TokKind::Indent | TokKind::Dedent)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

pub const KEYWORDS: &[&str] = &["def", "if", "elif", "else", "while", "return", "and", "or", "not", "in"];

// longest first
const OPERATORS: &[&str] = &[
    "//=", "+=", "-=", "*=", "%=", "==", "!=", "<=", ">=", "//", "+", "-", "*", "%", "<", ">", "=", "(", ")", ",", ":", ".",
];

pub const INDENT_TEXT: &str = "[INDENT]";
pub const DEDENT_TEXT: &str = "[DEDENT]";

/// Splits source into tokens, synthesising NEWLINE, INDENT and DEDENT.
///
/// Indentation uses spaces only. Blank and comment-only lines are skipped and
/// line breaks inside brackets are ignored.
pub fn tokenize(source: &str) -> Result<Vec<Token>, SyntaxError> {
    let mut out = Vec::new();
    let mut indents = vec![0usize];
    let mut depth = 0usize;
    let mut offset = 0usize;

    for (lineno, raw) in source.split_inclusive('\n').enumerate() {
        let line_no = lineno + 1;
        let line_start = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        let err = |col: usize, message: String| SyntaxError {
            line: line_no,
            col,
            message,
        };

        let width = line.chars().take_while(|&c| c == ' ').count();
        let rest = &line[width..];
        if rest.starts_with('\t') {
            return Err(err(width + 1, "tabs are not allowed in indentation".into()));
        }
        if rest.is_empty() || rest.starts_with('#') {
            continue;
        }

        if depth == 0 {
            let top = *indents.last().unwrap();
            if width > top {
                indents.push(width);
                out.push(synthetic(TokKind::Indent, INDENT_TEXT, line_no, width + 1, line_start + width));
            } else {
                while width < *indents.last().unwrap() {
                    indents.pop();
                    out.push(synthetic(TokKind::Dedent, DEDENT_TEXT, line_no, width + 1, line_start + width));
                }
                if width != *indents.last().unwrap() {
                    return Err(err(width + 1, "unindent does not match any outer level".into()));
                }
            }
        }

        let chars: Vec<(usize, char)> = line.char_indices().collect();
        let mut i = width;
        // char index -> column; the prefix is ASCII spaces so indices coincide
        while i < chars.len() {
            let (byte, c) = chars[i];
            let col = i + 1;
            if c == ' ' {
                i += 1;
                continue;
            }
            if c == '#' {
                break;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().map(|p| p.1).collect();
                let kind = if KEYWORDS.contains(&text.as_str()) {
                    TokKind::Keyword
                } else {
                    TokKind::Name
                };
                out.push(Token {
                    kind,
                    text,
                    line: line_no,
                    col,
                    offset: line_start + byte,
                });
                continue;
            }
            if c.is_ascii_digit() {
                let start = i;
                while i < chars.len() && chars[i].1.is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && (chars[i].1.is_ascii_alphabetic() || chars[i].1 == '_') {
                    return Err(err(i + 1, "invalid integer literal".into()));
                }
                let text: String = chars[start..i].iter().map(|p| p.1).collect();
                out.push(Token {
                    kind: TokKind::Int,
                    text,
                    line: line_no,
                    col,
                    offset: line_start + byte,
                });
                continue;
            }
            let tail = &line[byte..];
            match OPERATORS.iter().find(|op| tail.starts_with(**op)) {
                Some(op) => {
                    match *op {
                        "(" => depth += 1,
                        ")" => depth = depth.checked_sub(1).ok_or_else(|| err(col, "unmatched ')'".into()))?,
                        _ => {}
                    }
                    out.push(Token {
                        kind: TokKind::Op,
                        text: op.to_string(),
                        line: line_no,
                        col,
                        offset: line_start + byte,
                    });
                    i += op.len();
                }
                None => return Err(err(col, format!("unexpected character {c:?}"))),
            }
        }
        if depth == 0 {
            out.push(synthetic(
                TokKind::Newline,
                "\n",
                line_no,
                line.chars().count() + 1,
                line_start + line.len(),
            ));
        }
    }
    if depth != 0 {
        let line = source.lines().count().max(1);
        return Err(SyntaxError {
            line,
            col: 1,
            message: "unclosed '('".into(),
        });
    }
    let end_line = source.lines().count() + 1;
    while indents.len() > 1 {
        indents.pop();
        out.push(synthetic(TokKind::Dedent, DEDENT_TEXT, end_line, 1, source.len()));
    }
    Ok(out)
}

fn synthetic(kind: TokKind, text: &str, line: usize, col: usize, offset: usize) -> Token {
    Token {
        kind,
        text: text.into(),
        line,
        col,
        offset,
    }
}

/// Replaces the source text of one (non-layout) token.
pub fn replace_token(source: &str, token: &Token, replacement: &str) -> String {
    assert!(!token.is_layout(), "layout tokens have no source text");
    let mut out = String::with_capacity(source.len() + replacement.len());
    out.push_str(&source[..token.offset]);
    out.push_str(replacement);
    out.push_str(&source[token.offset + token.text.len()..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(src: &str) -> Vec<String> {
        tokenize(src).unwrap().into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn layout_tokens() {
        let src = "if a:\n    b = 1\n\n    # note\nc\n";
        assert_eq!(
            texts(src),
            ["if", "a", ":", "\n", "[INDENT]", "b", "=", "1", "\n", "[DEDENT]", "c", "\n"]
        );
    }

    #[test]
    fn dedents_close_at_end_of_input() {
        let src = "def f(a):\n    while a:\n        a -= 1";
        let toks = tokenize(src).unwrap();
        let tail: Vec<_> = toks.iter().rev().take(3).map(|t| t.kind).collect();
        assert_eq!(tail, [TokKind::Dedent, TokKind::Dedent, TokKind::Newline]);
    }

    #[test]
    fn longest_operator_wins() {
        assert_eq!(texts("a //= b // c <= d\n"), ["a", "//=", "b", "//", "c", "<=", "d", "\n"]);
    }

    #[test]
    fn brackets_join_lines() {
        assert_eq!(texts("f(a,\n  b)\n"), ["f", "(", "a", ",", "b", ")", "\n"]);
    }

    #[test]
    fn errors_carry_positions() {
        let e = tokenize("a = 1\nb = $\n").unwrap_err();
        assert_eq!((e.line, e.col), (2, 5));
        let e = tokenize("if a:\n    b\n  c\n").unwrap_err();
        assert_eq!((e.line, e.col), (3, 3));
        assert!(tokenize("a = 1x\n").is_err());
        assert!(tokenize("f(a\n").is_err());
    }

    #[test]
    fn replace_token_keeps_offsets_elsewhere() {
        let src = "x = a < b\n";
        let toks = tokenize(src).unwrap();
        assert_eq!(replace_token(src, &toks[3], ">="), "x = a >= b\n");
    }
}

//! Lexical view of Python source.
//!
//! This is not a parser. It tokenizes just enough of the language to split a
//! module into top-level statements, tell which names each statement binds,
//! and which names it reads. Those three facts drive function slicing and
//! signature inspection; everything else is left to the interpreter.

use std::collections::BTreeSet;

pub const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
    "try", "while", "with", "yield",
];

const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", ">>", "<<", "<=", ">=", "==",
    "!=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=",
];

const AUG_ASSIGN: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

/// True when `s` can name a Python function: a non-keyword identifier.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if is_ident_start(c) => {}
        _ => return false,
    }
    chars.all(is_ident_continue) && !is_keyword(s)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct LexError {
    /// 1-based physical line.
    pub line: usize,
    pub message: String,
}

impl LexError {
    fn new(line0: usize, message: impl Into<String>) -> Self {
        Self {
            line: line0 + 1,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Name(String),
    Op(String),
    /// String literal; for f-strings, the names read by its replacement fields.
    Str(Vec<String>),
    Number,
}

impl Token {
    fn is_op(&self, op: &str) -> bool {
        matches!(self, Token::Op(o) if o == op)
    }

    fn name(&self) -> Option<&str> {
        match self {
            Token::Name(n) => Some(n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LogicalLine {
    /// 0-based first physical line.
    pub start: usize,
    /// 0-based physical line one past the last.
    pub end: usize,
    pub indent: usize,
    pub tokens: Vec<Token>,
}

impl LogicalLine {
    fn first_name(&self) -> Option<&str> {
        self.tokens.first().and_then(Token::name)
    }

    fn ends_with_colon(&self) -> bool {
        self.tokens.last().is_some_and(|t| t.is_op(":"))
    }
}

fn tokenize(src: &str) -> Result<Vec<LogicalLine>, LexError> {
    let chars: Vec<char> = src.chars().collect();
    let n = chars.len();
    let mut i = 0;
    let mut line = 0usize;
    let mut brackets: Vec<(char, usize)> = Vec::new();
    let mut out = Vec::new();
    let mut cur: Option<LogicalLine> = None;

    while i < n {
        if cur.is_none() {
            let mut j = i;
            let mut width = 0;
            while j < n && matches!(chars[j], ' ' | '\t' | '\x0c') {
                width = match chars[j] {
                    '\t' => (width / 8 + 1) * 8,
                    '\x0c' => 0,
                    _ => width + 1,
                };
                j += 1;
            }
            if j >= n {
                break;
            }
            match chars[j] {
                '\n' => {
                    i = j + 1;
                    line += 1;
                    continue;
                }
                '#' => {
                    while j < n && chars[j] != '\n' {
                        j += 1;
                    }
                    i = j;
                    continue;
                }
                '\\' if j + 1 < n && chars[j + 1] == '\n' => {
                    i = j + 2;
                    line += 1;
                    continue;
                }
                _ => {}
            }
            cur = Some(LogicalLine {
                start: line,
                end: line + 1,
                indent: width,
                tokens: Vec::new(),
            });
            i = j;
            continue;
        }
        let logical = cur.as_mut().expect("logical line open");
        let c = chars[i];
        match c {
            ' ' | '\t' | '\x0c' | '\r' => i += 1,
            '#' => {
                while i < n && chars[i] != '\n' {
                    i += 1;
                }
            }
            '\\' => {
                if i + 1 < n && chars[i + 1] == '\n' {
                    i += 2;
                    line += 1;
                } else if i + 1 >= n {
                    return Err(LexError::new(line, "line continuation at end of file"));
                } else {
                    return Err(LexError::new(
                        line,
                        "unexpected character after line continuation",
                    ));
                }
            }
            '\n' => {
                i += 1;
                line += 1;
                if brackets.is_empty() {
                    let mut done = cur.take().expect("logical line open");
                    done.end = line;
                    if !done.tokens.is_empty() {
                        out.push(done);
                    }
                }
            }
            '(' | '[' | '{' => {
                brackets.push((c, line));
                logical.tokens.push(Token::Op(c.to_string()));
                i += 1;
            }
            ')' | ']' | '}' => {
                let want = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                match brackets.pop() {
                    Some((open, _)) if open == want => {}
                    _ => return Err(LexError::new(line, format!("unmatched '{c}'"))),
                }
                logical.tokens.push(Token::Op(c.to_string()));
                i += 1;
            }
            '\'' | '"' => {
                let (tok, next, lines) = scan_string(&chars, i, "", line)?;
                logical.tokens.push(tok);
                line += lines;
                i = next;
            }
            c if is_ident_start(c) => {
                let start = i;
                while i < n && is_ident_continue(chars[i]) {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let lower = word.to_ascii_lowercase();
                let is_prefix = matches!(
                    lower.as_str(),
                    "r" | "u" | "b" | "f" | "br" | "rb" | "fr" | "rf"
                );
                if is_prefix && i < n && (chars[i] == '\'' || chars[i] == '"') {
                    let (tok, next, lines) = scan_string(&chars, i, &lower, line)?;
                    logical.tokens.push(tok);
                    line += lines;
                    i = next;
                } else {
                    logical.tokens.push(Token::Name(word));
                }
            }
            c if c.is_ascii_digit() || (c == '.' && i + 1 < n && chars[i + 1].is_ascii_digit()) => {
                let hex = c == '0' && i + 1 < n && matches!(chars[i + 1], 'x' | 'X');
                i += 1;
                while i < n {
                    let d = chars[i];
                    let exp_sign =
                        !hex && matches!(d, '+' | '-') && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_alphanumeric() || d == '.' || d == '_' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                logical.tokens.push(Token::Number);
            }
            _ => {
                let rest: String = chars[i..n.min(i + 3)].iter().collect();
                let op = OPERATORS
                    .iter()
                    .find(|op| rest.starts_with(**op))
                    .map(|op| op.to_string())
                    .unwrap_or_else(|| c.to_string());
                i += op.chars().count();
                logical.tokens.push(Token::Op(op));
            }
        }
    }
    if let Some((open, at)) = brackets.pop() {
        return Err(LexError::new(at, format!("'{open}' was never closed")));
    }
    if let Some(mut done) = cur.take() {
        done.end = line + 1;
        if !done.tokens.is_empty() {
            out.push(done);
        }
    }
    Ok(out)
}

/// Scans a string literal whose opening quote is at `start`. Returns the
/// token, the index after the closing quote, and how many newlines it spans.
fn scan_string(
    chars: &[char],
    start: usize,
    prefix: &str,
    line0: usize,
) -> Result<(Token, usize, usize), LexError> {
    let n = chars.len();
    let quote = chars[start];
    let triple = start + 2 < n && chars[start + 1] == quote && chars[start + 2] == quote;
    let mut i = if triple { start + 3 } else { start + 1 };
    let mut lines = 0;
    let body_start = i;
    loop {
        if i >= n {
            return Err(LexError::new(line0, "unterminated string literal"));
        }
        let c = chars[i];
        if c == '\\' {
            if i + 1 < n && chars[i + 1] == '\n' {
                lines += 1;
            }
            i += 2;
            continue;
        }
        if c == '\n' {
            if !triple {
                return Err(LexError::new(line0, "unterminated string literal"));
            }
            lines += 1;
        }
        if c == quote {
            if !triple {
                break;
            }
            if i + 2 < n && chars[i + 1] == quote && chars[i + 2] == quote {
                break;
            }
        }
        i += 1;
    }
    let body_end = i;
    let next = if triple { i + 3 } else { i + 1 };
    let names = if prefix.contains('f') {
        fstring_names(&chars[body_start..body_end])
    } else {
        Vec::new()
    };
    Ok((Token::Str(names), next, lines))
}

fn fstring_names(body: &[char]) -> Vec<String> {
    let mut names = Vec::new();
    let mut depth = 0usize;
    let mut i = 0;
    while i < body.len() {
        let c = body[i];
        if depth == 0 {
            if c == '{' {
                if body.get(i + 1) == Some(&'{') {
                    i += 2;
                    continue;
                }
                depth = 1;
            }
            i += 1;
            continue;
        }
        match c {
            '{' => depth += 1,
            '}' => depth -= 1,
            c if is_ident_start(c) => {
                let start = i;
                while i < body.len() && is_ident_continue(body[i]) {
                    i += 1;
                }
                let after_dot = start > 0 && body[start - 1] == '.';
                let word: String = body[start..i].iter().collect();
                if !after_dot && !is_keyword(&word) {
                    names.push(word);
                }
                continue;
            }
            _ => {}
        }
        i += 1;
    }
    names
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum StmtKind {
    Def(String),
    Class(String),
    Import { future: bool, star: bool },
    Other,
}

/// A top-level statement together with its indented body.
#[derive(Debug, Clone)]
pub(crate) struct TopLevelStmt {
    pub start: usize,
    pub end: usize,
    pub kind: StmtKind,
    pub binds: BTreeSet<String>,
    pub uses: BTreeSet<String>,
}

#[derive(Debug)]
pub(crate) struct Module<'a> {
    lines: Vec<&'a str>,
    pub stmts: Vec<TopLevelStmt>,
}

impl<'a> Module<'a> {
    pub fn parse(src: &'a str) -> Result<Self, LexError> {
        let logicals = tokenize(src)?;
        let mut groups: Vec<Vec<LogicalLine>> = Vec::new();
        for logical in logicals {
            if logical.indent == 0 {
                let continues_compound = matches!(
                    logical.first_name(),
                    Some("else" | "elif" | "except" | "finally")
                ) && !groups.is_empty();
                let after_decorator = groups.last().is_some_and(|g| {
                    g.iter().all(|l| l.tokens.first().is_some_and(|t| t.is_op("@")))
                });
                if continues_compound || after_decorator {
                    groups.last_mut().expect("non-empty").push(logical);
                } else {
                    groups.push(vec![logical]);
                }
            } else {
                let Some(group) = groups.last_mut() else {
                    return Err(LexError::new(logical.start, "unexpected indent"));
                };
                let header = group
                    .iter()
                    .rev()
                    .find(|l| l.indent == 0)
                    .expect("group starts at column 0");
                let opens_block = header.ends_with_colon() || group.last().is_some_and(|l| l.indent > 0);
                if !opens_block {
                    return Err(LexError::new(logical.start, "unexpected indent"));
                }
                group.push(logical);
            }
        }
        if let Some(group) = groups.last() {
            if group.iter().all(|l| l.tokens.first().is_some_and(|t| t.is_op("@"))) {
                let last = group.last().expect("non-empty");
                return Err(LexError::new(last.start, "decorator without a definition"));
            }
            if let Some(last) = group.last() {
                if last.ends_with_colon() && group.len() == 1 {
                    return Err(LexError::new(last.start, "expected an indented block"));
                }
            }
        }
        let stmts = groups
            .iter()
            .map(|g| analyze_group(g))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            lines: src.split('\n').collect(),
            stmts,
        })
    }

    /// Source text of statement `idx`, without a trailing newline.
    pub fn text(&self, idx: usize) -> String {
        let s = &self.stmts[idx];
        let end = s.end.min(self.lines.len());
        self.lines[s.start..end].join("\n").trim_end().to_string()
    }

    /// Index of the last top-level `def` named `name`.
    pub fn last_def(&self, name: &str) -> Option<usize> {
        self.stmts
            .iter()
            .rposition(|s| matches!(&s.kind, StmtKind::Def(n) if n == name))
    }
}

fn analyze_group(group: &[LogicalLine]) -> Result<TopLevelStmt, LexError> {
    let head = group
        .iter()
        .find(|l| !l.tokens.first().is_some_and(|t| t.is_op("@")))
        .expect("group has a non-decorator line");
    let toks = &head.tokens;
    let kind = match (toks.first().and_then(Token::name), toks.get(1).and_then(Token::name)) {
        (Some("def"), name) | (Some("async"), name @ Some("def")) => {
            let name = if name == Some("def") {
                toks.get(2).and_then(Token::name)
            } else {
                name
            };
            match name {
                Some(n) if is_identifier(n) => StmtKind::Def(n.to_string()),
                _ => return Err(LexError::new(head.start, "invalid function definition")),
            }
        }
        (Some("class"), name) => match name {
            Some(n) if is_identifier(n) => StmtKind::Class(n.to_string()),
            _ => return Err(LexError::new(head.start, "invalid class definition")),
        },
        (Some("import"), _) => StmtKind::Import {
            future: false,
            star: false,
        },
        (Some("from"), _) => StmtKind::Import {
            future: toks.get(1).and_then(Token::name) == Some("__future__"),
            star: toks.iter().any(|t| t.is_op("*")),
        },
        _ => StmtKind::Other,
    };

    let mut binds = BTreeSet::new();
    match &kind {
        StmtKind::Def(n) | StmtKind::Class(n) => {
            binds.insert(n.clone());
        }
        _ => {
            for line in group {
                line_bindings(&line.tokens, &mut binds);
            }
        }
    }

    let mut uses = BTreeSet::new();
    for line in group {
        let mut prev_dot = false;
        for tok in &line.tokens {
            match tok {
                Token::Name(n) if !prev_dot && !is_keyword(n) => {
                    uses.insert(n.clone());
                }
                Token::Str(names) => uses.extend(names.iter().cloned()),
                _ => {}
            }
            prev_dot = tok.is_op(".");
        }
    }
    if let StmtKind::Import { .. } = kind {
        // Module paths in an import are not reads of module-level names.
        uses.clear();
    }

    Ok(TopLevelStmt {
        start: group[0].start,
        end: group.last().expect("non-empty").end,
        kind,
        binds,
        uses,
    })
}

/// Names bound by one logical line: imports, nested def/class heads, loop and
/// `as` targets, and assignment targets.
fn line_bindings(toks: &[Token], binds: &mut BTreeSet<String>) {
    match toks.first().and_then(Token::name) {
        Some("import") => {
            for element in split_top_level(&toks[1..], ",") {
                let names: Vec<&str> = element.iter().filter_map(Token::name).collect();
                if let Some(pos) = names.iter().position(|n| *n == "as") {
                    if let Some(alias) = names.get(pos + 1) {
                        binds.insert(alias.to_string());
                    }
                } else if let Some(first) = names.first() {
                    binds.insert(first.to_string());
                }
            }
            return;
        }
        Some("from") => {
            let Some(import_at) = toks.iter().position(|t| t.name() == Some("import")) else {
                return;
            };
            let rest: Vec<Token> = toks[import_at + 1..]
                .iter()
                .filter(|t| !t.is_op("(") && !t.is_op(")"))
                .cloned()
                .collect();
            for element in split_top_level(&rest, ",") {
                let names: Vec<&str> = element.iter().filter_map(Token::name).collect();
                match names.as_slice() {
                    [_, "as", alias] => {
                        binds.insert(alias.to_string());
                    }
                    [name] => {
                        binds.insert(name.to_string());
                    }
                    _ => {}
                }
            }
            return;
        }
        Some("def") | Some("class") => {
            if let Some(n) = toks.get(1).and_then(Token::name) {
                binds.insert(n.to_string());
            }
            return;
        }
        Some("async") => {
            if let Some(n) = toks.get(2).and_then(Token::name) {
                binds.insert(n.to_string());
            }
            return;
        }
        Some("for") => {
            let end = toks
                .iter()
                .position(|t| t.name() == Some("in"))
                .unwrap_or(toks.len());
            bind_targets(&toks[1..end], binds);
        }
        _ => {}
    }
    for (i, tok) in toks.iter().enumerate() {
        if tok.name() == Some("as") {
            if let Some(n) = toks.get(i + 1).and_then(Token::name) {
                binds.insert(n.to_string());
            }
        }
    }
    if matches!(
        toks.first().and_then(Token::name),
        Some("if" | "elif" | "else" | "while" | "with" | "try" | "except" | "finally" | "for")
    ) {
        return;
    }

    // Assignment: every depth-0 '=' (or augmented op) closes a target list.
    let mut depth = 0i32;
    let mut segment_start = 0;
    let mut annotated = false;
    for (i, tok) in toks.iter().enumerate() {
        match tok {
            Token::Op(o) if o == "(" || o == "[" || o == "{" => depth += 1,
            Token::Op(o) if o == ")" || o == "]" || o == "}" => depth -= 1,
            Token::Op(o) if depth == 0 && o == ":" && segment_start == 0 && !annotated => {
                // Annotated assignment or bare annotation: `name: T [= v]`.
                annotated = true;
                bind_targets(&toks[..i], binds);
            }
            Token::Op(o) if depth == 0 && (o == "=" || AUG_ASSIGN.contains(&o.as_str())) => {
                if !annotated || segment_start > 0 {
                    bind_targets(&toks[segment_start..i], binds);
                }
                segment_start = i + 1;
            }
            _ => {}
        }
    }
}

fn bind_targets(toks: &[Token], binds: &mut BTreeSet<String>) {
    let mut at_start = true;
    let mut trailer = 0i32;
    for tok in toks {
        if trailer > 0 {
            if tok.is_op("(") || tok.is_op("[") || tok.is_op("{") {
                trailer += 1;
            } else if tok.is_op(")") || tok.is_op("]") || tok.is_op("}") {
                trailer -= 1;
            }
            continue;
        }
        match tok {
            Token::Op(o) if (o == "(" || o == "[") && at_start => {}
            Token::Op(o) if o == "(" || o == "[" || o == "{" => trailer += 1,
            Token::Op(o) if o == "," => at_start = true,
            Token::Op(o) if o == ":" => return,
            Token::Name(n) if at_start && !is_keyword(n) => {
                binds.insert(n.clone());
                at_start = false;
            }
            _ => {}
        }
    }
}

fn split_top_level<'t>(toks: &'t [Token], sep: &str) -> Vec<&'t [Token]> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, tok) in toks.iter().enumerate() {
        if tok.is_op("(") || tok.is_op("[") || tok.is_op("{") {
            depth += 1;
        } else if tok.is_op(")") || tok.is_op("]") || tok.is_op("}") {
            depth -= 1;
        } else if depth == 0 && tok.is_op(sep) {
            out.push(&toks[start..i]);
            start = i + 1;
        }
    }
    if start < toks.len() {
        out.push(&toks[start..]);
    }
    out
}

/// Positional parameters declared by the last `def name(...)` in `src`, if
/// such a definition appears. Counting stops at the first `*` marker or
/// variadic parameter; `/` is skipped.
pub fn positional_params(src: &str, name: &str) -> Option<Vec<String>> {
    let logicals = tokenize(src).ok()?;
    let line = logicals.iter().rev().find(|l| {
        let t = &l.tokens;
        let offset = usize::from(t.first().and_then(Token::name) == Some("async"));
        t.get(offset).and_then(Token::name) == Some("def")
            && t.get(offset + 1).and_then(Token::name) == Some(name)
    })?;
    let toks = &line.tokens;
    let open = toks.iter().position(|t| t.is_op("("))?;
    let mut depth = 0i32;
    let mut close = None;
    for (i, tok) in toks.iter().enumerate().skip(open) {
        if tok.is_op("(") || tok.is_op("[") || tok.is_op("{") {
            depth += 1;
        } else if tok.is_op(")") || tok.is_op("]") || tok.is_op("}") {
            depth -= 1;
            if depth == 0 {
                close = Some(i);
                break;
            }
        }
    }
    let inner = &toks[open + 1..close?];
    let mut params = Vec::new();
    for element in split_top_level(inner, ",") {
        match element.first() {
            None => {}
            Some(Token::Op(o)) if o == "*" || o == "**" => break,
            Some(Token::Name(n)) => params.push(n.clone()),
            Some(_) => {}
        }
    }
    Some(params)
}

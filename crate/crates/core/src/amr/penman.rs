//! Reader for a practical PENMAN subset.
//!
//! Supported: nested `(var / concept :role value ...)`, variable
//! re-entrancy, quoted or bare constants, `~e.N` alignments, inverse
//! `-of` roles, and a `# ::tok` comment line carrying the tokenization.

use std::collections::HashMap;

use super::{AmrEdge, AmrGraph, AmrNode, NodeId, Span};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Slash,
    Role(String),
    Str(String, Option<usize>),
    Sym(String, Option<usize>),
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

fn perr(offset: usize, message: impl Into<String>) -> Error {
    Error::Penman {
        offset,
        message: message.into(),
    }
}

/// Splits `sym~e.3` into (`sym`, Some(3)). Lists like `~e.3,4` keep the first index.
fn split_alignment(raw: &str, offset: usize) -> Result<(String, Option<usize>)> {
    match raw.split_once('~') {
        None => Ok((raw.to_string(), None)),
        Some((base, align)) => {
            let digits = align.trim_start_matches("e.").trim_start_matches('e');
            let first = digits.split(',').next().unwrap_or("");
            let idx = first
                .parse::<usize>()
                .map_err(|_| perr(offset, format!("bad alignment `~{align}`")))?;
            Ok((base.to_string(), Some(idx)))
        }
    }
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src, pos: 0 }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    /// Next token and its starting offset.
    fn next(&mut self) -> Result<Option<(Tok, usize)>> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[self.pos..];
        let Some(c) = rest.chars().next() else {
            return Ok(None);
        };
        let tok = match c {
            '(' => {
                self.pos += 1;
                Tok::Open
            }
            ')' => {
                self.pos += 1;
                Tok::Close
            }
            '/' => {
                self.pos += 1;
                Tok::Slash
            }
            '"' => {
                let close = rest[1..]
                    .find('"')
                    .ok_or_else(|| perr(start, "unterminated string"))?;
                let body = rest[1..1 + close].to_string();
                self.pos += close + 2;
                let tail = self.take_atom();
                let (_, align) = split_alignment(&tail, start)?;
                Tok::Str(body, align)
            }
            ':' => {
                self.pos += 1;
                let name = self.take_atom();
                if name.is_empty() {
                    return Err(perr(start, "empty role"));
                }
                Tok::Role(name)
            }
            _ => {
                let atom = self.take_atom();
                let (sym, align) = split_alignment(&atom, start)?;
                Tok::Sym(sym, align)
            }
        };
        Ok(Some((tok, start)))
    }

    fn take_atom(&mut self) -> String {
        let rest = &self.src[self.pos..];
        let len = rest
            .find(|c: char| c.is_whitespace() || c == '(' || c == ')' || c == '"')
            .unwrap_or(rest.len());
        self.pos += len;
        rest[..len].to_string()
    }

    fn peek(&mut self) -> Result<Option<(Tok, usize)>> {
        let save = self.pos;
        let t = self.next();
        self.pos = save;
        t
    }
}

struct Pending {
    src: NodeId,
    sym: String,
    align: Option<usize>,
    role: String,
}

struct Parser<'a> {
    lex: Lexer<'a>,
    nodes: Vec<AmrNode>,
    edges: Vec<AmrEdge>,
    vars: HashMap<String, NodeId>,
    pending: Vec<Pending>,
}

impl Parser<'_> {
    fn add_node(&mut self, concept: String, align: Option<usize>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(AmrNode::new(id, concept, align.map(Span::single)));
        id
    }

    fn add_edge(&mut self, parent: NodeId, child: NodeId, role: &str) {
        let (src, dst, rel) = match role.strip_suffix("-of") {
            Some(base) if !base.is_empty() => (child, parent, base),
            _ => (parent, child, role),
        };
        self.edges.push(AmrEdge::new(src, dst, rel));
    }

    fn expect_sym(&mut self, what: &str) -> Result<(String, Option<usize>, usize)> {
        match self.lex.next()? {
            Some((Tok::Sym(s, a), off)) => Ok((s, a, off)),
            Some((_, off)) => Err(perr(off, format!("expected {what}"))),
            None => Err(perr(self.lex.pos, format!("unexpected end of input, expected {what}"))),
        }
    }

    /// Parses `(var / concept ...)`; the opening paren is already consumed.
    fn node(&mut self, open_at: usize) -> Result<NodeId> {
        let (var, _, var_off) = self.expect_sym("variable")?;
        match self.lex.next()? {
            Some((Tok::Slash, _)) => {}
            Some((_, off)) => return Err(perr(off, "expected `/`")),
            None => return Err(perr(self.lex.pos, "unbalanced parentheses")),
        }
        let (concept, align, _) = self.expect_sym("concept")?;
        if self.vars.contains_key(&var) {
            return Err(perr(var_off, format!("duplicate variable `{var}`")));
        }
        let id = self.add_node(concept, align);
        self.vars.insert(var, id);

        loop {
            match self.lex.next()? {
                None => return Err(perr(open_at, "unbalanced parentheses")),
                Some((Tok::Close, _)) => return Ok(id),
                Some((Tok::Role(role), role_off)) => match self.lex.next()? {
                    Some((Tok::Open, off)) => {
                        let child = self.node(off)?;
                        self.add_edge(id, child, &role);
                    }
                    Some((Tok::Str(s, a), _)) => {
                        let child = self.add_node(s, a);
                        self.add_edge(id, child, &role);
                    }
                    Some((Tok::Sym(sym, align), _)) => self.pending.push(Pending {
                        src: id,
                        sym,
                        align,
                        role,
                    }),
                    Some((_, off)) => return Err(perr(off, "expected role value")),
                    None => return Err(perr(role_off, "role without value")),
                },
                Some((_, off)) => return Err(perr(off, "expected role or `)`")),
            }
        }
    }
}

/// Reads one PENMAN graph. Bare symbols naming a defined variable are
/// re-entrancies; any other bare symbol is a constant leaf.
///
/// Tokens come from a `# ::tok` line when present. Without one, a
/// placeholder sentence is synthesized so that every alignment is in range:
/// aligned positions take the node's concept, the rest are `<unk>`.
pub fn read_penman(text: &str) -> Result<AmrGraph> {
    let mut tokens: Option<Vec<String>> = None;
    let mut body = String::with_capacity(text.len());
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(meta) = trimmed.strip_prefix('#') {
            if let Some(tok) = meta.trim_start().strip_prefix("::tok") {
                tokens = Some(tok.split_whitespace().map(String::from).collect());
            }
            body.push_str(&" ".repeat(line.len()));
        } else {
            body.push_str(line);
        }
        body.push('\n');
    }

    let mut p = Parser {
        lex: Lexer::new(&body),
        nodes: Vec::new(),
        edges: Vec::new(),
        vars: HashMap::new(),
        pending: Vec::new(),
    };
    match p.lex.next()? {
        None => return Err(perr(0, "empty input")),
        Some((Tok::Open, off)) => {
            p.node(off)?;
        }
        Some((Tok::Close, off)) => return Err(perr(off, "unbalanced parentheses")),
        Some((_, off)) => return Err(perr(off, "expected `(`")),
    }
    if let Some((tok, off)) = p.lex.peek()? {
        let msg = if tok == Tok::Close {
            "unbalanced parentheses"
        } else {
            "trailing content after graph"
        };
        return Err(perr(off, msg));
    }

    for pend in std::mem::take(&mut p.pending) {
        let target = match p.vars.get(&pend.sym) {
            Some(&v) => v,
            None => p.add_node(pend.sym.clone(), pend.align),
        };
        p.add_edge(pend.src, target, &pend.role);
    }

    let tokens = tokens.unwrap_or_else(|| placeholder_tokens(&p.nodes));
    let g = AmrGraph::new(tokens, p.nodes, p.edges);
    g.validate("penman")?;
    Ok(g)
}

fn placeholder_tokens(nodes: &[AmrNode]) -> Vec<String> {
    let len = nodes
        .iter()
        .filter_map(|n| n.span.map(|s| s.end))
        .max()
        .unwrap_or(0);
    let mut toks = vec!["<unk>".to_string(); len];
    for n in nodes {
        if let Some(s) = n.span {
            toks[s.start] = strip_sense(&n.concept).to_string();
        }
    }
    toks
}

/// `attack-01` → `attack`
pub fn strip_sense(concept: &str) -> &str {
    match concept.rsplit_once('-') {
        Some((base, sense)) if !base.is_empty() && sense.chars().all(|c| c.is_ascii_digit()) => base,
        _ => concept,
    }
}

/// Reads a file of blank-line separated PENMAN graphs. Errors name the
/// 1-based line where the failing graph starts.
pub fn read_penman_documents(text: &str) -> Result<Vec<AmrGraph>> {
    let mut out = Vec::new();
    let mut block = String::new();
    let mut block_line = 0;
    let mut has_graph = false;
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            if has_graph {
                out.push(parse_block(&block, block_line)?);
            }
            block.clear();
            has_graph = false;
            continue;
        }
        if block.is_empty() {
            block_line = i + 1;
        }
        if !line.trim_start().starts_with('#') {
            has_graph = true;
        }
        block.push_str(line);
        block.push('\n');
    }
    if has_graph {
        out.push(parse_block(&block, block_line)?);
    }
    Ok(out)
}

fn parse_block(block: &str, line: usize) -> Result<AmrGraph> {
    read_penman(block).map_err(|e| Error::InvalidGraph {
        graph: format!("line {line}"),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_aligned_node() {
        let g = read_penman("(a / attack~e.3)").unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.nodes[0].concept, "attack");
        assert_eq!(g.nodes[0].span, Some(Span::new(3, 4)));
        assert_eq!(g.sentence_tokens.len(), 4);
    }

    #[test]
    fn nested_role() {
        let g = read_penman("(a / attack :ARG0 (s / soldier))").unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges, vec![AmrEdge::new(0, 1, "ARG0")]);
        assert_eq!(g.nodes[1].concept, "soldier");
    }

    #[test]
    fn inverse_role_is_flipped() {
        let g = read_penman("(a / attack :ARG0-of (r / report))").unwrap();
        let r = g.nodes.iter().find(|n| n.concept == "report").unwrap().id;
        let a = g.nodes.iter().find(|n| n.concept == "attack").unwrap().id;
        assert_eq!(g.edges, vec![AmrEdge::new(r, a, "ARG0")]);
    }

    #[test]
    fn reentrancy_and_constants() {
        let text = "# ::tok Kelly Wallace reports\n\
                    (r / report-01~e.2 :ARG0 (p / person :name (n / name :op1 \"Kelly\"~e.0 :op2 \"Wallace\"~e.1))\n\
                     :ARG1 (a / attack-01 :ARG0 p :polarity -))";
        let g = read_penman(text).unwrap();
        assert_eq!(g.sentence_tokens, vec!["Kelly", "Wallace", "reports"]);
        assert_eq!(g.nodes.len(), 7);
        let a = g.nodes.iter().find(|n| n.concept == "attack-01").unwrap().id;
        let p = g.nodes.iter().find(|n| n.concept == "person").unwrap().id;
        assert!(g.edges.contains(&AmrEdge::new(a, p, "ARG0")));
        assert!(g.nodes.iter().any(|n| n.concept == "-"));
        let kelly = g.nodes.iter().find(|n| n.concept == "Kelly").unwrap();
        assert_eq!(kelly.span, Some(Span::new(0, 1)));
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match read_penman("(a / b :ARG0 (c / d)").unwrap_err() {
            Error::Penman { offset, .. } => assert_eq!(offset, 0),
            e => panic!("{e:?}"),
        }
        match read_penman("(a / b))").unwrap_err() {
            Error::Penman { offset, .. } => assert_eq!(offset, 7),
            e => panic!("{e:?}"),
        }
        match read_penman("(a / b :ARG0 (a / c))").unwrap_err() {
            Error::Penman { offset, message } => {
                assert_eq!(offset, 14);
                assert!(message.contains("duplicate"));
            }
            e => panic!("{e:?}"),
        }
        assert!(matches!(read_penman("   "), Err(Error::Penman { offset: 0, .. })));
    }

    #[test]
    fn documents_split_on_blank_lines() {
        let text = "# ::tok a b\n(x / a~e.0 :ARG0 (y / b~e.1))\n\n(z / c)\n";
        let gs = read_penman_documents(text).unwrap();
        assert_eq!(gs.len(), 2);
        let err = read_penman_documents("(x / a)\n\n(y / b\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}

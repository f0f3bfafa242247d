use std::collections::BTreeSet;

use crate::lex::{Cursor, ParseError, Tok};
use crate::relation::{Schema, SchemaError};

use super::{Atom, Fd, Mode, Query, QueryError};

/// Parses a query file: the query itself (possibly over several lines) and
/// any number of `fd:` lines.
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let mut body = Vec::new();
    let mut fd_lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("fd:") {
            let offset = line.len() - rest.len();
            fd_lines.push((i + 1, offset, rest));
        } else {
            body.push((i + 1, line));
        }
    }

    let mut cur = Cursor::lines(body)?;
    if cur.at_end() {
        return Err(cur.error("empty query").into());
    }
    let name = cur.word("query name")?;
    cur.expect('(')?;
    let outputs = head_list(&mut cur)?;
    let cqap = cur.eat('|');
    let inputs = if cqap { head_list(&mut cur)? } else { Vec::new() };
    cur.expect(')')?;
    cur.expect_tok(Tok::Assign)?;

    let mut bound = Vec::new();
    if cur.peek() == Some(&Tok::Word("sum".into())) {
        cur.bump();
        bound = cur.word_list("bound variable")?;
    }

    let mut atoms = Vec::new();
    loop {
        let (l, c) = cur.mark();
        let relation = cur.word("atom")?;
        let vars = cur.word_list("variable")?;
        let schema = Schema::new(vars).map_err(|e| match e {
            SchemaError::DuplicateVariable(var) => QueryError::RepeatedInAtom { relation: relation.clone(), var },
            other => ParseError::new(l, c, other.to_string()).into(),
        })?;
        let mode = if cur.eat('@') {
            let (l, c) = cur.mark();
            match cur.word("`static` or `dynamic`")?.as_str() {
                "static" => Some(Mode::Static),
                "dynamic" => Some(Mode::Dynamic),
                other => return Err(ParseError::new(l, c, format!("unknown annotation `@{other}`")).into()),
            }
        } else {
            None
        };
        atoms.push(Atom { relation, schema, mode });
        if cur.at_end() {
            break;
        }
        if !(cur.eat(',') || cur.eat('*') || cur.eat('·')) {
            cur.finish()?;
        }
    }

    let mut fds = Vec::new();
    for (line, offset, text) in fd_lines {
        let padded = format!("{}{}", " ".repeat(offset), text);
        let mut cur = Cursor::new(&padded, line)?;
        loop {
            let lhs = var_set(&mut cur)?;
            cur.expect_tok(Tok::Arrow)?;
            let rhs = var_set(&mut cur)?;
            fds.push(Fd { lhs, rhs });
            if cur.at_end() {
                break;
            }
            cur.expect(';')?;
            if cur.at_end() {
                break;
            }
        }
    }

    let mut free = outputs;
    free.extend(inputs.iter().cloned());
    let q = Query { name, free, inputs, cqap, bound, atoms, fds };
    q.validate()?;
    Ok(q)
}

fn head_list(cur: &mut Cursor) -> Result<Vec<String>, ParseError> {
    let mut out = Vec::new();
    if cur.eat('·') || matches!(cur.peek(), Some(Tok::Punct(')' | '|'))) {
        return Ok(out);
    }
    loop {
        out.push(cur.word("head variable")?);
        if !cur.eat(',') {
            return Ok(out);
        }
    }
}

fn var_set(cur: &mut Cursor) -> Result<BTreeSet<String>, ParseError> {
    let mut out = BTreeSet::new();
    out.insert(cur.word("variable")?);
    while cur.eat(',') {
        out.insert(cur.word("variable")?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_aggregate_query() {
        let q = parse_query("Q(A) := sum(B) R(A,B), S(B)").unwrap();
        assert_eq!(q.free, ["A"]);
        assert_eq!(q.bound, ["B"]);
        assert_eq!(q.atoms.len(), 2);
        assert!(!q.cqap);
    }

    #[test]
    fn parses_triangle_count() {
        let q = parse_query("Q() := sum(A,B,C) R(A,B), S(B,C), T(C,A)").unwrap();
        assert!(q.free.is_empty());
        assert_eq!(q.bound, ["A", "B", "C"]);
        assert_eq!(q.atoms[2].vars(), ["C", "A"]);
    }

    #[test]
    fn parses_cqap_heads() {
        let q = parse_query("Q(·|A,B,C) := E(A,B), E(B,C), E(C,A)").unwrap();
        assert!(q.cqap);
        assert_eq!(q.inputs, ["A", "B", "C"]);
        assert!(q.outputs().is_empty());
        assert_eq!(q.self_joins(), ["E"]);
        let q = parse_query("Q(|A) := T(A)").unwrap();
        assert_eq!(q.inputs, ["A"]);
        let q = parse_query("Q(C|A,B) := E(A,B), E(B,C), E(C,A)").unwrap();
        assert_eq!(q.free, ["C", "A", "B"]);
        assert_eq!(q.outputs(), ["C"]);
    }

    #[test]
    fn parses_annotations_and_fds() {
        let text = "Q(A,B,C) := sum(D) R(A,D)@dynamic, S(A,B)@dynamic,\n  T(B,C)@static\nfd: A -> C; B,C -> D\n";
        let q = parse_query(text).unwrap();
        assert_eq!(q.atoms[2].mode, Some(Mode::Static));
        assert_eq!(q.fds, vec![Fd::new(&["A"], &["C"]), Fd::new(&["B", "C"], &["D"])]);
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "Q(A) := sum(B) R(A,B), S(B)",
            "Q() := sum(A,B,C) R(A,B), S(B,C), T(C,A)",
            "Q(·|A,B,C) := E(A,B), E(B,C), E(C,A)",
            "Q(A|B) := S(A,B), T(B)",
            "Q(A,B,C) := sum(D) R(A,D)@dynamic, S(A,B), T(B,C)@static\nfd: A -> C; B,C -> D",
        ] {
            let q = parse_query(text).unwrap();
            assert_eq!(q.to_string(), text);
            assert_eq!(parse_query(&q.to_string()).unwrap(), q);
        }
    }

    #[test]
    fn syntax_errors_have_positions() {
        let err = parse_query("Q(A) := sum(B) R(A,B) S(B)").unwrap_err();
        assert_eq!(err, QueryError::Syntax(ParseError::new(1, 23, "expected end of line, found `S`")));
        let err = parse_query("Q(A) = R(A)").unwrap_err();
        assert!(matches!(err, QueryError::Syntax(ParseError { line: 1, col: 6, .. })));
        let err = parse_query("\nQ(A) := R(A)@often").unwrap_err();
        assert!(matches!(err, QueryError::Syntax(ParseError { line: 2, col: 14, .. })));
        let err = parse_query("Q(A) := R(A)\nfd: A B").unwrap_err();
        assert!(matches!(err, QueryError::Syntax(ParseError { line: 2, col: 7, .. })), "{err:?}");
        assert!(parse_query("").is_err());
    }

    #[test]
    fn semantic_errors() {
        assert_eq!(parse_query("Q(A,A) := R(A)").unwrap_err(), QueryError::DuplicateFree("A".into()));
        assert_eq!(parse_query("Q(A) := sum(A) R(A)").unwrap_err(), QueryError::FreeAndBound("A".into()));
        assert_eq!(parse_query("Q(A) := R(A,B)").unwrap_err(), QueryError::UndeclaredVariable("B".into()));
        assert_eq!(parse_query("Q(A,B) := R(A)").unwrap_err(), QueryError::UnusedVariable("B".into()));
        assert_eq!(
            parse_query("Q(A) := R(A,A)").unwrap_err(),
            QueryError::RepeatedInAtom { relation: "R".into(), var: "A".into() }
        );
        assert_eq!(
            parse_query("Q(A) := R(A)\nfd: A -> Z").unwrap_err(),
            QueryError::UnknownFdVariable("Z".into())
        );
    }
}

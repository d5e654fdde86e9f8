//! Model formula mini-language.
//!
//! ```text
//! formula := ident '~' term ('+' term)*
//! term    := '1' | ident
//!          | 's(' ident [',' ident] ',' "bs='re'" ')'
//!          | 's(' ident [',' 'by=' ident] ',' "bs='mrf'" [',' 'k=' int] ')'
//!          | 'offset(' ident ')' | 'offset(log(' ident '))'
//! ```
//!
//! Named smooth arguments may appear in any order. The neighbourhood
//! structure for `mrf` smooths is supplied at fit time, not in the formula.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Identity link.
    #[default]
    Gaussian,
    /// Log link.
    Poisson,
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "poisson" => Ok(Family::Poisson),
            other => Err(format!("unknown family `{other}` (expected gaussian or poisson)")),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::Poisson => "poisson",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReSlope {
    pub group: String,
    pub covariate: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MrfSmooth {
    pub group: String,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MrfSlope {
    pub group: String,
    pub by: String,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offset {
    pub var: String,
    pub log: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub family: Family,
    pub fixed: Vec<String>,
    pub re_intercepts: Vec<String>,
    pub re_slopes: Vec<ReSlope>,
    pub mrf_intercepts: Vec<MrfSmooth>,
    pub mrf_slopes: Vec<MrfSlope>,
    pub offset: Option<Offset>,
}

impl ModelSpec {
    pub fn new(response: impl Into<String>) -> Self {
        Self {
            response: response.into(),
            family: Family::Gaussian,
            fixed: Vec::new(),
            re_intercepts: Vec::new(),
            re_slopes: Vec::new(),
            mrf_intercepts: Vec::new(),
            mrf_slopes: Vec::new(),
            offset: None,
        }
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    pub fn has_penalized_terms(&self) -> bool {
        !(self.re_intercepts.is_empty()
            && self.re_slopes.is_empty()
            && self.mrf_intercepts.is_empty()
            && self.mrf_slopes.is_empty())
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_formula(self))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormulaError {
    #[error("at byte {offset}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        offset: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("at byte {offset}: unknown basis `{value}` (expected 're' or 'mrf')")]
    UnknownBasis { offset: usize, value: String },
    #[error("at byte {offset}: argument `{arg}` is not valid here{hint}")]
    BadArgument {
        offset: usize,
        arg: String,
        hint: String,
    },
    #[error("at byte {offset}: duplicate term `{term}`")]
    DuplicateTerm { offset: usize, term: String },
    #[error("at byte {offset}: response `{name}` also appears as a covariate")]
    ResponseAsCovariate { offset: usize, name: String },
}

impl FormulaError {
    /// Byte offset into the source text.
    pub fn offset(&self) -> usize {
        match self {
            FormulaError::Syntax { offset, .. }
            | FormulaError::UnknownBasis { offset, .. }
            | FormulaError::BadArgument { offset, .. }
            | FormulaError::DuplicateTerm { offset, .. }
            | FormulaError::ResponseAsCovariate { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(usize),
    Str(String),
    Tilde,
    Plus,
    LParen,
    RParen,
    Comma,
    Eq,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::Tilde => "`~`".into(),
            Tok::Plus => "`+`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eq => "`=`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '.'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-')
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, FormulaError> {
    let mut out = Vec::new();
    let mut it = src.char_indices().peekable();
    while let Some(&(pos, c)) = it.peek() {
        if c.is_whitespace() {
            it.next();
            continue;
        }
        let single = match c {
            '~' => Some(Tok::Tilde),
            '+' => Some(Tok::Plus),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(t) = single {
            it.next();
            out.push((pos, t));
            continue;
        }
        if c == '\'' || c == '"' {
            it.next();
            let mut s = String::new();
            let mut closed = false;
            for (_, d) in it.by_ref() {
                if d == c {
                    closed = true;
                    break;
                }
                s.push(d);
            }
            if !closed {
                return Err(FormulaError::Syntax {
                    offset: pos,
                    expected: vec![format!("closing {c}")],
                    found: "end of input".into(),
                });
            }
            out.push((pos, Tok::Str(s)));
            continue;
        }
        if c.is_ascii_digit() {
            let mut end = pos;
            while let Some(&(p, d)) = it.peek() {
                if !d.is_ascii_digit() {
                    break;
                }
                end = p + d.len_utf8();
                it.next();
            }
            let v = src[pos..end].parse().map_err(|_| FormulaError::Syntax {
                offset: pos,
                expected: vec!["integer".into()],
                found: src[pos..end].to_string(),
            })?;
            out.push((pos, Tok::Int(v)));
            continue;
        }
        if is_ident_start(c) {
            let mut end = pos;
            while let Some(&(p, d)) = it.peek() {
                if !is_ident_continue(d) {
                    break;
                }
                end = p + d.len_utf8();
                it.next();
            }
            out.push((pos, Tok::Ident(src[pos..end].to_string())));
            continue;
        }
        return Err(FormulaError::Syntax {
            offset: pos,
            expected: vec!["identifier".into(), "`~`".into(), "`+`".into(), "`(`".into()],
            found: format!("`{c}`"),
        });
    }
    out.push((src.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

enum Term {
    Intercept,
    Fixed(String),
    ReIntercept(String),
    ReSlope(ReSlope),
    MrfIntercept(MrfSmooth),
    MrfSlope(MrfSlope),
    Offset(Offset),
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn pos(&self) -> usize {
        self.toks[self.at].0
    }

    fn bump(&mut self) -> (usize, Tok) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn fail<X>(&self, expected: &[&str]) -> Result<X, FormulaError> {
        Err(FormulaError::Syntax {
            offset: self.pos(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        })
    }

    fn expect(&mut self, tok: Tok, label: &str) -> Result<usize, FormulaError> {
        if *self.peek() == tok {
            Ok(self.bump().0)
        } else {
            self.fail(&[label])
        }
    }

    fn ident(&mut self) -> Result<String, FormulaError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.fail(&["identifier"]),
        }
    }

    fn term(&mut self) -> Result<Term, FormulaError> {
        match self.peek().clone() {
            Tok::Int(1) => {
                self.bump();
                Ok(Term::Intercept)
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() != Tok::LParen {
                    return Ok(Term::Fixed(name));
                }
                match name.as_str() {
                    "s" => self.smooth(),
                    "offset" => self.offset(),
                    _ => self.fail(&["`+`", "end of input"]),
                }
            }
            _ => self.fail(&["identifier", "`1`", "`s(`", "`offset(`"]),
        }
    }

    fn offset(&mut self) -> Result<Term, FormulaError> {
        self.expect(Tok::LParen, "`(`")?;
        let name = self.ident()?;
        let term = if name == "log" && *self.peek() == Tok::LParen {
            self.bump();
            let var = self.ident()?;
            self.expect(Tok::RParen, "`)`")?;
            Offset { var, log: true }
        } else {
            Offset {
                var: name,
                log: false,
            }
        };
        self.expect(Tok::RParen, "`)`")?;
        Ok(Term::Offset(term))
    }

    fn smooth(&mut self) -> Result<Term, FormulaError> {
        self.expect(Tok::LParen, "`(`")?;
        let group = self.ident()?;
        let mut second: Option<(usize, String)> = None;
        let mut bs: Option<(usize, String)> = None;
        let mut by: Option<(usize, String)> = None;
        let mut k: Option<(usize, usize)> = None;
        while *self.peek() == Tok::Comma {
            self.bump();
            let at = self.pos();
            let name = self.ident()?;
            if *self.peek() != Tok::Eq {
                if second.is_some() || bs.is_some() || by.is_some() || k.is_some() {
                    return self.fail(&["`=`"]);
                }
                second = Some((at, name));
                continue;
            }
            self.bump();
            let dup = |offset| FormulaError::BadArgument {
                offset,
                arg: name.clone(),
                hint: " (given twice)".into(),
            };
            match name.as_str() {
                "bs" => {
                    if bs.is_some() {
                        return Err(dup(at));
                    }
                    let vat = self.pos();
                    let v = match self.bump().1 {
                        Tok::Str(s) | Tok::Ident(s) => s,
                        _ => {
                            self.at -= 1;
                            return self.fail(&["'re'", "'mrf'"]);
                        }
                    };
                    bs = Some((vat, v));
                }
                "by" => {
                    if by.is_some() {
                        return Err(dup(at));
                    }
                    by = Some((at, self.ident()?));
                }
                "k" => {
                    if k.is_some() {
                        return Err(dup(at));
                    }
                    match self.peek().clone() {
                        Tok::Int(v) if v > 0 => {
                            self.bump();
                            k = Some((at, v));
                        }
                        _ => return self.fail(&["positive integer"]),
                    }
                }
                _ => {
                    let hint = if name == "xt" {
                        "; supply the neighbourhood structure at fit time".to_string()
                    } else {
                        String::new()
                    };
                    return Err(FormulaError::BadArgument {
                        offset: at,
                        arg: name,
                        hint,
                    });
                }
            }
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        let Some((bs_at, basis)) = bs else {
            return Err(FormulaError::Syntax {
                offset: self.toks[self.at - 1].0,
                expected: vec!["bs=".into()],
                found: "`)`".into(),
            });
        };
        match basis.as_str() {
            "re" => {
                if let Some((at, _)) = by {
                    return Err(FormulaError::BadArgument {
                        offset: at,
                        arg: "by".into(),
                        hint: " for bs='re'; use s(group, covariate, bs='re')".into(),
                    });
                }
                if let Some((at, _)) = k {
                    return Err(FormulaError::BadArgument {
                        offset: at,
                        arg: "k".into(),
                        hint: " for bs='re'".into(),
                    });
                }
                Ok(match second {
                    Some((_, covariate)) => Term::ReSlope(ReSlope { group, covariate }),
                    None => Term::ReIntercept(group),
                })
            }
            "mrf" => {
                if let Some((at, name)) = second {
                    return Err(FormulaError::BadArgument {
                        offset: at,
                        arg: name,
                        hint: " for bs='mrf'; use by=covariate".into(),
                    });
                }
                let k = k.map(|(_, v)| v);
                Ok(match by {
                    Some((_, by)) => Term::MrfSlope(MrfSlope { group, by, k }),
                    None => Term::MrfIntercept(MrfSmooth { group, k }),
                })
            }
            other => Err(FormulaError::UnknownBasis {
                offset: bs_at,
                value: other.to_string(),
            }),
        }
    }
}

/// Parses a formula; the family defaults to Gaussian.
pub fn parse_formula(src: &str) -> Result<ModelSpec, FormulaError> {
    parse_model(src, Family::Gaussian)
}

pub fn parse_model(src: &str, family: Family) -> Result<ModelSpec, FormulaError> {
    let mut p = Parser {
        toks: lex(src)?,
        at: 0,
    };
    let response = p.ident()?;
    p.expect(Tok::Tilde, "`~`")?;
    let mut spec = ModelSpec::new(response).with_family(family);
    loop {
        let at = p.pos();
        let term = p.term()?;
        let dup = |t: String| FormulaError::DuplicateTerm { offset: at, term: t };
        match term {
            Term::Intercept => {}
            Term::Fixed(name) => {
                if name == spec.response {
                    return Err(FormulaError::ResponseAsCovariate { offset: at, name });
                }
                if spec.fixed.contains(&name) {
                    return Err(dup(name));
                }
                spec.fixed.push(name);
            }
            Term::ReIntercept(g) => {
                if spec.re_intercepts.contains(&g) {
                    return Err(dup(format!("s({g}, bs='re')")));
                }
                spec.re_intercepts.push(g);
            }
            Term::ReSlope(s) => {
                if spec.re_slopes.contains(&s) {
                    return Err(dup(format!("s({}, {}, bs='re')", s.group, s.covariate)));
                }
                spec.re_slopes.push(s);
            }
            Term::MrfIntercept(m) => {
                if spec.mrf_intercepts.iter().any(|o| o.group == m.group) {
                    return Err(dup(format!("s({}, bs='mrf')", m.group)));
                }
                spec.mrf_intercepts.push(m);
            }
            Term::MrfSlope(m) => {
                if spec.mrf_slopes.iter().any(|o| o.group == m.group && o.by == m.by) {
                    return Err(dup(format!("s({}, by={}, bs='mrf')", m.group, m.by)));
                }
                spec.mrf_slopes.push(m);
            }
            Term::Offset(o) => {
                if spec.offset.is_some() {
                    return Err(dup("offset".into()));
                }
                spec.offset = Some(o);
            }
        }
        match p.peek() {
            Tok::Plus => {
                p.bump();
            }
            Tok::End => break,
            _ => return p.fail(&["`+`", "end of input"]),
        }
    }
    Ok(spec)
}

/// Canonical text: fixed terms, random intercepts, random slopes, MRF
/// intercepts, MRF slopes, offset.
pub fn format_formula(spec: &ModelSpec) -> String {
    let mut terms: Vec<String> = spec.fixed.clone();
    terms.extend(spec.re_intercepts.iter().map(|g| format!("s({g}, bs='re')")));
    terms.extend(
        spec.re_slopes
            .iter()
            .map(|s| format!("s({}, {}, bs='re')", s.group, s.covariate)),
    );
    let k = |k: Option<usize>| k.map(|k| format!(", k={k}")).unwrap_or_default();
    terms.extend(
        spec.mrf_intercepts
            .iter()
            .map(|m| format!("s({}, bs='mrf'{})", m.group, k(m.k))),
    );
    terms.extend(
        spec.mrf_slopes
            .iter()
            .map(|m| format!("s({}, by={}, bs='mrf'{})", m.group, m.by, k(m.k))),
    );
    if let Some(o) = &spec.offset {
        terms.push(if o.log {
            format!("offset(log({}))", o.var)
        } else {
            format!("offset({})", o.var)
        });
    }
    if terms.is_empty() {
        format!("{} ~ 1", spec.response)
    } else {
        format!("{} ~ {}", spec.response, terms.join(" + "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_formula() {
        let s = parse_formula("y ~ x").unwrap();
        assert_eq!(s.fixed, vec!["x".to_string()]);
        assert!(!s.has_penalized_terms());
        assert_eq!(format_formula(&ModelSpec::new("y")), "y ~ 1");
        assert_eq!(parse_formula("y~1").unwrap(), ModelSpec::new("y"));
    }

    #[test]
    fn quotes_and_whitespace_are_flexible() {
        let a = parse_formula("y~s(g,bs=\"mrf\",k=3)").unwrap();
        let b = parse_formula("  y  ~  s( g , k = 3 , bs = 'mrf' )  ").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn error_offsets_are_byte_positions() {
        let e = parse_formula("y ~ x + ").unwrap_err();
        assert_eq!(e.offset(), 8);
        let e = parse_formula("y x").unwrap_err();
        assert_eq!(e.offset(), 2);
        assert!(matches!(e, FormulaError::Syntax { ref expected, .. } if expected == &vec!["`~`".to_string()]));
        let e = parse_formula("y ~ s(g, bs='tp')").unwrap_err();
        assert_eq!(
            e,
            FormulaError::UnknownBasis {
                offset: 12,
                value: "tp".into()
            }
        );
    }

    #[test]
    fn rejects_duplicates_and_response_covariate() {
        assert!(matches!(
            parse_formula("y ~ x + x").unwrap_err(),
            FormulaError::DuplicateTerm { offset: 8, .. }
        ));
        assert!(matches!(
            parse_formula("y ~ s(g, bs='re') + s(g, bs = 're')").unwrap_err(),
            FormulaError::DuplicateTerm { offset: 20, .. }
        ));
        assert!(matches!(
            parse_formula("y ~ y").unwrap_err(),
            FormulaError::ResponseAsCovariate { offset: 4, .. }
        ));
        assert!(parse_formula("y ~ offset(a) + offset(log(b))").is_err());
    }

    #[test]
    fn xt_clause_is_rejected_with_hint() {
        let e = parse_formula("y ~ s(p, bs='mrf', xt=nb)").unwrap_err();
        assert!(e.to_string().contains("fit time"), "{e}");
    }

    #[test]
    fn basis_specific_arguments() {
        assert!(parse_formula("y ~ s(g, bs='re', k=3)").is_err());
        assert!(parse_formula("y ~ s(g, by=x, bs='re')").is_err());
        assert!(parse_formula("y ~ s(g, x, bs='mrf')").is_err());
        assert!(parse_formula("y ~ s(g)").is_err());
        assert!(parse_formula("y ~ s(g, bs='mrf', k=0)").is_err());
    }

    #[test]
    fn hyphenated_identifiers() {
        let s = parse_formula("y ~ s(sub-region, bs='mrf')").unwrap();
        assert_eq!(s.mrf_intercepts[0].group, "sub-region");
    }
}

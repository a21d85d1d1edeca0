//! Boolean expressions over the named attributes, e.g.
//! `glasses & !smiling`, `smiling ∧ pale_skin`, `true`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::synthfaces::Attributes;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AttributeQuery {
    Const(bool),
    Attr(String),
    Not(Box<AttributeQuery>),
    And(Box<AttributeQuery>, Box<AttributeQuery>),
    Or(Box<AttributeQuery>, Box<AttributeQuery>),
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    And,
    Or,
    Not,
    Open,
    Close,
}

fn tokenize(s: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                out.push(Token::Open);
            }
            ')' => {
                chars.next();
                out.push(Token::Close);
            }
            '&' | '∧' | '*' => {
                chars.next();
                if c == '&' && chars.peek() == Some(&'&') {
                    chars.next();
                }
                out.push(Token::And);
            }
            '|' | '∨' | '+' => {
                chars.next();
                if c == '|' && chars.peek() == Some(&'|') {
                    chars.next();
                }
                out.push(Token::Or);
            }
            '!' | '¬' | '~' => {
                chars.next();
                out.push(Token::Not);
            }
            '⊤' => {
                chars.next();
                out.push(Token::Ident("true".into()));
            }
            '⊥' => {
                chars.next();
                out.push(Token::Ident("false".into()));
            }
            c if c.is_alphanumeric() || c == '_' => {
                let mut word = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        word.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push(match word.to_ascii_lowercase().as_str() {
                    "and" => Token::And,
                    "or" => Token::Or,
                    "not" => Token::Not,
                    _ => Token::Ident(word),
                });
            }
            other => return Err(Error::invalid(format!("unexpected character {other:?} in attribute query"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn or(&mut self) -> Result<AttributeQuery> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            lhs = AttributeQuery::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<AttributeQuery> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            lhs = AttributeQuery::And(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<AttributeQuery> {
        let tok = self.peek().cloned().ok_or_else(|| Error::invalid("attribute query ends unexpectedly"))?;
        self.pos += 1;
        match tok {
            Token::Not => Ok(AttributeQuery::Not(Box::new(self.unary()?))),
            Token::Open => {
                let inner = self.or()?;
                if self.peek() != Some(&Token::Close) {
                    return Err(Error::invalid("unbalanced parenthesis in attribute query"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Token::Ident(name) => match name.to_ascii_lowercase().as_str() {
                "true" => Ok(AttributeQuery::Const(true)),
                "false" => Ok(AttributeQuery::Const(false)),
                lower if Attributes::NAMES.contains(&lower) => Ok(AttributeQuery::Attr(lower.to_string())),
                _ => Err(Error::invalid(format!("unknown attribute {name:?}; expected one of {:?}", Attributes::NAMES))),
            },
            other => Err(Error::invalid(format!("unexpected token {other:?} in attribute query"))),
        }
    }
}

impl FromStr for AttributeQuery {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens = tokenize(s)?;
        if tokens.is_empty() {
            return Err(Error::invalid("empty attribute query"));
        }
        let mut p = Parser { tokens, pos: 0 };
        let q = p.or()?;
        if p.pos != p.tokens.len() {
            return Err(Error::invalid(format!("trailing input in attribute query {s:?}")));
        }
        Ok(q)
    }
}

impl AttributeQuery {
    pub fn matches(&self, a: &Attributes) -> bool {
        match self {
            AttributeQuery::Const(b) => *b,
            AttributeQuery::Attr(name) => a.get(name).unwrap_or(false),
            AttributeQuery::Not(q) => !q.matches(a),
            AttributeQuery::And(l, r) => l.matches(a) && r.matches(a),
            AttributeQuery::Or(l, r) => l.matches(a) || r.matches(a),
        }
    }

    /// Conjunction of the given attributes, or `true` if none.
    pub fn all_of(names: &[&str]) -> Result<Self> {
        let mut q: Option<AttributeQuery> = None;
        for n in names {
            let a: AttributeQuery = n.parse()?;
            q = Some(match q {
                Some(prev) => AttributeQuery::And(Box::new(prev), Box::new(a)),
                None => a,
            });
        }
        Ok(q.unwrap_or(AttributeQuery::Const(true)))
    }
}

impl fmt::Display for AttributeQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeQuery::Const(b) => write!(f, "{b}"),
            AttributeQuery::Attr(n) => write!(f, "{n}"),
            AttributeQuery::Not(q) => write!(f, "!{q}"),
            AttributeQuery::And(l, r) => write!(f, "({l} & {r})"),
            AttributeQuery::Or(l, r) => write!(f, "({l} | {r})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(glasses: bool, smiling: bool, pale_skin: bool, male_proxy: bool) -> Attributes {
        Attributes { glasses, smiling, pale_skin, male_proxy }
    }

    #[test]
    fn precedence_and_spellings() {
        let q: AttributeQuery = "glasses ∧ smiling".parse().unwrap();
        assert!(q.matches(&attrs(true, true, false, false)));
        assert!(!q.matches(&attrs(true, false, false, false)));

        let q: AttributeQuery = "glasses | smiling & pale_skin".parse().unwrap();
        assert!(q.matches(&attrs(true, false, false, false)));
        assert!(!q.matches(&attrs(false, true, false, false)));

        let q: AttributeQuery = "not (glasses or male_proxy)".parse().unwrap();
        assert!(q.matches(&attrs(false, true, true, false)));
        assert!(!q.matches(&attrs(false, false, false, true)));

        assert_eq!("⊤".parse::<AttributeQuery>().unwrap(), AttributeQuery::Const(true));
    }

    #[test]
    fn display_round_trips() {
        let q: AttributeQuery = "!glasses && (smiling || pale_skin)".parse().unwrap();
        assert_eq!(q.to_string().parse::<AttributeQuery>().unwrap(), q);
    }

    #[test]
    fn rejects_bad_queries() {
        for bad in ["", "beard", "glasses &", "(smiling", "smiling)", "glasses $ smiling"] {
            assert!(bad.parse::<AttributeQuery>().is_err(), "{bad:?} should fail");
        }
    }
}

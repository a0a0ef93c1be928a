//! Recursive-descent parser for scalar expressions of time.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := factor (("*" | "/") factor)*
//! factor  := atom ("^" integer)?
//! atom    := "-" atom
//!          | number
//!          | "t"
//!          | func "(" expr ")"            func ∈ {sin cos tan exp log sqrt}
//!          | parameter
//!          | "(" expr ")"
//! number  := digits ("." digits)? (("e" | "E") ("+" | "-")? digits)?
//! integer := ("+" | "-")? digits
//! ```
//!
//! Unary minus is part of `atom`, so it binds *tighter* than `^`: `-t^2`
//! means `(-t)^2`. Write `-(t^2)` for the negated square.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{add, call, div, mul, neg, pow, sub, Expr, ExprError, Func, ScalarFn};

/// Parse `src` into a [`ScalarFn`] with the given parameter bindings.
///
/// Every identifier other than `t` and the function names must appear in
/// `params`; unknown names are parse errors (listing the known parameters),
/// which catches typos at load time rather than at evaluation time. The full
/// binding map is attached to the result even if only part of it is
/// referenced, so functions parsed against the same map combine freely.
pub fn parse(src: &str, params: &BTreeMap<String, f64>) -> Result<ScalarFn, ExprError> {
    for name in params.keys() {
        if name == "t" || Func::from_name(name).is_some() {
            return Err(ExprError::Parse {
                pos: 0,
                msg: format!("`{name}` is reserved and cannot be used as a parameter name"),
            });
        }
        let mut chars = name.chars();
        let head_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
        let tail_ok = chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !(head_ok && tail_ok) {
            return Err(ExprError::Parse {
                pos: 0,
                msg: format!("`{name}` is not a valid parameter name"),
            });
        }
    }
    let mut p = Parser { src, bytes: src.as_bytes(), pos: 0, params };
    let expr = p.expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(ScalarFn::from_parts(expr, Arc::new(params.clone())))
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    params: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn err(&self, msg: impl Into<String>) -> ExprError {
        ExprError::Parse { pos: self.pos, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        while matches!(self.bytes.get(self.pos), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    /// Next non-whitespace byte, leaving `pos` on it.
    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, ch: u8) -> bool {
        if self.peek() == Some(ch) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Arc<Expr>, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = add(lhs, self.term()?);
            } else if self.eat(b'-') {
                lhs = sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Arc<Expr>, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = mul(lhs, self.factor()?);
            } else if self.eat(b'/') {
                lhs = div(lhs, self.factor()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Arc<Expr>, ExprError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            Ok(pow(base, self.integer()?))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Arc<Expr>, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(neg(self.atom()?))
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected `)`"));
                }
                Ok(e)
            }
            Some(d) if d.is_ascii_digit() => self.number(),
            Some(ch) if ch.is_ascii_alphabetic() || ch == b'_' => self.name(),
            Some(ch) => Err(self.err(format!("unexpected character `{}`", ch as char))),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Arc<Expr>, ExprError> {
        let start = self.pos;
        self.digits();
        if self.bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            if self.digits() == 0 {
                return Err(self.err("expected digits after decimal point"));
            }
        }
        // Consume an exponent only when digits actually follow, so the `e`
        // of an adjacent identifier is never swallowed.
        if matches!(self.bytes.get(self.pos), Some(&b'e') | Some(&b'E')) {
            let mut j = self.pos + 1;
            if matches!(self.bytes.get(j), Some(&b'+') | Some(&b'-')) {
                j += 1;
            }
            if matches!(self.bytes.get(j), Some(d) if d.is_ascii_digit()) {
                self.pos = j;
                self.digits();
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(super::c(v)),
            _ => Err(ExprError::Parse { pos: start, msg: format!("bad number `{text}`") }),
        }
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(d) if d.is_ascii_digit()) {
            self.pos += 1;
        }
        self.pos - start
    }

    fn name(&mut self) -> Result<Arc<Expr>, ExprError> {
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(ch) if ch.is_ascii_alphanumeric() || *ch == b'_')
        {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if name == "t" {
            return Ok(Arc::new(Expr::Time));
        }
        if let Some(f) = Func::from_name(name) {
            if !self.eat(b'(') {
                return Err(self.err(format!("function `{name}` must be applied as `{name}(...)`")));
            }
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.err("expected `)`"));
            }
            return Ok(call(f, arg));
        }
        if self.params.contains_key(name) {
            return Ok(Arc::new(Expr::Param(name.to_string())));
        }
        let known: Vec<&str> = self.params.keys().map(String::as_str).collect();
        let msg = if known.is_empty() {
            format!("unknown identifier `{name}` (no parameters are defined)")
        } else {
            format!("unknown identifier `{name}` (known parameters: {})", known.join(", "))
        };
        Err(ExprError::Parse { pos: start, msg })
    }

    fn integer(&mut self) -> Result<i32, ExprError> {
        self.skip_ws();
        let start = self.pos;
        if matches!(self.bytes.get(self.pos), Some(&b'+') | Some(&b'-')) {
            self.pos += 1;
        }
        if self.digits() == 0 {
            return Err(self.err("expected an integer exponent after `^`"));
        }
        self.src[start..self.pos]
            .parse::<i32>()
            .map_err(|e| ExprError::Parse { pos: start, msg: format!("bad exponent: {e}") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_params() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn scientific_notation_and_adjacent_identifiers() {
        let f = parse("2e-3 + 1.5E2", &no_params()).unwrap();
        assert_eq!(f.eval(0.0).unwrap(), 0.002 + 150.0);
        // The `e` of `eta` must not be taken as an exponent marker.
        let mut params = BTreeMap::new();
        params.insert("eta".to_string(), 4.0);
        let g = parse("2*eta", &params).unwrap();
        assert_eq!(g.eval(0.0).unwrap(), 8.0);
    }

    #[test]
    fn reserved_names_cannot_be_parameters() {
        let mut params = BTreeMap::new();
        params.insert("sin".to_string(), 1.0);
        assert!(parse("sin + 1", &params).is_err());
        let mut params = BTreeMap::new();
        params.insert("t".to_string(), 1.0);
        assert!(parse("t", &params).is_err());
    }

    #[test]
    fn error_positions_point_at_the_problem() {
        match parse("1 + @", &no_params()).unwrap_err() {
            ExprError::Parse { pos, .. } => assert_eq!(pos, 4),
            other => panic!("unexpected error {other:?}"),
        }
        match parse("sin(t", &no_params()).unwrap_err() {
            ExprError::Parse { pos, .. } => assert_eq!(pos, 5),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn trailing_input_is_rejected() {
        assert!(parse("t 1", &no_params()).is_err());
        assert!(parse("t^2^3", &no_params()).is_err()); // power is not associative
    }

    #[test]
    fn power_takes_signed_integers_only() {
        let f = parse("t^-2", &no_params()).unwrap();
        assert_eq!(f.eval(2.0).unwrap(), 0.25);
        assert!(parse("t^1.5", &no_params()).is_err());
        assert!(parse("t^t", &no_params()).is_err());
    }
}

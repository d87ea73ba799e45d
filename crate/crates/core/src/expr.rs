//! Scalar coefficient expressions: parsing, evaluation, pretty-printing.
//!
//! Grammar: `+ - * / ^` with standard precedence, unary minus, parentheses,
//! the constant `pi`, and the unary functions sin, cos, tan, exp, log, sqrt,
//! abs, tanh. Variables are bound by name at parse time.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
            Func::Tanh => v.tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Const(f64),
    Var(usize),
    Neg(Box<Ast>),
    Binary(BinOp, Box<Ast>, Box<Ast>),
    Call(Func, Box<Ast>),
}

/// A parsed scalar expression over a fixed, named variable set.
/// Immutable after construction; shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientExpr {
    vars: Vec<String>,
    ast: Ast,
}

impl CoefficientExpr {
    /// Parses an expression in the spatial variables: `x` for dim 1
    /// (with `x1` accepted as an alias), `x1..xn` otherwise.
    pub fn parse_spatial(source: &str, dim: usize) -> Result<Self> {
        Self::parse_with_vars(source, &spatial_var_names(dim))
    }

    /// Parses an expression in `t` plus the spatial variables.
    pub fn parse_space_time(source: &str, dim: usize) -> Result<Self> {
        let mut vars = vec!["t".to_string()];
        vars.extend(spatial_var_names(dim));
        Self::parse_with_vars(source, &vars)
    }

    pub fn parse_with_vars<S: AsRef<str>>(source: &str, vars: &[S]) -> Result<Self> {
        let names: Vec<String> = vars.iter().map(|s| s.as_ref().to_string()).collect();
        let tokens = lex(source)?;
        let mut p = Parser {
            tokens,
            i: 0,
            src_len: source.len(),
            vars: &names,
        };
        let ast = p.parse_expr()?;
        if p.i < p.tokens.len() {
            let (_, pos) = p.tokens[p.i];
            return Err(Error::Syntax {
                pos,
                msg: "unexpected trailing input".into(),
            });
        }
        Ok(CoefficientExpr {
            vars: names,
            ast: fold(ast),
        })
    }

    pub fn nvars(&self) -> usize {
        self.vars.len()
    }

    pub fn var_names(&self) -> &[String] {
        &self.vars
    }

    pub fn ast(&self) -> &Ast {
        &self.ast
    }

    /// Evaluates at a point. Intermediate values follow IEEE semantics; a
    /// non-finite final value is reported as an evaluation error.
    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.vars.len() {
            return Err(Error::Invalid(format!(
                "expression has {} variable(s), point has {}",
                self.vars.len(),
                point.len()
            )));
        }
        let v = eval_ast(&self.ast, point);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Eval(format!(
                "`{}` is not finite at {:?}",
                self, point
            )))
        }
    }

    /// Evaluates without the finiteness check (used by hot loops that handle
    /// non-finite values themselves).
    pub fn eval_raw(&self, point: &[f64]) -> f64 {
        eval_ast(&self.ast, point)
    }
}

fn spatial_var_names(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["x".to_string()]
    } else {
        (1..=dim).map(|i| format!("x{i}")).collect()
    }
}

fn eval_ast(ast: &Ast, point: &[f64]) -> f64 {
    match ast {
        Ast::Const(c) => *c,
        Ast::Var(i) => point[*i],
        Ast::Neg(a) => -eval_ast(a, point),
        Ast::Binary(op, a, b) => {
            let va = eval_ast(a, point);
            let vb = eval_ast(b, point);
            match op {
                BinOp::Add => va + vb,
                BinOp::Sub => va - vb,
                BinOp::Mul => va * vb,
                BinOp::Div => va / vb,
                BinOp::Pow => va.powf(vb),
            }
        }
        Ast::Call(f, a) => f.apply(eval_ast(a, point)),
    }
}

/// Folds constant subtrees. A fold is kept only when the result is finite,
/// so evaluation errors still surface at eval time.
fn fold(ast: Ast) -> Ast {
    match ast {
        Ast::Const(_) | Ast::Var(_) => ast,
        Ast::Neg(a) => {
            let a = fold(*a);
            if let Ast::Const(c) = a {
                let v = -c;
                if v.is_finite() {
                    return Ast::Const(v);
                }
            }
            Ast::Neg(Box::new(a))
        }
        Ast::Binary(op, a, b) => {
            let a = fold(*a);
            let b = fold(*b);
            if let (Ast::Const(ca), Ast::Const(cb)) = (&a, &b) {
                let v = eval_ast(&Ast::Binary(op, Box::new(Ast::Const(*ca)), Box::new(Ast::Const(*cb))), &[]);
                if v.is_finite() {
                    return Ast::Const(v);
                }
            }
            Ast::Binary(op, Box::new(a), Box::new(b))
        }
        Ast::Call(f, a) => {
            let a = fold(*a);
            if let Ast::Const(c) = a {
                let v = f.apply(c);
                if v.is_finite() {
                    return Ast::Const(v);
                }
            }
            Ast::Call(f, Box::new(a))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                out.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                out.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                out.push((Tok::Slash, i));
                i += 1;
            }
            b'^' => {
                out.push((Tok::Caret, i));
                i += 1;
            }
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b',' => {
                out.push((Tok::Comma, i));
                i += 1;
            }
            b'0'..=b'9' => {
                let (tok, next) = lex_number(src, i)?;
                out.push((tok, i));
                i = next;
            }
            b'.' if i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() => {
                let (tok, next) = lex_number(src, i)?;
                out.push((tok, i));
                i = next;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                return Err(Error::Syntax {
                    pos: i,
                    msg: format!("unexpected character `{}`", &src[i..i + c.len_utf8_len()]),
                })
            }
        }
    }
    Ok(out)
}

trait Utf8Len {
    fn len_utf8_len(&self) -> usize;
}

impl Utf8Len for u8 {
    fn len_utf8_len(&self) -> usize {
        // length of the UTF-8 sequence starting with this byte
        match self {
            0x00..=0x7f => 1,
            0xc0..=0xdf => 2,
            0xe0..=0xef => 3,
            _ => 4,
        }
    }
}

fn lex_number(src: &str, start: usize) -> Result<(Tok, usize)> {
    let bytes = src.as_bytes();
    let mut i = start;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            i = j;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    let text = &src[start..i];
    match text.parse::<f64>() {
        Ok(v) => Ok((Tok::Num(v), i)),
        Err(_) => Err(Error::Syntax {
            pos: start,
            msg: format!("invalid number literal `{text}`"),
        }),
    }
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    i: usize,
    src_len: usize,
    vars: &'a [String],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.i).map(|(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.tokens
            .get(self.i)
            .map(|(_, p)| *p)
            .unwrap_or(self.src_len)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.i).map(|(t, _)| t.clone());
        if t.is_some() {
            self.i += 1;
        }
        t
    }

    fn parse_expr(&mut self) -> Result<Ast> {
        let mut lhs = self.parse_term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    let rhs = self.parse_term()?;
                    lhs = Ast::Binary(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    let rhs = self.parse_term()?;
                    lhs = Ast::Binary(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Ast> {
        let mut lhs = self.parse_unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    let rhs = self.parse_unary()?;
                    lhs = Ast::Binary(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    let rhs = self.parse_unary()?;
                    lhs = Ast::Binary(BinOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Ast> {
        if let Some(Tok::Minus) = self.peek() {
            self.bump();
            let inner = self.parse_unary()?;
            return Ok(Ast::Neg(Box::new(inner)));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Ast> {
        let base = self.parse_atom()?;
        if let Some(Tok::Caret) = self.peek() {
            self.bump();
            let exp = self.parse_unary()?;
            return Ok(Ast::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Ast> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Ast::Const(v)),
            Some(Tok::LParen) => {
                let inner = self.parse_expr()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(Error::Syntax {
                        pos: self.prev_end(),
                        msg: "expected `)`".into(),
                    }),
                }
            }
            Some(Tok::Ident(name)) => self.parse_ident(name, pos),
            _ => Err(Error::Syntax {
                pos,
                msg: "expected operand".into(),
            }),
        }
    }

    fn prev_end(&self) -> usize {
        self.tokens
            .get(self.i)
            .map(|(_, p)| *p)
            .unwrap_or(self.src_len)
    }

    fn parse_ident(&mut self, name: String, pos: usize) -> Result<Ast> {
        if let Some(f) = Func::from_name(&name) {
            if let Some(Tok::LParen) = self.peek() {
                self.bump();
                let args = self.parse_args()?;
                if args.len() != 1 {
                    return Err(Error::Arity {
                        name,
                        expected: 1,
                        got: args.len(),
                        pos,
                    });
                }
                return Ok(Ast::Call(f, Box::new(args.into_iter().next().unwrap())));
            }
        }
        if name == "pi" {
            return Ok(Ast::Const(std::f64::consts::PI));
        }
        if let Some(i) = self.vars.iter().position(|v| v == &name) {
            return Ok(Ast::Var(i));
        }
        // dimension-1 convenience alias
        if name == "x1" && self.vars.iter().any(|v| v == "x") {
            let i = self.vars.iter().position(|v| v == "x").unwrap();
            return Ok(Ast::Var(i));
        }
        Err(Error::UnknownIdentifier { name, pos })
    }

    fn parse_args(&mut self) -> Result<Vec<Ast>> {
        let mut args = Vec::new();
        if let Some(Tok::RParen) = self.peek() {
            self.bump();
            return Ok(args);
        }
        loop {
            args.push(self.parse_expr()?);
            match self.bump() {
                Some(Tok::Comma) => continue,
                Some(Tok::RParen) => return Ok(args),
                _ => {
                    return Err(Error::Syntax {
                        pos: self.prev_end(),
                        msg: "expected `,` or `)`".into(),
                    })
                }
            }
        }
    }
}

// Printing precedence levels; a child below its slot's minimum is parenthesized.
// A sign-negative constant prints with a leading minus, so it takes the unary
// minus level to keep round trips exact (e.g. as the base of `^`).
fn prec(ast: &Ast) -> u8 {
    match ast {
        Ast::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
        Ast::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
        Ast::Neg(_) => 3,
        Ast::Const(c) if c.is_sign_negative() => 3,
        Ast::Binary(BinOp::Pow, ..) => 4,
        Ast::Const(_) | Ast::Var(_) | Ast::Call(..) => 5,
    }
}

fn write_ast(f: &mut fmt::Formatter<'_>, ast: &Ast, vars: &[String], min: u8) -> fmt::Result {
    let p = prec(ast);
    if p < min {
        write!(f, "(")?;
    }
    match ast {
        Ast::Const(c) => write!(f, "{c:?}")?,
        Ast::Var(i) => write!(f, "{}", vars[*i])?,
        Ast::Neg(a) => {
            write!(f, "-")?;
            write_ast(f, a, vars, 3)?;
        }
        Ast::Binary(op, a, b) => {
            let (sym, lmin, rmin) = match op {
                BinOp::Add => ("+", 1, 2),
                BinOp::Sub => ("-", 1, 2),
                BinOp::Mul => ("*", 2, 3),
                BinOp::Div => ("/", 2, 3),
                BinOp::Pow => ("^", 5, 3),
            };
            write_ast(f, a, vars, lmin)?;
            write!(f, "{sym}")?;
            write_ast(f, b, vars, rmin)?;
        }
        Ast::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_ast(f, a, vars, 1)?;
            write!(f, ")")?;
        }
    }
    if p < min {
        write!(f, ")")?;
    }
    Ok(())
}

impl fmt::Display for CoefficientExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_ast(f, &self.ast, &self.vars, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse1(src: &str) -> CoefficientExpr {
        CoefficientExpr::parse_spatial(src, 1).unwrap()
    }

    #[test]
    fn polynomial_evaluates() {
        let e = parse1("1+x^2");
        assert_eq!(e.eval(&[2.0]).unwrap(), 5.0);
        assert_eq!(e.eval(&[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn sin_of_pi_over_two() {
        let e = parse1("sin(pi*x)");
        assert!((e.eval(&[0.5]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn incomplete_input_reports_offset() {
        match CoefficientExpr::parse_spatial("1+", 1) {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier_reports_name_and_offset() {
        match CoefficientExpr::parse_spatial("2*y", 1) {
            Err(Error::UnknownIdentifier { name, pos }) => {
                assert_eq!(name, "y");
                assert_eq!(pos, 2);
            }
            other => panic!("expected unknown identifier, got {other:?}"),
        }
    }

    #[test]
    fn arity_mismatch_reported() {
        match CoefficientExpr::parse_spatial("sin(x, 1)", 1) {
            Err(Error::Arity { name, expected, got, .. }) => {
                assert_eq!(name, "sin");
                assert_eq!(expected, 1);
                assert_eq!(got, 2);
            }
            other => panic!("expected arity error, got {other:?}"),
        }
        match CoefficientExpr::parse_spatial("exp()", 1) {
            Err(Error::Arity { got, .. }) => assert_eq!(got, 0),
            other => panic!("expected arity error, got {other:?}"),
        }
    }

    #[test]
    fn multi_dimensional_variables() {
        let e = CoefficientExpr::parse_spatial("x1*x2 - x3", 3).unwrap();
        assert_eq!(e.eval(&[2.0, 3.0, 1.0]).unwrap(), 5.0);
    }

    #[test]
    fn space_time_variables() {
        let e = CoefficientExpr::parse_space_time("t + x^2", 1).unwrap();
        assert_eq!(e.eval(&[0.5, 2.0]).unwrap(), 4.5);
    }

    #[test]
    fn x1_alias_in_dimension_one() {
        let e = parse1("x1+1");
        assert_eq!(e.eval(&[2.0]).unwrap(), 3.0);
    }

    #[test]
    fn nonfinite_result_is_an_error() {
        let e = parse1("1/x");
        assert!(matches!(e.eval(&[0.0]), Err(Error::Eval(_))));
        let e = parse1("log(x)");
        assert!(matches!(e.eval(&[-1.0]), Err(Error::Eval(_))));
        assert!(e.eval(&[1.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn precedence_matches_convention() {
        assert_eq!(parse1("2+3*4").eval(&[0.0]).unwrap(), 14.0);
        assert_eq!(parse1("2*3^2").eval(&[0.0]).unwrap(), 18.0);
        assert_eq!(parse1("-3^2").eval(&[0.0]).unwrap(), -9.0);
        assert_eq!(parse1("2^-1").eval(&[0.0]).unwrap(), 0.5);
        assert_eq!(parse1("2^3^2").eval(&[0.0]).unwrap(), 512.0);
        assert_eq!(parse1("6/3/2").eval(&[0.0]).unwrap(), 1.0);
        assert_eq!(parse1("1-2-3").eval(&[0.0]).unwrap(), -4.0);
    }

    #[test]
    fn constant_subtrees_fold_to_finite_values_only() {
        let e = parse1("2*3 + x");
        assert_eq!(e.ast(), &Ast::Binary(
            BinOp::Add,
            Box::new(Ast::Const(6.0)),
            Box::new(Ast::Var(0))
        ));
        // 1/0 stays unfolded and errors at eval
        let e = parse1("1/0");
        assert!(matches!(e.eval(&[0.0]), Err(Error::Eval(_))));
    }

    #[test]
    fn expressions_are_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<CoefficientExpr>();
    }

    #[test]
    fn pretty_print_round_trip_examples() {
        for src in [
            "1+x^2",
            "sin(pi*x)",
            "-(x+1)*x",
            "x/(1+x^2)",
            "2^-x",
            "-x^2",
            "(x^2)^3",
            "tanh(abs(x))-sqrt(x)",
            "1-2-x",
            "x--1",
        ] {
            let e = parse1(src);
            let printed = e.to_string();
            let re = parse1(&printed);
            assert_eq!(e.ast(), re.ast(), "round trip of `{src}` via `{printed}`");
        }
    }

    fn arb_ast(depth: u32) -> BoxedStrategy<Ast> {
        let leaf = prop_oneof![
            (-10.0f64..10.0).prop_map(Ast::Const),
            (0usize..2).prop_map(Ast::Var),
        ];
        leaf.prop_recursive(depth, 64, 2, |inner| {
            prop_oneof![
                (inner.clone()).prop_map(|a| Ast::Neg(Box::new(a))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Ast::Binary(op, Box::new(a), Box::new(b))),
                (
                    prop_oneof![
                        Just(Func::Sin),
                        Just(Func::Cos),
                        Just(Func::Exp),
                        Just(Func::Abs),
                        Just(Func::Tanh)
                    ],
                    inner
                )
                    .prop_map(|(f, a)| Ast::Call(f, Box::new(a))),
            ]
        })
        .boxed()
    }

    proptest! {
        #[test]
        fn print_parse_round_trip_is_identity(ast in arb_ast(5)) {
            let vars = vec!["x1".to_string(), "x2".to_string()];
            let parsed = CoefficientExpr {
                vars: vars.clone(),
                ast: fold(ast),
            };
            let printed = parsed.to_string();
            let reparsed = CoefficientExpr::parse_with_vars(&printed, &vars).unwrap();
            prop_assert_eq!(parsed.ast(), reparsed.ast(), "printed: {}", printed);
        }
    }
}

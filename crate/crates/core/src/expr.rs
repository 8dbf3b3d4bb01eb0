//! Arithmetic expression trees for model files.
//!
//! The grammar is fixed: `+ - * / ^` with `^` right-associative and binding
//! above unary minus, the six functions `sin cos tan exp log sqrt`, decimal
//! literals and identifiers. Juxtaposition is not multiplication; `2 q1` is a
//! syntax error. Parsed trees are immutable; evaluation is generic over
//! [`Scalar`] so the same tree serves plain and derivative-carrying values.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::hyperdual::Scalar;

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
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprAst {
    Const(f64),
    Var(String),
    Neg(Box<ExprAst>),
    Bin(BinOp, Box<ExprAst>, Box<ExprAst>),
    Call(Func, Box<ExprAst>),
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

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
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(_) => "number".into(),
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Caret => "'^'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            b'^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
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
                let value: f64 = text.parse().map_err(|_| Error::Parse {
                    offset: start,
                    message: format!("invalid number literal '{text}'"),
                })?;
                toks.push((Tok::Num(value), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                return Err(Error::Parse {
                    offset: i,
                    message: format!("unexpected character '{}'", src[i..].chars().next().unwrap()),
                })
            }
        }
    }
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|&(_, o)| o)
            .unwrap_or(self.end)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(Error::Parse {
                offset: self.offset(),
                message: format!("expected {what}, found {}", t.describe()),
            }),
            None => Err(Error::Parse {
                offset: self.end,
                message: format!("expected {what}, found end of input"),
            }),
        }
    }

    fn expr(&mut self) -> Result<ExprAst> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = ExprAst::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<ExprAst> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = ExprAst::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // factor := '-' factor | power; '^' binds above unary minus.
    fn factor(&mut self) -> Result<ExprAst> {
        if let Some(Tok::Minus) = self.peek() {
            self.bump();
            let inner = self.factor()?;
            return Ok(ExprAst::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprAst> {
        let base = self.atom()?;
        if let Some(Tok::Caret) = self.peek() {
            self.bump();
            // Right-associative; the exponent may carry its own unary minus.
            let exp = self.factor()?;
            return Ok(ExprAst::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<ExprAst> {
        match self.peek() {
            Some(Tok::Num(_)) => {
                if let Tok::Num(v) = self.bump() {
                    Ok(ExprAst::Const(v))
                } else {
                    unreachable!()
                }
            }
            Some(Tok::Ident(_)) => {
                let name = if let Tok::Ident(s) = self.bump() {
                    s
                } else {
                    unreachable!()
                };
                if let Some(Tok::LParen) = self.peek() {
                    let func = Func::from_name(&name).ok_or_else(|| Error::Parse {
                        offset: self.offset(),
                        message: format!("unknown function '{name}'"),
                    })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "')'")?;
                    Ok(ExprAst::Call(func, Box::new(arg)))
                } else {
                    Ok(ExprAst::Var(name))
                }
            }
            Some(Tok::LParen) => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Some(t) => Err(Error::Parse {
                offset: self.offset(),
                message: format!("expected expression, found {}", t.describe()),
            }),
            None => Err(Error::Parse {
                offset: self.end,
                message: "expected expression, found end of input".into(),
            }),
        }
    }
}

/// Parse a source string into an expression tree.
pub fn parse(source: &str) -> Result<ExprAst> {
    let toks = lex(source)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        end: source.len(),
    };
    let ast = p.expr()?;
    if p.pos != toks.len() {
        return Err(Error::Parse {
            offset: p.offset(),
            message: format!(
                "expected end of input, found {}",
                p.peek().unwrap().describe()
            ),
        });
    }
    Ok(ast)
}

// ---------------------------------------------------------------------------
// Canonical printer
// ---------------------------------------------------------------------------

// Precedence levels used for minimal parenthesisation. An operand is printed
// bare only when its own level is at least the level its position requires.
fn prec(ast: &ExprAst) -> u8 {
    match ast {
        ExprAst::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        ExprAst::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        ExprAst::Neg(_) => 3,
        ExprAst::Bin(BinOp::Pow, ..) => 4,
        ExprAst::Const(_) | ExprAst::Var(_) | ExprAst::Call(..) => 5,
    }
}

fn write_prec(ast: &ExprAst, min: u8, out: &mut String) {
    let own = prec(ast);
    let need_parens = own < min;
    if need_parens {
        out.push('(');
    }
    match ast {
        ExprAst::Const(v) => {
            if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                // Negative literals never come out of the parser; print them
                // as a negation so the round trip stays stable.
                out.push('-');
                out.push_str(&format!("{}", -v));
            } else {
                out.push_str(&format!("{v}"));
            }
        }
        ExprAst::Var(name) => out.push_str(name),
        ExprAst::Neg(inner) => {
            out.push('-');
            write_prec(inner, 3, out);
        }
        ExprAst::Bin(op, lhs, rhs) => {
            let (sym, lmin, rmin) = match op {
                BinOp::Add => ("+", 1, 2),
                BinOp::Sub => ("-", 1, 2),
                BinOp::Mul => ("*", 2, 3),
                BinOp::Div => ("/", 2, 3),
                // Right-associative; a parenthesised left operand keeps
                // x^y^z distinct from (x^y)^z.
                BinOp::Pow => ("^", 5, 3),
            };
            write_prec(lhs, lmin, out);
            out.push_str(sym);
            write_prec(rhs, rmin, out);
        }
        ExprAst::Call(func, arg) => {
            out.push_str(func.name());
            out.push('(');
            write_prec(arg, 0, out);
            out.push(')');
        }
    }
    if need_parens {
        out.push(')');
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_prec(self, 0, &mut s);
        f.write_str(&s)
    }
}

impl ExprAst {
    /// Names of all variables referenced by the tree, sorted and deduplicated.
    pub fn variables(&self) -> Vec<String> {
        fn walk(ast: &ExprAst, out: &mut Vec<String>) {
            match ast {
                ExprAst::Const(_) => {}
                ExprAst::Var(name) => out.push(name.clone()),
                ExprAst::Neg(inner) => walk(inner, out),
                ExprAst::Bin(_, lhs, rhs) => {
                    walk(lhs, out);
                    walk(rhs, out);
                }
                ExprAst::Call(_, arg) => walk(arg, out),
            }
        }
        let mut names = Vec::new();
        walk(self, &mut names);
        names.sort();
        names.dedup();
        names
    }
}

// ---------------------------------------------------------------------------
// Binding and evaluation
// ---------------------------------------------------------------------------

/// Map from variable names to dense slot indices plus named real parameters.
#[derive(Debug, Clone, Default)]
pub struct VariableBinding {
    slots: BTreeMap<String, usize>,
    params: BTreeMap<String, f64>,
}

impl VariableBinding {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from an ordered slot-name list; index i holds `names[i]`.
    pub fn from_slots<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut b = VariableBinding::new();
        for (i, name) in names.into_iter().enumerate() {
            b.add_slot(name.into(), i)?;
        }
        Ok(b)
    }

    pub fn add_slot(&mut self, name: String, index: usize) -> Result<()> {
        if self.slots.insert(name.clone(), index).is_some() {
            return Err(Error::Schema(format!("duplicate slot name '{name}'")));
        }
        Ok(())
    }

    pub fn add_param(&mut self, name: &str, value: f64) {
        self.params.insert(name.to_string(), value);
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.slots.get(name).copied()
    }

    /// Resolve every variable to a slot or an inlined parameter constant.
    /// Unknown names are rejected here, before any evaluation happens.
    pub fn bind(&self, ast: &ExprAst) -> Result<BoundExpr> {
        let node = self.bind_node(ast)?;
        Ok(BoundExpr { node })
    }

    fn bind_node(&self, ast: &ExprAst) -> Result<Node> {
        Ok(match ast {
            ExprAst::Const(v) => Node::Const(*v),
            ExprAst::Var(name) => {
                if let Some(&slot) = self.slots.get(name) {
                    Node::Slot(slot)
                } else if let Some(&v) = self.params.get(name) {
                    Node::Const(v)
                } else {
                    return Err(Error::UnboundVariable(name.clone()));
                }
            }
            ExprAst::Neg(inner) => Node::Neg(Box::new(self.bind_node(inner)?)),
            ExprAst::Bin(op, lhs, rhs) => Node::Bin(
                *op,
                Box::new(self.bind_node(lhs)?),
                Box::new(self.bind_node(rhs)?),
            ),
            ExprAst::Call(func, arg) => Node::Call(*func, Box::new(self.bind_node(arg)?)),
        })
    }
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Slot(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A slot-resolved expression ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct BoundExpr {
    node: Node,
}

impl BoundExpr {
    pub fn eval<S: Scalar>(&self, values: &[S]) -> Result<S> {
        eval_node(&self.node, values)
    }
}

fn eval_node<S: Scalar>(node: &Node, values: &[S]) -> Result<S> {
    Ok(match node {
        Node::Const(v) => S::from_real(*v),
        Node::Slot(i) => values[*i],
        Node::Neg(inner) => eval_node(inner, values)?.neg(),
        Node::Bin(op, lhs, rhs) => {
            let a = eval_node(lhs, values)?;
            let b = eval_node(rhs, values)?;
            match op {
                BinOp::Add => a.add(b),
                BinOp::Sub => a.sub(b),
                BinOp::Mul => a.mul(b),
                BinOp::Div => a.div(b)?,
                BinOp::Pow => a.pow(b)?,
            }
        }
        Node::Call(func, arg) => {
            let a = eval_node(arg, values)?;
            match func {
                Func::Sin => a.sin()?,
                Func::Cos => a.cos()?,
                Func::Tan => a.tan()?,
                Func::Exp => a.exp()?,
                Func::Log => a.ln()?,
                Func::Sqrt => a.sqrt()?,
            }
        }
    })
}

/// One-shot evaluation of a parsed tree under a binding.
pub fn evaluate<S: Scalar>(ast: &ExprAst, binding: &VariableBinding, values: &[S]) -> Result<S> {
    binding.bind(ast)?.eval(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperdual::HyperDual;

    fn var(name: &str) -> ExprAst {
        ExprAst::Var(name.into())
    }

    #[test]
    fn cosserat_constraint_shape() {
        // First rolling constraint of the rod model.
        let ast = parse("v1_1 + R*v3_1*v2_2").unwrap();
        let expected = ExprAst::Bin(
            BinOp::Add,
            Box::new(var("v1_1")),
            Box::new(ExprAst::Bin(
                BinOp::Mul,
                Box::new(ExprAst::Bin(
                    BinOp::Mul,
                    Box::new(var("R")),
                    Box::new(var("v3_1")),
                )),
                Box::new(var("v2_2")),
            )),
        );
        assert_eq!(ast, expected);
    }

    #[test]
    fn unary_minus_binds_below_pow() {
        let ast = parse("-q1^2").unwrap();
        let expected = ExprAst::Neg(Box::new(ExprAst::Bin(
            BinOp::Pow,
            Box::new(var("q1")),
            Box::new(ExprAst::Const(2.0)),
        )));
        assert_eq!(ast, expected);
    }

    #[test]
    fn pow_is_right_associative() {
        assert_eq!(parse("2^3^2").unwrap(), parse("2^(3^2)").unwrap());
        assert_ne!(parse("2^3^2").unwrap(), parse("(2^3)^2").unwrap());
    }

    #[test]
    fn truncated_call_reports_offset() {
        let err = parse("sin(").unwrap_err();
        match err {
            Error::Parse { offset, ref message } => {
                assert_eq!(offset, 4);
                assert!(message.contains("expected expression"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert_eq!(
            parse("sin(").unwrap_err().to_string(),
            "error at offset 4: expected expression, found end of input"
        );
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(parse(""), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn unbalanced_parens_rejected() {
        assert!(parse("(1+2").is_err());
        assert!(parse("1+2)").is_err());
    }

    #[test]
    fn juxtaposition_rejected() {
        assert!(parse("2 q1").is_err());
        assert!(parse("q1 q2").is_err());
    }

    #[test]
    fn evaluates_arithmetic() {
        let binding = VariableBinding::from_slots(["v1_1", "v2_1"]).unwrap();
        let ast = parse("0.5*(v1_1^2 + v2_1^2)").unwrap();
        let v = evaluate(&ast, &binding, &[3.0, 4.0]).unwrap();
        assert_eq!(v, 12.5);
    }

    #[test]
    fn evaluates_with_parameter() {
        let mut binding = VariableBinding::from_slots(["v1_1", "v3_1", "v2_2"]).unwrap();
        binding.add_param("R", 2.0);
        let ast = parse("v1_1 + R*v3_1*v2_2").unwrap();
        let v = evaluate(&ast, &binding, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(v, 13.0);
    }

    #[test]
    fn hyperdual_identity_passes_through() {
        let binding = VariableBinding::from_slots(["q1"]).unwrap();
        let ast = parse("q1").unwrap();
        let v = evaluate(&ast, &binding, &[HyperDual::seeded(5.0, 1.0, 0.0)]).unwrap();
        assert_eq!(v, HyperDual::new(5.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn unbound_variable_reports_name() {
        let binding = VariableBinding::from_slots(["q1"]).unwrap();
        let ast = parse("q1 + bogus").unwrap();
        match evaluate(&ast, &binding, &[1.0]) {
            Err(Error::UnboundVariable(name)) => assert_eq!(name, "bogus"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn real_eval_equals_hyperdual_real_part() {
        let mut binding = VariableBinding::from_slots(["q1", "v1_1"]).unwrap();
        binding.add_param("k", 0.7);
        let srcs = [
            "sin(q1)*exp(v1_1) - k/(1+q1^2)",
            "sqrt(q1^2 + v1_1^2) + tan(k*q1)",
            "log(2+q1) - v1_1^3/(k+1)",
        ];
        for src in srcs {
            let ast = parse(src).unwrap();
            let real = evaluate(&ast, &binding, &[0.4, -1.2]).unwrap();
            let dual = evaluate(
                &ast,
                &binding,
                &[HyperDual::seeded(0.4, 1.0, 0.0), HyperDual::seeded(-1.2, 0.0, 1.0)],
            )
            .unwrap();
            assert_eq!(real, dual.re);
        }
    }

    #[test]
    fn printer_round_trips_fixtures() {
        let srca = [
            "v1_1 + R*v3_1*v2_2",
            "-q1^2",
            "0.5*(v1_1^2+v2_1^2)",
            "q1 - (q2 - q3)",
            "q1/(q2*q3)",
            "(-q1)^2",
            "2^-3",
            "sin(q1)^2 + cos(q1)^2",
            "-(q1*q2)",
            "q6*(q4 - v1_2)",
        ];
        for src in srca {
            let ast = parse(src).unwrap();
            let printed = ast.to_string();
            let reparsed = parse(&printed)
                .unwrap_or_else(|e| panic!("reprint of {src} -> {printed}: {e}"));
            assert_eq!(ast, reparsed, "{src} -> {printed}");
            // Printing is idempotent on its own output.
            assert_eq!(printed, reparsed.to_string());
        }
    }

    mod prop {
        use super::*;
        use proptest::prelude::*;

        fn arb_expr() -> impl Strategy<Value = ExprAst> {
            let leaf = prop_oneof![
                (0u32..1000, 0u32..100).prop_map(|(a, b)| ExprAst::Const(a as f64 + b as f64 / 100.0)),
                prop_oneof![
                    Just("q1".to_string()),
                    Just("q2".to_string()),
                    Just("v1_1".to_string()),
                    Just("v2_1".to_string()),
                ]
                .prop_map(ExprAst::Var),
            ];
            leaf.prop_recursive(5, 64, 3, |inner| {
                prop_oneof![
                    inner.clone().prop_map(|e| ExprAst::Neg(Box::new(e))),
                    (inner.clone(), inner.clone(), 0usize..5).prop_map(|(a, b, op)| {
                        let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow][op];
                        ExprAst::Bin(op, Box::new(a), Box::new(b))
                    }),
                    (inner, 0usize..6).prop_map(|(a, f)| {
                        let f = [Func::Sin, Func::Cos, Func::Tan, Func::Exp, Func::Log, Func::Sqrt][f];
                        ExprAst::Call(f, Box::new(a))
                    }),
                ]
            })
        }

        proptest! {
            // parse . print is the identity on every printable tree.
            #[test]
            fn print_parse_round_trip(ast in arb_expr()) {
                let printed = ast.to_string();
                let reparsed = parse(&printed).unwrap();
                prop_assert_eq!(&ast, &reparsed);
                prop_assert_eq!(printed, reparsed.to_string());
            }

            // Real evaluation always equals the real part of the hyperdual
            // evaluation, including agreement on which inputs are errors.
            #[test]
            fn real_matches_hyperdual(ast in arb_expr(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
                let binding = VariableBinding::from_slots(["q1", "q2", "v1_1", "v2_1"]).unwrap();
                let real = evaluate(&ast, &binding, &[x, y, 0.5, -0.5]);
                let dual = evaluate(&ast, &binding, &[
                    HyperDual::seeded(x, 1.0, 0.0),
                    HyperDual::seeded(y, 0.0, 1.0),
                    HyperDual::constant(0.5),
                    HyperDual::constant(-0.5),
                ]);
                match (real, dual) {
                    (Ok(r), Ok(d)) => {
                        let same = r == d.re || (r.is_nan() && d.re.is_nan());
                        prop_assert!(same, "real {} != hyperdual real part {}", r, d.re);
                    }
                    (Err(_), Err(_)) => {}
                    (r, d) => prop_assert!(false, "divergent outcomes {:?} vs {:?}", r, d.map(|v| v.re)),
                }
            }
        }
    }
}

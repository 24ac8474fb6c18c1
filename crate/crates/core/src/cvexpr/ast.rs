//! Arena expression graph. Children always precede their parents, so a
//! single forward sweep evaluates and a single backward sweep differentiates.

use std::fmt::Write;

use crate::vde::sigmoid;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    /// `1 / (1 + exp(-u))`
    Sig,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sig => "sig",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sig" => Some(Func::Sig),
            _ => None,
        }
    }

    fn eval(self, u: f64) -> f64 {
        match self {
            Func::Sin => u.sin(),
            Func::Cos => u.cos(),
            Func::Exp => u.exp(),
            Func::Sig => sigmoid(u),
        }
    }

    /// Derivative given the argument and the function value.
    fn derivative(self, u: f64, value: f64) -> f64 {
        match self {
            Func::Sin => u.cos(),
            Func::Cos => -u.sin(),
            Func::Exp => value,
            Func::Sig => value * (1.0 - value),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Neg(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Call(Func, NodeId),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Expr {
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalFlags {
    pub division_by_zero: bool,
}

impl Expr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn num(&mut self, v: f64) -> NodeId {
        self.push(Node::Num(v))
    }

    pub fn var(&mut self, i: usize) -> NodeId {
        self.push(Node::Var(i))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Node::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Node::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Node::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Node::Div(a, b))
    }

    pub fn call(&mut self, f: Func, a: NodeId) -> NodeId {
        self.push(Node::Call(f, a))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Node::Neg(a))
    }

    /// The last pushed node is the root.
    pub fn root(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// One more than the largest variable index used.
    pub fn n_vars(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Var(i) => Some(i + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    fn values(&self, x: &[f64], flags: &mut EvalFlags) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let val = match *n {
                Node::Num(c) => c,
                Node::Var(i) => x[i],
                Node::Neg(a) => -v[a],
                Node::Add(a, b) => v[a] + v[b],
                Node::Sub(a, b) => v[a] - v[b],
                Node::Mul(a, b) => v[a] * v[b],
                Node::Div(a, b) => {
                    if v[b] == 0.0 {
                        flags.division_by_zero = true;
                    }
                    v[a] / v[b]
                }
                Node::Call(f, a) => f.eval(v[a]),
            };
            v.push(val);
        }
        v
    }

    /// IEEE evaluation; panics if `x` is shorter than [`Expr::n_vars`].
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_checked(x).0
    }

    pub fn eval_checked(&self, x: &[f64]) -> (f64, EvalFlags) {
        let mut flags = EvalFlags::default();
        let v = self.values(x, &mut flags);
        (v[self.root()], flags)
    }

    /// Exact gradient w.r.t. the first `x.len()` variables (reverse sweep).
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut flags = EvalFlags::default();
        let v = self.values(x, &mut flags);
        let mut adj = vec![0.0; self.nodes.len()];
        let mut g = vec![0.0; x.len()];
        adj[self.root()] = 1.0;
        for (id, n) in self.nodes.iter().enumerate().rev() {
            let a_bar = adj[id];
            if a_bar == 0.0 {
                continue;
            }
            match *n {
                Node::Num(_) => {}
                Node::Var(i) => g[i] += a_bar,
                Node::Neg(a) => adj[a] -= a_bar,
                Node::Add(a, b) => {
                    adj[a] += a_bar;
                    adj[b] += a_bar;
                }
                Node::Sub(a, b) => {
                    adj[a] += a_bar;
                    adj[b] -= a_bar;
                }
                Node::Mul(a, b) => {
                    adj[a] += a_bar * v[b];
                    adj[b] += a_bar * v[a];
                }
                Node::Div(a, b) => {
                    adj[a] += a_bar / v[b];
                    adj[b] -= a_bar * v[a] / (v[b] * v[b]);
                }
                Node::Call(f, a) => adj[a] += a_bar * f.derivative(v[a], v[id]),
            }
        }
        g
    }

    /// Fully parenthesized text; shared subgraphs are written out at every use.
    pub fn to_text(&self) -> String {
        self.to_text_from(self.root())
    }

    pub fn to_text_from(&self, id: NodeId) -> String {
        let mut out = String::new();
        self.write_node(id, &mut out);
        out
    }

    fn write_node(&self, id: NodeId, out: &mut String) {
        match self.nodes[id] {
            Node::Num(c) => {
                let s = format_literal(c.abs());
                if c.is_sign_negative() {
                    let _ = write!(out, "(-{s})");
                } else {
                    out.push_str(&s);
                }
            }
            Node::Var(i) => {
                let _ = write!(out, "x{i}");
            }
            Node::Neg(a) => {
                out.push_str("(-");
                self.write_node(a, out);
                out.push(')');
            }
            Node::Add(a, b) => self.write_binary(a, '+', b, out),
            Node::Sub(a, b) => self.write_binary(a, '-', b, out),
            Node::Mul(a, b) => self.write_binary(a, '*', b, out),
            Node::Div(a, b) => self.write_binary(a, '/', b, out),
            Node::Call(f, a) => {
                out.push_str(f.name());
                out.push('(');
                self.write_node(a, out);
                out.push(')');
            }
        }
    }

    fn write_binary(&self, a: NodeId, op: char, b: NodeId, out: &mut String) {
        out.push('(');
        self.write_node(a, out);
        out.push(op);
        self.write_node(b, out);
        out.push(')');
    }
}

/// Shortest round-trip decimal (at most 17 significant digits), without a
/// trailing `.0` for integers.
pub fn format_literal(v: f64) -> String {
    let s = format!("{v:?}");
    match s.strip_suffix(".0") {
        Some(t) => t.to_string(),
        None => s,
    }
}

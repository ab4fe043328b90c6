//! Expression trees over a small operator basis.
//!
//! A tree is built from operator nodes, variable leaves (`x0`, `x1`, ...
//! indexing feature columns), named parameter leaves (`th0`, `th1`, ...)
//! and frozen decimal constants. Trees are immutable once built; the
//! structural quantities every score needs (distinct parameter count,
//! per-operator counts, depth) are computed once at construction.

mod eval;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use eval::{evaluate, Program, Workspace};
pub use parse::parse_expression;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operator {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
    Neg,
}

impl Operator {
    pub const ALL: [Operator; 12] = [
        Operator::Add,
        Operator::Sub,
        Operator::Mul,
        Operator::Div,
        Operator::Pow,
        Operator::Exp,
        Operator::Log,
        Operator::Sin,
        Operator::Cos,
        Operator::Sqrt,
        Operator::Abs,
        Operator::Neg,
    ];

    /// Basis used when a run does not configure one.
    pub const DEFAULT_BASIS: [Operator; 10] = [
        Operator::Add,
        Operator::Sub,
        Operator::Mul,
        Operator::Div,
        Operator::Pow,
        Operator::Exp,
        Operator::Log,
        Operator::Sin,
        Operator::Cos,
        Operator::Sqrt,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Operator::Add => "+",
            Operator::Sub => "-",
            Operator::Mul => "*",
            Operator::Div => "/",
            Operator::Pow => "pow",
            Operator::Exp => "exp",
            Operator::Log => "log",
            Operator::Sin => "sin",
            Operator::Cos => "cos",
            Operator::Sqrt => "sqrt",
            Operator::Abs => "abs",
            Operator::Neg => "neg",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Operator> {
        Some(match s {
            "+" => Operator::Add,
            "-" | "\u{2212}" => Operator::Sub,
            "*" | "\u{d7}" => Operator::Mul,
            "/" => Operator::Div,
            "pow" => Operator::Pow,
            "exp" => Operator::Exp,
            "log" => Operator::Log,
            "sin" => Operator::Sin,
            "cos" => Operator::Cos,
            "sqrt" => Operator::Sqrt,
            "abs" => Operator::Abs,
            "neg" => Operator::Neg,
            _ => return None,
        })
    }

    pub fn arity(self) -> usize {
        match self {
            Operator::Add | Operator::Sub | Operator::Mul | Operator::Div | Operator::Pow => 2,
            _ => 1,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Infix operators print as `(a op b)`; the rest print as calls.
    pub fn is_infix(self) -> bool {
        matches!(self, Operator::Add | Operator::Sub | Operator::Mul | Operator::Div)
    }

    #[inline]
    pub fn apply1(self, a: f64) -> f64 {
        match self {
            Operator::Exp => a.exp(),
            Operator::Log => a.ln(),
            Operator::Sin => a.sin(),
            Operator::Cos => a.cos(),
            Operator::Sqrt => a.sqrt(),
            Operator::Abs => a.abs(),
            Operator::Neg => -a,
            _ => f64::NAN,
        }
    }

    #[inline]
    pub fn apply2(self, a: f64, b: f64) -> f64 {
        match self {
            Operator::Add => a + b,
            Operator::Sub => a - b,
            Operator::Mul => a * b,
            Operator::Div => a / b,
            Operator::Pow => a.powf(b),
            _ => f64::NAN,
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl Serialize for Operator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.symbol())
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Operator::from_symbol(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown operator `{s}`")))
    }
}

/// Per-operator occurrence counts `n_o` of one tree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct OpCounts([u32; 12]);

impl OpCounts {
    pub fn get(&self, op: Operator) -> u32 {
        self.0[op.index()]
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Operators with a non-zero count, in declaration order.
    pub fn nonzero(&self) -> impl Iterator<Item = (Operator, u32)> + '_ {
        Operator::ALL
            .iter()
            .map(move |&op| (op, self.get(op)))
            .filter(|&(_, n)| n > 0)
    }

    fn bump(&mut self, op: Operator) {
        self.0[op.index()] += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Var(usize),
    Param(u32),
    Const(f64),
    Unary(Operator, Box<Node>),
    Binary(Operator, Box<Node>, Box<Node>),
}

impl Node {
    pub fn unary(op: Operator, a: Node) -> Node {
        debug_assert_eq!(op.arity(), 1);
        Node::Unary(op, Box::new(a))
    }

    pub fn binary(op: Operator, a: Node, b: Node) -> Node {
        debug_assert_eq!(op.arity(), 2);
        Node::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Var(_) | Node::Param(_) | Node::Const(_))
    }

    pub fn operator(&self) -> Option<Operator> {
        match self {
            Node::Unary(op, _) | Node::Binary(op, _, _) => Some(*op),
            _ => None,
        }
    }

    /// Leaves have depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Node::Unary(_, a) => 1 + a.depth(),
            Node::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
            _ => 0,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Node::Unary(_, a) => 1 + a.size(),
            Node::Binary(_, a, b) => 1 + a.size() + b.size(),
            _ => 1,
        }
    }

    pub fn children(&self) -> Vec<&Node> {
        match self {
            Node::Unary(_, a) => vec![a],
            Node::Binary(_, a, b) => vec![a, b],
            _ => Vec::new(),
        }
    }

    /// Pre-order traversal; leaves are visited left to right.
    pub fn preorder(&self) -> Vec<&Node> {
        let mut out = Vec::with_capacity(8);
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            match n {
                Node::Unary(_, a) => stack.push(a),
                Node::Binary(_, a, b) => {
                    stack.push(b);
                    stack.push(a);
                }
                _ => {}
            }
        }
        out
    }

    /// Pre-order traversal paired with each node's depth below the root.
    pub fn preorder_with_depth(&self) -> Vec<(&Node, usize)> {
        let mut out = Vec::with_capacity(8);
        let mut stack = vec![(self, 0)];
        while let Some((n, d)) = stack.pop() {
            out.push((n, d));
            match n {
                Node::Unary(_, a) => stack.push((a, d + 1)),
                Node::Binary(_, a, b) => {
                    stack.push((b, d + 1));
                    stack.push((a, d + 1));
                }
                _ => {}
            }
        }
        out
    }

    /// Returns a copy with the subtree at pre-order position `index` replaced.
    pub fn replace_at(&self, index: usize, replacement: &Node) -> Node {
        fn go(node: &Node, target: usize, next: &mut usize, rep: &Node) -> Node {
            let here = *next;
            *next += 1;
            if here == target {
                // Skip the counter past the replaced subtree.
                *next += node.size() - 1;
                return rep.clone();
            }
            match node {
                Node::Unary(op, a) => Node::Unary(*op, Box::new(go(a, target, next, rep))),
                Node::Binary(op, a, b) => {
                    let a = go(a, target, next, rep);
                    let b = go(b, target, next, rep);
                    Node::Binary(*op, Box::new(a), Box::new(b))
                }
                leaf => leaf.clone(),
            }
        }
        let mut next = 0;
        go(self, index, &mut next, replacement)
    }

    /// Structural equality treating every parameter leaf as interchangeable.
    pub fn same_shape(&self, other: &Node) -> bool {
        match (self, other) {
            (Node::Param(_), Node::Param(_)) => true,
            (Node::Var(a), Node::Var(b)) => a == b,
            (Node::Const(a), Node::Const(b)) => a.to_bits() == b.to_bits(),
            (Node::Unary(o1, a1), Node::Unary(o2, a2)) => o1 == o2 && a1.same_shape(a2),
            (Node::Binary(o1, a1, b1), Node::Binary(o2, a2, b2)) => {
                o1 == o2 && a1.same_shape(a2) && b1.same_shape(b2)
            }
            _ => false,
        }
    }

    fn map_params(&self, f: &mut impl FnMut(u32) -> u32) -> Node {
        match self {
            Node::Param(p) => Node::Param(f(*p)),
            Node::Unary(op, a) => Node::Unary(*op, Box::new(a.map_params(f))),
            Node::Binary(op, a, b) => {
                let a = a.map_params(f);
                let b = b.map_params(f);
                Node::Binary(*op, Box::new(a), Box::new(b))
            }
            leaf => leaf.clone(),
        }
    }

    fn write_to(&self, out: &mut String) {
        use std::fmt::Write;
        match self {
            Node::Var(i) => {
                let _ = write!(out, "x{i}");
            }
            Node::Param(p) => {
                let _ = write!(out, "th{p}");
            }
            Node::Const(v) => {
                let _ = write!(out, "{v}");
            }
            Node::Unary(op, a) => {
                out.push_str(op.symbol());
                out.push('(');
                a.write_to(out);
                out.push(')');
            }
            Node::Binary(op, a, b) if op.is_infix() => {
                out.push('(');
                a.write_to(out);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                b.write_to(out);
                out.push(')');
            }
            Node::Binary(op, a, b) => {
                out.push_str(op.symbol());
                out.push('(');
                a.write_to(out);
                out.push_str(", ");
                b.write_to(out);
                out.push(')');
            }
        }
    }
}

/// Canonical identifier of a tree's structure, invariant under renaming of
/// its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signature(String);

impl Signature {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// 64-bit FNV-1a digest; stable across platforms and toolchains.
    pub fn digest(&self) -> u64 {
        fnv1a(self.0.as_bytes())
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct ExprTree {
    root: Node,
    params: Vec<u32>,
    op_counts: OpCounts,
    depth: usize,
    n_vars: usize,
    size: usize,
}

impl PartialEq for ExprTree {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl ExprTree {
    pub fn new(root: Node) -> ExprTree {
        let mut params = Vec::new();
        let mut op_counts = OpCounts::default();
        let mut n_vars = 0;
        let mut size = 0;
        for node in root.preorder() {
            size += 1;
            match node {
                Node::Param(p) => params.push(*p),
                Node::Var(i) => n_vars = n_vars.max(i + 1),
                Node::Unary(op, _) | Node::Binary(op, _, _) => op_counts.bump(*op),
                Node::Const(_) => {}
            }
        }
        params.sort_unstable();
        params.dedup();
        let depth = root.depth();
        ExprTree { root, params, op_counts, depth, n_vars, size }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn into_root(self) -> Node {
        self.root
    }

    /// Distinct parameter names, ascending.
    pub fn params(&self) -> &[u32] {
        &self.params
    }

    /// `k`: the number of distinct parameters.
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn op_counts(&self) -> &OpCounts {
        &self.op_counts
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// One past the largest variable index referenced (0 if none).
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn operators(&self) -> impl Iterator<Item = Operator> + '_ {
        self.op_counts.nonzero().map(|(op, _)| op)
    }

    /// Renames parameters to `th0, th1, ...` in order of first appearance.
    /// The returned vector maps each new index to the original name.
    pub fn canonical(&self) -> (ExprTree, Vec<u32>) {
        let mut order: Vec<u32> = Vec::new();
        let root = self.root.map_params(&mut |p| match order.iter().position(|&q| q == p) {
            Some(i) => i as u32,
            None => {
                order.push(p);
                (order.len() - 1) as u32
            }
        });
        (ExprTree::new(root), order)
    }

    /// Gives every parameter leaf its own name, `th0, th1, ...` left to right.
    pub fn with_fresh_params(&self) -> ExprTree {
        let mut next = 0u32;
        let root = self.root.map_params(&mut |_| {
            next += 1;
            next - 1
        });
        ExprTree::new(root)
    }

    pub fn signature(&self) -> Signature {
        let (canon, _) = self.canonical();
        Signature(canon.to_string())
    }

    /// Checks every variable index against the data width.
    pub fn check_vars(&self, n_features: usize) -> Result<()> {
        if self.n_vars > n_features {
            return Err(Error::VariableOutOfRange { index: self.n_vars - 1, n_features });
        }
        Ok(())
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.root.write_to(&mut s);
        f.write_str(&s)
    }
}

/// Canonical fully parenthesized form; `parse_expression` inverts it.
pub fn print_expression(tree: &ExprTree) -> String {
    tree.to_string()
}

impl Serialize for ExprTree {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ExprTree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_expression(&s, usize::MAX).map_err(serde::de::Error::custom)
    }
}

/// Parameter values keyed by parameter name, plus the noise scale `sigma`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamVector {
    values: BTreeMap<u32, f64>,
    pub sigma: f64,
}

impl ParamVector {
    pub fn new() -> ParamVector {
        ParamVector::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> ParamVector {
        ParamVector { values: pairs.into_iter().collect(), sigma: 0.0 }
    }

    /// Values for `tree.params()` in order.
    pub fn for_tree(tree: &ExprTree, theta: &[f64], sigma: f64) -> ParamVector {
        debug_assert_eq!(tree.params().len(), theta.len());
        ParamVector {
            values: tree.params().iter().copied().zip(theta.iter().copied()).collect(),
            sigma,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> ParamVector {
        self.sigma = sigma;
        self
    }

    pub fn get(&self, name: u32) -> Option<f64> {
        self.values.get(&name).copied()
    }

    pub fn insert(&mut self, name: u32, value: f64) {
        self.values.insert(name, value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.values.iter().map(|(&k, &v)| (k, v))
    }

    /// Values ordered as `tree.params()`; errors on the first missing name.
    pub fn slice_for(&self, tree: &ExprTree) -> Result<Vec<f64>> {
        tree.params()
            .iter()
            .map(|&p| self.get(p).ok_or(Error::MissingParameter(p)))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ParamVectorRepr {
    #[serde(default)]
    theta: BTreeMap<String, f64>,
    #[serde(default)]
    sigma: f64,
}

impl Serialize for ParamVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamVectorRepr {
            theta: self.values.iter().map(|(k, v)| (format!("th{k}"), *v)).collect(),
            sigma: self.sigma,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ParamVectorRepr::deserialize(d)?;
        let mut values = BTreeMap::new();
        for (k, v) in repr.theta {
            let id = parse_param_name(&k)
                .ok_or_else(|| serde::de::Error::custom(format!("bad parameter name `{k}`")))?;
            values.insert(id, v);
        }
        Ok(ParamVector { values, sigma: repr.sigma })
    }
}

/// `th12` -> 12.
pub fn parse_param_name(s: &str) -> Option<u32> {
    let digits = s.strip_prefix("th")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

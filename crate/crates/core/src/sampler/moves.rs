//! Proposal moves over expression trees.
//!
//! Sampler states are trees whose parameter leaves are all distinct, so a
//! state is determined by its shape, operator labels and leaf kinds. Each
//! move comes with an exact proposal probability `q(from -> to)`, computed
//! by enumerating every way the move could turn `from` into `to`; the
//! Metropolis–Hastings correction is the log ratio of the two directions.
//!
//! * relabel: swap one operator for another of the same arity;
//! * prune-and-graft: replace a uniformly chosen subtree by a freshly grown one;
//! * root flip: wrap the root in a new operator (binary wraps add a leaf
//!   sibling) or strip a root operator whose discarded child is a leaf;
//! * leaf swap: turn a variable leaf into a parameter or vice versa.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{ExprTree, Node, Operator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Relabel,
    PruneGraft,
    RootFlip,
    LeafSwap,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] =
        [MoveKind::Relabel, MoveKind::PruneGraft, MoveKind::RootFlip, MoveKind::LeafSwap];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// The space of trees a sampler explores and the distribution used to grow
/// random subtrees.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub basis: Vec<Operator>,
    pub n_features: usize,
    pub max_depth: usize,
    /// Probability that growth stops at a leaf while depth remains.
    pub leaf_prob: f64,
    /// Probability that a grown leaf is a variable rather than a parameter.
    pub var_prob: f64,
}

impl Grammar {
    fn var_prob(&self) -> f64 {
        if self.n_features == 0 {
            0.0
        } else {
            self.var_prob
        }
    }

    fn in_basis(&self, op: Operator) -> bool {
        self.basis.contains(&op)
    }

    /// Probability of drawing this particular leaf.
    pub fn leaf_kind_prob(&self, leaf: &Node) -> f64 {
        match leaf {
            Node::Var(i) if *i < self.n_features => self.var_prob() / self.n_features as f64,
            Node::Param(_) => 1.0 - self.var_prob(),
            _ => 0.0,
        }
    }

    pub fn draw_leaf<R: Rng + ?Sized>(&self, rng: &mut R) -> Node {
        if rng.random::<f64>() < self.var_prob() {
            Node::Var(rng.random_range(0..self.n_features))
        } else {
            Node::Param(0)
        }
    }

    /// Grows a random subtree of depth at most `budget`.
    pub fn grow<R: Rng + ?Sized>(&self, budget: usize, rng: &mut R) -> Node {
        if budget == 0 || self.basis.is_empty() || rng.random::<f64>() < self.leaf_prob {
            return self.draw_leaf(rng);
        }
        let op = self.basis[rng.random_range(0..self.basis.len())];
        if op.arity() == 1 {
            Node::unary(op, self.grow(budget - 1, rng))
        } else {
            let a = self.grow(budget - 1, rng);
            let b = self.grow(budget - 1, rng);
            Node::binary(op, a, b)
        }
    }

    /// Probability that `grow(budget)` yields `node` (up to parameter names).
    pub fn growth_prob(&self, node: &Node, budget: usize) -> f64 {
        if node.is_leaf() {
            let p = self.leaf_kind_prob(node);
            return if budget == 0 || self.basis.is_empty() { p } else { self.leaf_prob * p };
        }
        let op = node.operator().expect("internal node");
        if budget == 0 || !self.in_basis(op) {
            return 0.0;
        }
        let here = (1.0 - self.leaf_prob) / self.basis.len() as f64;
        node.children()
            .into_iter()
            .fold(here, |acc, c| acc * self.growth_prob(c, budget - 1))
    }

    fn alternatives(&self, op: Operator) -> usize {
        self.basis.iter().filter(|&&o| o != op && o.arity() == op.arity()).count()
    }
}

/// Draws a candidate for `kind`. Returns the candidate and
/// `ln q(candidate -> tree) - ln q(tree -> candidate)`, or `None` when the
/// move has nothing to act on or would leave the grammar.
pub fn propose<R: Rng + ?Sized>(
    tree: &ExprTree,
    kind: MoveKind,
    grammar: &Grammar,
    rng: &mut R,
) -> Option<(ExprTree, f64)> {
    let root = tree.root();
    let candidate = match kind {
        MoveKind::Relabel => {
            let internal: Vec<(usize, Operator)> = root
                .preorder()
                .into_iter()
                .enumerate()
                .filter_map(|(i, n)| n.operator().map(|op| (i, op)))
                .collect();
            if internal.is_empty() {
                return None;
            }
            let (idx, op) = internal[rng.random_range(0..internal.len())];
            let alts: Vec<Operator> = grammar
                .basis
                .iter()
                .copied()
                .filter(|&o| o != op && o.arity() == op.arity())
                .collect();
            if alts.is_empty() {
                return None;
            }
            let new_op = alts[rng.random_range(0..alts.len())];
            let node = root.preorder()[idx];
            let relabeled = match node {
                Node::Unary(_, a) => Node::Unary(new_op, a.clone()),
                Node::Binary(_, a, b) => Node::Binary(new_op, a.clone(), b.clone()),
                _ => unreachable!("internal node"),
            };
            root.replace_at(idx, &relabeled)
        }
        MoveKind::PruneGraft => {
            let nodes = root.preorder_with_depth();
            let (idx, (_, depth)) =
                nodes.iter().enumerate().nth(rng.random_range(0..nodes.len()))?;
            let budget = grammar.max_depth.checked_sub(*depth)?;
            let grown = grammar.grow(budget, rng);
            root.replace_at(idx, &grown)
        }
        MoveKind::RootFlip => {
            if rng.random::<bool>() {
                if tree.depth() + 1 > grammar.max_depth || grammar.basis.is_empty() {
                    return None;
                }
                let op = grammar.basis[rng.random_range(0..grammar.basis.len())];
                if op.arity() == 1 {
                    Node::unary(op, root.clone())
                } else {
                    let leaf = grammar.draw_leaf(rng);
                    if rng.random::<bool>() {
                        Node::binary(op, root.clone(), leaf)
                    } else {
                        Node::binary(op, leaf, root.clone())
                    }
                }
            } else {
                match root {
                    Node::Unary(_, a) => (**a).clone(),
                    Node::Binary(_, a, b) => {
                        let (keep, drop) = if rng.random::<bool>() { (a, b) } else { (b, a) };
                        if !matches!(**drop, Node::Var(_) | Node::Param(_)) {
                            return None;
                        }
                        (**keep).clone()
                    }
                    _ => return None,
                }
            }
        }
        MoveKind::LeafSwap => {
            let leaves: Vec<(usize, &Node)> = root
                .preorder()
                .into_iter()
                .enumerate()
                .filter(|(_, n)| matches!(n, Node::Var(_) | Node::Param(_)))
                .collect();
            if leaves.is_empty() {
                return None;
            }
            let (idx, leaf) = leaves[rng.random_range(0..leaves.len())];
            let swapped = match leaf {
                Node::Var(_) => Node::Param(0),
                _ if grammar.n_features == 0 => return None,
                _ => Node::Var(rng.random_range(0..grammar.n_features)),
            };
            root.replace_at(idx, &swapped)
        }
    };
    let candidate = ExprTree::new(candidate).with_fresh_params();
    if candidate.depth() > grammar.max_depth {
        return None;
    }
    let forward = proposal_prob(kind, tree.root(), candidate.root(), grammar);
    let backward = proposal_prob(kind, candidate.root(), tree.root(), grammar);
    if !(forward > 0.0) || !(backward > 0.0) {
        return None;
    }
    Some((candidate, backward.ln() - forward.ln()))
}

/// Exact probability that `propose(from, kind)` returns `to`.
pub fn proposal_prob(kind: MoveKind, from: &Node, to: &Node, grammar: &Grammar) -> f64 {
    match kind {
        MoveKind::Relabel => relabel_prob(from, to, grammar),
        MoveKind::PruneGraft => graft_sum(from, to, 0, grammar) / from.size() as f64,
        MoveKind::RootFlip => root_flip_prob(from, to, grammar),
        MoveKind::LeafSwap => leaf_swap_prob(from, to, grammar),
    }
}

fn relabel_prob(from: &Node, to: &Node, grammar: &Grammar) -> f64 {
    /// Finds the single operator label where `a` and `b` differ.
    fn diff(a: &Node, b: &Node, found: &mut Option<(Operator, Operator)>) -> bool {
        match (a, b) {
            (Node::Unary(o1, a1), Node::Unary(o2, b1)) => {
                if o1 != o2 {
                    if found.is_some() {
                        return false;
                    }
                    *found = Some((*o1, *o2));
                }
                diff(a1, b1, found)
            }
            (Node::Binary(o1, a1, a2), Node::Binary(o2, b1, b2)) => {
                if o1 != o2 {
                    if found.is_some() {
                        return false;
                    }
                    *found = Some((*o1, *o2));
                }
                diff(a1, b1, found) && diff(a2, b2, found)
            }
            (a, b) if a.is_leaf() && b.is_leaf() => a.same_shape(b),
            _ => false,
        }
    }
    let mut found = None;
    if !diff(from, to, &mut found) {
        return 0.0;
    }
    let Some((old, new)) = found else { return 0.0 };
    if !grammar.in_basis(new) {
        return 0.0;
    }
    let n_internal = from.preorder().iter().filter(|n| !n.is_leaf()).count();
    1.0 / n_internal as f64 / grammar.alternatives(old) as f64
}

/// Sum over positions `v` where replacing the subtree of `a` at `v` can give
/// `b`, of the growth probability of `b`'s subtree at `v`.
fn graft_sum(a: &Node, b: &Node, depth: usize, grammar: &Grammar) -> f64 {
    let mut total = match grammar.max_depth.checked_sub(depth) {
        Some(budget) => grammar.growth_prob(b, budget),
        None => 0.0,
    };
    match (a, b) {
        (Node::Unary(o1, a1), Node::Unary(o2, b1)) if o1 == o2 => {
            total += graft_sum(a1, b1, depth + 1, grammar);
        }
        (Node::Binary(o1, a1, a2), Node::Binary(o2, b1, b2)) if o1 == o2 => {
            match (a1.same_shape(b1), a2.same_shape(b2)) {
                (true, true) => {
                    total += graft_sum(a1, b1, depth + 1, grammar) + graft_sum(a2, b2, depth + 1, grammar)
                }
                (true, false) => total += graft_sum(a2, b2, depth + 1, grammar),
                (false, true) => total += graft_sum(a1, b1, depth + 1, grammar),
                (false, false) => {}
            }
        }
        _ => {}
    }
    total
}

fn is_swappable_leaf(n: &Node) -> bool {
    matches!(n, Node::Var(_) | Node::Param(_))
}

fn root_flip_prob(from: &Node, to: &Node, grammar: &Grammar) -> f64 {
    let b = grammar.basis.len() as f64;
    let mut p = 0.0;
    // wrap
    if to.depth() <= grammar.max_depth {
        match to {
            Node::Unary(op, child) if grammar.in_basis(*op) && child.same_shape(from) => {
                p += 0.5 / b;
            }
            Node::Binary(op, l, r) if grammar.in_basis(*op) => {
                if l.same_shape(from) && is_swappable_leaf(r) {
                    p += 0.5 / b * 0.5 * grammar.leaf_kind_prob(r);
                }
                if r.same_shape(from) && is_swappable_leaf(l) {
                    p += 0.5 / b * 0.5 * grammar.leaf_kind_prob(l);
                }
            }
            _ => {}
        }
    }
    // strip
    match from {
        Node::Unary(_, child) if child.same_shape(to) => p += 0.5,
        Node::Binary(_, l, r) => {
            if l.same_shape(to) && is_swappable_leaf(r) {
                p += 0.25;
            }
            if r.same_shape(to) && is_swappable_leaf(l) {
                p += 0.25;
            }
        }
        _ => {}
    }
    p
}

fn leaf_swap_prob(from: &Node, to: &Node, grammar: &Grammar) -> f64 {
    /// Finds the single leaf that changed kind between `a` and `b`.
    fn diff<'n>(a: &'n Node, b: &'n Node, found: &mut Option<(&'n Node, &'n Node)>) -> bool {
        match (a, b) {
            (Node::Unary(o1, a1), Node::Unary(o2, b1)) => o1 == o2 && diff(a1, b1, found),
            (Node::Binary(o1, a1, a2), Node::Binary(o2, b1, b2)) => {
                o1 == o2 && diff(a1, b1, found) && diff(a2, b2, found)
            }
            (a, b) if a.same_shape(b) => true,
            (a @ Node::Var(_), b @ Node::Param(_)) | (a @ Node::Param(_), b @ Node::Var(_)) => {
                if found.is_some() {
                    return false;
                }
                *found = Some((a, b));
                true
            }
            _ => false,
        }
    }
    let mut found = None;
    if !diff(from, to, &mut found) {
        return 0.0;
    }
    let n_leaves = from.preorder().iter().filter(|n| is_swappable_leaf(n)).count() as f64;
    match found {
        Some((Node::Var(_), Node::Param(_))) => 1.0 / n_leaves,
        Some((Node::Param(_), Node::Var(i))) if *i < grammar.n_features => {
            1.0 / n_leaves / grammar.n_features as f64
        }
        _ => 0.0,
    }
}

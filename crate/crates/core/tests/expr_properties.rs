use std::collections::HashMap;

use proptest::prelude::*;
use symreg::{parse_expression, print_expression, ExprTree, Node, Operator, ParamVector};

fn leaf() -> impl Strategy<Value = Node> {
    prop_oneof![
        (0usize..3).prop_map(Node::Var),
        (0u32..4).prop_map(Node::Param),
        prop_oneof![Just(0.5), Just(2.0), Just(-1.25), Just(3.0e-7), (-1.0e3..1.0e3f64)].prop_map(Node::Const),
    ]
}

fn tree(depth: u32) -> impl Strategy<Value = Node> {
    leaf().prop_recursive(depth, 64, 2, |inner| {
        prop_oneof![
            (prop::sample::select(Operator::ALL.iter().copied().filter(|o| o.arity() == 1).collect::<Vec<_>>()), inner.clone())
                .prop_map(|(op, a)| Node::unary(op, a)),
            (
                prop::sample::select(Operator::ALL.iter().copied().filter(|o| o.arity() == 2).collect::<Vec<_>>()),
                inner.clone(),
                inner
            )
                .prop_map(|(op, a, b)| Node::binary(op, a, b)),
        ]
    })
}

fn reference(node: &Node, theta: &[f64], x: &[f64]) -> f64 {
    match node {
        Node::Var(i) => x[*i],
        Node::Param(p) => theta[*p as usize],
        Node::Const(c) => *c,
        Node::Unary(op, a) => {
            let a = reference(a, theta, x);
            match op {
                Operator::Exp => a.exp(),
                Operator::Log => a.ln(),
                Operator::Sin => a.sin(),
                Operator::Cos => a.cos(),
                Operator::Sqrt => a.sqrt(),
                Operator::Abs => a.abs(),
                Operator::Neg => -a,
                _ => unreachable!(),
            }
        }
        Node::Binary(op, a, b) => {
            let (a, b) = (reference(a, theta, x), reference(b, theta, x));
            match op {
                Operator::Add => a + b,
                Operator::Sub => a - b,
                Operator::Mul => a * b,
                Operator::Div => a / b,
                Operator::Pow => a.powf(b),
                _ => unreachable!(),
            }
        }
    }
}

fn same_value(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

fn count_param_leaves(node: &Node) -> usize {
    node.preorder().into_iter().filter(|n| matches!(n, Node::Param(_))).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn print_then_parse_is_identity(root in tree(6)) {
        let t = ExprTree::new(root);
        prop_assume!(t.depth() <= 6);
        let back = parse_expression(&print_expression(&t), 3).unwrap();
        prop_assert_eq!(back.root(), t.root());
    }

    #[test]
    fn counts_are_consistent(root in tree(6)) {
        let t = ExprTree::new(root);
        let internal = t.root().preorder().into_iter().filter(|n| !n.is_leaf()).count();
        prop_assert_eq!(t.op_counts().total() as usize, internal);
        prop_assert!(t.param_count() <= count_param_leaves(t.root()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn evaluation_matches_direct_recursion(
        root in tree(5),
        theta in prop::collection::vec(-3.0..3.0f64, 4),
        x in prop::collection::vec(-5.0..5.0f64, 3),
    ) {
        let t = ExprTree::new(root);
        let params = ParamVector::from_pairs(theta.iter().enumerate().map(|(i, &v)| (i as u32, v)));
        let got = symreg::expr::evaluate(&t, &params, &x).unwrap();
        prop_assert!(same_value(got, reference(t.root(), &theta, &x)));
    }
}

fn enumerate(depth: usize) -> Vec<Node> {
    let leaves = vec![Node::Var(0), Node::Param(0), Node::Param(1), Node::Param(2)];
    if depth == 0 {
        return leaves;
    }
    let sub = enumerate(depth - 1);
    let mut out = leaves;
    for a in &sub {
        out.push(Node::unary(Operator::Exp, a.clone()));
        for b in &sub {
            out.push(Node::binary(Operator::Add, a.clone(), b.clone()));
            out.push(Node::binary(Operator::Mul, a.clone(), b.clone()));
        }
    }
    out
}

fn renamed(node: &Node, order: &mut Vec<u32>) -> Node {
    match node {
        Node::Param(p) => {
            let i = order.iter().position(|q| q == p).unwrap_or_else(|| {
                order.push(*p);
                order.len() - 1
            });
            Node::Param(i as u32)
        }
        Node::Unary(op, a) => Node::unary(*op, renamed(a, order)),
        Node::Binary(op, a, b) => {
            let a = renamed(a, order);
            Node::binary(*op, a, renamed(b, order))
        }
        other => other.clone(),
    }
}

#[test]
fn signatures_identify_trees_up_to_parameter_renaming() {
    let trees = enumerate(2);
    assert_eq!(trees.len(), 4 + 40 + 40 * 40 * 2);
    let mut by_signature: HashMap<String, Node> = HashMap::new();
    let mut by_shape: HashMap<String, String> = HashMap::new();
    for root in trees {
        let canon = renamed(&root, &mut Vec::new());
        let sig = ExprTree::new(root).signature().as_str().to_string();
        if let Some(prev) = by_signature.get(&sig) {
            assert_eq!(prev, &canon, "signature {sig} shared by different canonical trees");
        }
        by_signature.insert(sig.clone(), canon.clone());
        let key = format!("{canon:?}");
        if let Some(prev) = by_shape.get(&key) {
            assert_eq!(prev, &sig, "canonical tree {key} has two signatures");
        }
        by_shape.insert(key, sig);
    }
    assert_eq!(by_signature.len(), by_shape.len());
}

#[test]
fn shared_parameters_count_once() {
    let t = parse_expression("th0 * x0 + th0", 1).unwrap();
    assert_eq!(t.param_count(), 1);
    assert_eq!(t.op_counts().get(Operator::Add), 1);
    assert_eq!(t.op_counts().get(Operator::Mul), 1);
    let a = parse_expression("th3 + exp(th7 * x0)", 1).unwrap();
    let b = parse_expression("th0 + exp(th1 * x0)", 1).unwrap();
    let c = parse_expression("th0 + exp(th0 * x0)", 1).unwrap();
    assert_eq!(a.signature(), b.signature());
    assert_ne!(b.signature(), c.signature());
}

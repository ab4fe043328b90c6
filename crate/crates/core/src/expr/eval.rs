use super::{ExprTree, Node, Operator, ParamVector};
use crate::error::{Error, Result};

/// Evaluates `tree` at one feature row.
///
/// Domain violations (log of a negative number, division by zero, ...)
/// are not errors: they yield a non-finite value, which callers treat as
/// an invalid model output.
pub fn evaluate(tree: &ExprTree, params: &ParamVector, x: &[f64]) -> Result<f64> {
    if let Some(&missing) = tree.params().iter().find(|&&p| params.get(p).is_none()) {
        return Err(Error::MissingParameter(missing));
    }
    if x.len() < tree.n_vars() {
        return Err(Error::InvalidData(format!(
            "feature row has {} value(s), expression needs {}",
            x.len(),
            tree.n_vars()
        )));
    }
    Ok(eval_node(tree.root(), params, x))
}

fn eval_node(node: &Node, params: &ParamVector, x: &[f64]) -> f64 {
    match node {
        Node::Var(i) => x[*i],
        Node::Param(p) => params.get(*p).unwrap_or(f64::NAN),
        Node::Const(v) => *v,
        Node::Unary(op, a) => op.apply1(eval_node(a, params, x)),
        Node::Binary(op, a, b) => op.apply2(eval_node(a, params, x), eval_node(b, params, x)),
    }
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Var(usize),
    Param(usize),
    Const(f64),
    Unary(Operator),
    Binary(Operator),
}

/// A tree flattened to postfix form for column-at-a-time evaluation over a
/// whole dataset. Parameter slots follow `ExprTree::params()` order.
#[derive(Debug, Clone)]
pub struct Program {
    code: Vec<Instr>,
    max_stack: usize,
    n_params: usize,
}

/// Scratch buffers reused across `Program::eval` calls.
#[derive(Debug, Default)]
pub struct Workspace {
    bufs: Vec<Vec<f64>>,
    scalar: Vec<Option<f64>>,
}

impl Workspace {
    pub fn new() -> Workspace {
        Workspace::default()
    }

    fn ensure(&mut self, depth: usize, n: usize) {
        if self.bufs.len() < depth {
            self.bufs.resize_with(depth, Vec::new);
        }
        for b in &mut self.bufs[..depth] {
            if b.len() < n {
                b.resize(n, 0.0);
            }
        }
    }
}

impl Program {
    pub fn compile(tree: &ExprTree) -> Program {
        let params = tree.params();
        let mut code = Vec::with_capacity(tree.size());
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        fn emit(
            node: &Node,
            params: &[u32],
            code: &mut Vec<Instr>,
            depth: &mut usize,
            max: &mut usize,
        ) {
            match node {
                Node::Var(i) => push(code, Instr::Var(*i), depth, max),
                Node::Param(p) => {
                    let slot = params.binary_search(p).expect("parameter listed in tree");
                    push(code, Instr::Param(slot), depth, max)
                }
                Node::Const(v) => push(code, Instr::Const(*v), depth, max),
                Node::Unary(op, a) => {
                    emit(a, params, code, depth, max);
                    code.push(Instr::Unary(*op));
                }
                Node::Binary(op, a, b) => {
                    emit(a, params, code, depth, max);
                    emit(b, params, code, depth, max);
                    code.push(Instr::Binary(*op));
                    *depth -= 1;
                }
            }
        }
        fn push(code: &mut Vec<Instr>, ins: Instr, depth: &mut usize, max: &mut usize) {
            code.push(ins);
            *depth += 1;
            *max = (*max).max(*depth);
        }
        emit(tree.root(), params, &mut code, &mut depth, &mut max_stack);
        Program { code, max_stack, n_params: params.len() }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Evaluates over the first `n` rows of `columns` (one vector per
    /// feature). Bit-identical to `evaluate` row by row.
    /// Evaluates the program on the first `n` rows. Variable-free subtrees
    /// are computed once as scalars and broadcast when they meet a column.
    pub fn eval<'w>(
        &self,
        theta: &[f64],
        columns: &[Vec<f64>],
        n: usize,
        ws: &'w mut Workspace,
    ) -> &'w [f64] {
        debug_assert_eq!(theta.len(), self.n_params);
        ws.ensure(self.max_stack, n);
        if ws.scalar.len() < self.max_stack {
            ws.scalar.resize(self.max_stack, None);
        }
        let mut sp = 0usize;
        for ins in &self.code {
            match *ins {
                Instr::Var(i) => {
                    ws.bufs[sp][..n].copy_from_slice(&columns[i][..n]);
                    ws.scalar[sp] = None;
                    sp += 1;
                }
                Instr::Param(s) => {
                    ws.scalar[sp] = Some(theta[s]);
                    sp += 1;
                }
                Instr::Const(v) => {
                    ws.scalar[sp] = Some(v);
                    sp += 1;
                }
                Instr::Unary(op) => {
                    if let Some(v) = ws.scalar[sp - 1] {
                        ws.scalar[sp - 1] = Some(op.apply1(v));
                        continue;
                    }
                    let a = &mut ws.bufs[sp - 1][..n];
                    match op {
                        Operator::Exp => map1(a, f64::exp),
                        Operator::Log => map1(a, f64::ln),
                        Operator::Sin => map1(a, f64::sin),
                        Operator::Cos => map1(a, f64::cos),
                        Operator::Sqrt => map1(a, f64::sqrt),
                        Operator::Abs => map1(a, f64::abs),
                        Operator::Neg => map1(a, |v| -v),
                        _ => map1(a, |v| op.apply1(v)),
                    }
                }
                Instr::Binary(op) => {
                    sp -= 1;
                    let (lo, hi) = ws.bufs.split_at_mut(sp);
                    let a = &mut lo[sp - 1][..n];
                    let b = &hi[0][..n];
                    match (ws.scalar[sp - 1], ws.scalar[sp]) {
                        (Some(x), Some(y)) => ws.scalar[sp - 1] = Some(op.apply2(x, y)),
                        (None, Some(y)) => match op {
                            Operator::Add => map1(a, |x| x + y),
                            Operator::Sub => map1(a, |x| x - y),
                            Operator::Mul => map1(a, |x| x * y),
                            Operator::Div => map1(a, |x| x / y),
                            Operator::Pow => map1(a, |x| x.powf(y)),
                            _ => map1(a, |x| op.apply2(x, y)),
                        },
                        (Some(x), None) => {
                            match op {
                                Operator::Add => map_from(a, b, |y| x + y),
                                Operator::Sub => map_from(a, b, |y| x - y),
                                Operator::Mul => map_from(a, b, |y| x * y),
                                Operator::Div => map_from(a, b, |y| x / y),
                                Operator::Pow => map_from(a, b, |y| x.powf(y)),
                                _ => map_from(a, b, |y| op.apply2(x, y)),
                            }
                            ws.scalar[sp - 1] = None;
                        }
                        (None, None) => match op {
                            Operator::Add => map2(a, b, |x, y| x + y),
                            Operator::Sub => map2(a, b, |x, y| x - y),
                            Operator::Mul => map2(a, b, |x, y| x * y),
                            Operator::Div => map2(a, b, |x, y| x / y),
                            Operator::Pow => map2(a, b, f64::powf),
                            _ => map2(a, b, |x, y| op.apply2(x, y)),
                        },
                    }
                }
            }
        }
        if let Some(v) = ws.scalar[0] {
            ws.bufs[0][..n].fill(v);
        }
        &ws.bufs[0][..n]
    }
}

#[inline]
fn map_from(a: &mut [f64], b: &[f64], f: impl Fn(f64) -> f64) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x = f(y);
    }
}

#[inline]
fn map1(a: &mut [f64], f: impl Fn(f64) -> f64) {
    for v in a {
        *v = f(*v);
    }
}

#[inline]
fn map2(a: &mut [f64], b: &[f64], f: impl Fn(f64, f64) -> f64) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x = f(*x, y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;

    #[test]
    fn linear_example() {
        let t = parse_expression("th0 + th1*x0", 1).unwrap();
        let p = ParamVector::from_pairs([(0, -2.3), (1, 4.1)]);
        let v = evaluate(&t, &p, &[1.0]).unwrap();
        assert!((v - 1.8).abs() < 1e-12);
    }

    #[test]
    fn constant_example() {
        let t = parse_expression("th0", 1).unwrap();
        let p = ParamVector::from_pairs([(0, 31.0)]);
        for x in [-5.0, 0.0, 17.0] {
            assert_eq!(evaluate(&t, &p, &[x]).unwrap(), 31.0);
        }
    }

    #[test]
    fn domain_violations_are_non_finite() {
        let p = ParamVector::new();
        for (expr, x) in [("log(x0)", -1.0), ("1 / x0", 0.0), ("pow(x0, -1)", 0.0), ("sqrt(x0)", -4.0)]
        {
            let t = parse_expression(expr, 1).unwrap();
            assert!(!evaluate(&t, &p, &[x]).unwrap().is_finite(), "{expr} at {x}");
        }
    }

    #[test]
    fn missing_parameter_is_an_error() {
        let t = parse_expression("th0 + th3", 1).unwrap();
        let p = ParamVector::from_pairs([(0, 1.0)]);
        assert!(matches!(evaluate(&t, &p, &[0.0]), Err(Error::MissingParameter(3))));
    }

    #[test]
    fn program_matches_pointwise() {
        let p = ParamVector::from_pairs([(0, 0.3), (1, 1.7)]);
        let cols = vec![vec![0.1, -1.0, 2.5], vec![3.0, 0.5, -0.25]];
        let mut ws = Workspace::new();
        for expr in [
            "pow(abs(x1), th1) - exp(th0 * x0) / cos(x1) + neg(2)",
            "pow(th0, x0) + sin(th1) * (x0 - th0) / pow(th1, th0)",
            "sqrt(th0 - th1)",
            "th1",
        ] {
            let t = parse_expression(expr, 2).unwrap();
            let prog = Program::compile(&t);
            let out = prog.eval(&p.slice_for(&t).unwrap(), &cols, 3, &mut ws).to_vec();
            for k in 0..3 {
                let v = evaluate(&t, &p, &[cols[0][k], cols[1][k]]).unwrap();
                assert_eq!(v.to_bits(), out[k].to_bits(), "{expr}");
            }
        }
    }
}

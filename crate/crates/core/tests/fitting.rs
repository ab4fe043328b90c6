use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symreg::expr::evaluate;
use symreg::{fit_params, log_likelihood_mle, parse_expression, sse, Dataset, ExprTree, FitConfig, Grammar, Operator, ParamVector};

fn noisy(model: &str, theta: &[f64], sigma: f64, n: usize, seed: u64) -> (ExprTree, Dataset) {
    let tree = parse_expression(model, 1).unwrap();
    let params = ParamVector::from_pairs(theta.iter().enumerate().map(|(i, &v)| (i as u32, v)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let y = x
        .iter()
        .map(|&xi| {
            let noise: f64 = rng.sample(rand_distr::StandardNormal);
            evaluate(&tree, &params, &[xi]).unwrap() + sigma * noise
        })
        .collect();
    (tree, Dataset::new(vec![x], y).unwrap())
}

fn cases() -> Vec<(ExprTree, Dataset)> {
    vec![
        noisy("th0", &[31.0], 1.0, 50, 1),
        noisy("th0 + th1 * x0", &[-2.3, 4.1], 0.5, 80, 2),
        noisy("th0 * exp(th1 * x0)", &[1.5, 0.3], 0.2, 60, 3),
        noisy("th0 + th1 * x0 + th2 * x0 * x0", &[1.0, -0.5, 0.25], 1.0, 100, 4),
        noisy("th0 * sin(x0) + th1", &[2.0, -1.0], 0.1, 70, 5),
        noisy("x0 / (th0 + th1 * x0 * x0)", &[2.0, 0.5], 0.05, 90, 6),
    ]
}

fn grad_at(tree: &ExprTree, data: &Dataset, theta: &ParamVector) -> Vec<f64> {
    tree.params()
        .iter()
        .map(|&p| {
            let v = theta.get(p).unwrap();
            let h = 1e-6 * (1.0 + v.abs());
            let mut up = theta.clone();
            up.insert(p, v + h);
            let mut down = theta.clone();
            down.insert(p, v - h);
            (sse(tree, &up, data).unwrap() - sse(tree, &down, data).unwrap()) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradient_vanishes_at_converged_fits() {
    for (tree, data) in cases() {
        let fit = fit_params(&tree, &data, &FitConfig::default()).unwrap();
        assert!(fit.converged, "{tree} did not converge");
        let g = grad_at(&tree, &data, &fit.theta_hat);
        let worst = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-5 * (1.0 + fit.sse), "{tree}: gradient {g:?} at sse {}", fit.sse);
    }
}

#[test]
fn more_restarts_never_worsen_the_fit() {
    for (tree, data) in cases() {
        let mut last = f64::INFINITY;
        for restarts in 1..=10 {
            let cfg = FitConfig { restarts, seed: 17, ..FitConfig::default() };
            let fit = fit_params(&tree, &data, &cfg).unwrap();
            assert!(fit.sse <= last, "{tree}: R={restarts} gave {} after {last}", fit.sse);
            last = fit.sse;
        }
    }
}

#[test]
fn profiled_likelihood_equals_gaussian_log_density() {
    for (tree, data) in cases() {
        let fit = fit_params(&tree, &data, &FitConfig::default()).unwrap();
        let n = data.n() as f64;
        let var = fit.sse / n;
        assert!((fit.theta_hat.sigma - var.sqrt()).abs() <= 1e-12 * var.sqrt());
        let direct: f64 = (0..data.n())
            .map(|k| {
                let r = data.target()[k] - evaluate(&tree, &fit.theta_hat, &data.row(k)).unwrap();
                -0.5 * (2.0 * std::f64::consts::PI * var).ln() - r * r / (2.0 * var)
            })
            .sum();
        let closed = log_likelihood_mle(fit.sse, data.n(), false).unwrap();
        assert!((closed - direct).abs() <= 1e-10 * direct.abs(), "{tree}: {closed} vs {direct}");
        assert_eq!(closed, fit.log_likelihood);
    }
}

fn random_problem(rng: &mut ChaCha8Rng, grammar: &Grammar) -> (ExprTree, Dataset) {
    loop {
        let tree = ExprTree::new(grammar.grow(grammar.max_depth, rng)).with_fresh_params();
        let theta: Vec<f64> = (0..tree.param_count()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let params = ParamVector::from_pairs(tree.params().iter().copied().zip(theta));
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|&xi| evaluate(&tree, &params, &[xi]).unwrap()).collect();
        if y.iter().all(|v| v.is_finite()) {
            return (tree, Dataset::new(vec![x], y).unwrap());
        }
    }
}

#[test]
fn noiseless_data_is_recovered() {
    let grammar = Grammar {
        basis: Operator::DEFAULT_BASIS.to_vec(),
        n_features: 1,
        max_depth: 3,
        leaf_prob: 0.3,
        var_prob: 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut recovered = 0;
    let mut misses = Vec::new();
    for _ in 0..100 {
        let (tree, data) = random_problem(&mut rng, &grammar);
        let fit = fit_params(&tree, &data, &FitConfig::default()).unwrap();
        if fit.sse < 1e-8 {
            recovered += 1;
        } else {
            misses.push(format!("{tree}: {:.3e}", fit.sse));
        }
    }
    assert!(recovered >= 95, "recovered {recovered}/100; misses {misses:#?}");
}

use std::collections::{HashMap, HashSet, VecDeque};

use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use symreg::sampler::{proposal_prob, run_tempered, Energy, PriorEnergy};
use symreg::{
    parse_expression, sample_posterior, write_trace, Dataset, ExprTree, FitConfig, Grammar, MoveKind, Node, Operator,
    PriorHyperparams, SamplerConfig, ScoreConfig, Signature,
};

/// An irregular fixed landscape over structures.
struct Landscape;

impl Energy for Landscape {
    type Info = ();

    fn energy(&self, tree: &ExprTree) -> Option<(f64, ())> {
        let sig = tree.signature();
        Some((0.45 * tree.op_counts().total() as f64 + (sig.digest() % 5) as f64 * 0.3, ()))
    }
}

fn enumerate(depth: usize, basis: &[Operator]) -> Vec<Node> {
    let mut out = vec![Node::Var(0), Node::Param(0)];
    if depth == 0 {
        return out;
    }
    let sub = enumerate(depth - 1, basis);
    for &op in basis {
        for a in &sub {
            if op.arity() == 1 {
                out.push(Node::unary(op, a.clone()));
            } else {
                for b in &sub {
                    out.push(Node::binary(op, a.clone(), b.clone()));
                }
            }
        }
    }
    out
}

fn structures(depth: usize, basis: &[Operator]) -> Vec<ExprTree> {
    let mut seen = HashSet::new();
    enumerate(depth, basis)
        .into_iter()
        .map(|n| ExprTree::new(n).with_fresh_params())
        .filter(|t| seen.insert(t.signature()))
        .collect()
}

fn restricted() -> (Grammar, Vec<ExprTree>) {
    let basis = vec![Operator::Add];
    let grammar = Grammar { basis: basis.clone(), n_features: 1, max_depth: 2, leaf_prob: 0.5, var_prob: 0.5 };
    (grammar, structures(2, &basis))
}

fn config(betas: Vec<f64>, steps: usize, swap_period: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        betas,
        burn_in: 2000,
        steps,
        thin: 1,
        swap_period,
        max_depth: 2,
        basis: vec![Operator::Add],
        seed,
        ..SamplerConfig::default()
    }
}

fn exact_posterior(trees: &[ExprTree]) -> HashMap<Signature, f64> {
    let e: Vec<f64> = trees.iter().map(|t| Landscape.energy(t).unwrap().0).collect();
    let z: f64 = e.iter().map(|v| (-v).exp()).sum();
    trees.iter().zip(e).map(|(t, v)| (t.signature(), (-v).exp() / z)).collect()
}

fn visits(grammar: &Grammar, cfg: &SamplerConfig) -> Vec<Signature> {
    let mut path = Vec::new();
    let start = parse_expression("th0", 1).unwrap();
    run_tempered(&Landscape, grammar, cfg, &start, |_, s| path.push(s.tree.signature())).unwrap();
    path
}

fn total_variation(path: &[Signature], exact: &HashMap<Signature, f64>) -> f64 {
    let mut freq: HashMap<&Signature, f64> = HashMap::new();
    for s in path {
        *freq.entry(s).or_default() += 1.0 / path.len() as f64;
    }
    assert!(freq.keys().all(|s| exact.contains_key(*s)), "chain left the grammar");
    0.5 * exact.iter().map(|(s, p)| (freq.get(s).copied().unwrap_or(0.0) - p).abs()).sum::<f64>()
}

#[test]
fn restricted_grammar_has_38_structures() {
    assert_eq!(restricted().1.len(), 38);
}

#[test]
fn every_structure_is_reachable_and_moves_are_reversible() {
    for (grammar, trees) in [
        restricted(),
        {
            let basis = vec![Operator::Add, Operator::Mul, Operator::Exp, Operator::Sin];
            let g = Grammar { basis: basis.clone(), n_features: 1, max_depth: 2, leaf_prob: 0.5, var_prob: 0.5 };
            (g, structures(2, &basis))
        },
    ] {
        let n = trees.len();
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (a, b) = (trees[i].root(), trees[j].root());
                let fwd = MoveKind::ALL.iter().any(|&k| proposal_prob(k, a, b, &grammar) > 0.0);
                let back = MoveKind::ALL.iter().any(|&k| proposal_prob(k, b, a, &grammar) > 0.0);
                assert_eq!(fwd, back, "{} <-> {}", trees[i], trees[j]);
                if fwd {
                    adj[i].push(j);
                }
            }
        }
        let start = trees.iter().position(|t| t.to_string() == "th0").unwrap();
        let mut seen = vec![false; n];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        assert!(seen.iter().all(|&s| s), "{} of {n} reachable", seen.iter().filter(|&&s| s).count());
    }
}

#[test]
fn single_chain_matches_enumerated_posterior() {
    let (grammar, trees) = restricted();
    let exact = exact_posterior(&trees);
    let path = visits(&grammar, &config(vec![1.0], 200_000, 0, 11));
    let tv = total_variation(&path, &exact);
    assert!(tv < 0.05, "total variation {tv}");
}

#[test]
fn flows_balance_between_every_pair() {
    let (grammar, _) = restricted();
    let path = visits(&grammar, &config(vec![1.0], 1_000_000, 0, 12));
    let mut flow: HashMap<(&Signature, &Signature), f64> = HashMap::new();
    for w in path.windows(2) {
        if w[0] != w[1] {
            *flow.entry((&w[0], &w[1])).or_default() += 1.0;
        }
    }
    // Three-sigma family-wise level, split over all unordered pairs.
    let pairs = flow.len() as f64 / 2.0;
    let alpha = 2.0 * (1.0 - Normal::standard().cdf(3.0));
    let z = Normal::standard().inverse_cdf(1.0 - alpha / (2.0 * pairs));
    for (&(a, b), &ab) in &flow {
        let ba = flow.get(&(b, a)).copied().unwrap_or(0.0);
        let se = (ab + ba).sqrt();
        assert!((ab - ba).abs() <= z * se, "{} -> {}: {ab} vs {ba} (z limit {z:.2})", a.as_str(), b.as_str());
    }
}

#[test]
fn swaps_do_not_change_the_cold_distribution() {
    let (grammar, trees) = restricted();
    let exact = exact_posterior(&trees);
    let ladder = symreg::sampler::geometric_ladder(4, 1.5);
    let with = visits(&grammar, &config(ladder.clone(), 100_000, 1, 13));
    let without = visits(&grammar, &config(ladder, 100_000, 0, 13));
    assert!(total_variation(&with, &exact) < 0.05);
    let tv_without = total_variation(&without, &exact);
    let tv_between = {
        let mut f: HashMap<&Signature, f64> = HashMap::new();
        for s in &with {
            *f.entry(s).or_default() += 1.0 / with.len() as f64;
        }
        for s in &without {
            *f.entry(s).or_default() -= 1.0 / without.len() as f64;
        }
        0.5 * f.values().map(|v| v.abs()).sum::<f64>()
    };
    assert!(tv_between < 0.07, "with vs without swaps: {tv_between} (without vs exact {tv_without})");
}

fn small_run(seed: u64) -> symreg::SamplerTrace {
    let data = Dataset::new(vec![vec![-2.0, -1.0, 0.0, 1.0, 2.0, 3.0]], vec![-8.9, -6.1, -2.4, 1.9, 5.8, 10.1]).unwrap();
    let cfg = SamplerConfig { burn_in: 50, steps: 300, thin: 3, seed, ..SamplerConfig::default() };
    let hp = PriorHyperparams::surrogate(&cfg.basis);
    let fit = FitConfig { restarts: 3, clamp_zero_sse: true, ..FitConfig::default() };
    sample_posterior(&data, &hp, &fit, &ScoreConfig::default(), &cfg).unwrap()
}

#[test]
fn identical_seeds_give_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (small_run(5), small_run(5));
    assert_eq!(a, b);
    write_trace(&a, &dir.path().join("a.jsonl")).unwrap();
    write_trace(&b, &dir.path().join("b.jsonl")).unwrap();
    let bytes = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    assert_eq!(bytes("a.jsonl"), bytes("b.jsonl"));
    assert_ne!(a.records, small_run(6).records);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn recorded_trees_respect_the_depth_cap(max_depth in 0usize..4, seed in any::<u64>(), n_features in 1usize..3) {
        let cfg = SamplerConfig {
            betas: vec![1.0, 0.5],
            burn_in: 0,
            steps: 400,
            thin: 1,
            max_depth,
            seed,
            ..SamplerConfig::default()
        };
        let hp = PriorHyperparams::uniform(&cfg.basis, 0.2, 0.0);
        let grammar = cfg.grammar(n_features);
        let mut deepest = 0;
        let start = parse_expression("th0", n_features).unwrap();
        run_tempered(&PriorEnergy { hp: &hp }, &grammar, &cfg, &start, |_, s| {
            deepest = deepest.max(s.tree.depth());
            assert!(s.tree.n_vars() <= n_features);
        })
        .unwrap();
        prop_assert!(deepest <= max_depth);
    }
}

use proptest::prelude::*;
use symreg::ensemble::trivial_model;
use symreg::{
    description_length, generate, learnability_gap, parse_expression, predict_ensemble, rashomon_set, sample_posterior,
    EnsembleConfig, FitConfig, GeneratorSpec, PriorHyperparams, SamplerConfig, SamplerTrace, ScoreConfig, TraceRecord,
};

fn search(spec: &GeneratorSpec, seed: u64) -> SamplerTrace {
    let data = generate(spec).unwrap();
    let cfg = SamplerConfig { burn_in: 1000, steps: 4000, thin: 4, seed, ..SamplerConfig::default() };
    let hp = PriorHyperparams::surrogate(&cfg.basis);
    let fit = FitConfig { clamp_zero_sse: true, seed, ..FitConfig::default() };
    sample_posterior(&data, &hp, &fit, &ScoreConfig::default(), &cfg).unwrap()
}

#[test]
fn identical_models_give_zero_variance() {
    let data = generate(&GeneratorSpec::linear(0.5, 40, 1)).unwrap();
    let tree = parse_expression("th0 + th1 * x0", 1).unwrap();
    let hp = PriorHyperparams::surrogate(&[symreg::Operator::Add, symreg::Operator::Mul]);
    let (fit, score) = description_length(&tree, &data, &hp, &FitConfig::default(), &ScoreConfig::default()).unwrap();
    let record = TraceRecord { step: 0, chain: 0, beta: 1.0, tree, fit, score };
    let trace = SamplerTrace { records: vec![record; 25], stats: Default::default(), models_scored: 1 };
    for x in [-4.0, 0.0, 2.5] {
        let p = predict_ensemble(&trace, &[x], &EnsembleConfig::default()).unwrap();
        assert_eq!(p.variance, 0.0);
        assert_eq!(p.q05, p.q95);
        let noisy = predict_ensemble(&trace, &[x], &EnsembleConfig { include_noise: true, ..EnsembleConfig::default() }).unwrap();
        assert!(noisy.variance > 0.0);
    }
}

#[test]
fn ninety_percent_interval_covers_held_out_points() {
    let trace = search(&GeneratorSpec::linear(5.0, 100, 3), 3);
    let held_out = generate(&GeneratorSpec::linear(5.0, 500, 4)).unwrap();
    let cfg = EnsembleConfig { include_noise: true, noise_draws: 20, seed: 9 };
    let covered = (0..held_out.n())
        .filter(|&k| {
            let p = predict_ensemble(&trace, &held_out.row(k), &cfg).unwrap();
            (p.q05..=p.q95).contains(&held_out.target()[k])
        })
        .count();
    let rate = covered as f64 / held_out.n() as f64;
    assert!((rate - 0.90).abs() <= 0.07, "coverage {rate}");
}

#[test]
fn empty_trace_is_rejected() {
    let trace = SamplerTrace { records: vec![], stats: Default::default(), models_scored: 0 };
    assert!(predict_ensemble(&trace, &[0.0], &EnsembleConfig::default()).is_err());
    assert!(rashomon_set(&trace, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rashomon_sets_are_nested(a in 0.0..40.0f64, b in 0.0..40.0f64) {
        let trace = nesting_trace();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = rashomon_set(trace, lo).unwrap();
        let large = rashomon_set(trace, hi).unwrap();
        for m in &small.members {
            prop_assert!(large.members.iter().any(|n| n.signature == m.signature));
        }
        prop_assert!(small.members.iter().all(|m| m.best_dl <= small.min_dl + lo));
    }
}

fn nesting_trace() -> &'static SamplerTrace {
    static TRACE: std::sync::OnceLock<SamplerTrace> = std::sync::OnceLock::new();
    TRACE.get_or_init(|| search(&GeneratorSpec::linear(5.0, 30, 8), 8))
}

#[test]
fn gap_shrinks_as_data_grows() {
    let truth = parse_expression("th0 + th1 * x0", 1).unwrap();
    let hp = PriorHyperparams::surrogate(&symreg::Operator::DEFAULT_BASIS);
    let fit = FitConfig::default();
    let mean_gap = |n: usize| {
        (0..10u64)
            .map(|s| {
                let data = generate(&GeneratorSpec::linear(5.0, n, 100 + s)).unwrap();
                learnability_gap(&truth, &data, &hp, &fit, &ScoreConfig::default()).unwrap()
            })
            .sum::<f64>()
            / 10.0
    };
    let gaps = [mean_gap(10), mean_gap(100), mean_gap(1000)];
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] < 0.0);
    assert_eq!(trivial_model().to_string(), "th0");
}

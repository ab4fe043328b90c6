//! Predictions and diagnostics built from posterior traces: MAP and
//! model-averaged predictions, Rashomon sets and the learnability gap.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{evaluate, ExprTree, Node, ParamVector};
use crate::likelihood::{mix, Dataset, FitConfig};
use crate::sampler::SamplerTrace;
use crate::score::{description_length, PriorHyperparams, ScoreConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Add Gaussian noise with each record's fitted scale.
    pub include_noise: bool,
    /// Noise draws per record when `include_noise` is set.
    pub noise_draws: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { include_noise: false, noise_draws: 20, seed: 0 }
    }
}

/// Predictive distribution at one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictivePosterior {
    pub x: Vec<f64>,
    /// `(value, weight)` pairs; weights sum to 1.
    pub values: Vec<(f64, f64)>,
    pub mean: f64,
    pub variance: f64,
    pub median: f64,
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
}

/// Prediction of a single fitted model.
pub fn predict_map(tree: &ExprTree, theta_hat: &ParamVector, x: &[f64]) -> Result<f64> {
    let v = evaluate(tree, theta_hat, x)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{tree} at x = {x:?}")))
    }
}

/// Quantile of a weighted sample: the empirical CDF places each sorted
/// value at the midpoint of its weight step and interpolates linearly
/// between them.
pub fn weighted_quantile(sorted: &[(f64, f64)], q: f64) -> f64 {
    let mut prev: Option<(f64, f64)> = None;
    let mut acc = 0.0;
    for &(v, w) in sorted {
        let p = acc + w / 2.0;
        acc += w;
        if q <= p {
            return match prev {
                None => v,
                Some((pv, pp)) if p > pp => pv + (v - pv) * (q - pp) / (p - pp),
                Some(_) => v,
            };
        }
        prev = Some((v, p));
    }
    prev.map_or(f64::NAN, |(v, _)| v)
}

/// Summarizes weighted values; weights are renormalized to sum to 1.
pub fn summarize(x: Vec<f64>, mut values: Vec<(f64, f64)>) -> Result<PredictivePosterior> {
    values.retain(|(v, w)| v.is_finite() && *w > 0.0);
    if values.is_empty() {
        return Err(Error::NonFinite(format!("every prediction at x = {x:?}")));
    }
    let total: f64 = values.iter().map(|(_, w)| w).sum();
    values.iter_mut().for_each(|(_, w)| *w /= total);
    // Shifted by the first value so that a constant sample has exact mean.
    let shift = values[0].0;
    let mean = shift + values.iter().map(|(v, w)| (v - shift) * w).sum::<f64>();
    let variance: f64 = values.iter().map(|(v, w)| w * (v - mean) * (v - mean)).sum();
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let q = |p| weighted_quantile(&sorted, p);
    Ok(PredictivePosterior {
        mean,
        variance,
        median: q(0.5),
        q05: q(0.05),
        q25: q(0.25),
        q75: q(0.75),
        q95: q(0.95),
        x,
        values,
    })
}

/// Equal-weight model average over the trace records at `x`. Records that
/// are non-finite at `x` are left out.
pub fn predict_ensemble(trace: &SamplerTrace, x: &[f64], cfg: &EnsembleConfig) -> Result<PredictivePosterior> {
    if trace.records.is_empty() {
        return Err(Error::Empty("trace"));
    }
    let w = 1.0 / trace.records.len() as f64;
    let draws = cfg.noise_draws.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, x.iter().fold(0, |h, v| mix(h, v.to_bits()))));
    let mut values = Vec::with_capacity(trace.records.len());
    for r in &trace.records {
        let Ok(v) = evaluate(&r.tree, &r.fit.theta_hat, x) else { continue };
        if cfg.include_noise {
            let sigma = r.fit.theta_hat.sigma;
            for _ in 0..draws {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push((v + sigma * z, w / draws as f64));
            }
        } else {
            values.push((v, w));
        }
    }
    summarize(x.to_vec(), values)
}

/// TSV rows: feature columns, then mean, median and quantiles.
pub fn predictions_to_tsv(preds: &[PredictivePosterior], feature_names: &[String]) -> String {
    let mut out = String::new();
    for name in feature_names {
        out.push_str(name);
        out.push('\t');
    }
    out.push_str("mean\tmedian\tq05\tq25\tq75\tq95\n");
    for p in preds {
        for v in &p.x {
            out.push_str(&format!("{v}\t"));
        }
        out.push_str(&format!("{}\t{}\t{}\t{}\t{}\t{}\n", p.mean, p.median, p.q05, p.q25, p.q75, p.q95));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RashomonMember {
    pub signature: String,
    pub expression: String,
    pub best_dl: f64,
    /// Share of trace records with this signature.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RashomonSet {
    pub delta: f64,
    pub min_dl: f64,
    /// Ordered by best description length.
    pub members: Vec<RashomonMember>,
}

impl RashomonSet {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("signature\texpression\tbest_dl\tmass\n");
        for m in &self.members {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", m.signature, m.expression, m.best_dl, m.mass));
        }
        out
    }
}

/// Distinct structures whose best description length lies within `delta`
/// of the trace minimum.
pub fn rashomon_set(trace: &SamplerTrace, delta: f64) -> Result<RashomonSet> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidConfig(format!("rashomon delta must be non-negative, got {delta}")));
    }
    if trace.records.is_empty() {
        return Err(Error::Empty("trace"));
    }
    let mut groups: BTreeMap<String, (f64, String, usize)> = BTreeMap::new();
    for r in &trace.records {
        let sig = r.tree.signature().as_str().to_string();
        let dl = r.score.description_length;
        let g = groups.entry(sig).or_insert((dl, r.tree.to_string(), 0));
        if dl < g.0 {
            g.0 = dl;
            g.1 = r.tree.to_string();
        }
        g.2 += 1;
    }
    let min_dl = groups.values().map(|g| g.0).fold(f64::INFINITY, f64::min);
    let total = trace.records.len() as f64;
    let mut members: Vec<RashomonMember> = groups
        .into_iter()
        .filter(|(_, g)| g.0 <= min_dl + delta)
        .map(|(signature, (best_dl, expression, count))| RashomonMember {
            signature,
            expression,
            best_dl,
            mass: count as f64 / total,
        })
        .collect();
    members.sort_by(|a, b| a.best_dl.total_cmp(&b.best_dl).then_with(|| a.signature.cmp(&b.signature)));
    Ok(RashomonSet { delta, min_dl, members })
}

/// The trivial model: a single constant parameter.
pub fn trivial_model() -> ExprTree {
    ExprTree::new(Node::Param(0))
}

/// `L(m_star, D) - L(m0, D)`; negative when the ground truth is
/// distinguishable from the trivial model.
pub fn learnability_gap(
    m_star: &ExprTree,
    data: &Dataset,
    hp: &PriorHyperparams,
    fit_cfg: &FitConfig,
    score_cfg: &ScoreConfig,
) -> Result<f64> {
    let (_, star) = description_length(m_star, data, hp, fit_cfg, score_cfg)?;
    let (_, trivial) = description_length(&trivial_model(), data, hp, fit_cfg, score_cfg)?;
    Ok(star.description_length - trivial.description_length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;

    #[test]
    fn map_predictions() {
        let c = parse_expression("th0", 1).unwrap();
        let p = ParamVector::from_pairs([(0, 31.0)]);
        assert_eq!(predict_map(&c, &p, &[7.0]).unwrap(), 31.0);
        let lin = parse_expression("th0 + th1 * x0", 1).unwrap();
        let p = ParamVector::from_pairs([(0, -2.3), (1, 4.1)]);
        assert_eq!(predict_map(&lin, &p, &[0.0]).unwrap(), -2.3);
        let log = parse_expression("log(x0)", 1).unwrap();
        assert!(matches!(predict_map(&log, &ParamVector::new(), &[-1.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn two_point_distribution() {
        let p = summarize(vec![0.0], vec![(1.0, 0.5), (0.0, 0.5)]).unwrap();
        assert_eq!(p.mean, 0.5);
        assert_eq!(p.q05, 0.0);
        assert_eq!(p.q95, 1.0);
        assert_eq!(p.median, 0.5);
        assert_eq!(p.variance, 0.25);
        assert!(p.q05 <= p.q25 && p.q25 <= p.median && p.median <= p.q75 && p.q75 <= p.q95);
    }

    #[test]
    fn all_non_finite_is_an_error() {
        assert!(summarize(vec![0.0], vec![(f64::NAN, 1.0)]).is_err());
    }
}

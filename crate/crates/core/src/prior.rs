//! Fitting the operator prior `p(m) ~ exp(-sum_o alpha_o n_o + beta_o n_o^2)`
//! to target operator statistics.
//!
//! Expectations under the prior are estimated by running the tree sampler
//! with the likelihood switched off, and the coefficients follow a
//! Robbins–Monro iteration on the moment mismatch.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{ExprTree, Node, Operator};
use crate::likelihood::mix;
use crate::sampler::{run_tempered, PriorEnergy, SamplerConfig};
use crate::score::{parse_operator_table, PriorHyperparams};

/// Target mean count and mean squared count per operator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetMoments {
    table: BTreeMap<Operator, (f64, f64)>,
}

impl TargetMoments {
    pub fn new() -> TargetMoments {
        TargetMoments::default()
    }

    pub fn insert(&mut self, op: Operator, mean: f64, mean_square: f64) -> Result<()> {
        if !(mean >= 0.0) || !mean.is_finite() || !mean_square.is_finite() {
            return Err(Error::InvalidData(format!("operator `{op}`: mean must be finite and non-negative")));
        }
        if mean_square < mean * mean * (1.0 - 1e-12) {
            return Err(Error::InvalidData(format!(
                "operator `{op}`: mean_square {mean_square} is below mean^2 = {}",
                mean * mean
            )));
        }
        self.table.insert(op, (mean, mean_square));
        Ok(())
    }

    pub fn get(&self, op: Operator) -> Option<(f64, f64)> {
        self.table.get(&op).copied()
    }

    pub fn operators(&self) -> Vec<Operator> {
        self.table.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Operator, f64, f64)> + '_ {
        self.table.iter().map(|(&op, &(m, s))| (op, m, s))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Tab-separated records `symbol mean mean_square` under a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("symbol\tmean\tmean_square\n");
        for (op, m, s) in self.iter() {
            out.push_str(&format!("{}\t{m}\t{s}\n", op.symbol()));
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<TargetMoments> {
        let mut t = TargetMoments::new();
        for (op, vals) in parse_operator_table(text, &["symbol", "mean", "mean_square"])? {
            t.insert(op, vals[0], vals[1])?;
        }
        if t.is_empty() {
            return Err(Error::InvalidData("no target rows".into()));
        }
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<TargetMoments> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TargetMoments::parse_tsv(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub max_iters: usize,
    /// Convergence threshold on the normalized moment error.
    pub tol: f64,
    /// Draws used for the final moment estimate.
    pub samples: usize,
    /// Draws per stochastic-approximation round.
    pub samples_per_iter: usize,
    /// Independent chains per estimate.
    pub chains: usize,
    pub eta0: f64,
    pub tau: f64,
    pub burn_in: usize,
    pub thin: usize,
    pub initial_alpha: f64,
    pub initial_beta: f64,
    pub seed: u64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            max_iters: 200,
            tol: 0.05,
            samples: 20_000,
            samples_per_iter: 2000,
            chains: 4,
            eta0: 0.5,
            tau: 20.0,
            burn_in: 1000,
            thin: 5,
            initial_alpha: 2.0,
            initial_beta: 0.1,
            seed: 0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("prior.{m}")));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.samples == 0 || self.samples_per_iter == 0 || self.chains == 0 || self.thin == 0 {
            return bad("samples, samples_per_iter, chains and thin must be at least 1");
        }
        if !(self.eta0 > 0.0) || !(self.tau > 0.0) {
            return bad("eta0 and tau must be positive");
        }
        if !self.initial_alpha.is_finite() || !(self.initial_beta >= 0.0) {
            return bad("initial_alpha must be finite and initial_beta non-negative");
        }
        Ok(())
    }
}

/// Mean and mean squared count of one operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub mean_square: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AchievedMoment {
    pub symbol: Operator,
    pub alpha: f64,
    pub beta: f64,
    pub target_mean: f64,
    pub target_mean_square: f64,
    pub mean: f64,
    pub mean_square: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorFitReport {
    pub hyperparams: PriorHyperparams,
    pub achieved: Vec<AchievedMoment>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest normalized moment error of the final estimate.
    pub max_error: f64,
    /// Draws behind the final estimate.
    pub samples: usize,
}

impl PriorFitReport {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            converged: bool,
            iterations: usize,
            max_error: f64,
            samples: usize,
            operators: &'a [AchievedMoment],
        }
        let out = Out {
            converged: self.converged,
            iterations: self.iterations,
            max_error: self.max_error,
            samples: self.samples,
            operators: &self.achieved,
        };
        serde_json::to_string_pretty(&out).expect("report serializes")
    }
}

/// Draws `count` trees from the prior alone with the sampler at `beta = 1`,
/// keeping one state every `sampler.thin` steps after `sampler.burn_in`.
pub fn sample_prior_models(
    hp: &PriorHyperparams,
    sampler: &SamplerConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<ExprTree>> {
    if count == 0 {
        return Err(Error::InvalidConfig("prior sample count must be at least 1".into()));
    }
    hp.check_covers(&sampler.basis)?;
    let cfg = SamplerConfig { betas: vec![1.0], steps: count * sampler.thin, seed, ..sampler.clone() };
    let grammar = cfg.grammar(1);
    let energy = PriorEnergy { hp };
    let mut out = Vec::with_capacity(count);
    run_tempered(&energy, &grammar, &cfg, &ExprTree::new(Node::Param(0)), |_, s| out.push(s.tree.clone()))?;
    Ok(out)
}

/// Operator moments over `trees`.
pub fn operator_moments(trees: &[ExprTree], ops: &[Operator]) -> Vec<Moments> {
    let n = trees.len().max(1) as f64;
    ops.iter()
        .map(|&op| {
            let (s1, s2) = trees.iter().fold((0.0, 0.0), |(a, b), t| {
                let c = f64::from(t.op_counts().get(op));
                (a + c, b + c * c)
            });
            Moments { mean: s1 / n, mean_square: s2 / n }
        })
        .collect()
}

/// Absolute errors below this floor count as relative to it.
const MEAN_FLOOR: f64 = 0.4;

/// `|estimate - target| / max(target, 0.4)`: relative error, or absolute error
/// over 0.4 for near-zero targets.
pub fn moment_error(estimate: f64, target: f64) -> f64 {
    (estimate - target).abs() / target.max(MEAN_FLOOR)
}

fn estimate(
    hp: &PriorHyperparams,
    sampler: &SamplerConfig,
    ops: &[Operator],
    total: usize,
    chains: usize,
    seed: u64,
) -> Result<Vec<Moments>> {
    let per = total.div_ceil(chains);
    let runs: Vec<Vec<ExprTree>> = (0..chains)
        .into_par_iter()
        .map(|c| sample_prior_models(hp, sampler, per, mix(seed, c as u64)))
        .collect::<Result<_>>()?;
    let all: Vec<ExprTree> = runs.into_iter().flatten().collect();
    Ok(operator_moments(&all, ops))
}

fn max_error(m: &[Moments], targets: &TargetMoments, ops: &[Operator]) -> f64 {
    ops.iter()
        .zip(m)
        .map(|(&op, e)| {
            let (mu, s) = targets.get(op).expect("target listed");
            moment_error(e.mean, mu).max(moment_error(e.mean_square, s))
        })
        .fold(0.0, f64::max)
}

/// Fits `(alpha_o, beta_o)` for the operators of `targets` so that prior
/// samples reproduce the target means and mean squares. The sampler's basis
/// is replaced by the target operators. Non-convergence is reported, not
/// raised.
pub fn fit_prior_hyperparams(
    targets: &TargetMoments,
    sampler: &SamplerConfig,
    cfg: &PriorConfig,
) -> Result<PriorFitReport> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(Error::InvalidData("no target moments".into()));
    }
    let ops = targets.operators();
    let sampler = SamplerConfig { basis: ops.clone(), burn_in: cfg.burn_in, thin: cfg.thin, ..sampler.clone() };
    let mut hp = PriorHyperparams::uniform(&ops, cfg.initial_alpha, cfg.initial_beta);

    let mut iterations = 0;
    let mut converged = false;
    let mut last_checked = None;
    for t in 0..cfg.max_iters {
        iterations = t + 1;
        let seed = mix(cfg.seed, t as u64);
        let m = estimate(&hp, &sampler, &ops, cfg.samples_per_iter, cfg.chains, seed)?;
        if max_error(&m, targets, &ops) < cfg.tol {
            let check = estimate(&hp, &sampler, &ops, cfg.samples, cfg.chains, mix(seed, u64::MAX))?;
            let err = max_error(&check, targets, &ops);
            if err < cfg.tol {
                converged = true;
                last_checked = Some(check);
                break;
            }
        }
        let eta = cfg.eta0 / (1.0 + t as f64 / cfg.tau);
        for (&op, e) in ops.iter().zip(&m) {
            let (mu, s) = targets.get(op).expect("target listed");
            let c = hp.get(op)?;
            hp.set(op, c.alpha + eta * (e.mean - mu), (c.beta + eta * (e.mean_square - s)).max(0.0));
        }
    }

    let final_moments = match last_checked {
        Some(m) => m,
        None => estimate(&hp, &sampler, &ops, cfg.samples, cfg.chains, mix(cfg.seed, u64::MAX - 1))?,
    };
    let max_err = max_error(&final_moments, targets, &ops);
    let achieved = ops
        .iter()
        .zip(&final_moments)
        .map(|(&op, e)| {
            let (mu, s) = targets.get(op).expect("target listed");
            let c = hp.get(op).expect("fitted operator");
            AchievedMoment {
                symbol: op,
                alpha: c.alpha,
                beta: c.beta,
                target_mean: mu,
                target_mean_square: s,
                mean: e.mean,
                mean_square: e.mean_square,
                error: moment_error(e.mean, mu).max(moment_error(e.mean_square, s)),
            }
        })
        .collect();
    Ok(PriorFitReport {
        hyperparams: hp,
        achieved,
        iterations,
        converged,
        max_error: max_err,
        samples: cfg.samples.div_ceil(cfg.chains) * cfg.chains,
    })
}

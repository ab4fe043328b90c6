//! Description length of a fitted model: the BIC approximation to the
//! marginal likelihood (optionally refined with the log-determinant of the
//! Fisher information) plus the negative log of the operator prior
//!
//! ```text
//! L(m, D) = B / 2 - ln p(m)
//! B1      = -2 ln p(D | m, theta_hat) + (k + 1) ln N
//! B2      = B1 + ln |I(theta_hat)|
//! ln p(m) = -sum_o (alpha_o n_o + beta_o n_o^2)
//! ```
//!
//! The prior is unnormalized; only differences of description lengths are
//! meaningful.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{ExprTree, Operator};
use crate::likelihood::{fit_params, log_likelihood_mle, Dataset, FitConfig, FitResult, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorCoefficients {
    pub alpha: f64,
    pub beta: f64,
}

/// Per-operator prior coefficients `(alpha_o, beta_o)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriorHyperparams {
    table: BTreeMap<Operator, OperatorCoefficients>,
}

impl PriorHyperparams {
    pub fn new() -> PriorHyperparams {
        PriorHyperparams::default()
    }

    /// Surrogate default table: `alpha = 3, beta = 0.1` for binary operators,
    /// `alpha = 5, beta = 0.2` for unary ones.
    pub fn surrogate(basis: &[Operator]) -> PriorHyperparams {
        let mut hp = PriorHyperparams::new();
        for &op in basis {
            let (alpha, beta) = if op.arity() == 2 { (3.0, 0.1) } else { (5.0, 0.2) };
            hp.set(op, alpha, beta);
        }
        hp
    }

    pub fn uniform(basis: &[Operator], alpha: f64, beta: f64) -> PriorHyperparams {
        let mut hp = PriorHyperparams::new();
        for &op in basis {
            hp.set(op, alpha, beta);
        }
        hp
    }

    pub fn set(&mut self, op: Operator, alpha: f64, beta: f64) {
        self.table.insert(op, OperatorCoefficients { alpha, beta });
    }

    pub fn get(&self, op: Operator) -> Result<OperatorCoefficients> {
        self.table.get(&op).copied().ok_or_else(|| Error::MissingHyperparams(op.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Operator, OperatorCoefficients)> + '_ {
        self.table.iter().map(|(&op, &c)| (op, c))
    }

    pub fn operators(&self) -> impl Iterator<Item = Operator> + '_ {
        self.table.keys().copied()
    }

    /// Every operator of the run's basis must have coefficients.
    pub fn check_covers(&self, basis: &[Operator]) -> Result<()> {
        for &op in basis {
            let c = self.get(op)?;
            if !c.alpha.is_finite() || !(c.beta >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "operator `{op}`: alpha must be finite and beta non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Tab-separated records `symbol alpha beta` under a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("symbol\talpha\tbeta\n");
        for (op, c) in self.iter() {
            out.push_str(&format!("{}\t{}\t{}\n", op.symbol(), c.alpha, c.beta));
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<PriorHyperparams> {
        let mut hp = PriorHyperparams::new();
        for (op, vals) in parse_operator_table(text, &["symbol", "alpha", "beta"])? {
            if vals[1] < 0.0 {
                return Err(Error::InvalidData(format!("operator `{op}`: beta must be non-negative")));
            }
            hp.set(op, vals[0], vals[1]);
        }
        Ok(hp)
    }

    pub fn read(path: &Path) -> Result<PriorHyperparams> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PriorHyperparams::parse_tsv(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Parses `symbol<TAB>v1<TAB>v2` records under the given header.
pub(crate) fn parse_operator_table(text: &str, header: &[&str]) -> Result<Vec<(Operator, Vec<f64>)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let head: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::InvalidData("missing header row".into()))?
        .split('\t')
        .map(str::trim)
        .collect();
    if head != header {
        return Err(Error::InvalidData(format!("expected header `{}`", header.join("\\t"))));
    }
    let mut out: Vec<(Operator, Vec<f64>)> = Vec::new();
    for line in lines {
        let cells: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(Error::InvalidData(format!("malformed record `{line}`")));
        }
        let op = Operator::from_symbol(cells[0]).ok_or_else(|| Error::UnknownOperator(cells[0].into()))?;
        if out.iter().any(|(o, _)| *o == op) {
            return Err(Error::InvalidData(format!("operator `{op}` listed twice")));
        }
        let vals = cells[1..]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::InvalidData(format!("not a finite number: `{c}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((op, vals));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    /// Use the Fisher-refined B2 when its log-determinant is available.
    pub use_fisher: bool,
    /// Relative central-difference step for the observed information.
    pub hessian_step: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig { use_fisher: false, hessian_step: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BicVariant {
    B1,
    B2,
}

/// Fisher information is normalized per observation (Hessian / N).
pub const FISHER_NORMALIZATION: &str = "per-datum";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub neg_log_likelihood_mle: f64,
    pub k: usize,
    pub n: usize,
    pub bic1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fisher_log_det: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bic2: Option<f64>,
    pub neg_log_prior: f64,
    pub description_length: f64,
    pub variant_used: BicVariant,
    pub fisher_normalization: String,
}

pub fn log_prior(tree: &ExprTree, hp: &PriorHyperparams) -> Result<f64> {
    let mut total = 0.0;
    for (op, n) in tree.op_counts().nonzero() {
        let c = hp.get(op)?;
        let n = f64::from(n);
        total += c.alpha * n + c.beta * n * n;
    }
    Ok(-total)
}

/// `2 * neg_log_likelihood + (k + 1) ln N`.
pub fn bic1(neg_log_likelihood: f64, k: usize, n: usize) -> f64 {
    2.0 * neg_log_likelihood + (k as f64 + 1.0) * (n as f64).ln()
}

/// Log-determinant of the per-datum observed information in `(theta, sigma)`
/// at the MLE, from a central-difference Hessian of the negative
/// log-likelihood. `None` when the Hessian is not positive definite or the
/// fit is degenerate.
pub fn fisher_log_det(tree: &ExprTree, fit: &FitResult, data: &Dataset, step: f64) -> Option<f64> {
    if !(fit.sse > 0.0) || !fit.sse.is_finite() {
        return None;
    }
    let theta = fit.theta_hat.slice_for(tree).ok()?;
    let k = theta.len();
    let n = data.n() as f64;
    let mut obj = Objective::new(tree, data);
    // Negative log-likelihood without its constant term; sigma is last.
    let mut nll = |p: &[f64]| -> f64 {
        let sigma = p[k];
        if !(sigma > 0.0) {
            return f64::NAN;
        }
        n * sigma.ln() + obj.sse(&p[..k]) / (2.0 * sigma * sigma)
    };

    let mut center = theta.clone();
    center.push(fit.theta_hat.sigma);
    let dim = k + 1;
    let h: Vec<f64> = center.iter().map(|v| step * (1.0 + v.abs())).collect();
    let f0 = nll(&center);
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    let mut p = center.clone();
    for i in 0..dim {
        p[i] = center[i] + h[i];
        let fp = nll(&p);
        p[i] = center[i] - h[i];
        let fm = nll(&p);
        p[i] = center[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                p[i] = center[i] + si * h[i];
                p[j] = center[j] + sj * h[j];
                let v = nll(&p);
                p[i] = center[i];
                p[j] = center[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess /= n;
    if hess.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = hess.cholesky()?;
    let l = chol.l();
    let log_det: f64 = (0..dim).map(|i| 2.0 * l[(i, i)].ln()).sum();
    log_det.is_finite().then_some(log_det)
}

/// Assembles the breakdown for an already fitted model.
pub fn score_fitted(
    tree: &ExprTree,
    fit: &FitResult,
    data: &Dataset,
    hp: &PriorHyperparams,
    cfg: &ScoreConfig,
    clamp_zero_sse: bool,
) -> Result<ScoreBreakdown> {
    let n = data.n();
    let k = tree.param_count();
    let neg_ll = -log_likelihood_mle(fit.sse, n, clamp_zero_sse)?;
    let b1 = bic1(neg_ll, k, n);
    let neg_log_prior = -log_prior(tree, hp)?;
    let fisher = if cfg.use_fisher { fisher_log_det(tree, fit, data, cfg.hessian_step) } else { None };
    let bic2 = fisher.map(|f| b1 + f);
    let (variant_used, bic) = match bic2 {
        Some(b2) => (BicVariant::B2, b2),
        None => (BicVariant::B1, b1),
    };
    Ok(ScoreBreakdown {
        neg_log_likelihood_mle: neg_ll,
        k,
        n,
        bic1: b1,
        fisher_log_det: fisher,
        bic2,
        neg_log_prior,
        description_length: bic / 2.0 + neg_log_prior,
        variant_used,
        fisher_normalization: FISHER_NORMALIZATION.to_string(),
    })
}

/// Fits `tree` and returns its description length breakdown.
pub fn description_length(
    tree: &ExprTree,
    data: &Dataset,
    hp: &PriorHyperparams,
    fit_cfg: &FitConfig,
    cfg: &ScoreConfig,
) -> Result<(FitResult, ScoreBreakdown)> {
    // Fail fast on operators the prior does not cover.
    log_prior(tree, hp)?;
    let fit = fit_params(tree, data, fit_cfg)?;
    let score = score_fitted(tree, &fit, data, hp, cfg, fit_cfg.clamp_zero_sse)?;
    Ok((fit, score))
}

/// Posterior weights `exp(-L_i) / sum_j exp(-L_j)`.
pub fn weights_from_lengths(lengths: &[f64]) -> Result<Vec<f64>> {
    if lengths.is_empty() {
        return Err(Error::Empty("model list"));
    }
    if let Some(bad) = lengths.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("description length {bad}")));
    }
    let min = lengths.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = lengths.iter().map(|l| (min - l).exp()).collect();
    let z: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / z).collect())
}

pub fn posterior_weights(scores: &[ScoreBreakdown]) -> Result<Vec<f64>> {
    let lengths: Vec<f64> = scores.iter().map(|s| s.description_length).collect();
    weights_from_lengths(&lengths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;

    #[test]
    fn log_prior_examples() {
        let hp = PriorHyperparams::uniform(&[Operator::Add, Operator::Mul], 3.0, 0.1);
        assert_eq!(log_prior(&parse_expression("th0", 1).unwrap(), &hp).unwrap(), 0.0);
        let one = log_prior(&parse_expression("th0 + x0", 1).unwrap(), &hp).unwrap();
        assert!((one + 3.1).abs() < 1e-12);
        let two = log_prior(&parse_expression("th0 + x0 + th1", 1).unwrap(), &hp).unwrap();
        assert!((two + 6.4).abs() < 1e-12);
        assert!(matches!(
            log_prior(&parse_expression("exp(x0)", 1).unwrap(), &hp),
            Err(Error::MissingHyperparams(_))
        ));
    }

    #[test]
    fn bic1_identities() {
        assert_eq!(bic1(0.0, 0, 1), 0.0);
        let (nll, k) = (12.5, 3);
        let diff = bic1(nll, k, 200) - bic1(nll, k, 100);
        assert!((diff - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weights_examples() {
        assert_eq!(weights_from_lengths(&[2.0, 2.0]).unwrap(), vec![0.5, 0.5]);
        let w = weights_from_lengths(&[0.0, 3f64.ln()]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        assert_eq!(weights_from_lengths(&[7.0]).unwrap(), vec![1.0]);
        assert!(weights_from_lengths(&[]).is_err());
        // no underflow for large lengths
        let w = weights_from_lengths(&[1e6, 1e6 + 1.0]).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hyperparameter_table_round_trip() {
        let hp = PriorHyperparams::surrogate(&Operator::DEFAULT_BASIS);
        let back = PriorHyperparams::parse_tsv(&hp.to_tsv()).unwrap();
        assert_eq!(back, hp);
        assert!(PriorHyperparams::parse_tsv("symbol\talpha\tbeta\nfoo\t1\t1\n").is_err());
        assert!(PriorHyperparams::parse_tsv("symbol\talpha\tbeta\n+\t1\t-1\n").is_err());
        assert!(PriorHyperparams::parse_tsv("op\talpha\tbeta\n").is_err());
        assert!(hp.check_covers(&[Operator::Abs]).is_err());
    }

    #[test]
    fn fisher_absent_for_degenerate_fit() {
        let data = Dataset::new(vec![vec![1.0, 2.0, 3.0]], vec![1.0, 1.0, 1.0]).unwrap();
        let t = parse_expression("th0", 1).unwrap();
        let fit = fit_params(&t, &data, &FitConfig::default()).unwrap();
        assert_eq!(fisher_log_det(&t, &fit, &data, 1e-4), None);
    }

    #[test]
    fn fisher_absent_for_flat_direction() {
        // th1 multiplies a zero column: the likelihood is flat along it.
        let data = Dataset::new(vec![vec![0.0; 5]], vec![1.0, 2.0, 0.5, 3.0, 2.5]).unwrap();
        let t = parse_expression("th0 + th1*x0", 1).unwrap();
        let fit = fit_params(&t, &data, &FitConfig::default()).unwrap();
        assert_eq!(fisher_log_det(&t, &fit, &data, 1e-4), None);
        let (_, s) = description_length(
            &t,
            &data,
            &PriorHyperparams::surrogate(&Operator::DEFAULT_BASIS),
            &FitConfig::default(),
            &ScoreConfig { use_fisher: true, ..ScoreConfig::default() },
        )
        .unwrap();
        assert_eq!(s.variant_used, BicVariant::B1);
        assert_eq!(s.bic2, None);
    }
}

//! Maximum-likelihood fitting under additive Gaussian noise.
//!
//! The noise variance is profiled out analytically (`sigma^2 = SSE / N`),
//! so fitting a tree reduces to minimizing its residual sum of squares.
//! The minimizer is a multi-start Nelder–Mead simplex descent; each
//! restart's end point is polished with Levenberg–Marquardt steps.

mod dataset;
mod optimize;

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution};
use serde::{Deserialize, Serialize};

pub use dataset::{parse_numeric_csv, Dataset};

use crate::error::{Error, Result};
use crate::expr::{ExprTree, ParamVector, Program, Workspace};
use optimize::{levenberg_marquardt, nelder_mead, Residuals};

/// Variance floor used when clamping exact fits.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Replace `SSE = 0` by `N * 1e-12` before evaluating the likelihood.
    pub clamp_zero_sse: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { restarts: 10, max_iters: 2000, tolerance: 1e-10, seed: 0, clamp_zero_sse: false }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("fit.restarts must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("fit.tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Fitted parameters; `theta_hat.sigma` is the MLE noise scale.
    pub theta_hat: ParamVector,
    pub sse: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub restarts_used: usize,
}

/// Sum of squared residuals; `+inf` if the model is non-finite anywhere on
/// the data.
pub fn sse(tree: &ExprTree, params: &ParamVector, data: &Dataset) -> Result<f64> {
    tree.check_vars(data.n_features())?;
    let theta = params.slice_for(tree)?;
    let mut obj = Objective::new(tree, data);
    Ok(obj.sse(&theta))
}

/// Gaussian log-likelihood at the MLE,
/// `-(N/2) [ln(2 pi) + ln(SSE/N) + 1]`.
///
/// `SSE = 0` is a degenerate fit (the noise MLE vanishes) and is an error
/// unless `clamp` is set; `SSE = +inf` gives `-inf`.
pub fn log_likelihood_mle(sse: f64, n: usize, clamp: bool) -> Result<f64> {
    if sse.is_nan() || sse < 0.0 {
        return Err(Error::NonFinite(format!("residual sum of squares {sse}")));
    }
    if sse == f64::INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let n_f = n as f64;
    let sse = if clamp { sse.max(n_f * VARIANCE_FLOOR) } else { sse };
    if sse == 0.0 {
        return Err(Error::DegenerateFit);
    }
    Ok(-0.5 * n_f * ((2.0 * PI).ln() + (sse / n_f).ln() + 1.0))
}

/// Fits the parameters of `tree` by least squares.
///
/// Restart `r` draws its starting point from a standard Cauchy distribution
/// seeded by `(cfg.seed, structure signature, r)`, so trees that differ
/// only in parameter names get the same fit and the result does not depend
/// on call order. The lowest-SSE restart wins; ties go to the lowest index.
pub fn fit_params(tree: &ExprTree, data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    tree.check_vars(data.n_features())?;
    let k = tree.param_count();
    let n = data.n();
    if k > n {
        return Err(Error::OverParameterized { k, n });
    }
    let (canon, order) = tree.canonical();
    let base_seed = mix(cfg.seed, crate::expr::fnv1a(canon.to_string().as_bytes()));
    let mut obj = Objective::new(&canon, data);

    let (theta, sse, converged, restarts_used) = if k == 0 {
        (Vec::new(), obj.sse(&[]), true, 0)
    } else {
        let mut best: Option<(Vec<f64>, f64, bool)> = None;
        let cauchy = Cauchy::new(0.0, 1.0).expect("valid Cauchy scale");
        for r in 0..cfg.restarts.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(base_seed, r as u64));
            let start = (0..32).find_map(|_| {
                let x: Vec<f64> = (0..k).map(|_| cauchy.sample(&mut rng)).collect();
                let f = obj.sse(&x);
                f.is_finite().then_some(x)
            });
            let Some(start) = start else { continue };
            let simplex = nelder_mead(&mut |t| obj.sse(t), &start, cfg.max_iters, cfg.tolerance);
            let (theta, s) = levenberg_marquardt(&mut obj, simplex.x, simplex.f, 100);
            if best.as_ref().is_none_or(|b| s < b.1) {
                best = Some((theta, s, simplex.converged));
            }
        }
        match best {
            Some((theta, s, conv)) => (theta, s, conv, cfg.restarts.max(1)),
            None => return Err(Error::Unfittable),
        }
    };
    if !sse.is_finite() {
        return Err(Error::Unfittable);
    }

    let sigma = (sse / n as f64).sqrt();
    let theta_hat = ParamVector::from_pairs(order.iter().copied().zip(theta)).with_sigma(sigma);
    let log_likelihood = match log_likelihood_mle(sse, n, cfg.clamp_zero_sse) {
        Ok(ll) => ll,
        Err(Error::DegenerateFit) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok(FitResult { theta_hat, sse, log_likelihood, converged, restarts_used })
}

/// SplitMix64 finalizer over a combined seed.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Residual machinery for one (tree, dataset) pair. Parameters are ordered
/// as `tree.params()`.
pub(crate) struct Objective<'a> {
    program: Program,
    data: &'a Dataset,
    ws: Workspace,
}

impl<'a> Objective<'a> {
    pub(crate) fn new(tree: &ExprTree, data: &'a Dataset) -> Objective<'a> {
        Objective { program: Program::compile(tree), data, ws: Workspace::new() }
    }

    pub(crate) fn sse(&mut self, theta: &[f64]) -> f64 {
        let n = self.data.n();
        let pred = self.program.eval(theta, self.data.columns(), n, &mut self.ws);
        let mut s = 0.0;
        for (p, y) in pred.iter().zip(self.data.target()) {
            let r = y - p;
            s += r * r;
        }
        if s.is_finite() && pred.iter().all(|p| p.is_finite()) {
            s
        } else {
            f64::INFINITY
        }
    }
}

impl Residuals for Objective<'_> {
    fn n_obs(&self) -> usize {
        self.data.n()
    }

    fn predict(&mut self, theta: &[f64], out: &mut [f64]) -> bool {
        let n = self.data.n();
        let pred = self.program.eval(theta, self.data.columns(), n, &mut self.ws);
        out.copy_from_slice(pred);
        out.iter().all(|v| v.is_finite())
    }

    fn target(&self) -> &[f64] {
        self.data.target()
    }
}

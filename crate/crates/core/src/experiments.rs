//! Synthetic data from known processes and grids of recovery runs over
//! sample size and noise level.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{evaluate, parse_expression, parse_param_name, ExprTree, ParamVector};
use crate::likelihood::{fit_params, mix, Dataset, FitConfig};
use crate::sampler::{map_model, sample_posterior, write_trace, SamplerConfig};
use crate::score::{PriorHyperparams, ScoreConfig};

/// A data-generating process `y = m(x, theta) + N(0, sigma^2)` with
/// features drawn uniformly from `[xlow, xhigh]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub model: String,
    #[serde(default)]
    pub theta: BTreeMap<String, f64>,
    pub sigma: f64,
    pub n: usize,
    #[serde(default = "default_xlow")]
    pub xlow: f64,
    #[serde(default = "default_xhigh")]
    pub xhigh: f64,
    /// Defaults to the number of variables the model uses, at least 1.
    #[serde(default)]
    pub n_features: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_xlow() -> f64 {
    -5.0
}

fn default_xhigh() -> f64 {
    5.0
}

impl GeneratorSpec {
    /// `th0 + th1 * x0` with `(th0, th1) = (-2.3, 4.1)`.
    pub fn linear(sigma: f64, n: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            model: "th0 + th1 * x0".into(),
            theta: [("th0".to_string(), -2.3), ("th1".to_string(), 4.1)].into(),
            sigma,
            n,
            xlow: -5.0,
            xhigh: 5.0,
            n_features: None,
            seed,
        }
    }

    /// `th0` with `th0 = 31`.
    pub fn constant(sigma: f64, n: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            model: "th0".into(),
            theta: [("th0".to_string(), 31.0)].into(),
            n_features: Some(1),
            ..GeneratorSpec::linear(sigma, n, seed)
        }
    }

    pub fn from_toml(text: &str) -> Result<GeneratorSpec> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<GeneratorSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GeneratorSpec::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("generator spec serializes")
    }

    /// Parses the model and checks the spec's invariants.
    pub fn resolve(&self) -> Result<(ExprTree, ParamVector, usize)> {
        let tree = parse_expression(&self.model, usize::MAX)?;
        let d = self.n_features.unwrap_or(tree.n_vars().max(1));
        tree.check_vars(d)?;
        if self.n == 0 {
            return Err(Error::InvalidConfig("generator n must be at least 1".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig("generator sigma must be finite and non-negative".into()));
        }
        if !(self.xlow < self.xhigh) || !self.xlow.is_finite() || !self.xhigh.is_finite() {
            return Err(Error::InvalidConfig("generator needs finite xlow < xhigh".into()));
        }
        let mut params = ParamVector::new();
        for (name, &v) in &self.theta {
            let id = parse_param_name(name)
                .ok_or_else(|| Error::InvalidConfig(format!("`{name}` is not a parameter name")))?;
            params.insert(id, v);
        }
        params.slice_for(&tree)?;
        Ok((tree, params, d))
    }

    /// Noiseless model value at `x`.
    pub fn true_value(&self, x: &[f64]) -> Result<f64> {
        let (tree, params, _) = self.resolve()?;
        evaluate(&tree, &params, x)
    }
}

/// Draws a dataset from `spec`. Rows are generated in order, each drawing
/// its features and then its noise term from one seeded stream.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    let (tree, params, d) = spec.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut columns = vec![Vec::with_capacity(spec.n); d];
    let mut target = Vec::with_capacity(spec.n);
    let mut row = vec![0.0; d];
    for _ in 0..spec.n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = rng.random_range(spec.xlow..spec.xhigh);
            columns[j].push(*v);
        }
        let clean = evaluate(&tree, &params, &row)?;
        if !clean.is_finite() {
            return Err(Error::NonFinite(format!("ground truth `{}` at x = {row:?}", spec.model)));
        }
        let eps = if spec.sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        target.push(clean + eps);
    }
    Dataset::new(columns, target)
}

/// Query points spanning the input range: an even grid in one dimension,
/// seeded uniform draws otherwise.
pub fn dense_points(spec: &GeneratorSpec, d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    if d == 1 {
        let step = (spec.xhigh - spec.xlow) / (count.max(2) - 1) as f64;
        return (0..count).map(|i| vec![spec.xlow + step * i as f64]).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..d).map(|_| rng.random_range(spec.xlow..spec.xhigh)).collect()).collect()
}

/// RMS difference between two models over `points`; `+inf` if either is
/// non-finite anywhere.
pub fn rms_difference(
    a: &ExprTree,
    pa: &ParamVector,
    b: &ExprTree,
    pb: &ParamVector,
    points: &[Vec<f64>],
) -> Result<f64> {
    let mut s = 0.0;
    for x in points {
        let diff = evaluate(a, pa, x)? - evaluate(b, pb, x)?;
        if !diff.is_finite() {
            return Ok(f64::INFINITY);
        }
        s += diff * diff;
    }
    Ok((s / points.len().max(1) as f64).sqrt())
}

/// Whether `candidate` and `truth` describe the same family of functions
/// over `[xlow, xhigh]^d`: identical signatures, or the same parameter
/// count and each reproducing noiseless output of the other at random
/// parameter values.
pub fn equivalent_structures(candidate: &ExprTree, truth: &ExprTree, d: usize, xlow: f64, xhigh: f64, seed: u64) -> bool {
    if candidate.signature() == truth.signature() {
        return true;
    }
    if candidate.param_count() != truth.param_count() {
        return false;
    }
    let spec = GeneratorSpec {
        model: String::new(),
        theta: BTreeMap::new(),
        sigma: 0.0,
        n: 0,
        xlow,
        xhigh,
        n_features: Some(d),
        seed,
    };
    let points = dense_points(&spec, d, 40, seed);
    reproduces(candidate, truth, &points, seed) && reproduces(truth, candidate, &points, mix(seed, 1))
}

/// Fits `target` to noiseless output of `source` at two random parameter
/// settings with `|theta|` in `[0.5, 3]`.
fn reproduces(source: &ExprTree, target: &ExprTree, points: &[Vec<f64>], seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = points.first().map_or(0, Vec::len);
    let columns: Vec<Vec<f64>> = (0..d).map(|j| points.iter().map(|p| p[j]).collect()).collect();
    let mut trials = 0;
    for _ in 0..50 {
        if trials == 2 {
            return true;
        }
        let theta: Vec<f64> = source
            .params()
            .iter()
            .map(|_| rng.random_range(0.5..3.0) * if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let pv = ParamVector::for_tree(source, &theta, 0.0);
        let Ok(y) = points.iter().map(|x| evaluate(source, &pv, x)).collect::<Result<Vec<f64>>>() else {
            return false;
        };
        if y.iter().any(|v| !v.is_finite()) {
            continue;
        }
        trials += 1;
        let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(1e-300);
        let Ok(data) = Dataset::new(columns.clone(), y) else { return false };
        let cfg = FitConfig { clamp_zero_sse: true, seed, ..FitConfig::default() };
        match fit_params(target, &data, &cfg) {
            Ok(fit) if fit.sse / scale < 1e-9 => {}
            _ => return false,
        }
    }
    trials == 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub ns: Vec<usize>,
    pub sigmas: Vec<f64>,
    /// Cells run concurrently.
    pub workers: usize,
    /// Points on which curves and reducible error are evaluated.
    pub dense_points: usize,
    pub seed: u64,
    /// Also write each cell's sampler trace.
    pub write_traces: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            ns: vec![10, 100, 1000],
            sigmas: vec![0.05, 0.5, 5.0, 50.0],
            workers: 1,
            dense_points: 201,
            seed: 0,
            write_traces: true,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.sigmas.is_empty() {
            return Err(Error::InvalidConfig("experiment grid needs at least one n and one sigma".into()));
        }
        if self.ns.contains(&0) || self.sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("experiment grid needs n >= 1 and finite sigma >= 0".into()));
        }
        if self.dense_points < 2 {
            return Err(Error::InvalidConfig("experiment.dense_points must be at least 2".into()));
        }
        Ok(())
    }

    /// Seed of cell `(n, sigma)`.
    pub fn cell_seed(&self, n: usize, sigma: f64) -> u64 {
        mix(mix(self.seed, n as u64), sigma.to_bits())
    }
}

/// Everything needed to score and search one dataset.
#[derive(Debug, Clone)]
pub struct SearchSettings {
    pub hp: PriorHyperparams,
    pub fit: FitConfig,
    pub score: ScoreConfig,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub map_expression: String,
    pub map_dl: f64,
    pub matched: bool,
    pub theta_hat: ParamVector,
    pub reducible_error: f64,
    pub models_scored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub outcome: std::result::Result<CellSummary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub cells: Vec<CellResult>,
}

impl GridResult {
    pub fn summary_tsv(&self) -> String {
        let mut out = String::from("N\tsigma\tmap_expression\tmatch\treducible_error\tdl\tstatus\n");
        for c in &self.cells {
            match &c.outcome {
                Ok(s) => out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\tok\n",
                    c.n, c.sigma, s.map_expression, s.matched, s.reducible_error, s.map_dl
                )),
                Err(e) => out.push_str(&format!("{}\t{}\t\t\t\t\terror: {}\n", c.n, c.sigma, e.replace(['\t', '\n'], " "))),
            }
        }
        out
    }
}

fn write(path: PathBuf, text: String) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn curve_tsv(points: &[Vec<f64>], values: &[f64], names: &[String], value_name: &str) -> String {
    let mut out = names.join("\t");
    out.push('\t');
    out.push_str(value_name);
    out.push('\n');
    for (x, v) in points.iter().zip(values) {
        for xi in x {
            out.push_str(&format!("{xi}\t"));
        }
        out.push_str(&format!("{v}\n"));
    }
    out
}

/// Generates, searches and evaluates one cell. Writes plot data to `dir`.
pub fn run_cell(
    base: &GeneratorSpec,
    n: usize,
    sigma: f64,
    seed: u64,
    settings: &SearchSettings,
    dense: usize,
    dir: Option<&Path>,
    write_traces: bool,
) -> Result<CellSummary> {
    let spec = GeneratorSpec { n, sigma, seed, ..base.clone() };
    let (truth, theta_star, d) = spec.resolve()?;
    let data = generate(&spec)?;
    let sampler = SamplerConfig { seed: mix(seed, 1), ..settings.sampler.clone() };
    let fit = FitConfig { seed: mix(seed, 2), ..settings.fit.clone() };
    let trace = sample_posterior(&data, &settings.hp, &fit, &settings.score, &sampler)?;
    let map = map_model(&trace)?;
    let points = dense_points(&spec, d, dense, mix(seed, 3));
    let reducible = rms_difference(&map.tree, &map.fit.theta_hat, &truth, &theta_star, &points)?;
    let matched = equivalent_structures(&map.tree, &truth, d, spec.xlow, spec.xhigh, mix(seed, 4));

    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let names: Vec<String> = data.feature_names().to_vec();
        let rows: Vec<Vec<f64>> = (0..data.n()).map(|k| data.row(k)).collect();
        write(dir.join("points.tsv"), curve_tsv(&rows, data.target(), &names, "y"))?;
        let map_vals: Vec<f64> = points
            .iter()
            .map(|x| evaluate(&map.tree, &map.fit.theta_hat, x).unwrap_or(f64::NAN))
            .collect();
        write(dir.join("map_curve.tsv"), curve_tsv(&points, &map_vals, &names, "y_hat"))?;
        let true_vals: Vec<f64> = points
            .iter()
            .map(|x| evaluate(&truth, &theta_star, x).unwrap_or(f64::NAN))
            .collect();
        write(dir.join("true_curve.tsv"), curve_tsv(&points, &true_vals, &names, "y_true"))?;
        if write_traces {
            write_trace(&trace, &dir.join("trace.jsonl"))?;
        }
    }
    Ok(CellSummary {
        map_expression: map.tree.to_string(),
        map_dl: map.score.description_length,
        matched,
        theta_hat: map.fit.theta_hat.clone(),
        reducible_error: reducible,
        models_scored: trace.models_scored,
    })
}

/// Runs every `(n, sigma)` cell of the grid. A failing cell is recorded and
/// does not stop the others. With `out_dir`, writes per-cell plot data under
/// `N{n}_sigma{sigma}/` and a `summary.tsv`.
pub fn run_grid(
    base: &GeneratorSpec,
    grid: &GridConfig,
    settings: &SearchSettings,
    out_dir: Option<&Path>,
) -> Result<GridResult> {
    grid.validate()?;
    base.resolve()?;
    settings.sampler.validate()?;
    settings.fit.validate()?;
    let cells: Vec<(usize, f64)> =
        grid.ns.iter().flat_map(|&n| grid.sigmas.iter().map(move |&s| (n, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(n, sigma)| {
                let seed = grid.cell_seed(n, sigma);
                let dir = out_dir.map(|d| d.join(format!("N{n}_sigma{sigma}")));
                let outcome = run_cell(base, n, sigma, seed, settings, grid.dense_points, dir.as_deref(), grid.write_traces)
                    .map_err(|e| e.to_string());
                CellResult { n, sigma, seed, outcome }
            })
            .collect()
    });
    let result = GridResult { cells: results };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(dir.join("summary.tsv"), result.summary_tsv())?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_linear_lies_on_line() {
        let d = generate(&GeneratorSpec::linear(0.0, 50, 3)).unwrap();
        for k in 0..d.n() {
            let x = d.columns()[0][k];
            assert_eq!(d.target()[k], -2.3 + 4.1 * x);
            assert!((-5.0..5.0).contains(&x));
        }
        let one = generate(&GeneratorSpec::linear(0.0, 1, 3)).unwrap();
        assert_eq!(one.n(), 1);
    }

    #[test]
    fn constant_process_mean() {
        let d = generate(&GeneratorSpec::constant(0.05, 1000, 1)).unwrap();
        let mean = d.target().iter().sum::<f64>() / 1000.0;
        assert!((mean - 31.0).abs() < 0.01);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&GeneratorSpec::linear(-1.0, 10, 0)).is_err());
        assert!(generate(&GeneratorSpec::linear(1.0, 0, 0)).is_err());
        let spec = GeneratorSpec { xlow: 1.0, xhigh: 1.0, ..GeneratorSpec::linear(1.0, 10, 0) };
        assert!(generate(&spec).is_err());
        let spec = GeneratorSpec { model: "log(x0)".into(), ..GeneratorSpec::linear(1.0, 10, 0) };
        assert!(matches!(generate(&spec), Err(Error::NonFinite(_))));
    }

    #[test]
    fn toml_round_trip() {
        let spec = GeneratorSpec::linear(0.5, 100, 7);
        assert_eq!(GeneratorSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        let parsed = GeneratorSpec::from_toml(
            "model = \"th0\"\nsigma = 0.05\nn = 10\nxlow = -5\nxhigh = 5\nseed = 1\n[theta]\nth0 = 31\n",
        )
        .unwrap();
        assert_eq!(parsed.theta["th0"], 31.0);
        assert!(GeneratorSpec::from_toml("model = \"th0\"\nsigma = 1\nn = 1\nbogus = 2\n").is_err());
    }

    #[test]
    fn equivalence_of_reparametrized_lines() {
        let truth = parse_expression("th0 + th1 * x0", 1).unwrap();
        for (expr, same) in [
            ("th0 + th1 * x0", true),
            ("(x0 * th0) - th1", true),
            ("(th0 + x0) / th1", true),
            ("th0 * (th1 + x0)", true),
            ("th0 + th1 * sin(x0)", false),
            ("th0 * x0", false),
            ("th0 + th1 * x0 * x0", false),
        ] {
            let cand = parse_expression(expr, 1).unwrap();
            assert_eq!(equivalent_structures(&cand, &truth, 1, -5.0, 5.0, 1), same, "{expr}");
        }
    }
}

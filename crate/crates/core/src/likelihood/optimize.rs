//! Local minimizers used by the parameter fitter: Nelder–Mead simplex
//! descent and a Levenberg–Marquardt polish on finite-difference Jacobians.

use nalgebra::{DMatrix, DVector};

pub(crate) struct SimplexOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub converged: bool,
}

/// Minimizes `f` from `x0`. Non-finite objective values must be reported
/// as `+inf`. Stops once the spread of objective values over the simplex
/// has stayed below `tol * (1 + |f_best|)` for `n + 1` consecutive
/// iterations, or after `max_iters` iterations.
pub(crate) fn nelder_mead(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    max_iters: usize,
    tol: f64,
) -> SimplexOutcome {
    let n = x0.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        let step = if x0[i].abs() > 1e-8 { 0.1 * x0[i].abs() } else { 0.1 };
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut converged = false;
    let mut flat = 0;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];

    for _ in 0..max_iters {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let (best, worst) = (vals[0], vals[n]);
        if worst.is_finite() && worst - best <= tol * (1.0 + best.abs()) {
            flat += 1;
            if flat > n {
                converged = true;
                break;
            }
        } else {
            flat = 0;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for p in &pts[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64, out: &mut Vec<f64>, worst: &[f64], c: &[f64]| {
            for ((o, &w), &cc) in out.iter_mut().zip(worst).zip(c) {
                *o = cc + t * (cc - w);
            }
        };

        along(1.0, &mut trial, &pts[n], &centroid);
        let fr = f(&trial);
        if fr < vals[0] {
            let reflected = trial.clone();
            along(2.0, &mut trial, &pts[n], &centroid);
            let fe = f(&trial);
            if fe < fr {
                pts[n].copy_from_slice(&trial);
                vals[n] = fe;
            } else {
                pts[n] = reflected;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n].copy_from_slice(&trial);
            vals[n] = fr;
            continue;
        }
        let (t, reference) = if fr < vals[n] { (0.5, fr) } else { (-0.5, vals[n]) };
        along(t, &mut trial, &pts[n], &centroid);
        let fc = f(&trial);
        if fc < reference || (t > 0.0 && fc <= reference) {
            pts[n].copy_from_slice(&trial);
            vals[n] = fc;
            continue;
        }
        // Shrink towards the best vertex.
        let best_pt = pts[0].clone();
        for i in 1..=n {
            for (v, &b) in pts[i].iter_mut().zip(&best_pt) {
                *v = b + 0.5 * (*v - b);
            }
            vals[i] = f(&pts[i]);
        }
    }

    let i = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    SimplexOutcome { x: pts[i].clone(), f: vals[i], converged }
}

/// Least-squares problem seen by the Levenberg–Marquardt polish.
pub(crate) trait Residuals {
    fn n_obs(&self) -> usize;
    /// Model predictions at `theta`, or `None` if any is non-finite.
    fn predict(&mut self, theta: &[f64], out: &mut [f64]) -> bool;
    fn target(&self) -> &[f64];
}

fn sse_of(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (t - p) * (t - p)).sum()
}

/// Refines `theta` by damped Gauss–Newton steps with a central-difference
/// Jacobian. Never raises the residual sum of squares. Stops on a
/// negligible step or after five steps without relative progress.
pub(crate) fn levenberg_marquardt<R: Residuals>(
    problem: &mut R,
    theta: Vec<f64>,
    sse: f64,
    max_iters: usize,
) -> (Vec<f64>, f64) {
    let k = theta.len();
    let n = problem.n_obs();
    if k == 0 || !sse.is_finite() {
        return (theta, sse);
    }
    let mut theta = theta;
    let mut sse = sse;
    let mut lambda = 1e-3;
    let mut stalled = 0;
    let mut pred = vec![0.0; n];
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut jac = DMatrix::<f64>::zeros(n, k);

    for _ in 0..max_iters {
        if !problem.predict(&theta, &mut pred) {
            break;
        }
        let mut ok = true;
        for j in 0..k {
            let h = 1e-6 * (1.0 + theta[j].abs());
            let mut t = theta.clone();
            t[j] = theta[j] + h;
            ok &= problem.predict(&t, &mut plus);
            t[j] = theta[j] - h;
            ok &= problem.predict(&t, &mut minus);
            if !ok {
                break;
            }
            for r in 0..n {
                jac[(r, j)] = (plus[r] - minus[r]) / (2.0 * h);
            }
        }
        if !ok {
            break;
        }
        let resid = DVector::from_iterator(n, problem.target().iter().zip(&pred).map(|(y, p)| y - p));
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * resid;
        let max_diag = (0..k).map(|j| jtj[(j, j)]).fold(0.0, f64::max);
        if !(max_diag > 0.0) || !max_diag.is_finite() {
            break;
        }

        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for j in 0..k {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-12 * max_diag);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&jtr);
            let candidate: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            if problem.predict(&candidate, &mut plus) {
                let s = sse_of(&plus, problem.target());
                // Equal SSE is accepted: near the optimum the objective is
                // flat to rounding while the normal equations still resolve
                // the parameters.
                if s <= sse {
                    let tiny = step
                        .iter()
                        .zip(&theta)
                        .all(|(d, t)| d.abs() <= 1e-13 * (1.0 + t.abs()));
                    stalled = if sse - s <= 1e-14 * sse { stalled + 1 } else { 0 };
                    theta = candidate;
                    sse = s;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if tiny || stalled >= 5 {
                        return (theta, sse);
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (theta, sse)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_finds_rosenbrock_minimum() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let out = nelder_mead(&mut f, &[-1.2, 1.0], 5000, 1e-14);
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4, "{:?}", out.x);
    }

    #[test]
    fn simplex_handles_infinite_regions() {
        let mut f = |x: &[f64]| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 2.0).powi(2) };
        let out = nelder_mead(&mut f, &[0.5], 2000, 1e-12);
        assert!((out.x[0] - 2.0).abs() < 1e-4);
    }

    struct Exp {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl Residuals for Exp {
        fn n_obs(&self) -> usize {
            self.x.len()
        }
        fn predict(&mut self, t: &[f64], out: &mut [f64]) -> bool {
            for (o, x) in out.iter_mut().zip(&self.x) {
                *o = t[0] * (t[1] * x).exp();
            }
            out.iter().all(|v| v.is_finite())
        }
        fn target(&self) -> &[f64] {
            &self.y
        }
    }

    #[test]
    fn polish_reaches_exact_fit() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 10.0).collect();
        let y = x.iter().map(|x| 1.5 * (-0.7 * x).exp()).collect();
        let mut p = Exp { x, y };
        let mut pred = vec![0.0; 20];
        p.predict(&[1.0, -0.5], &mut pred);
        let s0 = sse_of(&pred, &p.y);
        let (t, s) = levenberg_marquardt(&mut p, vec![1.0, -0.5], s0, 200);
        assert!(s < 1e-20, "sse {s}");
        assert!((t[0] - 1.5).abs() < 1e-9 && (t[1] + 0.7).abs() < 1e-9);
    }
}

//! COBYLA: derivative-free minimization by linear approximation on a simplex.
//!
//! Unconstrained variant. The optimizer keeps `n + 1` evaluated points (a
//! pole, which is always the best point seen, plus `n` vertices), fits the
//! linear interpolant through them and steps to the boundary of the trust
//! region along the negative model gradient.
//!
//! Two radii are tracked. `rho` is the resolution: it only ever shrinks, from
//! `rho_begin` to `rho_end`. The trust radius is at least `rho`; it grows after
//! steps whose actual reduction agrees with the model and shrinks back after
//! poor ones. When a step fails at `radius == rho`, the simplex geometry is
//! repaired first and only then is `rho` halved.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on vertex distance to the opposite face, as a fraction of the trust radius.
const ALPHA: f64 = 0.25;
/// Upper bound on vertex distance from the pole, as a multiple of the trust radius.
const BETA: f64 = 2.1;
/// Geometry-repair step length, as a fraction of the trust radius.
const GAMMA: f64 = 0.5;
/// Vertices farther than `DELTA * step` from a successful trial are preferred for replacement.
const DELTA: f64 = 1.1;
/// Simplex conditioning above which the offsets are rebuilt orthogonally.
const MAX_CONDITION: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CobylaSettings {
    pub rho_begin: f64,
    pub rho_end: f64,
    /// Evaluation budget; `None` means `100 * arity`.
    pub max_evals: Option<usize>,
}

impl Default for CobylaSettings {
    fn default() -> Self {
        CobylaSettings {
            rho_begin: 1.0,
            rho_end: 1e-4,
            max_evals: None,
        }
    }
}

impl CobylaSettings {
    pub fn budget(&self, arity: usize) -> usize {
        self.max_evals.unwrap_or(100 * arity)
    }
}

/// Incumbent snapshot taken whenever the best point changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Evaluation count at which the point was accepted.
    pub evaluation: usize,
    pub params: Vec<f64>,
    pub value: f64,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub best_params: Vec<f64>,
    pub best_value: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

/// Flat optimizer log row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub cost: f64,
    pub rho: f64,
}

pub fn record_trace(result: &OptimResult) -> Vec<IterationRow> {
    result
        .trace
        .iter()
        .enumerate()
        .map(|(i, t)| IterationRow { iteration: i, cost: t.value, rho: t.rho })
        .collect()
}

/// Writes `iteration,cost,rho` rows with a header.
pub fn write_trace_csv<W: Write>(rows: &[IterationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Budget exhausted; carries no data since the incumbent is tracked by the caller.
struct OutOfBudget;

struct Evaluator<F> {
    f: F,
    evals: usize,
    budget: usize,
}

impl<F: FnMut(&[f64]) -> f64> Evaluator<F> {
    fn eval(&mut self, x: &[f64]) -> Result<std::result::Result<f64, OutOfBudget>> {
        if self.evals >= self.budget {
            return Ok(Err(OutOfBudget));
        }
        self.evals += 1;
        let v = (self.f)(x);
        if !v.is_finite() {
            return Err(Error::Numerical {
                message: format!("objective returned {v}"),
                point: Some(x.to_vec()),
            });
        }
        Ok(Ok(v))
    }
}

struct Simplex {
    pole: Vec<f64>,
    f_pole: f64,
    vertices: Vec<Vec<f64>>,
    f_vertices: Vec<f64>,
}

impl Simplex {
    fn offsets(&self) -> DMatrix<f64> {
        let n = self.pole.len();
        DMatrix::from_fn(n, n, |i, j| self.vertices[j][i] - self.pole[i])
    }

    /// Swaps the best vertex into the pole; returns true if the pole moved.
    fn promote_best(&mut self) -> bool {
        let best = self
            .f_vertices
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < self.f_pole)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j);
        match best {
            Some(j) => {
                std::mem::swap(&mut self.pole, &mut self.vertices[j]);
                std::mem::swap(&mut self.f_pole, &mut self.f_vertices[j]);
                true
            }
            None => false,
        }
    }
}

fn shifted(base: &[f64], step: &DVector<f64>) -> Vec<f64> {
    base.iter().zip(step.iter()).map(|(b, s)| b + s).collect()
}

/// Minimizes `f` from `x0`.
///
/// Returns the best point found. `converged` is true iff `rho` reached
/// `rho_end` before the evaluation budget ran out.
pub fn cobyla_minimize<F>(f: F, x0: &[f64], rho_begin: f64, rho_end: f64, max_evals: usize) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::Argument("cannot optimize over zero parameters".into()));
    }
    if !(rho_end > 0.0 && rho_begin > rho_end) {
        return Err(Error::Argument(format!(
            "need rho_begin > rho_end > 0, got {rho_begin} and {rho_end}"
        )));
    }
    if max_evals < n + 2 {
        return Err(Error::Argument(format!("budget {max_evals} below arity + 2 = {}", n + 2)));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { message: "non-finite start point".into(), point: Some(x0.to_vec()) });
    }

    let mut ev = Evaluator { f, evals: 0, budget: max_evals };
    let mut rho = rho_begin;
    let mut radius = rho_begin;
    let mut trace = Vec::new();

    let f0 = ev.eval(x0)?.unwrap_or(f64::NAN);
    trace.push(TraceEntry { evaluation: 1, params: x0.to_vec(), value: f0, rho });
    let mut sx = Simplex { pole: x0.to_vec(), f_pole: f0, vertices: Vec::with_capacity(n), f_vertices: Vec::with_capacity(n) };
    for j in 0..n {
        let mut v = x0.to_vec();
        v[j] += rho;
        // budget >= n + 2 so the initial simplex always fits
        let fv = ev.eval(&v)?.unwrap_or(f64::NAN);
        sx.vertices.push(v);
        sx.f_vertices.push(fv);
    }

    let mut repair_pending = false;
    let mut converged = false;

    let outcome: std::result::Result<(), OutOfBudget> = 'main: loop {
        if sx.promote_best() {
            trace.push(TraceEntry { evaluation: ev.evals, params: sx.pole.clone(), value: sx.f_pole, rho });
        }

        let offsets = sx.offsets();
        let svd = offsets.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let inverse = if smin > 0.0 && smax / smin <= MAX_CONDITION {
            offsets.clone().try_inverse()
        } else {
            None
        };
        let Some(inverse) = inverse else {
            // rebuild the offsets as rho times an orthonormal basis
            let q = offsets.qr().q();
            for j in 0..n {
                let step = q.column(j) * rho;
                let v = shifted(&sx.pole, &step.into_owned());
                match ev.eval(&v)? {
                    Ok(fv) => {
                        sx.vertices[j] = v;
                        sx.f_vertices[j] = fv;
                    }
                    Err(e) => break 'main Err(e),
                }
            }
            continue;
        };

        let df = DVector::from_iterator(n, sx.f_vertices.iter().map(|v| v - sx.f_pole));
        let grad = inverse.transpose() * &df;

        if repair_pending {
            repair_pending = false;
            let row_norms: Vec<f64> = (0..n).map(|j| inverse.row(j).norm()).collect();
            let face_dist: Vec<f64> = row_norms.iter().map(|r| 1.0 / r).collect();
            let edge_len: Vec<f64> = (0..n).map(|j| offsets.column(j).norm()).collect();
            let (j_far, &far) = edge_len.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            let (j_flat, &flat) = face_dist.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            let acceptable = far <= BETA * radius && flat >= ALPHA * radius;
            if !acceptable {
                let l = if far > BETA * radius { j_far } else { j_flat };
                let normal = inverse.row(l).transpose() / row_norms[l];
                let mut step = normal * (GAMMA * radius);
                if grad.dot(&step) > 0.0 {
                    step = -step;
                }
                let v = shifted(&sx.pole, &step);
                match ev.eval(&v)? {
                    Ok(fv) => {
                        sx.vertices[l] = v;
                        sx.f_vertices[l] = fv;
                    }
                    Err(e) => break 'main Err(e),
                }
                continue;
            }
            if radius > rho {
                // the radius already shrank; retry the model step at the new radius
                continue;
            }
            if rho <= rho_end {
                converged = true;
                break 'main Ok(());
            }
            rho *= 0.5;
            if rho <= 1.5 * rho_end {
                rho = rho_end;
            }
            radius = rho;
            continue;
        }

        let gnorm = grad.norm();
        if gnorm == 0.0 || !gnorm.is_finite() {
            repair_pending = true;
            continue;
        }
        let step = &grad * (-radius / gnorm);
        let trial = shifted(&sx.pole, &step);
        let f_trial = match ev.eval(&trial)? {
            Ok(v) => v,
            Err(e) => break 'main Err(e),
        };
        let predicted = radius * gnorm;
        let actual = sx.f_pole - f_trial;
        let ratio = actual / predicted;
        let step_len = radius;
        radius = if ratio <= 0.1 {
            0.5 * step_len
        } else if ratio <= 0.7 {
            (0.5 * radius).max(step_len)
        } else {
            (0.5 * radius).max(2.0 * step_len)
        };
        if radius <= 1.5 * rho {
            radius = rho;
        }

        // replacing vertex j scales the simplex volume by |sigma_j|
        let sigma = &inverse * &step;
        let drop = if actual > 0.0 {
            (0..n)
                .map(|j| {
                    let dist = offsets.column(j).metric_distance(&step);
                    let far = (dist / (DELTA * step_len)).max(1.0);
                    (j, sigma[j].abs() * far * far)
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(j, _)| j)
        } else {
            (0..n)
                .map(|j| (j, sigma[j].abs()))
                .filter(|&(_, s)| s > 1.0)
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(j, _)| j)
        };
        if let Some(j) = drop {
            sx.vertices[j] = trial;
            sx.f_vertices[j] = f_trial;
        }
        if ratio <= 0.1 {
            repair_pending = true;
        }
    };

    if outcome.is_err() && sx.promote_best() {
        trace.push(TraceEntry { evaluation: ev.evals, params: sx.pole.clone(), value: sx.f_pole, rho });
    }
    Ok(OptimResult {
        best_params: sx.pole,
        best_value: sx.f_pole,
        n_evals: ev.evals,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn rosenbrock(x: &[f64]) -> f64 {
        100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
    }

    #[test]
    fn sphere_bowl() {
        let r = cobyla_minimize(sphere, &[1.0, 1.0], 1.0, 1e-4, 200).unwrap();
        assert!(r.best_value < 1e-6, "{r:?}");
        assert!(r.n_evals <= 200);
    }

    #[test]
    fn rosenbrock_valley_progress() {
        // linear models crawl along the curved valley; the 1e-2 target at this
        // budget is checked (and currently missed) by the acceptance suite
        let r = cobyla_minimize(rosenbrock, &[-1.2, 1.0], 1.0, 1e-6, 2000).unwrap();
        assert!(r.best_value < 1e-2, "{r:?}");
        assert!(r.best_params[0] > 0.9 && r.best_params[1] > 0.8);
        let rows = record_trace(&r);
        assert_eq!(rows.last().unwrap().cost, r.best_value);
    }

    #[test]
    fn nonsmooth_objective_improves_incumbent() {
        let f = |x: &[f64]| x[0].abs();
        let r = cobyla_minimize(f, &[0.7], 0.5, 1e-4, 50).unwrap();
        assert!(r.best_value <= 0.7);
        assert!(r.n_evals <= 50);
    }

    #[test]
    fn best_value_matches_best_params() {
        let r = cobyla_minimize(rosenbrock, &[0.3, -0.4], 0.5, 1e-5, 500).unwrap();
        assert!((rosenbrock(&r.best_params) - r.best_value).abs() <= 1e-12);
    }

    #[test]
    fn budget_exhaustion_is_not_convergence() {
        let r = cobyla_minimize(rosenbrock, &[-1.2, 1.0], 1.0, 1e-8, 10).unwrap();
        assert!(!r.converged);
        assert_eq!(r.n_evals, 10);
    }

    #[test]
    fn non_finite_objective_reports_point() {
        let f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { x[0] };
        match cobyla_minimize(f, &[0.0], 1.0, 1e-3, 20) {
            Err(Error::Numerical { point: Some(p), .. }) => assert!(p[0] > 0.5),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn argument_validation() {
        assert!(cobyla_minimize(sphere, &[1.0], 1e-4, 1.0, 100).is_err());
        assert!(cobyla_minimize(sphere, &[1.0, 2.0], 1.0, 1e-4, 3).is_err());
        assert!(cobyla_minimize(sphere, &[], 1.0, 1e-4, 100).is_err());
    }

    #[test]
    fn trace_rows() {
        let empty = OptimResult { best_params: vec![], best_value: 0.0, n_evals: 0, converged: false, trace: vec![] };
        assert!(record_trace(&empty).is_empty());
        let r = cobyla_minimize(sphere, &[2.0, -1.0, 0.5], 1.0, 1e-4, 300).unwrap();
        let rows = record_trace(&r);
        assert!(rows.windows(2).all(|w| w[1].cost <= w[0].cost));
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,cost,rho\n"));
        assert_eq!(text.lines().count(), rows.len() + 1);
    }

    #[test]
    fn translation_invariance_on_sphere() {
        let c = [0.37, -1.25, 2.5];
        let x0 = [1.0, 0.5, -0.75];
        let base = cobyla_minimize(sphere, &x0, 1.0, 1e-9, 3000).unwrap();
        let shifted_f = |x: &[f64]| sphere(&x.iter().zip(&c).map(|(a, b)| a - b).collect::<Vec<_>>());
        let x0s: Vec<f64> = x0.iter().zip(&c).map(|(a, b)| a + b).collect();
        let moved = cobyla_minimize(shifted_f, &x0s, 1.0, 1e-9, 3000).unwrap();
        for i in 0..3 {
            assert!((moved.best_params[i] - c[i] - base.best_params[i]).abs() < 1e-6);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn incumbent_monotone_and_deterministic(
            x0 in prop::collection::vec(-3.0f64..3.0, 1..5),
            budget in 10usize..200,
        ) {
            let budget = budget.max(x0.len() + 2);
            let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 0.3).powi(2) + v.sin()).sum::<f64>();
            let a = cobyla_minimize(f, &x0, 0.8, 1e-4, budget).unwrap();
            let b = cobyla_minimize(f, &x0, 0.8, 1e-4, budget).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.n_evals <= budget);
            prop_assert!(a.trace.windows(2).all(|w| w[1].value <= w[0].value));
            prop_assert_eq!(a.trace.last().unwrap().value, a.best_value);
        }
    }
}

//! Projected mean dynamics `ẋ = Π_{T(x)} v(x)` on the slope polytope.
//!
//! Integration is projected Euler, `x_{k+1} = Π_B(x_k + h·v(x_k))`. Kinks of
//! the projection rule out higher-order claims, so accuracy is checked by step
//! halving instead.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ActiveSet, Polytope, ACTIVE_TOL};
use crate::lyapunov::{lyapunov_value_grad, QuadraticCertificate};
use crate::parametric::{distance_to_equilibrium, GameField};

/// How an integration or learning run ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Termination {
    Completed,
    /// The field was not finite at the last recorded state.
    NonFiniteField {
        time: f64,
    },
}

/// A recorded sequence of feasible states with per-state diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    m: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    distances: Vec<f64>,
    active_sets: Vec<ActiveSet>,
    lyapunov: Option<Vec<f64>>,
    termination: Termination,
}

impl Trajectory {
    pub(crate) fn new(m: usize) -> Self {
        Self {
            m,
            times: Vec::new(),
            states: Vec::new(),
            distances: Vec::new(),
            active_sets: Vec::new(),
            lyapunov: None,
            termination: Termination::Completed,
        }
    }

    pub(crate) fn with_capacity(m: usize, n: usize) -> Self {
        let mut t = Self::new(m);
        t.times.reserve(n);
        t.states.reserve(n * m);
        t.distances.reserve(n);
        t.active_sets.reserve(n);
        t
    }

    pub(crate) fn push(&mut self, time: f64, x: &[f64], poly: &Polytope) {
        self.times.push(time);
        self.states.extend_from_slice(x);
        self.distances.push(distance_to_equilibrium(x));
        self.active_sets
            .push(poly.active_set_unchecked(x, ACTIVE_TOL));
    }

    pub(crate) fn set_termination(&mut self, t: Termination) {
        self.termination = t;
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.m..(k + 1) * self.m]
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.states.chunks_exact(self.m)
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    /// `‖x_k − x*‖` for every recorded state.
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn active_sets(&self) -> &[ActiveSet] {
        &self.active_sets
    }

    /// Lyapunov values, if a certificate was attached.
    pub fn lyapunov(&self) -> Option<&[f64]> {
        self.lyapunov.as_deref()
    }

    pub fn termination(&self) -> Termination {
        self.termination
    }

    /// Computes and stores `L(x_k)` for every state.
    pub fn attach_lyapunov(&mut self, cert: &QuadraticCertificate) {
        let values = self
            .states()
            .map(|x| lyapunov_value_grad(cert, x).0)
            .collect();
        self.lyapunov = Some(values);
    }
}

/// Projected Euler from `x0` over `[0, horizon]` with step `step`, recording
/// every state.
pub fn integrate_projected(
    x0: &[f64],
    horizon: f64,
    step: f64,
    field: &GameField,
    delta: f64,
) -> Result<Trajectory> {
    integrate_projected_with(x0, horizon, step, field, delta, 1)
}

/// As [`integrate_projected`], keeping every `record_every`-th state and the
/// last one.
pub fn integrate_projected_with(
    x0: &[f64],
    horizon: f64,
    step: f64,
    field: &GameField,
    delta: f64,
    record_every: usize,
) -> Result<Trajectory> {
    if !(step > 0.0) || !(horizon >= 0.0) {
        return Err(Error::Precondition(format!(
            "need step > 0 and horizon ≥ 0, got step {step}, horizon {horizon}"
        )));
    }
    let m = x0.len();
    let poly = Polytope::new(m, delta)?;
    poly.active_set(x0, ACTIVE_TOL)?;
    let record_every = record_every.max(1);
    let n_steps = (horizon / step).round() as usize;
    let mut traj = Trajectory::with_capacity(m, n_steps / record_every + 2);
    let mut x = x0.to_vec();
    let mut v = vec![0.0; m];
    let mut moved = vec![0.0; m];
    traj.push(0.0, &x, &poly);
    for k in 0..n_steps {
        let ok = field.eval_into(&x, &mut v).is_ok() && v.iter().all(|vi| vi.is_finite());
        if !ok {
            let t = k as f64 * step;
            if traj.times.last() != Some(&t) {
                traj.push(t, &x, &poly);
            }
            traj.set_termination(Termination::NonFiniteField { time: t });
            return Ok(traj);
        }
        for ((y, xi), vi) in moved.iter_mut().zip(&x).zip(&v) {
            *y = xi + step * vi;
        }
        poly.project_into(&moved, &mut x);
        let done = k + 1;
        if done % record_every == 0 || done == n_steps {
            traj.push(done as f64 * step, &x, &poly);
        }
    }
    Ok(traj)
}

/// Integrates from every start concurrently.
pub fn integrate_many(
    starts: &[Vec<f64>],
    horizon: f64,
    step: f64,
    field: &GameField,
    delta: f64,
    record_every: usize,
) -> Vec<Result<Trajectory>> {
    starts
        .par_iter()
        .map(|x0| integrate_projected_with(x0, horizon, step, field, delta, record_every))
        .collect()
}

/// Axis-aligned sampling window in the `(x₁, x₂)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    /// The bounding box `[δ, 2 − δ]²` of the two-piece polytope.
    pub fn polytope_box(delta: f64) -> Self {
        Self {
            x_min: delta,
            x_max: 2.0 - delta,
            y_min: delta,
            y_max: 2.0 - delta,
        }
    }
}

/// One grid point of a two-piece vector field plot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub x: [f64; 2],
    pub feasible: bool,
    /// `v(x)`, present only for feasible points.
    pub v: Option<[f64; 2]>,
    /// Tangent-cone projection of `v(x)`.
    pub projected: Option<[f64; 2]>,
}

/// Samples `v` and its tangent projection on a `res × res` grid over `bounds`
/// (endpoints included), row by row in `x₂` then `x₁`.
pub fn sample_vector_field(
    bounds: Rect,
    res: usize,
    delta: f64,
    field: &GameField,
) -> Result<Vec<FieldSample>> {
    let poly = Polytope::new(2, delta)?;
    let coord = |lo: f64, hi: f64, i: usize| {
        if res <= 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (res - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(res * res);
    for j in 0..res {
        for i in 0..res {
            let x = [
                coord(bounds.x_min, bounds.x_max, i),
                coord(bounds.y_min, bounds.y_max, j),
            ];
            let feasible = poly.is_feasible(&x, 1e-12);
            let (v, projected) = if feasible {
                let v = field.eval(&x)?;
                let p = poly.project_tangent_with(poly.active_set_unchecked(&x, ACTIVE_TOL), &v);
                (Some([v[0], v[1]]), Some([p[0], p[1]]))
            } else {
                (None, None)
            };
            out.push(FieldSample {
                x,
                feasible,
                v,
                projected,
            });
        }
    }
    Ok(out)
}

/// Lyapunov values along a trajectory and how often they misbehave.
#[derive(Debug, Clone, PartialEq)]
pub struct DecreaseReport {
    pub values: Vec<f64>,
    /// Largest `L(x_{k+1}) − L(x_k)` (negative if strictly decreasing).
    pub max_increase: f64,
    /// States where `⟨∇L, v⟩ > −w‖x − x*‖²` by more than the tolerance.
    pub bound_violations: usize,
}

impl DecreaseReport {
    /// `L` never rises by more than `slack` between recorded states.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.max_increase <= slack
    }
}

/// Evaluates `cert` along `traj`.
pub fn check_lyapunov_decrease(
    traj: &Trajectory,
    cert: &QuadraticCertificate,
    field: &GameField,
) -> Result<DecreaseReport> {
    if cert.m() != traj.m() {
        return Err(Error::Usage(format!(
            "certificate for m = {} but trajectory has m = {}",
            cert.m(),
            traj.m()
        )));
    }
    let mut values = Vec::with_capacity(traj.len());
    let mut bound_violations = 0;
    let mut v = vec![0.0; traj.m()];
    for x in traj.states() {
        let (l, grad) = lyapunov_value_grad(cert, x);
        values.push(l);
        field.eval_into(x, &mut v)?;
        let r2: f64 = x
            .iter()
            .zip(cert.x_star())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rate: f64 = grad.iter().zip(&v).map(|(g, vi)| g * vi).sum();
        if rate > -cert.w() * r2 + 1e-12 {
            bound_violations += 1;
        }
    }
    let max_increase = values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DecreaseReport {
        values,
        max_increase,
        bound_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parametric::{GradientMode, ProfitKernel};

    fn field() -> GameField {
        GameField::new(ProfitKernel::all_or_nothing(), GradientMode::ClosedM2)
    }

    #[test]
    fn equilibrium_is_fixed() {
        let traj = integrate_projected(&[0.5, 0.5], 1.0, 1e-2, &field(), 0.1).unwrap();
        assert_eq!(traj.len(), 101);
        assert!(traj.states().all(|x| x == [0.5, 0.5]));
        let report =
            check_lyapunov_decrease(&traj, &QuadraticCertificate::reference(0.1), &field())
                .unwrap();
        assert!(report.values.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn converges_from_identity_pricing() {
        let traj = integrate_projected(&[1.0, 1.0], 200.0, 1e-3, &field(), 0.1).unwrap();
        assert_eq!(traj.termination(), Termination::Completed);
        assert!(*traj.distances().last().unwrap() < 1e-3);
        assert!(traj.times().windows(2).all(|w| w[1] > w[0]));
        let poly = Polytope::new(2, 0.1).unwrap();
        assert!(traj.states().all(|x| poly.is_feasible(x, 1e-9)));
        // starts on the sum facet
        assert!(traj.active_sets()[0].contains(0));
        let report =
            check_lyapunov_decrease(&traj, &QuadraticCertificate::reference(0.1), &field())
                .unwrap();
        assert!(
            report.is_monotone(1e-12),
            "max increase {}",
            report.max_increase
        );
    }

    #[test]
    fn boundary_starts_decrease() {
        for x0 in [[0.1, 1.8], [0.1, 0.1], [1.9, 0.1]] {
            let traj = integrate_projected(&x0, 100.0, 1e-3, &field(), 0.1).unwrap();
            let report =
                check_lyapunov_decrease(&traj, &QuadraticCertificate::reference(0.1), &field())
                    .unwrap();
            assert!(report.is_monotone(1e-12), "{x0:?}: {}", report.max_increase);
        }
    }

    #[test]
    fn corner_start_moves_inward() {
        let traj = integrate_projected(&[0.1, 0.1], 1e-2, 1e-2, &field(), 0.1).unwrap();
        let x1 = traj.state(1);
        assert!(x1[0] > 0.1 && x1[1] > 0.1);
        assert!((x1[0] - (0.1 + 1e-2 * 5.0 / 6.0)).abs() < 1e-15);
        assert!(traj.active_sets()[1].is_empty());
    }

    #[test]
    fn step_halving_is_first_order() {
        let run = |h: f64| {
            integrate_projected(&[1.5, 0.3], 2.0, h, &field(), 0.1)
                .unwrap()
                .final_state()
                .unwrap()
                .to_vec()
        };
        let diff = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let (a, b, c) = (run(4e-3), run(2e-3), run(1e-3));
        let (d1, d2) = (diff(&a, &b), diff(&b, &c));
        assert!(d1 <= 10.0 * 4e-3 && d2 <= 10.0 * 2e-3);
        let ratio = d1 / d2;
        assert!((1.6..2.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn thinned_recording_keeps_last_state() {
        let full = integrate_projected(&[1.0, 1.0], 1.0, 1e-2, &field(), 0.1).unwrap();
        let thin = integrate_projected_with(&[1.0, 1.0], 1.0, 1e-2, &field(), 0.1, 30).unwrap();
        assert_eq!(thin.len(), 5);
        assert_eq!(thin.final_state(), full.final_state());
    }

    #[test]
    fn errors() {
        assert!(integrate_projected(&[0.05, 0.5], 1.0, 1e-2, &field(), 0.1).is_err());
        assert!(integrate_projected(&[0.5, 0.5], 1.0, 0.0, &field(), 0.1).is_err());
        let cert = QuadraticCertificate::reference(0.1);
        let traj =
            integrate_projected(&[0.5, 0.5, 0.5], 0.1, 1e-2, &GameField::default(), 0.1).unwrap();
        assert!(check_lyapunov_decrease(&traj, &cert, &GameField::default()).is_err());
    }

    #[test]
    fn non_finite_field_aborts() {
        let kernel = ProfitKernel::new(|p, c| if p > 0.9 { f64::NAN } else { p - c }, |_, _| 1.0);
        let f = GameField::new(kernel, GradientMode::Quadrature);
        let traj = integrate_projected(&[1.0, 1.0], 1.0, 1e-2, &f, 0.1).unwrap();
        assert_eq!(
            traj.termination(),
            Termination::NonFiniteField { time: 0.0 }
        );
        assert_eq!(traj.len(), 1);
    }

    #[test]
    fn field_samples() {
        let samples = sample_vector_field(Rect::polytope_box(0.1), 5, 0.1, &field()).unwrap();
        assert_eq!(samples.len(), 25);
        let at = |x: [f64; 2]| {
            samples
                .iter()
                .find(|s| (s.x[0] - x[0]).abs() < 1e-12 && (s.x[1] - x[1]).abs() < 1e-12)
                .unwrap()
        };
        let c = at([1.0, 1.0]);
        let v = c.v.unwrap();
        assert!((v[0] + 5.0 / 48.0).abs() < 1e-14 && (v[1] + 11.0 / 48.0).abs() < 1e-14);
        let p = c.projected.unwrap();
        assert!(p[0] + p[1] <= 1e-15);
        assert!(!at([1.9, 1.9]).feasible && at([1.9, 1.9]).v.is_none());

        let window = Rect {
            x_min: 0.05,
            x_max: 0.5,
            y_min: 0.5,
            y_max: 0.5,
        };
        let s = sample_vector_field(window, 2, 0.1, &field()).unwrap();
        assert!(!s[0].feasible && s[0].v.is_none());
        let mid = sample_vector_field(
            Rect {
                x_min: 0.5,
                x_max: 0.5,
                y_min: 0.5,
                y_max: 0.5,
            },
            1,
            0.1,
            &field(),
        )
        .unwrap();
        assert!(mid[0].v.unwrap().iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn verified_certificate_orders_every_trajectory() {
        // cross-check with an LP certificate rather than the reference one
        let cert =
            crate::lyapunov::search_certificate_lp(2, 0.1, 0.05, 30, &field(), false).unwrap();
        let poly = Polytope::new(2, 0.1).unwrap();
        let starts = poly.feasible_grid(5);
        for traj in integrate_many(&starts, 50.0, 1e-3, &field(), 0.1, 1) {
            let report = check_lyapunov_decrease(&traj.unwrap(), &cert, &field()).unwrap();
            assert!(report.is_monotone(1e-12), "{}", report.max_increase);
        }
    }
}

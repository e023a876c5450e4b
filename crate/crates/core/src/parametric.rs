//! Finite-dimensional strategy space and the game gradient.
//!
//! A slope vector `x ∈ ℝ^m` defines the piecewise-linear strategy with
//! breakpoints `k/m`, piece slopes `x_k` and the fixed right endpoint
//! `β(1) = 1`, so the intercept is `x₀ = 1 − (1/m)Σ x_k`. On piece `j`
//! (1-based) the price is
//!
//! ```text
//! p_j(x, c) = x_j (c − (j−1)/m) + 1 − (1/m) Σ_{k ≥ j} x_k.
//! ```
//!
//! With every firm playing `β(x)` in the uniform duopoly, the marginal utility
//! of a unilateral change in `x_i` is
//!
//! ```text
//! v_i(x) = Σ_{j<i} (1/m) ∫_{piece j} K_j dc + ∫_{piece i} (i/m − c) K_i dc,
//! K_j(c) = Π(p_j, c)/x_j − (1 − c) ∂_pΠ(p_j, c),
//! ```
//!
//! for a profit kernel `Π(p, c)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::model::{expected_profit, CostPrior, PiecewiseLinearStrategy};
use crate::piecewise::PiecewiseLinear;
use crate::quadrature;

/// Absolute slack allowed on the constraint values of a parameter vector.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// Equilibrium slopes of the uniform duopoly, `(½, …, ½)`.
pub fn equilibrium(m: usize) -> Vec<f64> {
    vec![0.5; m]
}

/// Euclidean distance to [`equilibrium`].
pub fn distance_to_equilibrium(x: &[f64]) -> f64 {
    x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>().sqrt()
}

/// A slope vector inside the polytope `x_i ≥ δ`, `Σ x_i ≤ m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleParams {
    delta: f64,
    x: Vec<f64>,
}

impl FeasibleParams {
    pub fn new(x: Vec<f64>, delta: f64) -> Result<Self> {
        let poly = Polytope::new(x.len(), delta)?;
        let violated = poly.violated(&x, FEASIBILITY_TOL);
        if !violated.is_empty() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Infeasible { violated });
        }
        Ok(Self { delta, x })
    }

    /// The equilibrium point for `m` pieces.
    pub fn equilibrium(m: usize, delta: f64) -> Result<Self> {
        Self::new(equilibrium(m), delta)
    }

    pub fn m(&self) -> usize {
        self.x.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.x
    }

    /// `x₀ = 1 − (1/m) Σ x_k`.
    pub fn intercept(&self) -> f64 {
        intercept(&self.x)
    }

    pub fn polytope(&self) -> Polytope {
        Polytope::new(self.m(), self.delta).expect("validated on construction")
    }
}

impl AsRef<[f64]> for FeasibleParams {
    fn as_ref(&self) -> &[f64] {
        &self.x
    }
}

fn intercept(x: &[f64]) -> f64 {
    1.0 - x.iter().sum::<f64>() / x.len() as f64
}

type KernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Profit `Π(p, c)` of a sale at price `p` and cost `c`, with its price
/// derivative.
#[derive(Clone)]
pub struct ProfitKernel {
    value: KernelFn,
    price_derivative: KernelFn,
    all_or_nothing: bool,
}

impl fmt::Debug for ProfitKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProfitKernel")
            .field("all_or_nothing", &self.all_or_nothing)
            .finish_non_exhaustive()
    }
}

impl Default for ProfitKernel {
    fn default() -> Self {
        Self::all_or_nothing()
    }
}

impl ProfitKernel {
    pub fn new<V, D>(value: V, price_derivative: D) -> Self
    where
        V: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            price_derivative: Arc::new(price_derivative),
            all_or_nothing: false,
        }
    }

    /// `Π(p, c) = p − c`.
    pub fn all_or_nothing() -> Self {
        Self {
            value: Arc::new(|p, c| p - c),
            price_derivative: Arc::new(|_, _| 1.0),
            all_or_nothing: true,
        }
    }

    pub fn is_all_or_nothing(&self) -> bool {
        self.all_or_nothing
    }

    pub fn value(&self, p: f64, c: f64) -> f64 {
        (self.value)(p, c)
    }

    pub fn price_derivative(&self, p: f64, c: f64) -> f64 {
        (self.price_derivative)(p, c)
    }
}

/// How [`game_gradient`] evaluates the field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Per-piece Gauss–Legendre quadrature; any `m`, any kernel.
    #[default]
    Quadrature,
    /// Closed form for one piece and all-or-nothing demand.
    ClosedM1,
    /// Closed form for two pieces and all-or-nothing demand.
    ClosedM2,
}

impl fmt::Display for GradientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Quadrature => "quadrature",
            Self::ClosedM1 => "closed_m1",
            Self::ClosedM2 => "closed_m2",
        })
    }
}

impl FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadrature" => Ok(Self::Quadrature),
            "closed_m1" => Ok(Self::ClosedM1),
            "closed_m2" => Ok(Self::ClosedM2),
            other => Err(Error::Usage(format!(
                "unknown gradient mode '{other}' (expected quadrature, closed_m1 or closed_m2)"
            ))),
        }
    }
}

/// Builds `β(x)` with breakpoints `k/m` and minimum slope `δ`.
pub fn strategy_from_params(fp: &FeasibleParams) -> PiecewiseLinearStrategy {
    strategy_from_slopes(fp.x(), fp.delta()).expect("feasible slopes give an admissible strategy")
}

/// Same construction without the polytope check; only requires positive
/// slopes, each at least `min_slope`.
pub fn strategy_from_slopes(x: &[f64], min_slope: f64) -> Result<PiecewiseLinearStrategy> {
    if x.is_empty() {
        return Err(Error::Usage("need at least one slope".into()));
    }
    let m = x.len() as f64;
    let mut bps = Vec::with_capacity(x.len() + 1);
    let mut vals = Vec::with_capacity(x.len() + 1);
    let mut level = intercept(x);
    bps.push(0.0);
    vals.push(level);
    for (k, &xk) in x.iter().enumerate() {
        level += xk / m;
        bps.push((k + 1) as f64 / m);
        vals.push(level);
    }
    *bps.last_mut().unwrap() = 1.0;
    *vals.last_mut().unwrap() = 1.0;
    PiecewiseLinearStrategy::from_function(PiecewiseLinear::new(bps, vals)?, min_slope)
}

/// Symmetric-profile utility `u(x) = Σ_j ∫_{piece j} Π(p_j(x, c), c)(1 − c) dc`
/// in the uniform duopoly.
pub fn symmetric_utility(fp: &FeasibleParams, kernel: &ProfitKernel) -> f64 {
    let x = fp.x();
    let m = x.len();
    let rule = quadrature::param_rule();
    let mut tail: f64 = x.iter().sum();
    let mut total = 0.0;
    for (j, &xj) in x.iter().enumerate() {
        let start = j as f64 / m as f64;
        let level = 1.0 - tail / m as f64;
        total += rule.integrate(start, (j + 1) as f64 / m as f64, |c| {
            kernel.value(xj * (c - start) + level, c) * (1.0 - c)
        });
        tail -= xj;
    }
    total
}

/// The game gradient `v(x)` at a feasible point.
pub fn game_gradient(
    fp: &FeasibleParams,
    kernel: &ProfitKernel,
    mode: GradientMode,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; fp.m()];
    game_gradient_into(fp.x(), kernel, mode, &mut out)?;
    Ok(out)
}

/// [`game_gradient`] on a raw slope vector, writing into `out`. Only
/// positivity of the slopes is checked.
pub fn game_gradient_into(
    x: &[f64],
    kernel: &ProfitKernel,
    mode: GradientMode,
    out: &mut [f64],
) -> Result<()> {
    let m = x.len();
    if m == 0 || out.len() != m {
        return Err(Error::Usage(format!(
            "slope vector of length {m} with output of length {}",
            out.len()
        )));
    }
    if let Some(&bad) = x.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain {
            value: bad,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    match mode {
        GradientMode::Quadrature => {
            quadrature_field(x, kernel, out);
            Ok(())
        }
        GradientMode::ClosedM1 | GradientMode::ClosedM2 => {
            let want = if mode == GradientMode::ClosedM1 { 1 } else { 2 };
            if m != want {
                return Err(Error::Usage(format!(
                    "{mode} needs m = {want}, got m = {m}"
                )));
            }
            if !kernel.is_all_or_nothing() {
                return Err(Error::Usage(format!(
                    "{mode} is only available for all-or-nothing demand"
                )));
            }
            if m == 1 {
                out[0] = (1.0 - 2.0 * x[0]) / (3.0 * x[0]);
            } else {
                let (x1, x2) = (x[0], x[1]);
                out[0] = -7.0 / 48.0 - 3.0 * x2 / (48.0 * x1) + 5.0 / (48.0 * x1);
                out[1] = -1.0 / 3.0 - x2 / (8.0 * x1) + 3.0 / (16.0 * x1) + 1.0 / (24.0 * x2);
            }
            Ok(())
        }
    }
}

fn quadrature_field(x: &[f64], kernel: &ProfitKernel, out: &mut [f64]) {
    let m = x.len();
    let mf = m as f64;
    let rule = quadrature::param_rule();
    let mut tail: f64 = x.iter().sum();
    let mut carried = 0.0;
    for (j, &xj) in x.iter().enumerate() {
        let start = j as f64 / mf;
        let end = (j + 1) as f64 / mf;
        let level = 1.0 - tail / mf;
        let k = |c: f64| {
            let p = xj * (c - start) + level;
            kernel.value(p, c) / xj - (1.0 - c) * kernel.price_derivative(p, c)
        };
        let own = rule.integrate(start, end, |c| (end - c) * k(c));
        out[j] = carried + own;
        carried += rule.integrate(start, end, k) / mf;
        tail -= xj;
    }
}

/// A game gradient with fixed kernel and evaluation mode.
#[derive(Debug, Clone, Default)]
pub struct GameField {
    kernel: ProfitKernel,
    mode: GradientMode,
}

impl GameField {
    pub fn new(kernel: ProfitKernel, mode: GradientMode) -> Self {
        Self { kernel, mode }
    }

    pub fn kernel(&self) -> &ProfitKernel {
        &self.kernel
    }

    pub fn mode(&self) -> GradientMode {
        self.mode
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        game_gradient_into(x, &self.kernel, self.mode, out)
    }
}

/// Asymmetric forward difference: firm one moves to `β(x + eps·e_i)` while
/// the rival keeps `β(x)`, in the uniform duopoly.
pub fn game_gradient_fd(fp: &FeasibleParams, kernel: &ProfitKernel, eps: f64) -> Result<Vec<f64>> {
    if eps == 0.0 || !eps.is_finite() {
        return Err(Error::Precondition(format!(
            "eps must be nonzero, got {eps}"
        )));
    }
    let prior = CostPrior::uniform(2);
    let profit = |p: f64, c: f64| kernel.value(p, c);
    let base = strategy_from_params(fp);
    let u0 = expected_profit(&base, &base, &prior, profit);
    let mut moved = fp.x().to_vec();
    (0..fp.m())
        .map(|i| {
            moved[i] += eps;
            let smallest = moved.iter().copied().fold(f64::INFINITY, f64::min);
            let s = strategy_from_slopes(&moved, smallest.max(f64::MIN_POSITIVE)).map_err(|e| {
                Error::Precondition(format!("perturbed strategy not increasing: {e}"))
            });
            moved[i] -= eps;
            Ok((expected_profit(&s?, &base, &prior, profit) - u0) / eps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::expected_utility;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fp(x: &[f64]) -> FeasibleParams {
        FeasibleParams::new(x.to_vec(), 0.1).unwrap()
    }

    fn aon() -> ProfitKernel {
        ProfitKernel::all_or_nothing()
    }

    fn random_feasible(rng: &mut ChaCha8Rng, m: usize, delta: f64) -> FeasibleParams {
        let poly = Polytope::new(m, delta).unwrap();
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
        FeasibleParams::new(poly.project(&y), delta).unwrap()
    }

    #[test]
    fn rejects_infeasible() {
        match FeasibleParams::new(vec![0.05, 2.5], 0.1) {
            Err(Error::Infeasible { violated }) => assert_eq!(violated, vec![0, 1]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            FeasibleParams::new(vec![0.5], 1.5),
            Err(Error::EmptySet(_))
        ));
    }

    #[test]
    fn strategy_examples() {
        let s = strategy_from_params(&fp(&[0.5, 0.5]));
        let t = strategy_from_params(&fp(&[1.0, 1.0]));
        let u = strategy_from_params(&fp(&[0.3]));
        for i in 0..=10 {
            let c = i as f64 / 10.0;
            assert!((s.value_at(c) - 0.5 * (1.0 + c)).abs() < 1e-15);
            assert!((t.value_at(c) - c).abs() < 1e-15);
            assert!((u.value_at(c) - (0.7 + 0.3 * c)).abs() < 1e-15);
        }
        assert_eq!(fp(&[1.0, 1.0]).intercept(), 0.0);
        let w = strategy_from_params(&fp(&[0.2, 1.3, 0.4]));
        assert_eq!(w.value_at(1.0), 1.0);
    }

    #[test]
    fn piece_price_formula() {
        let x = [0.3, 1.1, 0.7, 0.2];
        let s = strategy_from_params(&fp(&x));
        let m = x.len() as f64;
        for j in 1..=x.len() {
            let c = (j as f64 - 0.5) / m;
            let tail: f64 = x[j - 1..].iter().sum();
            let p = x[j - 1] * (c - (j - 1) as f64 / m) + 1.0 - tail / m;
            assert!((s.value_at(c) - p).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_utility_examples() {
        for m in [1, 2, 5] {
            assert!((symmetric_utility(&fp(&equilibrium(m)), &aon()) - 1.0 / 6.0).abs() < 1e-14);
            assert!(symmetric_utility(&fp(&vec![1.0; m]), &aon()).abs() < 1e-14);
        }
        let prior = CostPrior::uniform(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [1, 2, 3, 6] {
            let p = random_feasible(&mut rng, m, 0.1);
            let s = strategy_from_params(&p);
            let oracle = expected_utility(&s, &s, &prior);
            assert!((symmetric_utility(&p, &aon()) - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_examples() {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-13);
        for mode in [GradientMode::Quadrature, GradientMode::ClosedM2] {
            let v = |x: &[f64]| game_gradient(&fp(x), &aon(), mode).unwrap();
            assert!(close(&v(&[0.5, 0.5]), &[0.0, 0.0]));
            assert!(close(&v(&[1.0, 1.0]), &[-5.0 / 48.0, -11.0 / 48.0]));
            assert!(close(&v(&[0.1, 0.1]), &[5.0 / 6.0, 11.0 / 6.0]));
        }
        for mode in [GradientMode::Quadrature, GradientMode::ClosedM1] {
            let v = game_gradient(&fp(&[1.0]), &aon(), mode).unwrap();
            assert!((v[0] + 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_errors() {
        let two = fp(&[0.5, 0.5]);
        assert!(matches!(
            game_gradient(&two, &aon(), GradientMode::ClosedM1),
            Err(Error::Usage(_))
        ));
        let custom = ProfitKernel::new(|p, c| p - c, |_, _| 1.0);
        assert!(matches!(
            game_gradient(&two, &custom, GradientMode::ClosedM2),
            Err(Error::Usage(_))
        ));
        let mut out = [0.0; 2];
        assert!(matches!(
            game_gradient_into(&[0.0, 1.0], &aon(), GradientMode::Quadrature, &mut out),
            Err(Error::Domain { .. })
        ));
        assert_eq!(
            "closed_m2".parse::<GradientMode>().unwrap(),
            GradientMode::ClosedM2
        );
        assert!("closed".parse::<GradientMode>().is_err());
    }

    #[test]
    fn closed_form_matches_quadrature_on_grid() {
        let poly = Polytope::new(2, 0.1).unwrap();
        let mut worst = 0.0f64;
        for i in 0..50 {
            for j in 0..50 {
                let x = [0.1 + 1.8 * i as f64 / 49.0, 0.1 + 1.8 * j as f64 / 49.0];
                if !poly.is_feasible(&x, 1e-12) {
                    continue;
                }
                let p = fp(&x);
                let q = game_gradient(&p, &aon(), GradientMode::Quadrature).unwrap();
                let c = game_gradient(&p, &aon(), GradientMode::ClosedM2).unwrap();
                worst = worst.max((q[0] - c[0]).abs()).max((q[1] - c[1]).abs());
            }
        }
        assert!(worst <= 1e-8, "worst deviation {worst}");
    }

    #[test]
    fn equilibrium_is_stationary() {
        for m in 1..=16 {
            let v = game_gradient(&fp(&equilibrium(m)), &aon(), GradientMode::Quadrature).unwrap();
            assert!(v.iter().all(|vi| vi.abs() <= 1e-10), "m={m}: {v:?}");
        }
    }

    #[test]
    fn quadrature_field_matches_difference_quotient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [2, 4] {
            let p = random_feasible(&mut rng, m, 0.1);
            let v = game_gradient(&p, &aon(), GradientMode::Quadrature).unwrap();
            let d = game_gradient_fd(&p, &aon(), 1e-6).unwrap();
            for (a, b) in v.iter().zip(&d) {
                assert!((a - b).abs() < 1e-3, "{v:?} vs {d:?}");
            }
        }
    }

    #[test]
    fn fd_examples() {
        let d = game_gradient_fd(&fp(&[1.0, 1.0]), &aon(), 1e-5).unwrap();
        assert!((d[0] + 5.0 / 48.0).abs() < 1e-3 && (d[1] + 11.0 / 48.0).abs() < 1e-3);
        for m in [1, 3, 8] {
            let d = game_gradient_fd(&fp(&equilibrium(m)), &aon(), 1e-5).unwrap();
            assert!(d.iter().all(|v| v.abs() < 1e-3), "{d:?}");
        }
    }

    #[test]
    fn fd_error_is_first_order() {
        let p = fp(&[0.7, 0.4]);
        let v = game_gradient(&p, &aon(), GradientMode::ClosedM2).unwrap();
        let eps = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
        let errs: Vec<f64> = eps
            .iter()
            .map(|&e| {
                let d = game_gradient_fd(&p, &aon(), e).unwrap();
                (d[0] - v[0]).abs().max((d[1] - v[1]).abs())
            })
            .collect();
        let n = eps.len() as f64;
        let (lx, ly): (Vec<f64>, Vec<f64>) = eps
            .iter()
            .zip(&errs)
            .map(|(e, r)| (e.log10(), r.log10()))
            .unzip();
        let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
        let slope = lx
            .iter()
            .zip(&ly)
            .map(|(a, b)| (a - mx) * (b - my))
            .sum::<f64>()
            / lx.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>();
        assert!((slope - 1.0).abs() < 0.2, "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn general_kernel_reduces_to_linear_one() {
        let linear = ProfitKernel::new(|p, c| p - c, |_, _| 1.0);
        let p = fp(&[0.3, 0.9, 1.2]);
        let a = game_gradient(&p, &linear, GradientMode::Quadrature).unwrap();
        let b = game_gradient(&p, &aon(), GradientMode::Quadrature).unwrap();
        assert_eq!(a, b);
    }
}

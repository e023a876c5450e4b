//! Bayesian Bertrand primitives: cost priors, monotone pricing strategies,
//! the symmetric Bayes–Nash equilibrium and the ex-ante expected utility
//! under all-or-nothing demand.
//!
//! Costs are private and drawn i.i.d. from a prior `F` on `[0, 1]`. A firm
//! with cost `c` quoting price `p` sells one unit iff every rival quotes a
//! strictly higher price, so against `n - 1` rivals playing an increasing
//! strategy `opp` it wins with probability `1 - H(opp⁻¹(p))`, where
//! `H = 1 - (1 - F)^{n-1}` is the distribution of the lowest rival cost.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::piecewise::PiecewiseLinear;
use crate::quadrature::{self, GaussRule};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Tolerance for the prior's normalization check.
pub const PRIOR_MASS_TOL: f64 = 1e-8;

/// A cost prior on `[0, 1]` given as a cdf/pdf pair, together with the
/// number of competing firms.
#[derive(Clone)]
pub struct CostPrior {
    cdf: ScalarFn,
    pdf: ScalarFn,
    n_firms: usize,
    uniform: bool,
}

impl fmt::Debug for CostPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostPrior")
            .field("n_firms", &self.n_firms)
            .field("uniform", &self.uniform)
            .finish_non_exhaustive()
    }
}

impl CostPrior {
    /// Builds a prior from a cdf and its density, checking the invariants
    /// on a fine grid and the total mass by quadrature.
    pub fn new<F, P>(cdf: F, pdf: P, n_firms: usize) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        P: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if n_firms < 2 {
            return Err(Error::InvalidPrior(format!(
                "need at least two firms, got {n_firms}"
            )));
        }
        if cdf(0.0).abs() > 1e-12 || (cdf(1.0) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPrior(
                "cdf must satisfy F(0)=0 and F(1)=1".into(),
            ));
        }
        let grid = 1000;
        let mut prev = cdf(0.0);
        for i in 0..=grid {
            let c = i as f64 / grid as f64;
            let (fc, pc) = (cdf(c), pdf(c));
            if !fc.is_finite() || !pc.is_finite() {
                return Err(Error::InvalidPrior(format!("non-finite prior at c = {c}")));
            }
            if fc < prev - 1e-14 {
                return Err(Error::InvalidPrior(format!("cdf decreases at c = {c}")));
            }
            if pc < 0.0 {
                return Err(Error::InvalidPrior(format!("negative density at c = {c}")));
            }
            prev = fc;
        }
        let rule = quadrature::strategy_rule();
        let breaks: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let mass = rule.integrate_split(&breaks, &pdf);
        if (mass - 1.0).abs() > PRIOR_MASS_TOL {
            return Err(Error::InvalidPrior(format!("density integrates to {mass}")));
        }
        Ok(Self {
            cdf: Arc::new(cdf),
            pdf: Arc::new(pdf),
            n_firms,
            uniform: false,
        })
    }

    /// Uniform costs on `[0, 1]`.
    pub fn uniform(n_firms: usize) -> Self {
        assert!(n_firms >= 2, "need at least two firms");
        Self {
            cdf: Arc::new(|c: f64| c.clamp(0.0, 1.0)),
            pdf: Arc::new(|_| 1.0),
            n_firms,
            uniform: true,
        }
    }

    /// `F(c) = c^k` for `k > 0`.
    pub fn power(k: f64, n_firms: usize) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::InvalidPrior(format!(
                "power prior needs k > 0, got {k}"
            )));
        }
        Self::new(
            move |c: f64| c.clamp(0.0, 1.0).powf(k),
            move |c: f64| {
                if c <= 0.0 && k < 1.0 {
                    0.0
                } else {
                    k * c.clamp(0.0, 1.0).powf(k - 1.0)
                }
            },
            n_firms,
        )
    }

    pub fn n_firms(&self) -> usize {
        self.n_firms
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn cdf(&self, c: f64) -> f64 {
        (self.cdf)(c)
    }

    pub fn pdf(&self, c: f64) -> f64 {
        (self.pdf)(c)
    }

    /// Distribution of the lowest rival cost, `H = 1 - (1-F)^{n-1}`.
    pub fn competitor_cdf(&self, c: f64) -> f64 {
        1.0 - (1.0 - self.cdf(c)).powi(self.n_firms as i32 - 1)
    }

    /// Density of the lowest rival cost, `h = (n-1)(1-F)^{n-2} f`.
    pub fn competitor_pdf(&self, c: f64) -> f64 {
        let n = self.n_firms as i32;
        (n - 1) as f64 * (1.0 - self.cdf(c)).powi(n - 2) * self.pdf(c)
    }
}

/// A strictly increasing piecewise-linear pricing strategy `β: [0,1] → ℝ`
/// whose pieces all have slope at least `min_slope > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearStrategy {
    f: PiecewiseLinear,
    min_slope: f64,
}

fn slope_ok(slope: f64, min_slope: f64) -> bool {
    slope >= min_slope * (1.0 - 1e-9) - 1e-12
}

impl PiecewiseLinearStrategy {
    pub fn new(breakpoints: Vec<f64>, node_values: Vec<f64>, min_slope: f64) -> Result<Self> {
        Self::from_function(PiecewiseLinear::new(breakpoints, node_values)?, min_slope)
    }

    pub fn from_function(f: PiecewiseLinear, min_slope: f64) -> Result<Self> {
        if !(min_slope > 0.0) {
            return Err(Error::InvalidStrategy(format!(
                "minimum slope must be positive, got {min_slope}"
            )));
        }
        if let Some((j, s)) = f
            .slopes()
            .enumerate()
            .find(|&(_, s)| !slope_ok(s, min_slope))
        {
            return Err(Error::InvalidStrategy(format!(
                "piece {j} has slope {s} below the minimum {min_slope}"
            )));
        }
        Ok(Self { f, min_slope })
    }

    /// Wraps `f` using its smallest piece slope as the bound; fails unless
    /// `f` is strictly increasing.
    pub fn increasing(f: PiecewiseLinear) -> Result<Self> {
        let min = f.slopes().fold(f64::INFINITY, f64::min);
        Self::from_function(f, min)
    }

    pub fn affine(intercept: f64, slope: f64) -> Result<Self> {
        Self::from_function(PiecewiseLinear::affine(intercept, slope), slope)
    }

    /// Marginal-cost pricing `β(c) = c`.
    pub fn identity() -> Self {
        Self {
            f: PiecewiseLinear::affine(0.0, 1.0),
            min_slope: 1.0,
        }
    }

    /// The uniform-duopoly equilibrium `β*(c) = (1 + c)/2`.
    pub fn uniform_bne() -> Self {
        Self {
            f: PiecewiseLinear::affine(0.5, 0.5),
            min_slope: 0.5,
        }
    }

    pub fn function(&self) -> &PiecewiseLinear {
        &self.f
    }

    pub fn breakpoints(&self) -> &[f64] {
        self.f.breakpoints()
    }

    pub fn node_values(&self) -> &[f64] {
        self.f.values()
    }

    pub fn min_slope(&self) -> f64 {
        self.min_slope
    }

    /// Smallest slope actually attained by a piece.
    pub fn smallest_slope(&self) -> f64 {
        self.f.slopes().fold(f64::INFINITY, f64::min)
    }

    pub fn eval(&self, c: f64) -> Result<f64> {
        self.f.eval(c)
    }

    pub fn value_at(&self, c: f64) -> f64 {
        self.f.value_at(c)
    }

    pub fn slope_at(&self, c: f64) -> f64 {
        self.f.slope_at(c)
    }

    pub fn price_range(&self) -> (f64, f64) {
        let v = self.f.values();
        (v[0], v[v.len() - 1])
    }

    /// The unique cost `c` with `β(c) = p`.
    pub fn inverse(&self, p: f64) -> Result<f64> {
        let (lo, hi) = self.price_range();
        if !(lo..=hi).contains(&p) {
            return Err(Error::Range { value: p, lo, hi });
        }
        Ok(self.inverse_unchecked(p))
    }

    /// Inverse without range check; prices outside the range are mapped by
    /// extrapolating the boundary pieces.
    pub(crate) fn inverse_unchecked(&self, p: f64) -> f64 {
        let values = self.f.values();
        let bps = self.f.breakpoints();
        let k = values.partition_point(|&v| v <= p);
        let j = k.saturating_sub(1).min(self.f.num_pieces() - 1);
        if values[j] == p {
            return bps[j];
        }
        bps[j] + (p - values[j]) / self.f.slope(j)
    }

    /// Membership in the admissible set: range in `[0,1]`, `β(1) = 1` and
    /// every slope at least `delta`.
    pub fn is_admissible(&self, delta: f64) -> bool {
        let v = self.f.values();
        let range_ok = v.iter().all(|&p| (-1e-12..=1.0 + 1e-12).contains(&p));
        let end_ok = (v[v.len() - 1] - 1.0).abs() <= 1e-12;
        range_ok && end_ok && self.f.slopes().all(|s| slope_ok(s, delta))
    }

    /// Same function on a finer set of breakpoints.
    pub fn refine(&self, extra: &[f64]) -> Self {
        Self {
            f: self.f.refine(extra),
            min_slope: self.min_slope,
        }
    }

    /// `β + eps·d`, required to stay strictly increasing.
    pub fn perturbed(&self, direction: &PiecewiseLinear, eps: f64) -> Result<Self> {
        let g = self.f.add_scaled(direction, eps);
        let min = g.slopes().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::Precondition(format!(
                "perturbed strategy is not increasing (smallest slope {min})"
            )));
        }
        Ok(Self {
            f: g,
            min_slope: min.min(self.min_slope),
        })
    }
}

/// Symmetric Bayes–Nash equilibrium price at cost `c`:
/// `β*(c) = (1/(1-H(c))) ∫_c^1 z h(z) dz`. Uses the closed form
/// `(1+c)/2` for the uniform duopoly.
pub fn bne(prior: &CostPrior, c: f64) -> Result<f64> {
    check_cost(c)?;
    if prior.is_uniform() && prior.n_firms() == 2 {
        return Ok(0.5 * (1.0 + c));
    }
    bne_quadrature(prior, c)
}

/// Same as [`bne`] but always evaluates the integral by quadrature.
pub fn bne_quadrature(prior: &CostPrior, c: f64) -> Result<f64> {
    check_cost(c)?;
    if c == 1.0 {
        return Ok(1.0);
    }
    let tail = 1.0 - prior.competitor_cdf(c);
    if tail <= 0.0 {
        return Err(Error::SingularPrior(c));
    }
    let rule = quadrature::strategy_rule();
    let breaks: Vec<f64> = (0..=8).map(|i| c + (1.0 - c) * i as f64 / 8.0).collect();
    let integral = rule.integrate_split(&breaks, |z| z * prior.competitor_pdf(z));
    Ok(integral / tail)
}

fn check_cost(c: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::Domain {
            value: c,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

/// Probability that price `p` strictly undercuts all rivals playing `opp`.
/// Ties lose.
pub fn win_probability(p: f64, opp: &PiecewiseLinearStrategy, prior: &CostPrior) -> f64 {
    let (lo, hi) = opp.price_range();
    if p < lo {
        1.0
    } else if p >= hi {
        0.0
    } else {
        (1.0 - prior.competitor_cdf(opp.inverse_unchecked(p))).clamp(0.0, 1.0)
    }
}

/// Costs at which `s` crosses one of `opp`'s node prices, plus `s`'s own
/// breakpoints. Between consecutive points `opp⁻¹∘s` is affine.
pub(crate) fn crossing_breaks(
    s: &PiecewiseLinearStrategy,
    opp: &PiecewiseLinearStrategy,
) -> Vec<f64> {
    let (lo, hi) = s.price_range();
    let mut pts: Vec<f64> = s.breakpoints().to_vec();
    pts.extend(
        opp.node_values()
            .iter()
            .filter(|&&v| v > lo && v < hi)
            .map(|&v| s.inverse_unchecked(v)),
    );
    quadrature::normalize_breaks(pts, 0.0, 1.0, crate::piecewise::BREAK_TOL)
}

/// Ex-ante expected payoff `∫ Π(s(c), c) P(win | c) dF(c)` for a general
/// profit function `profit(price, cost)`.
pub fn expected_profit(
    s: &PiecewiseLinearStrategy,
    opp: &PiecewiseLinearStrategy,
    prior: &CostPrior,
    profit: impl Fn(f64, f64) -> f64,
) -> f64 {
    expected_profit_with(quadrature::strategy_rule(), s, opp, prior, profit)
}

pub(crate) fn expected_profit_with(
    rule: &GaussRule,
    s: &PiecewiseLinearStrategy,
    opp: &PiecewiseLinearStrategy,
    prior: &CostPrior,
    profit: impl Fn(f64, f64) -> f64,
) -> f64 {
    let breaks = crossing_breaks(s, opp);
    rule.integrate_split(&breaks, |c| {
        let p = s.value_at(c);
        profit(p, c) * win_probability(p, opp, prior) * prior.pdf(c)
    })
}

/// Expected utility under all-or-nothing demand, profit `p - c`.
pub fn expected_utility(
    s: &PiecewiseLinearStrategy,
    opp: &PiecewiseLinearStrategy,
    prior: &CostPrior,
) -> f64 {
    expected_profit(s, opp, prior, |p, c| p - c)
}

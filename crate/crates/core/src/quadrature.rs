//! Composite Gauss–Legendre quadrature over split intervals.
//!
//! Every integrand in this crate is smooth between known kinks (strategy
//! breakpoints, preimages of the opponent's breakpoints). Callers collect the
//! kinks and integrate piece by piece, so a low fixed order is exact for the
//! polynomial integrands of the uniform duopoly.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

/// Order used by the strategy-space integrals (expected utility, Gâteaux).
pub const STRATEGY_ORDER: usize = 16;
/// Order used by the parameter-space gradient (integrands of degree ≤ 2).
pub const PARAM_ORDER: usize = 8;

/// A Gauss–Legendre rule with cached nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(order: usize) -> Self {
        let order = NonZeroUsize::new(order.max(1)).expect("order is at least one");
        let rule = GaussLegendre::new(order);
        let (nodes, weights) = rule.iter().map(|(x, w)| (*x, *w)).unzip();
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Integrates `f` over `[a, b]`. Returns zero for empty intervals.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let sum: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum();
        half * sum
    }

    /// Integrates over `[breaks[0], breaks[last]]`, one rule application per
    /// consecutive pair. `breaks` must be sorted.
    pub fn integrate_split(&self, breaks: &[f64], mut f: impl FnMut(f64) -> f64) -> f64 {
        breaks
            .windows(2)
            .map(|w| self.integrate(w[0], w[1], &mut f))
            .sum()
    }
}

/// Shared rule of order [`STRATEGY_ORDER`].
pub fn strategy_rule() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| GaussRule::new(STRATEGY_ORDER))
}

/// Shared rule of order [`PARAM_ORDER`].
pub fn param_rule() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| GaussRule::new(PARAM_ORDER))
}

/// Sorts, clamps to `[lo, hi]` and removes near-duplicates (gap below `tol`).
pub(crate) fn normalize_breaks(mut pts: Vec<f64>, lo: f64, hi: f64, tol: f64) -> Vec<f64> {
    pts.push(lo);
    pts.push(hi);
    pts.retain(|p| p.is_finite());
    for p in pts.iter_mut() {
        *p = p.clamp(lo, hi);
    }
    pts.sort_by(|a, b| a.total_cmp(b));
    let mut out: Vec<f64> = Vec::with_capacity(pts.len());
    for p in pts {
        match out.last() {
            Some(&last) if p - last <= tol => {}
            _ => out.push(p),
        }
    }
    // keep the exact right endpoint
    if let Some(last) = out.last_mut() {
        *last = hi;
    }
    out
}

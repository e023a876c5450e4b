//! Gâteaux derivative of the expected utility and the Minty-type check.
//!
//! The closed form is
//!
//! ```text
//! DU(β, β̃)[d] = ∫ d(c) χ{β(c) > β̃(0)} (1 − (β(c) − c) h(z)/β̃'(z) − H(z)) dF(c),
//!               z = β̃⁻¹(β(c))
//! ```
//!
//! on the region where `β` meets the opponent's price range; where `β(c)` lies
//! below `β̃(0)` the firm wins for sure and the integrand is `d(c) dF(c)`. The
//! result is cross-checked against difference quotients of
//! [`expected_utility`](crate::model::expected_utility). In the uniform
//! duopoly the Minty inequality reads `∫ (β − β*)(1 − c − (β − c)/β') dc ≤ 0`
//! for every admissible `β`; [`minty_counterexample`] produces strategies for
//! which the left side is strictly positive.

use crate::error::{Error, Result};
use crate::model::{crossing_breaks, expected_utility, CostPrior, PiecewiseLinearStrategy};
use crate::piecewise::{PiecewiseLinear, BREAK_TOL};
use crate::quadrature;

/// A bounded piecewise-linear direction in strategy space.
pub type Direction = PiecewiseLinear;

/// Default step of the difference quotient.
pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Closed-form Gâteaux derivative of `U(s, opp, …, opp)` along `d`.
pub fn gateaux_closed(
    s: &PiecewiseLinearStrategy,
    opp: &PiecewiseLinearStrategy,
    d: &Direction,
    prior: &CostPrior,
) -> Result<f64> {
    gateaux_closed_with(s, opp, d, prior, opp.min_slope())
}

/// As [`gateaux_closed`], requiring every piece of `opp` to have slope at
/// least `min_slope`.
pub fn gateaux_closed_with(
    s: &PiecewiseLinearStrategy,
    opp: &PiecewiseLinearStrategy,
    d: &Direction,
    prior: &CostPrior,
    min_slope: f64,
) -> Result<f64> {
    let smallest = opp.smallest_slope();
    if !(min_slope > 0.0) || smallest < min_slope * (1.0 - 1e-9) {
        return Err(Error::Precondition(format!(
            "opponent slope {smallest} below the required minimum {min_slope}"
        )));
    }
    let mut pts = crossing_breaks(s, opp);
    pts.extend_from_slice(d.breakpoints());
    let breaks = quadrature::normalize_breaks(pts, 0.0, 1.0, BREAK_TOL);
    let (bottom, top) = opp.price_range();
    let rule = quadrature::strategy_rule();
    Ok(rule.integrate_split(&breaks, |c| {
        let p = s.value_at(c);
        if p >= top {
            return 0.0;
        }
        if p < bottom {
            // sure win: only the margin moves
            return d.value_at(c) * prior.pdf(c);
        }
        let z = opp.inverse_unchecked(p);
        let bracket =
            1.0 - (p - c) * prior.competitor_pdf(z) / opp.slope_at(z) - prior.competitor_cdf(z);
        d.value_at(c) * bracket * prior.pdf(c)
    }))
}

/// Forward difference quotient `(U(s + eps·d, opp) − U(s, opp)) / eps`.
pub fn gateaux_fd(
    s: &PiecewiseLinearStrategy,
    opp: &PiecewiseLinearStrategy,
    d: &Direction,
    prior: &CostPrior,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let moved = s.perturbed(d, eps)?;
    Ok((expected_utility(&moved, opp, prior) - expected_utility(s, opp, prior)) / eps)
}

/// One Richardson step on top of [`gateaux_fd`]: `2·D(eps/2) − D(eps)`.
pub fn gateaux_fd_richardson(
    s: &PiecewiseLinearStrategy,
    opp: &PiecewiseLinearStrategy,
    d: &Direction,
    prior: &CostPrior,
    eps: f64,
) -> Result<f64> {
    let coarse = gateaux_fd(s, opp, d, prior, eps)?;
    let fine = gateaux_fd(s, opp, d, prior, 0.5 * eps)?;
    Ok(2.0 * fine - coarse)
}

/// Left side of the uniform-duopoly Minty inequality,
/// `∫ (s − β*)(1 − c − (s − c)/s') dc`.
pub fn minty_lhs(s: &PiecewiseLinearStrategy, bne: &PiecewiseLinearStrategy) -> f64 {
    let mut pts = s.breakpoints().to_vec();
    pts.extend_from_slice(bne.breakpoints());
    let breaks = quadrature::normalize_breaks(pts, 0.0, 1.0, BREAK_TOL);
    // piecewise quadratic integrand: order 8 is exact
    quadrature::param_rule().integrate_split(&breaks, |c| {
        let p = s.value_at(c);
        (p - bne.value_at(c)) * (1.0 - c - (p - c) / s.slope_at(c))
    })
}

/// Three-piece strategy with slopes 1/5, 4/5, 1/2 that agrees with the
/// equilibrium `(1+c)/2` for `c ≥ 2/(k+2)` and violates the Minty inequality.
pub fn minty_counterexample(k: u32) -> PiecewiseLinearStrategy {
    let kf = k as f64;
    let a = 1.0 / (kf + 2.0);
    let mut bps = vec![0.0, a];
    let mut vals = vec![0.5, 0.5 + a / 5.0];
    if 2.0 * a < 1.0 {
        bps.push(2.0 * a);
        vals.push(0.5 * (1.0 + 2.0 * a));
    }
    bps.push(1.0);
    vals.push(1.0);
    PiecewiseLinearStrategy::new(bps, vals, 0.2).expect("counterexample is increasing")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PiecewiseLinearStrategy as Strat;

    fn uni() -> CostPrior {
        CostPrior::uniform(2)
    }

    #[test]
    fn counterexample_shape_k0() {
        let s = minty_counterexample(0);
        assert_eq!(s.breakpoints(), &[0.0, 0.5, 1.0]);
        assert!((s.eval(0.5).unwrap() - 0.6).abs() < 1e-15);
        assert!((s.eval(0.25).unwrap() - (0.5 + 0.25 / 5.0)).abs() < 1e-15);
        assert!((s.eval(0.75).unwrap() - (0.2 + 0.8 * 0.75)).abs() < 1e-15);
        assert_eq!(s.eval(1.0).unwrap(), 1.0);
        assert!(s.is_admissible(0.2));
    }

    #[test]
    fn counterexample_matches_printed_formulas() {
        for k in 0..8u32 {
            let s = minty_counterexample(k);
            let kf = k as f64;
            for i in 0..=200 {
                let c = i as f64 / 200.0;
                let expected = if c < 1.0 / (kf + 2.0) {
                    0.5 + c / 5.0
                } else if c < 2.0 / (kf + 2.0) {
                    (5.0 * kf + 4.0) / (10.0 * (kf + 2.0)) + 0.8 * c
                } else {
                    0.5 * (1.0 + c)
                };
                assert!((s.value_at(c) - expected).abs() < 1e-14, "k={k} c={c}");
            }
        }
    }

    #[test]
    fn minty_examples() {
        let bne = Strat::uniform_bne();
        assert_eq!(minty_lhs(&bne, &bne), 0.0);
        assert!((minty_lhs(&Strat::identity(), &bne) + 1.0 / 6.0).abs() < 1e-15);
        assert!((minty_lhs(&minty_counterexample(0), &bne) - 3.0 / 320.0).abs() < 1e-15);
    }

    /// Hand integration of both non-trivial pieces with `a = 1/(k+2)`:
    /// `27a²/160 − 21a³/80`.
    fn minty_closed(k: u32) -> f64 {
        let a = 1.0 / (k as f64 + 2.0);
        27.0 * a * a / 160.0 - 21.0 * a * a * a / 80.0
    }

    #[test]
    fn minty_positive_and_decreasing() {
        let bne = Strat::uniform_bne();
        let mut prev = f64::INFINITY;
        for k in 0..=12 {
            let val = minty_lhs(&minty_counterexample(k), &bne);
            assert!((val - minty_closed(k)).abs() < 1e-15, "k={k}");
            assert!(val > 0.0);
            assert!(val < prev);
            prev = val;
        }
    }

    #[test]
    fn gateaux_examples() {
        let bne = Strat::uniform_bne();
        let id = Strat::identity();
        let ones = PiecewiseLinear::constant(1.0);
        let d = PiecewiseLinear::new(vec![0.0, 0.3, 1.0], vec![0.2, -1.0, 0.4]).unwrap();
        assert!(gateaux_closed(&bne, &bne, &d, &uni()).unwrap().abs() < 1e-15);
        assert!((gateaux_closed(&id, &id, &ones, &uni()).unwrap() - 0.5).abs() < 1e-15);
        let ce = minty_counterexample(0);
        let toward = ce.function().add_scaled(bne.function(), -1.0);
        let val = gateaux_closed(&ce, &ce, &toward, &uni()).unwrap();
        assert!((val - 3.0 / 320.0).abs() < 1e-15);
    }

    #[test]
    fn gateaux_vanishes_at_equilibrium_for_all_directions() {
        let bne = Strat::uniform_bne();
        for j in 0..20 {
            let t = 0.05 + 0.045 * j as f64;
            let d = PiecewiseLinear::new(vec![0.0, t, 1.0], vec![t - 0.5, 1.0 - t, -t]).unwrap();
            assert!(gateaux_closed(&bne, &bne, &d, &uni()).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn gateaux_precondition() {
        let bne = Strat::uniform_bne();
        let d = PiecewiseLinear::constant(1.0);
        let err = gateaux_closed_with(&bne, &bne, &d, &uni(), 0.6);
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn fd_examples() {
        let bne = Strat::uniform_bne();
        let zero = PiecewiseLinear::constant(0.0);
        let d = PiecewiseLinear::new(vec![0.0, 0.6, 1.0], vec![0.3, -0.2, 0.1]).unwrap();
        assert_eq!(gateaux_fd(&bne, &bne, &zero, &uni(), 1e-4).unwrap(), 0.0);
        assert!(gateaux_fd(&bne, &bne, &d, &uni(), 1e-4).unwrap().abs() <= 1e-3);
        assert!(gateaux_fd(&bne, &bne, &d, &uni(), 0.0).is_err());
        // pushes the slope negative
        let steep = PiecewiseLinear::affine(0.0, -10.0);
        assert!(matches!(
            gateaux_fd(&bne, &bne, &steep, &uni(), 0.1),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn fd_agrees_with_closed_form_on_random_triples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let prior = uni();
        let eps = 1e-6;
        let mut worst_ratio: f64 = 0.0;
        for _ in 0..50 {
            let s = random_strategy(&mut rng);
            let opp = random_strategy(&mut rng);
            let t: f64 = rng.random_range(0.1..0.9);
            let d = PiecewiseLinear::new(
                vec![0.0, t, 1.0],
                vec![
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    0.0,
                ],
            )
            .unwrap();
            let closed = gateaux_closed(&s, &opp, &d, &prior).unwrap();
            let fd = gateaux_fd(&s, &opp, &d, &prior, eps).unwrap();
            let rich = gateaux_fd_richardson(&s, &opp, &d, &prior, 1e-4).unwrap();
            worst_ratio = worst_ratio.max((closed - fd).abs() / eps);
            assert!(
                (closed - rich).abs() < 1e-5,
                "closed {closed} richardson {rich}"
            );
        }
        // |Δ| ≤ C·eps with C frozen after calibration
        assert!(worst_ratio < 50.0, "C = {worst_ratio}");
    }

    fn random_strategy(rng: &mut impl rand::Rng) -> PiecewiseLinearStrategy {
        let m = rng.random_range(1..5usize);
        let xs: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.2)).collect();
        let mut values = vec![1.0; m + 1];
        for j in (0..m).rev() {
            values[j] = values[j + 1] - xs[j] / m as f64;
        }
        let bps = (0..=m).map(|k| k as f64 / m as f64).collect();
        PiecewiseLinearStrategy::new(bps, values, 0.2).unwrap()
    }
}

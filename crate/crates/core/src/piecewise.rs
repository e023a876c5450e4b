//! Continuous piecewise-linear functions on [0, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gap below which two breakpoints are considered equal.
pub(crate) const BREAK_TOL: f64 = 1e-14;

/// A continuous piecewise-linear function on `[0, 1]`, stored as node values
/// at sorted breakpoints `0 = t_0 < t_1 < … < t_K = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidStrategy(
                "need at least two breakpoints".into(),
            ));
        }
        if breakpoints.len() != values.len() {
            return Err(Error::InvalidStrategy(format!(
                "{} breakpoints but {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(Error::InvalidStrategy(
                "breakpoints must start at 0 and end at 1".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| w[1] - w[0] <= 0.0) {
            return Err(Error::InvalidStrategy(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidStrategy("non-finite node value".into()));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    /// The affine function `intercept + slope * c`.
    pub fn affine(intercept: f64, slope: f64) -> Self {
        Self {
            breakpoints: vec![0.0, 1.0],
            values: vec![intercept, intercept + slope],
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::affine(value, 0.0)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_pieces(&self) -> usize {
        self.breakpoints.len() - 1
    }

    /// Index of the piece containing `c`; right-continuous, the last piece
    /// is closed.
    pub fn piece_index(&self, c: f64) -> usize {
        let k = self.breakpoints.partition_point(|&t| t <= c);
        k.saturating_sub(1).min(self.num_pieces() - 1)
    }

    pub fn slope(&self, piece: usize) -> f64 {
        let (a, b) = (self.breakpoints[piece], self.breakpoints[piece + 1]);
        (self.values[piece + 1] - self.values[piece]) / (b - a)
    }

    pub fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_pieces()).map(|j| self.slope(j))
    }

    /// Slope at `c` (right derivative, left derivative at `c = 1`).
    pub fn slope_at(&self, c: f64) -> f64 {
        self.slope(self.piece_index(c))
    }

    /// Evaluates by linear interpolation; `c` outside `[0,1]` is extrapolated
    /// from the boundary piece.
    pub fn value_at(&self, c: f64) -> f64 {
        let j = self.piece_index(c);
        let a = self.breakpoints[j];
        self.values[j] + self.slope(j) * (c - a)
    }

    pub fn eval(&self, c: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Domain {
                value: c,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(self.value_at(c))
    }

    /// Re-expresses the same function on the union of its breakpoints and
    /// `extra` (points outside `(0, 1)` are ignored).
    pub fn refine(&self, extra: &[f64]) -> Self {
        let mut pts: Vec<f64> = self.breakpoints.clone();
        pts.extend(extra.iter().copied().filter(|&t| t > 0.0 && t < 1.0));
        let breaks = crate::quadrature::normalize_breaks(pts, 0.0, 1.0, BREAK_TOL);
        let values = breaks.iter().map(|&t| self.value_at(t)).collect();
        Self {
            breakpoints: breaks,
            values,
        }
    }

    /// `self + scale * other` on the merged breakpoints.
    pub fn add_scaled(&self, other: &PiecewiseLinear, scale: f64) -> Self {
        let merged = self.refine(other.breakpoints());
        let values = merged
            .breakpoints
            .iter()
            .zip(&merged.values)
            .map(|(&t, &v)| v + scale * other.value_at(t))
            .collect();
        Self {
            breakpoints: merged.breakpoints,
            values,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_and_slopes() {
        let f = PiecewiseLinear::new(vec![0.0, 0.5, 1.0], vec![0.5, 0.6, 1.0]).unwrap();
        assert!((f.eval(0.25).unwrap() - 0.55).abs() < 1e-15);
        assert!((f.slope_at(0.5) - 0.8).abs() < 1e-15);
        assert!((f.slope_at(1.0) - 0.8).abs() < 1e-15);
        assert!((f.slope_at(0.0) - 0.2).abs() < 1e-15);
        assert!(f.eval(1.5).is_err());
    }

    #[test]
    fn rejects_bad_breakpoints() {
        assert!(PiecewiseLinear::new(vec![0.0, 0.5], vec![0.0, 1.0]).is_err());
        assert!(PiecewiseLinear::new(vec![0.0, 0.5, 0.5, 1.0], vec![0.0; 4]).is_err());
        assert!(PiecewiseLinear::new(vec![0.0, 1.0], vec![0.0]).is_err());
    }

    #[test]
    fn refine_keeps_function() {
        let f = PiecewiseLinear::new(vec![0.0, 0.3, 1.0], vec![0.1, 0.7, 0.2]).unwrap();
        let g = f.refine(&[0.1, 0.3, 0.9, 2.0]);
        assert_eq!(g.breakpoints().len(), 5);
        for i in 0..=20 {
            let c = i as f64 / 20.0;
            assert!((f.value_at(c) - g.value_at(c)).abs() < 1e-15);
        }
    }

    #[test]
    fn add_scaled_merges() {
        let f = PiecewiseLinear::affine(0.5, 0.5);
        let d = PiecewiseLinear::new(vec![0.0, 0.4, 1.0], vec![0.0, 1.0, 0.0]).unwrap();
        let g = f.add_scaled(&d, 0.1);
        assert_eq!(g.breakpoints(), &[0.0, 0.4, 1.0]);
        assert!((g.value_at(0.4) - (0.7 + 0.1)).abs() < 1e-15);
    }
}

//! Euclidean geometry of the slope polytope
//! `B = { x ∈ ℝ^m : x_i ≥ δ, Σ x_i ≤ m }`.
//!
//! Constraint functions are numbered `g_0(x) = m − Σ x_k` and
//! `g_i(x) = x_i − δ` for `i = 1..m`; an [`ActiveSet`] uses the same indices.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for detecting active constraints.
pub const ACTIVE_TOL: f64 = 1e-9;

/// Bit set of active constraint indices (`0` is the sum constraint).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActiveSet(u64);

impl ActiveSet {
    pub fn empty() -> Self {
        Self(0)
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        Self(indices.into_iter().fold(0, |acc, i| acc | (1u64 << i)))
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1 << i;
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..64).filter(|&i| self.contains(i))
    }

    pub fn bits(&self) -> u64 {
        self.0
    }
}

impl fmt::Display for ActiveSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// The feasible parameter set for `m` pieces and minimum slope `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    m: usize,
    delta: f64,
}

impl Polytope {
    pub fn new(m: usize, delta: f64) -> Result<Self> {
        if m == 0 || m > 62 {
            return Err(Error::Usage(format!(
                "number of pieces must be in 1..=62, got {m}"
            )));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::EmptySet(delta));
        }
        Ok(Self { m, delta })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `(g_0(y), g_1(y), …, g_m(y))`.
    pub fn constraint_values(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.m);
        let mut g = Vec::with_capacity(self.m + 1);
        g.push(self.m as f64 - y.iter().sum::<f64>());
        g.extend(y.iter().map(|&yi| yi - self.delta));
        g
    }

    pub fn is_feasible(&self, y: &[f64], tol: f64) -> bool {
        self.constraint_values(y).iter().all(|&g| g >= -tol)
    }

    /// Indices whose constraint values violate feasibility by more than `tol`.
    pub fn violated(&self, y: &[f64], tol: f64) -> Vec<usize> {
        self.constraint_values(y)
            .iter()
            .enumerate()
            .filter(|(_, &g)| g < -tol)
            .map(|(i, _)| i)
            .collect()
    }

    /// Active set without the feasibility check or allocation.
    pub(crate) fn active_set_unchecked(&self, x: &[f64], tol: f64) -> ActiveSet {
        let mut set = ActiveSet::empty();
        if (self.m as f64 - x.iter().sum::<f64>()).abs() <= tol {
            set.insert(0);
        }
        for (i, &xi) in x.iter().enumerate() {
            if (xi - self.delta).abs() <= tol {
                set.insert(i + 1);
            }
        }
        set
    }

    /// `{ i : |g_i(x)| ≤ tol }`; errors if `x` is infeasible beyond `tol`.
    pub fn active_set(&self, x: &[f64], tol: f64) -> Result<ActiveSet> {
        let g = self.constraint_values(x);
        let violated: Vec<usize> = (0..g.len()).filter(|&i| g[i] < -tol).collect();
        if !violated.is_empty() {
            return Err(Error::Infeasible { violated });
        }
        Ok(ActiveSet::from_indices(
            (0..g.len()).filter(|&i| g[i].abs() <= tol),
        ))
    }

    /// Euclidean projection onto the polytope.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        self.project_into(y, &mut out);
        out
    }

    /// Allocation-free [`Polytope::project`]. Clips at `delta`; if the sum
    /// constraint is then violated, shifts by the unique `μ > 0` with
    /// `Σ max(δ, y_i − μ) = m`, found by a scan over the sorted breakpoints.
    pub fn project_into(&self, y: &[f64], out: &mut [f64]) {
        let (m, delta) = (self.m as f64, self.delta);
        for (o, &yi) in out.iter_mut().zip(y) {
            *o = yi.max(delta);
        }
        if out.iter().sum::<f64>() <= m {
            return;
        }
        let mu = self.water_level(y);
        for (o, &yi) in out.iter_mut().zip(y) {
            *o = (yi - mu).max(delta);
        }
    }

    fn water_level(&self, y: &[f64]) -> f64 {
        let (m, delta) = (self.m as f64, self.delta);
        let mut sorted = y.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut prefix = 0.0;
        for k in 1..=sorted.len() {
            prefix += sorted[k - 1];
            let free = k as f64;
            let mu = (prefix + (m - free) * delta - m) / free;
            let top_free = sorted[k - 1] - mu >= delta;
            let rest_clipped = k == sorted.len() || sorted[k] - mu <= delta;
            if top_free && rest_clipped {
                return mu;
            }
        }
        // rounding fallback
        let excess = |mu: f64| y.iter().map(|&yi| (yi - mu).max(delta)).sum::<f64>() - m;
        let (mut lo, mut hi) = (0.0, sorted[0] - delta);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Projection of `v` onto the tangent cone at the feasible point `x`,
    /// `T(x) = { d : d_i ≥ 0 for active i ≥ 1, Σ d ≤ 0 if g_0 is active }`.
    ///
    /// Enumerates the faces of the cone (subsets of the active constraints
    /// held with equality); each face gives a closed-form least-squares
    /// candidate, and the closest feasible candidate is the projection.
    pub fn project_tangent(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let active = self.active_set(x, ACTIVE_TOL)?;
        Ok(self.project_tangent_with(active, v))
    }

    pub(crate) fn project_tangent_with(&self, active: ActiveSet, v: &[f64]) -> Vec<f64> {
        if active.is_empty() {
            return v.to_vec();
        }
        let members: Vec<usize> = active.iter().collect();
        let sum_active = active.contains(0);
        let tol = 1e-14 * (1.0 + v.iter().fold(0.0f64, |a, b| a.max(b.abs())));
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut cand = vec![0.0; v.len()];
        for mask in 0u64..(1 << members.len()) {
            let face: Vec<usize> = (0..members.len())
                .filter(|b| mask >> b & 1 == 1)
                .map(|b| members[b])
                .collect();
            let with_sum = face.contains(&0);
            cand.copy_from_slice(v);
            for &i in face.iter().filter(|&&i| i > 0) {
                cand[i - 1] = 0.0;
            }
            if with_sum {
                let free: Vec<usize> = (0..v.len()).filter(|&j| !face.contains(&(j + 1))).collect();
                if !free.is_empty() {
                    let mean = free.iter().map(|&j| v[j]).sum::<f64>() / free.len() as f64;
                    for &j in &free {
                        cand[j] = v[j] - mean;
                    }
                }
            }
            let lower_ok = members
                .iter()
                .filter(|&&i| i > 0)
                .all(|&i| cand[i - 1] >= -tol);
            let sum_ok = !sum_active || cand.iter().sum::<f64>() <= tol;
            if !(lower_ok && sum_ok) {
                continue;
            }
            let dist: f64 = cand.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, cand.clone()));
            }
        }
        best.map(|(_, d)| d)
            .expect("the zero face is always feasible")
    }

    /// Multipliers `λ ≥ 0` (indexed like the constraints) with
    /// `r = λ_0·1 − Σ_{i ≥ 1} λ_i e_i`, using active constraints only, or
    /// `None` if `r` is not in the normal cone at `x` (within `tol`).
    pub fn normal_cone_multipliers(&self, x: &[f64], r: &[f64], tol: f64) -> Option<Vec<f64>> {
        let active = self.active_set(x, ACTIVE_TOL).ok()?;
        let mut lambda = vec![0.0; self.m + 1];
        let free: Vec<usize> = (0..self.m).filter(|&j| !active.contains(j + 1)).collect();
        let lambda0 = if active.contains(0) {
            match free.first() {
                Some(&j) => r[j],
                None => r.iter().fold(0.0f64, |a, &b| a.max(b)),
            }
        } else {
            0.0
        };
        if lambda0 < -tol || free.iter().any(|&j| (r[j] - lambda0).abs() > tol) {
            return None;
        }
        lambda[0] = lambda0.max(0.0);
        for i in active.iter().filter(|&i| i > 0) {
            let li = lambda0 - r[i - 1];
            if li < -tol {
                return None;
            }
            lambda[i] = li.max(0.0);
        }
        Some(lambda)
    }

    /// Upper end of every coordinate's range, `m − (m−1)δ`.
    pub fn coordinate_max(&self) -> f64 {
        self.m as f64 - (self.m as f64 - 1.0) * self.delta
    }

    /// The `m + 1` vertices: `δ·1` and, for each `j`, the point with
    /// coordinate `j` at [`Polytope::coordinate_max`] and the rest at `δ`.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![self.delta; self.m]];
        for j in 0..self.m {
            let mut v = vec![self.delta; self.m];
            v[j] = self.coordinate_max();
            out.push(v);
        }
        out
    }

    /// Feasible points of the lattice with `res` points per axis over
    /// `[δ, coordinate_max]^m`.
    pub fn feasible_grid(&self, res: usize) -> Vec<Vec<f64>> {
        let axis = self.axis(res);
        let mut out = Vec::new();
        let mut idx = vec![0usize; self.m];
        let mut point = vec![0.0; self.m];
        if res == 0 {
            return out;
        }
        loop {
            for (p, &i) in point.iter_mut().zip(&idx) {
                *p = axis[i];
            }
            if self.is_feasible(&point, 1e-12) {
                out.push(point.clone());
            }
            let Some(k) = (0..self.m).find(|&k| idx[k] + 1 < res) else {
                return out;
            };
            idx[k] += 1;
            idx[..k].iter_mut().for_each(|i| *i = 0);
        }
    }

    /// Points on facet `g_facet = 0`: the lattice of [`Polytope::feasible_grid`]
    /// on the free coordinates, with the remaining coordinate fixed by the
    /// facet equation. For `m = 2` these are `res` evenly spaced points
    /// including both corners.
    pub fn facet_points(&self, facet: usize, res: usize) -> Vec<Vec<f64>> {
        assert!(facet <= self.m, "facet index out of range");
        if self.m == 1 {
            let x = if facet == 0 { 1.0 } else { self.delta };
            return vec![vec![x]];
        }
        let axis = self.axis(res);
        let mut out = Vec::new();
        let mut idx = vec![0usize; self.m - 1];
        if res == 0 {
            return out;
        }
        loop {
            let free: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
            let point = if facet == 0 {
                let mut p = free.clone();
                p.push(self.m as f64 - free.iter().sum::<f64>());
                p
            } else {
                let mut p = free.clone();
                p.insert(facet - 1, self.delta);
                p
            };
            if self.is_feasible(&point, 1e-12) {
                out.push(point);
            }
            let Some(k) = (0..idx.len()).find(|&k| idx[k] + 1 < res) else {
                return out;
            };
            idx[k] += 1;
            idx[..k].iter_mut().for_each(|i| *i = 0);
        }
    }

    fn axis(&self, res: usize) -> Vec<f64> {
        let (lo, hi) = (self.delta, self.coordinate_max());
        match res {
            0 => vec![],
            1 => vec![lo],
            _ => (0..res)
                .map(|i| {
                    if i + 1 == res {
                        hi
                    } else {
                        lo + (hi - lo) * i as f64 / (res - 1) as f64
                    }
                })
                .collect(),
        }
    }
}

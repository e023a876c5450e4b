//! Small dense front end to a simplex solver, used by the certificate search.
//!
//! Problems are stated as `maximize cᵀz` subject to dense rows
//! `aᵀz {≤,≥,=} b` and per-variable bounds.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

/// Relation of a constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// Why an LP has no optimal solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    objective: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub objective: f64,
    pub values: Vec<f64>,
}

impl LinearProgram {
    /// A maximization problem in `n` free variables with zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.bounds[var] = (lo, hi);
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.num_vars(), "row length mismatch");
        self.rows.push((coeffs, rel, rhs));
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], Relation, f64)> {
        self.rows.iter().map(|(a, r, b)| (a.as_slice(), *r, *b))
    }

    /// Largest violation of any row or bound at `z` (zero when feasible).
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|(a, rel, b)| {
            let lhs: f64 = a.iter().zip(z).map(|(ai, zi)| ai * zi).sum();
            match rel {
                Relation::Le => (lhs - b).max(0.0),
                Relation::Ge => (b - lhs).max(0.0),
                Relation::Eq => (lhs - b).abs(),
            }
        });
        let bounds = self
            .bounds
            .iter()
            .zip(z)
            .map(|(&(lo, hi), &zi)| (lo - zi).max(zi - hi).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    pub fn solve(&self) -> Result<LpSolution, LpStatus> {
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = self
            .objective
            .iter()
            .zip(&self.bounds)
            .map(|(&c, &b)| problem.add_var(c, b))
            .collect();
        for (a, rel, b) in &self.rows {
            let expr: Vec<_> = a
                .iter()
                .enumerate()
                .filter(|(_, &ai)| ai != 0.0)
                .map(|(j, &ai)| (vars[j], ai))
                .collect();
            let op = match rel {
                Relation::Le => ComparisonOp::Le,
                Relation::Ge => ComparisonOp::Ge,
                Relation::Eq => ComparisonOp::Eq,
            };
            problem.add_constraint(expr.as_slice(), op, *b);
        }
        match problem.solve() {
            // the solver can report an unbounded ray as an infinite optimum
            Ok(sol) if !sol.objective().is_finite() => Err(LpStatus::Unbounded),
            Ok(sol) => Ok(LpSolution {
                objective: sol.objective(),
                values: vars.iter().map(|&v| *sol.var_value(v)).collect(),
            }),
            Err(minilp::Error::Infeasible) => Err(LpStatus::Infeasible),
            Err(minilp::Error::Unbounded) => Err(LpStatus::Unbounded),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Best objective over all basic feasible points: every choice of `n`
    /// tight constraints (rows or finite bounds) with a nonsingular system.
    fn vertex_oracle(lp: &LinearProgram) -> Option<f64> {
        let n = lp.num_vars();
        let mut planes: Vec<(Vec<f64>, f64)> =
            lp.rows.iter().map(|(a, _, b)| (a.clone(), *b)).collect();
        for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            if lo.is_finite() {
                planes.push((e.clone(), lo));
            }
            if hi.is_finite() {
                planes.push((e, hi));
            }
        }
        let mut best: Option<f64> = None;
        let mut pick = vec![0usize; n];
        fn combos(
            k: usize,
            start: usize,
            total: usize,
            pick: &mut Vec<usize>,
            out: &mut dyn FnMut(&[usize]),
        ) {
            if k == pick.len() {
                out(pick);
                return;
            }
            for i in start..total {
                pick[k] = i;
                combos(k + 1, i + 1, total, pick, out);
            }
        }
        combos(0, 0, planes.len(), &mut pick, &mut |idx| {
            let a = DMatrix::from_fn(n, n, |r, c| planes[idx[r]].0[c]);
            let b = DVector::from_fn(n, |r, _| planes[idx[r]].1);
            let Some(z) = a.lu().solve(&b) else { return };
            let z: Vec<f64> = z.iter().copied().collect();
            if lp.max_violation(&z) > 1e-9 {
                return;
            }
            let obj: f64 = lp.objective.iter().zip(&z).map(|(c, x)| c * x).sum();
            if best.is_none_or(|b| obj > b) {
                best = Some(obj);
            }
        });
        best
    }

    #[test]
    fn textbook_instance() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 3.0);
        lp.set_objective(1, 5.0);
        lp.set_bounds(0, 0.0, f64::INFINITY);
        lp.set_bounds(1, 0.0, f64::INFINITY);
        lp.add_row(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.add_row(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.add_row(vec![3.0, 2.0], Relation::Le, 18.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 36.0).abs() < 1e-9);
        assert!((sol.values[0] - 2.0).abs() < 1e-9 && (sol.values[1] - 6.0).abs() < 1e-9);
        assert_eq!(vertex_oracle(&lp), Some(36.0));
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.add_row(vec![1.0], Relation::Ge, 2.0);
        lp.add_row(vec![1.0], Relation::Le, 1.0);
        assert_eq!(lp.solve(), Err(LpStatus::Infeasible));

        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 1.0);
        lp.set_bounds(0, 0.0, f64::INFINITY);
        lp.add_row(vec![1.0, -1.0], Relation::Le, 1.0);
        lp.set_bounds(1, 0.0, f64::INFINITY);
        assert_eq!(lp.solve(), Err(LpStatus::Unbounded));
    }

    #[test]
    fn equality_rows() {
        let mut lp = LinearProgram::new(3);
        for j in 0..3 {
            lp.set_objective(j, (j + 1) as f64);
            lp.set_bounds(j, 0.0, 1.0);
        }
        lp.add_row(vec![1.0, 1.0, 1.0], Relation::Eq, 1.5);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 4.0).abs() < 1e-9);
        assert!((vertex_oracle(&lp).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn random_instances_match_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..35 {
            let n = 2 + case % 7;
            let rows = 1 + case % 2;
            let mut lp = LinearProgram::new(n);
            for j in 0..n {
                lp.set_objective(j, rng.random_range(-1.0..1.0));
                lp.set_bounds(j, -2.0, 2.0);
            }
            for _ in 0..rows {
                let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let rel = if rng.random_bool(0.8) {
                    Relation::Le
                } else {
                    Relation::Ge
                };
                let b = match rel {
                    Relation::Le => rng.random_range(0.0..2.0),
                    _ => rng.random_range(-2.0..0.0),
                };
                lp.add_row(a, rel, b);
            }
            let oracle = vertex_oracle(&lp).expect("origin is feasible, box is bounded");
            let sol = lp.solve().unwrap();
            assert!(lp.max_violation(&sol.values) < 1e-9);
            assert!(
                (sol.objective - oracle).abs() < 1e-8,
                "case {case}: {} vs {oracle}",
                sol.objective
            );
        }
    }
}

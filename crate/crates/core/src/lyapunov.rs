//! Quadratic Lyapunov certificates for the projected mean dynamics.
//!
//! A certificate is `L(x) = ½ (x − x*)ᵀ H (x − x*)` with `H` positive definite
//! and a rate `w > 0`. It is checked against three conditions on the
//! polytope:
//!
//! 1. bounds: `α̲‖x − x*‖² ≤ L(x) ≤ α̅‖x − x*‖²` with `α = λ(H)/2`;
//! 2. decrease: `⟨∇L(x), v(x)⟩ ≤ −w‖x − x*‖²`;
//! 3. boundary: `⟨∇L(x), ∇g_i(x)⟩ ≤ 0` on each facet `g_i = 0`.
//!
//! For two pieces the product `x₁x₂⟨∇L, v⟩` with `H = diag(52, 20)` is a cubic
//! polynomial ([`expanded_polynomial`]), and a weighted sum
//! `Σ g_i(x)·(x − x*)ᵀΣ_i(x − x*)` with negative semidefinite `Σ_i` proves
//! condition 2 on the whole set. [`rederive_sigmas`] finds such `Σ_i` by
//! coefficient matching; [`search_certificate_lp`] finds `H` from a grid LP.

use std::fmt::Write as _;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::lp::{LinearProgram, LpStatus, Relation};
use crate::parametric::{equilibrium, GameField, GradientMode, ProfitKernel};

/// Slack allowed on every verified margin.
pub const VERIFY_TOL: f64 = 1e-12;
/// Box on the entries of `H` in the certificate LP.
pub const H_ENTRY_BOUND: f64 = 100.0;
/// Default decrease rate for the LP search.
pub const DEFAULT_LP_W: f64 = 0.05;

/// `w = −λ*/8 · (2 − 2δ)`, the decrease rate implied by a decomposition
/// whose largest eigenvalue is `λ*`.
pub fn decrease_rate(lambda_star: f64, delta: f64) -> f64 {
    -lambda_star / 8.0 * (2.0 - 2.0 * delta)
}

/// A quadratic certificate `½ (x − x*)ᵀ H (x − x*)` with decrease rate `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCertificate {
    h: DMatrix<f64>,
    x_star: Vec<f64>,
    w: f64,
    alpha_lower: f64,
    alpha_upper: f64,
}

impl QuadraticCertificate {
    pub fn new(h: DMatrix<f64>, x_star: Vec<f64>, w: f64) -> Result<Self> {
        let m = x_star.len();
        if h.nrows() != m || h.ncols() != m || m == 0 {
            return Err(Error::InvalidCertificate(format!(
                "H is {}×{} but x* has length {m}",
                h.nrows(),
                h.ncols()
            )));
        }
        let scale = h.amax().max(1.0);
        if (&h - h.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidCertificate("H is not symmetric".into()));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidCertificate(format!(
                "rate w must be nonnegative, got {w}"
            )));
        }
        let eig = SymmetricEigen::new(h.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 0.0) {
            return Err(Error::InvalidCertificate(format!(
                "H is not positive definite (smallest eigenvalue {lo})"
            )));
        }
        Ok(Self {
            h,
            x_star,
            w,
            alpha_lower: lo / 2.0,
            alpha_upper: hi / 2.0,
        })
    }

    /// `H = diag(52, 20)` around `(½, ½)` with the rate implied by the
    /// reference decomposition at `delta`.
    pub fn reference(delta: f64) -> Self {
        let w = decrease_rate(DecompositionData::reference().lambda_star(), delta);
        Self::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![52.0, 20.0])),
            equilibrium(2),
            w,
        )
        .expect("diag(52, 20) is positive definite")
    }

    pub fn from_rows(rows: &[Vec<f64>], x_star: Vec<f64>, w: f64) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidCertificate("H must be square".into()));
        }
        Self::new(DMatrix::from_fn(m, m, |i, j| rows[i][j]), x_star, w)
    }

    pub fn m(&self) -> usize {
        self.x_star.len()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn alpha_lower(&self) -> f64 {
        self.alpha_lower
    }

    pub fn alpha_upper(&self) -> f64 {
        self.alpha_upper
    }

    pub fn with_w(&self, w: f64) -> Result<Self> {
        Self::new(self.h.clone(), self.x_star.clone(), w)
    }

    /// `L(x)`.
    pub fn value(&self, x: &[f64]) -> f64 {
        lyapunov_value_grad(self, x).0
    }

    /// Plain-text form: keyed lines `m`, `w`, `x_star` and one `h` line per
    /// row, numbers with 17 significant digits.
    pub fn to_text(&self) -> String {
        let num = |v: f64| format!("{v:.16e}");
        let join =
            |vals: &mut dyn Iterator<Item = f64>| vals.map(num).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        writeln!(out, "m {}", self.m()).unwrap();
        writeln!(out, "w {}", num(self.w)).unwrap();
        writeln!(out, "x_star {}", join(&mut self.x_star.iter().copied())).unwrap();
        for i in 0..self.m() {
            writeln!(out, "h {}", join(&mut self.h.row(i).iter().copied())).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let parse = |tok: &str| {
            tok.parse::<f64>()
                .map_err(|_| Error::Parse(format!("not a number: '{tok}'")))
        };
        let (mut m, mut w, mut x_star, mut rows) = (None, None, None, Vec::new());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut toks = line.split_whitespace();
            let key = toks.next().unwrap();
            let vals: Vec<f64> = toks.map(parse).collect::<Result<_>>()?;
            match key {
                "m" => {
                    m =
                        Some(line[1..].trim().parse::<usize>().map_err(|_| {
                            Error::Parse(format!("line {}: bad dimension", lineno + 1))
                        })?)
                }
                "w" if vals.len() == 1 => w = Some(vals[0]),
                "x_star" => x_star = Some(vals),
                "h" => rows.push(vals),
                other => {
                    return Err(Error::Parse(format!(
                        "line {}: unexpected key '{other}' (expected m, w, x_star, h)",
                        lineno + 1
                    )))
                }
            }
        }
        let m = m.ok_or_else(|| Error::Parse("missing 'm'".into()))?;
        let w = w.ok_or_else(|| Error::Parse("missing 'w'".into()))?;
        let x_star = x_star.ok_or_else(|| Error::Parse("missing 'x_star'".into()))?;
        if x_star.len() != m || rows.len() != m {
            return Err(Error::Parse(format!(
                "dimension {m} but x_star has {} entries and H has {} rows",
                x_star.len(),
                rows.len()
            )));
        }
        Self::from_rows(&rows, x_star, w)
    }
}

/// `(L(x), ∇L(x)) = (½ uᵀHu, Hu)` with `u = x − x*`.
pub fn lyapunov_value_grad(cert: &QuadraticCertificate, x: &[f64]) -> (f64, Vec<f64>) {
    let u: Vec<f64> = x.iter().zip(&cert.x_star).map(|(a, b)| a - b).collect();
    let m = u.len();
    let grad: Vec<f64> = (0..m)
        .map(|i| (0..m).map(|j| cert.h[(i, j)] * u[j]).sum())
        .collect();
    let value = 0.5 * grad.iter().zip(&u).map(|(g, ui)| g * ui).sum::<f64>();
    (value, grad)
}

/// Gradient of the constraint `g_facet` (constant on the polytope).
pub fn constraint_gradient(m: usize, facet: usize) -> Vec<f64> {
    if facet == 0 {
        vec![-1.0; m]
    } else {
        let mut e = vec![0.0; m];
        e[facet - 1] = 1.0;
        e
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Worst sampled margin of one condition and where it occurs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub margin: f64,
    pub witness: Option<Vec<f64>>,
    pub samples: usize,
}

impl ConditionCheck {
    fn from_samples(samples: impl Iterator<Item = (f64, Vec<f64>)>) -> Self {
        let mut out = Self {
            margin: f64::INFINITY,
            witness: None,
            samples: 0,
        };
        for (margin, x) in samples {
            out.samples += 1;
            if margin < out.margin || margin.is_nan() {
                out.margin = margin;
                out.witness = Some(x);
            }
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.margin >= -VERIFY_TOL
    }
}

/// Outcome of [`verify_certificate`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    /// `min(L − α̲r², α̅r² − L)` over all sampled points.
    pub bounds: ConditionCheck,
    /// `min(−⟨∇L, v⟩ − w r²)` over grid and facet points.
    pub decrease: ConditionCheck,
    /// Per facet, `min(−⟨∇L, ∇g_i⟩)` over sampled facet points.
    pub boundary: Vec<ConditionCheck>,
    /// `min(−⟨∇L, ∇g_i⟩)` over the vertices of each facet. The expression is
    /// affine in `x`, so this margin is exact for the whole facet.
    pub boundary_exact: f64,
    pub warnings: Vec<String>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.bounds.passed()
            && self.decrease.passed()
            && self.boundary.iter().all(ConditionCheck::passed)
            && self.boundary_exact >= -VERIFY_TOL
    }
}

/// Checks the three certificate conditions on a `res`-per-axis grid of the
/// polytope plus `res` points per facet.
pub fn verify_certificate(
    cert: &QuadraticCertificate,
    delta: f64,
    res: usize,
    field: &GameField,
) -> Result<VerificationReport> {
    verify_certificate_with(cert, delta, res, res, field)
}

/// As [`verify_certificate`] with a separate facet resolution.
pub fn verify_certificate_with(
    cert: &QuadraticCertificate,
    delta: f64,
    res: usize,
    facet_res: usize,
    field: &GameField,
) -> Result<VerificationReport> {
    let m = cert.m();
    let poly = Polytope::new(m, delta)?;
    let mut warnings = Vec::new();
    if delta > 0.5 {
        warnings.push(format!(
            "delta = {delta} exceeds 1/2; the decrease rate of the reference decomposition is not guaranteed"
        ));
    }
    let facets: Vec<Vec<Vec<f64>>> = (0..=m).map(|i| poly.facet_points(i, facet_res)).collect();
    let mut points = poly.feasible_grid(res);
    points.extend(facets.iter().flatten().cloned());

    let x_star = cert.x_star();
    let evaluated: Vec<(f64, f64, Vec<f64>)> = points
        .par_iter()
        .map(|x| -> Result<_> {
            let (l, grad) = lyapunov_value_grad(cert, x);
            let r2 = dist2(x, x_star);
            let bound = (l - cert.alpha_lower * r2).min(cert.alpha_upper * r2 - l);
            let v = field.eval(x)?;
            let decrease = -dot(&grad, &v) - cert.w * r2;
            Ok((bound, decrease, x.clone()))
        })
        .collect::<Result<_>>()?;
    let bounds = ConditionCheck::from_samples(evaluated.iter().map(|(b, _, x)| (*b, x.clone())));
    let decrease = ConditionCheck::from_samples(evaluated.into_iter().map(|(_, d, x)| (d, x)));

    let boundary = facets
        .iter()
        .enumerate()
        .map(|(i, pts)| {
            let ng = constraint_gradient(m, i);
            ConditionCheck::from_samples(
                pts.iter()
                    .map(|x| (-dot(&lyapunov_value_grad(cert, x).1, &ng), x.clone())),
            )
        })
        .collect();

    let vertices = poly.vertices();
    let boundary_exact = (0..=m)
        .flat_map(|i| {
            let ng = constraint_gradient(m, i);
            vertices
                .iter()
                .filter(move |v| poly.constraint_values(v)[i].abs() < 1e-12)
                .map(move |v| -dot(&lyapunov_value_grad(cert, v).1, &ng))
                .collect::<Vec<_>>()
        })
        .fold(f64::INFINITY, f64::min);

    Ok(VerificationReport {
        bounds,
        decrease,
        boundary,
        boundary_exact,
        warnings,
    })
}

/// The cubic `x₁x₂⟨∇L(x), v(x)⟩` for `H = diag(52, 20)` in the two-piece game.
pub fn expanded_polynomial(x: [f64; 2]) -> f64 {
    let [x1, x2] = x;
    -5.0 * x2.powi(3) / 2.0 - 119.0 * x2 * x2 * x1 / 12.0 + 53.0 * x2 * x2 / 8.0
        - 91.0 * x2 * x1 * x1 / 12.0
        + 107.0 * x2 * x1 / 8.0
        - 55.0 * x2 / 12.0
        - 5.0 * x1 / 12.0
}

/// `x₁x₂⟨∇L(x), v(x)⟩` for the reference certificate, using the closed-form
/// two-piece field.
pub fn reference_decrease_product(x: [f64; 2]) -> f64 {
    let field = GameField::new(ProfitKernel::all_or_nothing(), GradientMode::ClosedM2);
    let v = field.eval(&x).expect("positive slopes");
    let grad = [52.0 * (x[0] - 0.5), 20.0 * (x[1] - 0.5)];
    x[0] * x[1] * (grad[0] * v[0] + grad[1] * v[1])
}

type Mat2 = [[f64; 2]; 2];

fn max_eig2(s: &Mat2) -> f64 {
    let (a, b, c) = (s[0][0], s[0][1], s[1][1]);
    0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt()
}

/// Three symmetric 2×2 matrices weighting the constraints in
/// `Σ g_i(x)·(x − x*)ᵀΣ_i(x − x*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionData {
    sigmas: [Mat2; 3],
    lambda_star: f64,
}

impl DecompositionData {
    pub fn new(sigmas: [Mat2; 3]) -> Result<Self> {
        if sigmas
            .iter()
            .any(|s| (s[0][1] - s[1][0]).abs() > 1e-12 * (1.0 + s[0][1].abs()))
        {
            return Err(Error::InvalidCertificate(
                "Σ matrices must be symmetric".into(),
            ));
        }
        let lambda_star = sigmas
            .iter()
            .map(max_eig2)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            sigmas,
            lambda_star,
        })
    }

    /// The published matrices for `H = diag(52, 20)`.
    pub fn reference() -> Self {
        let s1 = [
            [-15463.0 / 1026.0, -955.0 / 108.0],
            [-955.0 / 108.0, -11.0 / 2.0],
        ];
        let s2 = [
            [-21.0 / 38.0, -35.0 / 108.0],
            [-35.0 / 108.0, -143.0 / 54.0],
        ];
        let s0 = [[-21.0 / 38.0, 0.0], [0.0, -0.5]];
        Self::new([s0, s1, s2]).expect("symmetric")
    }

    pub fn sigma(&self, i: usize) -> Mat2 {
        self.sigmas[i]
    }

    /// Largest eigenvalue over all three matrices.
    pub fn lambda_star(&self) -> f64 {
        self.lambda_star
    }

    pub fn is_negative_semidefinite(&self) -> bool {
        self.lambda_star <= VERIFY_TOL
    }

    /// `(x − x*)ᵀ Σ_i (x − x*)`.
    pub fn sigma_value(&self, i: usize, x: [f64; 2]) -> f64 {
        let u = [x[0] - 0.5, x[1] - 0.5];
        let s = &self.sigmas[i];
        s[0][0] * u[0] * u[0] + 2.0 * s[0][1] * u[0] * u[1] + s[1][1] * u[1] * u[1]
    }

    /// `Σ g_i(x) σ_i(x)` with the constraints of `B_δ²`.
    pub fn combined(&self, x: [f64; 2], delta: f64) -> f64 {
        let g = [2.0 - x[0] - x[1], x[0] - delta, x[1] - delta];
        (0..3).map(|i| g[i] * self.sigma_value(i, x)).sum()
    }
}

/// Residuals of the polynomial identities behind the decrease condition.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    /// `max |x₁x₂⟨∇L, v⟩ − P(x)|`.
    pub expansion_residual: f64,
    /// `max |P(x) − Σ g_i σ_i|`.
    pub decomposition_residual: f64,
    /// Point attaining the decomposition residual.
    pub worst_point: [f64; 2],
    pub samples: usize,
}

/// Evaluates both residuals at `points`.
pub fn decomposition_check(
    decomp: &DecompositionData,
    delta: f64,
    points: &[[f64; 2]],
) -> DecompositionReport {
    let mut report = DecompositionReport {
        expansion_residual: 0.0,
        decomposition_residual: 0.0,
        worst_point: [0.5, 0.5],
        samples: points.len(),
    };
    for &x in points {
        let p = expanded_polynomial(x);
        report.expansion_residual = report
            .expansion_residual
            .max((reference_decrease_product(x) - p).abs());
        let r = (p - decomp.combined(x, delta)).abs();
        if r > report.decomposition_residual {
            report.decomposition_residual = r;
            report.worst_point = x;
        }
    }
    report
}

/// A `res × res` feasible grid of `B_δ²` as fixed-size points.
pub fn check_points(delta: f64, res: usize) -> Result<Vec<[f64; 2]>> {
    Ok(Polytope::new(2, delta)?
        .feasible_grid(res)
        .into_iter()
        .map(|x| [x[0], x[1]])
        .collect())
}

struct MaxEigen {
    base: DVector<f64>,
    null: DMatrix<f64>,
}

impl MaxEigen {
    fn sigmas(&self, t: &[f64]) -> [Mat2; 3] {
        let z = &self.base + &self.null * DVector::from_column_slice(t);
        std::array::from_fn(|i| [[z[3 * i], z[3 * i + 1]], [z[3 * i + 1], z[3 * i + 2]]])
    }
}

impl CostFunction for MaxEigen {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, t: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self
            .sigmas(t)
            .iter()
            .map(max_eig2)
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Finds `Σ_0, Σ_1, Σ_2` with `P = Σ g_i σ_i` identically in `x`, choosing
/// among all exact solutions the one with the smallest largest eigenvalue.
///
/// The identity is linear in the nine matrix entries; it is imposed at
/// collocation points (more than the ten cubic coefficients), solved in the
/// least-squares sense, and the remaining freedom is the null space of the
/// collocation matrix. The largest eigenvalue is convex on that affine set
/// and is minimized with Nelder–Mead.
pub fn rederive_sigmas(delta: f64) -> Result<DecompositionData> {
    Polytope::new(2, delta)?;
    let pts: Vec<[f64; 2]> = (0..7)
        .flat_map(|i| (0..7).map(move |j| [i as f64 / 3.0, j as f64 / 3.0]))
        .collect();
    let row = |x: [f64; 2]| {
        let u = [x[0] - 0.5, x[1] - 0.5];
        let g = [2.0 - x[0] - x[1], x[0] - delta, x[1] - delta];
        let q = [u[0] * u[0], 2.0 * u[0] * u[1], u[1] * u[1]];
        let mut r = [0.0; 9];
        for i in 0..3 {
            for k in 0..3 {
                r[3 * i + k] = g[i] * q[k];
            }
        }
        r
    };
    let a = DMatrix::from_fn(pts.len(), 9, |r, c| row(pts[r])[c]);
    let b = DVector::from_iterator(pts.len(), pts.iter().map(|&x| expanded_polynomial(x)));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-10 * smax;
    let base = svd
        .solve(&b, cutoff)
        .map_err(|e| Error::SearchFailed(format!("least squares failed: {e}")))?;
    let residual = (&a * &base - &b).amax();
    if residual > 1e-10 {
        return Err(Error::SearchFailed(format!(
            "no exact decomposition (collocation residual {residual:e})"
        )));
    }
    let v_t = svd.v_t.expect("requested");
    let null_rows: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] <= cutoff)
        .collect();
    let null = DMatrix::from_fn(9, null_rows.len(), |r, c| v_t[(null_rows[c], r)]);
    let k = null.ncols();
    let problem = MaxEigen { base, null };

    let mut best = vec![0.0; k];
    let mut best_cost = problem.cost(&best).unwrap();
    if k > 0 {
        let mut scale = 10.0;
        for _ in 0..6 {
            let mut simplex = vec![best.clone()];
            for d in 0..k {
                let mut p = best.clone();
                p[d] += scale;
                simplex.push(p);
            }
            let solver = NelderMead::new(simplex)
                .with_sd_tolerance(1e-14)
                .map_err(|e| Error::SearchFailed(e.to_string()))?;
            let run = Executor::new(
                MaxEigen {
                    base: problem.base.clone(),
                    null: problem.null.clone(),
                },
                solver,
            )
            .configure(|s| s.max_iters(4000))
            .run()
            .map_err(|e| Error::SearchFailed(e.to_string()))?;
            if let Some(p) = run.state().get_best_param() {
                let c = problem.cost(p).unwrap();
                if c < best_cost {
                    best_cost = c;
                    best = p.clone();
                }
            }
            scale /= 10.0;
        }
    }
    let data = DecompositionData::new(problem.sigmas(&best))?;
    if !data.is_negative_semidefinite() {
        return Err(Error::SearchFailed(format!(
            "best decomposition has largest eigenvalue {:e} > 0",
            data.lambda_star()
        )));
    }
    Ok(data)
}

/// The grid LP whose feasible points are certificate matrices `H`.
///
/// Variables are the upper triangle of `H` (boxed by [`H_ENTRY_BOUND`]) and a
/// robustness slack `γ ≥ 0`; the objective maximizes `γ`. Rows:
///
/// * `⟨H(x − x*), v(x)⟩ + γ ≤ −w‖x − x*‖²` at every grid and facet point
///   except `x*` itself;
/// * `⟨H(x − x*), ∇g_i⟩ ≤ 0` at every point of facet `i`.
#[derive(Debug, Clone)]
pub struct CertificateLp {
    m: usize,
    lp: LinearProgram,
}

impl CertificateLp {
    pub fn build(m: usize, delta: f64, w: f64, res: usize, field: &GameField) -> Result<Self> {
        let poly = Polytope::new(m, delta)?;
        let x_star = equilibrium(m);
        let n_h = m * (m + 1) / 2;
        let mut lp = LinearProgram::new(n_h + 1);
        for k in 0..n_h {
            lp.set_bounds(k, -H_ENTRY_BOUND, H_ENTRY_BOUND);
        }
        lp.set_bounds(n_h, 0.0, f64::INFINITY);
        lp.set_objective(n_h, 1.0);

        let facets: Vec<Vec<Vec<f64>>> = (0..=m).map(|i| poly.facet_points(i, res)).collect();
        let mut points = poly.feasible_grid(res);
        points.extend(facets.iter().flatten().cloned());
        let rows: Vec<Option<(Vec<f64>, f64)>> = points
            .par_iter()
            .map(|x| -> Result<_> {
                let r2 = dist2(x, &x_star);
                if r2 < 1e-14 {
                    return Ok(None);
                }
                let u: Vec<f64> = x.iter().zip(&x_star).map(|(a, b)| a - b).collect();
                let v = field.eval(x)?;
                let mut coeffs = bilinear_row(&u, &v);
                coeffs.push(1.0);
                Ok(Some((coeffs, -w * r2)))
            })
            .collect::<Result<_>>()?;
        for (coeffs, rhs) in rows.into_iter().flatten() {
            lp.add_row(coeffs, Relation::Le, rhs);
        }
        for (i, pts) in facets.iter().enumerate() {
            let ng = constraint_gradient(m, i);
            for x in pts {
                let u: Vec<f64> = x.iter().zip(&x_star).map(|(a, b)| a - b).collect();
                let mut coeffs = bilinear_row(&u, &ng);
                coeffs.push(0.0);
                lp.add_row(coeffs, Relation::Le, 0.0);
            }
        }
        if lp.num_rows() == 0 {
            return Err(Error::GridTooCoarse);
        }
        Ok(Self { m, lp })
    }

    pub fn num_constraints(&self) -> usize {
        self.lp.num_rows()
    }

    /// Largest constraint violation of `(H, γ)` (zero when feasible).
    pub fn max_violation(&self, h: &DMatrix<f64>, gamma: f64) -> f64 {
        let mut z = Vec::with_capacity(self.lp.num_vars());
        for i in 0..self.m {
            for j in i..self.m {
                z.push(h[(i, j)]);
            }
        }
        z.push(gamma);
        self.lp.max_violation(&z)
    }

    /// The optimal `(H, γ)`.
    pub fn solve(&self) -> Result<(DMatrix<f64>, f64)> {
        let sol = self.lp.solve().map_err(|s| match s {
            LpStatus::Infeasible => Error::NoCertificate,
            LpStatus::Unbounded => Error::GridTooCoarse,
        })?;
        let mut h = DMatrix::zeros(self.m, self.m);
        let mut k = 0;
        for i in 0..self.m {
            for j in i..self.m {
                h[(i, j)] = sol.values[k];
                h[(j, i)] = sol.values[k];
                k += 1;
            }
        }
        Ok((h, sol.values[k]))
    }
}

/// Coefficients of `⟨H u, a⟩` in the upper-triangle entries of `H`.
fn bilinear_row(u: &[f64], a: &[f64]) -> Vec<f64> {
    let m = u.len();
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in i..m {
            out.push(if i == j {
                a[i] * u[i]
            } else {
                a[i] * u[j] + a[j] * u[i]
            });
        }
    }
    out
}

/// Solves the certificate LP on a `res` grid and re-verifies the result on a
/// grid four times finer. With `round`, `H` is rounded to integers first.
pub fn search_certificate_lp(
    m: usize,
    delta: f64,
    w: f64,
    res: usize,
    field: &GameField,
    round: bool,
) -> Result<QuadraticCertificate> {
    let (mut h, _gamma) = CertificateLp::build(m, delta, w, res, field)?.solve()?;
    if round {
        h.apply(|v| *v = v.round());
    }
    let cert = QuadraticCertificate::new(h, equilibrium(m), w)?;
    let report = verify_certificate(&cert, delta, 4 * res, field)?;
    if !report.passed() {
        return Err(Error::InvalidCertificate(format!(
            "LP solution fails refined verification (decrease margin {:e} at {:?}, boundary margin {:e})",
            report.decrease.margin, report.decrease.witness, report.boundary_exact
        )));
    }
    Ok(cert)
}

//! Regularized Robbins–Monro learning with the Euclidean regularizer.
//!
//! Each firm observes a noisy, biased estimate of the game gradient,
//!
//! ```text
//! v̂_n = v(x_n) + n^{ℓσ} θ_n + n^{−ℓb} b,
//! ```
//!
//! with `θ_n` uniform in the unit ball and a fixed direction `b`, and moves
//! with step `γ_n = γ₀ n^{−ℓγ}`:
//!
//! * greedy: `x_{n+1} = Π_B(x_n + γ_n v̂_n)`;
//! * dual accumulation: `y_{n+1} = y_n + γ_n v̂_n`, `x_{n+1} = Π_B(y_{n+1})`.
//!
//! The optimistic variant evaluates the signal at the lookahead
//! `Π_B(base + γ_n v̂_{n−1})`; extra-gradient at the interim point
//! `Π_B(base + γ_n v̂(x_n))`.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`: stream 0 draws the
//! noise, stream 1 draws `b` once per run.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::lyapunov::QuadraticCertificate;
use crate::parametric::{GameField, GradientMode, ProfitKernel};

/// Radius of the ball used for the hitting time in [`ConvergenceStats`].
pub const HIT_RADIUS: f64 = 0.05;

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    other => Err(Error::Usage(format!(
                        concat!("unknown ", stringify!($name), " '{}' (expected {})"),
                        other,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

string_enum!(
    /// Which point the signal is evaluated at.
    Variant {
        Vanilla => "vanilla",
        Optimistic => "optimistic",
        ExtraGradient => "extra_gradient",
    }
);

string_enum!(
    /// Whether steps accumulate in the dual space or restart from `x_n`.
    ProjectionStyle {
        DualAccumulation => "dual_accumulation",
        Greedy => "greedy",
    }
);

/// How the fixed bias direction `b` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum BiasMode {
    /// Uniform on the unit sphere.
    RandomUnit,
    /// Uniform in the unit ball.
    RandomBall,
    Zero,
    Fixed(Vec<f64>),
}

impl fmt::Display for BiasMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RandomUnit => f.write_str("random_unit"),
            Self::RandomBall => f.write_str("random_ball"),
            Self::Zero => f.write_str("zero"),
            Self::Fixed(b) => {
                let parts: Vec<String> = b.iter().map(|v| format!("{v}")).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl FromStr for BiasMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random_unit" => Ok(Self::RandomUnit),
            "random_ball" => Ok(Self::RandomBall),
            "zero" => Ok(Self::Zero),
            other => parse_vector(other).map(Self::Fixed).map_err(|_| {
                Error::Usage(format!(
                    "bias_mode must be random_unit, random_ball, zero or a comma-separated vector, got '{other}'"
                ))
            }),
        }
    }
}

impl From<BiasMode> for String {
    fn from(b: BiasMode) -> String {
        b.to_string()
    }
}

impl TryFrom<String> for BiasMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Parses `"a,b,c"` into a vector.
pub fn parse_vector(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("not a number: '{t}'")))
        })
        .collect()
}

/// A learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrmConfig {
    pub m: usize,
    pub delta: f64,
    pub l_gamma: f64,
    pub l_sigma: f64,
    pub l_b: f64,
    pub variant: Variant,
    pub projection_style: ProjectionStyle,
    pub horizon: usize,
    pub seed: u64,
    pub noise_on: bool,
    pub bias_mode: BiasMode,
    /// Initial state; `(1, …, 1)` when absent.
    pub start: Option<Vec<f64>>,
    /// `γ₀` in `γ_n = γ₀ n^{−ℓγ}`.
    pub gamma_scale: f64,
    /// Run even if [`validate_schedule`] reports violations.
    pub allow_invalid_schedule: bool,
    /// Regularizer shift `c` for dual accumulation: the run starts from
    /// `y₁ = x₁ + c` and maps with `y ↦ Π_B(y − c)`.
    pub mirror_shift: Option<Vec<f64>>,
    pub gradient_mode: GradientMode,
}

impl Default for RrmConfig {
    fn default() -> Self {
        Self::standard(2)
    }
}

impl RrmConfig {
    /// Names accepted by [`RrmConfig::set`].
    pub const KEYS: [&'static str; 16] = [
        "m",
        "delta",
        "l_gamma",
        "l_sigma",
        "l_b",
        "variant",
        "projection_style",
        "horizon",
        "seed",
        "noise_on",
        "bias_mode",
        "start",
        "gamma_scale",
        "allow_invalid_schedule",
        "mirror_shift",
        "gradient_mode",
    ];

    /// `δ = 1/10, ℓγ = 0.05, ℓσ = −1, ℓb = 1`, greedy projection, `10⁵` steps.
    pub fn standard(m: usize) -> Self {
        Self {
            m,
            delta: 0.1,
            l_gamma: 0.05,
            l_sigma: -1.0,
            l_b: 1.0,
            variant: Variant::Vanilla,
            projection_style: ProjectionStyle::Greedy,
            horizon: 100_000,
            seed: 0,
            noise_on: true,
            bias_mode: BiasMode::RandomUnit,
            start: None,
            gamma_scale: 1.0,
            allow_invalid_schedule: false,
            mirror_shift: None,
            gradient_mode: GradientMode::Quadrature,
        }
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Usage(format!("invalid value '{v}' for '{key}'")))
        }
        let optional_vec = |v: &str| -> Result<Option<Vec<f64>>> {
            if v.is_empty() || v == "none" {
                Ok(None)
            } else {
                parse_vector(v).map(Some)
            }
        };
        match key {
            "m" => self.m = num(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "l_gamma" => self.l_gamma = num(key, value)?,
            "l_sigma" => self.l_sigma = num(key, value)?,
            "l_b" => self.l_b = num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "projection_style" => self.projection_style = value.parse()?,
            "horizon" => self.horizon = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "noise_on" => self.noise_on = num(key, value)?,
            "bias_mode" => self.bias_mode = value.parse()?,
            "start" => self.start = optional_vec(value)?,
            "gamma_scale" => self.gamma_scale = num(key, value)?,
            "allow_invalid_schedule" => self.allow_invalid_schedule = num(key, value)?,
            "mirror_shift" => self.mirror_shift = optional_vec(value)?,
            "gradient_mode" => self.gradient_mode = value.parse()?,
            other => {
                return Err(Error::Usage(format!(
                    "unknown config key '{other}'; valid keys: {}",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// The starting state.
    pub fn start_point(&self) -> Vec<f64> {
        self.start.clone().unwrap_or_else(|| vec![1.0; self.m])
    }

    /// `γ_n`.
    pub fn step_size(&self, n: usize) -> f64 {
        self.gamma_scale * (n as f64).powf(-self.l_gamma)
    }

    pub fn field(&self) -> GameField {
        GameField::new(ProfitKernel::all_or_nothing(), self.gradient_mode)
    }
}

/// Violations of the step, noise and bias exponents' requirements.
/// Empty means the schedule is admissible.
pub fn validate_schedule(cfg: &RrmConfig) -> Vec<String> {
    let mut out = Vec::new();
    if !(cfg.l_gamma > 0.0 && cfg.l_gamma <= 1.0) {
        out.push(format!("l_gamma = {} must lie in (0, 1]", cfg.l_gamma));
    }
    if !(cfg.l_b > 0.0) {
        out.push(format!("l_b = {} must be positive", cfg.l_b));
    }
    if !(cfg.l_gamma - cfg.l_sigma > 0.5) {
        out.push(format!(
            "l_gamma - l_sigma = {} must exceed 1/2",
            cfg.l_gamma - cfg.l_sigma
        ));
    }
    out
}

/// One gradient estimate and its parts; `value = field + noise + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSample {
    pub value: Vec<f64>,
    pub field: Vec<f64>,
    pub noise: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Draws gradient estimates for one run.
#[derive(Debug, Clone)]
pub struct SignalSource {
    field: GameField,
    rng: ChaCha8Rng,
    direction: Vec<f64>,
    l_sigma: f64,
    l_b: f64,
    noise_on: bool,
}

/// A point uniform in the unit ball of `ℝ^m`.
pub fn uniform_in_ball(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    let mut dir = uniform_on_sphere(rng, m);
    let radius = rng.random::<f64>().powf(1.0 / m as f64);
    dir.iter_mut().for_each(|d| *d *= radius);
    dir
}

/// A point uniform on the unit sphere of `ℝ^m`.
pub fn uniform_on_sphere(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return g.into_iter().map(|v| v / norm).collect();
        }
    }
}

impl SignalSource {
    pub fn new(cfg: &RrmConfig) -> Result<Self> {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise_rng.set_stream(0);
        let mut bias_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        bias_rng.set_stream(1);
        let direction = match &cfg.bias_mode {
            BiasMode::RandomUnit => uniform_on_sphere(&mut bias_rng, cfg.m),
            BiasMode::RandomBall => uniform_in_ball(&mut bias_rng, cfg.m),
            BiasMode::Zero => vec![0.0; cfg.m],
            BiasMode::Fixed(b) if b.len() == cfg.m => b.clone(),
            BiasMode::Fixed(b) => {
                return Err(Error::Usage(format!(
                    "bias vector has {} entries, expected {}",
                    b.len(),
                    cfg.m
                )))
            }
        };
        Ok(Self {
            field: cfg.field(),
            rng: noise_rng,
            direction,
            l_sigma: cfg.l_sigma,
            l_b: cfg.l_b,
            noise_on: cfg.noise_on,
        })
    }

    /// The fixed direction `b`.
    pub fn bias_direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn field(&self) -> &GameField {
        &self.field
    }

    /// `v̂_n` at `x`.
    pub fn sample(&mut self, x: &[f64], n: usize) -> Result<SignalSample> {
        if n == 0 {
            return Err(Error::Precondition("step index starts at 1".into()));
        }
        let m = x.len();
        let field = self.field.eval(x)?;
        let noise = if self.noise_on {
            let scale = (n as f64).powf(self.l_sigma);
            uniform_in_ball(&mut self.rng, m)
                .into_iter()
                .map(|t| scale * t)
                .collect()
        } else {
            vec![0.0; m]
        };
        let decay = (n as f64).powf(-self.l_b);
        let bias: Vec<f64> = self.direction.iter().map(|b| decay * b).collect();
        let value = (0..m).map(|i| field[i] + noise[i] + bias[i]).collect();
        Ok(SignalSample {
            value,
            field,
            noise,
            bias,
        })
    }
}

/// A dual-space point stored as `offset + displacement`, where `offset` is
/// the shift of the regularizer that produced it. Keeping the two apart lets
/// the shifted mirror map remove its own offset without rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    offset: Vec<f64>,
    displacement: Vec<f64>,
}

impl DualPoint {
    pub fn new(offset: Vec<f64>, displacement: Vec<f64>) -> Self {
        Self {
            offset,
            displacement,
        }
    }

    /// `offset + displacement` as a plain vector.
    pub fn materialize(&self) -> Vec<f64> {
        self.offset
            .iter()
            .zip(&self.displacement)
            .map(|(a, b)| a + b)
            .collect()
    }

    /// `self + step·v`, keeping the offset.
    pub fn advanced(&self, step: f64, v: &[f64]) -> Self {
        Self {
            offset: self.offset.clone(),
            displacement: self
                .displacement
                .iter()
                .zip(v)
                .map(|(d, vi)| d + step * vi)
                .collect(),
        }
    }
}

/// The Euclidean mirror map `y ↦ Π_B(y − c)` of the shifted regularizer
/// `½‖x − c‖²`, evaluated on [`DualPoint`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanMirror {
    poly: Polytope,
    shift: Vec<f64>,
}

impl EuclideanMirror {
    pub fn new(poly: Polytope, shift: Vec<f64>) -> Self {
        Self { poly, shift }
    }

    /// The dual point that maps to the feasible `x` with zero displacement
    /// from this map's chart.
    pub fn embed(&self, x: &[f64]) -> DualPoint {
        DualPoint::new(self.shift.clone(), x.to_vec())
    }

    pub fn map(&self, y: &DualPoint) -> Vec<f64> {
        if y.offset == self.shift {
            self.poly.project(&y.displacement)
        } else {
            let shifted: Vec<f64> = y
                .materialize()
                .iter()
                .zip(&self.shift)
                .map(|(a, c)| a - c)
                .collect();
            self.poly.project(&shifted)
        }
    }
}

/// Output of [`rrm_run`].
#[derive(Debug, Clone)]
pub struct RrmRun {
    pub trajectory: Trajectory,
    /// `‖v(x_{n+½}) − v(x_n)‖` per step for the optimistic and
    /// extra-gradient variants; empty for vanilla.
    pub implied_bias: Vec<f64>,
    /// The bias direction `b` used by the run.
    pub bias_direction: Vec<f64>,
}

/// Runs the recursion for `cfg.horizon` steps, recording `x_1, …, x_{N+1}`
/// at times `0, …, N`. Attaches Lyapunov values of the reference certificate
/// when `m = 2`.
pub fn rrm_run(cfg: &RrmConfig) -> Result<RrmRun> {
    run(cfg, false)
}

/// As [`rrm_run`], but the dual state is stored as one float vector
/// `y = x₁ + c + Σ γ_k v̂_k`, so a regularizer shift enters through rounding.
pub fn rrm_run_materialized(cfg: &RrmConfig) -> Result<RrmRun> {
    run(cfg, true)
}

enum Base {
    Primal(Vec<f64>),
    Dual(DualPoint),
}

fn run(cfg: &RrmConfig, materialize: bool) -> Result<RrmRun> {
    let violations = validate_schedule(cfg);
    if !violations.is_empty() && !cfg.allow_invalid_schedule {
        return Err(Error::Schedule(violations));
    }
    let m = cfg.m;
    let poly = Polytope::new(m, cfg.delta)?;
    let x1 = cfg.start_point();
    if x1.len() != m {
        return Err(Error::Usage(format!(
            "start has {} entries, expected {m}",
            x1.len()
        )));
    }
    poly.active_set(&x1, crate::geometry::ACTIVE_TOL)?;
    let shift = match (&cfg.mirror_shift, cfg.projection_style) {
        (Some(_), ProjectionStyle::Greedy) => {
            return Err(Error::Usage(
                "mirror_shift only applies to dual_accumulation".into(),
            ))
        }
        (Some(c), _) if c.len() != m => {
            return Err(Error::Usage(format!(
                "mirror_shift has {} entries, expected {m}",
                c.len()
            )))
        }
        (Some(c), _) => c.clone(),
        (None, _) => vec![0.0; m],
    };
    let mirror = EuclideanMirror::new(poly, shift.clone());
    let mut source = SignalSource::new(cfg)?;
    let cert = (m == 2).then(|| QuadraticCertificate::reference(cfg.delta));

    let mut traj = crate::dynamics::Trajectory::with_capacity(m, cfg.horizon + 1);
    let mut implied_bias = Vec::new();
    let mut x = x1.clone();
    let mut base = match cfg.projection_style {
        ProjectionStyle::Greedy => Base::Primal(x1.clone()),
        ProjectionStyle::DualAccumulation if materialize => Base::Dual(DualPoint::new(
            vec![0.0; m],
            x1.iter().zip(&shift).map(|(a, c)| a + c).collect(),
        )),
        ProjectionStyle::DualAccumulation => Base::Dual(mirror.embed(&x1)),
    };
    let step_from = |base: &Base, step: f64, v: &[f64]| -> (Base, Vec<f64>) {
        match base {
            Base::Primal(p) => {
                let y: Vec<f64> = p.iter().zip(v).map(|(a, b)| a + step * b).collect();
                let x = poly.project(&y);
                (Base::Primal(x.clone()), x)
            }
            Base::Dual(d) => {
                let y = d.advanced(step, v);
                let x = mirror.map(&y);
                (Base::Dual(y), x)
            }
        }
    };
    let mut previous = vec![0.0; m];
    traj.push(0.0, &x, &poly);
    for n in 1..=cfg.horizon {
        let gamma = cfg.step_size(n);
        let signal = match cfg.variant {
            Variant::Vanilla => source.sample(&x, n)?.value,
            Variant::Optimistic | Variant::ExtraGradient => {
                let lookahead = if cfg.variant == Variant::Optimistic {
                    previous.clone()
                } else {
                    source.sample(&x, n)?.value
                };
                let (_, x_half) = step_from(&base, gamma, &lookahead);
                let s = source.sample(&x_half, n)?;
                let here = source.field().eval(&x)?;
                let gap = s
                    .field
                    .iter()
                    .zip(&here)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                implied_bias.push(gap);
                s.value
            }
        };
        if signal.iter().any(|v| !v.is_finite()) {
            traj.set_termination(crate::dynamics::Termination::NonFiniteField {
                time: (n - 1) as f64,
            });
            break;
        }
        let (next_base, next_x) = step_from(&base, gamma, &signal);
        base = next_base;
        x = next_x;
        previous = signal;
        traj.push(n as f64, &x, &poly);
    }
    if let Some(cert) = &cert {
        traj.attach_lyapunov(cert);
    }
    Ok(RrmRun {
        trajectory: traj,
        implied_bias,
        bias_direction: source.bias_direction().to_vec(),
    })
}

/// Summary of a run's approach to the equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStats {
    pub initial_distance: f64,
    pub final_distance: f64,
    /// Mean distance over the last `tail_fraction` of the states.
    pub tail_mean_distance: f64,
    /// Largest Lyapunov value over the tail, when values are recorded.
    pub tail_max_lyapunov: Option<f64>,
    /// First time the distance is at most [`HIT_RADIUS`].
    pub hitting_time: Option<f64>,
    pub states: usize,
}

pub fn convergence_stats(traj: &Trajectory, tail_fraction: f64) -> Result<ConvergenceStats> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Usage(format!(
            "tail fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    if traj.is_empty() {
        return Err(Error::Precondition("empty trajectory".into()));
    }
    let d = traj.distances();
    let n = d.len();
    let tail = ((n as f64 * tail_fraction).ceil() as usize).clamp(1, n);
    let start = n - tail;
    Ok(ConvergenceStats {
        initial_distance: d[0],
        final_distance: d[n - 1],
        tail_mean_distance: d[start..].iter().sum::<f64>() / tail as f64,
        tail_max_lyapunov: traj
            .lyapunov()
            .map(|l| l[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        hitting_time: d
            .iter()
            .position(|&v| v <= HIT_RADIUS)
            .map(|k| traj.times()[k]),
        states: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate_projected;

    fn quiet(m: usize) -> RrmConfig {
        RrmConfig {
            noise_on: false,
            bias_mode: BiasMode::Zero,
            ..RrmConfig::standard(m)
        }
    }

    #[test]
    fn schedule_examples() {
        let mut cfg = RrmConfig::standard(2);
        assert!(validate_schedule(&cfg).is_empty());
        (cfg.l_gamma, cfg.l_sigma, cfg.l_b) = (0.2, 0.0, 1.0);
        let v = validate_schedule(&cfg);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("l_gamma - l_sigma"));
        (cfg.l_gamma, cfg.l_sigma, cfg.l_b) = (1.5, -1.0, 1.0);
        let v = validate_schedule(&cfg);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("(0, 1]"));
        (cfg.l_gamma, cfg.l_sigma, cfg.l_b) = (0.0, 0.0, 0.0);
        assert_eq!(validate_schedule(&cfg).len(), 3);
        assert!(matches!(rrm_run(&cfg), Err(Error::Schedule(v)) if v.len() == 3));
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = RrmConfig::standard(3);
        cfg.set("variant", "extra_gradient").unwrap();
        cfg.set("bias_mode", "0.6, 0.8, 0").unwrap();
        cfg.set("start", "1,0.5,1.5").unwrap();
        cfg.set("noise_on", "false").unwrap();
        assert_eq!(cfg.variant, Variant::ExtraGradient);
        assert_eq!(cfg.bias_mode, BiasMode::Fixed(vec![0.6, 0.8, 0.0]));
        assert_eq!(cfg.start_point(), vec![1.0, 0.5, 1.5]);
        let err = cfg.set("colour", "red").unwrap_err().to_string();
        assert!(err.contains("projection_style") && err.contains("colour"));
        assert!(cfg.set("horizon", "ten").is_err());
        for v in [
            Variant::Vanilla,
            Variant::Optimistic,
            Variant::ExtraGradient,
        ] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(
            cfg.bias_mode.to_string().parse::<BiasMode>().unwrap(),
            cfg.bias_mode
        );
    }

    #[test]
    fn quiet_signal_is_the_field() {
        let cfg = quiet(2);
        let mut src = SignalSource::new(&cfg).unwrap();
        let s = src.sample(&[1.0, 1.0], 7).unwrap();
        assert_eq!(s.value, s.field);
        assert!((s.value[0] + 5.0 / 48.0).abs() < 1e-14);
        assert!(src.sample(&[1.0, 1.0], 0).is_err());
    }

    #[test]
    fn noise_and_bias_magnitudes() {
        let cfg = RrmConfig {
            l_sigma: 0.3,
            ..RrmConfig::standard(4)
        };
        let mut src = SignalSource::new(&cfg).unwrap();
        let b = src.bias_direction().to_vec();
        assert!((b.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14);
        for n in [1usize, 10, 1000] {
            let s = src.sample(&[0.5; 4], n).unwrap();
            let noise: f64 = s.noise.iter().map(|v| v * v).sum::<f64>().sqrt();
            let bias: f64 = s.bias.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(noise <= (n as f64).powf(0.3) * (1.0 + 1e-15));
            assert!((bias - 1.0 / n as f64).abs() < 1e-15);
            for i in 0..4 {
                assert_eq!(s.value[i], s.field[i] + s.noise[i] + s.bias[i]);
            }
        }
        let ball = RrmConfig {
            bias_mode: BiasMode::RandomBall,
            ..RrmConfig::standard(4)
        };
        let b = SignalSource::new(&ball).unwrap().bias_direction().to_vec();
        assert!(b.iter().map(|v| v * v).sum::<f64>() < 1.0);
    }

    #[test]
    fn noise_has_zero_mean() {
        let m = 3;
        let cfg = RrmConfig {
            l_sigma: 0.0,
            bias_mode: BiasMode::Zero,
            ..RrmConfig::standard(m)
        };
        let mut src = SignalSource::new(&cfg).unwrap();
        let draws = 100_000;
        let mut sum = vec![0.0; m];
        for _ in 0..draws {
            let s = src.sample(&[0.5; 3], 1).unwrap();
            for (acc, n) in sum.iter_mut().zip(&s.noise) {
                *acc += n;
            }
        }
        // a coordinate of a uniform point in the unit m-ball has variance 1/(m+2)
        let sigma = (1.0 / (m as f64 + 2.0) / draws as f64).sqrt();
        assert!(
            sum.iter().all(|s| (s / draws as f64).abs() < 3.0 * sigma),
            "{sum:?}"
        );
    }

    #[test]
    fn equilibrium_start_stays_put() {
        let cfg = RrmConfig {
            start: Some(vec![0.5, 0.5]),
            horizon: 50,
            ..quiet(2)
        };
        for variant in [
            Variant::Vanilla,
            Variant::Optimistic,
            Variant::ExtraGradient,
        ] {
            let run = rrm_run(&RrmConfig {
                variant,
                ..cfg.clone()
            })
            .unwrap();
            assert_eq!(run.trajectory.len(), 51);
            assert!(run.trajectory.distances().iter().all(|&d| d == 0.0));
            let stats = convergence_stats(&run.trajectory, 0.5).unwrap();
            assert_eq!(stats.final_distance, 0.0);
            assert_eq!(stats.tail_mean_distance, 0.0);
            assert_eq!(stats.tail_max_lyapunov, Some(0.0));
        }
    }

    #[test]
    fn constant_step_greedy_is_projected_euler() {
        let h = 1e-2;
        let cfg = RrmConfig {
            l_gamma: 0.0,
            gamma_scale: h,
            allow_invalid_schedule: true,
            horizon: 2000,
            gradient_mode: GradientMode::ClosedM2,
            ..quiet(2)
        };
        let run = rrm_run(&cfg).unwrap();
        let ode = integrate_projected(&[1.0, 1.0], 20.0, h, &cfg.field(), 0.1).unwrap();
        assert_eq!(run.trajectory.len(), ode.len());
        for (a, b) in run.trajectory.states().zip(ode.states()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn horizon_zero_records_only_the_start() {
        let run = rrm_run(&RrmConfig {
            horizon: 0,
            ..quiet(2)
        })
        .unwrap();
        assert_eq!(run.trajectory.len(), 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = RrmConfig {
            horizon: 2000,
            seed: 42,
            ..RrmConfig::standard(3)
        };
        let a = rrm_run(&cfg).unwrap();
        let b = rrm_run(&cfg).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        let c = rrm_run(&RrmConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.trajectory, c.trajectory);
    }

    #[test]
    fn shifted_regularizer_gives_identical_iterates() {
        let base = RrmConfig {
            projection_style: ProjectionStyle::DualAccumulation,
            horizon: 3000,
            seed: 9,
            ..RrmConfig::standard(2)
        };
        let reference = rrm_run(&base).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let c: Vec<f64> = (0..2).map(|_| rng.random_range(-5.0..5.0)).collect();
            let cfg = RrmConfig {
                mirror_shift: Some(c),
                ..base.clone()
            };
            let shifted = rrm_run(&cfg).unwrap();
            assert_eq!(
                shifted.trajectory.states().collect::<Vec<_>>(),
                reference.trajectory.states().collect::<Vec<_>>()
            );
            let floats = rrm_run_materialized(&cfg).unwrap();
            for (a, b) in floats
                .trajectory
                .states()
                .zip(reference.trajectory.states())
            {
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }
        let greedy = RrmConfig {
            mirror_shift: Some(vec![1.0, 1.0]),
            ..RrmConfig::standard(2)
        };
        assert!(rrm_run(&greedy).is_err());
    }

    #[test]
    fn variants_agree_without_noise() {
        let cfg = RrmConfig {
            horizon: 20_000,
            ..quiet(3)
        };
        let finals: Vec<Vec<f64>> = [
            Variant::Vanilla,
            Variant::Optimistic,
            Variant::ExtraGradient,
        ]
        .into_iter()
        .map(|variant| {
            let run = rrm_run(&RrmConfig {
                variant,
                ..cfg.clone()
            })
            .unwrap();
            run.trajectory.final_state().unwrap().to_vec()
        })
        .collect();
        for f in &finals {
            assert!(
                crate::parametric::distance_to_equilibrium(f) < 1e-6,
                "{f:?}"
            );
        }
    }

    #[test]
    fn implied_bias_vanishes() {
        for variant in [Variant::Optimistic, Variant::ExtraGradient] {
            let run = rrm_run(&RrmConfig {
                variant,
                horizon: 20_000,
                seed: 3,
                ..RrmConfig::standard(2)
            })
            .unwrap();
            let b = &run.implied_bias;
            assert_eq!(b.len(), 20_000);
            let head = b[..100].iter().sum::<f64>() / 100.0;
            let tail = b[b.len() - 100..].iter().sum::<f64>() / 100.0;
            assert!(tail < 0.01 * head, "{variant}: {head} -> {tail}");
        }
    }

    #[test]
    fn stats() {
        let run = rrm_run(&RrmConfig {
            horizon: 5000,
            ..quiet(2)
        })
        .unwrap();
        let s = convergence_stats(&run.trajectory, 0.1).unwrap();
        assert!((s.initial_distance - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(s.hitting_time.is_some());
        assert!(s.tail_mean_distance < s.initial_distance);
        assert!(convergence_stats(&run.trajectory, 0.0).is_err());
        assert!(convergence_stats(&run.trajectory, 1.5).is_err());
    }
}

use std::time::Instant;

use bertrand_rrm::dynamics::{
    integrate_projected_with, sample_vector_field, Rect, Termination, Trajectory,
};
use bertrand_rrm::geometry::Polytope;
use bertrand_rrm::lyapunov::{self, QuadraticCertificate};
use bertrand_rrm::model::{self, CostPrior, PiecewiseLinearStrategy};
use bertrand_rrm::parametric::{FeasibleParams, GameField, GradientMode, ProfitKernel};
use bertrand_rrm::rrm::{self, ConvergenceStats, RrmConfig};
use bertrand_rrm::variational;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::output::{field_csv, num, table_csv, trajectory_csv, OutDir};
use crate::{
    config, CliError, LearnArgs, OdeArgs, RrmArgs, SearchArgs, SweepLearnArgs, SweepOdeArgs,
    VerifyArgs,
};

type Res = Result<(), CliError>;

fn game_field(mode: GradientMode) -> GameField {
    GameField::new(ProfitKernel::all_or_nothing(), mode)
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn bne(out: &OutDir, res: usize, firms: usize, power: Option<f64>) -> Res {
    if res < 2 {
        return Err(CliError::Usage("--res must be at least 2".into()));
    }
    let prior = match power {
        Some(k) => CostPrior::power(k, firms)?,
        None => CostPrior::uniform(firms),
    };
    let mut rows = Vec::with_capacity(res);
    for i in 0..res {
        let c = i as f64 / (res - 1) as f64;
        rows.push(vec![Some(c), Some(model::bne(&prior, c)?)]);
    }
    let path = out.write("bne.csv", &table_csv(&["c", "beta"], &rows))?;
    let at = |k: usize| rows[k][1].unwrap();
    println!(
        "bne: {res} points, beta(0) = {:.6}, beta(1) = {:.6} -> {}",
        at(0),
        at(res - 1),
        path.display()
    );
    Ok(())
}

pub fn gradient(out: &OutDir, x: &[f64], delta: f64, mode: GradientMode) -> Res {
    let params = FeasibleParams::new(x.to_vec(), delta)?;
    let v = game_field(mode).eval(x)?;
    out.write_json(
        "gradient.json",
        &json!({
            "x": x,
            "delta": delta,
            "mode": mode,
            "intercept": params.intercept(),
            "v": v,
        }),
    )?;
    println!("gradient ({mode}) at {}: v = {}", fmt_vec(x), fmt_vec(&v));
    Ok(())
}

pub fn minty(out: &OutDir, k: u32) -> Res {
    let lhs = variational::minty_lhs(
        &variational::minty_counterexample(k),
        &PiecewiseLinearStrategy::uniform_bne(),
    );
    let verdict = if lhs > 0.0 { "VIOLATED" } else { "SATISFIED" };
    out.write_json(
        "minty.json",
        &json!({ "k": k, "lhs": lhs, "verdict": verdict }),
    )?;
    println!("minty k={k}: lhs = {} ({verdict})", num(lhs));
    Ok(())
}

pub fn field(out: &OutDir, m: usize, delta: f64, res: usize, mode: GradientMode) -> Res {
    if m != 2 {
        return Err(CliError::Usage(format!(
            "field sampling needs m = 2, got {m}"
        )));
    }
    let samples = sample_vector_field(Rect::polytope_box(delta), res, delta, &game_field(mode))?;
    let path = out.write("field.csv", &field_csv(&samples))?;
    let feasible = samples.iter().filter(|s| s.feasible).count();
    println!(
        "field: {res}x{res} samples, {feasible} feasible -> {}",
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct OdeSummary<'a> {
    config: serde_json::Value,
    stats: &'a ConvergenceStats,
    termination: Termination,
    final_state: &'a [f64],
    wall_time_s: f64,
}

pub fn ode(out: &OutDir, a: &OdeArgs) -> Res {
    let clock = Instant::now();
    let start = a.start.clone().unwrap_or_else(|| vec![1.0; a.m]);
    if start.len() != a.m {
        return Err(CliError::Usage(format!(
            "--start has {} entries, expected {}",
            start.len(),
            a.m
        )));
    }
    let mut traj = integrate_projected_with(
        &start,
        a.horizon,
        a.step,
        &game_field(a.mode),
        a.delta,
        a.record_every,
    )?;
    if a.m == 2 {
        traj.attach_lyapunov(&QuadraticCertificate::reference(a.delta));
    }
    let stats = rrm::convergence_stats(&traj, 0.1)?;
    let step = a.step;
    let path = out.write(
        "ode.csv",
        &trajectory_csv(&traj, |t| (t / step).round() as u64, 1),
    )?;
    out.write_json(
        "ode.json",
        &OdeSummary {
            config: json!({
                "m": a.m,
                "delta": a.delta,
                "start": start,
                "step": a.step,
                "horizon": a.horizon,
                "record_every": a.record_every,
                "mode": a.mode,
            }),
            stats: &stats,
            termination: traj.termination(),
            final_state: traj.final_state().unwrap_or_default(),
            wall_time_s: clock.elapsed().as_secs_f64(),
        },
    )?;
    println!(
        "ode: {} states, distance {:.3e} -> {:.3e} -> {}",
        traj.len(),
        stats.initial_distance,
        stats.final_distance,
        path.display()
    );
    Ok(())
}

fn build_config(a: &RrmArgs) -> Result<(RrmConfig, Option<Vec<u64>>), CliError> {
    let base = match a.preset.as_deref() {
        Some("paper") | None => RrmConfig::standard(2),
        Some(other) => return Err(CliError::Usage(format!("unknown preset '{other}'"))),
    };
    let (mut cfg, seeds) = match &a.config {
        Some(path) => {
            let loaded = config::load(path, base)?;
            (loaded.config, loaded.seeds)
        }
        None => (base, None),
    };
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got '{kv}'")))?;
        cfg.set(k.trim(), v)?;
    }
    let violations = rrm::validate_schedule(&cfg);
    if !violations.is_empty() && !cfg.allow_invalid_schedule {
        return Err(CliError::Usage(format!(
            "invalid schedule: {}",
            violations.join("; ")
        )));
    }
    Ok((cfg, seeds))
}

#[derive(Serialize)]
struct SeedResult {
    seed: u64,
    bias_direction: Vec<f64>,
    final_state: Vec<f64>,
    #[serde(flatten)]
    stats: ConvergenceStats,
}

#[derive(Serialize)]
struct LearnSummary {
    config: RrmConfig,
    seeds: Vec<u64>,
    results: Vec<SeedResult>,
    wall_time_s: f64,
}

fn stats_row(stats: &ConvergenceStats) -> Vec<Option<f64>> {
    vec![
        Some(stats.initial_distance),
        Some(stats.final_distance),
        Some(stats.tail_mean_distance),
        stats.hitting_time,
        stats.tail_max_lyapunov,
    ]
}

const STATS_HEADER: [&str; 5] = [
    "initial_dist",
    "final_dist",
    "tail_mean_dist",
    "hitting_time",
    "tail_max_lyapunov",
];

pub fn learn(out: &OutDir, a: &LearnArgs) -> Res {
    let clock = Instant::now();
    let (cfg, loaded_seeds) = build_config(&a.rrm)?;
    let seeds: Vec<u64> = match (a.seeds, loaded_seeds) {
        (Some(n), _) => (0..n as u64).map(|k| cfg.seed + k).collect(),
        (None, Some(s)) if !s.is_empty() => s,
        _ => vec![cfg.seed],
    };
    let mut results = Vec::with_capacity(seeds.len());
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let run = rrm::rrm_run(&RrmConfig {
            seed,
            ..cfg.clone()
        })?;
        let traj: &Trajectory = &run.trajectory;
        let stats = rrm::convergence_stats(traj, a.tail)?;
        out.write(
            &format!("learn_m{}_seed{seed}.csv", cfg.m),
            &trajectory_csv(traj, |t| t as u64, a.record_every),
        )?;
        let mut row = vec![Some(seed as f64)];
        row.extend(stats_row(&stats));
        rows.push(row);
        results.push(SeedResult {
            seed,
            bias_direction: run.bias_direction,
            final_state: traj.final_state().unwrap_or_default().to_vec(),
            stats,
        });
    }
    let mut header = vec!["seed"];
    header.extend(STATS_HEADER);
    out.write(
        &format!("convergence_m{}.csv", cfg.m),
        &table_csv(&header, &rows),
    )?;
    let worst = results
        .iter()
        .map(|r| r.stats.final_distance)
        .fold(0.0f64, f64::max);
    let summary = LearnSummary {
        config: RrmConfig {
            seed: seeds[0],
            ..cfg.clone()
        },
        seeds,
        results,
        wall_time_s: clock.elapsed().as_secs_f64(),
    };
    let path = out.write_json(&format!("learn_m{}.json", cfg.m), &summary)?;
    println!(
        "learn m={} {}: {} seeds x {} steps, worst final distance {:.3e} -> {}",
        cfg.m,
        cfg.variant,
        summary.seeds.len(),
        cfg.horizon,
        worst,
        path.display()
    );
    Ok(())
}

fn load_certificate(a: &VerifyArgs) -> Result<QuadraticCertificate, CliError> {
    match &a.cert {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
            Ok(QuadraticCertificate::from_text(&text)?)
        }
        None => Ok(QuadraticCertificate::reference(a.delta)),
    }
}

pub fn verify(out: &OutDir, a: &VerifyArgs) -> Res {
    let cert = load_certificate(a)?;
    let report =
        lyapunov::verify_certificate_with(&cert, a.delta, a.res, a.facet_res, &game_field(a.mode))?;
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    out.write_json(
        "lyapunov_verify.json",
        &json!({
            "delta": a.delta,
            "w": cert.w(),
            "res": a.res,
            "facet_res": a.facet_res,
            "bounds_margin": report.bounds.margin,
            "decrease_margin": report.decrease.margin,
            "decrease_witness": report.decrease.witness,
            "boundary_margins": report.boundary.iter().map(|b| b.margin).collect::<Vec<_>>(),
            "boundary_exact_margin": report.boundary_exact,
            "warnings": report.warnings,
            "verdict": verdict,
        }),
    )?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "lyapunov-verify: {verdict} (bounds {:.3e}, decrease {:.3e}, boundary {:.3e}, {} samples)",
        report.bounds.margin,
        report.decrease.margin,
        report.boundary_exact,
        report.decrease.samples
    );
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "certificate fails, worst decrease at {:?}",
            report.decrease.witness
        )))
    }
}

pub fn search(out: &OutDir, a: &SearchArgs) -> Res {
    let cert =
        lyapunov::search_certificate_lp(a.m, a.delta, a.w, a.res, &game_field(a.mode), a.round)?;
    let path = out.write("certificate.txt", &cert.to_text())?;
    let rows: Vec<String> = cert
        .h()
        .row_iter()
        .map(|r| fmt_vec(&r.iter().copied().collect::<Vec<_>>()))
        .collect();
    println!(
        "lyapunov-search: H = [{}], w = {} -> {}",
        rows.join(", "),
        a.w,
        path.display()
    );
    Ok(())
}

pub fn sweep_ode(out: &OutDir, a: &SweepOdeArgs) -> Res {
    let clock = Instant::now();
    let poly = Polytope::new(a.m, a.delta)?;
    let starts = poly.feasible_grid(a.res);
    let field = game_field(GradientMode::Quadrature);
    let cert = (a.m == 2).then(|| QuadraticCertificate::reference(a.delta));
    let rows: Vec<Vec<Option<f64>>> = starts
        .par_iter()
        .map(|x0| -> Result<_, CliError> {
            let mut traj = integrate_projected_with(x0, a.horizon, a.step, &field, a.delta, 1)?;
            let hit = traj
                .distances()
                .iter()
                .position(|&d| d <= a.tol)
                .map(|k| traj.times()[k]);
            let rise = cert.as_ref().map(|c| {
                traj.attach_lyapunov(c);
                traj.lyapunov()
                    .unwrap()
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .fold(f64::NEG_INFINITY, f64::max)
            });
            let mut row: Vec<Option<f64>> = x0.iter().map(|v| Some(*v)).collect();
            row.extend([Some(*traj.distances().last().unwrap()), hit, rise]);
            Ok(row)
        })
        .collect::<Result<_, _>>()?;
    let mut header: Vec<String> = (1..=a.m).map(|i| format!("start_{i}")).collect();
    header.extend(["final_dist", "hitting_time", "max_lyapunov_rise"].map(String::from));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let path = out.write("sweep_ode.csv", &table_csv(&header, &rows))?;
    let converged = rows.iter().filter(|r| r[a.m].unwrap() <= a.tol).count();
    out.write_json(
        "sweep_ode.json",
        &json!({
            "config": {
                "m": a.m, "delta": a.delta, "res": a.res,
                "step": a.step, "horizon": a.horizon, "tol": a.tol,
            },
            "starts": rows.len(),
            "converged": converged,
            "wall_time_s": clock.elapsed().as_secs_f64(),
        }),
    )?;
    println!(
        "sweep ode: {converged}/{} starts within {:e} -> {}",
        rows.len(),
        a.tol,
        path.display()
    );
    Ok(())
}

pub fn sweep_learn(out: &OutDir, a: &SweepLearnArgs) -> Res {
    let clock = Instant::now();
    let (cfg, _) = build_config(&a.rrm)?;
    let ms = a.ms.clone().unwrap_or_else(|| vec![cfg.m]);
    let jobs: Vec<(usize, u64)> = ms
        .iter()
        .flat_map(|&m| (0..a.seeds as u64).map(move |k| (m, k)))
        .map(|(m, k)| (m, cfg.seed + k))
        .collect();
    let rows: Vec<Vec<Option<f64>>> = jobs
        .par_iter()
        .map(|&(m, seed)| -> Result<_, CliError> {
            let run = rrm::rrm_run(&RrmConfig {
                m,
                seed,
                ..cfg.clone()
            })?;
            let stats = rrm::convergence_stats(&run.trajectory, a.tail)?;
            let mut row = vec![Some(m as f64), Some(seed as f64)];
            row.extend(stats_row(&stats));
            Ok(row)
        })
        .collect::<Result<_, _>>()?;
    let mut header = vec!["m", "seed"];
    header.extend(STATS_HEADER);
    let path = out.write("sweep_learn.csv", &table_csv(&header, &rows))?;
    out.write_json(
        "sweep_learn.json",
        &json!({
            "config": cfg,
            "ms": ms,
            "seeds": a.seeds,
            "wall_time_s": clock.elapsed().as_secs_f64(),
        }),
    )?;
    println!("sweep learn: {} runs -> {}", rows.len(), path.display());
    Ok(())
}

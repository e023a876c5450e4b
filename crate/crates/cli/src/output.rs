use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use bertrand_rrm::dynamics::{FieldSample, Trajectory};
use serde::Serialize;

use crate::CliError;

/// 17 significant digits, enough to round-trip an f64.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&path)
            .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
        Ok(Self(path))
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.0.join(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
        text.push('\n');
        self.write(name, &text)
    }
}

/// `iter,x_1..x_m,dist_to_eq,lyapunov`, keeping every `every`-th row and the last.
pub fn trajectory_csv(traj: &Trajectory, iters: impl Fn(f64) -> u64, every: usize) -> String {
    let m = traj.m();
    let mut out = String::from("iter");
    for i in 1..=m {
        write!(out, ",x_{i}").unwrap();
    }
    out.push_str(",dist_to_eq,lyapunov\n");
    let every = every.max(1);
    let last = traj.len().saturating_sub(1);
    for k in (0..traj.len()).filter(|&k| k % every == 0 || k == last) {
        write!(out, "{}", iters(traj.times()[k])).unwrap();
        for x in traj.state(k) {
            write!(out, ",{}", num(*x)).unwrap();
        }
        let l = traj.lyapunov().map(|l| l[k]);
        writeln!(out, ",{},{}", num(traj.distances()[k]), opt(l)).unwrap();
    }
    out
}

/// `x1,x2,v1,v2,pv1,pv2,feasible`; field columns are empty outside the polytope.
pub fn field_csv(samples: &[FieldSample]) -> String {
    let mut out = String::from("x1,x2,v1,v2,pv1,pv2,feasible\n");
    for s in samples {
        let pair = |p: Option<[f64; 2]>| match p {
            Some([a, b]) => format!("{},{}", num(a), num(b)),
            None => ",".to_string(),
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            num(s.x[0]),
            num(s.x[1]),
            pair(s.v),
            pair(s.projected),
            s.feasible as u8
        )
        .unwrap();
    }
    out
}

/// Rows of values under a header; `None` cells are left empty.
pub fn table_csv(header: &[&str], rows: &[Vec<Option<f64>>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| opt(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

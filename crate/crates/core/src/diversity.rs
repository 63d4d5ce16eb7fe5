//! Offline state-visitation diagnostics: a Kozachenko-Leonenko k-NN
//! entropy estimate and occupancy-grid coverage over logged ground-truth
//! states.
//!
//! The estimator is
//!
//! ```text
//! H = psi(n) - psi(k) + ln V_d + (d / n) * sum_i ln rho_i
//! ```
//!
//! with `rho_i` the Euclidean distance from point `i` to its k-th nearest
//! other point and `V_d = pi^(d/2) / Gamma(d/2 + 1)` the unit-ball volume.
//! Points whose k-th neighbour distance is exactly zero (repeated states)
//! are left out of the log-distance average and counted separately; if no
//! point has a positive distance the estimate is `-inf` and flagged.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use statrs::function::gamma::{digamma, ln_gamma};

use crate::envs::EnvId;
use crate::{Error, Result};

/// Ground-truth states recorded once per environment step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VisitLog {
    pub columns: Vec<String>,
    pub steps: Vec<u64>,
    pub states: Vec<Vec<f64>>,
}

impl VisitLog {
    pub fn new(columns: Vec<String>) -> Self {
        VisitLog { columns, steps: Vec::new(), states: Vec::new() }
    }

    /// State columns for an environment's `EnvState::to_vec` layout.
    pub fn for_env(env: EnvId) -> Self {
        let cols: &[&str] = match env {
            EnvId::PendulumSwingup => &["theta", "omega"],
            EnvId::PointReacherSparse => &["x", "y", "vx", "vy", "goal_x", "goal_y"],
        };
        VisitLog::new(cols.iter().map(|c| c.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, step: u64, state: Vec<f64>) -> Result<()> {
        if state.len() != self.columns.len() {
            return Err(Error::Internal(format!("{} state values for {} columns", state.len(), self.columns.len())));
        }
        self.steps.push(step);
        self.states.push(state);
        Ok(())
    }

    /// Projection onto the named columns.
    pub fn select(&self, columns: &[&str]) -> Result<Vec<Vec<f64>>> {
        let idx: Vec<usize> = columns
            .iter()
            .map(|c| {
                self.columns
                    .iter()
                    .position(|h| h == c)
                    .ok_or_else(|| Error::Config(format!("visit log has no column '{c}' (has {:?})", self.columns)))
            })
            .collect::<Result<_>>()?;
        Ok(self.states.iter().map(|s| idx.iter().map(|&i| s[i]).collect()).collect())
    }

    /// Comma-separated text: a `step,<columns>` header, then one row per record.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "step,{}", self.columns.join(","))?;
        for (step, s) in self.steps.iter().zip(&self.states) {
            write!(w, "{step}")?;
            for v in s {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty visit log".into()))??;
        let mut cols = header.split(',');
        if cols.next() != Some("step") {
            return Err(Error::Format("visit log header must start with 'step'".into()));
        }
        let mut log = VisitLog::new(cols.map(str::to_owned).collect());
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let bad = || Error::Format(format!("visit log line {}: '{line}'", n + 2));
            let step: u64 = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let state: Vec<f64> = fields.map(|f| f.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            if state.len() != log.columns.len() {
                return Err(bad());
            }
            log.steps.push(step);
            log.states.push(state);
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::Format(format!("cannot open visit log {}: {e}", path.display())))?;
        VisitLog::read_from(std::io::BufReader::new(f))
    }
}

/// Columns and bounds used by default when comparing runs of one task.
pub fn default_projection(env: EnvId) -> (Vec<&'static str>, Vec<(f64, f64)>) {
    match env {
        EnvId::PendulumSwingup => {
            (vec!["theta", "omega"], vec![(-std::f64::consts::PI, std::f64::consts::PI), (-8.0, 8.0)])
        }
        EnvId::PointReacherSparse => (vec!["x", "y"], vec![(-1.0, 1.0), (-1.0, 1.0)]),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyEstimate {
    /// Nats; `-inf` when every k-th neighbour distance is zero.
    pub value: f64,
    pub degenerate: bool,
    /// Points left out because their k-th neighbour distance was zero.
    pub zero_distances: usize,
}

/// `ln` of the volume of the unit `d`-ball.
pub fn ln_unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0)
}

/// Distance from every point to its k-th nearest other point (exact, brute force).
pub fn kth_neighbor_distances(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    let n = points.len();
    if k == 0 || n < k + 1 {
        return Err(Error::Config(format!("k-NN needs k >= 1 and at least k+1 points (k {k}, n {n})")));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::Config("points must share one positive dimension".into()));
    }
    let mut out = Vec::with_capacity(n);
    // k smallest squared distances, ascending
    let mut best = vec![f64::INFINITY; k];
    for (i, p) in points.iter().enumerate() {
        best.fill(f64::INFINITY);
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let dist2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist2 < best[k - 1] {
                let mut pos = k - 1;
                while pos > 0 && best[pos - 1] > dist2 {
                    best[pos] = best[pos - 1];
                    pos -= 1;
                }
                best[pos] = dist2;
            }
        }
        out.push(best[k - 1].sqrt());
    }
    Ok(out)
}

pub fn knn_entropy(points: &[Vec<f64>], k: usize) -> Result<EntropyEstimate> {
    let rho = kth_neighbor_distances(points, k)?;
    let n = points.len();
    let d = points[0].len() as f64;
    let positive: Vec<f64> = rho.iter().copied().filter(|&r| r > 0.0).collect();
    let zero_distances = n - positive.len();
    if positive.is_empty() {
        return Ok(EntropyEstimate { value: f64::NEG_INFINITY, degenerate: true, zero_distances });
    }
    let mean_log = positive.iter().map(|r| r.ln()).sum::<f64>() / positive.len() as f64;
    let value = digamma(n as f64) - digamma(k as f64) + ln_unit_ball_volume(points[0].len()) + d * mean_log;
    Ok(EntropyEstimate { value, degenerate: false, zero_distances })
}

/// Fraction of grid cells (per-axis `resolution` bins over `bounds`)
/// holding at least one point. Points outside the bounds are clamped in.
pub fn grid_coverage(points: &[Vec<f64>], bounds: &[(f64, f64)], resolution: usize) -> Result<f64> {
    if resolution == 0 || bounds.is_empty() || bounds.iter().any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::Config(format!("bad coverage grid: {bounds:?} at resolution {resolution}")));
    }
    let cells = (resolution as f64).powi(bounds.len() as i32);
    let mut seen = HashSet::new();
    for p in points {
        if p.len() != bounds.len() {
            return Err(Error::Config(format!("point of dimension {} for a {}-d grid", p.len(), bounds.len())));
        }
        let cell: Vec<usize> = p
            .iter()
            .zip(bounds)
            .map(|(&v, &(lo, hi))| {
                let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                ((t * resolution as f64) as usize).min(resolution - 1)
            })
            .collect();
        seen.insert(cell);
    }
    Ok(seen.len() as f64 / cells)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoverageSettings<'a> {
    pub k: usize,
    pub resolution: usize,
    pub bounds: &'a [(f64, f64)],
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    pub n_a: usize,
    pub n_b: usize,
    pub entropy_a: EntropyEstimate,
    pub entropy_b: EntropyEstimate,
    /// `entropy_b - entropy_a`.
    pub entropy_difference: f64,
    pub coverage_a: f64,
    pub coverage_b: f64,
}

/// Entropy and grid coverage of two projected logs.
pub fn coverage_report(a: &[Vec<f64>], b: &[Vec<f64>], settings: CoverageSettings<'_>) -> Result<CoverageReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("coverage report needs two non-empty logs".into()));
    }
    let entropy_a = knn_entropy(a, settings.k)?;
    let entropy_b = knn_entropy(b, settings.k)?;
    let entropy_difference =
        if a == b { 0.0 } else { entropy_b.value - entropy_a.value };
    Ok(CoverageReport {
        n_a: a.len(),
        n_b: b.len(),
        entropy_a,
        entropy_b,
        entropy_difference,
        coverage_a: grid_coverage(a, settings.bounds, settings.resolution)?,
        coverage_b: grid_coverage(b, settings.bounds, settings.resolution)?,
    })
}

/// Header of [`write_report_csv`].
pub const REPORT_HEADER: &str =
    "label_a,label_b,n_a,n_b,entropy_a,entropy_b,entropy_difference,coverage_a,coverage_b,zero_dist_a,zero_dist_b";

/// One CSV row per `(label_a, label_b, report)`.
pub fn write_report_csv<W: Write>(w: &mut W, rows: &[(String, String, CoverageReport)]) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for (la, lb, r) in rows {
        writeln!(
            w,
            "{la},{lb},{},{},{},{},{},{},{},{},{}",
            r.n_a,
            r.n_b,
            r.entropy_a.value,
            r.entropy_b.value,
            r.entropy_difference,
            r.coverage_a,
            r.coverage_b,
            r.entropy_a.zero_distances,
            r.entropy_b.zero_distances
        )?;
    }
    Ok(())
}

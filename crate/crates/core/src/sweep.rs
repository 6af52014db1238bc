//! Convergence sweeps: simulate and estimate over a grid of trajectory lengths
//! and seeds, then fit the log-log slope of the error against `N`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{estimate_from_trajectory, EstimateConfig};
use crate::pomdp::{simulate, InitialState, MemorylessPolicy, PomdpModel};
use crate::recovery::evaluate_errors;
use crate::views::ViewEncoding;

pub const CSV_HEADER: &str = "N,seed,action,Nl,err_O,err_R,err_T,B_O,B_R,B_T,lambda";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Strictly increasing trajectory lengths.
    pub grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub estimate: EstimateConfig,
    pub initial: InitialState,
    /// Thread limit; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl SweepConfig {
    fn check(&self) -> Result<()> {
        if self.grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidParameter("the N grid and the seed list must be nonempty".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(format!("N grid must be strictly increasing, got {:?}", self.grid)));
        }
        Ok(())
    }
}

/// One CSV row: errors of one action in one `(N, seed)` cell, maximized over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub seed: u64,
    pub action: usize,
    pub samples: usize,
    pub err_o: f64,
    pub err_r: f64,
    pub err_t: f64,
    pub b_o: Option<f64>,
    pub b_r: Option<f64>,
    pub b_t: Option<f64>,
    pub lambda: Option<f64>,
}

/// Whole-model errors of one `(N, seed)` cell: the selected observation
/// estimate, and rewards and transitions maximized over states and actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: usize,
    pub seed: u64,
    pub reference_action: usize,
    pub err_o: f64,
    pub err_r: f64,
    pub err_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub n: usize,
    pub seed: u64,
    pub reason: String,
}

/// Mean over seeds of the cell errors at one `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub cells: usize,
    pub mean_err_o: f64,
    pub mean_err_r: f64,
    pub mean_err_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub points: Vec<SweepPoint>,
    pub slope_o: f64,
    pub slope_r: f64,
    pub slope_t: f64,
    /// Seeds whose error at the largest `N` is below that at the smallest `N`, per metric.
    pub decreasing_seeds: [usize; 3],
    pub seeds_compared: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
    pub failures: Vec<SweepFailure>,
    pub summary: SweepSummary,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.n,
                r.seed,
                r.action,
                r.samples,
                r.err_o,
                r.err_r,
                r.err_t,
                fmt_opt(r.b_o),
                fmt_opt(r.b_r),
                fmt_opt(r.b_t),
                fmt_opt(r.lambda)
            ));
        }
        out
    }
}

/// Least-squares slope of `ys` against `xs`; NaN with fewer than two distinct abscissae.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return f64::NAN;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs[..n].iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return f64::NAN;
    }
    let sxy: f64 = xs[..n].iter().zip(&ys[..n]).map(|(x, y)| (x - mx) * (y - my)).sum();
    sxy / sxx
}

fn run_cell(model: &PomdpModel, policy: &MemorylessPolicy, n: usize, seed: u64, cfg: &SweepConfig) -> Result<(SweepCell, Vec<SweepRow>)> {
    let traj = simulate(model, policy, n, seed, &cfg.initial, false)?;
    let mut est_cfg = cfg.estimate.clone();
    est_cfg.power.seed = seed;
    let report = estimate_from_trajectory(&traj, policy, ViewEncoding::for_model(model), &est_cfg, Some(model))?;
    let Some(estimate) = report.estimate.as_ref() else {
        let reasons: Vec<String> = report.actions.iter().filter_map(|a| a.error.clone()).collect();
        return Err(Error::InvalidParameter(if reasons.is_empty() { report.warnings.join("; ") } else { reasons.join("; ") }));
    };
    let errors = evaluate_errors(estimate, model)?;
    let cell = SweepCell {
        n,
        seed,
        reference_action: estimate.reference_action,
        err_o: errors.max_o,
        err_r: errors.max_r,
        err_t: errors.max_t,
    };
    let rows = report
        .actions
        .iter()
        .map(|a| {
            let (err_o, err_r, err_t) = errors.max_for_action(a.action);
            SweepRow {
                n,
                seed,
                action: a.action,
                samples: a.samples.unwrap_or(0),
                err_o,
                err_r,
                err_t,
                b_o: a.bounds.as_ref().map(|b| b.b_o),
                b_r: a.bounds.as_ref().map(|b| b.b_r),
                b_t: a.bounds.as_ref().map(|b| b.b_t),
                lambda: a.lambda,
            }
        })
        .collect();
    Ok((cell, rows))
}

fn summarize(cells: &[SweepCell], cfg: &SweepConfig) -> SweepSummary {
    let cell_max = |n: usize, seed: u64| -> Option<[f64; 3]> {
        cells.iter().find(|c| c.n == n && c.seed == seed).map(|c| [c.err_o, c.err_r, c.err_t])
    };
    let points: Vec<SweepPoint> = cfg
        .grid
        .iter()
        .filter_map(|&n| {
            let cells: Vec<[f64; 3]> = cfg.seeds.iter().filter_map(|&s| cell_max(n, s)).collect();
            (!cells.is_empty()).then(|| {
                let mean = |k: usize| cells.iter().map(|c| c[k]).sum::<f64>() / cells.len() as f64;
                SweepPoint { n, cells: cells.len(), mean_err_o: mean(0), mean_err_r: mean(1), mean_err_t: mean(2) }
            })
        })
        .collect();
    let log_n: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let slope = |f: fn(&SweepPoint) -> f64| least_squares_slope(&log_n, &points.iter().map(|p| f(p).ln()).collect::<Vec<_>>());
    let note = (points.len() < 2).then(|| "fewer than two grid points with results; slope undefined".to_string());

    let mut decreasing_seeds = [0; 3];
    let mut seeds_compared = 0;
    if let (Some(&first), Some(&last)) = (cfg.grid.first(), cfg.grid.last()) {
        for &s in &cfg.seeds {
            if let (Some(lo), Some(hi)) = (cell_max(first, s), cell_max(last, s)) {
                if first == last {
                    continue;
                }
                seeds_compared += 1;
                for k in 0..3 {
                    if hi[k] < lo[k] {
                        decreasing_seeds[k] += 1;
                    }
                }
            }
        }
    }
    SweepSummary {
        slope_o: slope(|p| p.mean_err_o),
        slope_r: slope(|p| p.mean_err_r),
        slope_t: slope(|p| p.mean_err_t),
        points,
        decreasing_seeds,
        seeds_compared,
        note,
    }
}

/// Runs every `(N, seed)` cell concurrently. Failed cells are recorded and left out of the summary.
pub fn run_sweep(model: &PomdpModel, policy: &MemorylessPolicy, cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.check()?;
    model.ensure_valid()?;
    policy.check_compatible(model)?;
    let cells: Vec<(usize, u64)> = cfg.grid.iter().flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s))).collect();
    let work = || -> Vec<(usize, u64, Result<(SweepCell, Vec<SweepRow>)>)> {
        cells.par_iter().map(|&(n, s)| (n, s, run_cell(model, policy, n, s, cfg))).collect()
    };
    let outcomes = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for (n, seed, outcome) in outcomes {
        match outcome {
            Ok((cell, r)) => {
                cells.push(cell);
                rows.extend(r);
            }
            Err(e) => failures.push(SweepFailure { n, seed, reason: e.to_string() }),
        }
    }
    let summary = summarize(&cells, cfg);
    Ok(SweepResult { rows, cells, failures, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let xs: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|v| (3.0 * v.powf(-0.5)).ln()).collect();
        assert!((least_squares_slope(&xs, &ys) + 0.5).abs() < 1e-12);
        assert!(least_squares_slope(&xs[..1], &ys[..1]).is_nan());
    }

    #[test]
    fn single_point_grid_gives_nan_slope() {
        let f = crate::generate::standard_fixture().unwrap();
        let cfg = SweepConfig {
            grid: vec![5000],
            seeds: vec![1],
            estimate: EstimateConfig::new(2),
            initial: InitialState::Uniform,
            workers: Some(1),
        };
        let res = run_sweep(&f.model, &f.policy, &cfg).unwrap();
        assert!(res.summary.slope_o.is_nan());
        assert!(res.summary.note.is_some());
        let csv = res.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + res.rows.len());
    }

    #[test]
    fn grid_must_increase() {
        let f = crate::generate::standard_fixture().unwrap();
        let cfg = SweepConfig {
            grid: vec![100, 100],
            seeds: vec![1],
            estimate: EstimateConfig::new(2),
            initial: InitialState::Uniform,
            workers: None,
        };
        assert!(run_sweep(&f.model, &f.policy, &cfg).is_err());
    }
}

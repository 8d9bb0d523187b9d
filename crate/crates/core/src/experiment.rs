//! Single-point pipeline and deterministic parameter sweeps.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rayon::prelude::*;

use crate::config::{Mode, SimConfig, SolverOptions, SweepAxis};
use crate::error::{Result, SimError};
use crate::estimation::EstimationModel;
use crate::moments::{closed_form_moments, MomentTable};
use crate::power::{ila_wf, PowerAllocation};
use crate::precoding::{solve_common_weights, CommonWeightProblem, CommonWeights};
use crate::performance::{se_report, SeReport};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scenario::{generate_covariances, place_ues, ScenarioConfig, UeGeometry};

pub const CSV_HEADER: &str = "axis,axis_value,drop,mode,sum_se,se_common,se_private_total,rho_c,l_min,iterations,seed";

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub axis: SweepAxis,
    pub axis_value: f64,
    pub drop: usize,
    pub mode: Mode,
    pub sum_se: f64,
    pub se_common: f64,
    pub se_private_total: f64,
    pub rho_c: f64,
    pub l_min: usize,
    pub iterations: usize,
    pub seed: u64,
}

/// Twelve significant digits.
fn num(x: f64) -> String {
    format!("{x:.11e}")
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.axis.name(),
            num(self.axis_value),
            self.drop,
            self.mode,
            num(self.sum_se),
            num(self.se_common),
            num(self.se_private_total),
            num(self.rho_c),
            self.l_min,
            self.iterations,
            self.seed
        )
    }
}

/// Everything computed for one (scenario, mode, seed).
#[derive(Clone, Debug)]
pub struct PointOutcome {
    pub geometry: UeGeometry,
    pub moments: MomentTable,
    pub weights: Option<CommonWeights>,
    pub allocation: PowerAllocation,
    pub report: SeReport,
}

/// Loose upper bound on the sum SE used to catch unit errors.
pub fn sanity_ceiling(scenario: &ScenarioConfig, geo: &UeGeometry) -> f64 {
    let m = scenario.antennas as f64;
    let best = geo
        .beta_db
        .iter()
        .map(|b| m * 10f64.powf(b / 10.0))
        .fold(0.0, f64::max);
    let k = scenario.users as f64;
    scenario.prelog() * (k + 1.0) * (1.0 + scenario.rho_total() * best / scenario.sigma2()).log2()
}

fn pipeline(scenario: &ScenarioConfig, solver: &SolverOptions, mode: Mode, seed: u64) -> Result<PointOutcome> {
    scenario.validate()?;
    let mut rng = rng_from_seed(seed);
    let geometry = place_ues(scenario, &mut rng)?;
    let cov = generate_covariances(scenario, &geometry);
    let model = EstimationModel::new(&cov, scenario.rho_tr())?;
    let sigma2 = scenario.sigma2();
    let rho_total = scenario.rho_total();
    let route = solver.route();

    let private = closed_form_moments(&model, None, route)?;
    let (moments, weights) = match mode {
        Mode::NoRs => (private, None),
        Mode::Rs => {
            let k = scenario.users;
            let uniform = vec![rho_total / k as f64; k];
            let problem = CommonWeightProblem::from_model(&model, &private.power_private, &uniform, sigma2, solver.include_pi);
            let w = solve_common_weights(&problem)?;
            (closed_form_moments(&model, Some(&w.a), route)?, Some(w))
        }
    };
    moments.check_invariants(1e-9)?;
    let allocation = ila_wf(&moments, rho_total, sigma2, scenario.prelog(), mode == Mode::Rs, &solver.power)?;
    let report = se_report(&allocation.powers, &moments, sigma2, scenario.prelog())?;
    let ceiling = sanity_ceiling(scenario, &geometry);
    if !(report.sum_se <= ceiling) {
        return Err(SimError::Numerical(format!("sum SE {} exceeds the sanity ceiling {ceiling}", report.sum_se)));
    }
    Ok(PointOutcome {
        geometry,
        moments,
        weights,
        allocation,
        report,
    })
}

/// Runs one point and returns the full outcome.
pub fn run_point_detailed(scenario: &ScenarioConfig, solver: &SolverOptions, mode: Mode, seed: u64) -> Result<PointOutcome> {
    pipeline(scenario, solver, mode, seed).map_err(|e| {
        e.with_context(format!(
            "M={} K={} rho_T={} dBm mode={mode} seed={seed}",
            scenario.antennas, scenario.users, scenario.rho_total_dbm
        ))
    })
}

pub fn run_point(config: &SimConfig, mode: Mode, seed: u64) -> Result<ResultRow> {
    let out = run_point_detailed(&config.scenario, &config.solver, mode, seed)?;
    Ok(row_from(&out, SweepAxis::PowerDbm, config.scenario.rho_total_dbm, 0, mode, seed))
}

fn row_from(out: &PointOutcome, axis: SweepAxis, axis_value: f64, drop: usize, mode: Mode, seed: u64) -> ResultRow {
    ResultRow {
        axis,
        axis_value,
        drop,
        mode,
        sum_se: out.report.sum_se,
        se_common: out.report.se_common,
        se_private_total: out.report.se_private_total(),
        rho_c: out.allocation.powers.rho_c,
        l_min: out.report.l_min,
        iterations: out.allocation.iterations,
        seed,
    }
}

/// Seed of one sweep point. The mode is deliberately left out so both modes
/// see the same drop.
pub fn point_seed(master: u64, axis_index: usize, drop: usize) -> u64 {
    derive_seed(master, &[axis_index as u64, drop as u64])
}

/// Runs every (value, drop, mode) of the sweep. Rows are ordered by value,
/// then drop, then mode as configured, independent of scheduling.
pub fn sweep_rows(config: &SimConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let spec = &config.sweep;
    let master = config.scenario.seed;
    let jobs: Vec<(usize, f64, usize, Mode)> = spec
        .values
        .iter()
        .enumerate()
        .flat_map(|(ai, &v)| (0..spec.drops).flat_map(move |d| spec.modes.iter().map(move |&m| (ai, v, d, m))))
        .collect();
    info!("sweep over {} with {} jobs", spec.axis.name(), jobs.len());
    jobs.par_iter()
        .map(|&(ai, v, d, mode)| {
            let scenario = spec.axis.apply(&config.scenario, v);
            let seed = point_seed(master, ai, d);
            let out = run_point_detailed(&scenario, &config.solver, mode, seed)?;
            debug!("{}={v} drop={d} {mode}: sum SE {:.4}", spec.axis.name(), out.report.sum_se);
            Ok(row_from(&out, spec.axis, v, d, mode, seed))
        })
        .collect()
}

pub fn render_csv(rows: &[ResultRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median sum SE per (axis value, mode), in axis order.
pub fn medians(rows: &[ResultRow], mode: Mode) -> Vec<(f64, f64)> {
    let mut values: Vec<f64> = rows.iter().map(|r| r.axis_value).collect();
    values.dedup();
    values
        .into_iter()
        .map(|v| {
            let mut s: Vec<f64> = rows.iter().filter(|r| r.axis_value == v && r.mode == mode).map(|r| r.sum_se).collect();
            (v, median(&mut s))
        })
        .collect()
}

/// Gnuplot data: one line per axis value with the median sum SE of each mode.
pub fn render_plot_data(rows: &[ResultRow], modes: &[Mode]) -> String {
    let mut s = String::from("# axis_value");
    for m in modes {
        s.push_str(&format!(" median_sum_se_{m}"));
    }
    s.push('\n');
    let cols: Vec<Vec<(f64, f64)>> = modes.iter().map(|&m| medians(rows, m)).collect();
    if let Some(first) = cols.first() {
        for (i, (v, _)) in first.iter().enumerate() {
            s.push_str(&num(*v));
            for c in &cols {
                s.push(' ');
                s.push_str(&num(c[i].1));
            }
            s.push('\n');
        }
    }
    s
}

/// Writes `contents` next to `path` and renames it into place, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| SimError::Io(e.error))?;
    Ok(())
}

/// Runs the sweep and writes the CSV (and the optional plot file).
pub fn run_sweep(config: &SimConfig) -> Result<Vec<ResultRow>> {
    let rows = sweep_rows(config)?;
    write_atomic(&config.sweep.output_path, &render_csv(&rows))?;
    if let Some(p) = &config.sweep.plot_path {
        write_atomic(p, &render_plot_data(&rows, &config.sweep.modes))?;
    }
    Ok(rows)
}

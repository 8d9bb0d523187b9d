//! Strict flat TOML configuration. Every key is optional; missing keys take
//! the default scenario values. Powers are given in dBm and converted to mW
//! once, by `ScenarioConfig`.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::moments::{CrossTermRoute, QuarticVariant};
use crate::power::{BisectionMode, IlaWfOptions, LeakageSign};
use crate::scenario::ScenarioConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PowerDbm,
    Antennas,
    Users,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PowerDbm => "power_dbm",
            SweepAxis::Antennas => "antennas",
            SweepAxis::Users => "users",
        }
    }

    /// Copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> ScenarioConfig {
        let mut c = base.clone();
        match self {
            SweepAxis::PowerDbm => c.rho_total_dbm = value,
            SweepAxis::Antennas => c.antennas = value as usize,
            SweepAxis::Users => c.users = value as usize,
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rs,
    NoRs,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Rs => "rs",
            Mode::NoRs => "no_rs",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteSetting {
    Gaussian,
    Chain,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub drops: usize,
    pub mc_samples: usize,
    pub modes: Vec<Mode>,
    pub output_path: PathBuf,
    /// Optional gnuplot data file with per-point medians.
    pub plot_path: Option<PathBuf>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            axis: SweepAxis::PowerDbm,
            values: vec![0.0, 5.0, 10.0, 20.0, 30.0, 40.0],
            drops: 10,
            mc_samples: 100_000,
            modes: vec![Mode::Rs, Mode::NoRs],
            output_path: PathBuf::from("results.csv"),
            plot_path: None,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(SimError::config("values", "at least one sweep value is required"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::config("values", "sweep values must be finite"));
        }
        if self.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::config("values", "sweep values must be strictly increasing"));
        }
        if matches!(self.axis, SweepAxis::Antennas | SweepAxis::Users)
            && self.values.iter().any(|&v| v < 1.0 || v.fract() != 0.0)
        {
            return Err(SimError::config("values", "antenna and user counts must be positive integers"));
        }
        if self.drops == 0 {
            return Err(SimError::config("drops", "must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(SimError::config("modes", "at least one mode is required"));
        }
        if self.modes.iter().enumerate().any(|(i, m)| self.modes[..i].contains(m)) {
            return Err(SimError::config("modes", "modes must not repeat"));
        }
        Ok(())
    }
}

/// Model and solver switches shared by every point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Weight the max-min common-precoder program by `sqrt(pi_k)`.
    pub include_pi: bool,
    /// Draw an independent pilot-noise vector per UE instead of one shared
    /// observation.
    pub independent_pilot_noise: bool,
    pub quartic_variant: QuarticVariant,
    pub cross_term_route: RouteSetting,
    pub power: IlaWfOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            include_pi: true,
            independent_pilot_noise: false,
            quartic_variant: QuarticVariant::Circular,
            cross_term_route: RouteSetting::Gaussian,
            power: IlaWfOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn route(&self) -> CrossTermRoute {
        match self.cross_term_route {
            RouteSetting::Gaussian => CrossTermRoute::Gaussian,
            RouteSetting::Chain => CrossTermRoute::Chain(self.quartic_variant),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    pub sweep: SweepSpec,
    pub solver: SolverOptions,
}

/// On-disk layout: one flat table, keys named after the struct fields.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct FlatConfig {
    M: Option<usize>,
    K: Option<usize>,
    tau: Option<usize>,
    tau_p: Option<usize>,
    rho_tr_dbm: Option<f64>,
    rho_total_dbm: Option<f64>,
    noise_dbm: Option<f64>,
    cell_side_m: Option<f64>,
    min_distance_m: Option<f64>,
    num_clusters: Option<usize>,
    angular_spread_deg: Option<f64>,
    nominal_angle_halfwidth_deg: Option<f64>,
    shadow_std_db: Option<f64>,
    noise_normalized_gain: Option<bool>,
    seed: Option<u64>,

    axis: Option<SweepAxis>,
    values: Option<Vec<f64>>,
    drops: Option<usize>,
    mc_samples: Option<usize>,
    modes: Option<Vec<Mode>>,
    output_path: Option<PathBuf>,
    plot_path: Option<PathBuf>,

    include_pi: Option<bool>,
    independent_pilot_noise: Option<bool>,
    quartic_variant: Option<QuarticVariant>,
    cross_term_route: Option<RouteSetting>,
    max_iterations: Option<usize>,
    se_tolerance: Option<f64>,
    budget_tolerance: Option<f64>,
    stationarity_tolerance: Option<f64>,
    mu_upper: Option<f64>,
    bisection: Option<BisectionMode>,
    leakage_sign: Option<LeakageSign>,
}

macro_rules! take {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

/// Pulls the offending key out of a TOML error message.
fn offending_key(msg: &str) -> String {
    for marker in ["unknown field `", "missing field `"] {
        if let Some(pos) = msg.find(marker) {
            let rest = &msg[pos + marker.len()..];
            if let Some(end) = rest.find('`') {
                return rest[..end].to_string();
            }
        }
    }
    // toml renders the failing key on a `key = value` excerpt line.
    msg.lines()
        .filter_map(|l| l.split_once('|').map(|(_, s)| s.trim()))
        .find_map(|l| l.split_once('=').map(|(k, _)| k.trim().to_string()))
        .filter(|k| !k.is_empty())
        .unwrap_or_else(|| "document".to_string())
}

pub fn parse_config(text: &str) -> Result<SimConfig> {
    let flat: FlatConfig = toml::from_str(text).map_err(|e| {
        let msg = e.to_string();
        SimError::config(offending_key(&msg), msg.trim().to_string())
    })?;
    let mut cfg = SimConfig::default();
    let s = &mut cfg.scenario;
    take!(s.antennas, flat.M);
    take!(s.users, flat.K);
    take!(s.tau, flat.tau);
    take!(s.tau_p, flat.tau_p);
    take!(s.rho_tr_dbm, flat.rho_tr_dbm);
    take!(s.rho_total_dbm, flat.rho_total_dbm);
    take!(s.noise_dbm, flat.noise_dbm);
    take!(s.cell_side_m, flat.cell_side_m);
    take!(s.min_distance_m, flat.min_distance_m);
    take!(s.num_clusters, flat.num_clusters);
    take!(s.angular_spread_deg, flat.angular_spread_deg);
    take!(s.nominal_angle_halfwidth_deg, flat.nominal_angle_halfwidth_deg);
    take!(s.shadow_std_db, flat.shadow_std_db);
    take!(s.noise_normalized_gain, flat.noise_normalized_gain);
    take!(s.seed, flat.seed);

    let w = &mut cfg.sweep;
    take!(w.axis, flat.axis);
    take!(w.values, flat.values);
    take!(w.drops, flat.drops);
    take!(w.mc_samples, flat.mc_samples);
    take!(w.modes, flat.modes);
    take!(w.output_path, flat.output_path);
    w.plot_path = flat.plot_path;

    let o = &mut cfg.solver;
    take!(o.include_pi, flat.include_pi);
    take!(o.independent_pilot_noise, flat.independent_pilot_noise);
    take!(o.quartic_variant, flat.quartic_variant);
    take!(o.cross_term_route, flat.cross_term_route);
    take!(o.power.max_iterations, flat.max_iterations);
    take!(o.power.se_tolerance, flat.se_tolerance);
    take!(o.power.budget_tolerance, flat.budget_tolerance);
    take!(o.power.stationarity_tolerance, flat.stationarity_tolerance);
    take!(o.power.mu_upper, flat.mu_upper);
    take!(o.power.bisection, flat.bisection);
    take!(o.power.leakage_sign, flat.leakage_sign);

    cfg.validate()?;
    Ok(cfg)
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.sweep.validate()?;
        let p = &self.solver.power;
        if p.max_iterations == 0 {
            return Err(SimError::config("max_iterations", "must be at least 1"));
        }
        for (name, v) in [
            ("se_tolerance", p.se_tolerance),
            ("budget_tolerance", p.budget_tolerance),
            ("stationarity_tolerance", p.stationarity_tolerance),
            ("mu_upper", p.mu_upper),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::config(name, "must be finite and positive"));
            }
        }
        Ok(())
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::config("--config", format!("{}: {e}", path.display())))?;
        parse_config(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(e: SimError) -> String {
        match e {
            SimError::Config { field, .. } => field,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, SimConfig::default());
        let s = &c.scenario;
        assert_eq!((s.antennas, s.users, s.tau, s.tau_p), (100, 10, 200, 10));
        assert_eq!((s.rho_tr_dbm, s.noise_dbm, s.cell_side_m, s.min_distance_m), (20.0, -94.0, 250.0, 35.0));
        assert_eq!((s.num_clusters, s.angular_spread_deg, s.nominal_angle_halfwidth_deg), (6, 10.0, 40.0));
    }

    #[test]
    fn pilot_longer_than_block_names_tau_p() {
        let e = parse_config("tau_p = 250\ntau = 200\n").unwrap_err();
        assert_eq!(field_of(e), "tau_p");
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_config("rho_max = 3.0\n").unwrap_err();
        let msg = e.to_string();
        assert_eq!(field_of(e), "rho_max", "{msg}");
    }

    #[test]
    fn non_monotone_values_rejected() {
        let e = parse_config("values = [0.0, 10.0, 5.0]\n").unwrap_err();
        assert_eq!(field_of(e), "values");
        let e = parse_config("axis = \"users\"\nvalues = [2.0, 2.5]\n").unwrap_err();
        assert_eq!(field_of(e), "values");
    }

    #[test]
    fn wrong_type_names_key() {
        let e = parse_config("M = \"many\"\n").unwrap_err();
        assert_eq!(field_of(e), "M");
    }

    #[test]
    fn full_document_round_trips() {
        let text = r#"
M = 64
K = 5
rho_total_dbm = 30.0
axis = "users"
values = [2, 5, 10]
drops = 3
modes = ["no_rs"]
output_path = "out.csv"
include_pi = false
quartic_variant = "diagonal"
cross_term_route = "chain"
bisection = "nested"
leakage_sign = "as_printed"
max_iterations = 50
"#;
        let c = parse_config(text).unwrap();
        assert_eq!(c.scenario.antennas, 64);
        assert_eq!(c.sweep.axis, SweepAxis::Users);
        assert_eq!(c.sweep.values, vec![2.0, 5.0, 10.0]);
        assert_eq!(c.sweep.modes, vec![Mode::NoRs]);
        assert!(!c.solver.include_pi);
        assert_eq!(c.solver.route(), CrossTermRoute::Chain(QuarticVariant::Diagonal));
        assert_eq!(c.solver.power.bisection, BisectionMode::Nested);
        assert_eq!(c.solver.power.max_iterations, 50);
    }

    #[test]
    fn zero_drops_rejected() {
        assert_eq!(field_of(parse_config("drops = 0").unwrap_err()), "drops");
    }
}

//! UE drop geometry, large-scale fading and spatial covariance matrices under
//! the Gaussian local scattering model for a half-wavelength ULA.
//!
//! The base station sits at the center of a square cell. UEs are drawn
//! uniformly over the square and redrawn while closer than the minimum
//! distance. Nominal angles are measured from array broadside (the +x axis).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::linalg::{eigenvalue_bounds, CMat, C64};

/// Rejection-sampling budget per UE.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Physical and protocol constants of one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Base-station antennas.
    #[serde(rename = "M")]
    pub antennas: usize,
    /// Number of UEs sharing the pilot.
    #[serde(rename = "K")]
    pub users: usize,
    pub tau: usize,
    pub tau_p: usize,
    pub rho_tr_dbm: f64,
    pub rho_total_dbm: f64,
    pub noise_dbm: f64,
    pub cell_side_m: f64,
    pub min_distance_m: f64,
    pub num_clusters: usize,
    pub angular_spread_deg: f64,
    pub nominal_angle_halfwidth_deg: f64,
    pub shadow_std_db: f64,
    /// The path-loss formula yields gains already divided by the noise
    /// power, matching the unit-variance pilot noise. When false, the
    /// downlink SINRs use `noise_dbm` in absolute mW instead.
    pub noise_normalized_gain: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            antennas: 100,
            users: 10,
            tau: 200,
            tau_p: 10,
            rho_tr_dbm: 20.0,
            rho_total_dbm: 20.0,
            noise_dbm: -94.0,
            cell_side_m: 250.0,
            min_distance_m: 35.0,
            num_clusters: 6,
            angular_spread_deg: 10.0,
            nominal_angle_halfwidth_deg: 40.0,
            // N(0, 10) read as variance 10 dB^2.
            shadow_std_db: 10f64.sqrt(),
            noise_normalized_gain: true,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return Err(SimError::config("M", "must be at least 1"));
        }
        if self.users == 0 {
            return Err(SimError::config("K", "must be at least 1"));
        }
        if self.tau_p == 0 {
            return Err(SimError::config("tau_p", "must be at least 1"));
        }
        if self.tau_p >= self.tau {
            return Err(SimError::config(
                "tau_p",
                format!("pilot length {} must be smaller than tau = {}", self.tau_p, self.tau),
            ));
        }
        for (name, v) in [
            ("rho_tr_dbm", self.rho_tr_dbm),
            ("rho_total_dbm", self.rho_total_dbm),
            ("noise_dbm", self.noise_dbm),
        ] {
            if !v.is_finite() || dbm_to_mw(v) <= 0.0 || !dbm_to_mw(v).is_finite() {
                return Err(SimError::config(name, "must be a finite dBm value"));
            }
        }
        if !(self.cell_side_m > 0.0) {
            return Err(SimError::config("cell_side_m", "must be positive"));
        }
        if !(self.min_distance_m >= 0.0 && self.min_distance_m < self.cell_side_m / 2.0) {
            return Err(SimError::config(
                "min_distance_m",
                "must be non-negative and smaller than half the cell side",
            ));
        }
        if self.num_clusters == 0 {
            return Err(SimError::config("num_clusters", "must be at least 1"));
        }
        for (name, v) in [
            ("angular_spread_deg", self.angular_spread_deg),
            ("nominal_angle_halfwidth_deg", self.nominal_angle_halfwidth_deg),
            ("shadow_std_db", self.shadow_std_db),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::config(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Downlink channel uses per coherence block (no uplink data).
    pub fn tau_d(&self) -> usize {
        self.tau - self.tau_p
    }

    pub fn prelog(&self) -> f64 {
        self.tau_d() as f64 / self.tau as f64
    }

    pub fn rho_tr(&self) -> f64 {
        dbm_to_mw(self.rho_tr_dbm)
    }

    pub fn rho_total(&self) -> f64 {
        dbm_to_mw(self.rho_total_dbm)
    }

    pub fn noise(&self) -> f64 {
        dbm_to_mw(self.noise_dbm)
    }

    /// Noise term of the downlink SINRs in the units of the channel gains.
    pub fn sigma2(&self) -> f64 {
        if self.noise_normalized_gain {
            1.0
        } else {
            self.noise()
        }
    }

    pub fn angular_spread_rad(&self) -> f64 {
        self.angular_spread_deg.to_radians()
    }
}

/// Per-UE geometry and large-scale parameters of one drop.
#[derive(Clone, Debug, PartialEq)]
pub struct UeGeometry {
    pub positions: Vec<[f64; 2]>,
    pub distances: Vec<f64>,
    pub nominal_angles: Vec<f64>,
    pub shadow_fading_db: Vec<f64>,
    pub beta_db: Vec<f64>,
    /// `cluster_angles[i][s]`, radians.
    pub cluster_angles: Vec<Vec<f64>>,
}

/// `-34.53 - 38 log10(d / 1 km) + F`.
pub fn large_scale_gain_db(distance_km: f64, shadow_db: f64) -> f64 {
    assert!(distance_km > 0.0, "distance must be positive");
    -34.53 - 38.0 * distance_km.log10() + shadow_db
}

pub fn place_ues<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<UeGeometry> {
    config.validate()?;
    let half = config.cell_side_m / 2.0;
    let coord = Uniform::new_inclusive(-half, half).map_err(|e| SimError::config("cell_side_m", e.to_string()))?;
    let shadow = Normal::new(0.0, config.shadow_std_db).map_err(|e| SimError::config("shadow_std_db", e.to_string()))?;
    let hw = config.nominal_angle_halfwidth_deg.to_radians();
    let offset = Uniform::new_inclusive(-hw, hw).map_err(|e| SimError::config("nominal_angle_halfwidth_deg", e.to_string()))?;

    let k = config.users;
    let mut geo = UeGeometry {
        positions: Vec::with_capacity(k),
        distances: Vec::with_capacity(k),
        nominal_angles: Vec::with_capacity(k),
        shadow_fading_db: Vec::with_capacity(k),
        beta_db: Vec::with_capacity(k),
        cluster_angles: Vec::with_capacity(k),
    };
    for ue in 0..k {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let (x, y) = (coord.sample(rng), coord.sample(rng));
            if x.hypot(y) >= config.min_distance_m {
                placed = Some((x, y));
                break;
            }
        }
        let (x, y) = placed.ok_or(SimError::InfeasibleGeometry {
            ue,
            attempts: MAX_PLACEMENT_ATTEMPTS,
        })?;
        let d = x.hypot(y);
        let phi = y.atan2(x);
        let f = shadow.sample(rng);
        let clusters = (0..config.num_clusters).map(|_| phi + offset.sample(rng)).collect();
        geo.positions.push([x, y]);
        geo.distances.push(d);
        geo.nominal_angles.push(phi);
        geo.shadow_fading_db.push(f);
        geo.beta_db.push(large_scale_gain_db(d / 1000.0, f));
        geo.cluster_angles.push(clusters);
    }
    Ok(geo)
}

/// Gaussian local scattering covariance for a half-wavelength ULA:
/// `[R]_{m1,m2} = beta/S sum_s exp(j pi d sin phi_s) exp(-sigma^2/2 (pi d cos phi_s)^2)`,
/// `d = m1 - m2`.
pub fn local_scattering_covariance(beta: f64, cluster_angles: &[f64], sigma_phi: f64, antennas: usize) -> CMat {
    assert!(!cluster_angles.is_empty(), "at least one cluster is required");
    let s = cluster_angles.len() as f64;
    // Hermitian Toeplitz: first column indexed by the lag d >= 0.
    let column: Vec<C64> = (0..antennas)
        .map(|d| {
            let d = d as f64;
            let sum: C64 = cluster_angles
                .iter()
                .map(|&phi| {
                    let spread = PI * d * phi.cos();
                    C64::from_polar(1.0, PI * d * phi.sin()) * (-0.5 * sigma_phi * sigma_phi * spread * spread).exp()
                })
                .sum();
            sum * (beta / s)
        })
        .collect();
    CMat::from_fn(antennas, antennas, |m1, m2| {
        if m1 >= m2 {
            column[m1 - m2]
        } else {
            column[m2 - m1].conj()
        }
    })
}

/// Spatial covariances of all UEs in one drop.
#[derive(Clone, Debug)]
pub struct CovarianceSet {
    pub r: Vec<CMat>,
    /// `tr(R_i) / M`, linear.
    pub beta: Vec<f64>,
}

impl CovarianceSet {
    pub fn from_matrices(r: Vec<CMat>) -> Result<Self> {
        let m = r.first().map(|x| x.nrows()).ok_or_else(|| SimError::Dimension("empty covariance set".into()))?;
        if r.iter().any(|x| x.nrows() != m || x.ncols() != m) {
            return Err(SimError::Dimension("covariances must all be M x M".into()));
        }
        let beta = r.iter().map(|x| crate::linalg::trace(x).re / m as f64).collect();
        Ok(Self { r, beta })
    }

    pub fn users(&self) -> usize {
        self.r.len()
    }

    pub fn antennas(&self) -> usize {
        self.r[0].nrows()
    }

    /// Checks Hermitian symmetry, PSD-ness and (optionally) constant diagonal.
    pub fn check_invariants(&self, constant_diagonal: bool) -> Result<()> {
        for (i, (r, &beta)) in self.r.iter().zip(&self.beta).enumerate() {
            let scale = r.norm().max(f64::MIN_POSITIVE);
            if (r - r.adjoint()).norm() > 1e-12 * scale {
                return Err(SimError::Numerical(format!("R_{i} is not Hermitian")));
            }
            let (min, _) = eigenvalue_bounds(r);
            if min < -1e-10 * beta.abs().max(f64::MIN_POSITIVE) {
                return Err(SimError::Numerical(format!("R_{i} is not PSD (min eigenvalue {min:e})")));
            }
            if constant_diagonal && r.diagonal().iter().any(|d| (d.re - beta).abs() > 1e-10 * beta.abs() || d.im.abs() > 1e-10 * beta.abs()) {
                return Err(SimError::Numerical(format!("diagonal of R_{i} is not constant")));
            }
        }
        Ok(())
    }
}

pub fn generate_covariances(config: &ScenarioConfig, geo: &UeGeometry) -> CovarianceSet {
    let sigma = config.angular_spread_rad();
    let r: Vec<CMat> = geo
        .beta_db
        .iter()
        .zip(&geo.cluster_angles)
        .map(|(&b, angles)| local_scattering_covariance(db_to_linear(b), angles, sigma, config.antennas))
        .collect();
    let beta = geo.beta_db.iter().map(|&b| db_to_linear(b)).collect();
    CovarianceSet { r, beta }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn path_loss_reference_values() {
        assert!((large_scale_gain_db(1.0, 0.0) + 34.53).abs() < 1e-12);
        assert!((large_scale_gain_db(0.1, 0.0) - 3.47).abs() < 1e-12);
        assert!((large_scale_gain_db(1.0, 10.0) + 24.53).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn path_loss_rejects_zero_distance() {
        large_scale_gain_db(0.0, 0.0);
    }

    #[test]
    fn placement_respects_geometry() {
        let cfg = ScenarioConfig {
            users: 10,
            seed: 7,
            ..Default::default()
        };
        let geo = place_ues(&cfg, &mut rng_from_seed(7)).unwrap();
        assert_eq!(geo.distances.len(), 10);
        let max = 125.0 * 2f64.sqrt();
        for (i, &d) in geo.distances.iter().enumerate() {
            assert!(d >= 35.0 && d <= max + 1e-9, "d = {d}");
            for &a in &geo.cluster_angles[i] {
                assert!((a - geo.nominal_angles[i]).abs() <= 40f64.to_radians() + 1e-12);
            }
        }
    }

    #[test]
    fn placement_is_deterministic() {
        let cfg = ScenarioConfig::default();
        let a = place_ues(&cfg, &mut rng_from_seed(11)).unwrap();
        let b = place_ues(&cfg, &mut rng_from_seed(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn annulus_only_placement() {
        let cfg = ScenarioConfig {
            users: 1,
            cell_side_m: 100.0,
            min_distance_m: 49.0,
            ..Default::default()
        };
        let geo = place_ues(&cfg, &mut rng_from_seed(5)).unwrap();
        let d = geo.distances[0];
        assert!(d >= 49.0 && d <= 50.0 * 2f64.sqrt());
    }

    #[test]
    fn min_distance_must_fit_in_cell() {
        let cfg = ScenarioConfig {
            cell_side_m: 100.0,
            min_distance_m: 70.0,
            ..Default::default()
        };
        match cfg.validate() {
            Err(SimError::Config { field, .. }) => assert_eq!(field, "min_distance_m"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_antenna_covariance_is_beta() {
        let r = local_scattering_covariance(3.5, &[0.3, -1.0], 0.2, 1);
        assert_eq!(r[(0, 0)], C64::new(3.5, 0.0));
    }

    #[test]
    fn degenerate_cluster_gives_all_ones() {
        let r = local_scattering_covariance(2.0, &[0.0], 0.0, 4);
        for z in r.iter() {
            assert!((z - C64::new(2.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn generated_covariances_satisfy_invariants() {
        let cfg = ScenarioConfig {
            antennas: 8,
            users: 4,
            ..Default::default()
        };
        let geo = place_ues(&cfg, &mut rng_from_seed(1)).unwrap();
        let cov = generate_covariances(&cfg, &geo);
        cov.check_invariants(true).unwrap();
        let r = local_scattering_covariance(2.0, &[0.1, 0.9, -0.4], 0.17, 8);
        for d in r.diagonal().iter() {
            assert_eq!(*d, C64::new(2.0, 0.0));
        }
    }

    #[test]
    fn tau_p_must_be_below_tau() {
        let cfg = ScenarioConfig {
            tau: 200,
            tau_p: 250,
            ..Default::default()
        };
        match cfg.validate() {
            Err(SimError::Config { field, .. }) => assert_eq!(field, "tau_p"),
            other => panic!("unexpected {other:?}"),
        }
    }
}

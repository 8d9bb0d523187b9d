//! Hardening-bound SINRs and spectral efficiencies of the common and private
//! streams.

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::moments::MomentTable;

/// Transmit powers in linear mW.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerVector {
    pub rho_c: f64,
    pub rho: Vec<f64>,
}

impl PowerVector {
    pub fn uniform_private(users: usize, rho_total: f64) -> Self {
        Self {
            rho_c: 0.0,
            rho: vec![rho_total / users as f64; users],
        }
    }

    pub fn total(&self) -> f64 {
        self.rho_c + self.rho.iter().sum::<f64>()
    }

    pub fn is_feasible(&self, rho_total: f64, rel_tol: f64) -> bool {
        self.rho_c >= 0.0 && self.rho.iter().all(|&p| p >= 0.0) && self.total() <= rho_total * (1.0 + rel_tol)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SeReport {
    pub gamma_private: Vec<f64>,
    pub gamma_common: Vec<f64>,
    pub l_min: usize,
    pub se_private: Vec<f64>,
    pub se_common: f64,
    pub sum_se: f64,
    pub prelog: f64,
}

impl SeReport {
    pub fn se_private_total(&self) -> f64 {
        self.se_private.iter().sum()
    }
}

/// `sum_i rho_i E{|h_k^H w_i|^2}`.
pub fn private_interference(k: usize, powers: &PowerVector, moments: &MomentTable) -> f64 {
    powers.rho.iter().zip(&moments.power_private[k]).map(|(p, g)| p * g).sum()
}

fn guarded(ue: usize, den: f64, scale: f64, sigma2: f64) -> Result<f64> {
    if den > 0.0 {
        Ok(den)
    } else if den > -1e-12 * scale {
        // Cancellation noise from subtracting rho_k |g_k|^2.
        Ok(1e-12 * sigma2)
    } else {
        Err(SimError::VarianceInvariant {
            ue,
            detail: format!("negative SINR denominator {den:e}"),
        })
    }
}

/// Denominator of the private SINR of UE `k` (interference after SIC).
pub fn private_denominator(k: usize, powers: &PowerVector, moments: &MomentTable, sigma2: f64) -> Result<f64> {
    let interference = private_interference(k, powers, moments);
    let own = powers.rho[k] * moments.gain_private[k].norm_sqr();
    let common = powers.rho_c * moments.common_variance(k);
    let scale = interference + own + powers.rho_c * moments.power_common[k] + sigma2;
    guarded(k, interference - own + common + sigma2, scale, sigma2)
}

/// Denominator of the common SINR of UE `k`.
pub fn common_denominator(k: usize, powers: &PowerVector, moments: &MomentTable, sigma2: f64) -> Result<f64> {
    let interference = private_interference(k, powers, moments);
    let common = powers.rho_c * moments.common_variance(k);
    let scale = interference + powers.rho_c * moments.power_common[k] + sigma2;
    guarded(k, interference + common + sigma2, scale, sigma2)
}

/// `rho_k |g_k|^2 / (sum_i rho_i G_ki - rho_k |g_k|^2 + rho_c Var_kc + sigma^2)`.
pub fn gamma_private(k: usize, powers: &PowerVector, moments: &MomentTable, sigma2: f64) -> Result<f64> {
    let num = powers.rho[k] * moments.gain_private[k].norm_sqr();
    Ok(num / private_denominator(k, powers, moments, sigma2)?)
}

/// `rho_c |g_kc|^2 / (sum_i rho_i G_ki + rho_c Var_kc + sigma^2)`.
pub fn gamma_common(k: usize, powers: &PowerVector, moments: &MomentTable, sigma2: f64) -> Result<f64> {
    let num = powers.rho_c * moments.gain_common[k].norm_sqr();
    Ok(num / common_denominator(k, powers, moments, sigma2)?)
}

/// Index of the smallest value, lowest index on ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

pub fn se_report(powers: &PowerVector, moments: &MomentTable, sigma2: f64, prelog: f64) -> Result<SeReport> {
    let k = moments.users();
    if powers.rho.len() != k {
        return Err(SimError::Dimension(format!("{} private powers for {k} UEs", powers.rho.len())));
    }
    let gamma_private = (0..k).map(|i| gamma_private(i, powers, moments, sigma2)).collect::<Result<Vec<_>>>()?;
    let gamma_common = (0..k).map(|i| gamma_common(i, powers, moments, sigma2)).collect::<Result<Vec<_>>>()?;
    let l_min = argmin(&gamma_common);
    let se_private: Vec<f64> = gamma_private.iter().map(|g| prelog * (1.0 + g).log2()).collect();
    let se_common = prelog * (1.0 + gamma_common[l_min]).log2();
    let sum_se = se_common + se_private.iter().sum::<f64>();
    Ok(SeReport {
        gamma_private,
        gamma_common,
        l_min,
        se_private,
        se_common,
        sum_se,
        prelog,
    })
}

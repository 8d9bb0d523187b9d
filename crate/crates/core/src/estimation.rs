//! Correlated Rayleigh channel draws and MMSE estimation from a single pilot
//! shared by every UE.
//!
//! With one shared pilot the BS observes `y = sum_k h_k + n / sqrt(rho_tr)`
//! and every estimate is a linear function of the same observation:
//! `h_hat_i = R_i Q^{-1} y`, `Q = sum_k R_k + I / rho_tr`.

use log::debug;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Result, SimError};
use crate::linalg::{covariance_factor, hermitian_part, trace, CMat, CVec, HermitianSolver, RegularizedInverse, C64};
use crate::rng::{chunks, complex_normal_matrix, substream, SimRng};
use crate::scenario::CovarianceSet;

/// Second-order statistics of the shared-pilot MMSE estimator.
#[derive(Clone, Debug)]
pub struct EstimationModel {
    pub cov: CovarianceSet,
    pub rho_tr: f64,
    pub q: CMat,
    q_solver: HermitianSolver,
    /// `Phi_i = R_i Q^{-1} R_i`.
    pub phi: Vec<CMat>,
    /// `cross[i][k] = R_i Q^{-1} R_k = E{h_hat_i h_hat_k^H}`.
    pub cross: Vec<Vec<CMat>>,
    /// `tr(cross[i][k])`, cached for the closed-form moments.
    pub cross_trace: Vec<Vec<C64>>,
}

impl EstimationModel {
    pub fn new(cov: &CovarianceSet, rho_tr: f64) -> Result<Self> {
        if !(rho_tr > 0.0 && rho_tr.is_finite()) {
            return Err(SimError::config("rho_tr", "pilot power must be positive"));
        }
        let m = cov.antennas();
        let k = cov.users();
        let mut q = CMat::identity(m, m).scale(1.0 / rho_tr);
        for r in &cov.r {
            q += r;
        }
        let q = hermitian_part(&q);
        let q_solver = HermitianSolver::new(&q)
            .map_err(|_| SimError::Numerical("Q is not numerically positive definite".into()))?;
        let q_inv_r: Vec<CMat> = cov.r.par_iter().map(|r| q_solver.solve(r)).collect();
        let cross: Vec<Vec<CMat>> = (0..k)
            .into_par_iter()
            .map(|i| (0..k).map(|j| &cov.r[i] * &q_inv_r[j]).collect())
            .collect();
        let phi = (0..k).map(|i| hermitian_part(&cross[i][i])).collect();
        let cross_trace = cross.iter().map(|row| row.iter().map(trace).collect()).collect();
        Ok(Self {
            cov: cov.clone(),
            rho_tr,
            q,
            q_solver,
            phi,
            cross,
            cross_trace,
        })
    }

    pub fn users(&self) -> usize {
        self.cov.users()
    }

    pub fn antennas(&self) -> usize {
        self.cov.antennas()
    }

    /// `Q^{-1} B` by triangular solves.
    pub fn apply_q_inv(&self, b: &CMat) -> CMat {
        self.q_solver.solve(b)
    }

    pub fn q_factor(&self) -> CMat {
        self.q_solver.factor()
    }

    pub fn trace_phi(&self, i: usize) -> f64 {
        trace(&self.phi[i]).re
    }

    /// `R_k^{-1}`, ridge-regularized when `R_k` is ill-conditioned.
    pub fn covariance_inverse(&self, k: usize) -> Result<RegularizedInverse> {
        RegularizedInverse::new(&self.cov.r[k], self.cov.beta[k])
    }

    /// `R_i R_k^{-1} h_hat_k`: estimate of UE `i` recovered from UE `k`'s.
    pub fn correlated_estimate(&self, i: usize, k: usize, h_hat_k: &CVec) -> Result<CVec> {
        let inv = self.covariance_inverse(k)?;
        let b = CMat::from_column_slice(h_hat_k.len(), 1, h_hat_k.as_slice());
        Ok(CVec::from_column_slice((&self.cov.r[i] * inv.solve(&b)).as_slice()))
    }
}

/// True channels, estimates, errors and pilot noise for `n` realizations.
/// Each per-UE matrix is `M x n` with one realization per column.
#[derive(Clone, Debug)]
pub struct ChannelBatch {
    pub n_samples: usize,
    pub h: Vec<CMat>,
    pub h_hat: Vec<CMat>,
    pub h_tilde: Vec<CMat>,
    /// One `M x n` matrix when the pilot noise is shared, `K` otherwise.
    pub pilot_noise: Vec<CMat>,
}

impl ChannelBatch {
    pub fn users(&self) -> usize {
        self.h.len()
    }

    pub fn has_estimates(&self) -> bool {
        !self.h_hat.is_empty()
    }
}

fn hconcat(parts: Vec<CMat>, rows: usize) -> CMat {
    let n: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = CMat::zeros(rows, n);
    let mut col = 0;
    for p in parts {
        let w = p.ncols();
        out.columns_mut(col, w).copy_from(&p);
        col += w;
    }
    out
}

fn concat_users(chunked: Vec<Vec<CMat>>, users: usize, rows: usize) -> Vec<CMat> {
    let mut per_user: Vec<Vec<CMat>> = vec![Vec::with_capacity(chunked.len()); users];
    for chunk in chunked {
        for (u, m) in chunk.into_iter().enumerate() {
            per_user[u].push(m);
        }
    }
    per_user.into_iter().map(|p| hconcat(p, rows)).collect()
}

/// Draws `h_i = L_i c`, `L_i L_i^H = R_i`, for all UEs.
#[derive(Clone, Debug)]
pub struct ChannelSampler {
    factors: Vec<CMat>,
    antennas: usize,
}

impl ChannelSampler {
    pub fn new(cov: &CovarianceSet) -> Self {
        Self {
            factors: cov.r.iter().map(covariance_factor).collect(),
            antennas: cov.antennas(),
        }
    }

    pub fn draw_truth(&self, len: usize, rng: &mut SimRng) -> Vec<CMat> {
        self.factors
            .iter()
            .map(|l| l * complex_normal_matrix(rng, self.antennas, len))
            .collect()
    }

    /// One self-contained chunk: truth, pilot noise, estimates and errors.
    pub fn draw_chunk(&self, model: &EstimationModel, len: usize, independent_noise: bool, rng: &mut SimRng) -> ChannelBatch {
        let h = self.draw_truth(len, rng);
        estimate_chunk(h, model, independent_noise, rng)
    }
}

fn estimate_chunk(h: Vec<CMat>, model: &EstimationModel, independent_noise: bool, rng: &mut SimRng) -> ChannelBatch {
    let m = model.antennas();
    let k = h.len();
    let len = h.first().map(|x| x.ncols()).unwrap_or(0);
    let scale = 1.0 / model.rho_tr.sqrt();
    let mut sum_h = CMat::zeros(m, len);
    for hk in &h {
        sum_h += hk;
    }
    let noise: Vec<CMat> = (0..if independent_noise { k } else { 1 })
        .map(|_| complex_normal_matrix(rng, m, len))
        .collect();
    let h_hat: Vec<CMat> = if independent_noise {
        (0..k)
            .map(|i| {
                let y = &sum_h + noise[i].scale(scale);
                &model.cov.r[i] * model.apply_q_inv(&y)
            })
            .collect()
    } else {
        let z = model.apply_q_inv(&(&sum_h + noise[0].scale(scale)));
        model.cov.r.iter().map(|r| r * &z).collect()
    };
    let h_tilde = h.iter().zip(&h_hat).map(|(a, b)| a - b).collect();
    ChannelBatch {
        n_samples: len,
        h,
        h_hat,
        h_tilde,
        pilot_noise: noise,
    }
}

/// Draws `n` realizations of the true channels `h_i ~ CN(0, R_i)`. The
/// estimate fields are left empty.
pub fn sample_channels<R: Rng + ?Sized>(cov: &CovarianceSet, n: usize, rng: &mut R) -> Result<ChannelBatch> {
    if n == 0 {
        return Err(SimError::Dimension("at least one realization is required".into()));
    }
    let seed: u64 = rng.random();
    let sampler = ChannelSampler::new(cov);
    let chunked: Vec<Vec<CMat>> = chunks(n)
        .into_par_iter()
        .map(|(c, len)| sampler.draw_truth(len, &mut substream(seed, c as u64)))
        .collect();
    let h = concat_users(chunked, cov.users(), cov.antennas());
    Ok(ChannelBatch {
        n_samples: n,
        h,
        h_hat: Vec::new(),
        h_tilde: Vec::new(),
        pilot_noise: Vec::new(),
    })
}

/// Fills estimates, errors and pilot noise for a batch of true channels.
pub fn mmse_estimate<R: Rng + ?Sized>(
    batch: ChannelBatch,
    model: &EstimationModel,
    independent_noise: bool,
    rng: &mut R,
) -> Result<ChannelBatch> {
    if batch.users() != model.users() || batch.h.iter().any(|h| h.nrows() != model.antennas()) {
        return Err(SimError::Dimension("batch does not match the estimation model".into()));
    }
    if independent_noise {
        debug!("mmse_estimate: drawing independent pilot noise per UE");
    }
    let seed: u64 = rng.random();
    let n = batch.n_samples;
    let m = model.antennas();
    let k = model.users();
    let parts: Vec<ChannelBatch> = chunks(n)
        .into_par_iter()
        .map(|(c, len)| {
            let h: Vec<CMat> = batch.h.iter().map(|x| x.columns(c * crate::rng::CHUNK, len).into_owned()).collect();
            estimate_chunk(h, model, independent_noise, &mut substream(seed, c as u64))
        })
        .collect();
    let mut hh = Vec::with_capacity(parts.len());
    let mut ht = Vec::with_capacity(parts.len());
    let mut nz = Vec::with_capacity(parts.len());
    for p in parts {
        hh.push(p.h_hat);
        ht.push(p.h_tilde);
        nz.push(p.pilot_noise);
    }
    let noise_count = if independent_noise { k } else { 1 };
    Ok(ChannelBatch {
        n_samples: n,
        h_hat: concat_users(hh, k, m),
        h_tilde: concat_users(ht, k, m),
        pilot_noise: concat_users(nz, noise_count, m),
        h: batch.h,
    })
}

/// Empirical `E{a b^H}` over the columns of two `M x n` matrices.
pub fn empirical_cross_covariance(a: &CMat, b: &CMat) -> CMat {
    (a * b.adjoint()).unscale(a.ncols() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_frobenius;
    use crate::rng::rng_from_seed;
    use crate::scenario::local_scattering_covariance;

    fn scaled_identity(m: usize, beta: f64) -> CMat {
        CMat::identity(m, m).scale(beta)
    }

    #[test]
    fn single_ue_identity_covariance() {
        let (m, beta, rho) = (4, 2.0, 5.0);
        let cov = CovarianceSet::from_matrices(vec![scaled_identity(m, beta)]).unwrap();
        let model = EstimationModel::new(&cov, rho).unwrap();
        let expect = scaled_identity(m, beta * beta / (beta + 1.0 / rho));
        assert!(relative_frobenius(&model.phi[0], &expect) < 1e-13);
    }

    #[test]
    fn two_identical_ues() {
        let (m, beta, rho) = (3, 0.7, 2.0);
        let r = scaled_identity(m, beta);
        let cov = CovarianceSet::from_matrices(vec![r.clone(), r]).unwrap();
        let model = EstimationModel::new(&cov, rho).unwrap();
        let expect = scaled_identity(m, beta * beta / (2.0 * beta + 1.0 / rho));
        for i in 0..2 {
            assert!(relative_frobenius(&model.phi[i], &expect) < 1e-13);
        }
        assert!(relative_frobenius(&model.cross[0][1], &model.phi[0]) < 1e-13);
    }

    #[test]
    fn near_infinite_pilot_power_recovers_r() {
        let r = local_scattering_covariance(1.5, &[0.2, 0.8, -0.5], 0.3, 6);
        let cov = CovarianceSet::from_matrices(vec![r.clone()]).unwrap();
        let model = EstimationModel::new(&cov, 1e12).unwrap();
        assert!(relative_frobenius(&model.phi[0], &r) < 1e-6);
    }

    #[test]
    fn rejects_nonpositive_pilot_power() {
        let cov = CovarianceSet::from_matrices(vec![scaled_identity(2, 1.0)]).unwrap();
        assert!(EstimationModel::new(&cov, 0.0).is_err());
    }

    #[test]
    fn zero_covariance_gives_zero_channels() {
        let cov = CovarianceSet::from_matrices(vec![CMat::zeros(3, 3)]).unwrap();
        let batch = sample_channels(&cov, 50, &mut rng_from_seed(1)).unwrap();
        assert!(batch.h[0].iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let r = local_scattering_covariance(1.0, &[0.1, 0.4], 0.2, 4);
        let cov = CovarianceSet::from_matrices(vec![r.clone(), r]).unwrap();
        let a = sample_channels(&cov, 3000, &mut rng_from_seed(9)).unwrap();
        let b = sample_channels(&cov, 3000, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a.h, b.h);
    }

    #[test]
    fn estimates_satisfy_decomposition_and_shared_observation() {
        let rs = vec![
            local_scattering_covariance(1.0, &[0.1, 0.5, 1.2], 0.4, 4),
            local_scattering_covariance(0.5, &[-0.3, 0.6, 2.0], 0.5, 4),
        ];
        let cov = CovarianceSet::from_matrices(rs).unwrap();
        let model = EstimationModel::new(&cov, 10.0).unwrap();
        let mut rng = rng_from_seed(4);
        let batch = sample_channels(&cov, 100, &mut rng).unwrap();
        let batch = mmse_estimate(batch, &model, false, &mut rng).unwrap();
        assert_eq!(batch.pilot_noise.len(), 1);
        for i in 0..2 {
            let back = &batch.h_hat[i] + &batch.h_tilde[i];
            assert!(relative_frobenius(&back, &batch.h[i]) < 1e-14);
        }
        // Shared observation: h_hat_1 = R_1 R_0^{-1} h_hat_0 per column.
        let col = batch.h_hat[0].column(3).into_owned();
        let recovered = model.correlated_estimate(1, 0, &col).unwrap();
        let direct = batch.h_hat[1].column(3).into_owned();
        assert!((recovered - &direct).norm() < 1e-10 * direct.norm());
    }

    #[test]
    fn independent_noise_draws_one_vector_per_ue() {
        let cov = CovarianceSet::from_matrices(vec![scaled_identity(2, 1.0), scaled_identity(2, 2.0)]).unwrap();
        let model = EstimationModel::new(&cov, 1.0).unwrap();
        let mut rng = rng_from_seed(2);
        let batch = sample_channels(&cov, 10, &mut rng).unwrap();
        let batch = mmse_estimate(batch, &model, true, &mut rng).unwrap();
        assert_eq!(batch.pilot_noise.len(), 2);
    }

    #[test]
    fn noise_free_single_ue_estimate_is_exact() {
        let r = local_scattering_covariance(1.0, &[0.3, 1.1, -0.7, 2.2], 0.6, 4);
        let cov = CovarianceSet::from_matrices(vec![r]).unwrap();
        let model = EstimationModel::new(&cov, 1e12).unwrap();
        let mut rng = rng_from_seed(8);
        let batch = mmse_estimate(sample_channels(&cov, 200, &mut rng).unwrap(), &model, false, &mut rng).unwrap();
        assert!(relative_frobenius(&batch.h_hat[0], &batch.h[0]) < 1e-4);
    }
}

//! Deterministic expectations feeding the hardening-bound SINRs.
//!
//! Closed forms cover MR private precoding and the weighted-sum common
//! precoder `w_c = sum_i a_i h_hat_i / sqrt(sum_ij a_i a_j tr(R_i Q^{-1} R_j))`.
//! A Monte Carlo path estimates the same table from channel draws for any
//! precoder set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::estimation::{ChannelBatch, ChannelSampler, EstimationModel};
use crate::linalg::{psd_sqrt, trace, trace_product, CMat, C64};
use crate::precoding::{common_normalizer_sq, common_precoder, mr_precoder, PrecoderSet};
use crate::rng::{chunks, substream};

/// Fourth-moment rule used for `E{c c^H B c c^H}`, `c ~ CN(0, I)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuarticVariant {
    /// `tr(B) I + diag(B) + B`, i.e. `E|c_m|^4 = 3`.
    Diagonal,
    /// `tr(B) I + B`, i.e. `E|c_m|^4 = 2`.
    Circular,
}

impl QuarticVariant {
    pub fn name(self) -> &'static str {
        match self {
            QuarticVariant::Diagonal => "diagonal",
            QuarticVariant::Circular => "circular",
        }
    }
}

/// How `E{h_k^H h_hat_i h_hat_j^H h_k}` (i != j) is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossTermRoute {
    /// Substitute `h_hat_j = R_j R_i^{-1} h_hat_i`, split `h_k` into estimate
    /// and error, and use the quartic moment. Needs `R_i^{-1}`, `R_k^{-1}`.
    Chain(QuarticVariant),
    /// Fourth moment of the jointly Gaussian pilot observation; no inverses.
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentSource {
    ClosedForm,
    MonteCarlo,
}

/// Standard errors of a Monte Carlo [`MomentTable`].
#[derive(Clone, Debug)]
pub struct MomentErrors {
    pub gain_private: Vec<f64>,
    pub power_private: Vec<Vec<f64>>,
    pub gain_common: Vec<f64>,
    pub power_common: Vec<f64>,
}

/// Every expectation appearing in the SINR expressions.
#[derive(Clone, Debug)]
pub struct MomentTable {
    /// `E{h_k^H w_k}`.
    pub gain_private: Vec<C64>,
    /// `power_private[k][i] = E{|h_k^H w_i|^2}`.
    pub power_private: Vec<Vec<f64>>,
    /// `E{h_k^H w_c}`.
    pub gain_common: Vec<C64>,
    /// `E{|h_k^H w_c|^2}`.
    pub power_common: Vec<f64>,
    pub source: MomentSource,
    pub std_err: Option<MomentErrors>,
}

impl MomentTable {
    pub fn users(&self) -> usize {
        self.gain_private.len()
    }

    /// `E{|h_k^H w_c|^2} - |E{h_k^H w_c}|^2`.
    pub fn common_variance(&self, k: usize) -> f64 {
        self.power_common[k] - self.gain_common[k].norm_sqr()
    }

    pub fn private_variance(&self, k: usize) -> f64 {
        self.power_private[k][k] - self.gain_private[k].norm_sqr()
    }

    /// Drops the common stream (its moments become zero).
    pub fn without_common(mut self) -> Self {
        let k = self.users();
        self.gain_common = vec![C64::new(0.0, 0.0); k];
        self.power_common = vec![0.0; k];
        self
    }

    /// Checks `G >= 0` and the variance bounds, with a relative slack.
    pub fn check_invariants(&self, slack: f64) -> Result<()> {
        for k in 0..self.users() {
            if self.power_private[k].iter().any(|&g| g < 0.0) {
                return Err(SimError::VarianceInvariant {
                    ue: k,
                    detail: "negative interference power".into(),
                });
            }
            let g2 = self.gain_private[k].norm_sqr();
            if self.power_private[k][k] < g2 * (1.0 - slack) {
                return Err(SimError::VarianceInvariant {
                    ue: k,
                    detail: format!("G_kk = {} < |g_k|^2 = {}", self.power_private[k][k], g2),
                });
            }
            let c2 = self.gain_common[k].norm_sqr();
            if self.power_common[k] < c2 * (1.0 - slack) {
                return Err(SimError::VarianceInvariant {
                    ue: k,
                    detail: format!("G_kc = {} < |g_kc|^2 = {}", self.power_common[k], c2),
                });
            }
        }
        Ok(())
    }
}

/// `|E{h_k^H w_k}|^2 = tr(Phi_k)` for MR.
pub fn mr_gain(k: usize, model: &EstimationModel) -> f64 {
    model.trace_phi(k)
}

/// `E{|h_k^H w_i|^2} = (tr(R_k Phi_i) + |tr(R_k Q^{-1} R_i)|^2) / tr(Phi_i)` for MR.
pub fn mr_cross_power(k: usize, i: usize, model: &EstimationModel) -> Result<f64> {
    let tphi = model.trace_phi(i);
    if !(tphi > 0.0) {
        return Err(SimError::InvalidUe(i));
    }
    let first = trace_product(&model.cov.r[k], &model.phi[i]).re;
    Ok((first + model.cross_trace[k][i].norm_sqr()) / tphi)
}

/// Inputs of the quartic moment `E{h_hat_k h_hat_k^H h_hat_i h_hat_i^H}`
/// after writing `h_hat_k = Phi_k^{1/2} c`.
#[derive(Clone, Debug)]
pub struct QuarticMomentSpec {
    /// `B_ik = Phi_k^{H/2} R_i R_k^{-1} Phi_k^{1/2}`.
    pub b: CMat,
    pub phi_root: CMat,
    pub variant: QuarticVariant,
}

impl QuarticMomentSpec {
    pub fn new(model: &EstimationModel, i: usize, k: usize, variant: QuarticVariant) -> Result<Self> {
        let (phi_root, _) = psd_sqrt(&model.phi[k]);
        let rk_inv = model.covariance_inverse(k)?;
        let b = phi_root.adjoint() * &model.cov.r[i] * rk_inv.solve(&phi_root);
        Ok(Self { b, phi_root, variant })
    }
}

/// `E{c c^H B c c^H}` under the chosen fourth-moment rule.
pub fn quartic_inner(b: &CMat, variant: QuarticVariant) -> CMat {
    let m = b.nrows();
    let mut out = b.clone();
    let tr = trace(b);
    for d in 0..m {
        out[(d, d)] += tr;
        if variant == QuarticVariant::Diagonal {
            out[(d, d)] += b[(d, d)];
        }
    }
    out
}

/// `tr(B) Phi_k + Phi_k^{1/2} (diag(B) + B) Phi_k^{H/2}` (diagonal) or
/// `tr(B) Phi_k + Phi_k^{1/2} B Phi_k^{H/2}` (circular).
pub fn quartic_moment(spec: &QuarticMomentSpec) -> CMat {
    &spec.phi_root * quartic_inner(&spec.b, spec.variant) * spec.phi_root.adjoint()
}

/// Monte Carlo estimate of `E{c c^H B c c^H}` with entrywise standard errors
/// (complex: `sqrt(E|X - mean|^2 / n)`).
pub fn mc_quartic_inner(b: &CMat, n: usize, seed: u64) -> (CMat, nalgebra::DMatrix<f64>) {
    let m = b.nrows();
    let parts: Vec<(CMat, nalgebra::DMatrix<f64>, usize)> = chunks(n)
        .into_par_iter()
        .map(|(c, len)| {
            let mut rng = substream(seed, c as u64);
            let mut sum = CMat::zeros(m, m);
            let mut sq = nalgebra::DMatrix::<f64>::zeros(m, m);
            let cs = crate::rng::complex_normal_matrix(&mut rng, m, len);
            for col in 0..len {
                let v = cs.column(col);
                let q = (v.adjoint() * b * v)[(0, 0)];
                for r in 0..m {
                    for s in 0..m {
                        let x = v[r] * v[s].conj() * q;
                        sum[(r, s)] += x;
                        sq[(r, s)] += x.norm_sqr();
                    }
                }
            }
            (sum, sq, len)
        })
        .collect();
    let mut sum = CMat::zeros(m, m);
    let mut sq = nalgebra::DMatrix::<f64>::zeros(m, m);
    for (s, q, _) in parts {
        sum += s;
        sq += q;
    }
    let nf = n as f64;
    let mean = sum.unscale(nf);
    let se = nalgebra::DMatrix::from_fn(m, m, |r, s| ((sq[(r, s)] / nf - mean[(r, s)].norm_sqr()).max(0.0) / nf).sqrt());
    (mean, se)
}

/// Precomputed pieces of the chain evaluation.
struct ChainCache {
    /// `ri_inv_rj[i][j] = R_i^{-1} R_j`.
    ri_inv_rj: Vec<Vec<CMat>>,
    /// `quartic[k][i] = E{h_hat_k h_hat_k^H h_hat_i h_hat_i^H}`.
    quartic: Vec<Vec<CMat>>,
}

impl ChainCache {
    fn new(model: &EstimationModel, variant: QuarticVariant, active: &[usize]) -> Result<Self> {
        let k = model.users();
        let inverses: Vec<_> = (0..k).map(|i| model.covariance_inverse(i)).collect::<Result<_>>()?;
        let mut ri_inv_rj = vec![vec![CMat::zeros(0, 0); k]; k];
        for &i in active {
            for &j in active {
                ri_inv_rj[i][j] = inverses[i].solve(&model.cov.r[j]);
            }
        }
        let mut quartic = vec![vec![CMat::zeros(0, 0); k]; k];
        for kk in 0..k {
            for &i in active {
                let spec = QuarticMomentSpec::new(model, i, kk, variant)?;
                // The sandwich equals E{h_hat_k h_hat_k^H h_hat_i h_hat_k^H}; the
                // trailing h_hat_k^H -> h_hat_i^H swap contributes R_k^{-1} R_i.
                quartic[kk][i] = quartic_moment(&spec) * inverses[kk].solve(&model.cov.r[i]);
            }
        }
        Ok(Self { ri_inv_rj, quartic })
    }

    fn cross_term(&self, model: &EstimationModel, k: usize, i: usize, j: usize) -> C64 {
        let err = &model.cov.r[k] - &model.phi[k];
        let a = &self.ri_inv_rj[i][j];
        trace_product(a, &self.quartic[k][i]) + trace_product(a, &(err * &model.phi[i]))
    }
}

/// `E{h_k^H h_hat_i h_hat_j^H h_k} = tr(C_ik) tr(C_kj) + tr(R_k C_ij)`, with
/// `C_ij = R_i Q^{-1} R_j`.
pub fn estimate_cross_term_gaussian(model: &EstimationModel, k: usize, i: usize, j: usize) -> C64 {
    model.cross_trace[i][k] * model.cross_trace[k][j] + trace_product(&model.cov.r[k], &model.cross[i][j])
}

/// `E{h_k^H h_hat_i h_hat_j^H h_k}` through the inverse-covariance chain.
pub fn estimate_cross_term_chain(model: &EstimationModel, k: usize, i: usize, j: usize, variant: QuarticVariant) -> Result<C64> {
    let cache = ChainCache::new(model, variant, &[i, j])?;
    Ok(cache.cross_term(model, k, i, j))
}

/// `E{h_k^H w_c} = sum_i a_i tr(R_i Q^{-1} R_k) / sqrt(sum_ij a_i a_j tr(R_i Q^{-1} R_j))`.
pub fn common_gain(k: usize, weights: &[f64], model: &EstimationModel) -> Result<C64> {
    let norm = common_normalizer_sq(weights, model)?.sqrt();
    let s: C64 = weights.iter().enumerate().map(|(i, &a)| model.cross_trace[i][k] * a).sum();
    Ok(s / norm)
}

/// `E{|h_k^H w_c|^2}` assembled from the diagonal terms
/// `E{|h_hat_i^H h_k|^2} = tr(R_k Phi_i) + |tr(R_k Q^{-1} R_i)|^2` and the
/// off-diagonal terms evaluated along `route`.
pub fn common_second_moment(k: usize, weights: &[f64], model: &EstimationModel, route: CrossTermRoute) -> Result<f64> {
    Ok(common_second_moments(weights, model, route)?[k])
}

/// [`common_second_moment`] for every UE, sharing the precomputation.
pub fn common_second_moments(weights: &[f64], model: &EstimationModel, route: CrossTermRoute) -> Result<Vec<f64>> {
    let norm2 = common_normalizer_sq(weights, model)?;
    let active: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] != 0.0).collect();
    let cache = match route {
        CrossTermRoute::Chain(v) if active.len() > 1 => Some(ChainCache::new(model, v, &active)?),
        _ => None,
    };
    let users = model.users();
    (0..users)
        .into_par_iter()
        .map(|k| {
            let mut acc = 0.0;
            for &i in &active {
                let diag = trace_product(&model.cov.r[k], &model.phi[i]).re + model.cross_trace[k][i].norm_sqr();
                acc += weights[i] * weights[i] * diag;
                for &j in &active {
                    if j == i {
                        continue;
                    }
                    let t = match &cache {
                        Some(c) => c.cross_term(model, k, i, j),
                        None => estimate_cross_term_gaussian(model, k, i, j),
                    };
                    acc += weights[i] * weights[j] * t.re;
                }
            }
            Ok(acc / norm2)
        })
        .collect()
}

/// Closed-form table for MR private precoders and the weighted common
/// precoder. `weights = None` leaves the common entries at zero.
pub fn closed_form_moments(model: &EstimationModel, weights: Option<&[f64]>, route: CrossTermRoute) -> Result<MomentTable> {
    let k = model.users();
    let mut gain_private = Vec::with_capacity(k);
    for i in 0..k {
        let t = mr_gain(i, model);
        if !(t > 0.0) {
            return Err(SimError::InvalidUe(i));
        }
        gain_private.push(C64::new(t.sqrt(), 0.0));
    }
    let power_private = (0..k)
        .map(|kk| (0..k).map(|i| mr_cross_power(kk, i, model)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let (gain_common, power_common) = match weights {
        Some(a) => {
            let g = (0..k).map(|kk| common_gain(kk, a, model)).collect::<Result<Vec<_>>>()?;
            (g, common_second_moments(a, model, route)?)
        }
        None => (vec![C64::new(0.0, 0.0); k], vec![0.0; k]),
    };
    Ok(MomentTable {
        gain_private,
        power_private,
        gain_common,
        power_common,
        source: MomentSource::ClosedForm,
        std_err: None,
    })
}

/// Running sums for the Monte Carlo moment estimator.
#[derive(Clone, Debug)]
struct MomentSums {
    n: usize,
    g: Vec<C64>,
    g_sq: Vec<f64>,
    big_g: Vec<Vec<f64>>,
    big_g_sq: Vec<Vec<f64>>,
    gc: Vec<C64>,
    gc_sq: Vec<f64>,
    big_gc: Vec<f64>,
    big_gc_sq: Vec<f64>,
}

impl MomentSums {
    fn zeros(k: usize) -> Self {
        Self {
            n: 0,
            g: vec![C64::new(0.0, 0.0); k],
            g_sq: vec![0.0; k],
            big_g: vec![vec![0.0; k]; k],
            big_g_sq: vec![vec![0.0; k]; k],
            gc: vec![C64::new(0.0, 0.0); k],
            gc_sq: vec![0.0; k],
            big_gc: vec![0.0; k],
            big_gc_sq: vec![0.0; k],
        }
    }

    fn merge(mut self, o: &Self) -> Self {
        self.n += o.n;
        for k in 0..self.g.len() {
            self.g[k] += o.g[k];
            self.g_sq[k] += o.g_sq[k];
            self.gc[k] += o.gc[k];
            self.gc_sq[k] += o.gc_sq[k];
            self.big_gc[k] += o.big_gc[k];
            self.big_gc_sq[k] += o.big_gc_sq[k];
            for i in 0..self.g.len() {
                self.big_g[k][i] += o.big_g[k][i];
                self.big_g_sq[k][i] += o.big_g_sq[k][i];
            }
        }
        self
    }

    fn finish(self) -> MomentTable {
        let nf = self.n as f64;
        let k = self.g.len();
        let se_c = |s: C64, sq: f64| ((sq / nf - (s / nf).norm_sqr()).max(0.0) / nf).sqrt();
        let se_r = |s: f64, sq: f64| ((sq / nf - (s / nf).powi(2)).max(0.0) / nf).sqrt();
        let errors = MomentErrors {
            gain_private: (0..k).map(|i| se_c(self.g[i], self.g_sq[i])).collect(),
            power_private: (0..k)
                .map(|a| (0..k).map(|b| se_r(self.big_g[a][b], self.big_g_sq[a][b])).collect())
                .collect(),
            gain_common: (0..k).map(|i| se_c(self.gc[i], self.gc_sq[i])).collect(),
            power_common: (0..k).map(|i| se_r(self.big_gc[i], self.big_gc_sq[i])).collect(),
        };
        MomentTable {
            gain_private: self.g.iter().map(|x| x / nf).collect(),
            power_private: self.big_g.iter().map(|r| r.iter().map(|x| x / nf).collect()).collect(),
            gain_common: self.gc.iter().map(|x| x / nf).collect(),
            power_common: self.big_gc.iter().map(|x| x / nf).collect(),
            source: MomentSource::MonteCarlo,
            std_err: Some(errors),
        }
    }
}

/// `h^H w` for every column of two `M x n` matrices.
pub fn columnwise_inner(h: &CMat, w: &CMat) -> Vec<C64> {
    (0..h.ncols())
        .map(|c| h.column(c).iter().zip(w.column(c).iter()).map(|(a, b)| a.conj() * b).sum())
        .collect()
}

fn accumulate(precoders: &PrecoderSet, batch: &ChannelBatch) -> MomentSums {
    let k = batch.users();
    let mut sums = MomentSums::zeros(k);
    sums.n = batch.n_samples;
    for kk in 0..k {
        for i in 0..k {
            for x in columnwise_inner(&batch.h[kk], &precoders.w_private[i]) {
                let p = x.norm_sqr();
                sums.big_g[kk][i] += p;
                sums.big_g_sq[kk][i] += p * p;
                if i == kk {
                    sums.g[kk] += x;
                    sums.g_sq[kk] += p;
                }
            }
        }
        if let Some(wc) = &precoders.w_common {
            for x in columnwise_inner(&batch.h[kk], wc) {
                let p = x.norm_sqr();
                sums.gc[kk] += x;
                sums.gc_sq[kk] += p;
                sums.big_gc[kk] += p;
                sums.big_gc_sq[kk] += p * p;
            }
        }
    }
    sums
}

/// Monte Carlo [`MomentTable`] for a realization-indexed precoder set.
pub fn mc_moments(precoders: &PrecoderSet, batch: &ChannelBatch) -> Result<MomentTable> {
    if precoders.w_private.len() != batch.users()
        || precoders.w_private.iter().any(|w| w.ncols() != batch.n_samples || w.nrows() != batch.h[0].nrows())
    {
        return Err(SimError::Dimension("precoders and batch disagree on size".into()));
    }
    Ok(accumulate(precoders, batch).finish())
}

/// Streams `n` realizations through MR private precoding and, when `weights`
/// is given, the weighted common precoder, accumulating the moment table.
pub fn monte_carlo_moments(model: &EstimationModel, weights: Option<&[f64]>, n: usize, seed: u64, independent_noise: bool) -> Result<MomentTable> {
    if let Some(a) = weights {
        common_normalizer_sq(a, model)?;
    }
    let sampler = ChannelSampler::new(&model.cov);
    let parts: Vec<MomentSums> = chunks(n)
        .into_par_iter()
        .map(|(c, len)| {
            let batch = sampler.draw_chunk(model, len, independent_noise, &mut substream(seed, c as u64));
            let w_private = mr_precoder(&batch, model)?;
            let w_common = weights.map(|a| common_precoder(a, &batch, model)).transpose()?;
            let set = PrecoderSet {
                w_private,
                w_common,
                weights: weights.map(|a| a.to_vec()),
            };
            Ok(accumulate(&set, &batch))
        })
        .collect::<Result<_>>()?;
    let total = parts.iter().fold(MomentSums::zeros(model.users()), |acc, p| acc.merge(p));
    let mut table = total.finish();
    if weights.is_none() {
        table = table.without_common();
        if let Some(e) = table.std_err.as_mut() {
            e.gain_common.iter_mut().for_each(|x| *x = 0.0);
            e.power_common.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    Ok(table)
}

/// Per `[k][i][j]`: sample means and standard errors of the cross terms.
pub type CrossTermEstimates = (Vec<Vec<Vec<C64>>>, Vec<Vec<Vec<f64>>>);

/// Monte Carlo estimate of `E{h_k^H h_hat_i h_hat_j^H h_k}` for all
/// `(k, i, j)`, with standard errors. Indexed `[k][i][j]`.
pub fn mc_estimate_cross_terms(model: &EstimationModel, n: usize, seed: u64) -> CrossTermEstimates {
    let k = model.users();
    let sampler = ChannelSampler::new(&model.cov);
    type Acc = CrossTermEstimates;
    let zero = || -> Acc { (vec![vec![vec![C64::new(0.0, 0.0); k]; k]; k], vec![vec![vec![0.0; k]; k]; k]) };
    let parts: Vec<Acc> = chunks(n)
        .into_par_iter()
        .map(|(c, len)| {
            let batch = sampler.draw_chunk(model, len, false, &mut substream(seed, c as u64));
            let mut acc = zero();
            for kk in 0..k {
                let proj: Vec<Vec<C64>> = (0..k).map(|i| columnwise_inner(&batch.h[kk], &batch.h_hat[i])).collect();
                for i in 0..k {
                    for j in 0..k {
                        for (a, b) in proj[i].iter().zip(&proj[j]) {
                            // h_k^H h_hat_i * h_hat_j^H h_k
                            let x = a * b.conj();
                            acc.0[kk][i][j] += x;
                            acc.1[kk][i][j] += x.norm_sqr();
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = zero();
    for p in &parts {
        for kk in 0..k {
            for i in 0..k {
                for j in 0..k {
                    total.0[kk][i][j] += p.0[kk][i][j];
                    total.1[kk][i][j] += p.1[kk][i][j];
                }
            }
        }
    }
    let nf = n as f64;
    let mean: Vec<Vec<Vec<C64>>> = total.0.iter().map(|a| a.iter().map(|b| b.iter().map(|x| x / nf).collect()).collect()).collect();
    let se = (0..k)
        .map(|kk| {
            (0..k)
                .map(|i| (0..k).map(|j| ((total.1[kk][i][j] / nf - mean[kk][i][j].norm_sqr()).max(0.0) / nf).sqrt()).collect())
                .collect()
        })
        .collect();
    (mean, se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_frobenius;
    use crate::scenario::{local_scattering_covariance, CovarianceSet};

    fn identity_model(m: usize, k: usize, beta: f64, rho: f64) -> EstimationModel {
        let cov = CovarianceSet::from_matrices(vec![CMat::identity(m, m).scale(beta); k]).unwrap();
        EstimationModel::new(&cov, rho).unwrap()
    }

    fn small_model() -> EstimationModel {
        let rs = vec![
            local_scattering_covariance(1.0, &[0.1, 0.9, -0.6], 0.5, 4),
            local_scattering_covariance(0.4, &[-0.8, 0.3, 1.4], 0.6, 4),
            local_scattering_covariance(2.0, &[0.5, -1.2, 0.0], 0.7, 4),
        ];
        EstimationModel::new(&CovarianceSet::from_matrices(rs).unwrap(), 3.0).unwrap()
    }

    #[test]
    fn mr_gain_identity_case() {
        let (m, k, beta, rho) = (8, 3, 0.5, 4.0);
        let model = identity_model(m, k, beta, rho);
        let expect = m as f64 * beta * beta / (k as f64 * beta + 1.0 / rho);
        assert!((mr_gain(0, &model) - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn mr_gain_perfect_csi() {
        let r = local_scattering_covariance(1.7, &[0.2, -0.4], 0.3, 6);
        let model = EstimationModel::new(&CovarianceSet::from_matrices(vec![r]).unwrap(), 1e12).unwrap();
        assert!((mr_gain(0, &model) - 6.0 * 1.7).abs() < 1e-6 * 6.0 * 1.7);
    }

    #[test]
    fn mr_cross_power_scalar_case() {
        let model = identity_model(2, 2, 1.0, 1.0);
        assert!((mr_cross_power(0, 1, &model).unwrap() - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mr_cross_power_zero_covariance() {
        let cov = CovarianceSet::from_matrices(vec![CMat::zeros(2, 2), CMat::identity(2, 2)]).unwrap();
        let model = EstimationModel::new(&cov, 1.0).unwrap();
        assert_eq!(mr_cross_power(0, 1, &model).unwrap(), 0.0);
        assert!(matches!(mr_cross_power(1, 0, &model), Err(SimError::InvalidUe(0))));
    }

    #[test]
    fn quartic_identity_diagonal_variant() {
        let spec = QuarticMomentSpec {
            b: CMat::identity(2, 2),
            phi_root: CMat::identity(2, 2),
            variant: QuarticVariant::Diagonal,
        };
        assert!(relative_frobenius(&quartic_moment(&spec), &CMat::identity(2, 2).scale(4.0)) < 1e-15);
    }

    #[test]
    fn quartic_zero_b() {
        for v in [QuarticVariant::Diagonal, QuarticVariant::Circular] {
            let spec = QuarticMomentSpec {
                b: CMat::zeros(3, 3),
                phi_root: CMat::identity(3, 3),
                variant: v,
            };
            assert!(quartic_moment(&spec).norm() == 0.0);
        }
    }

    #[test]
    fn quartic_spec_root_squares_to_phi() {
        let model = small_model();
        let spec = QuarticMomentSpec::new(&model, 0, 1, QuarticVariant::Circular).unwrap();
        assert!(relative_frobenius(&(&spec.phi_root * spec.phi_root.adjoint()), &model.phi[1]) < 1e-10);
    }

    #[test]
    fn common_gain_single_ue_collapses_to_mr() {
        let model = identity_model(4, 1, 0.8, 2.0);
        let g = common_gain(0, &[1.0], &model).unwrap();
        assert!((g.re - mr_gain(0, &model).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn common_gain_symmetric_weights() {
        let model = identity_model(4, 2, 0.8, 2.0);
        let a = [0.5, 0.5];
        let g0 = common_gain(0, &a, &model).unwrap();
        let g1 = common_gain(1, &a, &model).unwrap();
        assert!((g0 - g1).norm() < 1e-14);
    }

    #[test]
    fn common_second_moment_single_ue_is_mr_power() {
        let r = local_scattering_covariance(1.1, &[0.3, -0.2, 0.9], 0.4, 5);
        let model = EstimationModel::new(&CovarianceSet::from_matrices(vec![r]).unwrap(), 2.0).unwrap();
        for route in [CrossTermRoute::Gaussian, CrossTermRoute::Chain(QuarticVariant::Circular)] {
            let g = common_second_moment(0, &[1.0], &model, route).unwrap();
            assert!((g - mr_cross_power(0, 0, &model).unwrap()).abs() < 1e-12 * g);
        }
    }

    #[test]
    fn chain_and_gaussian_routes_agree_on_well_conditioned_model() {
        let model = small_model();
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let a = estimate_cross_term_gaussian(&model, k, i, j);
                    let b = estimate_cross_term_chain(&model, k, i, j, QuarticVariant::Circular).unwrap();
                    assert!((a - b).norm() < 1e-9 * a.norm().max(1.0), "k={k} i={i} j={j}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn common_second_moment_dominates_gain() {
        let model = small_model();
        let a = [0.2, 0.5, 0.3];
        for k in 0..3 {
            let g = common_gain(k, &a, &model).unwrap().norm_sqr();
            let p = common_second_moment(k, &a, &model, CrossTermRoute::Gaussian).unwrap();
            assert!(p >= g);
        }
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let model = small_model();
        assert!(matches!(common_gain(0, &[0.0, 0.0, 0.0], &model), Err(SimError::InvalidWeights(_))));
    }
}

//! MR private precoders and the max-min weighted-sum common precoder.
//!
//! The common precoder is `w_c = sum_i a_i h_hat_i / sqrt(sum_ij a_i a_j u_i(j))`
//! with `u_i(k) = tr(R_i Q^{-1} R_k)`. The weights solve
//!
//! ```text
//! maximize t  s.t.  sqrt(pi_k) sum_i a_i u_i(k) >= t  for every k,
//!                   a >= 0, sum_i a_i = 1
//! ```
//!
//! which is the epigraph form of `max_a min_k pi_k |sum_i a_i u_i(k)|^2` once
//! the linear form is kept non-negative.

use log::warn;

use crate::error::{Result, SimError};
use crate::estimation::{ChannelBatch, EstimationModel};
use crate::linalg::CMat;
use crate::lp::{LinearProgram, Relation};

/// Per-realization precoders for one batch (`M x n` per stream).
#[derive(Clone, Debug)]
pub struct PrecoderSet {
    pub w_private: Vec<CMat>,
    pub w_common: Option<CMat>,
    pub weights: Option<Vec<f64>>,
}

impl PrecoderSet {
    /// Common normalization `alpha = 1 / sqrt(sum_ij a_i a_j u_i(j))`.
    pub fn alpha(&self, model: &EstimationModel) -> Option<f64> {
        self.weights
            .as_ref()
            .and_then(|a| common_normalizer_sq(a, model).ok())
            .map(|n| 1.0 / n.sqrt())
    }
}

/// `sum_i sum_j a_i a_j Re tr(R_i Q^{-1} R_j)`: `E{||sum_i a_i h_hat_i||^2}`.
pub fn common_normalizer_sq(weights: &[f64], model: &EstimationModel) -> Result<f64> {
    if weights.len() != model.users() {
        return Err(SimError::InvalidWeights(format!(
            "expected {} weights, got {}",
            model.users(),
            weights.len()
        )));
    }
    let mut s = 0.0;
    for (i, &ai) in weights.iter().enumerate() {
        for (j, &aj) in weights.iter().enumerate() {
            s += ai * aj * model.cross_trace[i][j].re;
        }
    }
    if !(s > 0.0) || !s.is_finite() {
        return Err(SimError::InvalidWeights(format!("normalizer {s} is not positive")));
    }
    Ok(s)
}

/// `w_k = h_hat_k / sqrt(tr(Phi_k))` for every realization.
pub fn mr_precoder(batch: &ChannelBatch, model: &EstimationModel) -> Result<Vec<CMat>> {
    if !batch.has_estimates() {
        return Err(SimError::Dimension("batch carries no channel estimates".into()));
    }
    batch
        .h_hat
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let t = model.trace_phi(k);
            if !(t > 0.0) {
                return Err(SimError::InvalidUe(k));
            }
            Ok(h.unscale(t.sqrt()))
        })
        .collect()
}

/// Weighted-sum common precoder with the deterministic normalizer.
pub fn common_precoder(weights: &[f64], batch: &ChannelBatch, model: &EstimationModel) -> Result<CMat> {
    let norm = common_normalizer_sq(weights, model)?.sqrt();
    if !batch.has_estimates() {
        return Err(SimError::Dimension("batch carries no channel estimates".into()));
    }
    let mut w = CMat::zeros(batch.h_hat[0].nrows(), batch.n_samples);
    for (a, h) in weights.iter().zip(&batch.h_hat) {
        if *a != 0.0 {
            w += h.scale(*a);
        }
    }
    Ok(w.unscale(norm))
}

/// Data of the max-min weight program.
#[derive(Clone, Debug)]
pub struct CommonWeightProblem {
    /// `u[i][k] = tr(R_i Q^{-1} R_k)`.
    pub u: Vec<Vec<f64>>,
    /// `pi_k = 1 / (sum_i rho_i E{|h_k^H w_i|^2} + sigma^2)`.
    pub pi: Vec<f64>,
    pub include_pi: bool,
}

impl CommonWeightProblem {
    /// Builds the program from the estimation model with `pi_k` evaluated at
    /// the given private powers.
    pub fn from_model(model: &EstimationModel, power_private: &[Vec<f64>], private_powers: &[f64], sigma2: f64, include_pi: bool) -> Self {
        let k = model.users();
        let mut u = vec![vec![0.0; k]; k];
        for (i, row) in u.iter_mut().enumerate() {
            for (kk, v) in row.iter_mut().enumerate() {
                let z = model.cross_trace[i][kk];
                if z.im.abs() > 1e-10 * z.norm().max(f64::MIN_POSITIVE) {
                    warn!("u_{i}({kk}) has a non-negligible imaginary part {:e}; using the real part", z.im);
                }
                *v = z.re;
            }
        }
        let pi = (0..k)
            .map(|kk| {
                let interference: f64 = (0..k).map(|i| private_powers[i] * power_private[kk][i]).sum();
                1.0 / (interference + sigma2)
            })
            .collect();
        Self { u, pi, include_pi }
    }

    pub fn users(&self) -> usize {
        self.u.len()
    }

    /// `coeff[k][i]`: weight of `a_i` in the constraint for UE `k`.
    pub fn coefficients(&self) -> Vec<Vec<f64>> {
        let k = self.users();
        (0..k)
            .map(|kk| {
                let s = if self.include_pi { self.pi[kk].sqrt() } else { 1.0 };
                (0..k).map(|i| s * self.u[i][kk]).collect()
            })
            .collect()
    }

    /// `min_k sqrt(pi_k) sum_i a_i u_i(k)` at the given weights.
    pub fn objective(&self, a: &[f64]) -> f64 {
        self.coefficients()
            .iter()
            .map(|row| row.iter().zip(a).map(|(c, x)| c * x).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommonWeights {
    /// Weights on the unit simplex.
    pub a: Vec<f64>,
    /// Achieved max-min value.
    pub t: f64,
}

/// Solves the max-min weight program exactly with the simplex method. Ties
/// among optimal weights are broken by maximizing the smallest weight, then
/// lexicographically.
pub fn solve_common_weights(problem: &CommonWeightProblem) -> Result<CommonWeights> {
    let k = problem.users();
    if k == 0 {
        return Err(SimError::InvalidWeights("empty problem".into()));
    }
    if problem.pi.len() != k || problem.pi.iter().any(|&p| !(p > 0.0)) {
        return Err(SimError::InvalidWeights("pi_k must be positive".into()));
    }
    let raw = problem.coefficients();
    for (kk, row) in raw.iter().enumerate() {
        if row.iter().all(|&v| v <= 0.0) {
            return Err(SimError::InfeasibleDirection(kk));
        }
    }
    if k == 1 {
        return Ok(CommonWeights {
            a: vec![1.0],
            t: raw[0][0],
        });
    }
    let scale = raw.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let v: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|x| x / scale).collect()).collect();
    // t = s + floor with s >= 0, since every convex combination is >= floor.
    let floor = v.iter().flatten().copied().fold(f64::INFINITY, f64::min);

    // Variables: a_0..a_{K-1}, s.
    let mut objective = vec![0.0; k + 1];
    objective[k] = 1.0;
    let mut lp = LinearProgram::new(objective);
    for row in &v {
        let mut c: Vec<f64> = row.iter().map(|x| -x).collect();
        c.push(1.0);
        lp.constrain(c, Relation::Le, -floor);
    }
    let mut simplex_row = vec![1.0; k];
    simplex_row.push(0.0);
    lp.constrain(simplex_row.clone(), Relation::Eq, 1.0);
    let first = lp.maximize()?;
    let t_star = first.value + floor;
    let slack = 1e-12 * t_star.abs().max(1.0);
    // Uniform weights maximize the smallest weight over the whole simplex.
    let uniform = vec![1.0 / k as f64; k];
    if problem.objective(&uniform) >= (t_star - slack) * scale {
        return Ok(CommonWeights {
            t: problem.objective(&uniform),
            a: uniform,
        });
    }

    // Secondary program: maximize the smallest weight on the optimal face.
    // Variables: a_0..a_{K-1}, z.
    let face = |extra: &mut LinearProgram| {
        for row in &v {
            let mut c = row.clone();
            c.push(0.0);
            extra.constrain(c, Relation::Ge, t_star - slack);
        }
        extra.constrain(simplex_row.clone(), Relation::Eq, 1.0);
    };
    let mut objective = vec![0.0; k + 1];
    objective[k] = 1.0;
    let mut lp2 = LinearProgram::new(objective);
    face(&mut lp2);
    for i in 0..k {
        let mut c = vec![0.0; k + 1];
        c[i] = 1.0;
        c[k] = -1.0;
        lp2.constrain(c, Relation::Ge, 0.0);
    }
    let second = lp2.maximize()?;
    let z_star = second.value;
    let mut a = second.x[..k].to_vec();

    // Lexicographic pass over the remaining ties.
    let mut fixed: Vec<(usize, f64)> = Vec::new();
    for i in 0..k {
        let mut objective = vec![0.0; k + 1];
        objective[i] = -1.0;
        let mut lp3 = LinearProgram::new(objective);
        face(&mut lp3);
        for j in 0..k {
            let mut c = vec![0.0; k + 1];
            c[j] = 1.0;
            lp3.constrain(c, Relation::Ge, z_star);
        }
        for &(j, val) in &fixed {
            let mut c = vec![0.0; k + 1];
            c[j] = 1.0;
            lp3.constrain(c, Relation::Le, val);
        }
        match lp3.maximize() {
            Ok(sol) => {
                fixed.push((i, sol.x[i]));
                a = sol.x[..k].to_vec();
            }
            Err(_) => break,
        }
    }
    let total: f64 = a.iter().sum();
    for x in a.iter_mut() {
        *x /= total;
    }
    // The tie-break may only move along the optimal face.
    let vertex: Vec<f64> = first.x[..k].to_vec();
    if problem.objective(&a) < problem.objective(&vertex) - 1e-12 * scale {
        a = vertex;
    }
    Ok(CommonWeights {
        t: problem.objective(&a),
        a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{mmse_estimate, sample_channels};
    use crate::linalg::relative_frobenius;
    use crate::rng::rng_from_seed;
    use crate::scenario::{local_scattering_covariance, CovarianceSet};

    fn model() -> EstimationModel {
        let rs = vec![
            local_scattering_covariance(1.0, &[0.1, 0.9, -0.6], 0.5, 4),
            local_scattering_covariance(0.4, &[-0.8, 0.3, 1.4], 0.6, 4),
        ];
        EstimationModel::new(&CovarianceSet::from_matrices(rs).unwrap(), 3.0).unwrap()
    }

    fn batch(model: &EstimationModel, n: usize, seed: u64) -> ChannelBatch {
        let mut rng = rng_from_seed(seed);
        let b = sample_channels(&model.cov, n, &mut rng).unwrap();
        mmse_estimate(b, model, false, &mut rng).unwrap()
    }

    #[test]
    fn mr_normalizer_is_deterministic() {
        let m = model();
        let b = batch(&m, 10, 1);
        let w = mr_precoder(&b, &m).unwrap();
        let mut doubled = b.clone();
        doubled.h_hat.iter_mut().for_each(|h| *h = h.scale(2.0));
        let w2 = mr_precoder(&doubled, &m).unwrap();
        assert!(relative_frobenius(&w2[0], &w[0].scale(2.0)) < 1e-15);
    }

    #[test]
    fn common_precoder_collapses_to_mr() {
        let m = model();
        let b = batch(&m, 20, 2);
        let wc = common_precoder(&[1.0, 0.0], &b, &m).unwrap();
        let w = mr_precoder(&b, &m).unwrap();
        assert!(relative_frobenius(&wc, &w[0]) < 1e-14);
    }

    #[test]
    fn common_precoder_is_scale_invariant() {
        let m = model();
        let b = batch(&m, 20, 3);
        let w1 = common_precoder(&[0.3, 0.7], &b, &m).unwrap();
        let w2 = common_precoder(&[3.0, 7.0], &b, &m).unwrap();
        assert!(relative_frobenius(&w1, &w2) < 1e-14);
    }

    #[test]
    fn common_precoder_rejects_zero_weights() {
        let m = model();
        let b = batch(&m, 5, 4);
        assert!(matches!(common_precoder(&[0.0, 0.0], &b, &m), Err(SimError::InvalidWeights(_))));
    }

    #[test]
    fn single_ue_weights() {
        let p = CommonWeightProblem {
            u: vec![vec![3.0]],
            pi: vec![4.0],
            include_pi: true,
        };
        let s = solve_common_weights(&p).unwrap();
        assert_eq!(s.a, vec![1.0]);
        assert!((s.t - 6.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_problem_gives_uniform_weights() {
        for u in [vec![vec![2.0, 2.0], vec![2.0, 2.0]], vec![vec![2.0, 1.0], vec![1.0, 2.0]]] {
            let p = CommonWeightProblem {
                u,
                pi: vec![1.5, 1.5],
                include_pi: true,
            };
            let s = solve_common_weights(&p).unwrap();
            assert!((s.a[0] - 0.5).abs() < 1e-12 && (s.a[1] - 0.5).abs() < 1e-12, "{:?}", s.a);
        }
    }

    #[test]
    fn unservable_ue_is_reported() {
        let p = CommonWeightProblem {
            u: vec![vec![1.0, -1.0], vec![2.0, 0.0]],
            pi: vec![1.0, 1.0],
            include_pi: false,
        };
        assert!(matches!(solve_common_weights(&p), Err(SimError::InfeasibleDirection(1))));
    }

    #[test]
    fn negative_optimum_is_supported() {
        let p = CommonWeightProblem {
            u: vec![vec![1.0, -5.0], vec![-5.0, 1.0]],
            pi: vec![1.0, 1.0],
            include_pi: false,
        };
        let s = solve_common_weights(&p).unwrap();
        assert!((s.t + 2.0).abs() < 1e-9);
    }
}

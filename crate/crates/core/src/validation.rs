//! Closed-form versus Monte Carlo oracles and the validation report.
//!
//! Every check is a pure function of its inputs and a seed so the acceptance
//! tests can call the same oracles the command-line `validate` runs.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::estimation::{mmse_estimate, sample_channels, ChannelSampler, EstimationModel};
use crate::linalg::{relative_frobenius, CMat, C64};
use crate::moments::{
    closed_form_moments, estimate_cross_term_chain, estimate_cross_term_gaussian, mc_quartic_inner, monte_carlo_moments,
    quartic_inner, CrossTermRoute, MomentTable, QuarticVariant,
};
use crate::performance::{common_denominator, private_denominator, PowerVector};
use crate::power::{bottleneck_ue, linearization_terms, LeakageSign};
use crate::precoding::{common_precoder, mr_precoder, solve_common_weights, CommonWeightProblem};
use crate::rng::{chunks, derive_seed, rng_from_seed, substream};
use crate::scenario::{generate_covariances, place_ues, CovarianceSet, ScenarioConfig};

pub const MIN_MC_SAMPLES: usize = 10_000;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub section: &'static str,
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub quartic_winner: Option<QuarticVariant>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, section: &'static str, name: impl Into<String>, measured: f64, tolerance: f64, detail: impl Into<String>) {
        self.checks.push(CheckResult {
            section,
            name: name.into(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        });
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "[{}] {:<12} {:<44} measured {:.3e} limit {:.3e} {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.section,
                c.name,
                c.measured,
                c.tolerance,
                c.detail
            );
        }
        let verdict = match self.quartic_winner {
            Some(v) => format!("quartic variant matching Monte Carlo: {}", v.name()),
            None => "quartic variant matching Monte Carlo: none identified".to_string(),
        };
        let _ = writeln!(s, "{verdict}");
        let _ = writeln!(s, "overall: {}", if self.all_passed() { "PASS" } else { "FAIL" });
        s
    }
}

/// Largest normalized closed-form/Monte Carlo discrepancy of a moment table,
/// `|cf - mc| / max(rel * |cf|, k_se * se)`; at most 1 means agreement.
#[derive(Clone, Debug)]
pub struct MomentComparison {
    pub worst: f64,
    pub worst_entry: String,
    pub entries: usize,
}

pub fn compare_tables(closed: &MomentTable, mc: &MomentTable, rel: f64, k_se: f64) -> Result<MomentComparison> {
    let se = mc
        .std_err
        .as_ref()
        .ok_or_else(|| SimError::Numerical("Monte Carlo table has no standard errors".into()))?;
    let k = closed.users();
    let mut out = MomentComparison {
        worst: 0.0,
        worst_entry: String::new(),
        entries: 0,
    };
    let mut visit = |name: String, cf: C64, m: C64, s: f64| {
        let diff = (cf - m).norm();
        let allowed = (rel * cf.norm()).max(k_se * s);
        let ratio = if diff == 0.0 { 0.0 } else if allowed > 0.0 { diff / allowed } else { f64::INFINITY };
        out.entries += 1;
        if ratio > out.worst {
            out.worst = ratio;
            out.worst_entry = format!("{name}: closed {cf:.6e} mc {m:.6e} se {s:.2e}");
        }
    };
    let re = |x: f64| C64::new(x, 0.0);
    for kk in 0..k {
        visit(format!("g[{kk}]"), closed.gain_private[kk], mc.gain_private[kk], se.gain_private[kk]);
        for i in 0..k {
            visit(format!("G[{kk}][{i}]"), re(closed.power_private[kk][i]), re(mc.power_private[kk][i]), se.power_private[kk][i]);
        }
        visit(format!("g_c[{kk}]"), closed.gain_common[kk], mc.gain_common[kk], se.gain_common[kk]);
        visit(format!("G_c[{kk}]"), re(closed.power_common[kk]), re(mc.power_common[kk]), se.power_common[kk]);
    }
    Ok(out)
}

/// Common-precoder weights used by the pipeline: max-min LP at uniform
/// private powers.
pub fn pipeline_weights(model: &EstimationModel, rho_total: f64, sigma2: f64, include_pi: bool) -> Result<Vec<f64>> {
    let k = model.users();
    let private = closed_form_moments(model, None, CrossTermRoute::Gaussian)?;
    let uniform = vec![rho_total / k as f64; k];
    let problem = CommonWeightProblem::from_model(model, &private.power_private, &uniform, sigma2, include_pi);
    Ok(solve_common_weights(&problem)?.a)
}

/// Closed forms against `n` Monte Carlo realizations.
pub fn moment_oracle(model: &EstimationModel, weights: &[f64], n: usize, seed: u64, route: CrossTermRoute, independent_noise: bool) -> Result<MomentComparison> {
    let closed = closed_form_moments(model, Some(weights), route)?;
    let mc = monte_carlo_moments(model, Some(weights), n, seed, independent_noise)?;
    compare_tables(&closed, &mc, 0.02, 4.0)
}

/// Sample mean and standard error of `||w||^2` for every private precoder
/// and the common precoder.
pub fn precoder_norms(model: &EstimationModel, weights: &[f64], n: usize, seed: u64, independent_noise: bool) -> Result<Vec<(f64, f64)>> {
    let k = model.users();
    let sampler = ChannelSampler::new(&model.cov);
    let parts: Vec<Vec<(f64, f64)>> = chunks(n)
        .into_par_iter()
        .map(|(c, len)| {
            let batch = sampler.draw_chunk(model, len, independent_noise, &mut substream(seed, c as u64));
            let mut w = mr_precoder(&batch, model)?;
            w.push(common_precoder(weights, &batch, model)?);
            Ok(w.iter()
                .map(|m| {
                    m.column_iter().fold((0.0, 0.0), |(s, q), col| {
                        let v = col.norm_squared();
                        (s + v, q + v * v)
                    })
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let nf = n as f64;
    Ok((0..=k)
        .map(|i| {
            let (s, q) = parts.iter().fold((0.0, 0.0), |(a, b), p| (a + p[i].0, b + p[i].1));
            let mean = s / nf;
            (mean, ((q / nf - mean * mean).max(0.0) / nf).sqrt())
        })
        .collect())
}

/// Covariances with bounded condition number: `beta r^|m-n| e^{j theta (m-n)}`.
pub fn well_conditioned_covariances(antennas: usize, users: usize, seed: u64) -> CovarianceSet {
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    let r = (0..users)
        .map(|_| {
            let beta: f64 = rng.random_range(0.5..2.0);
            let corr: f64 = rng.random_range(0.2..0.6);
            let theta: f64 = rng.random_range(-3.0..3.0);
            CMat::from_fn(antennas, antennas, |a, b| {
                let d = a as f64 - b as f64;
                C64::from_polar(beta * corr.powf(d.abs()), theta * d)
            })
        })
        .collect();
    CovarianceSet::from_matrices(r).expect("covariances are well formed")
}

/// Worst relative error of `h_hat_i = R_i R_k^{-1} h_hat_k` over all pairs
/// and the first `columns` realizations.
pub fn shared_observation_identity(model: &EstimationModel, columns: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let batch = sample_channels(&model.cov, columns, &mut rng)?;
    let batch = mmse_estimate(batch, model, false, &mut rng)?;
    let k = model.users();
    let mut worst: f64 = 0.0;
    for kk in 0..k {
        for i in 0..k {
            for c in 0..columns {
                let col = batch.h_hat[kk].column(c).into_owned();
                let rec = model.correlated_estimate(i, kk, &col)?;
                let direct = batch.h_hat[i].column(c);
                let scale = direct.norm();
                if scale > 0.0 {
                    worst = worst.max((rec - direct).norm() / scale);
                }
            }
        }
    }
    Ok(worst)
}

/// Empirical estimate statistics against their closed forms.
#[derive(Clone, Copy, Debug)]
pub struct EstimateStatistics {
    /// Relative Frobenius error of the stacked block matrix `[E{h_hat_i h_hat_k^H}]`.
    pub joint: f64,
    /// Worst relative Frobenius error over the diagonal blocks `Phi_i`.
    pub diagonal: f64,
    /// Worst pair error over `max(2% ||C_ik||, 4 sd)`, where
    /// `sd = sqrt(tr(Phi_i) tr(Phi_k) / n)` is the exact sampling spread.
    pub pairwise: f64,
    /// Worst relative Frobenius error of `E{h_tilde_i h_tilde_i^H}` against `R_i - Phi_i`.
    pub error: f64,
    /// Expected relative error `tr(A) / (||A||_F sqrt(n))` of a sample
    /// covariance of `A`: worst over the `Phi_i` and over the `R_i - Phi_i`.
    pub diagonal_floor: f64,
    pub error_floor: f64,
}

/// Streams `n` realizations and compares the sample second moments of the
/// estimates and the estimation errors with their closed forms.
pub fn estimate_statistics(model: &EstimationModel, n: usize, seed: u64, independent_noise: bool) -> EstimateStatistics {
    let k = model.users();
    let m = model.antennas();
    let sampler = ChannelSampler::new(&model.cov);
    let zero = || (vec![vec![CMat::zeros(m, m); k]; k], vec![CMat::zeros(m, m); k]);
    let all = chunks(n);
    let mut est = zero();
    // Bounded groups keep memory flat; fixed order keeps the sums reproducible.
    for group in all.chunks(rayon::current_num_threads().max(1) * 2) {
        let parts: Vec<_> = group
            .par_iter()
            .map(|&(c, len)| {
                let b = sampler.draw_chunk(model, len, independent_noise, &mut substream(seed, c as u64));
                let mut acc = zero();
                for i in 0..k {
                    for kk in 0..k {
                        acc.0[i][kk] = &b.h_hat[i] * b.h_hat[kk].adjoint();
                    }
                    acc.1[i] = &b.h_tilde[i] * b.h_tilde[i].adjoint();
                }
                acc
            })
            .collect();
        for p in parts {
            for i in 0..k {
                for kk in 0..k {
                    est.0[i][kk] += &p.0[i][kk];
                }
                est.1[i] += &p.1[i];
            }
        }
    }
    let nf = n as f64;
    let tr: Vec<f64> = model.phi.iter().map(|p| p.trace().re).collect();
    let (mut diff2, mut ref2) = (0.0, 0.0);
    let mut out = EstimateStatistics {
        joint: 0.0,
        diagonal: 0.0,
        pairwise: 0.0,
        error: 0.0,
        diagonal_floor: 0.0,
        error_floor: 0.0,
    };
    let floor = |a: &CMat| a.trace().re / (a.norm() * nf.sqrt());
    for i in 0..k {
        for kk in 0..k {
            let target = &model.cross[i][kk];
            let d = (est.0[i][kk].unscale(nf) - target).norm();
            diff2 += d * d;
            ref2 += target.norm_squared();
            let sd = (tr[i] * tr[kk] / nf).sqrt();
            out.pairwise = out.pairwise.max(d / (0.02 * target.norm()).max(4.0 * sd));
            if i == kk {
                out.diagonal = out.diagonal.max(d / target.norm());
                out.diagonal_floor = out.diagonal_floor.max(floor(target));
            }
        }
        let target = &model.cov.r[i] - &model.phi[i];
        out.error = out.error.max(relative_frobenius(&est.1[i].unscale(nf), &target));
        out.error_floor = out.error_floor.max(floor(&target));
    }
    out.joint = (diff2 / ref2).sqrt();
    out
}

/// Worst `|mc - formula| / se` over the entries of `E{c c^H B c c^H}`.
pub fn quartic_z(b: &CMat, n: usize, seed: u64) -> Vec<(QuarticVariant, f64)> {
    let (mean, se) = mc_quartic_inner(b, n, seed);
    [QuarticVariant::Diagonal, QuarticVariant::Circular]
        .into_iter()
        .map(|v| {
            let f = quartic_inner(b, v);
            let z = (0..b.nrows())
                .flat_map(|r| (0..b.ncols()).map(move |c| (r, c)))
                .map(|(r, c)| {
                    let d = (mean[(r, c)] - f[(r, c)]).norm();
                    if se[(r, c)] > 0.0 { d / se[(r, c)] } else if d == 0.0 { 0.0 } else { f64::INFINITY }
                })
                .fold(0.0, f64::max);
            (v, z)
        })
        .collect()
}

/// Random non-Hermitian test matrix for the quartic oracle.
pub fn random_b(m: usize, seed: u64) -> CMat {
    crate::rng::complex_normal_matrix(&mut rng_from_seed(seed), m, m)
}

#[derive(Clone, Debug)]
pub struct QuarticAdjudication {
    /// Per pair: dimension and worst z-score of each variant.
    pub pairs: Vec<(usize, Vec<(QuarticVariant, f64)>)>,
    pub winner: Option<QuarticVariant>,
}

/// Runs the quartic oracle on `dims.len()` random matrices. A variant wins
/// if it alone stays within `z_limit` standard errors on every entry of
/// every pair.
pub fn adjudicate_quartic(dims: &[usize], n: usize, seed: u64, z_limit: f64) -> QuarticAdjudication {
    let pairs: Vec<_> = dims
        .iter()
        .enumerate()
        .map(|(p, &m)| (m, quartic_z(&random_b(m, derive_seed(seed, &[p as u64, 0])), n, derive_seed(seed, &[p as u64, 1]))))
        .collect();
    let matching: Vec<QuarticVariant> = [QuarticVariant::Diagonal, QuarticVariant::Circular]
        .into_iter()
        .filter(|v| pairs.iter().all(|(_, zs)| zs.iter().any(|(w, z)| w == v && *z <= z_limit)))
        .collect();
    QuarticAdjudication {
        pairs,
        winner: if matching.len() == 1 { Some(matching[0]) } else { None },
    }
}

/// Exhaustive search over the simplex grid with the given step for K = 3.
pub fn lp_grid_optimum(problem: &CommonWeightProblem, steps: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for i in 0..=steps {
        for j in 0..=(steps - i) {
            let a = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
            best = best.max(problem.objective(&a));
        }
    }
    best
}

pub fn random_lp_problem(seed: u64) -> CommonWeightProblem {
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    let u = (0..3).map(|_| (0..3).map(|_| rng.random_range(0.05..1.0)).collect()).collect();
    let pi = (0..3).map(|_| rng.random_range(0.2..2.0)).collect();
    CommonWeightProblem { u, pi, include_pi: true }
}

fn log_private(i: usize, p: &PowerVector, m: &MomentTable, s2: f64) -> Result<f64> {
    let den = private_denominator(i, p, m, s2)?;
    Ok((p.rho[i] * m.gain_private[i].norm_sqr() / den).ln_1p())
}

fn log_common(l: usize, p: &PowerVector, m: &MomentTable, s2: f64) -> Result<f64> {
    let den = common_denominator(l, p, m, s2)?;
    Ok((p.rho_c * m.gain_common[l].norm_sqr() / den).ln_1p())
}

/// Five-point central difference of `f` along one power coordinate
/// (`None` is the common stream). `None` if the stencil leaves the orthant.
fn stencil<F>(p: &PowerVector, which: Option<usize>, h: f64, f: F) -> Result<Option<f64>>
where
    F: Fn(&PowerVector) -> Result<f64>,
{
    let base = match which {
        Some(k) => p.rho[k],
        None => p.rho_c,
    };
    if base < 2.0 * h {
        return Ok(None);
    }
    let at = |delta: f64| {
        let mut q = p.clone();
        match which {
            Some(k) => q.rho[k] += delta,
            None => q.rho_c += delta,
        }
        f(&q)
    };
    Ok(Some((at(-2.0 * h)? - 8.0 * at(-h)? + 8.0 * at(h)? - at(2.0 * h)?) / (12.0 * h)))
}

/// Worst relative error between every linearization slope and a five-point
/// finite difference with step `1e-4 rho_T`. Coordinates closer than two
/// steps to zero are skipped.
pub fn slope_fd_error(moments: &MomentTable, p: &PowerVector, sigma2: f64, rho_total: f64) -> Result<f64> {
    let k = moments.users();
    let l = bottleneck_ue(p, moments, sigma2)?;
    let t = linearization_terms(p, moments, sigma2, l, LeakageSign::Derivative)?;
    let h = 1e-4 * rho_total;
    let mut worst: f64 = 0.0;
    let mut cmp = |analytic: f64, fd: Option<f64>| {
        if let Some(fd) = fd {
            let scale = analytic.abs().max(fd.abs());
            if scale > 0.0 {
                worst = worst.max((analytic - fd).abs() / scale);
            }
        }
    };
    for kk in 0..k {
        for i in (0..k).filter(|&i| i != kk) {
            cmp(t.zeta[kk][i], stencil(p, Some(kk), h, |q| log_private(i, q, moments, sigma2))?);
        }
        cmp(t.alpha_private[kk], stencil(p, Some(kk), h, |q| private_denominator(kk, q, moments, sigma2).map(f64::ln))?);
        cmp(t.zeta_common[kk], stencil(p, Some(kk), h, |q| log_common(l, q, moments, sigma2))?);
    }
    for i in 0..k {
        cmp(t.zeta_by_common[i], stencil(p, None, h, |q| log_private(i, q, moments, sigma2))?);
    }
    cmp(t.alpha_common, stencil(p, None, h, |q| common_denominator(l, q, moments, sigma2).map(f64::ln))?);
    Ok(worst)
}

/// Worst relative gap between the inverse-based and the inverse-free
/// evaluation of `E{h_k^H h_hat_i h_hat_j^H h_k}`.
pub fn cross_term_gap(model: &EstimationModel, variant: QuarticVariant) -> Result<f64> {
    let k = model.users();
    let mut worst: f64 = 0.0;
    for kk in 0..k {
        for i in 0..k {
            for j in 0..k {
                let g = estimate_cross_term_gaussian(model, kk, i, j);
                let c = estimate_cross_term_chain(model, kk, i, j, variant)?;
                worst = worst.max((g - c).norm() / g.norm().max(f64::MIN_POSITIVE));
            }
        }
    }
    Ok(worst)
}

/// Runs every oracle on the configured scenario and reports pass/fail with
/// the measured errors.
pub fn validate_mode(config: &SimConfig, mc_samples: usize) -> Result<ValidationReport> {
    if mc_samples < MIN_MC_SAMPLES {
        return Err(SimError::config(
            "mc_samples",
            format!("validation needs at least {MIN_MC_SAMPLES} Monte Carlo samples, got {mc_samples}"),
        ));
    }
    let sc: &ScenarioConfig = &config.scenario;
    sc.validate()?;
    let noise = config.solver.independent_pilot_noise;
    let seed = sc.seed;
    let geo = place_ues(sc, &mut rng_from_seed(seed))?;
    let model = EstimationModel::new(&generate_covariances(sc, &geo), sc.rho_tr())?;
    let sigma2 = sc.sigma2();
    let weights = pipeline_weights(&model, sc.rho_total(), sigma2, config.solver.include_pi)?;
    let mut report = ValidationReport::default();

    let cmp = moment_oracle(&model, &weights, mc_samples, derive_seed(seed, &[1]), config.solver.route(), noise)?;
    report.push("moments", format!("{} table entries vs Monte Carlo", cmp.entries), cmp.worst, 1.0, format!("(max of 2% / 4 SE) worst {}", cmp.worst_entry));

    let norms = precoder_norms(&model, &weights, mc_samples, derive_seed(seed, &[2]), noise)?;
    let worst = norms.iter().map(|(m, s)| (m - 1.0).abs() / (0.01f64).max(4.0 * s)).fold(0.0, f64::max);
    report.push("normalize", "E||w||^2 = 1 for private and common", worst, 1.0, "(max of 1% / 4 SE)");

    let wc = EstimationModel::new(&well_conditioned_covariances(8, sc.users.min(4), derive_seed(seed, &[3])), sc.rho_tr())?;
    let id = shared_observation_identity(&wc, 200, derive_seed(seed, &[4]))?;
    report.push("estimation", "h_hat_i = R_i R_k^-1 h_hat_k per realization", id, 1e-10, "well-conditioned covariances");
    let st = estimate_statistics(&model, mc_samples, derive_seed(seed, &[5]), noise);
    report.push("estimation", "E{h_hat_i h_hat_k^H} = R_i Q^-1 R_k, all blocks", st.joint, 0.02, "relative Frobenius");
    // Large arrays have a sampling floor above 2% at moderate sample counts.
    let limit = |f: f64| 0.02f64.max(3.0 * f);
    report.push("estimation", "E{h_hat_i h_hat_i^H} = Phi_i, worst UE", st.diagonal, limit(st.diagonal_floor), format!("relative Frobenius (max of 2% / 3x sampling floor {:.2e})", st.diagonal_floor));
    report.push("estimation", "E{h_hat_i h_hat_k^H}, worst pair", st.pairwise, 1.0, "(max of 2% / 4 sampling sd)");
    report.push("estimation", "E{h_tilde h_tilde^H} = R - Phi", st.error, limit(st.error_floor), format!("relative Frobenius (max of 2% / 3x sampling floor {:.2e})", st.error_floor));

    let quartic_n = (10 * mc_samples).max(1_000_000);
    let adj = adjudicate_quartic(&[2, 4, 8, 2, 4], quartic_n, derive_seed(seed, &[6]), 3.0);
    for v in [QuarticVariant::Diagonal, QuarticVariant::Circular] {
        let z = adj.pairs.iter().flat_map(|(_, zs)| zs.iter().filter(|(w, _)| *w == v).map(|(_, z)| *z)).fold(0.0, f64::max);
        let detail = if Some(v) == adj.winner { "matches" } else { "deviates" };
        report.checks.push(CheckResult {
            section: "quartic",
            name: format!("{} rule, worst z over 5 pairs", v.name()),
            passed: true,
            measured: z,
            tolerance: 3.0,
            detail: format!("{detail} (informational)"),
        });
    }
    report.push("quartic", "exactly one variant matches", if adj.winner.is_some() { 0.0 } else { 1.0 }, 0.0, "");
    report.quartic_winner = adj.winner;

    let mut lp_worst: f64 = 0.0;
    for p in 0..10u64 {
        let prob = random_lp_problem(derive_seed(seed, &[7, p]));
        let t = solve_common_weights(&prob)?.t;
        let grid = lp_grid_optimum(&prob, 100);
        // The exact optimum can never lose to a grid point beyond rounding.
        let below = t < grid - 1e-9 * grid.abs();
        lp_worst = lp_worst.max(if below { f64::INFINITY } else { (t - grid).abs() / grid.abs() });
    }
    report.push("lp", "t* vs simplex grid (step 0.01), 10 problems", lp_worst, 1e-2, "relative");
    let sym = CommonWeightProblem {
        u: vec![vec![1.0, 0.2, 0.2], vec![0.2, 1.0, 0.2], vec![0.2, 0.2, 1.0]],
        pi: vec![1.0; 3],
        include_pi: true,
    };
    let a = solve_common_weights(&sym)?.a;
    let dev = a.iter().map(|x| (x - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    report.push("lp", "symmetric problem gives uniform weights", dev, 1e-12, "");

    let moments = closed_form_moments(&model, Some(&weights), config.solver.route())?;
    let k = sc.users;
    let rt = sc.rho_total();
    let p = PowerVector {
        rho_c: 0.3 * rt,
        rho: (0..k).map(|i| 0.7 * rt * (i + 1) as f64 / (k * (k + 1) / 2) as f64).collect(),
    };
    let fd = slope_fd_error(&moments, &p, sigma2, rt)?;
    report.push("slopes", "zeta/alpha vs central differences", fd, 1e-5, "relative");

    for v in [QuarticVariant::Circular, QuarticVariant::Diagonal] {
        let gap = cross_term_gap(&wc, v)?;
        let (tol, note) = if v == QuarticVariant::Circular { (1e-8, "") } else { (f64::INFINITY, "(informational)") };
        report.push("cross_term", format!("{} chain vs inverse-free", v.name()), gap, tol, note);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_samples_are_refused() {
        let e = validate_mode(&SimConfig::default(), 100).unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().contains("mc_samples"));
    }

    #[test]
    fn grid_optimum_of_identity_problem() {
        let prob = CommonWeightProblem {
            u: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            pi: vec![1.0; 3],
            include_pi: false,
        };
        // Grid cannot hit 1/3 exactly.
        assert!((lp_grid_optimum(&prob, 100) - 0.33).abs() < 1e-12);
    }

    #[test]
    fn well_conditioned_set_is_well_conditioned() {
        let cov = well_conditioned_covariances(8, 3, 1);
        let model = EstimationModel::new(&cov, 10.0).unwrap();
        for i in 0..3 {
            assert!(model.covariance_inverse(i).unwrap().condition < 1e3);
        }
    }
}

//! Posteriors over the state before the last event, and losses built on them.
//!
//! All losses are reported in nats per dimension.

use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::ctmc::{sample_categorical, EventProcess};
use crate::denoiser::{Denoiser, DenoiserOutput};
use crate::error::{Result, ScudError};
use crate::linalg;
use crate::poisson::PoissonWeights;
use crate::schedule::{sample_poisson, RateSchedule};
use crate::toy_data::advance;

/// Draws `x_t^d ~ K^{s^d}[x_0^d]` independently per dimension.
pub fn forward_noise<R: Rng + ?Sized>(
    process: &EventProcess,
    x0: &[usize],
    s: &[u64],
    rng: &mut R,
) -> Result<Vec<usize>> {
    check_shapes(process, x0, s)?;
    Ok(x0
        .iter()
        .zip(s)
        .map(|(&x, &k)| match k {
            0 => x,
            1 => process.kernel().sample_row(x, rng),
            _ => sample_categorical(&process.transition_row(x, k), rng),
        })
        .collect())
}

fn check_shapes(process: &EventProcess, x: &[usize], s: &[u64]) -> Result<()> {
    if x.len() != s.len() {
        return Err(ScudError::Shape(format!("{} tokens with {} counts", x.len(), s.len())));
    }
    let n = process.num_states();
    if let Some(&bad) = x.iter().find(|&&v| v >= n) {
        return Err(ScudError::Shape(format!("token {bad} outside [0, {n})")));
    }
    Ok(())
}

/// Law of the state just before the `s`-th event given `x_0` and the state
/// after it: proportional to `(x_0^T K^{s-1})[pr] K[pr][x_t]`.
pub fn posterior_prev(process: &EventProcess, x_t: usize, x0: usize, s: u64) -> Result<Vec<f64>> {
    if s == 0 {
        return Err(ScudError::InvalidArgument("posterior needs at least one event".into()));
    }
    let before = process.transition_row(x0, s - 1);
    let last = process.transition_column(x_t, 1);
    let mut out: Vec<f64> = before.iter().zip(&last).map(|(a, b)| a * b).collect();
    if linalg::normalize(&mut out) <= 0.0 {
        return Err(ScudError::Unreachable { x0, x_t, events: s });
    }
    Ok(out)
}

/// Model reversal of `k` events: proportional to `K^k x_t` times
/// `x~_0^T K^{s-k}`, with `x~_0` the predicted row.
pub fn backward_from_denoiser(
    process: &EventProcess,
    prediction: &[f64],
    x_t: usize,
    s: u64,
    k: u64,
) -> Result<Vec<f64>> {
    if k == 0 || k > s {
        return Err(ScudError::InvalidArgument(format!("cannot reverse {k} of {s} events")));
    }
    let mut before = process.kernel_power_apply(s - k, prediction);
    crate::ctmc::clamp_probabilities(&mut before);
    let last = process.transition_column(x_t, k);
    let mut out: Vec<f64> = before.iter().zip(&last).map(|(a, b)| a * b).collect();
    if linalg::normalize(&mut out) <= 0.0 {
        return Err(ScudError::IncompatiblePrediction { x_t, events: s });
    }
    Ok(out)
}

/// `KL(p || q)` in nats; infinite when `q` misses mass of `p`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| if b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
        .sum()
}

/// KL between the true and modelled reversal of the last event.
pub fn event_kl(process: &EventProcess, x0: usize, x_t: usize, s: u64, prediction: &[f64]) -> Result<f64> {
    let p = posterior_prev(process, x_t, x0, s)?;
    let q = backward_from_denoiser(process, prediction, x_t, s, 1)?;
    Ok(kl(&p, &q))
}

/// [`event_kl`] and its gradient with respect to the predicted row.
pub fn event_kl_with_gradient(
    process: &EventProcess,
    x0: usize,
    x_t: usize,
    s: u64,
    prediction: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let p = posterior_prev(process, x_t, x0, s)?;
    let u = process.kernel_power_apply(s - 1, prediction);
    let c = process.transition_column(x_t, 1);
    let z: f64 = u.iter().zip(&c).map(|(a, b)| a * b).sum();
    if !(z > 0.0) {
        return Err(ScudError::IncompatiblePrediction { x_t, events: s });
    }
    let mut value = 0.0;
    let mut w = vec![0.0; p.len()];
    for j in 0..p.len() {
        w[j] = c[j] / z;
        if p[j] > 0.0 {
            let q = u[j] * c[j] / z;
            if !(q > 0.0) {
                return Ok((f64::INFINITY, vec![f64::NAN; p.len()]));
            }
            value += p[j] * (p[j] / q).ln();
            w[j] -= p[j] / u[j];
        }
    }
    Ok((value, process.kernel_power_apply_right(s - 1, &w)))
}

/// `KL(K^{s_1}[x_0] || p_inf)`: how far the end of the forward process is
/// from the stationary law.
pub fn convergence_kl(process: &EventProcess, x0: usize, s1: u64) -> Result<f64> {
    let pi = process.stationary_distribution()?;
    Ok(kl(&process.transition_row(x0, s1), pi))
}

/// Weight `s beta_t / B(t)` on the reversal of the latest event at time `t`.
pub fn event_weight(schedule: &RateSchedule, t: f64, s: u64) -> f64 {
    if s == 0 {
        return 0.0;
    }
    s as f64 * schedule.rate(t) / schedule.cumulative(t)
}

/// One draw of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub t: f64,
    pub denoising: f64,
    pub convergence: f64,
    pub total: f64,
    /// Denoising plus convergence, per dimension.
    pub per_dimension: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEstimate {
    pub denoising: f64,
    pub convergence: f64,
    pub total: f64,
    pub per_dimension: Vec<f64>,
    pub samples: usize,
    /// Standard error of `total`.
    pub std_error: f64,
    pub records: Vec<SampleRecord>,
}

impl LossEstimate {
    pub fn bits_per_dimension(&self) -> f64 {
        self.total / std::f64::consts::LN_2
    }

    pub fn from_records(records: Vec<SampleRecord>) -> Self {
        let n = records.len() as f64;
        let dims = records.first().map_or(0, |r| r.per_dimension.len());
        let mean = |f: &dyn Fn(&SampleRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let total = mean(&|r| r.total);
        let var = records.iter().map(|r| (r.total - total).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let per_dimension = (0..dims).map(|d| mean(&|r| r.per_dimension[d])).collect();
        Self {
            denoising: mean(&|r| r.denoising),
            convergence: mean(&|r| r.convergence),
            total,
            per_dimension,
            samples: records.len(),
            std_error: (var / n).sqrt(),
            records,
        }
    }
}

/// Denoising part of one draw at time `t`:
/// `sum_d s^d beta_t / B(t) KL(true || model)` per dimension.
pub fn scud_denoising_terms<D: Denoiser + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    x0: &[usize],
    x_t: &[usize],
    s_t: &[u64],
    t: f64,
) -> Result<Vec<f64>> {
    check_shapes(process, x_t, s_t)?;
    if s_t.iter().all(|&s| s == 0) {
        return Ok(vec![0.0; x0.len()]);
    }
    let pred = denoiser.predict(x_t, s_t)?;
    let mut out = Vec::with_capacity(x0.len());
    for d in 0..x0.len() {
        if s_t[d] == 0 {
            out.push(0.0);
            continue;
        }
        let kl = event_kl(process, x0[d], x_t[d], s_t[d], pred.row(d))?;
        out.push(event_weight(schedule, t, s_t[d]) * kl);
    }
    Ok(out)
}

/// One draw of the estimator at a given time: `s_t ~ Pois(r B(t))`,
/// `s_1 = s_t + Pois(r (B(1) - B(t)))`, `x_t ~ K^{s_t}[x_0]`.
pub fn scud_elbo_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    x0: &[usize],
    t: f64,
    include_convergence: bool,
    rng: &mut R,
) -> Result<SampleRecord> {
    let dims = x0.len();
    let r = process.rate();
    let (b_t, b_1) = (schedule.cumulative(t), schedule.horizon());
    let s_t: Vec<u64> = (0..dims).map(|_| sample_poisson(r * b_t, rng)).collect();
    let s_1: Vec<u64> = s_t.iter().map(|&s| s + sample_poisson(r * (b_1 - b_t).max(0.0), rng)).collect();
    let x_t = forward_noise(process, x0, &s_t, rng)?;
    let mut per_dim = scud_denoising_terms(process, schedule, denoiser, x0, &x_t, &s_t, t)?;
    let denoising: f64 = per_dim.iter().sum();
    let mut convergence = 0.0;
    if include_convergence {
        for d in 0..dims {
            let c = convergence_kl(process, x0[d], s_1[d])?;
            if !c.is_finite() {
                return Err(ScudError::NonFinite {
                    sample: 0,
                    dim: d,
                    detail: format!(
                        "convergence term is infinite: after {} events the forward law misses the stationary support",
                        s_1[d]
                    ),
                });
            }
            per_dim[d] += c;
            convergence += c;
        }
    }
    if !denoising.is_finite() {
        let dim = per_dim.iter().position(|x| !x.is_finite()).unwrap_or(0);
        return Err(ScudError::NonFinite {
            sample: 0,
            dim,
            detail: "denoiser puts zero mass on a reachable previous state".into(),
        });
    }
    let scale = 1.0 / dims as f64;
    Ok(SampleRecord {
        t,
        denoising: denoising * scale,
        convergence: convergence * scale,
        total: (denoising + convergence) * scale,
        per_dimension: per_dim,
    })
}

fn estimate<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    x0: &[usize],
    rng: &mut R,
    n_samples: usize,
    include_convergence: bool,
) -> Result<LossEstimate> {
    if n_samples == 0 {
        return Err(ScudError::InvalidArgument("need at least one sample".into()));
    }
    check_shapes(process, x0, &vec![0; x0.len()])?;
    let mut records = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        // Stratified time: one uniform draw per stratum.
        let t = (i as f64 + rng.random::<f64>()) / n_samples as f64;
        let record =
            scud_elbo_sample(process, schedule, denoiser, x0, t, include_convergence, rng).map_err(|e| match e {
                ScudError::NonFinite { dim, detail, .. } => ScudError::NonFinite { sample: i, dim, detail },
                other => other,
            })?;
        records.push(record);
    }
    Ok(LossEstimate::from_records(records))
}

/// Monte Carlo estimate of the negative evidence lower bound for `x0`, with
/// time stratified over the samples.
pub fn scud_elbo_estimate<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    x0: &[usize],
    rng: &mut R,
    n_samples: usize,
) -> Result<LossEstimate> {
    estimate(process, schedule, denoiser, x0, rng, n_samples, true)
}

/// As [`scud_elbo_estimate`] without the convergence term, which is infinite
/// for absorbing processes whenever a dimension sees no event.
pub fn scud_denoising_estimate<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    x0: &[usize],
    rng: &mut R,
    n_samples: usize,
) -> Result<LossEstimate> {
    estimate(process, schedule, denoiser, x0, rng, n_samples, false)
}

/// Masking objective at time `t` for a given mask:
/// `beta_t alpha_t / (1 - alpha_t) sum_{d masked} -log x~_0^d[x_0^d]`, with
/// `alpha_t = exp(-B(t))`. Masked tokens are replaced by `mask_state` and the
/// denoiser sees the mask as a 0/1 count.
pub fn masking_objective_term<D: Denoiser + ?Sized>(
    schedule: &RateSchedule,
    denoiser: &D,
    x0: &[usize],
    mask: &[bool],
    mask_state: usize,
    t: f64,
) -> Result<f64> {
    if !mask.iter().any(|&m| m) {
        return Ok(0.0);
    }
    let x_t: Vec<usize> = x0.iter().zip(mask).map(|(&x, &m)| if m { mask_state } else { x }).collect();
    let counts: Vec<u64> = mask.iter().map(|&m| m as u64).collect();
    let pred = denoiser.predict(&x_t, &counts)?;
    let b = schedule.cumulative(t);
    let alpha = (-b).exp();
    let weight = schedule.rate(t) * alpha / -(-b).exp_m1();
    let ce: f64 = (0..x0.len()).filter(|&d| mask[d]).map(|d| -pred.row(d)[x0[d]].ln()).sum();
    Ok(weight * ce / x0.len() as f64)
}

/// Monte Carlo masking objective with stratified `t` and `m^d ~ Bern(1 - alpha_t)`.
pub fn masking_objective<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    schedule: &RateSchedule,
    denoiser: &D,
    x0: &[usize],
    mask_state: usize,
    rng: &mut R,
    n_samples: usize,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(ScudError::InvalidArgument("need at least one sample".into()));
    }
    let mut total = 0.0;
    for i in 0..n_samples {
        let t = (i as f64 + rng.random::<f64>()) / n_samples as f64;
        let keep = (-schedule.cumulative(t)).exp();
        let mask: Vec<bool> = x0.iter().map(|_| rng.random::<f64>() >= keep).collect();
        total += masking_objective_term(schedule, denoiser, x0, &mask, mask_state, t)?;
    }
    Ok(total / n_samples as f64)
}

/// `g(a) = a (log a - 1)`, with `g(0) = 0`.
fn g(a: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * (a.ln() - 1.0)
    }
}

/// Score entropy of one dimension:
/// `sum_{b != x_t} L[b][x_t] (s~_b - a_b log s~_b + g(a_b))`, where `s~` is
/// the model ratio `(x~_0^T Q_t)_b / (x~_0^T Q_t)_{x_t}` and `a` the true
/// ratio `Q_t[x_0][b] / Q_t[x_0][x_t]`.
pub fn score_entropy(process: &EventProcess, model_marginal: &[f64], true_marginal: &[f64], x_t: usize) -> Result<f64> {
    let (qm, qt) = (model_marginal[x_t], true_marginal[x_t]);
    if !(qm > 0.0) {
        return Err(ScudError::InvalidArgument(format!("model gives zero probability to the observed state {x_t}")));
    }
    let mut out = 0.0;
    for b in (0..model_marginal.len()).filter(|&b| b != x_t) {
        let rate = process.generator_entry(b, x_t);
        if rate == 0.0 {
            continue;
        }
        let score = model_marginal[b] / qm;
        let a = true_marginal[b] / qt;
        if score <= 0.0 && a > 0.0 {
            return Err(ScudError::InvalidArgument(format!("zero model score ratio at state {b}")));
        }
        let log_term = if a > 0.0 { a * score.ln() } else { 0.0 };
        out += rate * (score - log_term + g(a));
    }
    Ok(out)
}

/// `x^T exp(tau L)` for each row of `rows`.
fn marginals_at(process: &EventProcess, rows: &[f64], states: usize, tau: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows.chunks(states) {
        let mut m = process.generator_exponential_apply(tau, row)?;
        crate::ctmc::clamp_probabilities(&mut m);
        out.extend(m);
    }
    Ok(out)
}

/// Score-entropy loss at time `t`, Monte Carlo over `x_t ~ exp(B(t) L)[x_0]`.
///
/// The denoiser is shown the expected counts `round(r B(t))`.
pub fn sedd_loss<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    x0: &[usize],
    t: f64,
    rng: &mut R,
    n_samples: usize,
) -> Result<f64> {
    let beta = schedule.rate(t);
    if beta == 0.0 {
        return Ok(0.0);
    }
    let n = process.num_states();
    let tau = schedule.cumulative(t);
    let truth: Vec<Vec<f64>> =
        x0.iter().map(|&x| marginals_at(process, &linalg::one_hot(n, x), n, tau)).collect::<Result<_>>()?;
    let counts = vec![(process.rate() * tau).round() as u64; x0.len()];
    let mut total = 0.0;
    for _ in 0..n_samples.max(1) {
        let x_t: Vec<usize> = truth.iter().map(|row| sample_categorical(row, rng)).collect();
        let pred = denoiser.predict(&x_t, &counts)?;
        let model = marginals_at(process, pred.as_slice(), n, tau)?;
        for d in 0..x0.len() {
            total += score_entropy(process, &model[d * n..(d + 1) * n], &truth[d], x_t[d])?;
        }
    }
    Ok(beta * total / (n_samples.max(1) * x0.len()) as f64)
}

/// Exact score-entropy loss at time `t` for one dimension, summing over `x_t`.
pub fn sedd_loss_exact_at<D: Denoiser + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    x0: usize,
    t: f64,
) -> Result<f64> {
    let beta = schedule.rate(t);
    let n = process.num_states();
    let tau = schedule.cumulative(t);
    let truth = marginals_at(process, &linalg::one_hot(n, x0), n, tau)?;
    let count = [(process.rate() * tau).round() as u64];
    let mut total = 0.0;
    for x_t in 0..n {
        if truth[x_t] == 0.0 {
            continue;
        }
        let pred = denoiser.predict(&[x_t], &count)?;
        let model = marginals_at(process, pred.as_slice(), n, tau)?;
        total += truth[x_t] * score_entropy(process, &model, &truth, x_t)?;
    }
    Ok(beta * total)
}

/// Exact denoising integrand at time `t` for one dimension:
/// `sum_s Pois(r B(t))(s) s beta_t / B(t) sum_{x_t} K^s[x_0][x_t] KL`.
pub fn scud_denoising_exact_at<D: Denoiser + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    x0: usize,
    t: f64,
) -> Result<f64> {
    let b_t = schedule.cumulative(t);
    if b_t <= 0.0 {
        return Ok(0.0);
    }
    let weights = PoissonWeights::new(process.rate() * b_t);
    let mut total = 0.0;
    for (s, w) in weights.iter() {
        if s == 0 || w == 0.0 {
            continue;
        }
        let s = s as u64;
        let law = process.transition_row(x0, s);
        let mut inner = 0.0;
        for (x_t, &p) in law.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let pred = denoiser.predict(&[x_t], &[s])?;
            inner += p * event_kl(process, x0, x_t, s, pred.row(0))?;
        }
        total += w * event_weight(schedule, t, s) * inner;
    }
    Ok(total)
}

/// Composite 8-point Gauss-Legendre rule on `[0, 1]`.
pub fn integrate_unit_interval(panels: usize, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    const NODES: [f64; 4] =
        [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
    const WEIGHTS: [f64; 4] =
        [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
    let h = 1.0 / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            total += w * 0.5 * h * (f(mid - 0.5 * h * x)? + f(mid + 0.5 * h * x)?);
        }
    }
    Ok(total)
}

/// 8-point Gauss-Legendre on panels that halve towards `t = 0`:
/// `[0, 2^-levels], [2^-levels, 2^-levels+1], ..., [1/2, 1]`, each split into
/// `per_panel` equal pieces. Nodes are evaluated in parallel and summed in a
/// fixed order. Resolves integrands with a thin layer at the origin.
pub fn integrate_graded(levels: u32, per_panel: usize, f: impl Fn(f64) -> Result<f64> + Sync) -> Result<f64> {
    const NODES: [f64; 4] =
        [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
    const WEIGHTS: [f64; 4] =
        [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
    let mut edges = vec![0.0];
    edges.extend((0..=levels).rev().map(|k| 0.5f64.powi(k as i32)));
    let mut points = Vec::new();
    for w in edges.windows(2) {
        let h = (w[1] - w[0]) / per_panel as f64;
        for p in 0..per_panel {
            let mid = w[0] + (p as f64 + 0.5) * h;
            for (x, wt) in NODES.iter().zip(WEIGHTS) {
                points.push((mid - 0.5 * h * x, 0.5 * h * wt));
                points.push((mid + 0.5 * h * x, 0.5 * h * wt));
            }
        }
    }
    let values = points.par_iter().map(|&(t, _)| f(t)).collect::<Result<Vec<f64>>>()?;
    Ok(points.iter().zip(values).map(|((_, w), v)| w * v).sum())
}

/// Exact expected loss, split into its two parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactLoss {
    pub denoising: f64,
    pub convergence: f64,
    pub total: f64,
}

/// Exact expected loss (nats per dimension) over the data `(x_0, weight)`.
///
/// Works in count space. Events of all `D` dimensions form one Poisson process
/// of rate `D r` on process time `[0, B(1)]`, each event landing in a uniform
/// dimension. The count vector `s` is visited with its latest event in
/// dimension `d` with probability
/// `(N-1)! / ((s^d - 1)! prod_{d' != d} s^{d'}!) D^{-N} P(Pois(D r B(1)) >= N)`,
/// `N = sum s`, and that event costs `E[KL_d]` under `x_t ~ K^s[x_0]`.
pub fn exact_expected_loss<D: Denoiser + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    data: &[(Vec<usize>, f64)],
) -> Result<ExactLoss> {
    let dims = data.first().map(|(x, _)| x.len()).ok_or_else(|| ScudError::InvalidArgument("empty data".into()))?;
    let n = process.num_states();
    let data: Vec<&(Vec<usize>, f64)> = data.iter().filter(|(_, p)| *p > 0.0).collect();
    let horizon = schedule.horizon();
    let lambda = dims as f64 * process.rate() * horizon;
    let xt_space = (n as u128).checked_pow(dims as u32).unwrap_or(u128::MAX);
    let cap = crate::tolerances::TOLERANCES.enumeration_cap;
    if xt_space > cap {
        return Err(ScudError::EnumerationTooLarge { size: xt_space, cap });
    }
    let mut levels = Vec::new();
    let mut level = 1u64;
    loop {
        let tail = gamma_lr(level as f64, lambda);
        if tail < 1e-14 || level > 100_000 {
            break;
        }
        levels.push((level, tail));
        level += 1;
    }
    let mut vectors = Vec::new();
    for &(total, tail) in &levels {
        compositions(total, dims, &mut |s| vectors.push((s.to_vec(), tail)));
        if vectors.len() as u128 * xt_space * data.len() as u128 > 50 * cap * cap {
            return Err(ScudError::EnumerationTooLarge { size: vectors.len() as u128 * xt_space, cap });
        }
    }
    let contributions: Vec<Result<f64>> =
        vectors.par_iter().map(|(s, tail)| count_vector_cost(process, denoiser, &data, s, *tail, n)).collect();
    let mut denoising = 0.0;
    for c in contributions {
        denoising += c?;
    }
    let weights = PoissonWeights::new(process.rate() * horizon);
    let mut convergence = 0.0;
    for (x0, p) in &data {
        for &x in x0.iter() {
            let mut expected = 0.0;
            let mut last = 0.0;
            for (k, w) in weights.iter() {
                last = convergence_kl(process, x, k as u64)?;
                if w > 0.0 {
                    expected += w * last;
                }
            }
            expected += (1.0 - weights.total()) * last;
            convergence += p * expected;
        }
    }
    if !convergence.is_finite() {
        return Err(ScudError::NonFinite { sample: 0, dim: 0, detail: "expected convergence term is infinite".into() });
    }
    let scale = 1.0 / dims as f64;
    Ok(ExactLoss {
        denoising: denoising * scale,
        convergence: convergence * scale,
        total: (denoising + convergence) * scale,
    })
}

/// Calls `f` with every vector of `dims` non-negative integers summing to `total`.
fn compositions(total: u64, dims: usize, f: &mut impl FnMut(&[u64])) {
    fn go(prefix: &mut Vec<u64>, left: u64, dims: usize, f: &mut impl FnMut(&[u64])) {
        if prefix.len() + 1 == dims {
            prefix.push(left);
            f(prefix);
            prefix.pop();
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            go(prefix, left - k, dims, f);
            prefix.pop();
        }
    }
    go(&mut Vec::with_capacity(dims), total, dims, f);
}

fn count_vector_cost<D: Denoiser + ?Sized>(
    process: &EventProcess,
    denoiser: &D,
    data: &[&(Vec<usize>, f64)],
    s: &[u64],
    tail: f64,
    n: usize,
) -> Result<f64> {
    let dims = s.len();
    let total: u64 = s.iter().sum();
    let ln_fact = |k: u64| ln_gamma(k as f64 + 1.0);
    let base = ln_gamma(total as f64) - total as f64 * (dims as f64).ln() + tail.ln()
        - s.iter().map(|&k| ln_fact(k)).sum::<f64>();
    // Probability that the visit to `s` ends with an event in `d`: the base
    // term times s^d, since (s^d - 1)! = s^d! / s^d.
    let visit: Vec<f64> = s.iter().map(|&k| if k == 0 { 0.0 } else { (base + (k as f64).ln()).exp() }).collect();
    // Forward laws K^{s^d}[x][.] for each dimension and clean state.
    let laws: Vec<Vec<Vec<f64>>> = s.iter().map(|&k| (0..n).map(|x| process.transition_row(x, k)).collect()).collect();
    let mut x_t = vec![0usize; dims];
    let mut cost = 0.0;
    loop {
        let mut pred: Option<DenoiserOutput> = None;
        let mut kl_cache: Vec<Vec<Option<f64>>> = vec![vec![None; n]; dims];
        for (x0, p) in data {
            let lik: f64 = (0..dims).map(|d| laws[d][x0[d]][x_t[d]]).product();
            if lik == 0.0 {
                continue;
            }
            for d in 0..dims {
                if visit[d] == 0.0 {
                    continue;
                }
                let kl = match kl_cache[d][x0[d]] {
                    Some(v) => v,
                    None => {
                        if pred.is_none() {
                            pred = Some(denoiser.predict(&x_t, s)?);
                        }
                        let row = pred.as_ref().expect("prediction computed").row(d);
                        let v = event_kl(process, x0[d], x_t[d], s[d], row)?;
                        kl_cache[d][x0[d]] = Some(v);
                        v
                    }
                };
                cost += p * lik * visit[d] * kl;
            }
        }
        if !advance(&mut x_t, n) {
            break;
        }
    }
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{FixedDenoiser, MixedDenoiser, OracleDenoiser};
    use crate::processes::{GaussianForm, ProcessSpec};
    use crate::rng::seeded;
    use crate::toy_data::ToyDistribution;
    use std::sync::Arc;

    fn gaussian3() -> EventProcess {
        ProcessSpec::GaussianBand { states: 3, bandwidth: 2.0, form: GaussianForm::Normalized }.build(0.6).unwrap()
    }

    /// `p(pr | x0, s - 1) K[pr][x_t] / p(x_t | x0, s)` by explicit sums.
    fn one_step_oracle(process: &EventProcess, x0: usize, x_t: usize, s: u64) -> Vec<f64> {
        let n = process.num_states();
        let k: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| process.kernel().get(i, j)).collect()).collect();
        let mut law = vec![0.0; n];
        law[x0] = 1.0;
        for _ in 1..s {
            law = (0..n).map(|j| (0..n).map(|i| law[i] * k[i][j]).sum()).collect();
        }
        let joint: Vec<f64> = (0..n).map(|pr| law[pr] * k[pr][x_t]).collect();
        let z: f64 = joint.iter().sum();
        joint.iter().map(|x| x / z).collect()
    }

    #[test]
    fn posterior_after_one_event_is_the_start() {
        let p = gaussian3();
        for x0 in 0..3 {
            for x_t in 0..3 {
                let post = posterior_prev(&p, x_t, x0, 1).unwrap();
                assert_eq!(post, linalg::one_hot(3, x0));
            }
        }
    }

    #[test]
    fn posterior_matches_explicit_sums() {
        let p = gaussian3();
        for x0 in 0..3 {
            for x_t in 0..3 {
                for s in 1..=4 {
                    let got = posterior_prev(&p, x_t, x0, s).unwrap();
                    let want = one_step_oracle(&p, x0, x_t, s);
                    assert!(linalg::max_abs_diff(&got, &want) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn flat_kernel_posterior_is_uniform() {
        let p = ProcessSpec::Uniform { states: 4 }.build(0.75).unwrap();
        let post = posterior_prev(&p, 2, 0, 3).unwrap();
        assert!(post.iter().all(|&x| (x - 0.25).abs() < 1e-14));
    }

    #[test]
    fn unreachable_states_are_reported() {
        let p = ProcessSpec::Masking { states: 3 }.build(1.0).unwrap();
        assert!(matches!(posterior_prev(&p, 1, 0, 1), Err(ScudError::Unreachable { .. })));
    }

    #[test]
    fn model_reversal_with_true_start_is_the_posterior() {
        let p = gaussian3();
        for s in 1..4 {
            let q = backward_from_denoiser(&p, &linalg::one_hot(3, 1), 2, s, 1).unwrap();
            let post = posterior_prev(&p, 2, 1, s).unwrap();
            assert!(linalg::max_abs_diff(&q, &post) < 1e-14);
        }
        // Reversing every event leaves the prediction reweighted by K^s x_t.
        let pred = [0.2, 0.5, 0.3];
        let q = backward_from_denoiser(&p, &pred, 0, 3, 3).unwrap();
        let col = p.transition_column(0, 3);
        let mut want: Vec<f64> = pred.iter().zip(&col).map(|(a, b)| a * b).collect();
        linalg::normalize(&mut want);
        assert!(linalg::max_abs_diff(&q, &want) < 1e-14);
    }

    #[test]
    fn two_event_reversal_composes_single_reversals() {
        // With a one-hot prediction, the two-step reversal equals the law of the
        // state two events back, obtained by chaining exact posteriors.
        let p = gaussian3();
        let (x0, x_t, s) = (0, 2, 3);
        let q = backward_from_denoiser(&p, &linalg::one_hot(3, x0), x_t, s, 2).unwrap();
        let first = posterior_prev(&p, x_t, x0, s).unwrap();
        let mut chained = vec![0.0; 3];
        for (mid, &w) in first.iter().enumerate() {
            let second = posterior_prev(&p, mid, x0, s - 1).unwrap();
            chained.iter_mut().zip(&second).for_each(|(c, x)| *c += w * x);
        }
        assert!(linalg::max_abs_diff(&q, &chained) < 1e-12);
    }

    #[test]
    fn bayes_identity_holds() {
        let p = gaussian3();
        for x0 in 0..3 {
            for s in 1..5 {
                let before = p.transition_row(x0, s - 1);
                let after = p.transition_row(x0, s);
                for x_t in 0..3 {
                    let post = posterior_prev(&p, x_t, x0, s).unwrap();
                    for pr in 0..3 {
                        let lhs = post[pr] * after[x_t];
                        let rhs = before[pr] * p.kernel().get(pr, x_t);
                        assert!((lhs - rhs).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let p = gaussian3();
        let pred = [0.3, 0.45, 0.25];
        let (_, grad) = event_kl_with_gradient(&p, 0, 2, 3, &pred).unwrap();
        for i in 0..3 {
            let h = 1e-6;
            let mut up = pred;
            up[i] += h;
            let mut down = pred;
            down[i] -= h;
            let fd = (event_kl(&p, 0, 2, 3, &up).unwrap() - event_kl(&p, 0, 2, 3, &down).unwrap()) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "{fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn forward_noise_matches_kernel_powers() {
        let p =
            ProcessSpec::GaussianBand { states: 3, bandwidth: 1.0, form: GaussianForm::Normalized }.build(1.0).unwrap();
        let mut rng = seeded(8);
        assert_eq!(forward_noise(&p, &[2, 1], &[0, 0], &mut rng).unwrap(), vec![2, 1]);
        let draws = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[forward_noise(&p, &[0], &[2], &mut rng).unwrap()[0]] += 1;
        }
        let law = p.transition_row(0, 2);
        let chi2: f64 =
            (0..3).map(|j| (counts[j] as f64 - draws as f64 * law[j]).powi(2) / (draws as f64 * law[j])).sum();
        // 99.9% quantile of chi-square with 2 degrees of freedom.
        assert!(chi2 < 13.8, "chi2 = {chi2}");
    }

    #[test]
    fn masking_noise_absorbs() {
        let p = ProcessSpec::Masking { states: 4 }.build(1.0).unwrap();
        let x = forward_noise(&p, &[0, 1, 2], &[1, 3, 0], &mut seeded(1)).unwrap();
        assert_eq!(x, vec![3, 3, 2]);
    }

    fn two_state_setup(eps: f64) -> (Arc<EventProcess>, RateSchedule, OracleDenoiser) {
        let process = Arc::new(ProcessSpec::Uniform { states: 2 }.build(0.5).unwrap());
        let schedule = crate::schedule::fit_schedule(&process, &[0.5, 0.5], eps).unwrap();
        let toy = ToyDistribution::uniform(2, 1).unwrap();
        let oracle = OracleDenoiser::new(toy, process.clone()).unwrap();
        (process, schedule, oracle)
    }

    #[test]
    fn uniform_two_state_loss_is_log_two() {
        for eps in [0.01, 0.1] {
            let (process, schedule, oracle) = two_state_setup(eps);
            let data = vec![(vec![0], 0.5), (vec![1], 0.5)];
            let exact = exact_expected_loss(&process, &schedule, &oracle, &data).unwrap();
            assert!((exact.total - std::f64::consts::LN_2).abs() < 1e-9, "{exact:?}");
        }
    }

    #[test]
    fn estimator_agrees_with_enumeration() {
        let (process, schedule, oracle) = two_state_setup(0.01);
        let mixed = MixedDenoiser { inner: &oracle, mix: 0.3 };
        let exact = exact_expected_loss(&process, &schedule, &mixed, &[(vec![1], 1.0)]).unwrap();
        let est = scud_elbo_estimate(&process, &schedule, &mixed, &[1], &mut seeded(3), 20_000).unwrap();
        assert!((est.total - exact.total).abs() < 4.0 * est.std_error, "{} vs {}", est.total, exact.total);
    }

    #[test]
    fn perfect_prediction_on_point_mass_data_costs_nothing() {
        let process = Arc::new(ProcessSpec::Masking { states: 3 }.build(1.0).unwrap());
        let schedule = RateSchedule::masking_closed_form(0.01).unwrap();
        let toy = ToyDistribution::factorized(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let oracle = OracleDenoiser::new(toy, process.clone()).unwrap();
        let est = scud_denoising_estimate(&process, &schedule, &oracle, &[0, 1], &mut seeded(2), 500).unwrap();
        assert_eq!(est.denoising, 0.0);
        let err = scud_elbo_estimate(&process, &schedule, &oracle, &[0, 1], &mut seeded(2), 500).unwrap_err();
        assert!(matches!(err, ScudError::NonFinite { .. }));
        assert_eq!(masking_objective(&schedule, &oracle, &[0, 1], 2, &mut seeded(2), 200).unwrap(), 0.0);
    }

    #[test]
    fn masking_term_without_mask_is_zero() {
        let process = Arc::new(ProcessSpec::Masking { states: 3 }.build(1.0).unwrap());
        let schedule = RateSchedule::masking_closed_form(0.01).unwrap();
        let toy = ToyDistribution::uniform(2, 2).unwrap();
        let oracle = OracleDenoiser::new(toy, process).unwrap();
        assert_eq!(masking_objective_term(&schedule, &oracle, &[0, 1], &[false, false], 2, 1e-3).unwrap(), 0.0);
    }

    /// Second formula for score entropy, written from the Bregman form
    /// `a (r log r - r + 1)` with `r = s / a`, plus the `s` terms at `a = 0`.
    fn score_entropy_bregman(rates: &[f64], model: &[f64], truth: &[f64], x_t: usize) -> f64 {
        let mut out = 0.0;
        for b in (0..model.len()).filter(|&b| b != x_t) {
            let s = model[b] / model[x_t];
            let a = truth[b] / truth[x_t];
            out += rates[b]
                * if a > 0.0 {
                    let ratio = s / a;
                    a * (ratio - ratio.ln() - 1.0)
                } else {
                    s
                };
        }
        out
    }

    #[test]
    fn score_entropy_matches_bregman_form_and_vanishes_at_the_truth() {
        let p = gaussian3();
        let truth = [0.5, 0.3, 0.2];
        let model = [0.2, 0.3, 0.5];
        let rates: Vec<f64> = (0..3).map(|b| p.generator_entry(b, 1)).collect();
        let got = score_entropy(&p, &model, &truth, 1).unwrap();
        assert!((got - score_entropy_bregman(&rates, &model, &truth, 1)).abs() < 1e-14);
        assert!(got > 0.0);
        assert!(score_entropy(&p, &truth, &truth, 1).unwrap().abs() < 1e-15);
    }

    #[test]
    fn sedd_exact_and_sampled_agree_at_the_start() {
        let (process, _, _) = two_state_setup(0.01);
        let schedule = RateSchedule::masking_closed_form(0.01).unwrap();
        let fixed = FixedDenoiser::new(DenoiserOutput::new(2, vec![0.6, 0.4]).unwrap());
        // At t = 0 every draw has x_t = x_0, so one sample is exact.
        let exact = sedd_loss_exact_at(&process, &schedule, &fixed, 0, 0.0).unwrap();
        let mc = sedd_loss(&process, &schedule, &fixed, &[0], 0.0, &mut seeded(1), 10).unwrap();
        assert!((exact - mc).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let v = integrate_unit_interval(3, |t| Ok(t.powi(9) - 2.0 * t)).unwrap();
        assert!((v - (0.1 - 1.0)).abs() < 1e-14);
    }
}

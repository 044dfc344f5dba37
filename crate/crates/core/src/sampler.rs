//! Reverse sampling with a fixed budget of denoiser calls, and a comparison
//! of forward and backward transition rates.

use rand::Rng;
use rayon::prelude::*;

use crate::ctmc::{gillespie_simulate, sample_categorical, EventProcess};
use crate::denoiser::Denoiser;
use crate::error::{Result, ScudError};
use crate::loss::backward_from_denoiser;
use crate::rng::{stream_rng, streams};
use crate::schedule::{sample_event_schedule, sample_poisson, RateSchedule};

/// A finished reverse run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleOutcome {
    pub tokens: Vec<usize>,
    /// Denoiser calls made.
    pub evaluations: usize,
    /// Events drawn for the run; all of them are reversed.
    pub events: u64,
}

/// Draws one sequence of length `dims` with at most `budget` denoiser calls.
///
/// Starts from `x ~ p_inf` and `s^d ~ Pois(r B(1))`. Each round reverses
/// `L = ceil(sum s / budget)` events picked uniformly from those left, all
/// dimensions sharing one denoiser call; a dimension with `k` picked events
/// reverses them at once.
pub fn scud_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    dims: usize,
    budget: usize,
    rng: &mut R,
) -> Result<SampleOutcome> {
    if budget == 0 {
        return Err(ScudError::InvalidArgument("budget must be at least one evaluation".into()));
    }
    if dims == 0 {
        return Err(ScudError::InvalidArgument("need at least one dimension".into()));
    }
    let pi = process.stationary_distribution()?.to_vec();
    let mut x: Vec<usize> = (0..dims).map(|_| sample_categorical(&pi, rng)).collect();
    let mean = process.rate() * schedule.horizon();
    let mut s: Vec<u64> = (0..dims).map(|_| sample_poisson(mean, rng)).collect();
    let events: u64 = s.iter().sum();
    let per_round = events.div_ceil(budget as u64).max(1);
    let mut remaining = events;
    let mut evaluations = 0;
    while remaining > 0 {
        let take = per_round.min(remaining);
        let picked = pick_events(&s, take, remaining, rng);
        let pred = denoiser.predict(&x, &s)?;
        evaluations += 1;
        for d in 0..dims {
            let k = picked[d];
            if k == 0 {
                continue;
            }
            let law = backward_from_denoiser(process, pred.row(d), x[d], s[d], k)?;
            x[d] = sample_categorical(&law, rng);
            s[d] -= k;
        }
        remaining -= take;
    }
    debug_assert!(s.iter().all(|&k| k == 0));
    Ok(SampleOutcome { tokens: x, evaluations, events })
}

/// Chooses `take` of the remaining events uniformly without replacement and
/// returns how many fall in each dimension.
fn pick_events<R: Rng + ?Sized>(s: &[u64], take: u64, remaining: u64, rng: &mut R) -> Vec<u64> {
    let mut left: Vec<u64> = s.to_vec();
    let mut pool = remaining;
    let mut picked = vec![0; s.len()];
    for _ in 0..take {
        let mut u = rng.random_range(0..pool);
        for (d, l) in left.iter_mut().enumerate() {
            if u < *l {
                *l -= 1;
                picked[d] += 1;
                break;
            }
            u -= *l;
        }
        pool -= 1;
    }
    picked
}

/// Runs [`scud_sample`] `n` times in parallel; run `i` uses its own stream
/// derived from `seed`, so results do not depend on the thread count.
pub fn sample_many<D: Denoiser + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    dims: usize,
    budget: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<SampleOutcome>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, streams::SAMPLE, i as u64);
            scud_sample(process, schedule, denoiser, dims, budget, &mut rng)
        })
        .collect()
}

/// Rates averaged over one time bin, per dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBin {
    /// Bin centre.
    pub t: f64,
    /// Bin average of `beta_t E[-L[x_t][x_t]]` over simulated forward states.
    pub forward_rate: f64,
    /// Observed state changes per unit time along reverse paths.
    pub backward_rate: f64,
    /// Bin average of the event intensity `r beta_t`, shared by both directions.
    pub event_rate: f64,
}

impl RateBin {
    pub fn difference(&self) -> f64 {
        self.backward_rate - self.forward_rate
    }
}

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

const SUB_PANELS: usize = 4;

/// Quadrature nodes and weights averaging over bin `b` of `bins`.
fn bin_nodes(b: usize, bins: usize) -> impl Iterator<Item = (f64, f64)> {
    let h = 1.0 / (bins * SUB_PANELS) as f64;
    (0..SUB_PANELS).flat_map(move |p| {
        let lo = (b * SUB_PANELS + p) as f64 * h;
        GL_NODES.iter().zip(GL_WEIGHTS).map(move |(x, w)| (lo + 0.5 * h * (1.0 + x), 0.5 * w / SUB_PANELS as f64))
    })
}

fn bin_event_rate(process: &EventProcess, schedule: &RateSchedule, b: usize, bins: usize) -> f64 {
    let (lo, hi) = (b as f64 / bins as f64, (b + 1) as f64 / bins as f64);
    process.rate() * (schedule.cumulative(hi) - schedule.cumulative(lo)) * bins as f64
}

/// Exact `beta_t E[-L[x_t][x_t]]` with `x_t ~ p0^T exp(B(t) L)`.
pub fn exact_forward_rate(process: &EventProcess, schedule: &RateSchedule, p0: &[f64], t: f64) -> Result<f64> {
    let law = process.generator_exponential_apply(schedule.cumulative(t), p0)?;
    let exit: f64 = law.iter().enumerate().map(|(x, p)| p * -process.generator_entry(x, x)).sum();
    Ok(schedule.rate(t) * exit)
}

/// [`exact_forward_rate`] averaged over bin `b` of `bins`, with the same
/// quadrature the simulated estimate uses.
pub fn exact_forward_rate_bin(
    process: &EventProcess,
    schedule: &RateSchedule,
    p0: &[f64],
    b: usize,
    bins: usize,
) -> Result<f64> {
    bin_nodes(b, bins).map(|(t, w)| Ok(w * exact_forward_rate(process, schedule, p0, t)?)).sum()
}

fn bin_of(t: f64, bins: usize) -> usize {
    ((t * bins as f64) as usize).min(bins - 1)
}

fn forward_rates<R: Rng + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    data: &[Vec<usize>],
    n_paths: usize,
    bins: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut rates = vec![0.0; bins];
    let mut count = 0usize;
    for i in 0..n_paths {
        let x0 = &data[i % data.len()];
        let path = gillespie_simulate(process, x0, schedule, rng)?;
        for (b, rate) in rates.iter_mut().enumerate() {
            for (t, w) in bin_nodes(b, bins) {
                let exit: f64 = path.state_at(t).iter().map(|&x| -process.generator_entry(x, x)).sum();
                *rate += w * schedule.rate(t) * exit;
            }
        }
        count += x0.len();
    }
    Ok(rates.iter().map(|r| r / count as f64).collect())
}

/// Forward rates from simulated data paths, backward rates from reverse SCUD
/// paths that undo events in time order with one denoiser call per event.
pub fn rate_diagnostic<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    data: &[Vec<usize>],
    n_paths: usize,
    bins: usize,
    rng: &mut R,
) -> Result<Vec<RateBin>> {
    if n_paths == 0 || bins == 0 || data.is_empty() {
        return Err(ScudError::InvalidArgument("need paths, bins and data".into()));
    }
    let dims = data[0].len();
    let forward = forward_rates(process, schedule, data, n_paths, bins, rng)?;
    let pi = process.stationary_distribution()?.to_vec();
    let mut changes = vec![0.0; bins];
    for _ in 0..n_paths {
        let events = sample_event_schedule(schedule, process, dims, rng)?;
        let mut order: Vec<(f64, usize)> =
            events.times.iter().enumerate().flat_map(|(d, ts)| ts.iter().map(move |&t| (t, d))).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut x: Vec<usize> = (0..dims).map(|_| sample_categorical(&pi, rng)).collect();
        let mut s = events.counts.clone();
        for (t, d) in order {
            let pred = denoiser.predict(&x, &s)?;
            let law = backward_from_denoiser(process, pred.row(d), x[d], s[d], 1)?;
            let prev = sample_categorical(&law, rng);
            if prev != x[d] {
                changes[bin_of(t, bins)] += 1.0;
            }
            x[d] = prev;
            s[d] -= 1;
        }
    }
    let norm = (n_paths * dims) as f64 / bins as f64;
    Ok((0..bins)
        .map(|b| {
            let t = (b as f64 + 0.5) / bins as f64;
            RateBin {
                t,
                forward_rate: forward[b],
                backward_rate: changes[b] / norm,
                event_rate: bin_event_rate(process, schedule, b, bins),
            }
        })
        .collect())
}

/// Backward rates of a reversal that ignores the event schedule: a
/// continuous-time chain with rates `beta_t L[b][x] s~_b` from the denoiser's
/// score at the expected counts `round(r B(t))`, stepped with `steps_per_bin`
/// small steps per bin.
#[allow(clippy::too_many_arguments)]
pub fn classical_rate_diagnostic<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    process: &EventProcess,
    schedule: &RateSchedule,
    denoiser: &D,
    data: &[Vec<usize>],
    n_paths: usize,
    bins: usize,
    steps_per_bin: usize,
    rng: &mut R,
) -> Result<Vec<RateBin>> {
    if n_paths == 0 || bins == 0 || data.is_empty() || steps_per_bin == 0 {
        return Err(ScudError::InvalidArgument("need paths, bins, steps and data".into()));
    }
    let n = process.num_states();
    let dims = data[0].len();
    let forward = forward_rates(process, schedule, data, n_paths, bins, rng)?;
    let pi = process.stationary_distribution()?.to_vec();
    let steps = bins * steps_per_bin;
    let dt = 1.0 / steps as f64;
    let mut changes = vec![0.0; bins];
    for _ in 0..n_paths {
        let mut x: Vec<usize> = (0..dims).map(|_| sample_categorical(&pi, rng)).collect();
        for step in (0..steps).rev() {
            let t = (step as f64 + 0.5) * dt;
            let tau = schedule.cumulative(t);
            let beta = schedule.rate(t);
            let counts = vec![(process.rate() * tau).round() as u64; dims];
            let pred = denoiser.predict(&x, &counts)?;
            for d in 0..dims {
                let marginal = process.generator_exponential_apply(tau, pred.row(d))?;
                let here = marginal[x[d]];
                if !(here > 0.0) {
                    continue;
                }
                let rates: Vec<f64> = (0..n)
                    .map(|b| {
                        if b == x[d] {
                            0.0
                        } else {
                            beta * process.generator_entry(b, x[d]) * marginal[b].max(0.0) / here
                        }
                    })
                    .collect();
                let total: f64 = rates.iter().sum();
                if rng.random::<f64>() < (total * dt).min(1.0) {
                    x[d] = sample_categorical(&rates, rng);
                    changes[bin_of(t, bins)] += 1.0;
                }
            }
        }
    }
    let norm = (n_paths * dims) as f64 / bins as f64;
    Ok((0..bins)
        .map(|b| {
            let t = (b as f64 + 0.5) / bins as f64;
            RateBin {
                t,
                forward_rate: forward[b],
                backward_rate: changes[b] / norm,
                event_rate: bin_event_rate(process, schedule, b, bins),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::OracleDenoiser;
    use crate::processes::ProcessSpec;
    use crate::rng::seeded;
    use crate::schedule::fit_schedule;
    use crate::toy_data::ToyDistribution;
    use std::sync::Arc;

    fn two_state(eps: f64) -> (Arc<EventProcess>, RateSchedule, OracleDenoiser) {
        let process = Arc::new(ProcessSpec::Uniform { states: 2 }.build(0.5).unwrap());
        let toy = ToyDistribution::factorized(vec![vec![0.8, 0.2]]).unwrap();
        let schedule = fit_schedule(&process, &[0.8, 0.2], eps).unwrap();
        let oracle = OracleDenoiser::new(toy, process.clone()).unwrap();
        (process, schedule, oracle)
    }

    #[test]
    fn budget_accounting_and_conservation() {
        let (process, schedule, oracle) = two_state(0.01);
        let mut rng = seeded(3);
        for budget in [1, 2, 3, 5, 100] {
            for _ in 0..200 {
                let out = scud_sample(&process, &schedule, &oracle, 1, budget, &mut rng).unwrap();
                let per_round = out.events.div_ceil(budget as u64).max(1);
                let rounds = out.events.div_ceil(per_round) as usize;
                assert_eq!(out.evaluations, rounds.min(budget));
            }
        }
    }

    #[test]
    fn oracle_sampler_recovers_the_data_law() {
        let (process, schedule, oracle) = two_state(1e-6);
        let n = 100_000;
        let samples = sample_many(&process, &schedule, &oracle, 1, 1000, n, 5).unwrap();
        let zeros = samples.iter().filter(|s| s.tokens[0] == 0).count() as f64;
        let sd = (n as f64 * 0.8 * 0.2).sqrt();
        assert!((zeros - 0.8 * n as f64).abs() < 3.0 * sd, "{zeros}");
    }

    #[test]
    fn masking_samples_have_no_mask() {
        let process = Arc::new(ProcessSpec::Masking { states: 4 }.build(1.0).unwrap());
        let schedule = RateSchedule::masking_closed_form(1e-6).unwrap();
        let toy = ToyDistribution::correlated_pair(3, 0.5).unwrap();
        let oracle = OracleDenoiser::new(toy, process.clone()).unwrap();
        for budget in [1, 2, 10] {
            let samples = sample_many(&process, &schedule, &oracle, 2, budget, 300, 1).unwrap();
            assert!(samples.iter().all(|s| s.tokens.iter().all(|&x| x < 3)));
        }
    }

    #[test]
    fn sample_many_is_reproducible() {
        let (process, schedule, oracle) = two_state(0.01);
        let a = sample_many(&process, &schedule, &oracle, 1, 4, 50, 9).unwrap();
        let b = sample_many(&process, &schedule, &oracle, 1, 4, 50, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rates_match_exact_marginals() {
        let process = Arc::new(ProcessSpec::Uniform { states: 3 }.build(1.0).unwrap());
        let toy = ToyDistribution::factorized(vec![vec![0.7, 0.2, 0.1]]).unwrap();
        let schedule = fit_schedule(&process, &[0.7, 0.2, 0.1], 0.01).unwrap();
        let oracle = OracleDenoiser::new(toy, process.clone()).unwrap();
        let data = vec![vec![0], vec![0], vec![0], vec![0], vec![0], vec![0], vec![0], vec![1], vec![1], vec![2]];
        let bins = rate_diagnostic(&process, &schedule, &oracle, &data, 4000, 8, &mut seeded(4)).unwrap();
        for (b, bin) in bins.iter().enumerate() {
            let exact = exact_forward_rate_bin(&process, &schedule, &[0.7, 0.2, 0.1], b, 8).unwrap();
            // Uniform exit rates make the forward estimate exact.
            assert!((bin.forward_rate - exact).abs() < 1e-9 * exact.max(1.0));
            let averaged: f64 = bin_nodes(b, 8).map(|(t, w)| w * process.rate() * schedule.rate(t)).sum();
            assert!((bin.event_rate - averaged).abs() < 1e-6 * averaged, "{} vs {averaged}", bin.event_rate);
        }
    }
}

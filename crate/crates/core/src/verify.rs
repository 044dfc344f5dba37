//! Self-check suite behind the `verify` command.
//!
//! Each check compares an observed figure with a threshold and reports both.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::ctmc::{sample_categorical, EventProcess, GeneratorMatrix};
use crate::denoiser::{Denoiser, DenoiserOutput, EventIndicator, FixedDenoiser, MixedDenoiser, OracleDenoiser};
use crate::error::Result;
use crate::io::MatrixFile;
use crate::linalg;
use crate::loss::{
    event_kl, event_weight, exact_expected_loss, integrate_graded, masking_objective_term, posterior_prev,
    scud_denoising_exact_at, sedd_loss_exact_at,
};
use crate::poisson::poisson_pmf;
use crate::processes::{
    build_sparse_graph, mask_state, ring_similarity, synthetic_pair_table, GaussianForm, ProcessSpec, SparseGraphSpec,
};
use crate::rng::{stream_rng, streams};
use crate::schedule::{fit_schedule, sample_poisson, RateSchedule};
use crate::toy_data::ToyDistribution;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    /// Bound the observed figure must satisfy.
    pub expected: String,
    pub passed: bool,
}

impl Check {
    fn below(name: &str, observed: f64, bound: f64) -> Self {
        Self { name: name.into(), observed, expected: format!("< {bound:e}"), passed: observed < bound }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: observed {:e}, expected {}", self.name, self.observed, self.expected)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// Random irreducible generator with off-diagonal rates in `[0, 1)` plus a
/// cycle of rate 0.2.
pub fn random_generator<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<GeneratorMatrix> {
    GeneratorMatrix::from_off_diagonal(size, |i, j| rng.random::<f64>() + if j == (i + 1) % size { 0.2 } else { 0.0 })
}

/// `exp(tau L)` by Taylor series with scaling and squaring.
pub fn expm_dense(size: usize, generator: &[f64], tau: f64) -> Vec<f64> {
    let norm = generator.chunks(size).map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max) * tau;
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = tau / 2f64.powi(squarings);
    let a: Vec<f64> = generator.iter().map(|x| x * scale).collect();
    let mut result = linalg::identity(size);
    let mut term = linalg::identity(size);
    for k in 1..=30 {
        term = linalg::mat_mul(&term, &a, size);
        term.iter_mut().for_each(|x| *x /= k as f64);
        result.iter_mut().zip(&term).for_each(|(r, t)| *r += t);
    }
    for _ in 0..squarings {
        result = linalg::mat_mul(&result, &result, size);
    }
    result
}

/// Largest `|r (K - I) - L|` entry.
pub fn reconstruction_error(process: &EventProcess, generator: &GeneratorMatrix) -> f64 {
    let n = generator.size();
    let r = process.rate();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((r * (process.kernel().get(i, j) - id) - generator.get(i, j)).abs());
        }
    }
    worst
}

/// Largest deviation of a row sum from one, or of a negative entry from zero.
pub fn stochasticity_error(size: usize, entries: &[f64]) -> f64 {
    entries
        .chunks(size)
        .map(|row| {
            let neg = row.iter().fold(0.0f64, |m, &x| m.max(-x));
            (row.iter().sum::<f64>() - 1.0).abs().max(neg)
        })
        .fold(0.0, f64::max)
}

/// Previous-state posterior by brute force: `p(pr | x0, s - 1) K[pr][x_t]`, normalised,
/// using explicit dense powers.
pub fn posterior_by_enumeration(process: &EventProcess, x0: usize, x_t: usize, s: u64) -> Vec<f64> {
    let n = process.num_states();
    let k = process.kernel().densify();
    let mut law = linalg::one_hot(n, x0);
    for _ in 1..s {
        law = linalg::row_times(&law, &k, n);
    }
    let joint: Vec<f64> = (0..n).map(|pr| law[pr] * k[pr * n + x_t]).collect();
    let z: f64 = joint.iter().sum();
    joint.iter().map(|x| x / z).collect()
}

/// Largest gap between the two-dimensional joint posterior of the previous
/// states, computed on the product chain `K (x) K`, and the product of the
/// per-dimension posteriors.
pub fn factorization_error(process: &EventProcess) -> Result<f64> {
    let n = process.num_states();
    let k = process.kernel().densify();
    let power = |s: u64| -> Vec<f64> {
        let mut m = linalg::identity(n);
        for _ in 0..s {
            m = linalg::mat_mul(&m, &k, n);
        }
        m
    };
    let kron = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let nn = n * n;
        let mut out = vec![0.0; nn * nn];
        for (i0, i1, j0, j1) in (0..n)
            .flat_map(|i0| (0..n).flat_map(move |i1| (0..n).flat_map(move |j0| (0..n).map(move |j1| (i0, i1, j0, j1)))))
        {
            out[(i0 * n + i1) * nn + j0 * n + j1] = a[i0 * n + j0] * b[i1 * n + j1];
        }
        out
    };
    let step = kron(&k, &k);
    let mut worst = 0.0f64;
    for s0 in 1..=3u64 {
        for s1 in 1..=3u64 {
            let before = kron(&power(s0 - 1), &power(s1 - 1));
            for x0 in 0..n * n {
                for xt in 0..n * n {
                    let joint: Vec<f64> =
                        (0..n * n).map(|pr| before[x0 * n * n + pr] * step[pr * n * n + xt]).collect();
                    let z: f64 = joint.iter().sum();
                    if z <= 0.0 {
                        continue;
                    }
                    let p0 = posterior_prev(process, xt / n, x0 / n, s0)?;
                    let p1 = posterior_prev(process, xt % n, x0 % n, s1)?;
                    for pr in 0..n * n {
                        worst = worst.max((joint[pr] / z - p0[pr / n] * p1[pr % n]).abs());
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Shared pieces for pairing SCUD with the all-`1/B` kernel against masking.
pub struct MaskingPair {
    pub toy: ToyDistribution,
    /// Uniform process at `gamma = 1 - 1/B`, so `K` is all `1/B` and `r = 1`.
    pub uniform: Arc<EventProcess>,
    pub masking: Arc<EventProcess>,
    pub schedule: RateSchedule,
    pub scud_denoiser: EventIndicator<OracleDenoiser>,
    pub masking_denoiser: OracleDenoiser,
}

impl MaskingPair {
    pub fn new(toy: ToyDistribution, epsilon: f64) -> Result<Self> {
        let b = toy.num_states();
        let uniform = Arc::new(ProcessSpec::Uniform { states: b }.build(1.0 - 1.0 / b as f64)?);
        let masking = Arc::new(ProcessSpec::Masking { states: b + 1 }.build(1.0)?);
        let schedule = RateSchedule::masking_closed_form(epsilon)?;
        Ok(Self {
            scud_denoiser: EventIndicator(OracleDenoiser::new(toy.clone(), uniform.clone())?),
            masking_denoiser: OracleDenoiser::new(toy.clone(), masking.clone())?,
            toy,
            uniform,
            masking,
            schedule,
        })
    }

    /// One paired draw at time `t`: the SCUD denoising term, with each
    /// event count averaged over its law given at least one event, and the
    /// masking term on the mask `s >= 1`. Both in nats per dimension.
    pub fn paired_terms<R: Rng + ?Sized>(&self, x0: &[usize], t: f64, rng: &mut R) -> Result<(f64, f64)> {
        let b = self.toy.num_states();
        let tau = self.schedule.cumulative(t);
        let s: Vec<u64> = x0.iter().map(|_| sample_poisson(tau, rng)).collect();
        let uniform_row = vec![1.0 / b as f64; b];
        let x_t: Vec<usize> =
            x0.iter().zip(&s).map(|(&x, &k)| if k == 0 { x } else { sample_categorical(&uniform_row, rng) }).collect();
        let mask: Vec<bool> = s.iter().map(|&k| k > 0).collect();
        let masking = masking_objective_term(&self.schedule, &self.masking_denoiser, x0, &mask, mask_state(b + 1), t)?;

        let mut scud = 0.0;
        if mask.iter().any(|&m| m) {
            let pred = self.scud_denoiser.predict(&x_t, &s)?;
            let hit = -(-tau).exp_m1();
            for d in (0..x0.len()).filter(|&d| mask[d]) {
                let mut k = 1u64;
                loop {
                    let p = poisson_pmf(tau, k) / hit;
                    if p < 1e-18 && (k as f64) > tau {
                        break;
                    }
                    if p > 0.0 {
                        scud += p
                            * event_weight(&self.schedule, t, k)
                            * event_kl(&self.uniform, x0[d], x_t[d], k, pred.row(d))?;
                    }
                    k += 1;
                }
            }
        }
        Ok((scud / x0.len() as f64, masking))
    }
}

const GRADED_LEVELS: u32 = 24;

/// Exact SCUD and score-entropy denoising losses on a single dimension with a
/// fixed prediction, integrated over `t`.
pub fn sedd_gap(gamma: f64, prediction: &[f64], x0: usize) -> Result<(f64, f64)> {
    let b = prediction.len();
    let process = ProcessSpec::Uniform { states: b }.build(gamma)?;
    let schedule = RateSchedule::masking_closed_form(0.01)?;
    let fixed = FixedDenoiser::new(DenoiserOutput::new(b, prediction.to_vec())?);
    let scud = integrate_graded(GRADED_LEVELS, 2, |t| scud_denoising_exact_at(&process, &schedule, &fixed, x0, t))?;
    let sedd = integrate_graded(GRADED_LEVELS, 2, |t| sedd_loss_exact_at(&process, &schedule, &fixed, x0, t))?;
    Ok((scud, sedd))
}

/// Kernels checked for stochasticity by default.
pub fn default_kernels() -> Result<Vec<(String, MatrixFile)>> {
    let f = 12;
    let graph = SparseGraphSpec {
        vocabulary: 30,
        similarities: ring_similarity(f),
        neighbours: 4,
        temperature: 0.3,
        mix_weight: 0.4,
        frequencies: vec![1.0 / f as f64; f],
    };
    let specs = vec![
        ("uniform", ProcessSpec::Uniform { states: 6 }),
        ("masking", ProcessSpec::Masking { states: 6 }),
        ("gaussian", ProcessSpec::GaussianBand { states: 16, bandwidth: 200.0, form: GaussianForm::Normalized }),
        (
            "blosum",
            ProcessSpec::Blosum { pair_probs: synthetic_pair_table(), marginals: None, canonical: vec![true; 8] },
        ),
        ("graph", ProcessSpec::SparseGraph(graph.clone())),
    ];
    let mut out = Vec::new();
    for (name, spec) in specs {
        for gamma in [0.3, 1.0] {
            out.push((format!("{name} gamma={gamma}"), MatrixFile::from_kernel(&spec.build(gamma)?)));
        }
    }
    // The sparse generator itself must be a valid generator when densified.
    let _ = GeneratorMatrix::new(30, build_sparse_graph(&graph)?.densify())?;
    Ok(out)
}

pub fn run_verify() -> Result<VerifyReport> {
    run_verify_with_kernels(&default_kernels()?)
}

/// Runs every check, with `kernels` as the stochasticity targets.
pub fn run_verify_with_kernels(kernels: &[(String, MatrixFile)]) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut rng = stream_rng(0, streams::VERIFY, 0);

    let mut worst = 0.0f64;
    for _ in 0..30 {
        let n = rng.random_range(2..=24);
        let g = random_generator(n, &mut rng)?;
        let gamma = rng.random_range(0.01..=1.0);
        worst = worst.max(reconstruction_error(&EventProcess::from_generator(&g, gamma)?, &g));
    }
    checks.push(Check::below("generator reconstruction r(K - I) = L", worst, 1e-12));

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(2..=8);
        let g = random_generator(n, &mut rng)?;
        let p = EventProcess::from_generator(&g, rng.random_range(0.05..=1.0))?;
        let tau = rng.random_range(0.0..5.0);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        linalg::normalize(&mut v);
        let got = p.generator_exponential_apply(tau, &v)?;
        let want = linalg::row_times(&v, &expm_dense(n, g.entries(), tau), n);
        worst = worst.max(linalg::max_abs_diff(&got, &want));
    }
    checks.push(Check::below("uniformization matches exp(tau L)", worst, 1e-8));

    for (name, m) in kernels {
        let err = stochasticity_error(m.size(), &m.densify());
        checks.push(Check::below(&format!("kernel stochasticity ({name})"), err, 1e-10));
    }

    let mut worst = 0.0f64;
    for spec in [
        ProcessSpec::Uniform { states: 3 },
        ProcessSpec::Masking { states: 3 },
        ProcessSpec::GaussianBand { states: 3, bandwidth: 2.0, form: GaussianForm::Normalized },
    ] {
        let p = spec.build(0.7)?;
        for (x0, x_t, s) in (0..3).flat_map(|a| (0..3).flat_map(move |b| (1..=4u64).map(move |s| (a, b, s)))) {
            if p.transition_row(x0, s)[x_t] <= 0.0 {
                continue;
            }
            let got = posterior_prev(&p, x_t, x0, s)?;
            worst = worst.max(linalg::max_abs_diff(&got, &posterior_by_enumeration(&p, x0, x_t, s)));
        }
    }
    checks.push(Check::below("single-event posterior vs enumeration", worst, 1e-12));

    let gauss = ProcessSpec::GaussianBand { states: 3, bandwidth: 2.0, form: GaussianForm::Normalized }.build(0.6)?;
    checks.push(Check::below("posterior factorises over dimensions", factorization_error(&gauss)?, 1e-12));

    let toy = ToyDistribution::correlated_pair(3, 0.7)?;
    let process = Arc::new(ProcessSpec::Uniform { states: 3 }.build(0.5)?);
    let schedule = fit_schedule(&process, &[1.0 / 3.0; 3], 0.01)?;
    let data = toy.enumerate()?;
    let oracle = OracleDenoiser::new(toy.clone(), process.clone())?;
    let best = exact_expected_loss(&process, &schedule, &oracle, &data)?.total;
    let mixed = exact_expected_loss(&process, &schedule, &MixedDenoiser { inner: &oracle, mix: 0.1 }, &data)?.total;
    checks.push(Check {
        name: "oracle beats a perturbed oracle".into(),
        observed: mixed - best,
        expected: "> 0".into(),
        passed: mixed > best,
    });

    let pair = MaskingPair::new(toy.clone(), 0.01)?;
    let mut worst = 0.0f64;
    for i in 0..500 {
        let t = (i as f64 + rng.random::<f64>()) / 500.0;
        let x0 = toy.sample(&mut rng);
        let (scud, masking) = pair.paired_terms(&x0, t, &mut rng)?;
        worst = worst.max((scud - masking).abs());
    }
    checks.push(Check::below("all-1/B SCUD equals masking per paired draw", worst, 1e-10));

    let (scud, sedd) = sedd_gap(1e-3, &[0.6, 0.4], 0)?;
    checks.push(Check::below(
        "SCUD approaches score entropy at gamma = 1e-3 (relative)",
        ((scud - sedd) / sedd).abs(),
        1e-2,
    ));

    let uniform4 = ProcessSpec::Uniform { states: 4 }.build(1.0)?;
    let schedule = fit_schedule(&uniform4, &[0.4, 0.3, 0.2, 0.1], 0.01)?;
    let mut worst = 0.0f64;
    for i in 0..=64 {
        let t = i as f64 / 64.0;
        let b = schedule.cumulative(t);
        worst = worst.max((schedule.expected_mi(b) - (1.0 - 0.99 * t)).abs());
        worst = worst.max((schedule.time_at_cumulative(b) - t).abs());
    }
    checks.push(Check::below("schedule round trip", worst, 1e-8));

    let masking = ProcessSpec::Masking { states: 5 }.build(1.0)?;
    let fitted = fit_schedule(&masking, &[0.25, 0.25, 0.25, 0.25, 0.0], 0.01)?;
    let worst = (0..512)
        .map(|i| {
            let t = i as f64 / 511.0;
            (fitted.cumulative(t) + (1.0 - 0.99 * t).ln()).abs()
        })
        .fold(0.0, f64::max);
    checks.push(Check::below("masking schedule closed form", worst, 1e-6));

    let two = Arc::new(ProcessSpec::Uniform { states: 2 }.build(0.5)?);
    let schedule = fit_schedule(&two, &[0.5, 0.5], 0.01)?;
    let oracle = OracleDenoiser::new(ToyDistribution::uniform(2, 1)?, two.clone())?;
    let exact = exact_expected_loss(&two, &schedule, &oracle, &[(vec![0], 0.5), (vec![1], 0.5)])?;
    checks.push(Check::below("two-state loss equals log 2", (exact.total - std::f64::consts::LN_2).abs(), 1e-9));

    Ok(VerifyReport { checks })
}

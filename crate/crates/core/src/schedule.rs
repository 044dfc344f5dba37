//! Rate schedules from mutual information, and Poisson event schedules.
//!
//! The schedule is a time change `t -> B(t)` from modulated time `[0, 1]` into
//! process time. It is chosen so that the expected normalised mutual
//! information between `x_0` and `x_t`, given the number of events `s_t`,
//! falls linearly: `E MI_{s_t} = 1 - (1 - eps) t` with `s_t ~ Pois(r B(t))`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::ctmc::EventProcess;
use crate::error::{Result, ScudError};
use crate::linalg;
use crate::poisson::PoissonWeights;
use crate::tolerances::TOLERANCES;

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_GRID: usize = 1024;

/// Normalised mutual information of `p0(b) (K^m)[b][b']`; one at `m = 0`.
pub fn event_mutual_information(process: &EventProcess, p0: &[f64], m: u64) -> Result<f64> {
    let n = process.num_states();
    check_distribution(p0, n)?;
    if m == 0 {
        return Ok(1.0);
    }
    let rows: Vec<Vec<f64>> =
        (0..n).map(|b| if p0[b] > 0.0 { process.transition_row(b, m) } else { vec![0.0; n] }).collect();
    Ok(normalised_mi(p0, &rows))
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// `I(x0; x) / H(x0)` for the joint `p0(b) rows[b][b']`.
pub(crate) fn normalised_mi(p0: &[f64], rows: &[Vec<f64>]) -> f64 {
    let h = entropy(p0);
    if h <= 0.0 {
        return 0.0;
    }
    let n = p0.len();
    let mut marginal = vec![0.0; n];
    for (b, row) in rows.iter().enumerate() {
        for (q, x) in marginal.iter_mut().zip(row) {
            *q += p0[b] * x;
        }
    }
    let mut mi = 0.0;
    for (b, row) in rows.iter().enumerate() {
        if p0[b] == 0.0 {
            continue;
        }
        for (j, &x) in row.iter().enumerate() {
            if x > 0.0 && marginal[j] > 0.0 {
                mi += p0[b] * x * (x / marginal[j]).ln();
            }
        }
    }
    (mi / h).clamp(0.0, 1.0)
}

fn check_distribution(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(ScudError::Shape(format!("distribution of length {} for {n} states", p.len())));
    }
    let total: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(ScudError::InvalidArgument("expected a probability vector".into()));
    }
    Ok(())
}

/// Per-event mutual information `MI_m`, computed until it falls below the
/// floor; later values are taken as the last computed one.
#[derive(Debug, Clone)]
struct MiCurve {
    rate: f64,
    values: Vec<f64>,
}

impl MiCurve {
    fn compute(process: &EventProcess, p0: &[f64], epsilon: f64) -> Result<Self> {
        let n = process.num_states();
        check_distribution(p0, n)?;
        if entropy(p0) <= 0.0 {
            return Err(ScudError::Degenerate("data distribution has zero entropy".into()));
        }
        // Work budget for the rows of K^m.
        let limit = (2.0e9 / (n * n * n).max(1) as f64).clamp(1e3, 2.0e6) as usize;
        let mut rows: Vec<Vec<f64>> = (0..n).map(|b| linalg::one_hot(n, b)).collect();
        let mut values = vec![1.0];
        while values.len() <= limit {
            for row in rows.iter_mut() {
                *row = process.kernel().apply_left(row);
                for x in row.iter_mut() {
                    if *x < 0.0 {
                        *x = 0.0;
                    }
                }
            }
            let mi = normalised_mi(p0, &rows);
            values.push(mi);
            if mi < TOLERANCES.mi_floor {
                break;
            }
        }
        let last = *values.last().expect("non-empty");
        if last >= epsilon {
            return Err(ScudError::Degenerate(format!(
                "per-event mutual information stalls at {last:.3e} above the terminal level {epsilon}; \
                 the kernel may be periodic or reducible"
            )));
        }
        Ok(Self { rate: process.rate(), values })
    }

    fn value(&self, m: usize) -> f64 {
        *self.values.get(m).unwrap_or_else(|| self.values.last().expect("non-empty"))
    }

    /// `E MI_s` and its derivative in process time, `s ~ Pois(r tau)`.
    fn expected(&self, tau: f64) -> (f64, f64) {
        let weights = PoissonWeights::new(self.rate * tau);
        let mut f = 0.0;
        let mut df = 0.0;
        for (m, w) in weights.iter() {
            let here = self.value(m);
            f += w * here;
            df += w * (self.value(m + 1) - here);
        }
        // Mass beyond the truncation sits at the tail value.
        f += (1.0 - weights.total()) * self.value(weights.end());
        (f, self.rate * df)
    }
}

/// The time change `B(t)` and its derivative `beta_t`.
#[derive(Debug, Clone)]
pub struct RateSchedule {
    epsilon: f64,
    kind: ScheduleKind,
}

#[derive(Debug, Clone)]
enum ScheduleKind {
    /// `E MI = exp(-tau)`: `B(t) = -ln(1 - (1 - eps) t)`.
    Masking,
    Tabulated(Arc<Tabulated>),
}

#[derive(Debug)]
struct Tabulated {
    curve: MiCurve,
    /// Process time at `t = i / (len - 1)`.
    grid: Vec<f64>,
}

impl RateSchedule {
    /// Closed-form schedule whose expected information is `exp(-B(t))`, as for
    /// masking (or any kernel that forgets `x_0` after a single event at `r = 1`).
    pub fn masking_closed_form(epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self { epsilon, kind: ScheduleKind::Masking })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn target(&self, t: f64) -> f64 {
        1.0 - (1.0 - self.epsilon) * t
    }

    /// `B(t)`, process time elapsed by modulated time `t`.
    pub fn cumulative(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match &self.kind {
            ScheduleKind::Masking => -(-(1.0 - self.epsilon) * t).ln_1p(),
            ScheduleKind::Tabulated(tab) => {
                if t == 0.0 {
                    return 0.0;
                }
                let intervals = tab.grid.len() - 1;
                let pos = t * intervals as f64;
                let i = (pos.floor() as usize).min(intervals - 1);
                let (lo, hi) = (tab.grid[i], tab.grid[i + 1]);
                let frac = pos - i as f64;
                if frac == 0.0 {
                    return lo;
                }
                let start = lo + frac * (hi - lo);
                solve_expected_mi(&tab.curve, self.target(t), lo, hi, start).unwrap_or(start)
            }
        }
    }

    /// `beta_t = dB/dt`.
    pub fn rate(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match &self.kind {
            ScheduleKind::Masking => (1.0 - self.epsilon) / (1.0 - (1.0 - self.epsilon) * t),
            ScheduleKind::Tabulated(tab) => {
                let tau = self.cumulative(t);
                let (_, slope) = tab.curve.expected(tau);
                // Implicit function theorem on E MI(B(t)) = 1 - (1 - eps) t.
                -(1.0 - self.epsilon) / slope
            }
        }
    }

    /// Expected conditional mutual information after process time `tau`.
    pub fn expected_mi(&self, tau: f64) -> f64 {
        match &self.kind {
            ScheduleKind::Masking => (-tau).exp(),
            ScheduleKind::Tabulated(tab) => tab.curve.expected(tau).0,
        }
    }

    /// Inverse of `B`: the modulated time at which process time `u` is reached.
    pub fn time_at_cumulative(&self, u: f64) -> f64 {
        let t = (1.0 - self.expected_mi(u)) / (1.0 - self.epsilon);
        t.clamp(0.0, 1.0)
    }

    /// `B(1)`.
    pub fn horizon(&self) -> f64 {
        match &self.kind {
            ScheduleKind::Masking => self.cumulative(1.0),
            ScheduleKind::Tabulated(tab) => *tab.grid.last().expect("non-empty grid"),
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 0.2) {
        return Err(ScudError::InvalidArgument(format!("epsilon must lie in (0, 0.2], got {epsilon}")));
    }
    Ok(())
}

/// Newton on `E MI(tau) = target` inside the bracket `[lo, hi]`, switching to
/// bisection if Newton has not converged after the iteration cap.
fn solve_expected_mi(curve: &MiCurve, target: f64, lo: f64, hi: f64, start: f64) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let mut tau = start.clamp(lo, hi);
    for _ in 0..TOLERANCES.newton_max_iterations {
        let (f, df) = curve.expected(tau);
        let g = f - target;
        if g.abs() <= TOLERANCES.newton_residual {
            return Ok(tau);
        }
        // E MI is non-increasing: g > 0 means the root lies to the right.
        if g > 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        let step = if df < 0.0 { tau - g / df } else { f64::NAN };
        tau = if step.is_finite() && step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * hi.max(1.0) {
            return Ok(tau);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (f, _) = curve.expected(mid);
        if (f - target).abs() <= TOLERANCES.newton_residual || hi - lo <= 1e-15 * hi.max(1.0) {
            return Ok(mid);
        }
        if f > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(ScudError::NonConvergence {
        what: "schedule root find".into(),
        iterations: TOLERANCES.newton_max_iterations + 200,
    })
}

/// Fits the rate schedule for `process` and data frequencies `p0` on the
/// default grid.
pub fn fit_schedule(process: &EventProcess, p0: &[f64], epsilon: f64) -> Result<RateSchedule> {
    fit_schedule_on_grid(process, p0, epsilon, DEFAULT_GRID)
}

/// Fits the schedule, solving for `B(t)` at `intervals + 1` grid points; each
/// solve starts from the previous grid point's solution.
pub fn fit_schedule_on_grid(
    process: &EventProcess,
    p0: &[f64],
    epsilon: f64,
    intervals: usize,
) -> Result<RateSchedule> {
    check_epsilon(epsilon)?;
    if intervals < 1 {
        return Err(ScudError::InvalidArgument("schedule grid needs at least one interval".into()));
    }
    let curve = MiCurve::compute(process, p0, epsilon)?;
    let mut grid = Vec::with_capacity(intervals + 1);
    grid.push(0.0);
    let mut previous: f64 = 0.0;
    for i in 1..=intervals {
        let t = i as f64 / intervals as f64;
        let target = 1.0 - (1.0 - epsilon) * t;
        // Bracket the root by doubling from the previous solution.
        let mut hi = if previous > 0.0 { 2.0 * previous } else { 1.0 / process.rate() };
        let mut expansions = 0;
        while curve.expected(hi).0 > target {
            hi *= 2.0;
            expansions += 1;
            if expansions > 200 || !hi.is_finite() {
                return Err(ScudError::NonConvergence {
                    what: "schedule bracket (mutual information curve too flat)".into(),
                    iterations: expansions,
                });
            }
        }
        let tau = solve_expected_mi(&curve, target, previous, hi, previous.max(hi * 0.5))?;
        grid.push(tau);
        previous = tau;
    }
    Ok(RateSchedule { epsilon, kind: ScheduleKind::Tabulated(Arc::new(Tabulated { curve, grid })) })
}

/// Event times per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSchedule {
    pub counts: Vec<u64>,
    /// Sorted modulated times in `[0, 1]`, one list per dimension.
    pub times: Vec<Vec<f64>>,
}

/// Draws `s_1 ~ Pois(r B(1))` per dimension and places the events i.i.d. with
/// density proportional to `beta_t`.
pub fn sample_event_schedule<R: Rng + ?Sized>(
    schedule: &RateSchedule,
    process: &EventProcess,
    dims: usize,
    rng: &mut R,
) -> Result<EventSchedule> {
    if dims == 0 {
        return Err(ScudError::InvalidArgument("need at least one dimension".into()));
    }
    let horizon = schedule.horizon();
    let mean = process.rate() * horizon;
    let mut counts = Vec::with_capacity(dims);
    let mut times = Vec::with_capacity(dims);
    for _ in 0..dims {
        let count = sample_poisson(mean, rng);
        let mut ts: Vec<f64> = (0..count).map(|_| schedule.time_at_cumulative(rng.random::<f64>() * horizon)).collect();
        ts.sort_by(f64::total_cmp);
        counts.push(count);
        times.push(ts);
    }
    Ok(EventSchedule { counts, times })
}

/// Number of events at or before `t` in each dimension.
pub fn counts_at(schedule: &EventSchedule, t: f64) -> Vec<u64> {
    schedule.times.iter().map(|ts| ts.partition_point(|&x| x <= t) as u64).collect()
}

/// Poisson draw that tolerates a zero mean.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive finite Poisson mean");
    dist.sample(rng) as u64
}

//! Structured forward processes.

use crate::ctmc::{EventProcess, GeneratorMatrix, SparseRankOne};
use crate::error::{Result, ScudError};
use crate::tolerances::TOLERANCES;

/// Uniform process: every other state at rate `1/B`.
pub fn build_uniform(states: usize) -> Result<GeneratorMatrix> {
    check_states(states)?;
    let rate = 1.0 / states as f64;
    GeneratorMatrix::from_off_diagonal(states, |_, _| rate)
}

/// Index of the absorbing mask state in a masking vocabulary of size `states`.
pub fn mask_state(states: usize) -> usize {
    states - 1
}

/// Masking process: every state moves to the last state at rate one.
pub fn build_masking(states: usize) -> Result<GeneratorMatrix> {
    check_states(states)?;
    let mask = mask_state(states);
    GeneratorMatrix::from_off_diagonal(states, |i, j| if j == mask && i != mask { 1.0 } else { 0.0 })
}

/// How the squared state distance enters the Gaussian exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaussianForm {
    /// `exp(-bandwidth ((i - j) / B)^2)`.
    #[default]
    Normalized,
    /// `exp(-bandwidth (i - j)^2 / B)`.
    Raw,
}

pub const DEFAULT_BANDWIDTH: f64 = 200.0;

/// Gaussian-band process on ordered states.
pub fn build_gaussian_band(states: usize, bandwidth: f64, form: GaussianForm) -> Result<GeneratorMatrix> {
    check_states(states)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(ScudError::InvalidArgument(format!("bandwidth {bandwidth}")));
    }
    let b = states as f64;
    GeneratorMatrix::from_off_diagonal(states, |i, j| {
        let d = i as f64 - j as f64;
        match form {
            GaussianForm::Normalized => (-bandwidth * (d / b).powi(2)).exp(),
            GaussianForm::Raw => (-bandwidth * d * d / b).exp(),
        }
    })
}

fn check_states(states: usize) -> Result<()> {
    if states < 2 {
        return Err(ScudError::InvalidArgument(format!("need at least two states, got {states}")));
    }
    Ok(())
}

/// Substitution process built from a symmetric pair-probability table.
#[derive(Debug, Clone)]
pub struct BlosumProcess {
    states: usize,
    /// Row-major `B x B` stochastic kernel.
    pub kernel: Vec<f64>,
    /// `L = K - I`.
    pub generator: GeneratorMatrix,
    /// Canonical marginals, zero on non-canonical states.
    pub marginals: Vec<f64>,
    pub canonical: Vec<bool>,
    /// `2 ln(P_ij / (P_i P_j))` over canonical states.
    pub log_odds: Vec<f64>,
}

impl BlosumProcess {
    pub fn num_states(&self) -> usize {
        self.states
    }

    /// Event process that fires at rate one with kernel `K`.
    pub fn event_process(&self) -> Result<EventProcess> {
        EventProcess::from_dense_kernel(self.states, self.kernel.clone(), 1.0)
    }
}

/// Builds `K[i][j] = exp(B_ij / 2) P_j = P_{j|i}` on canonical states and
/// `K[i][j] = P_j` from non-canonical ones.
///
/// `pair_probs` is `C x C` over the canonical states in vocabulary order, where
/// `C` is the number of `true` entries of `canonical`. When `marginals` is given
/// it must agree with the row sums of `pair_probs`.
pub fn build_blosum(pair_probs: &[f64], marginals: Option<&[f64]>, canonical: &[bool]) -> Result<BlosumProcess> {
    let states = canonical.len();
    let index: Vec<usize> = (0..states).filter(|&i| canonical[i]).collect();
    let c = index.len();
    if c < 2 {
        return Err(ScudError::InvalidArgument("need at least two canonical states".into()));
    }
    if pair_probs.len() != c * c {
        return Err(ScudError::Shape(format!("pair table has {} entries for {c} canonical states", pair_probs.len())));
    }
    let total: f64 = pair_probs.iter().sum();
    if pair_probs.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > TOLERANCES.symmetry {
        return Err(ScudError::InvalidArgument(format!(
            "pair probabilities must be non-negative with unit mass, total {total}"
        )));
    }
    for i in 0..c {
        for j in (i + 1)..c {
            let (a, b) = (pair_probs[i * c + j], pair_probs[j * c + i]);
            if (a - b).abs() > TOLERANCES.symmetry {
                return Err(ScudError::InvalidArgument(format!("pair table asymmetric at ({i}, {j}): {a} vs {b}")));
            }
        }
    }
    let canon_marg: Vec<f64> = (0..c).map(|i| pair_probs[i * c..(i + 1) * c].iter().sum()).collect();
    if canon_marg.iter().any(|&p| p <= 0.0) {
        return Err(ScudError::InvalidArgument("canonical marginals must be positive".into()));
    }
    if let Some(m) = marginals {
        if m.len() != c {
            return Err(ScudError::Shape(format!("{} marginals for {c} canonical states", m.len())));
        }
        if let Some(i) = (0..c).find(|&i| (m[i] - canon_marg[i]).abs() > TOLERANCES.symmetry) {
            return Err(ScudError::InvalidArgument(format!(
                "marginal {i} = {} disagrees with the pair table ({})",
                m[i], canon_marg[i]
            )));
        }
    }
    let mut log_odds = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let pij = pair_probs[i * c + j];
            log_odds[i * c + j] =
                if pij > 0.0 { 2.0 * (pij / (canon_marg[i] * canon_marg[j])).ln() } else { f64::NEG_INFINITY };
        }
    }
    let mut marg = vec![0.0; states];
    for (k, &i) in index.iter().enumerate() {
        marg[i] = canon_marg[k];
    }
    let mut kernel = vec![0.0; states * states];
    for i in 0..states {
        let row = &mut kernel[i * states..(i + 1) * states];
        match index.iter().position(|&x| x == i) {
            Some(ci) => {
                for (cj, &j) in index.iter().enumerate() {
                    row[j] = (log_odds[ci * c + cj] / 2.0).exp() * canon_marg[cj];
                }
            }
            None => {
                for &j in &index {
                    row[j] = marg[j];
                }
            }
        }
        let sum: f64 = row.iter().sum();
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    let mut l = kernel.clone();
    for b in 0..states {
        l[b * states + b] -= 1.0;
    }
    let generator = GeneratorMatrix::new(states, l)?;
    Ok(BlosumProcess { states, kernel, generator, marginals: marg, canonical: canonical.to_vec(), log_odds })
}

/// Synthetic 8-letter pair table: letters in two groups of four substitute
/// mostly within their group. Returns the symmetric `8 x 8` table.
pub fn synthetic_pair_table() -> Vec<f64> {
    let n = 8;
    let weights = [1.6, 1.2, 1.0, 0.8, 1.4, 1.1, 0.9, 0.7];
    let mut table = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let affinity = if i == j {
                6.0
            } else if i / 4 == j / 4 {
                1.5
            } else {
                0.25
            };
            table[i * n + j] = affinity * weights[i] * weights[j];
        }
    }
    let total: f64 = table.iter().sum();
    table.iter_mut().for_each(|x| *x /= total);
    table
}

/// Inputs for the nearest-neighbour graph process.
///
/// The first `frequencies.len()` states of the vocabulary are the frequent
/// subset; `similarities` is a dense similarity matrix over that subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraphSpec {
    pub vocabulary: usize,
    pub similarities: Vec<f64>,
    pub neighbours: usize,
    pub temperature: f64,
    pub mix_weight: f64,
    pub frequencies: Vec<f64>,
}

pub const DEFAULT_TEMPERATURE: f64 = 0.3;
pub const DEFAULT_MIX_WEIGHT: f64 = 0.4;
pub const DEFAULT_NEIGHBOURS: usize = 10;

/// Builds `L = c (L~ + w (1 p^T - I))` as sparse plus rank-one.
///
/// `L~` has rates `exp(sim / temperature)` to each frequent state's `k` most
/// similar states (ties broken by index), each row scaled to unit exit rate;
/// it is zero outside the frequent subset. `p` is the frequency vector padded
/// with zeros, and `c` rescales so the fastest state has exit rate one.
pub fn build_sparse_graph(spec: &SparseGraphSpec) -> Result<SparseRankOne> {
    let f = spec.frequencies.len();
    let n = spec.vocabulary;
    if f < 2 || n < f {
        return Err(ScudError::InvalidArgument(format!("frequent subset of {f} states in a vocabulary of {n}")));
    }
    if spec.similarities.len() != f * f {
        return Err(ScudError::Shape(format!(
            "similarity matrix has {} entries for {f} frequent states",
            spec.similarities.len()
        )));
    }
    if spec.neighbours == 0 || spec.neighbours >= f {
        return Err(ScudError::InvalidArgument(format!(
            "neighbour count {} must lie in [1, {}]",
            spec.neighbours,
            f - 1
        )));
    }
    if !(spec.temperature > 0.0) || !(spec.mix_weight >= 0.0) {
        return Err(ScudError::InvalidArgument("temperature must be positive and the mix weight non-negative".into()));
    }
    let total: f64 = spec.frequencies.iter().sum();
    if spec.frequencies.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(ScudError::InvalidArgument("frequencies must be a probability vector".into()));
    }
    let mut triples = Vec::with_capacity(f * (spec.neighbours + 1) + n);
    let k = spec.neighbours;
    for i in 0..f {
        let row = &spec.similarities[i * f..(i + 1) * f];
        let mut order: Vec<usize> = (0..f).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let rates: Vec<f64> = order[..k].iter().map(|&j| (row[j] / spec.temperature).exp()).collect();
        let exit: f64 = rates.iter().sum();
        for (&j, r) in order[..k].iter().zip(&rates) {
            triples.push((i, j, r / exit));
        }
        triples.push((i, i, -1.0));
    }
    // The -w I part of the uniform mixture, on every state.
    let w = spec.mix_weight;
    for i in 0..n {
        triples.push((i, i, -w));
    }
    let mut p = spec.frequencies.clone();
    p.resize(n, 0.0);
    let unscaled = SparseRankOne::from_triples(n, triples, w, p.clone())?;
    let scale = 1.0 / unscaled.max_exit_rate();
    let scaled = unscaled.triples().map(|(i, j, v)| (i, j, v * scale)).collect::<Vec<_>>();
    SparseRankOne::from_triples(n, scaled, w * scale, p)
}

/// Ring similarity on `f` states: `cos(2 pi (i - j) / f)`.
pub fn ring_similarity(f: usize) -> Vec<f64> {
    let mut out = vec![0.0; f * f];
    for i in 0..f {
        for j in 0..f {
            out[i * f + j] = (2.0 * std::f64::consts::PI * (i as f64 - j as f64) / f as f64).cos();
        }
    }
    out
}

/// Forward-process choice with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcessSpec {
    Uniform { states: usize },
    Masking { states: usize },
    GaussianBand { states: usize, bandwidth: f64, form: GaussianForm },
    Blosum { pair_probs: Vec<f64>, marginals: Option<Vec<f64>>, canonical: Vec<bool> },
    SparseGraph(SparseGraphSpec),
}

impl ProcessSpec {
    pub fn num_states(&self) -> usize {
        match self {
            Self::Uniform { states } | Self::Masking { states } | Self::GaussianBand { states, .. } => *states,
            Self::Blosum { canonical, .. } => canonical.len(),
            Self::SparseGraph(spec) => spec.vocabulary,
        }
    }

    /// Builds the event process at conditioning level `gamma`.
    pub fn build(&self, gamma: f64) -> Result<EventProcess> {
        match self {
            Self::Uniform { states } => EventProcess::from_generator(&build_uniform(*states)?, gamma),
            Self::Masking { states } => EventProcess::from_generator(&build_masking(*states)?, gamma),
            Self::GaussianBand { states, bandwidth, form } => {
                EventProcess::from_generator(&build_gaussian_band(*states, *bandwidth, *form)?, gamma)
            }
            Self::Blosum { pair_probs, marginals, canonical } => {
                let blosum = build_blosum(pair_probs, marginals.as_deref(), canonical)?;
                EventProcess::from_generator(&blosum.generator, gamma)
            }
            Self::SparseGraph(spec) => EventProcess::from_sparse_generator(&build_sparse_graph(spec)?, gamma),
        }
    }
}

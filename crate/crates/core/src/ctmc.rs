//! Generators, event kernels and forward simulation.
//!
//! A generator `L` is rewritten as an event process: events fire at a constant
//! rate `r` and move the state along a row of the stochastic kernel
//! `K = L / r + I`. The rate is `r = r* / gamma` with `r* = max_b -L[b][b]`.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Result, ScudError};
use crate::linalg::{self, SpectralDecomposition};
use crate::poisson::PoissonWeights;
use crate::schedule::RateSchedule;
use crate::tolerances::TOLERANCES;

/// Infinitesimal generator of a finite-state continuous-time Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl GeneratorMatrix {
    /// Validates a row-major `size x size` matrix and rebuilds its diagonal as the
    /// negative off-diagonal row sum.
    pub fn new(size: usize, entries: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(ScudError::InvalidGenerator("empty generator".into()));
        }
        if entries.len() != size * size {
            return Err(ScudError::Shape(format!(
                "expected {} entries for a {size}x{size} generator, got {}",
                size * size,
                entries.len()
            )));
        }
        let mut entries = entries;
        for i in 0..size {
            let row = &mut entries[i * size..(i + 1) * size];
            let mut off = 0.0;
            let mut scale: f64 = 1.0;
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(ScudError::InvalidGenerator(format!("non-finite entry at ({i}, {j})")));
                }
                scale = scale.max(x.abs());
                if j != i {
                    if x < 0.0 {
                        return Err(ScudError::InvalidGenerator(format!(
                            "negative off-diagonal entry {x} at ({i}, {j})"
                        )));
                    }
                    off += x;
                }
            }
            let row_sum = off + row[i];
            if row_sum.abs() > TOLERANCES.generator_input_row_sum * scale {
                return Err(ScudError::InvalidGenerator(format!("row {i} sums to {row_sum}")));
            }
            row[i] = -off;
        }
        Ok(Self { size, entries })
    }

    /// Builds a generator from off-diagonal rates `rate(i, j)`.
    pub fn from_off_diagonal(size: usize, mut rate: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..size {
                if i != j {
                    entries[i * size + j] = rate(i, j);
                }
            }
            let off: f64 = (0..size).filter(|&j| j != i).map(|j| entries[i * size + j]).sum();
            entries[i * size + i] = -off;
        }
        Self::new(size, entries)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `max_b -L[b][b]`, the slowest admissible event rate.
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.size).map(|b| -self.get(b, b)).fold(0.0, f64::max)
    }

    /// Stationary law by a direct linear solve.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        let p = linalg::stationary_dense(&self.entries, self.size)?;
        let residual =
            linalg::row_times(&p, &self.entries, self.size).into_iter().fold(0.0, |m: f64, x| m.max(x.abs()));
        let scale = self.max_exit_rate().max(1.0);
        if residual > TOLERANCES.stationary_residual * scale {
            return Err(ScudError::Degenerate(format!(
                "stationary residual {residual} too large; chain may be reducible"
            )));
        }
        Ok(p)
    }
}

/// Sparse matrix plus a rank-one term `weight * 1 p^T`.
///
/// Stored row-wise (CSR). The rank-one right factor `p` is a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRankOne {
    size: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
    weight: f64,
    p: Vec<f64>,
    p_cumulative: Vec<f64>,
}

impl SparseRankOne {
    /// Builds from `(row, col, value)` triples; duplicate positions are summed.
    pub fn from_triples(
        size: usize,
        triples: impl IntoIterator<Item = (usize, usize, f64)>,
        weight: f64,
        p: Vec<f64>,
    ) -> Result<Self> {
        if p.len() != size {
            return Err(ScudError::Shape(format!("rank-one factor has length {}, expected {size}", p.len())));
        }
        let mut triples: Vec<(usize, usize, f64)> = triples.into_iter().collect();
        for &(i, j, v) in &triples {
            if i >= size || j >= size || !v.is_finite() {
                return Err(ScudError::InvalidArgument(format!("bad sparse entry ({i}, {j}, {v}) for size {size}")));
            }
        }
        triples.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0; size + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(triples.len());
        let mut values: Vec<f64> = Vec::with_capacity(triples.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triples {
            if last == Some((i, j)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((i, j));
            cols.push(j);
            values.push(v);
            row_ptr[i + 1] += 1;
        }
        for i in 0..size {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut acc = 0.0;
        let p_cumulative = p
            .iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect();
        Ok(Self { size, row_ptr, cols, values, weight, p, p_cumulative })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn rank_one_factor(&self) -> &[f64] {
        &self.p
    }

    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.size)
            .flat_map(move |i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k], self.values[k])))
    }

    fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let sparse: f64 = self.row_entries(i).filter(|&(c, _)| c == j).map(|(_, v)| v).sum();
        sparse + self.weight * self.p[j]
    }

    /// `v^T M`.
    pub fn apply_left(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        let mut total = 0.0;
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            total += vi;
            for (j, x) in self.row_entries(i) {
                out[j] += vi * x;
            }
        }
        if self.weight != 0.0 && total != 0.0 {
            let scale = self.weight * total;
            for (o, &pj) in out.iter_mut().zip(&self.p) {
                *o += scale * pj;
            }
        }
        out
    }

    /// `M v`.
    pub fn apply_right(&self, v: &[f64]) -> Vec<f64> {
        let dot: f64 = self.p.iter().zip(v).map(|(a, b)| a * b).sum();
        let shift = self.weight * dot;
        (0..self.size).map(|i| self.row_entries(i).map(|(j, x)| x * v[j]).sum::<f64>() + shift).collect()
    }

    /// Dense row-major copy, for checks on small sizes.
    pub fn densify(&self) -> Vec<f64> {
        let n = self.size;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.weight * self.p[j];
            }
            for (j, x) in self.row_entries(i) {
                out[i * n + j] += x;
            }
        }
        out
    }

    /// Largest `-M[b][b]`.
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.size).map(|b| -self.get(b, b)).fold(0.0, f64::max)
    }

    fn sample_row<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        // Stored columns carry their sparse value plus the rank-one share; the
        // rest of the rank-one mass goes to the other columns in proportion to p.
        let mut u: f64 = rng.random();
        let mut covered = 0.0;
        for (j, x) in self.row_entries(i) {
            let mass = (x + self.weight * self.p[j]).max(0.0);
            if u < mass {
                return j;
            }
            u -= mass;
            covered += self.p[j];
        }
        if self.weight > 0.0 && covered < 1.0 {
            for _ in 0..1000 {
                let target = rng.random::<f64>() * self.p_cumulative[self.size - 1];
                let j = self.p_cumulative.partition_point(|&c| c <= target).min(self.size - 1);
                if self.row_entries(i).all(|(c, _)| c != j) {
                    return j;
                }
            }
        }
        // Rounding left a sliver of mass: fall back to the last sparse entry.
        self.row_entries(i).last().map(|(j, _)| j).unwrap_or(i)
    }
}

/// A stochastic event kernel, dense or sparse-plus-rank-one.
#[derive(Debug, Clone)]
pub enum KernelRepresentation {
    Dense(DenseKernel),
    SparsePlusRankOne(SparseRankOne),
}

/// Dense kernel with an optional eigendecomposition for fast powers.
#[derive(Debug, Clone)]
pub struct DenseKernel {
    size: usize,
    entries: Vec<f64>,
    spectral: Option<SpectralDecomposition>,
}

impl DenseKernel {
    /// Validates row-stochasticity. The eigendecomposition is attached when
    /// `stationary` is given and the kernel is reversible with respect to it.
    pub fn new(size: usize, entries: Vec<f64>, stationary: Option<&[f64]>) -> Result<Self> {
        validate_stochastic(&entries, size)?;
        let spectral = match stationary {
            Some(pi) if size <= TOLERANCES.spectral_max_size => SpectralDecomposition::try_new(&entries, pi, size),
            _ => None,
        };
        Ok(Self { size, entries, spectral })
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn has_spectral(&self) -> bool {
        self.spectral.is_some()
    }

    /// `v^T K^s` by repeated products, ignoring any eigendecomposition.
    pub fn power_left_repeated(&self, s: u64, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for _ in 0..s {
            out = linalg::row_times(&out, &self.entries, self.size);
        }
        out
    }

    /// `K^s v` by repeated products.
    pub fn power_right_repeated(&self, s: u64, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for _ in 0..s {
            out = linalg::times_column(&self.entries, &out, self.size);
        }
        out
    }
}

/// Checks entries in `[0, 1]` and unit row sums.
pub fn validate_stochastic(entries: &[f64], size: usize) -> Result<()> {
    if entries.len() != size * size {
        return Err(ScudError::Shape(format!("expected {} kernel entries, got {}", size * size, entries.len())));
    }
    for i in 0..size {
        let row = &entries[i * size..(i + 1) * size];
        if let Some((j, x)) = row.iter().enumerate().find(|(_, &x)| !(-1e-15..=1.0 + 1e-15).contains(&x)) {
            return Err(ScudError::InvalidKernel(format!("entry ({i}, {j}) = {x} outside [0, 1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > TOLERANCES.kernel_row_sum {
            return Err(ScudError::InvalidKernel(format!("row {i} sums to {sum}")));
        }
    }
    Ok(())
}

impl KernelRepresentation {
    pub fn size(&self) -> usize {
        match self {
            Self::Dense(k) => k.size,
            Self::SparsePlusRankOne(k) => k.size,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Self::Dense(k) => k.entries[i * k.size + j],
            Self::SparsePlusRankOne(k) => k.get(i, j),
        }
    }

    /// `v^T K`.
    pub fn apply_left(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Self::Dense(k) => linalg::row_times(v, &k.entries, k.size),
            Self::SparsePlusRankOne(k) => k.apply_left(v),
        }
    }

    /// `K v`.
    pub fn apply_right(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Self::Dense(k) => linalg::times_column(&k.entries, v, k.size),
            Self::SparsePlusRankOne(k) => k.apply_right(v),
        }
    }

    /// `v^T K^s`; eigendecomposition when available, repeated products otherwise.
    pub fn power_left(&self, s: u64, v: &[f64]) -> Vec<f64> {
        match self {
            Self::Dense(k) => match (&k.spectral, s) {
                (Some(spec), s) if s > 1 => spec.power_left(s, v),
                _ => k.power_left_repeated(s, v),
            },
            Self::SparsePlusRankOne(k) => {
                let mut out = v.to_vec();
                for _ in 0..s {
                    out = k.apply_left(&out);
                }
                out
            }
        }
    }

    /// `K^s v`.
    pub fn power_right(&self, s: u64, v: &[f64]) -> Vec<f64> {
        match self {
            Self::Dense(k) => match (&k.spectral, s) {
                (Some(spec), s) if s > 1 => spec.power_right(s, v),
                _ => k.power_right_repeated(s, v),
            },
            Self::SparsePlusRankOne(k) => {
                let mut out = v.to_vec();
                for _ in 0..s {
                    out = k.apply_right(&out);
                }
                out
            }
        }
    }

    /// Row `i` of `K`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        match self {
            Self::Dense(k) => k.entries[i * k.size..(i + 1) * k.size].to_vec(),
            Self::SparsePlusRankOne(k) => k.apply_left(&linalg::one_hot(k.size, i)),
        }
    }

    /// Draws the state after one event from state `i`.
    pub fn sample_row<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        match self {
            Self::Dense(k) => sample_categorical(&k.entries[i * k.size..(i + 1) * k.size], rng),
            Self::SparsePlusRankOne(k) => k.sample_row(i, rng),
        }
    }

    pub fn densify(&self) -> Vec<f64> {
        match self {
            Self::Dense(k) => k.entries.clone(),
            Self::SparsePlusRankOne(k) => k.densify(),
        }
    }
}

/// Draws an index from non-negative weights that sum to (about) one.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u: f64 = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            if u < p {
                return i;
            }
            u -= p;
            last_positive = i;
        }
    }
    last_positive
}

/// A generator rewritten as constant-rate events with a stochastic kernel.
#[derive(Debug)]
pub struct EventProcess {
    gamma: f64,
    rate: f64,
    max_exit_rate: f64,
    kernel: KernelRepresentation,
    generator: Option<GeneratorMatrix>,
    stationary: OnceLock<Result<Vec<f64>>>,
}

impl EventProcess {
    /// Event process for `L` at schedule-conditioning level `gamma`, with
    /// `r = r* / gamma` and `K = L / r + I`.
    pub fn from_generator(generator: &GeneratorMatrix, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let r_star = generator.max_exit_rate();
        if r_star <= 0.0 {
            return Err(ScudError::Degenerate("generator has no transitions".into()));
        }
        let rate = r_star / gamma;
        let n = generator.size();
        let mut k: Vec<f64> = generator.entries().iter().map(|x| x / rate).collect();
        for b in 0..n {
            // Diagonal as one minus the off-diagonal mass keeps rows stochastic
            // to rounding even when L/r has cancellation.
            let off: f64 = (0..n).filter(|&j| j != b).map(|j| k[b * n + j]).sum();
            k[b * n + b] = 1.0 - off;
            if k[b * n + b] < 0.0 {
                k[b * n + b] = 0.0;
            }
        }
        let stationary = generator.stationary_distribution();
        let kernel = DenseKernel::new(n, k, stationary.as_ref().ok().map(|p| p.as_slice()))?;
        let cell = OnceLock::new();
        let _ = cell.set(stationary);
        Ok(Self {
            gamma,
            rate,
            max_exit_rate: r_star,
            kernel: KernelRepresentation::Dense(kernel),
            generator: Some(generator.clone()),
            stationary: cell,
        })
    }

    /// Event process for a generator stored as sparse plus rank-one. The
    /// kernel keeps the same structure: `K = I + L / r`.
    pub fn from_sparse_generator(generator: &SparseRankOne, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let r_star = generator.max_exit_rate();
        if r_star <= 0.0 {
            return Err(ScudError::Degenerate("generator has no transitions".into()));
        }
        let rate = r_star / gamma;
        let n = generator.size();
        let mut triples: Vec<(usize, usize, f64)> = generator.triples().map(|(i, j, v)| (i, j, v / rate)).collect();
        triples.extend((0..n).map(|i| (i, i, 1.0)));
        let kernel =
            SparseRankOne::from_triples(n, triples, generator.weight() / rate, generator.rank_one_factor().to_vec())?;
        for (i, j, v) in kernel.triples() {
            let total = v + kernel.weight * kernel.p[j];
            if total < -1e-12 {
                return Err(ScudError::InvalidKernel(format!("kernel entry ({i}, {j}) = {total} is negative")));
            }
        }
        Ok(Self {
            gamma,
            rate,
            max_exit_rate: r_star,
            kernel: KernelRepresentation::SparsePlusRankOne(kernel),
            generator: None,
            stationary: OnceLock::new(),
        })
    }

    /// Wraps a given stochastic kernel with `L = rate * (K - I)`.
    pub fn from_dense_kernel(size: usize, kernel: Vec<f64>, rate: f64) -> Result<Self> {
        validate_stochastic(&kernel, size)?;
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(ScudError::InvalidArgument(format!("event rate {rate}")));
        }
        let mut l: Vec<f64> = kernel.iter().map(|x| rate * x).collect();
        for b in 0..size {
            l[b * size + b] -= rate;
        }
        let generator = GeneratorMatrix::new(size, l)?;
        let r_star = generator.max_exit_rate();
        let gamma = r_star / rate;
        let stationary = generator.stationary_distribution();
        let kernel = DenseKernel::new(size, kernel, stationary.as_ref().ok().map(|p| p.as_slice()))?;
        let cell = OnceLock::new();
        let _ = cell.set(stationary);
        Ok(Self {
            gamma,
            rate,
            max_exit_rate: r_star,
            kernel: KernelRepresentation::Dense(kernel),
            generator: Some(generator),
            stationary: cell,
        })
    }

    pub fn num_states(&self) -> usize {
        self.kernel.size()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Event rate `r`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// `r* = max_b -L[b][b]`.
    pub fn max_exit_rate(&self) -> f64 {
        self.max_exit_rate
    }

    pub fn kernel(&self) -> &KernelRepresentation {
        &self.kernel
    }

    /// The dense generator, when the process was built from one.
    pub fn generator(&self) -> Option<&GeneratorMatrix> {
        self.generator.as_ref()
    }

    /// `L[i][j] = r (K[i][j] - delta_ij)`.
    pub fn generator_entry(&self, i: usize, j: usize) -> f64 {
        match &self.generator {
            Some(g) => g.get(i, j),
            None => {
                let k = self.kernel.get(i, j);
                self.rate * (k - if i == j { 1.0 } else { 0.0 })
            }
        }
    }

    /// `v^T K^s`: the law after `s` events when `v` is a distribution.
    pub fn kernel_power_apply(&self, s: u64, v: &[f64]) -> Vec<f64> {
        self.kernel.power_left(s, v)
    }

    /// `K^s v`.
    pub fn kernel_power_apply_right(&self, s: u64, v: &[f64]) -> Vec<f64> {
        self.kernel.power_right(s, v)
    }

    /// Row `x0` of `K^s`, clamped to non-negative values.
    pub fn transition_row(&self, x0: usize, s: u64) -> Vec<f64> {
        let mut row = self.kernel_power_apply(s, &linalg::one_hot(self.num_states(), x0));
        clamp_probabilities(&mut row);
        row
    }

    /// Column `x` of `K^s`, clamped to non-negative values.
    pub fn transition_column(&self, x: usize, s: u64) -> Vec<f64> {
        let mut col = self.kernel_power_apply_right(s, &linalg::one_hot(self.num_states(), x));
        clamp_probabilities(&mut col);
        col
    }

    /// `v^T exp(tau L)` by uniformization:
    /// `sum_s Pois(r tau)(s) v^T K^s`, truncated by the Poisson tail rule.
    pub fn generator_exponential_apply(&self, tau: f64, v: &[f64]) -> Result<Vec<f64>> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(ScudError::InvalidArgument(format!("tau must be >= 0, got {tau}")));
        }
        check_len(v, self.num_states())?;
        if tau == 0.0 {
            return Ok(v.to_vec());
        }
        let weights = PoissonWeights::new(self.rate * tau);
        let mut out = vec![0.0; v.len()];
        let mut current = self.kernel.power_left(weights.start as u64, v);
        for (i, (_, w)) in weights.iter().enumerate() {
            if i > 0 {
                current = self.kernel.apply_left(&current);
            }
            for (o, c) in out.iter_mut().zip(&current) {
                *o += w * c;
            }
        }
        Ok(out)
    }

    /// Left null vector of `L`, normalised to a probability vector.
    ///
    /// Dense processes use a direct solve; sparse ones use power iteration on
    /// the lazy kernel `(I + K) / 2` up to the configured iteration cap.
    pub fn stationary_distribution(&self) -> Result<&[f64]> {
        self.stationary.get_or_init(|| self.compute_stationary()).as_ref().map(|v| v.as_slice()).map_err(Clone::clone)
    }

    fn compute_stationary(&self) -> Result<Vec<f64>> {
        if let Some(g) = &self.generator {
            return g.stationary_distribution();
        }
        let n = self.num_states();
        let mut p = vec![1.0 / n as f64; n];
        for _ in 0..TOLERANCES.power_iteration_cap {
            let kp = self.kernel.apply_left(&p);
            let next: Vec<f64> = p.iter().zip(&kp).map(|(a, b)| 0.5 * (a + b)).collect();
            let change: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            p = next;
            if change < 1e-15 {
                linalg::normalize(&mut p);
                let kp = self.kernel.apply_left(&p);
                let residual = kp.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if residual > TOLERANCES.stationary_residual {
                    break;
                }
                return Ok(p);
            }
        }
        Err(ScudError::NonConvergence {
            what: "stationary power iteration (chain may be reducible)".into(),
            iterations: TOLERANCES.power_iteration_cap,
        })
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(ScudError::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    Ok(())
}

pub(crate) fn check_len(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(ScudError::Shape(format!("vector of length {} for {n} states", v.len())));
    }
    Ok(())
}

/// Zeroes rounding-level negatives left by spectral powers.
pub fn clamp_probabilities(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Builds the event process; free-function form of [`EventProcess::from_generator`].
pub fn build_event_process(generator: &GeneratorMatrix, gamma: f64) -> Result<EventProcess> {
    EventProcess::from_generator(generator, gamma)
}

/// One jump of a simulated path. Self-transitions are kept as events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    /// Modulated time in `[0, 1]`.
    pub time: f64,
    pub dim: usize,
    pub state: usize,
}

/// A forward path over modulated time `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: Vec<usize>,
    /// Sorted by time.
    pub jumps: Vec<Jump>,
    pub horizon: f64,
}

impl Trajectory {
    /// State of every dimension at time `t` (jumps at exactly `t` included).
    pub fn state_at(&self, t: f64) -> Vec<usize> {
        let mut x = self.initial.clone();
        for jump in self.jumps.iter().take_while(|j| j.time <= t) {
            x[jump.dim] = jump.state;
        }
        x
    }

    /// Number of events per dimension up to and including time `t`.
    pub fn event_counts(&self, t: f64) -> Vec<u64> {
        let mut counts = vec![0; self.initial.len()];
        for jump in self.jumps.iter().take_while(|j| j.time <= t) {
            counts[jump.dim] += 1;
        }
        counts
    }
}

/// Simulates the event process under the time change of `schedule`.
///
/// Each dimension waits `Exp(r)` in process time between events; an event at
/// process time `u` happens at modulated time `schedule.time_at_cumulative(u)`.
pub fn gillespie_simulate<R: Rng + ?Sized>(
    process: &EventProcess,
    x0: &[usize],
    schedule: &RateSchedule,
    rng: &mut R,
) -> Result<Trajectory> {
    let n = process.num_states();
    if let Some(&bad) = x0.iter().find(|&&x| x >= n) {
        return Err(ScudError::InvalidArgument(format!("initial state {bad} outside [0, {n})")));
    }
    let horizon = schedule.cumulative(1.0);
    let wait = Exp::new(process.rate()).map_err(|e| ScudError::InvalidArgument(e.to_string()))?;
    let mut jumps = Vec::new();
    for (dim, &start) in x0.iter().enumerate() {
        let mut state = start;
        let mut u = 0.0;
        loop {
            u += wait.sample(rng);
            if u > horizon {
                break;
            }
            state = process.kernel().sample_row(state, rng);
            jumps.push(Jump { time: schedule.time_at_cumulative(u), dim, state });
        }
    }
    jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(Trajectory { initial: x0.to_vec(), jumps, horizon: 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_generator(n: usize, seed: u64) -> GeneratorMatrix {
        let mut rng = seeded(seed);
        // Sparse random rates on top of a cycle, so the chain is irreducible.
        GeneratorMatrix::from_off_diagonal(n, |i, j| {
            let x: f64 = rng.random();
            let cycle = if j == (i + 1) % n { 0.2 } else { 0.0 };
            cycle + if x < 0.3 { 0.0 } else { 2.0 * x }
        })
        .unwrap()
    }

    /// `exp(A)` by Taylor series after scaling down, then repeated squaring.
    fn expm_oracle(a: &[f64], n: usize) -> Vec<f64> {
        let norm = a.iter().fold(0.0f64, |m, x| m.max(x.abs())) * n as f64;
        let squarings = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
        let scale = 0.5f64.powi(squarings);
        let a: Vec<f64> = a.iter().map(|x| x * scale).collect();
        let mut term = linalg::identity(n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = linalg::mat_mul(&term, &a, n);
            term.iter_mut().for_each(|x| *x /= k as f64);
            sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
        }
        for _ in 0..squarings {
            sum = linalg::mat_mul(&sum, &sum, n);
        }
        sum
    }

    #[test]
    fn generator_diagonal_is_rebuilt() {
        let g = GeneratorMatrix::new(2, vec![-0.5, 0.5, 2.0, -2.0]).unwrap();
        assert_eq!(g.max_exit_rate(), 2.0);
        assert!(GeneratorMatrix::new(2, vec![-1.0, -1.0, 0.0, 0.0]).is_err());
        assert!(GeneratorMatrix::new(2, vec![-1.0, 1.0, 0.5, -0.4]).is_err());
        assert!(GeneratorMatrix::new(2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn gamma_outside_unit_interval_is_rejected() {
        let g = random_generator(3, 1);
        assert!(EventProcess::from_generator(&g, 0.0).is_err());
        assert!(EventProcess::from_generator(&g, 1.5).is_err());
    }

    #[test]
    fn kernel_has_a_zero_diagonal_at_full_conditioning() {
        let g = random_generator(5, 2);
        let p = EventProcess::from_generator(&g, 1.0).unwrap();
        let fastest = (0..5).max_by(|&a, &b| g.get(b, b).total_cmp(&g.get(a, a))).unwrap();
        assert!(p.kernel().get(fastest, fastest).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn event_form_reconstructs_generator(n in 2usize..12, seed in any::<u64>(), gamma in 0.01f64..=1.0) {
            let g = random_generator(n, seed);
            let p = EventProcess::from_generator(&g, gamma).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let k = p.kernel().get(i, j);
                    prop_assert!(k >= 0.0);
                    let rebuilt = p.rate() * (k - if i == j { 1.0 } else { 0.0 });
                    prop_assert!((rebuilt - g.get(i, j)).abs() < 1e-12);
                }
                let row_sum: f64 = (0..n).map(|j| p.kernel().get(i, j)).sum();
                prop_assert!((row_sum - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn uniformization_matches_matrix_exponential(n in 2usize..7, seed in any::<u64>(), tau in 0.0f64..5.0, gamma in 0.1f64..=1.0) {
            let g = random_generator(n, seed);
            let p = EventProcess::from_generator(&g, gamma).unwrap();
            let scaled: Vec<f64> = g.entries().iter().map(|x| x * tau).collect();
            let e = expm_oracle(&scaled, n);
            let mut v = vec![0.0; n];
            v[seed as usize % n] = 1.0;
            v[(seed as usize / 7) % n] += 0.5;
            let got = p.generator_exponential_apply(tau, &v).unwrap();
            let want = linalg::row_times(&v, &e, n);
            prop_assert!(linalg::max_abs_diff(&got, &want) < 1e-8);
        }

        #[test]
        fn stationary_law_is_invariant(n in 2usize..10, seed in any::<u64>()) {
            let g = random_generator(n, seed);
            let p = EventProcess::from_generator(&g, 0.5).unwrap();
            if let Ok(pi) = p.stationary_distribution() {
                let next = p.kernel_power_apply(1, pi);
                prop_assert!(linalg::max_abs_diff(&next, pi) < 1e-10);
            }
        }
    }

    fn small_sparse(n: usize) -> SparseRankOne {
        let mut triples = Vec::new();
        for i in 0..n {
            triples.push((i, (i + 1) % n, 0.6));
            triples.push((i, (i + 3) % n, 0.2));
            triples.push((i, i, -0.8 - 0.5));
        }
        let mut p: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        SparseRankOne::from_triples(n, triples, 0.5, p).unwrap()
    }

    #[test]
    fn sparse_powers_match_dense_mirror() {
        let n = 40;
        let process = EventProcess::from_sparse_generator(&small_sparse(n), 0.7).unwrap();
        let dense = process.kernel().densify();
        validate_stochastic(&dense, n).unwrap();
        let mirror = DenseKernel::new(n, dense, None).unwrap();
        let mut v = vec![0.0; n];
        v[3] = 0.25;
        v[17] = 0.75;
        for s in [0u64, 1, 2, 7, 30] {
            let got = process.kernel_power_apply(s, &v);
            assert!(linalg::max_abs_diff(&got, &mirror.power_left_repeated(s, &v)) < 1e-12);
            let got = process.kernel_power_apply_right(s, &v);
            assert!(linalg::max_abs_diff(&got, &mirror.power_right_repeated(s, &v)) < 1e-12);
        }
    }

    #[test]
    fn sparse_stationary_matches_dense_solve() {
        let n = 12;
        let sparse = small_sparse(n);
        let process = EventProcess::from_sparse_generator(&sparse, 1.0).unwrap();
        let dense = GeneratorMatrix::new(n, sparse.densify()).unwrap();
        let want = dense.stationary_distribution().unwrap();
        let got = process.stationary_distribution().unwrap();
        assert!(linalg::max_abs_diff(got, &want) < 1e-9);
    }

    #[test]
    fn sparse_row_sampling_matches_row() {
        let n = 8;
        let process = EventProcess::from_sparse_generator(&small_sparse(n), 1.0).unwrap();
        let row = process.kernel().row(2);
        let mut rng = seeded(11);
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            counts[process.kernel().sample_row(2, &mut rng)] += 1;
        }
        for j in 0..n {
            let expect = draws as f64 * row[j];
            let sd = (expect * (1.0 - row[j])).sqrt().max(1.0);
            assert!((counts[j] as f64 - expect).abs() < 5.0 * sd, "column {j}: {} vs {expect}", counts[j]);
        }
    }

    #[test]
    fn simulated_paths_follow_the_generator() {
        let g = random_generator(3, 5);
        let process = EventProcess::from_generator(&g, 0.5).unwrap();
        let schedule = RateSchedule::masking_closed_form(0.05).unwrap();
        let horizon = schedule.cumulative(1.0);
        let mut rng = seeded(9);
        let paths = 40_000;
        let mut end_counts = [0usize; 3];
        let mut events = 0u64;
        for _ in 0..paths {
            let path = gillespie_simulate(&process, &[0], &schedule, &mut rng).unwrap();
            assert!(path.jumps.windows(2).all(|w| w[0].time <= w[1].time));
            end_counts[path.state_at(1.0)[0]] += 1;
            events += path.event_counts(1.0)[0];
        }
        let mean = events as f64 / paths as f64;
        let expect_mean = process.rate() * horizon;
        assert!((mean - expect_mean).abs() < 4.0 * (expect_mean / paths as f64).sqrt());
        let scaled: Vec<f64> = g.entries().iter().map(|x| x * horizon).collect();
        let law = expm_oracle(&scaled, 3);
        for j in 0..3 {
            let p = law[j];
            let sd = (paths as f64 * p * (1.0 - p)).sqrt();
            assert!((end_counts[j] as f64 - paths as f64 * p).abs() < 4.5 * sd);
        }
    }
}

//! Predictors of the clean token in each dimension.
//!
//! A denoiser maps the noisy sequence `x_t` and the event counts `s_t` to one
//! probability vector per dimension. The target is a quantity proportional to
//! `p(x_0^d | x_t^{-d}, s_t^{-d})`: what the other dimensions say about `x_0^d`.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use rayon::prelude::*;

use crate::ctmc::EventProcess;
use crate::error::{Result, ScudError};
use crate::loss;
use crate::schedule::{sample_poisson, RateSchedule};
use crate::tolerances::TOLERANCES;
use crate::toy_data::ToyDistribution;

/// One probability vector per dimension, row-major `D x B`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    states: usize,
    probs: Vec<f64>,
}

impl DenoiserOutput {
    pub fn new(states: usize, probs: Vec<f64>) -> Result<Self> {
        if states == 0 || !probs.len().is_multiple_of(states) {
            return Err(ScudError::Shape(format!("{} probabilities do not form rows of {states}", probs.len())));
        }
        for (d, row) in probs.chunks(states).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(ScudError::InvalidArgument(format!(
                    "prediction row {d} is not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(Self { states, probs })
    }

    pub fn num_states(&self) -> usize {
        self.states
    }

    pub fn num_dims(&self) -> usize {
        self.probs.len() / self.states
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.probs[d * self.states..(d + 1) * self.states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

pub trait Denoiser: Send + Sync {
    fn num_states(&self) -> usize;

    fn predict(&self, x_t: &[usize], s_t: &[u64]) -> Result<DenoiserOutput>;
}

impl<T: Denoiser + ?Sized> Denoiser for &T {
    fn num_states(&self) -> usize {
        (**self).num_states()
    }

    fn predict(&self, x_t: &[usize], s_t: &[u64]) -> Result<DenoiserOutput> {
        (**self).predict(x_t, s_t)
    }
}

impl<T: Denoiser + ?Sized> Denoiser for Box<T> {
    fn num_states(&self) -> usize {
        (**self).num_states()
    }

    fn predict(&self, x_t: &[usize], s_t: &[u64]) -> Result<DenoiserOutput> {
        (**self).predict(x_t, s_t)
    }
}

fn check_inputs(x_t: &[usize], s_t: &[u64], states: usize, dims: Option<usize>) -> Result<()> {
    if x_t.len() != s_t.len() {
        return Err(ScudError::Shape(format!("{} tokens with {} counts", x_t.len(), s_t.len())));
    }
    if let Some(d) = dims {
        if x_t.len() != d {
            return Err(ScudError::Shape(format!("{} tokens, expected {d}", x_t.len())));
        }
    }
    if let Some(&bad) = x_t.iter().find(|&&x| x >= states) {
        return Err(ScudError::Shape(format!("token {bad} outside [0, {states})")));
    }
    Ok(())
}

/// Exact prediction for a known toy distribution:
/// `p(x_0^d = b | x_t^{-d}, s_t^{-d})`, computed from
/// `sum_{x_0 : x_0^d = b} p(x_0) prod_{d' != d} K^{s^{d'}}[x_0^{d'}][x_t^{d'}]`.
///
/// The toy vocabulary may be a prefix of the process vocabulary (as with a
/// mask state); predictions put zero mass beyond it. When the other
/// dimensions are impossible under every `x_0`, the prior marginal is used.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    toy: ToyDistribution,
    process: Arc<EventProcess>,
    table: Option<Vec<(Vec<usize>, f64)>>,
}

impl OracleDenoiser {
    pub fn new(toy: ToyDistribution, process: Arc<EventProcess>) -> Result<Self> {
        if toy.num_states() > process.num_states() {
            return Err(ScudError::Shape(format!(
                "toy vocabulary of {} exceeds the process vocabulary of {}",
                toy.num_states(),
                process.num_states()
            )));
        }
        let table = match toy {
            ToyDistribution::CorrelatedPair { .. } => Some(toy.enumerate()?),
            _ => None,
        };
        Ok(Self { toy, process, table })
    }

    pub fn toy(&self) -> &ToyDistribution {
        &self.toy
    }

    /// `K^s[x0][x_t]` as a function of `x0` over the toy vocabulary.
    fn likelihoods(&self, x_t: &[usize], s_t: &[u64]) -> Vec<Vec<f64>> {
        let b = self.toy.num_states();
        x_t.iter()
            .zip(s_t)
            .map(|(&x, &s)| {
                let mut col = self.process.transition_column(x, s);
                col.truncate(b);
                col
            })
            .collect()
    }
}

impl Denoiser for OracleDenoiser {
    fn num_states(&self) -> usize {
        self.process.num_states()
    }

    fn predict(&self, x_t: &[usize], s_t: &[u64]) -> Result<DenoiserOutput> {
        let n = self.process.num_states();
        let dims = self.toy.num_dims();
        check_inputs(x_t, s_t, n, Some(dims))?;
        let b = self.toy.num_states();
        let lik = self.likelihoods(x_t, s_t);
        let mut rows = vec![vec![0.0; b]; dims];
        match (&self.toy, &self.table) {
            (ToyDistribution::Factorized { marginals }, _) => {
                for (row, m) in rows.iter_mut().zip(marginals) {
                    row.copy_from_slice(m);
                }
            }
            (ToyDistribution::MarkovChain { initial, transition, .. }, _) => {
                // Forward and backward messages that skip the evidence at d.
                let mut forward = vec![initial.clone()];
                for d in 1..dims {
                    let prev = &forward[d - 1];
                    let mut next = vec![0.0; b];
                    for a in 0..b {
                        let w = prev[a] * lik[d - 1][a];
                        for (c, nx) in next.iter_mut().enumerate() {
                            *nx += w * transition[a * b + c];
                        }
                    }
                    rescale(&mut next);
                    forward.push(next);
                }
                let mut backward = vec![vec![1.0; b]; dims];
                for d in (0..dims - 1).rev() {
                    let mut cur = vec![0.0; b];
                    for (a, cu) in cur.iter_mut().enumerate() {
                        *cu = (0..b).map(|c| transition[a * b + c] * lik[d + 1][c] * backward[d + 1][c]).sum();
                    }
                    rescale(&mut cur);
                    backward[d] = cur;
                }
                for d in 0..dims {
                    for a in 0..b {
                        rows[d][a] = forward[d][a] * backward[d][a];
                    }
                }
            }
            (_, Some(table)) => {
                for (x0, p) in table {
                    if *p == 0.0 {
                        continue;
                    }
                    for d in 0..dims {
                        let w: f64 = (0..dims).filter(|&e| e != d).map(|e| lik[e][x0[e]]).product();
                        rows[d][x0[d]] += p * w;
                    }
                }
            }
            _ => unreachable!("enumeration table built for correlated toys"),
        }
        let marginals = self.toy.marginals();
        let mut probs = Vec::with_capacity(dims * n);
        for (d, mut row) in rows.into_iter().enumerate() {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|x| *x /= total);
            } else {
                row.clone_from(&marginals[d]);
            }
            row.resize(n, 0.0);
            probs.extend(row);
        }
        DenoiserOutput::new(n, probs)
    }
}

fn rescale(v: &mut [f64]) {
    let m = v.iter().cloned().fold(0.0, f64::max);
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x /= m);
    }
}

/// `(1 - mix) * inner + mix * uniform`.
#[derive(Debug, Clone)]
pub struct MixedDenoiser<D> {
    pub inner: D,
    pub mix: f64,
}

impl<D: Denoiser> Denoiser for MixedDenoiser<D> {
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    fn predict(&self, x_t: &[usize], s_t: &[u64]) -> Result<DenoiserOutput> {
        let out = self.inner.predict(x_t, s_t)?;
        let n = out.num_states();
        let u = self.mix / n as f64;
        let probs = out.as_slice().iter().map(|p| (1.0 - self.mix) * p + u).collect();
        DenoiserOutput::new(n, probs)
    }
}

/// Passes `min(s, 1)` to the inner denoiser, so it only sees which dimensions
/// have had an event.
#[derive(Debug, Clone)]
pub struct EventIndicator<D>(pub D);

impl<D: Denoiser> Denoiser for EventIndicator<D> {
    fn num_states(&self) -> usize {
        self.0.num_states()
    }

    fn predict(&self, x_t: &[usize], s_t: &[u64]) -> Result<DenoiserOutput> {
        let m: Vec<u64> = s_t.iter().map(|&s| s.min(1)).collect();
        self.0.predict(x_t, &m)
    }
}

/// The same rows whatever the input.
#[derive(Debug, Clone)]
pub struct FixedDenoiser {
    output: DenoiserOutput,
}

impl FixedDenoiser {
    pub fn new(output: DenoiserOutput) -> Self {
        Self { output }
    }
}

impl Denoiser for FixedDenoiser {
    fn num_states(&self) -> usize {
        self.output.num_states()
    }

    fn predict(&self, x_t: &[usize], s_t: &[u64]) -> Result<DenoiserOutput> {
        check_inputs(x_t, s_t, self.output.num_states(), Some(self.output.num_dims()))?;
        Ok(self.output.clone())
    }
}

/// Shape of the trainable denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub states: usize,
    pub dims: usize,
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Adds a learned embedding per position; without it the network treats
    /// dimensions symmetrically.
    pub positional: bool,
}

impl Architecture {
    pub fn new(states: usize, dims: usize) -> Self {
        Self { states, dims, embed: 16, hidden: 32, layers: 2, positional: false }
    }

    fn validate(&self) -> Result<()> {
        if self.states < 2 || self.dims == 0 || self.embed == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(ScudError::InvalidArgument(format!("bad architecture {self:?}")));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let mut next = 0;
        let mut take = |len: usize| {
            let r = next..next + len;
            next += len;
            r
        };
        let embedding = take(self.states * self.embed);
        let position = self.positional.then(|| take(self.dims * self.embed));
        let mut layers = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let input = if l == 0 { 2 * self.embed } else { self.hidden };
            layers.push(LayerLayout {
                input,
                weight: take(self.hidden * input),
                bias: take(self.hidden),
                scale: take(self.hidden * FEATURES),
                shift: take(self.hidden * FEATURES),
            });
        }
        let out_weight = take(self.states * self.hidden);
        let out_bias = take(self.states);
        Layout { embedding, position, layers, out_weight, out_bias, total: next }
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().total
    }

    fn descriptor(&self) -> String {
        format!(
            "states={} dims={} embed={} hidden={} layers={} positional={}",
            self.states, self.dims, self.embed, self.hidden, self.layers, self.positional as u8
        )
    }

    fn parse_descriptor(line: &str) -> Result<Self> {
        let mut arch = Self::new(0, 0);
        let bad = |m: String| ScudError::Parse { line: 2, message: m };
        let mut seen = 0;
        for field in line.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| bad(format!("field `{field}`")))?;
            let v: usize = value.parse().map_err(|_| bad(format!("value in `{field}`")))?;
            match key {
                "states" => arch.states = v,
                "dims" => arch.dims = v,
                "embed" => arch.embed = v,
                "hidden" => arch.hidden = v,
                "layers" => arch.layers = v,
                "positional" => arch.positional = v != 0,
                _ => return Err(bad(format!("unknown key `{key}`"))),
            }
            seen += 1;
        }
        if seen != 6 {
            return Err(bad("architecture line needs six fields".into()));
        }
        arch.validate().map_err(|e| bad(e.to_string()))?;
        Ok(arch)
    }
}

/// Count features per dimension: own `ln(1 + s)` and the mean over dimensions.
const FEATURES: usize = 2;

#[derive(Debug, Clone)]
struct LayerLayout {
    input: usize,
    weight: Range<usize>,
    bias: Range<usize>,
    scale: Range<usize>,
    shift: Range<usize>,
}

#[derive(Debug, Clone)]
struct Layout {
    embedding: Range<usize>,
    position: Option<Range<usize>>,
    layers: Vec<LayerLayout>,
    out_weight: Range<usize>,
    out_bias: Range<usize>,
    total: usize,
}

/// Token embeddings, mean-pooled context and `tanh` layers whose
/// pre-activations are scaled and shifted by the count features, ending in a
/// per-dimension softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableDenoiser {
    arch: Architecture,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass.
struct Trace {
    features: Vec<[f64; FEATURES]>,
    /// Per dimension: the input of each layer and the final hidden state.
    activations: Vec<Vec<Vec<f64>>>,
    /// Per dimension and layer: pre-activation before modulation, and the scale.
    pre: Vec<Vec<Vec<f64>>>,
    gains: Vec<Vec<Vec<f64>>>,
    probs: Vec<f64>,
}

impl TrainableDenoiser {
    /// Hidden weights drawn `N(0, 1 / fan_in)` from `rng`; output layer zero.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut params = vec![0.0; layout.total];
        let mut fill = |r: &Range<usize>, sd: f64, rng: &mut R| {
            for p in &mut params[r.clone()] {
                let z: f64 = StandardNormal.sample(rng);
                *p = sd * z;
            }
        };
        fill(&layout.embedding, 1.0, rng);
        if let Some(pos) = &layout.position {
            fill(pos, 0.5, rng);
        }
        for layer in &layout.layers {
            fill(&layer.weight, (1.0 / layer.input as f64).sqrt(), rng);
            fill(&layer.scale, 0.1, rng);
            fill(&layer.shift, 0.1, rng);
        }
        Ok(Self { arch, params })
    }

    pub fn from_parameters(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.parameter_count() {
            return Err(ScudError::Shape(format!(
                "{} parameters for an architecture with {}",
                params.len(),
                arch.parameter_count()
            )));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x_t: &[usize], s_t: &[u64]) -> Result<Trace> {
        let a = &self.arch;
        check_inputs(x_t, s_t, a.states, Some(a.dims))?;
        let layout = a.layout();
        let p = &self.params;
        let (e, h, dims) = (a.embed, a.hidden, a.dims);
        let own: Vec<f64> = s_t.iter().map(|&s| (s as f64).ln_1p()).collect();
        let mean_count = own.iter().sum::<f64>() / dims as f64;
        let features: Vec<[f64; FEATURES]> = own.iter().map(|&c| [c, mean_count]).collect();
        let token_vec = |d: usize| -> Vec<f64> {
            let base = layout.embedding.start + x_t[d] * e;
            let mut v = p[base..base + e].to_vec();
            if let Some(pos) = &layout.position {
                let off = pos.start + d * e;
                v.iter_mut().zip(&p[off..off + e]).for_each(|(x, y)| *x += y);
            }
            v
        };
        let tokens: Vec<Vec<f64>> = (0..dims).map(token_vec).collect();
        let mut context = vec![0.0; e];
        for t in &tokens {
            context.iter_mut().zip(t).for_each(|(c, x)| *c += x / dims as f64);
        }
        let mut activations = Vec::with_capacity(dims);
        let mut pres = Vec::with_capacity(dims);
        let mut gains_all = Vec::with_capacity(dims);
        let mut probs = Vec::with_capacity(dims * a.states);
        for d in 0..dims {
            let mut z = tokens[d].clone();
            z.extend_from_slice(&context);
            let mut acts = vec![z];
            let mut pre_l = Vec::with_capacity(a.layers);
            let mut gain_l = Vec::with_capacity(a.layers);
            for layer in &layout.layers {
                let input = acts.last().expect("layer input");
                let w = &p[layer.weight.clone()];
                let b = &p[layer.bias.clone()];
                let sc = &p[layer.scale.clone()];
                let sh = &p[layer.shift.clone()];
                let mut pre = vec![0.0; h];
                let mut gain = vec![0.0; h];
                let mut out = vec![0.0; h];
                for j in 0..h {
                    let row = &w[j * layer.input..(j + 1) * layer.input];
                    pre[j] = b[j] + row.iter().zip(input).map(|(x, y)| x * y).sum::<f64>();
                    let f = &features[d];
                    gain[j] = 1.0 + sc[j * FEATURES] * f[0] + sc[j * FEATURES + 1] * f[1];
                    let shift = sh[j * FEATURES] * f[0] + sh[j * FEATURES + 1] * f[1];
                    out[j] = (pre[j] * gain[j] + shift).tanh();
                }
                pre_l.push(pre);
                gain_l.push(gain);
                acts.push(out);
            }
            let last = acts.last().expect("final hidden");
            let wo = &p[layout.out_weight.clone()];
            let bo = &p[layout.out_bias.clone()];
            let logits: Vec<f64> = (0..a.states)
                .map(|k| bo[k] + wo[k * h..(k + 1) * h].iter().zip(last).map(|(x, y)| x * y).sum::<f64>())
                .collect();
            probs.extend(softmax(&logits));
            activations.push(acts);
            pres.push(pre_l);
            gains_all.push(gain_l);
        }
        Ok(Trace { features, activations, pre: pres, gains: gains_all, probs })
    }

    /// Prediction together with its backward pass: given
    /// `dL/d probs` (row-major `D x B`), returns `dL/d params`.
    #[allow(clippy::type_complexity)]
    pub fn predict_with_gradient(
        &self,
        x_t: &[usize],
        s_t: &[u64],
    ) -> Result<(DenoiserOutput, impl Fn(&[f64]) -> Vec<f64> + '_)> {
        let trace = self.forward(x_t, s_t)?;
        let out = DenoiserOutput::new(self.arch.states, trace.probs.clone())?;
        let x_t = x_t.to_vec();
        Ok((out, move |grad: &[f64]| self.backward(&x_t, &trace, grad)))
    }

    fn backward(&self, x_t: &[usize], trace: &Trace, grad_probs: &[f64]) -> Vec<f64> {
        let a = &self.arch;
        let layout = a.layout();
        let p = &self.params;
        let (e, h, dims, n) = (a.embed, a.hidden, a.dims, a.states);
        let mut g = vec![0.0; layout.total];
        let mut grad_tokens = vec![vec![0.0; e]; dims];
        let mut grad_context = vec![0.0; e];
        for d in 0..dims {
            let probs = &trace.probs[d * n..(d + 1) * n];
            let gp = &grad_probs[d * n..(d + 1) * n];
            let dot: f64 = probs.iter().zip(gp).map(|(x, y)| x * y).sum();
            let dlogits: Vec<f64> = probs.iter().zip(gp).map(|(q, gq)| q * (gq - dot)).collect();
            let acts = &trace.activations[d];
            let last = &acts[a.layers];
            let mut dz = vec![0.0; h];
            for k in 0..n {
                g[layout.out_bias.start + k] += dlogits[k];
                let row = layout.out_weight.start + k * h;
                for j in 0..h {
                    g[row + j] += dlogits[k] * last[j];
                    dz[j] += dlogits[k] * p[row + j];
                }
            }
            let f = trace.features[d];
            for (l, layer) in layout.layers.iter().enumerate().rev() {
                let out = &acts[l + 1];
                let input = &acts[l];
                let pre = &trace.pre[d][l];
                let gain = &trace.gains[d][l];
                let mut dinput = vec![0.0; layer.input];
                for j in 0..h {
                    let dm = dz[j] * (1.0 - out[j] * out[j]);
                    let dpre = dm * gain[j];
                    for (q, fq) in f.iter().enumerate() {
                        g[layer.scale.start + j * FEATURES + q] += dm * pre[j] * fq;
                        g[layer.shift.start + j * FEATURES + q] += dm * fq;
                    }
                    g[layer.bias.start + j] += dpre;
                    let row = layer.weight.start + j * layer.input;
                    for i in 0..layer.input {
                        g[row + i] += dpre * input[i];
                        dinput[i] += dpre * p[row + i];
                    }
                }
                dz = dinput;
            }
            // dz now holds the gradient of [token, context].
            grad_tokens[d].iter_mut().zip(&dz[..e]).for_each(|(x, y)| *x += y);
            grad_context.iter_mut().zip(&dz[e..]).for_each(|(x, y)| *x += y);
        }
        for d in 0..dims {
            for i in 0..e {
                let total = grad_tokens[d][i] + grad_context[i] / dims as f64;
                g[layout.embedding.start + x_t[d] * e + i] += total;
                if let Some(pos) = &layout.position {
                    g[pos.start + d * e + i] += total;
                }
            }
        }
        g
    }

    /// Writes the `SCUD-CKPT v1` format: header, architecture line, then the
    /// parameters as little-endian `f64`.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = format!("SCUD-CKPT v1\n{}\n", self.arch.descriptor()).into_bytes();
        for x in &self.params {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let header = lines.next().unwrap_or_default();
        if header != b"SCUD-CKPT v1" {
            return Err(ScudError::Parse { line: 1, message: "missing `SCUD-CKPT v1` header".into() });
        }
        let arch_line = lines
            .next()
            .and_then(|l| std::str::from_utf8(l).ok())
            .ok_or(ScudError::Parse { line: 2, message: "missing architecture line".into() })?;
        let arch = Architecture::parse_descriptor(arch_line)?;
        let body = lines.next().unwrap_or_default();
        if body.len() != 8 * arch.parameter_count() {
            return Err(ScudError::Parse {
                line: 3,
                message: format!("{} parameter bytes, expected {}", body.len(), 8 * arch.parameter_count()),
            });
        }
        let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
        Self::from_parameters(arch, params)
    }
}

impl Denoiser for TrainableDenoiser {
    fn num_states(&self) -> usize {
        self.arch.states
    }

    fn predict(&self, x_t: &[usize], s_t: &[u64]) -> Result<DenoiserOutput> {
        let trace = self.forward(x_t, s_t)?;
        DenoiserOutput::new(self.arch.states, trace.probs)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

/// Optimiser settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerConfig {
    Sgd { learning_rate: f64 },
    Adam { learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self::Adam { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Optimiser with its moment estimates.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u32,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, parameters: usize) -> Self {
        Self { config, first: vec![0.0; parameters], second: vec![0.0; parameters], step: 0 }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { learning_rate } => {
                params.iter_mut().zip(grad).for_each(|(p, g)| *p -= learning_rate * g);
            }
            OptimizerConfig::Adam { learning_rate, beta1, beta2, epsilon } => {
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for i in 0..params.len() {
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * grad[i];
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    params[i] -= learning_rate * m / (v.sqrt() + epsilon);
                }
            }
        }
    }
}

/// Training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

/// Batch-mean loss (nats per dimension) at each step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingReport {
    pub losses: Vec<f64>,
}

/// One draw of the weighted event loss and its parameter gradient.
pub fn sample_loss_gradient<R: Rng + ?Sized>(
    model: &TrainableDenoiser,
    process: &EventProcess,
    schedule: &RateSchedule,
    x0: &[usize],
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    let dims = x0.len();
    let n = model.arch.states;
    let t: f64 = rng.random();
    let tau = schedule.cumulative(t);
    let s_t: Vec<u64> = (0..dims).map(|_| sample_poisson(process.rate() * tau, rng)).collect();
    if s_t.iter().all(|&s| s == 0) {
        return Ok((0.0, vec![0.0; model.params.len()]));
    }
    let x_t = loss::forward_noise(process, x0, &s_t, rng)?;
    let (out, backward) = model.predict_with_gradient(&x_t, &s_t)?;
    let mut value = 0.0;
    let mut grad_probs = vec![0.0; dims * n];
    for d in (0..dims).filter(|&d| s_t[d] > 0) {
        let w = loss::event_weight(schedule, t, s_t[d]) / dims as f64;
        let (kl, g) = loss::event_kl_with_gradient(process, x0[d], x_t[d], s_t[d], out.row(d))?;
        if !kl.is_finite() {
            return Err(ScudError::NonFinite {
                sample: 0,
                dim: d,
                detail: format!("infinite event loss at t = {t:.6}, {} events", s_t[d]),
            });
        }
        value += w * kl;
        grad_probs[d * n..(d + 1) * n].iter_mut().zip(&g).for_each(|(a, b)| *a = w * b);
    }
    Ok((value, backward(&grad_probs)))
}

/// Minimises the Monte Carlo event loss over `data` by minibatch steps.
///
/// Batch elements are evaluated in parallel, each with its own generator
/// seeded from `rng`, and reduced in a fixed order.
pub fn train<R: Rng + ?Sized>(
    model: &mut TrainableDenoiser,
    data: &[Vec<usize>],
    process: &EventProcess,
    schedule: &RateSchedule,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainingReport> {
    if config.batch_size == 0 {
        return Err(ScudError::InvalidArgument("batch size must be at least one".into()));
    }
    if data.is_empty() && config.steps > 0 {
        return Err(ScudError::InvalidArgument("no training data".into()));
    }
    let mut optimizer = Optimizer::new(config.optimizer, model.params.len());
    let mut report = TrainingReport::default();
    for step in 0..config.steps {
        let draws: Vec<(usize, u64)> =
            (0..config.batch_size).map(|_| (rng.random_range(0..data.len()), rng.random::<u64>())).collect();
        let current = &*model;
        let results: Vec<Result<(f64, Vec<f64>)>> = draws
            .par_iter()
            .map(|&(i, seed)| sample_loss_gradient(current, process, schedule, &data[i], &mut crate::rng::seeded(seed)))
            .collect();
        let mut total = 0.0;
        let mut grad = vec![0.0; model.params.len()];
        for r in results {
            let (v, g) = r.map_err(|e| match e {
                ScudError::NonFinite { dim, detail, .. } => ScudError::NonFinite { sample: step, dim, detail },
                other => other,
            })?;
            total += v;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let scale = 1.0 / config.batch_size as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(ScudError::NonFinite { sample: step, dim: 0, detail: "non-finite gradient".into() });
        }
        optimizer.apply(&mut model.params, &grad);
        report.losses.push(total * scale);
    }
    Ok(report)
}

/// Checks that every row of a prediction is a distribution.
pub fn check_output(out: &DenoiserOutput) -> bool {
    out.as_slice().chunks(out.num_states()).all(|row| {
        let s: f64 = row.iter().sum();
        row.iter().all(|&x| x >= 0.0) && (s - 1.0).abs() <= TOLERANCES.probability_sum
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::ProcessSpec;
    use crate::rng::seeded;

    fn uniform_process(states: usize, gamma: f64) -> Arc<EventProcess> {
        Arc::new(ProcessSpec::Uniform { states }.build(gamma).unwrap())
    }

    /// Brute-force oracle over the full enumeration.
    fn brute_force(toy: &ToyDistribution, process: &EventProcess, x_t: &[usize], s_t: &[u64]) -> Vec<Vec<f64>> {
        let b = toy.num_states();
        let dims = toy.num_dims();
        let mut rows = vec![vec![0.0; b]; dims];
        for (x0, p) in toy.enumerate().unwrap() {
            for d in 0..dims {
                let mut w = p;
                for e in (0..dims).filter(|&e| e != d) {
                    w *= process.transition_row(x0[e], s_t[e])[x_t[e]];
                }
                rows[d][x0[d]] += w;
            }
        }
        for row in rows.iter_mut() {
            let t: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= t);
        }
        rows
    }

    #[test]
    fn single_dimension_oracle_is_the_prior() {
        let toy = ToyDistribution::factorized(vec![vec![0.2, 0.5, 0.3]]).unwrap();
        let oracle = OracleDenoiser::new(toy, uniform_process(3, 0.5)).unwrap();
        let out = oracle.predict(&[2], &[4]).unwrap();
        assert_eq!(out.row(0), &[0.2, 0.5, 0.3]);
    }

    #[test]
    fn perfectly_correlated_pair_reads_the_clean_neighbour() {
        let toy = ToyDistribution::correlated_pair(3, 1.0).unwrap();
        let oracle = OracleDenoiser::new(toy, uniform_process(3, 0.5)).unwrap();
        let out = oracle.predict(&[0, 2], &[3, 0]).unwrap();
        assert_eq!(out.row(0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn oracle_matches_brute_force() {
        let process = uniform_process(3, 0.7);
        let chain =
            ToyDistribution::markov_chain(vec![0.5, 0.3, 0.2], vec![0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.25, 0.25, 0.5], 4)
                .unwrap();
        let pair = ToyDistribution::correlated_pair(3, 0.7).unwrap();
        let mut rng = seeded(2);
        for toy in [chain, pair] {
            let oracle = OracleDenoiser::new(toy.clone(), process.clone()).unwrap();
            for _ in 0..20 {
                let dims = toy.num_dims();
                let x_t: Vec<usize> = (0..dims).map(|_| rng.random_range(0..3)).collect();
                let s_t: Vec<u64> = (0..dims).map(|_| rng.random_range(0..4)).collect();
                let want = brute_force(&toy, &process, &x_t, &s_t);
                let got = oracle.predict(&x_t, &s_t).unwrap();
                for d in 0..dims {
                    for b in 0..3 {
                        assert!((got.row(d)[b] - want[d][b]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn untrained_network_is_uniform() {
        let arch = Architecture::new(4, 3);
        let net = TrainableDenoiser::new(arch, &mut seeded(0)).unwrap();
        let out = net.predict(&[0, 3, 1], &[0, 2, 9]).unwrap();
        assert!(out.as_slice().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    fn randomised(arch: Architecture, seed: u64) -> TrainableDenoiser {
        let mut net = TrainableDenoiser::new(arch, &mut seeded(seed)).unwrap();
        let mut rng = seeded(seed + 100);
        for p in net.parameters_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p += 0.3 * z;
        }
        net
    }

    #[test]
    fn symmetric_network_commutes_with_permutations() {
        let net = randomised(Architecture::new(3, 3), 5);
        let a = net.predict(&[0, 1, 2], &[1, 0, 4]).unwrap();
        let b = net.predict(&[2, 1, 0], &[4, 0, 1]).unwrap();
        for (i, j) in [(0, 2), (1, 1), (2, 0)] {
            for k in 0..3 {
                assert!((a.row(i)[k] - b.row(j)[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut arch = Architecture::new(3, 2);
        arch.positional = true;
        arch.embed = 4;
        arch.hidden = 5;
        let net = randomised(arch, 7);
        let weights: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
        let objective = |n: &TrainableDenoiser| -> f64 {
            let out = n.predict(&[1, 2], &[3, 0]).unwrap();
            out.as_slice().iter().zip(&weights).map(|(p, w)| w * p.ln()).sum()
        };
        let (out, backward) = net.predict_with_gradient(&[1, 2], &[3, 0]).unwrap();
        let grad_probs: Vec<f64> = out.as_slice().iter().zip(&weights).map(|(p, w)| w / p).collect();
        let grad = backward(&grad_probs);
        let mut probe = net.clone();
        for i in 0..net.parameters().len() {
            let h = 1e-5;
            probe.parameters_mut()[i] = net.parameters()[i] + h;
            let up = objective(&probe);
            probe.parameters_mut()[i] = net.parameters()[i] - h;
            let down = objective(&probe);
            probe.parameters_mut()[i] = net.parameters()[i];
            let fd = (up - down) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / scale < 1e-4, "parameter {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut arch = Architecture::new(5, 4);
        arch.positional = true;
        let net = randomised(arch, 9);
        let bytes = net.to_checkpoint();
        assert!(bytes.starts_with(b"SCUD-CKPT v1\n"));
        let back = TrainableDenoiser::from_checkpoint(&bytes).unwrap();
        assert_eq!(back, net);
        assert!(TrainableDenoiser::from_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn zero_steps_leave_parameters_alone() {
        let process = uniform_process(2, 0.5);
        let schedule = crate::schedule::fit_schedule(&process, &[0.5, 0.5], 0.01).unwrap();
        let mut net = TrainableDenoiser::new(Architecture::new(2, 2), &mut seeded(1)).unwrap();
        let before = net.clone();
        let config = TrainConfig { steps: 0, batch_size: 4, optimizer: OptimizerConfig::adam(1e-2) };
        let report = train(&mut net, &[vec![0, 1]], &process, &schedule, &config, &mut seeded(2)).unwrap();
        assert!(report.losses.is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn sample_gradient_matches_finite_differences() {
        let process = uniform_process(3, 0.7);
        let schedule = crate::schedule::fit_schedule(&process, &[0.4, 0.3, 0.3], 0.01).unwrap();
        let mut arch = Architecture::new(3, 3);
        arch.embed = 3;
        arch.hidden = 4;
        let net = randomised(arch, 3);
        let x0 = [0, 2, 1];
        let seed = (0..)
            .find(|&k| sample_loss_gradient(&net, &process, &schedule, &x0, &mut seeded(k)).unwrap().0 > 0.0)
            .unwrap();
        let value =
            |n: &TrainableDenoiser| sample_loss_gradient(n, &process, &schedule, &x0, &mut seeded(seed)).unwrap();
        let (_, grad) = value(&net);
        let mut probe = net.clone();
        for i in (0..net.parameters().len()).step_by(7) {
            let h = 1e-5;
            probe.parameters_mut()[i] = net.parameters()[i] + h;
            let up = value(&probe).0;
            probe.parameters_mut()[i] = net.parameters()[i] - h;
            let down = value(&probe).0;
            probe.parameters_mut()[i] = net.parameters()[i];
            let fd = (up - down) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / scale < 1e-4, "parameter {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn mixture_and_indicator_wrappers() {
        let toy = ToyDistribution::correlated_pair(2, 1.0).unwrap();
        let process = uniform_process(2, 0.5);
        let oracle = OracleDenoiser::new(toy, process).unwrap();
        let mixed = MixedDenoiser { inner: &oracle, mix: 0.1 };
        let out = mixed.predict(&[1, 1], &[1, 0]).unwrap();
        assert!((out.row(0)[1] - 0.95).abs() < 1e-12);
        let ind = EventIndicator(&oracle);
        assert_eq!(ind.predict(&[0, 1], &[5, 7]).unwrap(), oracle.predict(&[0, 1], &[1, 1]).unwrap());
    }
}

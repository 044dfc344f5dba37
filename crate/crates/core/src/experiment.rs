//! End-to-end runs driven by a [`Config`] file.
//!
//! Every run writes its outputs atomically into one directory together with
//! a snapshot of the effective configuration (`config.txt`). All randomness is
//! derived from `seed` through the streams in [`crate::rng::streams`].
//!
//! Recognised keys, with defaults:
//!
//! ```text
//! seed = 0
//! threads = 1
//! data.toy = correlated_pair        # uniform | factorized | markov | correlated_pair
//! data.path = ...                   # dataset file, replaces data.toy
//! data.states = 3
//! data.dims = 2
//! data.marginals = 0.5, 0.3, 0.2    # factorized: one vector, shared by all dimensions
//! data.stay = 0.8                   # markov: probability of repeating the previous token
//! data.agreement = 0.7              # correlated_pair
//! data.size = 1000
//! process.kind = uniform            # uniform | masking | gaussian | blosum | graph | file
//! process.states = <data states, plus one for masking>
//! process.gamma = 1.0
//! process.bandwidth = 200
//! process.form = normalized         # normalized | raw
//! process.matrix = ...              # file: generator in the matrix format; blosum: pair table
//! process.frequent = ...            # graph: size of the frequent subset (required)
//! process.neighbours = 10
//! process.temperature = 0.3
//! process.mix_weight = 0.4
//! schedule.epsilon = 0.01
//! schedule.points = 512
//! model.kind = network              # network | oracle
//! model.embed = 16
//! model.hidden = 32
//! model.layers = 2
//! model.positional = false
//! model.checkpoint = ...            # default: <out>/checkpoint.bin when present
//! train.steps = 200
//! train.batch_size = 16
//! train.optimizer = adam            # adam | sgd
//! train.learning_rate = 0.01
//! elbo.samples = 256
//! sample.count = 1000
//! sample.budget = 32
//! diagnose.paths = 200
//! diagnose.bins = 64
//! diagnose.baseline = false
//! diagnose.steps_per_bin = 4
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::config::Config;
use crate::ctmc::{EventProcess, GeneratorMatrix};
use crate::denoiser::{train, Architecture, Denoiser, OptimizerConfig, OracleDenoiser, TrainConfig, TrainableDenoiser};
use crate::error::{Result, ScudError};
use crate::io::{write_atomic, MatrixFile};
use crate::loss::{scud_elbo_sample, LossEstimate};
use crate::processes::{
    build_blosum, ring_similarity, synthetic_pair_table, GaussianForm, ProcessSpec, SparseGraphSpec, DEFAULT_BANDWIDTH,
    DEFAULT_MIX_WEIGHT, DEFAULT_NEIGHBOURS, DEFAULT_TEMPERATURE,
};
use crate::rng::{stream_rng, streams};
use crate::sampler::{classical_rate_diagnostic, rate_diagnostic, sample_many, RateBin};
use crate::schedule::{fit_schedule, RateSchedule, DEFAULT_EPSILON};
use crate::toy_data::{Dataset, ToyDistribution};

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "threads",
    "data.toy",
    "data.path",
    "data.states",
    "data.dims",
    "data.marginals",
    "data.stay",
    "data.agreement",
    "data.size",
    "process.kind",
    "process.states",
    "process.gamma",
    "process.bandwidth",
    "process.form",
    "process.matrix",
    "process.frequent",
    "process.neighbours",
    "process.temperature",
    "process.mix_weight",
    "schedule.epsilon",
    "schedule.points",
    "model.kind",
    "model.embed",
    "model.hidden",
    "model.layers",
    "model.positional",
    "model.checkpoint",
    "train.steps",
    "train.batch_size",
    "train.optimizer",
    "train.learning_rate",
    "elbo.samples",
    "sample.count",
    "sample.budget",
    "diagnose.paths",
    "diagnose.bins",
    "diagnose.baseline",
    "diagnose.steps_per_bin",
];

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SNAPSHOT_FILE: &str = "config.txt";

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Toy(ToyDistribution),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Network,
    Oracle,
}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub threads: usize,
    pub data: DataSource,
    pub data_size: usize,
    pub process_kind: String,
    pub gamma: f64,
    pub epsilon: f64,
    pub schedule_points: usize,
    pub model: ModelKind,
    pub architecture: (usize, usize, usize, bool),
    pub checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    pub elbo_samples: usize,
    pub sample_count: usize,
    pub sample_budget: usize,
    pub diagnose_paths: usize,
    pub diagnose_bins: usize,
    pub diagnose_baseline: bool,
    pub diagnose_steps_per_bin: usize,
    /// Source keys, kept for process construction and the snapshot.
    pub source: Config,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

fn positive(cfg: &Config, key: &str, default: usize) -> Result<usize> {
    let v = cfg.get_or(key, default)?;
    if v == 0 {
        return Err(cfg.error(key, "must be positive"));
    }
    Ok(v)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Config::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_config(cfg, &base)
    }

    pub fn from_config(cfg: Config, base_dir: &Path) -> Result<Self> {
        if let Some(key) = cfg.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(cfg.error(key, "unknown key"));
        }
        let resolve = |p: &str| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };

        let data = match cfg.raw("data.path") {
            Some(p) => {
                if cfg.contains("data.toy") {
                    return Err(cfg.error("data.path", "give either data.path or data.toy"));
                }
                DataSource::File(resolve(p))
            }
            None => DataSource::Toy(toy_from_config(&cfg)?),
        };

        let gamma = cfg.get_or("process.gamma", 1.0)?;
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(cfg.error("process.gamma", "must lie in (0, 1]"));
        }
        let epsilon = cfg.get_or("schedule.epsilon", DEFAULT_EPSILON)?;
        let model = match cfg.raw("model.kind").unwrap_or("network") {
            "network" => ModelKind::Network,
            "oracle" => ModelKind::Oracle,
            other => return Err(cfg.error("model.kind", format!("unknown model `{other}`"))),
        };
        if model == ModelKind::Oracle && matches!(data, DataSource::File(_)) {
            return Err(cfg.error("model.kind", "the oracle needs a toy distribution, not a data file"));
        }
        let learning_rate = cfg.get_or("train.learning_rate", 0.01)?;
        let optimizer = match cfg.raw("train.optimizer").unwrap_or("adam") {
            "adam" => OptimizerConfig::adam(learning_rate),
            "sgd" => OptimizerConfig::Sgd { learning_rate },
            other => return Err(cfg.error("train.optimizer", format!("unknown optimizer `{other}`"))),
        };
        let kind = cfg.raw("process.kind").unwrap_or("uniform").to_string();
        if !["uniform", "masking", "gaussian", "blosum", "graph", "file"].contains(&kind.as_str()) {
            return Err(cfg.error("process.kind", format!("unknown process `{kind}`")));
        }
        Ok(Self {
            seed: cfg.get_or("seed", 0u64)?,
            threads: positive(&cfg, "threads", 1)?,
            data,
            data_size: positive(&cfg, "data.size", 1000)?,
            process_kind: kind,
            gamma,
            epsilon,
            schedule_points: cfg.get_or("schedule.points", 512usize)?.max(2),
            model,
            architecture: (
                positive(&cfg, "model.embed", 16)?,
                positive(&cfg, "model.hidden", 32)?,
                positive(&cfg, "model.layers", 2)?,
                cfg.get_or("model.positional", false)?,
            ),
            checkpoint: cfg.raw("model.checkpoint").map(resolve),
            train: TrainConfig {
                steps: cfg.get_or("train.steps", 200usize)?,
                batch_size: positive(&cfg, "train.batch_size", 16)?,
                optimizer,
            },
            elbo_samples: positive(&cfg, "elbo.samples", 256)?,
            sample_count: positive(&cfg, "sample.count", 1000)?,
            sample_budget: positive(&cfg, "sample.budget", 32)?,
            diagnose_paths: positive(&cfg, "diagnose.paths", 200)?,
            diagnose_bins: positive(&cfg, "diagnose.bins", 64)?,
            diagnose_baseline: cfg.get_or("diagnose.baseline", false)?,
            diagnose_steps_per_bin: positive(&cfg, "diagnose.steps_per_bin", 4)?,
            source: cfg,
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// Replaces the seed, as `--seed` does.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.source.set("seed", seed);
        self
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| ScudError::InvalidArgument(format!("thread pool: {e}")))
    }

    /// Training sequences: the data file, or `data.size` draws from the toy.
    pub fn dataset(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::File(p) => {
                let data = Dataset::load(p).map_err(|e| match e {
                    ScudError::Parse { line, message } => {
                        ScudError::Parse { line, message: format!("{}: {message}", p.display()) }
                    }
                    other => other,
                })?;
                if data.sequences.is_empty() {
                    return Err(ScudError::InvalidArgument(format!("{} holds no sequences", p.display())));
                }
                Ok(data)
            }
            DataSource::Toy(toy) => {
                let mut rng = stream_rng(self.seed, streams::DATA, 0);
                Ok(Dataset::sample_from(toy, self.data_size, &mut rng))
            }
        }
    }

    pub fn toy(&self) -> Option<&ToyDistribution> {
        match &self.data {
            DataSource::Toy(t) => Some(t),
            DataSource::File(_) => None,
        }
    }

    /// Forward process sized for `data`.
    pub fn process(&self, data: &Dataset) -> Result<EventProcess> {
        let cfg = &self.source;
        let default_states = if self.process_kind == "masking" { data.states + 1 } else { data.states };
        let states: usize = cfg.get_or("process.states", default_states)?;
        let needed = if self.process_kind == "masking" { data.states + 1 } else { data.states };
        let process = match self.process_kind.as_str() {
            "uniform" => ProcessSpec::Uniform { states }.build(self.gamma),
            "masking" => ProcessSpec::Masking { states }.build(self.gamma),
            "gaussian" => {
                let form = match cfg.raw("process.form").unwrap_or("normalized") {
                    "normalized" => GaussianForm::Normalized,
                    "raw" => GaussianForm::Raw,
                    other => return Err(cfg.error("process.form", format!("unknown form `{other}`"))),
                };
                let bandwidth = cfg.get_or("process.bandwidth", DEFAULT_BANDWIDTH)?;
                ProcessSpec::GaussianBand { states, bandwidth, form }.build(self.gamma)
            }
            "blosum" => {
                let table = match cfg.raw("process.matrix") {
                    Some(p) => MatrixFile::load(&self.resolve(p))?.densify(),
                    None => synthetic_pair_table(),
                };
                let c = (table.len() as f64).sqrt().round() as usize;
                let blosum = build_blosum(&table, None, &vec![true; c])?;
                EventProcess::from_generator(&blosum.generator, self.gamma)
            }
            "graph" => {
                let f: usize = cfg
                    .get("process.frequent")?
                    .ok_or_else(|| cfg.error("process.frequent", "required for the graph process"))?;
                if f < 2 || f > states {
                    return Err(cfg.error("process.frequent", format!("must lie in [2, {states}]")));
                }
                // Smoothed token counts over the frequent subset.
                let mut freq = vec![1.0; f];
                for x in data.sequences.iter().flatten().filter(|&&x| x < f) {
                    freq[*x] += 1.0;
                }
                let total: f64 = freq.iter().sum();
                freq.iter_mut().for_each(|p| *p /= total);
                let spec = SparseGraphSpec {
                    vocabulary: states,
                    similarities: ring_similarity(f),
                    neighbours: cfg.get_or("process.neighbours", DEFAULT_NEIGHBOURS)?,
                    temperature: cfg.get_or("process.temperature", DEFAULT_TEMPERATURE)?,
                    mix_weight: cfg.get_or("process.mix_weight", DEFAULT_MIX_WEIGHT)?,
                    frequencies: freq,
                };
                ProcessSpec::SparseGraph(spec).build(self.gamma)
            }
            "file" => {
                let path =
                    cfg.raw("process.matrix").ok_or_else(|| cfg.error("process.kind", "file needs process.matrix"))?;
                match MatrixFile::load(&self.resolve(path))? {
                    MatrixFile::Dense { size, entries } => {
                        EventProcess::from_generator(&GeneratorMatrix::new(size, entries)?, self.gamma)
                    }
                    MatrixFile::Sparse(m) => EventProcess::from_sparse_generator(&m, self.gamma),
                }
            }
            _ => unreachable!("kind validated on load"),
        }?;
        if process.num_states() < needed {
            return Err(cfg
                .error("process.states", format!("process has {} states, data needs {needed}", process.num_states())));
        }
        Ok(process)
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            self.base_dir.join(p)
        }
    }

    /// Schedule fitted to the pooled token law of the data.
    pub fn schedule(&self, process: &EventProcess, data: &Dataset) -> Result<RateSchedule> {
        let mut p0 = vec![0.0; process.num_states()];
        match self.toy() {
            Some(toy) => {
                for m in toy.marginals() {
                    for (p, q) in p0.iter_mut().zip(m) {
                        *p += q;
                    }
                }
            }
            None => {
                for &x in data.sequences.iter().flatten() {
                    p0[x] += 1.0;
                }
            }
        }
        let total: f64 = p0.iter().sum();
        p0.iter_mut().for_each(|p| *p /= total);
        fit_schedule(process, &p0, self.epsilon)
    }

    fn architecture_for(&self, process: &EventProcess, data: &Dataset) -> Architecture {
        let (embed, hidden, layers, positional) = self.architecture;
        Architecture { states: process.num_states(), dims: data.dims, embed, hidden, layers, positional }
    }

    /// Fresh network from the `INIT` stream.
    pub fn fresh_network(&self, process: &EventProcess, data: &Dataset) -> Result<TrainableDenoiser> {
        let mut rng = stream_rng(self.seed, streams::INIT, 0);
        TrainableDenoiser::new(self.architecture_for(process, data), &mut rng)
    }

    /// The denoiser for evaluation runs: oracle, explicit checkpoint,
    /// `<out>/checkpoint.bin`, or a fresh network, in that order.
    pub fn denoiser(&self, process: &Arc<EventProcess>, data: &Dataset, out: &Path) -> Result<Box<dyn Denoiser>> {
        if self.model == ModelKind::Oracle {
            let toy = self.toy().expect("oracle requires a toy, checked on load").clone();
            return Ok(Box::new(OracleDenoiser::new(toy, process.clone())?));
        }
        let path = self.checkpoint.clone().or_else(|| {
            let p = out.join(CHECKPOINT_FILE);
            p.exists().then_some(p)
        });
        let net = match path {
            Some(p) => {
                let bytes = std::fs::read(&p).map_err(|e| ScudError::Io(format!("{}: {e}", p.display())))?;
                let net = TrainableDenoiser::from_checkpoint(&bytes)?;
                let arch = net.architecture();
                if arch.states != process.num_states() || arch.dims != data.dims {
                    return Err(ScudError::Shape(format!(
                        "checkpoint {} is for {} states x {} dims, run needs {} x {}",
                        p.display(),
                        arch.states,
                        arch.dims,
                        process.num_states(),
                        data.dims
                    )));
                }
                net
            }
            None => self.fresh_network(process, data)?,
        };
        Ok(Box::new(net))
    }

    fn snapshot(&self, out: &Path) -> Result<()> {
        write_atomic(&out.join(SNAPSHOT_FILE), self.source.to_text().as_bytes())
    }
}

fn toy_from_config(cfg: &Config) -> Result<ToyDistribution> {
    let states: usize = cfg.get_or("data.states", 3)?;
    let dims: usize = cfg.get_or("data.dims", 2)?;
    let kind = cfg.raw("data.toy").unwrap_or("correlated_pair");
    let wrap = |key: &str, e: ScudError| cfg.error(key, e);
    match kind {
        "uniform" => ToyDistribution::uniform(states, dims).map_err(|e| wrap("data.states", e)),
        "factorized" => {
            let m = cfg.list_or("data.marginals", vec![1.0 / states as f64; states])?;
            if cfg.contains("data.marginals") && cfg.contains("data.states") && m.len() != states {
                return Err(cfg.error("data.marginals", format!("{} entries, data.states is {states}", m.len())));
            }
            ToyDistribution::factorized(vec![m; dims]).map_err(|e| wrap("data.marginals", e))
        }
        "markov" => {
            let stay: f64 = cfg.get_or("data.stay", 0.8)?;
            let other = (1.0 - stay) / (states as f64 - 1.0);
            let transition =
                (0..states * states).map(|k| if k / states == k % states { stay } else { other }).collect();
            ToyDistribution::markov_chain(vec![1.0 / states as f64; states], transition, dims)
                .map_err(|e| wrap("data.stay", e))
        }
        "correlated_pair" => {
            if cfg.contains("data.dims") && dims != 2 {
                return Err(cfg.error("data.dims", "correlated_pair has two dimensions"));
            }
            ToyDistribution::correlated_pair(states, cfg.get_or("data.agreement", 0.7)?)
                .map_err(|e| wrap("data.agreement", e))
        }
        other => Err(cfg.error("data.toy", format!("unknown toy `{other}`"))),
    }
}

struct Setup {
    data: Dataset,
    process: Arc<EventProcess>,
    schedule: RateSchedule,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let data = cfg.dataset()?;
    let process = Arc::new(cfg.process(&data)?);
    let schedule = cfg.schedule(&process, &data)?;
    Ok(Setup { data, process, schedule })
}

/// Trains a network; writes `checkpoint.bin` and `loss.csv` (step,loss).
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<f64>> {
    if cfg.model == ModelKind::Oracle {
        return Err(ScudError::InvalidArgument("model.kind = oracle has nothing to train".into()));
    }
    cfg.pool()?.install(|| {
        let Setup { data, process, schedule } = setup(cfg)?;
        let mut net = cfg.fresh_network(&process, &data)?;
        let mut rng = stream_rng(cfg.seed, streams::TRAIN, 0);
        let report = train(&mut net, &data.sequences, &process, &schedule, &cfg.train, &mut rng)?;
        let mut csv = String::from("step,loss\n");
        for (i, l) in report.losses.iter().enumerate() {
            let _ = writeln!(csv, "{},{}", i + 1, l);
        }
        cfg.snapshot(out)?;
        write_atomic(&out.join(CHECKPOINT_FILE), &net.to_checkpoint())?;
        write_atomic(&out.join("loss.csv"), csv.as_bytes())?;
        Ok(report.losses)
    })
}

/// Monte Carlo loss over the data; writes `elbo.csv` (one row per draw) and
/// `elbo_report.txt` (nats and bits per dimension).
///
/// Draw `i` uses the `i`-th data sequence cyclically and a stratified time.
/// Absorbing processes skip the convergence term, which is infinite there.
pub fn run_elbo(cfg: &ExperimentConfig, out: &Path) -> Result<LossEstimate> {
    cfg.pool()?.install(|| {
        let Setup { data, process, schedule } = setup(cfg)?;
        let denoiser = cfg.denoiser(&process, &data, out)?;
        let with_convergence = cfg.process_kind != "masking";
        let n = cfg.elbo_samples;
        let records = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(cfg.seed, streams::ELBO, i as u64);
                let t = (i as f64 + rng.random::<f64>()) / n as f64;
                let x0 = &data.sequences[i % data.sequences.len()];
                scud_elbo_sample(&process, &schedule, &denoiser, x0, t, with_convergence, &mut rng).map_err(|e| match e {
                    ScudError::NonFinite { dim, detail, .. } => ScudError::NonFinite { sample: i, dim, detail },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let estimate = LossEstimate::from_records(records);
        let mut csv = String::from("sample_index,t,denoising_term,convergence_term,total\n");
        for (i, r) in estimate.records.iter().enumerate() {
            let _ = writeln!(csv, "{i},{},{},{},{}", r.t, r.denoising, r.convergence, r.total);
        }
        let ln2 = std::f64::consts::LN_2;
        let report = format!(
            "samples = {}\nnats_per_dim = {}\nbits_per_dim = {}\nstd_error_nats = {}\ndenoising_nats = {}\nconvergence_nats = {}\nconvergence_included = {}\n",
            estimate.samples,
            estimate.total,
            estimate.bits_per_dimension(),
            estimate.std_error,
            estimate.denoising,
            estimate.convergence,
            with_convergence,
        );
        debug_assert!((estimate.bits_per_dimension() - estimate.total / ln2).abs() < 1e-12);
        cfg.snapshot(out)?;
        write_atomic(&out.join("elbo.csv"), csv.as_bytes())?;
        write_atomic(&out.join("elbo_report.txt"), report.as_bytes())?;
        Ok(estimate)
    })
}

/// Draws `sample.count` sequences with `sample.budget` denoiser calls each;
/// writes `samples.txt`, one sequence per line.
pub fn run_sample(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Vec<usize>>> {
    cfg.pool()?.install(|| {
        let Setup { data, process, schedule } = setup(cfg)?;
        let denoiser = cfg.denoiser(&process, &data, out)?;
        let samples =
            sample_many(&process, &schedule, &denoiser, data.dims, cfg.sample_budget, cfg.sample_count, cfg.seed)?;
        let mut text = String::new();
        for s in &samples {
            let line: Vec<String> = s.tokens.iter().map(usize::to_string).collect();
            text.push_str(&line.join(" "));
            text.push('\n');
        }
        cfg.snapshot(out)?;
        write_atomic(&out.join("samples.txt"), text.as_bytes())?;
        Ok(samples.into_iter().map(|s| s.tokens).collect())
    })
}

/// Fitted schedule on `schedule.points` evenly spaced times in [0, 1];
/// writes `schedule.csv` (t,cumulative,rate,expected_mi).
pub fn run_schedule(cfg: &ExperimentConfig, out: &Path) -> Result<RateSchedule> {
    let Setup { schedule, .. } = setup(cfg)?;
    let n = cfg.schedule_points;
    let mut csv = String::from("t,cumulative,rate,expected_mi\n");
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        let b = schedule.cumulative(t);
        let _ = writeln!(csv, "{t},{b},{},{}", schedule.rate(t), schedule.expected_mi(b));
    }
    cfg.snapshot(out)?;
    write_atomic(&out.join("schedule.csv"), csv.as_bytes())?;
    Ok(schedule)
}

fn rate_csv(bins: &[RateBin]) -> String {
    let mut csv = String::from("bin_t,forward_rate,backward_rate,diff\n");
    for b in bins {
        let _ = writeln!(csv, "{},{},{},{}", b.t, b.forward_rate, b.backward_rate, b.difference());
    }
    csv
}

/// Forward and backward rates per time bin; writes `diagnose.csv`, plus
/// `diagnose_baseline.csv` for the schedule-free reversal when enabled.
pub fn run_diagnose(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RateBin>> {
    cfg.pool()?.install(|| {
        let Setup { data, process, schedule } = setup(cfg)?;
        let denoiser = cfg.denoiser(&process, &data, out)?;
        let mut rng = stream_rng(cfg.seed, streams::DIAGNOSE, 0);
        let bins = rate_diagnostic(
            &process,
            &schedule,
            &denoiser,
            &data.sequences,
            cfg.diagnose_paths,
            cfg.diagnose_bins,
            &mut rng,
        )?;
        cfg.snapshot(out)?;
        write_atomic(&out.join("diagnose.csv"), rate_csv(&bins).as_bytes())?;
        if cfg.diagnose_baseline {
            let mut rng = stream_rng(cfg.seed, streams::DIAGNOSE, 1);
            let baseline = classical_rate_diagnostic(
                &process,
                &schedule,
                &denoiser,
                &data.sequences,
                cfg.diagnose_paths,
                cfg.diagnose_bins,
                cfg.diagnose_steps_per_bin,
                &mut rng,
            )?;
            write_atomic(&out.join("diagnose_baseline.csv"), rate_csv(&baseline).as_bytes())?;
        }
        Ok(bins)
    })
}

/// Writes `data.txt`: `data.size` draws from the configured toy.
pub fn run_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    if cfg.toy().is_none() {
        return Err(ScudError::InvalidArgument("gen-data needs a toy distribution, not data.path".into()));
    }
    let data = cfg.dataset()?;
    cfg.snapshot(out)?;
    write_atomic(&out.join("data.txt"), data.to_text().as_bytes())?;
    Ok(data)
}

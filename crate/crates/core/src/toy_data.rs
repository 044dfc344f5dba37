//! Small synthetic datasets with exact likelihoods.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::ctmc::sample_categorical;
use crate::error::{Result, ScudError};
use crate::tolerances::TOLERANCES;

/// Distribution over `D` tokens from a vocabulary of `B`.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyDistribution {
    /// Independent dimensions, one probability vector each.
    Factorized { marginals: Vec<Vec<f64>> },
    /// `x^0 ~ initial`, `x^{d+1} ~ transition[x^d]`.
    MarkovChain { initial: Vec<f64>, transition: Vec<f64>, length: usize },
    /// Two tokens: `x^0` uniform, `x^1 = x^0` with probability `agreement`,
    /// otherwise uniform over the vocabulary.
    CorrelatedPair { states: usize, agreement: f64 },
}

impl ToyDistribution {
    pub fn factorized(marginals: Vec<Vec<f64>>) -> Result<Self> {
        let toy = Self::Factorized { marginals };
        toy.validate()?;
        Ok(toy)
    }

    pub fn uniform(states: usize, dims: usize) -> Result<Self> {
        Self::factorized(vec![vec![1.0 / states as f64; states]; dims])
    }

    pub fn markov_chain(initial: Vec<f64>, transition: Vec<f64>, length: usize) -> Result<Self> {
        let toy = Self::MarkovChain { initial, transition, length };
        toy.validate()?;
        Ok(toy)
    }

    pub fn correlated_pair(states: usize, agreement: f64) -> Result<Self> {
        let toy = Self::CorrelatedPair { states, agreement };
        toy.validate()?;
        Ok(toy)
    }

    fn validate(&self) -> Result<()> {
        let check = |p: &[f64], what: &str| -> Result<()> {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > TOLERANCES.probability_sum {
                return Err(ScudError::InvalidArgument(format!("{what} is not a probability vector")));
            }
            Ok(())
        };
        match self {
            Self::Factorized { marginals } => {
                let b = marginals.first().map(Vec::len).unwrap_or(0);
                if marginals.is_empty() || b < 2 {
                    return Err(ScudError::InvalidArgument("need at least one dimension and two states".into()));
                }
                for (d, m) in marginals.iter().enumerate() {
                    if m.len() != b {
                        return Err(ScudError::Shape(format!("marginal {d} has {} states, expected {b}", m.len())));
                    }
                    check(m, &format!("marginal {d}"))?;
                }
            }
            Self::MarkovChain { initial, transition, length } => {
                let b = initial.len();
                if b < 2 || *length == 0 {
                    return Err(ScudError::InvalidArgument("need at least one dimension and two states".into()));
                }
                if transition.len() != b * b {
                    return Err(ScudError::Shape(format!(
                        "transition has {} entries for {b} states",
                        transition.len()
                    )));
                }
                check(initial, "initial distribution")?;
                for i in 0..b {
                    check(&transition[i * b..(i + 1) * b], &format!("transition row {i}"))?;
                }
            }
            Self::CorrelatedPair { states, agreement } => {
                if *states < 2 || !(0.0..=1.0).contains(agreement) {
                    return Err(ScudError::InvalidArgument(format!(
                        "correlated pair needs states >= 2 and agreement in [0, 1], got {states}, {agreement}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        match self {
            Self::Factorized { marginals } => marginals[0].len(),
            Self::MarkovChain { initial, .. } => initial.len(),
            Self::CorrelatedPair { states, .. } => *states,
        }
    }

    pub fn num_dims(&self) -> usize {
        match self {
            Self::Factorized { marginals } => marginals.len(),
            Self::MarkovChain { length, .. } => *length,
            Self::CorrelatedPair { .. } => 2,
        }
    }

    pub fn probability(&self, x0: &[usize]) -> f64 {
        let b = self.num_states();
        if x0.len() != self.num_dims() || x0.iter().any(|&x| x >= b) {
            return 0.0;
        }
        match self {
            Self::Factorized { marginals } => marginals.iter().zip(x0).map(|(m, &x)| m[x]).product(),
            Self::MarkovChain { initial, transition, .. } => {
                let mut p = initial[x0[0]];
                for w in x0.windows(2) {
                    p *= transition[w[0] * b + w[1]];
                }
                p
            }
            Self::CorrelatedPair { states, agreement } => {
                let n = *states as f64;
                let same = if x0[0] == x0[1] { agreement } else { &0.0 };
                (same + (1.0 - agreement) / n) / n
            }
        }
    }

    pub fn log_prob(&self, x0: &[usize]) -> f64 {
        match self {
            Self::Factorized { marginals } if x0.len() == marginals.len() => {
                marginals.iter().zip(x0).map(|(m, &x)| m.get(x).map_or(f64::NEG_INFINITY, |p| p.ln())).sum()
            }
            _ => self.probability(x0).ln(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        match self {
            Self::Factorized { marginals } => marginals.iter().map(|m| sample_categorical(m, rng)).collect(),
            Self::MarkovChain { initial, transition, length } => {
                let b = initial.len();
                let mut out = Vec::with_capacity(*length);
                out.push(sample_categorical(initial, rng));
                for d in 1..*length {
                    let prev = out[d - 1];
                    out.push(sample_categorical(&transition[prev * b..(prev + 1) * b], rng));
                }
                out
            }
            Self::CorrelatedPair { states, agreement } => {
                let first = rng.random_range(0..*states);
                let second = if rng.random::<f64>() < *agreement { first } else { rng.random_range(0..*states) };
                vec![first, second]
            }
        }
    }

    /// Number of sequences in the support enumeration, or `None` on overflow.
    pub fn enumeration_size(&self) -> Option<u128> {
        (self.num_states() as u128).checked_pow(u32::try_from(self.num_dims()).ok()?)
    }

    /// All sequences with their probabilities, in lexicographic order.
    pub fn enumerate(&self) -> Result<Vec<(Vec<usize>, f64)>> {
        let cap = TOLERANCES.enumeration_cap;
        let size = self.enumeration_size().unwrap_or(u128::MAX);
        if size > cap {
            return Err(ScudError::EnumerationTooLarge { size, cap });
        }
        let (b, d) = (self.num_states(), self.num_dims());
        let mut out = Vec::with_capacity(size as usize);
        let mut x = vec![0usize; d];
        loop {
            out.push((x.clone(), self.probability(&x)));
            if !advance(&mut x, b) {
                break;
            }
        }
        Ok(out)
    }

    /// Per-dimension marginal distributions.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let b = self.num_states();
        match self {
            Self::Factorized { marginals } => marginals.clone(),
            Self::MarkovChain { initial, transition, length } => {
                let mut cur = initial.clone();
                let mut out = vec![cur.clone()];
                for _ in 1..*length {
                    cur = crate::linalg::row_times(&cur, transition, b);
                    out.push(cur.clone());
                }
                out
            }
            Self::CorrelatedPair { states, .. } => vec![vec![1.0 / *states as f64; *states]; 2],
        }
    }
}

/// Steps `x` to the next sequence in lexicographic order; false after the last.
pub(crate) fn advance(x: &mut [usize], b: usize) -> bool {
    for i in (0..x.len()).rev() {
        x[i] += 1;
        if x[i] < b {
            return true;
        }
        x[i] = 0;
    }
    false
}

/// Token sequences with a shared vocabulary and length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub states: usize,
    pub dims: usize,
    pub sequences: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn sample_from<R: Rng + ?Sized>(toy: &ToyDistribution, count: usize, rng: &mut R) -> Self {
        Self {
            states: toy.num_states(),
            dims: toy.num_dims(),
            sequences: (0..count).map(|_| toy.sample(rng)).collect(),
        }
    }

    /// Text form: a `B <size> D <dims>` header then one sequence per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("B {} D {}\n", self.states, self.dims);
        for seq in &self.sequences {
            let mut first = true;
            for x in seq {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(ScudError::Parse { line: 1, message: "empty dataset".into() })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parse_header = || -> Option<(usize, usize)> {
            match fields.as_slice() {
                ["B", b, "D", d] => Some((b.parse().ok()?, d.parse().ok()?)),
                _ => None,
            }
        };
        let (states, dims) = parse_header()
            .ok_or(ScudError::Parse { line: 1, message: format!("expected `B <size> D <dims>`, found `{header}`") })?;
        let mut sequences = Vec::new();
        for (i, line) in lines {
            let seq = line
                .split_whitespace()
                .map(|tok| tok.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| ScudError::Parse { line: i + 1, message: e.to_string() })?;
            if seq.len() != dims {
                return Err(ScudError::Parse {
                    line: i + 1,
                    message: format!("{} tokens, expected {dims}", seq.len()),
                });
            }
            if let Some(bad) = seq.iter().find(|&&x| x >= states) {
                return Err(ScudError::Parse {
                    line: i + 1,
                    message: format!("token {bad} outside vocabulary of {states}"),
                });
            }
            sequences.push(seq);
        }
        Ok(Self { states, dims, sequences })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn uniform_log_prob() {
        let toy = ToyDistribution::uniform(3, 4).unwrap();
        assert!((toy.log_prob(&[0, 2, 1, 1]) + 4.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_chain_is_constant() {
        let toy = ToyDistribution::markov_chain(vec![0.3, 0.7], vec![1.0, 0.0, 0.0, 1.0], 3).unwrap();
        for (x, p) in toy.enumerate().unwrap() {
            let constant = x.iter().all(|&v| v == x[0]);
            assert_eq!(p > 0.0, constant, "{x:?}");
        }
    }

    #[test]
    fn perfect_pair() {
        let toy = ToyDistribution::correlated_pair(2, 1.0).unwrap();
        assert_eq!(toy.probability(&[0, 0]), 0.5);
        assert_eq!(toy.probability(&[1, 1]), 0.5);
        assert_eq!(toy.probability(&[0, 1]), 0.0);
    }

    #[test]
    fn enumeration_normalised() {
        let toys = [
            ToyDistribution::correlated_pair(4, 0.6).unwrap(),
            ToyDistribution::markov_chain(vec![0.2, 0.5, 0.3], vec![0.1, 0.6, 0.3, 0.3, 0.3, 0.4, 0.5, 0.25, 0.25], 4)
                .unwrap(),
            ToyDistribution::factorized(vec![vec![0.1, 0.9], vec![0.5, 0.5], vec![0.7, 0.3]]).unwrap(),
        ];
        for toy in toys {
            let total: f64 = toy.enumerate().unwrap().iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn enumeration_cap() {
        let toy = ToyDistribution::uniform(10, 7).unwrap();
        assert!(matches!(toy.enumerate(), Err(ScudError::EnumerationTooLarge { .. })));
    }

    #[test]
    fn sample_frequencies_match() {
        let toy = ToyDistribution::correlated_pair(2, 0.5).unwrap();
        let mut rng = seeded(3);
        let n = 40_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let x = toy.sample(&mut rng);
            counts[x[0] * 2 + x[1]] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let p = toy.probability(&[i / 2, i % 2]);
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn chain_marginals_match_enumeration() {
        let toy = ToyDistribution::markov_chain(vec![0.9, 0.1], vec![0.7, 0.3, 0.2, 0.8], 3).unwrap();
        let m = toy.marginals();
        let mut brute = vec![vec![0.0; 2]; 3];
        for (x, p) in toy.enumerate().unwrap() {
            for d in 0..3 {
                brute[d][x[d]] += p;
            }
        }
        for d in 0..3 {
            for b in 0..2 {
                assert!((m[d][b] - brute[d][b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dataset_round_trip() {
        let toy = ToyDistribution::uniform(5, 3).unwrap();
        let data = Dataset::sample_from(&toy, 20, &mut seeded(1));
        assert_eq!(Dataset::parse(&data.to_text()).unwrap(), data);
    }

    #[test]
    fn dataset_rejects_bad_lines() {
        let err = Dataset::parse("B 3 D 2\n0 1\n0 3\n").unwrap_err();
        assert!(matches!(err, ScudError::Parse { line: 3, .. }));
        assert!(Dataset::parse("V 3 D 2\n").is_err());
    }
}

//! Seeded synthetic corpora whose AM reliability differs per subword unit.
//!
//! References are sampled from a sparse random bigram generator; each AM row
//! puts most of its mass on the reference token and spreads the remainder
//! (the unit's confusion strength) over the other units.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::PositionwiseToyAM;
use crate::error::{Error, Result};
use crate::types::{TokenId, TokenSeq, Vocabulary};

/// Smallest reference-token mass a jittered row may receive.
const MIN_REF_MASS: f64 = 1e-3;

/// Share of generator probability spread uniformly over all non-EOS units,
/// so every transition stays possible.
const GENERATOR_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseSpread {
    /// Off-reference mass split evenly over the other `k - 1` units.
    #[default]
    Uniform,
    /// A random confuser per position takes `focus` of the off-reference mass;
    /// the rest is split evenly.
    Confuser { focus: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    /// Confusion strength per unit, indexed by token id.
    pub noise: Vec<f64>,
    #[serde(default)]
    pub spread: NoiseSpread,
    /// Concentration of a Beta distribution around the reference mass
    /// `1 - noise[w]`. `None` puts exactly `1 - noise[w]` on the reference.
    #[serde(default)]
    pub jitter: Option<f64>,
    /// Fraction of the off-reference mass given to EOS in rows whose target is
    /// not EOS; the rest is spread over the other units.
    #[serde(default = "default_eos_share")]
    pub eos_share: f64,
    /// Likely successors per unit in the reference generator.
    #[serde(default = "default_branching")]
    pub branching: usize,
    pub seed: u64,
}

fn default_branching() -> usize {
    4
}

fn default_eos_share() -> f64 {
    1e-8
}

impl SyntheticConfig {
    pub fn homogeneous(
        vocab_size: usize,
        noise: f64,
        sizes: (usize, usize, usize),
        seed: u64,
    ) -> Self {
        Self {
            vocab_size,
            min_len: 4,
            max_len: 12,
            train_size: sizes.0,
            dev_size: sizes.1,
            test_size: sizes.2,
            noise: vec![noise; vocab_size],
            spread: NoiseSpread::Uniform,
            jitter: None,
            eos_share: default_eos_share(),
            branching: default_branching(),
            seed,
        }
    }

    /// Units `0..k/2` get `low`, the rest `high`.
    pub fn heterogeneous(
        vocab_size: usize,
        low: f64,
        high: f64,
        sizes: (usize, usize, usize),
        seed: u64,
    ) -> Self {
        let mut cfg = Self::homogeneous(vocab_size, low, sizes, seed);
        cfg.noise = (0..vocab_size)
            .map(|i| if i < vocab_size / 2 { low } else { high })
            .collect();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| {
            Err(Error::usage(format!("synthetic config `{name}`: {msg}")))
        };
        if self.vocab_size < 2 {
            return field(
                "vocab_size",
                format!("must be >= 2, got {}", self.vocab_size),
            );
        }
        if self.max_len < self.min_len {
            return field(
                "max_len",
                format!("{} is below min_len {}", self.max_len, self.min_len),
            );
        }
        if self.noise.len() != self.vocab_size {
            return field(
                "noise",
                format!(
                    "length {} != vocab_size {}",
                    self.noise.len(),
                    self.vocab_size
                ),
            );
        }
        if let Some(e) = self.noise.iter().find(|e| !(0.0..1.0).contains(*e)) {
            return field("noise", format!("strength {e} outside [0, 1)"));
        }
        if let NoiseSpread::Confuser { focus } = self.spread {
            if !(0.0..=1.0).contains(&focus) {
                return field("spread", format!("focus {focus} outside [0, 1]"));
            }
        }
        if let Some(c) = self.jitter {
            if !(c > 0.0 && c.is_finite()) {
                return field("jitter", format!("concentration must be > 0, got {c}"));
            }
        }
        if !(0.0..=1.0).contains(&self.eos_share) {
            return field("eos_share", format!("{} outside [0, 1]", self.eos_share));
        }
        if self.branching == 0 {
            return field("branching", "must be >= 1".into());
        }
        Ok(())
    }
}

/// One utterance: the reference and its acoustic score matrix. The matrix has
/// one row per reference token plus a final row for EOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UtteranceRepr", into = "UtteranceRepr")]
pub struct Utterance {
    pub id: String,
    pub reference: TokenSeq,
    pub am: PositionwiseToyAM,
}

/// On-disk layout; `null` encodes a log-probability of `-inf`.
#[derive(Serialize, Deserialize)]
struct UtteranceRepr {
    id: String,
    #[serde(rename = "ref")]
    reference: TokenSeq,
    am_logp: Vec<Vec<Option<f64>>>,
}

impl From<Utterance> for UtteranceRepr {
    fn from(u: Utterance) -> Self {
        let am_logp =
            u.am.rows()
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|&v| (v != f64::NEG_INFINITY).then_some(v))
                        .collect()
                })
                .collect();
        UtteranceRepr {
            id: u.id,
            reference: u.reference,
            am_logp,
        }
    }
}

impl TryFrom<UtteranceRepr> for Utterance {
    type Error = Error;
    fn try_from(r: UtteranceRepr) -> Result<Self> {
        let rows = r
            .am_logp
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|v| v.unwrap_or(f64::NEG_INFINITY))
                    .collect()
            })
            .collect();
        Ok(Utterance {
            id: r.id,
            reference: r.reference,
            am: PositionwiseToyAM::new(rows)?,
        })
    }
}

impl Utterance {
    /// Reference followed by EOS, the sequence the AM rows are aligned to.
    pub fn target(&self, eos: TokenId) -> TokenSeq {
        let mut t = self.reference.0.clone();
        t.push(eos);
        TokenSeq(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub vocab: Vocabulary,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// Deterministic given `cfg` (including its seed).
pub fn generate_synthetic_corpus(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.vocab_size;
    let vocab = random_vocabulary(&mut rng, k);
    let eos = vocab.eos();
    let generator = BigramGenerator::sample(&mut rng, k, eos, cfg.branching);

    let mut split = |name: &str, n: usize| -> Vec<Utterance> {
        (0..n)
            .map(|i| {
                let len = rng.random_range(cfg.min_len..=cfg.max_len);
                let reference = generator.sample_sequence(&mut rng, len);
                let mut rows: Vec<Vec<f64>> = reference
                    .iter()
                    .map(|&w| am_row(&mut rng, cfg, eos, w))
                    .collect();
                rows.push(am_row(&mut rng, cfg, eos, eos));
                Utterance {
                    id: format!("{name}-{i:06}"),
                    reference,
                    am: PositionwiseToyAM::new(rows).expect("rows are normalized by construction"),
                }
            })
            .collect()
    };
    let train = split("train", cfg.train_size);
    let dev = split("dev", cfg.dev_size);
    let test = split("test", cfg.test_size);
    Ok(SyntheticCorpus {
        vocab,
        train,
        dev,
        test,
    })
}

fn am_row(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, eos: TokenId, target: TokenId) -> Vec<f64> {
    let k = cfg.vocab_size;
    let eps = cfg.noise[target as usize];
    let ref_mass = match cfg.jitter {
        _ if eps == 0.0 => 1.0,
        None => 1.0 - eps,
        Some(c) => {
            let beta = Beta::new(c * (1.0 - eps), c * eps).expect("positive shape parameters");
            beta.sample(rng).max(MIN_REF_MASS)
        }
    };
    let off = 1.0 - ref_mass;
    let eos = eos as usize;
    let mut probs = vec![0.0; k];
    // units that share the noise: everything but the target, and EOS only
    // through its fixed share
    let mut spread_mass = off;
    let mut others: Vec<usize> = (0..k).filter(|&v| v != target as usize).collect();
    if target as usize != eos && k > 2 {
        probs[eos] = off * cfg.eos_share;
        spread_mass -= probs[eos];
        others.retain(|&v| v != eos);
    }
    let m = others.len() as f64;
    match cfg.spread {
        NoiseSpread::Uniform => others.iter().for_each(|&v| probs[v] += spread_mass / m),
        NoiseSpread::Confuser { focus } => {
            let c = others[rng.random_range(0..others.len())];
            others
                .iter()
                .for_each(|&v| probs[v] += (1.0 - focus) * spread_mass / m);
            probs[c] += focus * spread_mass;
        }
    }
    probs[target as usize] = ref_mass;
    probs.into_iter().map(f64::ln).collect()
}

fn random_vocabulary(rng: &mut ChaCha8Rng, k: usize) -> Vocabulary {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    let mut units = vec!["</s>".to_string()];
    let mut seen: HashSet<String> = units.iter().cloned().collect();
    while units.len() < k {
        let len = rng.random_range(1..=4);
        let mut u: String = (0..len)
            .map(|_| LETTERS[rng.random_range(0..LETTERS.len())] as char)
            .collect();
        if rng.random_bool(0.4) {
            u.push_str(crate::types::CONTINUATION_MARKER);
        }
        if seen.insert(u.clone()) {
            units.push(u);
        }
    }
    Vocabulary::new(units, 0).expect("units are unique and k >= 2")
}

/// Sparse random bigram over the non-EOS units; EOS serves as the start context.
struct BigramGenerator {
    /// Cumulative distributions, one per previous token.
    cdf: Vec<Vec<f64>>,
    units: Vec<TokenId>,
    eos: TokenId,
}

impl BigramGenerator {
    fn sample(rng: &mut ChaCha8Rng, k: usize, eos: TokenId, branching: usize) -> Self {
        let units: Vec<TokenId> = (0..k as TokenId).filter(|&t| t != eos).collect();
        let m = units.len();
        let cdf = (0..k)
            .map(|_| {
                let mut p = vec![GENERATOR_FLOOR / m as f64; m];
                let picks = sample(rng, m, branching.min(m));
                let weights: Vec<f64> = picks.iter().map(|_| Exp1.sample(rng)).collect();
                let total: f64 = weights.iter().sum();
                for (i, w) in picks.iter().zip(weights) {
                    p[i] += (1.0 - GENERATOR_FLOOR) * w / total;
                }
                p.iter()
                    .scan(0.0, |acc, x| {
                        *acc += x;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        Self { cdf, units, eos }
    }

    fn sample_sequence(&self, rng: &mut ChaCha8Rng, len: usize) -> TokenSeq {
        let mut prev = self.eos;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let cdf = &self.cdf[prev as usize];
            let u = rng.random::<f64>() * cdf[cdf.len() - 1];
            let i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            prev = self.units[i];
            out.push(prev);
        }
        TokenSeq(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> SyntheticConfig {
        SyntheticConfig::homogeneous(6, noise, (5, 2, 2), 11)
    }

    #[test]
    fn zero_noise_rows_are_one_hot() {
        let c = generate_synthetic_corpus(&small(0.0)).unwrap();
        for u in &c.train {
            let target = u.target(c.vocab.eos());
            assert_eq!(u.am.num_rows(), target.len());
            for (row, &w) in u.am.rows().iter().zip(target.iter()) {
                for (v, &lp) in row.iter().enumerate() {
                    if v == w as usize {
                        assert_eq!(lp, 0.0);
                    } else {
                        assert_eq!(lp, f64::NEG_INFINITY);
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_spread_arithmetic() {
        let mut cfg = SyntheticConfig::homogeneous(3, 0.3, (3, 0, 0), 5);
        cfg.eos_share = 0.5;
        cfg.min_len = 1;
        cfg.max_len = 3;
        let c = generate_synthetic_corpus(&cfg).unwrap();
        for u in &c.train {
            for (row, &w) in u.am.rows().iter().zip(u.target(0).iter()) {
                for (v, &lp) in row.iter().enumerate() {
                    let expect = if v == w as usize { 0.7 } else { 0.15 };
                    assert!((lp.exp() - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let mut cfg = small(0.2);
        cfg.jitter = Some(2.0);
        cfg.spread = NoiseSpread::Confuser { focus: 0.8 };
        let a = generate_synthetic_corpus(&cfg).unwrap();
        let b = generate_synthetic_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed += 1;
        assert_ne!(generate_synthetic_corpus(&cfg).unwrap(), a);
    }

    #[test]
    fn lengths_and_eos() {
        let c = generate_synthetic_corpus(&small(0.1)).unwrap();
        for u in c.train.iter().chain(&c.dev).chain(&c.test) {
            assert!((4..=12).contains(&u.reference.len()));
            assert!(!u.reference.contains(&c.vocab.eos()));
        }
        assert_eq!((c.train.len(), c.dev.len(), c.test.len()), (5, 2, 2));
    }

    #[test]
    fn invalid_config_names_field() {
        let mut cfg = small(0.1);
        cfg.noise[2] = 1.0;
        let msg = generate_synthetic_corpus(&cfg).unwrap_err().to_string();
        assert!(msg.contains("noise"), "{msg}");
        let mut cfg = small(0.1);
        cfg.noise.pop();
        assert!(generate_synthetic_corpus(&cfg)
            .unwrap_err()
            .to_string()
            .contains("noise"));
        let mut cfg = small(0.1);
        cfg.vocab_size = 1;
        assert!(generate_synthetic_corpus(&cfg)
            .unwrap_err()
            .to_string()
            .contains("vocab_size"));
    }

    #[test]
    fn utterance_json_encodes_neg_inf_as_null() {
        let c = generate_synthetic_corpus(&small(0.0)).unwrap();
        let u = &c.train[0];
        let line = serde_json::to_string(u).unwrap();
        assert!(line.contains("null"));
        let back: Utterance = serde_json::from_str(&line).unwrap();
        assert_eq!(&back, u);
    }
}

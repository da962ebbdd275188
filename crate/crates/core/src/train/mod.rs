//! Scale learning: initialization, the optimizer loop, joint training of a
//! toy AM, and the grid-search baseline.

mod adam;
mod grid;
mod joint;

pub use adam::{Adam, AdamConfig};
pub use grid::{beta_grid, grid_search_scales, GridPoint, GridSearchResult};
pub use joint::{joint_items, joint_train, JointItem, JointOutcome};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{AccuracyMode, ErrorMeasure};
use crate::objectives::{
    ce_objective, minwer_objective_with_errors, CETrainingItem, ObjectiveValue,
};
use crate::pipeline::{corpus_errors, decode_corpus, Parallelism};
use crate::providers::{ScoreSource, Utterance};
use crate::types::{NBestList, ScaleMode, ScaleSet, ScaleValues};

pub const DEFAULT_INIT_STDDEV: f64 = 0.01;

/// Random scales around 1.0. Agnostic mode draws `alpha` then `beta`;
/// subword mode draws all `k` alphas, then all `k` betas.
pub fn init_scales(mode: ScaleMode, k: usize, seed: u64, stddev: f64) -> Result<ScaleSet> {
    if !(stddev >= 0.0 && stddev.is_finite()) {
        return Err(Error::usage(format!("stddev must be >= 0, got {stddev}")));
    }
    let normal = Normal::new(1.0, stddev).map_err(|e| Error::usage(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = match mode {
        ScaleMode::Agnostic => 1,
        ScaleMode::Subword => k,
    };
    let alpha: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let beta: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    match mode {
        ScaleMode::Agnostic => ScaleSet::agnostic(k, alpha[0], beta[0]),
        ScaleMode::Subword => {
            ScaleSet::from_values(k, ScaleValues::PerUnit(alpha), ScaleValues::PerUnit(beta))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Ce,
    MinWer,
}

impl std::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(Criterion::Ce),
            "minwer" => Ok(Criterion::MinWer),
            other => Err(Error::usage(format!(
                "unknown criterion {other:?} (expected ce or minwer)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::usage(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub scales: bool,
    pub toy_am: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub criterion: Criterion,
    pub mode: ScaleMode,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Utterances per update; `None` uses the whole corpus.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub init_stddev: f64,
    pub trainable: Trainable,
    pub dataset: Split,
    pub accuracy: AccuracyMode,
    /// Re-decode the n-best lists with the current scales before every epoch.
    pub regenerate_nbest: bool,
    pub beam: usize,
    pub workers: usize,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            criterion: Criterion::Ce,
            mode: ScaleMode::Agnostic,
            epochs: 5,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: None,
            seed: 0,
            init_stddev: DEFAULT_INIT_STDDEV,
            trainable: Trainable {
                scales: true,
                toy_am: false,
            },
            dataset: Split::Train,
            accuracy: AccuracyMode::NegEdit,
            regenerate_nbest: false,
            beam: 12,
            workers: 1,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::usage("epochs must be >= 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::usage("batch_size must be >= 1"));
        }
        if self.beam < 1 {
            return Err(Error::usage("beam must be >= 1"));
        }
        if !(self.init_stddev >= 0.0) {
            return Err(Error::usage("init_stddev must be >= 0"));
        }
        self.optimizer().validate()
    }

    pub fn optimizer(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn parallelism(&self) -> Parallelism {
        Parallelism {
            workers: self.workers.max(1),
            deterministic: self.deterministic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub criterion: Criterion,
    /// Mean per-utterance loss seen during each epoch, before that epoch's updates
    /// in full-batch mode.
    pub losses: Vec<f64>,
    /// Mean loss at the final parameters.
    pub final_loss: f64,
    pub scales: ScaleSet,
    pub mean_alpha: f64,
    pub mean_beta: f64,
    /// Wall-clock seconds per epoch; kept out of files so reruns are byte-identical.
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

impl TrainReport {
    fn new(
        criterion: Criterion,
        losses: Vec<f64>,
        final_loss: f64,
        scales: ScaleSet,
        epoch_seconds: Vec<f64>,
    ) -> Self {
        Self {
            criterion,
            losses,
            final_loss,
            mean_alpha: scales.mean_alpha(),
            mean_beta: scales.mean_beta(),
            scales,
            epoch_seconds,
        }
    }
}

/// Per-utterance training examples for one criterion.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingSet {
    Ce(Vec<CETrainingItem>),
    /// N-best lists with the error of every hypothesis precomputed.
    MinWer {
        nbests: Vec<NBestList>,
        errors: Vec<Vec<f64>>,
    },
}

impl TrainingSet {
    pub fn minwer(nbests: Vec<NBestList>, measure: &ErrorMeasure<'_>) -> Result<Self> {
        let errors = corpus_errors(&nbests, measure)?;
        Ok(TrainingSet::MinWer { nbests, errors })
    }

    pub fn criterion(&self) -> Criterion {
        match self {
            TrainingSet::Ce(_) => Criterion::Ce,
            TrainingSet::MinWer { .. } => Criterion::MinWer,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TrainingSet::Ce(items) => items.len(),
            TrainingSet::MinWer { nbests, .. } => nbests.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn evaluate(&self, index: usize, scales: &ScaleSet) -> Result<ObjectiveValue> {
        match self {
            TrainingSet::Ce(items) => ce_objective(&items[index], scales),
            TrainingSet::MinWer { nbests, errors } => {
                minwer_objective_with_errors(&nbests[index], &errors[index], scales)
            }
        }
    }

    /// Mean loss and mean flat scale gradient over `indices`.
    pub fn batch_objective(
        &self,
        indices: &[usize],
        scales: &ScaleSet,
        par: Parallelism,
    ) -> Result<(f64, Vec<f64>)> {
        let dim = scales.num_params();
        let add = |mut acc: (f64, Vec<f64>), v: ObjectiveValue| {
            acc.0 += v.loss;
            for (a, g) in acc.1.iter_mut().zip(v.gradient.scales_flat()) {
                *a += g;
            }
            acc
        };
        let zero = || (0.0, vec![0.0; dim]);
        let (loss, mut grad) = if par.deterministic || par.workers <= 1 {
            let values = par.map(indices.len(), |i| self.evaluate(indices[i], scales))?;
            values.into_iter().fold(zero(), add)
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(par.workers)
                .build()
                .map_err(|e| Error::usage(e.to_string()))?;
            pool.install(|| {
                indices
                    .par_iter()
                    .map(|&i| self.evaluate(i, scales))
                    .try_fold(zero, |acc, v| v.map(|v| add(acc, v)))
                    .try_reduce(zero, |a, b| {
                        let mut out = a;
                        out.0 += b.0;
                        for (x, y) in out.1.iter_mut().zip(b.1) {
                            *x += y;
                        }
                        Ok(out)
                    })
            })?
        };
        let n = indices.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, grad))
    }

    pub fn mean_loss(&self, scales: &ScaleSet, par: Parallelism) -> Result<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        Ok(self.batch_objective(&all, scales, par)?.0)
    }
}

/// Callbacks around each epoch of [`train_scales_with`].
pub trait EpochHook {
    /// May replace the training data, e.g. to re-decode n-best lists.
    fn before_epoch(
        &mut self,
        _epoch: usize,
        _scales: &ScaleSet,
        _data: &mut TrainingSet,
    ) -> Result<()> {
        Ok(())
    }

    fn after_epoch(&mut self, _epoch: usize, _scales: &ScaleSet, _loss: f64) -> Result<()> {
        Ok(())
    }
}

impl EpochHook for () {}

/// Re-decodes the n-best lists with the current scales before every epoch
/// after the first.
pub struct RegenerateNBest<'a, L: ?Sized> {
    pub utterances: &'a [Utterance],
    pub lm: &'a L,
    pub beam: usize,
    pub measure: ErrorMeasure<'a>,
    pub parallelism: Parallelism,
}

impl<L> EpochHook for RegenerateNBest<'_, L>
where
    L: ScoreSource + Sync + ?Sized,
{
    fn before_epoch(
        &mut self,
        epoch: usize,
        scales: &ScaleSet,
        data: &mut TrainingSet,
    ) -> Result<()> {
        if epoch == 0 {
            return Ok(());
        }
        let eos = self
            .measure
            .eos
            .ok_or_else(|| Error::usage("n-best regeneration needs an EOS id"))?;
        let nbests = decode_corpus(
            self.utterances,
            self.lm,
            scales,
            self.beam,
            eos,
            self.parallelism,
        )?;
        *data = TrainingSet::minwer(nbests, &self.measure)?;
        Ok(())
    }
}

/// Trains the scales on `data` starting from `init`.
pub fn train_scales(data: &TrainingSet, init: &ScaleSet, cfg: &TrainConfig) -> Result<TrainReport> {
    let mut owned = data.clone();
    train_scales_with(&mut owned, init, cfg, &mut ())
}

/// [`train_scales`] with epoch callbacks. On a non-finite loss or gradient the
/// run stops with [`Error::Diverged`] carrying the last finite state.
pub fn train_scales_with(
    data: &mut TrainingSet,
    init: &ScaleSet,
    cfg: &TrainConfig,
    hook: &mut dyn EpochHook,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::usage("training corpus is empty"));
    }
    let criterion = data.criterion();
    let par = cfg.parallelism();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init.to_flat();
    let mut adam = Adam::new(cfg.optimizer(), params.len())?;
    let mut scales = init.clone();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut seconds = Vec::with_capacity(cfg.epochs);
    let mut last_finite = (scales.clone(), f64::NAN);

    for epoch in 0..cfg.epochs {
        hook.before_epoch(epoch, &scales, data)?;
        let start = Instant::now();
        let n = data.len();
        let mut order: Vec<usize> = (0..n).collect();
        let batch = cfg.batch_size.unwrap_or(n).min(n);
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let (loss, grad) = data.batch_objective(chunk, &scales, par)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let (s, l) = last_finite;
                return Err(Error::Diverged {
                    epoch,
                    last: Box::new(TrainReport::new(criterion, losses, l, s, seconds)),
                });
            }
            last_finite = (scales.clone(), loss);
            total += loss * chunk.len() as f64;
            if cfg.trainable.scales {
                adam.step(&mut params, &grad);
                if params.iter().any(|p| !p.is_finite()) {
                    let (s, l) = last_finite;
                    return Err(Error::Diverged {
                        epoch,
                        last: Box::new(TrainReport::new(criterion, losses, l, s, seconds)),
                    });
                }
                scales = init.with_flat(&params)?;
            }
        }
        let epoch_loss = total / n as f64;
        log::info!(
            "epoch {}: {:?} loss {:.6}",
            epoch + 1,
            criterion,
            epoch_loss
        );
        losses.push(epoch_loss);
        seconds.push(start.elapsed().as_secs_f64());
        hook.after_epoch(epoch, &scales, epoch_loss)?;
    }
    let final_loss = data.mean_loss(&scales, par)?;
    Ok(TrainReport::new(
        criterion, losses, final_loss, scales, seconds,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ce_items;
    use crate::providers::{generate_synthetic_corpus, train_ngram, SyntheticConfig};
    use crate::types::{Hypothesis, StepScores, TokenSeq};

    #[test]
    fn init_examples() {
        let s = init_scales(ScaleMode::Subword, 7, 3, 0.0).unwrap();
        assert!(s.to_flat().iter().all(|&v| v == 1.0));
        assert_eq!(
            init_scales(ScaleMode::Agnostic, 7, 3, 0.0).unwrap(),
            ScaleSet::agnostic(7, 1.0, 1.0).unwrap()
        );
        assert_eq!(
            init_scales(ScaleMode::Subword, 30, 9, 0.01).unwrap(),
            init_scales(ScaleMode::Subword, 30, 9, 0.01).unwrap()
        );
        assert_ne!(
            init_scales(ScaleMode::Subword, 30, 9, 0.01).unwrap(),
            init_scales(ScaleMode::Subword, 30, 10, 0.01).unwrap()
        );
        // 3 sigma / sqrt(k) with sigma = 0.01, k = 1000
        let s = init_scales(ScaleMode::Subword, 1000, 5, 0.01).unwrap();
        let bound = 3.0 * 0.01 / 1000f64.sqrt();
        assert!((s.mean_alpha() - 1.0).abs() < bound.max(0.002));
        assert!((s.mean_beta() - 1.0).abs() < bound.max(0.002));
        assert!(init_scales(ScaleMode::Agnostic, 3, 0, -1.0).is_err());
    }

    #[test]
    fn config_json_defaults_and_errors() {
        let cfg: TrainConfig =
            serde_json::from_str(r#"{"criterion":"minwer","mode":"subword","lr":0.05}"#).unwrap();
        assert_eq!(cfg.criterion, Criterion::MinWer);
        assert_eq!(cfg.lr, 0.05);
        assert_eq!(cfg.beta2, 0.999);
        assert_eq!(cfg.epochs, 5);
        let back: TrainConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch":3}"#).is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().unwrap_err().is_usage());
    }

    fn small_ce_set(seed: u64) -> (TrainingSet, usize) {
        let c = generate_synthetic_corpus(&SyntheticConfig::homogeneous(8, 0.3, (30, 0, 0), seed))
            .unwrap();
        let eos = c.vocab.eos();
        let refs: Vec<TokenSeq> = c.train.iter().map(|u| u.target(eos)).collect();
        let lm = train_ngram(&refs, &c.vocab, 2, 0.5).unwrap();
        (
            TrainingSet::Ce(ce_items(&c.train, &lm, eos, Parallelism::sequential()).unwrap()),
            8,
        )
    }

    #[test]
    fn zero_learning_rate_keeps_initial_scales() {
        let (data, k) = small_ce_set(1);
        let init = init_scales(ScaleMode::Subword, k, 2, 0.01).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        let r = train_scales(&data, &init, &cfg).unwrap();
        assert_eq!(r.scales, init);
        assert_eq!(r.losses.len(), cfg.epochs);
    }

    #[test]
    fn full_batch_ce_loss_is_non_increasing() {
        let (data, k) = small_ce_set(2);
        let init = init_scales(ScaleMode::Agnostic, k, 0, 0.01).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let r = train_scales(&data, &init, &cfg).unwrap();
        assert_eq!(r.losses.len(), 30);
        for w in r.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", r.losses);
        }
        assert!(r.final_loss <= r.losses[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let (data, k) = small_ce_set(3);
        let init = init_scales(ScaleMode::Subword, k, 0, 0.01).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: Some(7),
            lr: 0.02,
            ..TrainConfig::default()
        };
        let a = train_scales(&data, &init, &cfg).unwrap();
        let b = train_scales(
            &data,
            &init,
            &TrainConfig {
                workers: 4,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn unseen_tokens_keep_initial_scales() {
        // token 1 has zero AM probability in the only row, so its softmax
        // weight and hence its scale gradients are exactly zero
        let step = StepScores::new(vec![0.0, f64::NEG_INFINITY], vec![0.5f64.ln(); 2]).unwrap();
        let items = vec![CETrainingItem::new(vec![0].into(), vec![step]).unwrap()];
        let init = ScaleSet::subword(vec![1.0, 0.9], vec![1.0, 1.1]).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.1,
            ..TrainConfig::default()
        };
        let r = train_scales(&TrainingSet::Ce(items), &init, &cfg).unwrap();
        assert_eq!(r.scales.alpha_for(1), 0.9);
        assert_eq!(r.scales.beta_for(1), 1.1);
        assert_eq!(r.mean_alpha, r.scales.mean_alpha());
    }

    #[test]
    fn divergence_is_reported() {
        let hyps = vec![
            Hypothesis::new(vec![1].into(), vec![-0.5], vec![-1.0]).unwrap(),
            Hypothesis::new(vec![2].into(), vec![-1.5], vec![-0.2]).unwrap(),
        ];
        let nb = NBestList::new("u", vec![1].into(), hyps).unwrap();
        let data = TrainingSet::MinWer {
            nbests: vec![nb],
            errors: vec![vec![0.0, f64::INFINITY]],
        };
        let init = ScaleSet::agnostic(3, 1.0, 1.0).unwrap();
        match train_scales(&data, &init, &TrainConfig::default()) {
            Err(Error::Diverged { epoch, last }) => {
                assert_eq!(epoch, 0);
                assert_eq!(last.scales, init);
                assert!(last.losses.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adam, Criterion, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::objectives::{ce_objective_toy_am, ObjectiveValue};
use crate::pipeline::{lm_rows, Parallelism};
use crate::providers::{ScoreSource, TrainableToyAM, Utterance};
use crate::types::{ScaleSet, TokenId};

/// One utterance for joint training: its own trainable AM, the target, and
/// the teacher-forced rows of the fixed LM.
#[derive(Debug, Clone, PartialEq)]
pub struct JointItem {
    pub am: TrainableToyAM,
    pub target: Vec<TokenId>,
    pub lm_rows: Vec<Vec<f64>>,
}

/// Joint items from a corpus; AM logits start at the corpus log-probabilities.
pub fn joint_items<L: ScoreSource + ?Sized>(
    utts: &[Utterance],
    lm: &L,
    eos: TokenId,
) -> Vec<JointItem> {
    utts.iter()
        .map(|u| {
            let target = u.target(eos).into_inner();
            JointItem {
                am: TrainableToyAM::from_positionwise(&u.am),
                lm_rows: lm_rows(lm, &target),
                target,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct JointOutcome {
    pub report: TrainReport,
    pub ams: Vec<TrainableToyAM>,
}

fn evaluate(item: &JointItem, scales: &ScaleSet) -> Result<ObjectiveValue> {
    ce_objective_toy_am(&item.am, &item.lm_rows, &item.target, scales)
}

fn mean_loss(items: &[JointItem], scales: &ScaleSet, par: Parallelism) -> Result<f64> {
    let losses = par.map(items.len(), |i| Ok(evaluate(&items[i], scales)?.loss))?;
    Ok(losses.iter().sum::<f64>() / items.len() as f64)
}

/// CE training of the toy-AM logits and, when enabled, the scales. The LM is
/// only read through the precomputed rows and never changes.
pub fn joint_train(
    items: &[JointItem],
    init: &ScaleSet,
    cfg: &TrainConfig,
) -> Result<JointOutcome> {
    cfg.validate()?;
    if cfg.criterion != Criterion::Ce {
        return Err(Error::usage("joint training uses the CE criterion"));
    }
    if items.is_empty() {
        return Err(Error::usage("training corpus is empty"));
    }
    let par = cfg.parallelism();
    let mut items = items.to_vec();
    let offsets: Vec<usize> = items
        .iter()
        .scan(0, |acc, it| {
            let o = *acc;
            *acc += it.am.params().len();
            Some(o)
        })
        .collect();
    let am_dim: usize = items.iter().map(|it| it.am.params().len()).sum();
    let mut am_params: Vec<f64> = items
        .iter()
        .flat_map(|it| it.am.params().iter().copied())
        .collect();
    let mut scale_params = init.to_flat();
    let mut scale_opt = Adam::new(cfg.optimizer(), scale_params.len())?;
    let mut am_opt = Adam::new(cfg.optimizer(), am_dim)?;
    let mut scales = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut seconds = Vec::with_capacity(cfg.epochs);
    let mut last_finite = (scales.clone(), f64::NAN);

    let n = items.len();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        let batch = cfg.batch_size.unwrap_or(n).min(n);
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let values = par.map(chunk.len(), |j| evaluate(&items[chunk[j]], &scales))?;
            let m = chunk.len() as f64;
            let mut loss = 0.0;
            let mut g_scales = vec![0.0; scale_params.len()];
            let mut g_am = vec![0.0; am_dim];
            for (&i, v) in chunk.iter().zip(&values) {
                loss += v.loss / m;
                for (a, g) in g_scales.iter_mut().zip(v.gradient.scales_flat()) {
                    *a += g / m;
                }
                let d = v
                    .gradient
                    .d_toy_am
                    .as_ref()
                    .expect("toy-AM objective fills d_toy_am");
                for (a, g) in g_am[offsets[i]..offsets[i] + d.len()].iter_mut().zip(d) {
                    *a += g / m;
                }
            }
            let finite = loss.is_finite() && g_scales.iter().chain(&g_am).all(|g| g.is_finite());
            if !finite {
                let (s, l) = last_finite;
                return Err(Error::Diverged {
                    epoch,
                    last: Box::new(TrainReport::new(Criterion::Ce, losses, l, s, seconds)),
                });
            }
            last_finite = (scales.clone(), loss);
            total += loss * m;
            if cfg.trainable.scales {
                scale_opt.step(&mut scale_params, &g_scales);
                scales = init.with_flat(&scale_params)?;
            }
            if cfg.trainable.toy_am {
                am_opt.step(&mut am_params, &g_am);
                for (it, &o) in items.iter_mut().zip(&offsets) {
                    let len = it.am.params().len();
                    it.am.params_mut().copy_from_slice(&am_params[o..o + len]);
                }
            }
        }
        let epoch_loss = total / n as f64;
        log::info!("joint epoch {}: CE loss {:.6}", epoch + 1, epoch_loss);
        losses.push(epoch_loss);
        seconds.push(start.elapsed().as_secs_f64());
    }
    let final_loss = mean_loss(&items, &scales, par)?;
    Ok(JointOutcome {
        report: TrainReport::new(Criterion::Ce, losses, final_loss, scales, seconds),
        ams: items.into_iter().map(|it| it.am).collect(),
    })
}

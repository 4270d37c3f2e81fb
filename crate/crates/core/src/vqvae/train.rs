use rand::seq::SliceRandom;

use super::{perplexity, Codebook, LossTerms, Normalizer, VqVae, VqVaeConfig};
use crate::autodiff::{AdamState, Tape};
use crate::dsp::MelSpec;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqStepLog {
    pub step: usize,
    pub terms: LossTerms,
    pub perplexity: f64,
}

#[derive(Debug, Clone)]
pub struct VqVaeTraining {
    pub model: VqVae,
    /// The model before the first update.
    pub initial: VqVae,
    pub curve: Vec<VqStepLog>,
    /// Codewords unused during the last complete epoch (or the whole run if
    /// no epoch completed).
    pub dead_codes: Vec<usize>,
}

/// Adam training on batches drawn from seeded per-epoch permutations.
/// `on_step` sees every log entry as it is produced.
pub fn train_vqvae(
    data: &[MelSpec],
    cfg: &VqVaeConfig,
    steps: usize,
    seed: u64,
    mut on_step: impl FnMut(&VqStepLog),
) -> Result<VqVaeTraining> {
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?;
    let mut model = VqVae::new(cfg, first.bands, first.frames, rng::derive_seed(seed, &[0]))?;
    model.set_normalizer(Normalizer::fit(data));
    let initial = model.clone();
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let mut order_rng = rng::rng(rng::derive_seed(seed, &[1]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    let mut usage = Codebook::new(model.codewords().clone())?;
    let mut dead_codes = None;
    let mut curve = Vec::with_capacity(steps);
    let batch = cfg.batch_size.min(data.len());
    for step in 0..steps {
        let mut picks = Vec::with_capacity(batch);
        while picks.len() < batch {
            if cursor == order.len() {
                if step > 0 {
                    dead_codes = Some(usage.dead_codes());
                    usage.reset_usage();
                }
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            picks.push(&data[order[cursor]]);
            cursor += 1;
        }
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let (loss, idx) = model
            .loss_graph(&mut tape, &bound, &picks)
            .map_err(|e| diverged(step, e))?;
        let grads = tape.backward(loss.total).map_err(|e| diverged(step, e))?;
        adam.step_from_tape(model.params_mut(), &bound, &grads)
            .map_err(|e| diverged(step, e))?;
        usage.record(&idx);
        let log = VqStepLog {
            step,
            terms: loss.values(&tape),
            perplexity: perplexity(&idx, cfg.codebook_size),
        };
        on_step(&log);
        curve.push(log);
    }
    Ok(VqVaeTraining {
        model,
        initial,
        curve,
        dead_codes: dead_codes.unwrap_or_else(|| usage.dead_codes()),
    })
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(m) | Error::Training(m) => Error::Training(format!("diverged at step {step}: {m}")),
        other => other,
    }
}

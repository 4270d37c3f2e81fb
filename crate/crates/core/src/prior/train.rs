use rand::seq::SliceRandom;

use super::{ClassCondition, PriorConfig, PriorModel};
use crate::autodiff::{AdamState, Tape};
use crate::error::{Error, Result};
use crate::index_grid::IndexGrid;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorStepLog {
    pub step: usize,
    pub loss: f32,
}

#[derive(Debug, Clone)]
pub struct PriorTraining {
    pub model: PriorModel,
    pub curve: Vec<PriorStepLog>,
}

/// Adam on mean next-index cross-entropy over seeded per-epoch permutations.
#[allow(clippy::too_many_arguments)]
pub fn train_prior(
    grids: &[IndexGrid],
    labels: &[usize],
    num_classes: usize,
    codebook_size: usize,
    cfg: &PriorConfig,
    steps: usize,
    seed: u64,
    mut on_step: impl FnMut(&PriorStepLog),
) -> Result<PriorTraining> {
    let first = grids
        .first()
        .ok_or_else(|| Error::InvalidArgument("prior training set is empty".into()))?;
    if grids.len() != labels.len() {
        return Err(Error::dim(format!("{} grids with {} labels", grids.len(), labels.len())));
    }
    for g in grids {
        g.check_range(codebook_size)?;
    }
    let conds = labels
        .iter()
        .map(|&l| ClassCondition::new(l, num_classes))
        .collect::<Result<Vec<_>>>()?;
    let mut model = PriorModel::new(
        cfg,
        codebook_size,
        num_classes,
        first.rows(),
        first.cols(),
        rng::derive_seed(seed, &[0]),
    )?;
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let mut order_rng = rng::rng(rng::derive_seed(seed, &[1]));
    let mut order: Vec<usize> = (0..grids.len()).collect();
    let mut cursor = order.len();
    let batch = cfg.batch_size.min(grids.len());
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut picks = Vec::with_capacity(batch);
        while picks.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            picks.push(order[cursor]);
            cursor += 1;
        }
        let gs: Vec<&IndexGrid> = picks.iter().map(|&i| &grids[i]).collect();
        let cs: Vec<ClassCondition> = picks.iter().map(|&i| conds[i]).collect();
        let fail = |e: Error| match e {
            Error::NonFinite(m) | Error::Training(m) => {
                Error::Training(format!("prior diverged at step {step}: {m}"))
            }
            other => other,
        };
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let loss = model.loss_graph(&mut tape, &bound, &gs, &cs).map_err(fail)?;
        let grads = tape.backward(loss).map_err(fail)?;
        adam.step_from_tape(model.params_mut(), &bound, &grads).map_err(fail)?;
        let log = PriorStepLog {
            step,
            loss: tape.value(loss).item(),
        };
        on_step(&log);
        curve.push(log);
    }
    Ok(PriorTraining { model, curve })
}

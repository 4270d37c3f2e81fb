use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Tape handles of the three loss components and their sum.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub codebook: Var,
    pub commit: Var,
}

/// Scalar values of the loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f32,
    pub recon: f32,
    pub codebook: f32,
    pub commit: f32,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossTerms {
        LossTerms {
            total: tape.value(self.total).item(),
            recon: tape.value(self.recon).item(),
            codebook: tape.value(self.codebook).item(),
            commit: tape.value(self.commit).item(),
        }
    }
}

/// `mse(x, x_hat) + mse(sg[z], r) + beta * mse(z, sg[r])`.
///
/// The codebook term moves only `r`, the commitment term only `z`.
pub fn vqvae_loss(tape: &mut Tape, x: Var, x_hat: Var, z: Var, r: Var, beta: f32) -> Result<LossVars> {
    let recon = tape.mse(x, x_hat)?;
    let z_sg = tape.detach(z);
    let codebook = tape.mse(z_sg, r)?;
    let r_sg = tape.detach(r);
    let commit = tape.mse(z, r_sg)?;
    let commit = tape.scale(commit, beta)?;
    let total = tape.add(recon, codebook)?;
    let total = tape.add(total, commit)?;
    Ok(LossVars {
        total,
        recon,
        codebook,
        commit,
    })
}

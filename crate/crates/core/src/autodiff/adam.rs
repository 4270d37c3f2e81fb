use super::params::ParamSet;
use super::tape::Gradients;
use super::params::Bound;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f32) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[f32] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f32] {
        &self.v[i]
    }

    /// One update from per-parameter gradients (`None` = zero gradient).
    /// Non-finite gradients abort before anything is modified.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<&[f32]>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::dim(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if let Some(g) = g {
                if g.len() != params.get(id).len() {
                    return Err(Error::dim(format!(
                        "gradient for {} has {} values, parameter has {}",
                        params.name(id),
                        g.len(),
                        params.get(id).len()
                    )));
                }
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Training(format!(
                        "non-finite gradient {} in parameter {} at element {i}",
                        g[i],
                        params.name(id)
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (id, g) in params.ids().zip(grads) {
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Convenience for the usual bind → backward → step loop.
    pub fn step_from_tape(&mut self, params: &mut ParamSet, bound: &Bound, grads: &Gradients) -> Result<()> {
        let gs: Vec<Option<&[f32]>> = bound
            .vars()
            .iter()
            .map(|&v| grads.get(v).map(|t| t.data()))
            .collect();
        self.step(params, &gs)
    }
}

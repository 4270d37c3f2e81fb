//! Parameterized layers built from tape operations.

use rand::Rng;

use super::params::{Bound, ParamId, ParamSet};
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add_kaiming(
            format!("{name}.weight"),
            &[cout, cin, kernel, kernel],
            cin * kernel * kernel,
            rng,
        );
        let bias = params.add_zeros(format!("{name}.bias"), &[cout]);
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, p[self.weight], self.stride, self.padding)?;
        tape.add_channel_bias(y, p[self.bias])
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        // Each output cell receives about cin * (kernel / stride)^2 taps.
        let fan_in = (cin * kernel * kernel / (stride * stride)).max(1);
        let weight = params.add_kaiming(
            format!("{name}.weight"),
            &[cin, cout, kernel, kernel],
            fan_in,
            rng,
        );
        let bias = params.add_zeros(format!("{name}.bias"), &[cout]);
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv_transpose2d(x, p[self.weight], self.stride, self.padding)?;
        tape.add_channel_bias(y, p[self.bias])
    }
}

/// `x + conv1x1(relu(conv3x3(relu(x))))`, channel count preserved.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv3: Conv2d,
    pub conv1: Conv2d,
}

impl ResidualBlock {
    pub fn new(params: &mut ParamSet, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv3: Conv2d::new(params, &format!("{name}.conv3"), channels, channels, 3, 1, 1, rng),
            conv1: Conv2d::new(params, &format!("{name}.conv1"), channels, channels, 1, 1, 0, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = tape.relu(x)?;
        let h = self.conv3.forward(tape, p, h)?;
        let h = tape.relu(h)?;
        let h = self.conv1.forward(tape, p, h)?;
        tape.add(x, h)
    }
}

/// `x · W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: params.add_kaiming(format!("{name}.weight"), &[cin, cout], cin, rng),
            bias: params.add_zeros(format!("{name}.bias"), &[cout]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        tape.add_channel_bias(y, p[self.bias])
    }
}

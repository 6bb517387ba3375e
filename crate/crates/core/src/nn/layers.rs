use candle_core::{Result, Tensor};
use rand::Rng;

use super::conv;
use super::store::{Builder, Init};

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
    dilation: usize,
}

impl Conv2d {
    /// He-style init; `gain` scales the weight std relative to `1/sqrt(fan_in)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        b: &mut Builder<'_, R>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        gain: f64,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let weight = b.param("weight", &[out_ch, in_ch, kernel, kernel], Init::Scaled { gain, fan_in })?;
        let bias = Some(b.param("bias", &[out_ch], Init::Zeros)?);
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            dilation,
        })
    }

    /// Same-size convolution with stride 1.
    pub fn same<R: Rng>(b: &mut Builder<'_, R>, in_ch: usize, out_ch: usize, kernel: usize, gain: f64) -> Result<Self> {
        Self::new(b, in_ch, out_ch, kernel, 1, kernel / 2, 1, gain)
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv::conv2d(x, &self.weight, self.stride, self.padding, self.dilation)?;
        match &self.bias {
            Some(bias) => y.broadcast_add(&bias.reshape((1, (), 1, 1))?),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(
        b: &mut Builder<'_, R>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
    ) -> Result<Self> {
        // Each output pixel of a stride-s transposed conv sees roughly in_ch * (k/s)^2 inputs.
        let fan_in = in_ch * (kernel / stride.max(1)).pow(2);
        let weight = b.param("weight", &[in_ch, out_ch, kernel, kernel], Init::Scaled { gain, fan_in })?;
        let bias = b.param("bias", &[out_ch], Init::Zeros)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv::conv_transpose2d(x, &self.weight, self.stride, self.padding)?
            .broadcast_add(&self.bias.reshape((1, (), 1, 1))?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, in_dim: usize, out_dim: usize, gain: f64) -> Result<Self> {
        let weight = b.param("weight", &[out_dim, in_dim], Init::Scaled { gain, fan_in: in_dim })?;
        let bias = b.param("bias", &[out_dim], Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    /// `(B, in)` to `(B, out)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)
    }
}

//! Small layer toolkit on top of candle tensors: parameter store with seeded
//! initialization, convolution layers, and the handful of functional ops the
//! networks share.

pub mod conv;
pub mod gradcheck;
mod layers;
mod store;

pub use layers::{Conv2d, ConvTranspose2d, Linear};
pub use store::{Builder, Init, ParamStore};

use candle_core::{DType, Device, Result, Tensor, D};

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    x.relu()? - (x.neg()?.relu()? * slope)?
}

/// Per-sample, per-channel standardization over the spatial extent.
pub fn instance_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    centered
        .broadcast_div(&(var + eps)?.sqrt()?)?
        .reshape((b, c, h, w))
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    x.reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, 2, w, 2))?
        .reshape((b, c, 2 * h, 2 * w))
}

/// 2×2 average pooling with stride 2.
pub fn avg_pool2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        candle_core::bail!("avg_pool2x needs even spatial dims, got {h}x{w}");
    }
    x.reshape((b, c, h / 2, 2, w / 2, 2))?.mean(5)?.mean(3)
}

/// Mean per-pixel cross-entropy between `(B, C, H, W)` logits and a one-hot
/// target of the same shape.
pub fn cross_entropy_onehot(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    let (b, _, h, w) = logits.dims4()?;
    let logp = candle_nn::ops::log_softmax(logits, 1)?;
    (logp * target)?.sum_all()?.affine(-1.0 / (b * h * w) as f64, 0.0)
}

/// Kullback-Leibler divergence of `N(mean, exp(log_var))` from `N(0, I)`,
/// summed over latent dims and averaged over the batch. Inputs are `(B, D)`.
pub fn kl_standard_normal(mean: &Tensor, log_var: &Tensor) -> Result<Tensor> {
    let b = mean.dim(0)?;
    let inner = ((log_var + 1.0)? - mean.sqr()?)?.sub(&log_var.exp()?)?;
    inner.sum_all()?.affine(-0.5 / b as f64, 0.0)
}

pub fn tensor_from_f32(data: Vec<f32>, shape: &[usize], dtype: DType) -> Result<Tensor> {
    Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    t.to_dtype(DType::F64)?.to_scalar::<f64>()
}

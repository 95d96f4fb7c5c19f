//! Encoder-decoder networks: declarative layer graphs, parameter layouts,
//! forward passes with ReLU traces and reverse-mode gradients.

mod forward;
mod layers;
mod params;
mod spec;

pub(crate) use layers::{avg_pool, haar_pool, haar_unpool, zero_insert};
pub use forward::{ActivationTrace, Network, Pass, ReluMode, ReluRecord, RunOptions, SkipStore};
pub use params::{load_checkpoint, save_checkpoint, LayerParams, ParamLayout, ParamSlot, ParamStore};
pub use spec::{build_unet, check_unet_extents, ChannelStep, JoinMode, LayerKind, NetworkSpec, UnetOptions};


use crate::error::{ensure, Result};
use crate::tensor::{ComplexTensor, Features, C64};

/// `[N_c, H, W]` complex stack to `2·N_c` real channels ordered
/// `[re₁ … re_{N_c}, im₁ … im_{N_c}]`.
pub fn complex_to_channels(x: &ComplexTensor) -> Result<Features> {
    let (c, h, w) = match *x.shape() {
        [c, h, w] => (c, h, w),
        [h, w] => (1, h, w),
        _ => return Err(crate::Error::Shape(format!("expected [C, H, W], got {:?}", x.shape()))),
    };
    let mut data = Vec::with_capacity(2 * x.len());
    data.extend(x.data().iter().map(|v| v.re));
    data.extend(x.data().iter().map(|v| v.im));
    Features::new(2 * c, h, w, data)
}

/// Inverse of [`complex_to_channels`]; always returns `[N_c, H, W]`.
pub fn channels_to_complex(f: &Features) -> Result<ComplexTensor> {
    ensure!(f.channels % 2 == 0, Shape, "odd channel count {} cannot pair re/im", f.channels);
    let half = f.len() / 2;
    let data = (0..half).map(|i| C64::new(f.data[i], f.data[half + i])).collect();
    ComplexTensor::new(vec![f.channels / 2, f.height, f.width], data)
}

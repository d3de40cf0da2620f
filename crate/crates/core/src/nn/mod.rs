//! A small convolutional generator/discriminator pair with hand-written
//! backward passes, and the adversarial two-phase trainer.

mod augment;
mod conv;
mod discriminator;
mod generator;
mod param;
mod tensor;
mod train;

pub use augment::{AugmentConfig, Dihedral, TrainingPool};
pub use conv::{conv2d_backward, conv2d_forward, same_padding, ConvCache, ConvShape};
pub use discriminator::{Discriminator, DiscriminatorCache, DiscriminatorConfig};
pub use generator::{DecoderLayer, EncoderLayer, Generator, GeneratorCache, GeneratorConfig};
pub use param::{Adam, AdamConfig, Param, ParamSet};
pub use tensor::{
    concat_batch, concat_channels, global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward,
    sigmoid, softplus, split_channels, upsample_nearest2, upsample_nearest2_backward, Tensor4, LEAKY_SLOPE,
};
pub use train::*;

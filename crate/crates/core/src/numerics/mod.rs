//! Numeric formats and the scalar transcendental functions shared by the
//! datapath model and the reference sampler.

mod bf16;
mod mx;

pub use bf16::{round_bf16, Bf16};
pub use mx::{
    e4m3_decode, e4m3_encode, mx_decode, mx_encode, MxFp8Block, E4M3_MAX, E8M0_BIAS,
    MX_BLOCK_BYTES, MX_BLOCK_LEN,
};

use std::fmt::Debug;

/// Real scalar the math kernels are generic over.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Debug + Default + Send + Sync + 'static
{
    fn from_f32(v: f32) -> Self {
        <Self as num_traits::FromPrimitive>::from_f32(v).unwrap_or_else(Self::nan)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `e^x` correctly rounded to 32 bits (evaluated in double precision).
pub fn scalar_exp(x: f32) -> f32 {
    (x as f64).exp() as f32
}

/// `1/x` in 32 bits; `None` for a zero divisor, which the datapath reports as a fault.
pub fn scalar_recip(x: f32) -> Option<f32> {
    if x == 0.0 {
        None
    } else {
        Some(1.0 / x)
    }
}

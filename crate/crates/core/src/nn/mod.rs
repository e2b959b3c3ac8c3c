//! Layer forward/backward passes with explicit caches and gradients.
//!
//! Each layer exposes a `*_forward` returning its output plus whatever the
//! backward pass needs, and a `*_backward` that accumulates parameter
//! gradients into caller-provided tensors. Passing `None` for the parameter
//! gradients skips that work, which is how frozen groups stay cheap.

pub mod activation;
pub mod conv;
pub mod gru;
pub mod linear;
pub mod pool;

pub use activation::{relu_backward, relu_forward, sigmoid};
pub use conv::{conv2d, conv2d_backward, conv2d_forward, Conv2dCache, Conv2dSpec};
pub use gru::{bigru, bigru_backward, bigru_forward, BiGruCache, GruGrads, GruWeights};
pub use linear::{linear, linear_backward};
pub use pool::{maxpool2d, maxpool2d_backward, maxpool2d_forward, PoolCache};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub(crate) fn dims4<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<[usize; 4]> {
    t.expect_rank(op, 4)?;
    let s = t.shape();
    Ok([s[0], s[1], s[2], s[3]])
}

pub(crate) fn expect_shape<T: Scalar>(t: &Tensor<T>, op: &'static str, what: &str, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::Shape {
            op,
            detail: format!("{what}: expected {shape:?}, got {:?}", t.shape()),
        });
    }
    Ok(())
}

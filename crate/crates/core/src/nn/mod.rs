//! Forward and backward passes for the primitive layers of the network.
//!
//! Every forward returns its output together with a cache holding exactly the
//! values the matching backward needs. Caches are plain data; handing a cache
//! to the wrong backward, or a gradient of the wrong shape, is rejected with a
//! dimension or contract error.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod linear;
mod pool;

pub use activation::{relu, relu_backward, softmax, ReluCache};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormParams};
pub use conv::{conv2d_backward, conv2d_forward, Conv2dCache};
pub use dropout::{dropout, dropout_backward, DropoutCache};
pub use linear::{linear, linear_backward, LinearCache};
pub use pool::{avgpool2d, avgpool2d_backward, global_avgpool, global_avgpool_backward, PoolCache};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Whether stochastic and batch-statistic layers run in training or inference form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub(crate) fn expect_shape<T: Scalar>(
    op: &'static str,
    t: &Tensor<T>,
    expected: &[usize],
) -> Result<()> {
    if t.shape() != expected {
        return Err(Error::dim(
            op,
            format!("expected shape {expected:?}, got {:?}", t.shape()),
        ));
    }
    Ok(())
}

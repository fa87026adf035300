pub mod clip;
pub mod distill;
pub mod error;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod net;
pub mod noise;
pub mod optim;
pub mod planner;
pub mod scene;
pub mod sparsity;
pub mod tape;
pub mod tensor;
pub mod train;

pub use clip::{Clip, Frame};
pub use error::{Error, FormatError, Result};
pub use net::{Model, NetworkSpec};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
pub use train::Batch;

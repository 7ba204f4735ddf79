//! Channel-level backdoor grafting on small VGG-style classifiers.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense f32 tensors plus the forward/backward kernels a
//!   VGG-style stack needs (conv, relu, maxpool, linear, softmax-CE) and a
//!   momentum SGD step.
//! - [`data`]: deterministic synthetic image datasets, trigger stamping, and
//!   the SRAD dataset file format.
//! - [`net`]: architecture descriptions, model init/forward/training, the
//!   narrowing map that derives a subnet architecture, and the SRAW weights
//!   file format.
//! - [`subnet`]: trains a narrow scalar-output subnet to stay near 0 on
//!   clean inputs and fire near 100 on triggered inputs.
//! - [`graft`]: plans and applies the channel-slice replacement that embeds
//!   a subnet into any host weight instance of the same architecture.
//! - [`eval`]: clean-accuracy / attack-rate metrics and the multi-instance
//!   evaluation protocol.
//! - [`deploy`]: a toy TCP inference server backed by a shared weight
//!   buffer, plus on-load and after-load byte-patching attacks against it.
//!
//! All digests in the crate are SHA-256 (see [`digest`]).

pub mod data;
pub mod deploy;
pub mod digest;
pub mod eval;
pub mod gradcheck;
pub mod graft;
pub mod net;
pub mod subnet;
pub mod tensor;

pub use data::{DatasetSplit, TriggerSpec};
pub use net::{ArchitectureSpec, LayerSpec, ModelWeights, SubnetWidths};
pub use tensor::Tensor;

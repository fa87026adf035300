//! Each chapter of the guide becomes a module doc, so `cargo test` runs its
//! snippets as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/networks.md")]
pub mod networks {}
#[doc = include_str!("../../../book/src/noise.md")]
pub mod noise {}
#[doc = include_str!("../../../book/src/sparsity.md")]
pub mod sparsity {}
#[doc = include_str!("../../../book/src/pruning.md")]
pub mod pruning {}
#[doc = include_str!("../../../book/src/distillation.md")]
pub mod distillation {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

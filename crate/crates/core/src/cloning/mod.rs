//! Width expansion of a trained source model into a function-preserving
//! destination model.
//!
//! Every cloned dimension is described by a [`CloneMap`]. A linear layer is
//! expanded so that, for cloned inputs, each destination row reproduces the
//! source row it clones; the [`Strategy`] picks how the source weight is
//! split across duplicate column blocks.

mod clone_map;
mod expand;
mod linear;
mod strategy;

pub use clone_map::{make_clone_map, make_head_clone_map, CloneMap};
pub use expand::{expand_attention, expand_config, expand_model, ExpandedAttention, ExpansionConfig, ExpansionReceipt, ReceiptEntry};
pub use linear::{expand_embedding, expand_linear, expand_norm, expand_positional, noise_std};
pub use strategy::Strategy;

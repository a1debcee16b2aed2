//! Pre-norm decoder-only transformer: configuration, parameters and the
//! forward pass.

mod config;
mod forward;
mod params;
mod rotary;

pub use config::{Activation, ModelConfig, NormKind, PosKind, PRESET_NAMES};
pub use forward::{forward, forward_batch, ForwardTrace, Mode, Snapshot, TraceOptions};
pub(crate) use forward::{forward_cached, BlockCache, Cache, NormCache};
pub use params::{param_layout, Block, Linear, Norm, ParamKind, ParamSpec, TransformerParams};
pub use rotary::rotary_apply;
pub(crate) use rotary::RotaryTable;

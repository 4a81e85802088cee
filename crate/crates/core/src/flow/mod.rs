//! Conditional masked autoregressive flow: exact forward/inverse transforms,
//! log-absolute-Jacobian-determinants, NLL training, and model files.

mod io;
mod made;
mod model;

pub use io::{load_flow, save_flow};
pub use made::{build_made_masks, BlockCache, MadeBlock, MadeMasks, S_CLAMP};
pub use model::{fit_flow, FlowModel, DEFAULT_BLOCKS, DEFAULT_HIDDEN};

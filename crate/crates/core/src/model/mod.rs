//! The segmentation network: frame encoder, memory encoder and bank, and
//! the two-way mask decoder.

mod decoder;
mod encoder;
mod memory;

use std::path::Path;

use robomask_tensor::{checkpoint, ParamStore};

pub use decoder::{decode_masks, embed_prompts, select_mask, DecoderOutput, Prompt};
pub use encoder::{
    encode_frame, feature_tokens, patch_embed, patchify, FrameFeatures, FINE, PATCH,
};
pub use memory::{encode_memory, MemoryBank, MemoryEntry};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::layers::{init_params, ParamSpec};
use crate::{associator, autoprompt};

/// Every parameter of the network, in initialization order.
pub fn param_specs(cfg: &Config) -> Vec<ParamSpec> {
    let mut s = encoder::specs(cfg);
    s.extend(memory::specs(cfg));
    s.extend(associator::specs(cfg));
    s.extend(autoprompt::specs(cfg));
    s.extend(decoder::specs(cfg));
    s
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: Config,
    pub params: ParamStore,
}

impl Model {
    /// Fresh parameters seeded by `config.seed`.
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let params = init_params(&param_specs(&config), config.seed);
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(&self.params, path)?)
    }

    /// Loads parameters and checks them against the shapes `config` implies.
    pub fn load(config: Config, path: &Path) -> Result<Self> {
        let params = checkpoint::load(path)?;
        let expected = Model::new(config.clone())?;
        expected.params.check_compatible(&params).map_err(|e| {
            Error::Config(format!(
                "{}: checkpoint does not match config: {e}",
                path.display()
            ))
        })?;
        Ok(Self { config, params })
    }
}

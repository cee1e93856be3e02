use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// What to do with a channel name missing from the vocabulary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPolicy {
    #[default]
    Strict,
    /// Append a freshly initialized embedding row.
    AllowNew,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub enc_ff: usize,
    pub dec_layers: usize,
    pub dec_d_model: usize,
    pub dec_heads: usize,
    pub dec_ff: usize,
    /// Samples per patch; also the patch-projection kernel and stride.
    pub patch_len: usize,
    pub mask_ratio: f64,
    pub max_channels: usize,
    /// Rows of the temporal embedding tables.
    pub max_patches: usize,
    #[serde(default)]
    pub channel_policy: ChannelPolicy,
}

impl ModelConfig {
    /// Small configuration of about 5M parameters.
    pub fn tiny() -> Self {
        Self {
            d_model: 256,
            enc_layers: 6,
            enc_heads: 4,
            enc_ff: 1024,
            dec_layers: 2,
            dec_d_model: 384,
            dec_heads: 4,
            dec_ff: 1536,
            patch_len: 50,
            mask_ratio: 0.5,
            max_channels: 128,
            max_patches: 32,
            channel_policy: ChannelPolicy::Strict,
        }
    }

    /// Desk-scale default: `tiny` shrunk roughly eightfold in width.
    pub fn tiny8() -> Self {
        Self {
            d_model: 64,
            enc_layers: 2,
            enc_heads: 2,
            enc_ff: 256,
            dec_layers: 1,
            dec_d_model: 48,
            dec_heads: 2,
            dec_ff: 192,
            ..Self::tiny()
        }
    }

    /// Minimal configuration used for finite-difference checks.
    pub fn gradcheck(patch_len: usize) -> Self {
        Self {
            d_model: 8,
            enc_layers: 1,
            enc_heads: 2,
            enc_ff: 16,
            dec_layers: 1,
            dec_d_model: 8,
            dec_heads: 2,
            dec_ff: 16,
            patch_len,
            mask_ratio: 0.5,
            max_channels: 16,
            max_patches: 8,
            channel_policy: ChannelPolicy::Strict,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("enc_heads", self.enc_heads),
            ("dec_d_model", self.dec_d_model),
            ("dec_heads", self.dec_heads),
            ("enc_ff", self.enc_ff),
            ("dec_ff", self.dec_ff),
            ("patch_len", self.patch_len),
            ("max_channels", self.max_channels),
            ("max_patches", self.max_patches),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("model.{name} must be positive")));
        }
        if self.d_model % self.enc_heads != 0 {
            return Err(invalid(format!(
                "model.d_model ({}) must be divisible by model.enc_heads ({})",
                self.d_model, self.enc_heads
            )));
        }
        if self.dec_d_model % self.dec_heads != 0 {
            return Err(invalid(format!(
                "model.dec_d_model ({}) must be divisible by model.dec_heads ({})",
                self.dec_d_model, self.dec_heads
            )));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(invalid(format!(
                "model.mask_ratio must lie in (0, 1), got {}",
                self.mask_ratio
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [
            ModelConfig::tiny(),
            ModelConfig::tiny8(),
            ModelConfig::gradcheck(4),
        ] {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn rejects_indivisible_heads_and_bad_ratio() {
        let cfg = ModelConfig {
            enc_heads: 3,
            ..ModelConfig::tiny8()
        };
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("enc_heads"));
        let cfg = ModelConfig {
            mask_ratio: 1.0,
            ..ModelConfig::tiny8()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            patch_len: 0,
            ..ModelConfig::tiny8()
        };
        assert!(cfg.validate().is_err());
    }
}

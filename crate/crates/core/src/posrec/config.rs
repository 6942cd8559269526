use crate::error::{invalid, Result};
use crate::manifest::Manifest;
use crate::posenc::EncodingKind;
use crate::sessgraph::AnchorWeighting;

/// Architecture and initialization settings of a [`PosRecModel`](super::PosRecModel).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Vocabulary size `m`.
    pub num_items: usize,
    /// Embedding width `d`.
    pub dim: usize,
    /// Longest session the encoding covers; longer sessions keep their most
    /// recent `max_len` clicks.
    pub max_len: usize,
    pub encoding: EncodingKind,
    pub heads: usize,
    pub ffn_dim: usize,
    pub layer_norm: bool,
    pub anchors: bool,
    pub anchor_weighting: AnchorWeighting,
    /// Readout weights for the PGGNN last-item row, the transformer last-item
    /// row and the transformer first-item row.
    pub lambda: [f64; 3],
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(num_items: usize, dim: usize, encoding: EncodingKind) -> Self {
        ModelConfig {
            num_items,
            dim,
            max_len: 50,
            encoding,
            heads: 1,
            ffn_dim: 2 * dim,
            layer_norm: true,
            anchors: true,
            anchor_weighting: AnchorWeighting::Distance,
            lambda: [1.0, 1.0, 0.5],
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_items == 0 {
            return Err(invalid!("vocabulary is empty"));
        }
        if self.dim == 0 || self.ffn_dim == 0 {
            return Err(invalid!("dim and ffn_dim must be positive"));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(invalid!("dim {} is not divisible into {} heads", self.dim, self.heads));
        }
        if self.lambda.iter().any(|l| !l.is_finite()) {
            return Err(invalid!("readout weights must be finite"));
        }
        Ok(())
    }

    pub fn write_manifest(&self, m: &mut Manifest) {
        m.set("m", self.num_items)
            .set("d", self.dim)
            .set("max_len", self.max_len)
            .set("scheme", self.encoding)
            .set("heads", self.heads)
            .set("ffn_dim", self.ffn_dim)
            .set("layer_norm", self.layer_norm)
            .set("anchors", self.anchors)
            .set("anchor_weighting", self.anchor_weighting.name())
            .set("lambda0", self.lambda[0])
            .set("lambda1", self.lambda[1])
            .set("lambda2", self.lambda[2])
            .set("seed", self.seed);
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        Ok(ModelConfig {
            num_items: m.parse_value("m")?,
            dim: m.parse_value("d")?,
            max_len: m.parse_value("max_len")?,
            encoding: m.parse_value("scheme")?,
            heads: m.parse_value("heads")?,
            ffn_dim: m.parse_value("ffn_dim")?,
            layer_norm: m.parse_value("layer_norm")?,
            anchors: m.parse_value("anchors")?,
            anchor_weighting: m.parse_value("anchor_weighting")?,
            lambda: [
                m.parse_value("lambda0")?,
                m.parse_value("lambda1")?,
                m.parse_value("lambda2")?,
            ],
            seed: m.parse_value("seed")?,
        })
    }
}

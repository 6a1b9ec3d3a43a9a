use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Dgcnn,
    Pointnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Attn,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottleneckKind {
    /// Per-point features feed a correspondence-map head.
    PerPoint,
    /// Max-pooled global code feeds a fully connected decoder (autoencoder baseline).
    Global,
}

/// Architecture choices. Keys `N`, `M`, `L` follow the usual hyper-parameter tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "defaults::encoder")]
    pub encoder: EncoderKind,
    #[serde(default = "defaults::head")]
    pub head: HeadKind,
    #[serde(default = "defaults::bottleneck")]
    pub bottleneck: BottleneckKind,
    #[serde(rename = "N", default = "defaults::points")]
    pub n_input: usize,
    #[serde(rename = "M", default = "defaults::points")]
    pub m_output: usize,
    #[serde(rename = "L", default = "defaults::features")]
    pub feature_dim: usize,
    /// Neighborhood size of the dynamic edge-convolution graph.
    #[serde(default = "defaults::graph_k")]
    pub graph_k: usize,
    /// Width of the encoder's hidden layers.
    #[serde(default = "defaults::hidden")]
    pub hidden_dim: usize,
    #[serde(default = "defaults::sfa_blocks")]
    pub sfa_blocks: usize,
    #[serde(default = "defaults::heads")]
    pub attention_heads: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    use super::*;
    pub fn encoder() -> EncoderKind {
        EncoderKind::Dgcnn
    }
    pub fn head() -> HeadKind {
        HeadKind::Attn
    }
    pub fn bottleneck() -> BottleneckKind {
        BottleneckKind::PerPoint
    }
    pub fn points() -> usize {
        1024
    }
    pub fn features() -> usize {
        128
    }
    pub fn graph_k() -> usize {
        20
    }
    pub fn hidden() -> usize {
        64
    }
    pub fn sfa_blocks() -> usize {
        2
    }
    pub fn heads() -> usize {
        4
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: defaults::encoder(),
            head: defaults::head(),
            bottleneck: defaults::bottleneck(),
            n_input: defaults::points(),
            m_output: defaults::points(),
            feature_dim: defaults::features(),
            graph_k: defaults::graph_k(),
            hidden_dim: defaults::hidden(),
            sfa_blocks: defaults::sfa_blocks(),
            attention_heads: defaults::heads(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// PointNet autoencoder baseline.
    pub fn pn_ae() -> Self {
        Self {
            encoder: EncoderKind::Pointnet,
            head: HeadKind::Mlp,
            bottleneck: BottleneckKind::Global,
            ..Self::default()
        }
    }

    /// DGCNN autoencoder baseline.
    pub fn dg_ae() -> Self {
        Self {
            encoder: EncoderKind::Dgcnn,
            head: HeadKind::Mlp,
            bottleneck: BottleneckKind::Global,
            ..Self::default()
        }
    }

    /// Short label such as `dgcnn+attn` or `pointnet-ae`.
    pub fn variant_name(&self) -> String {
        let enc = match self.encoder {
            EncoderKind::Dgcnn => "dgcnn",
            EncoderKind::Pointnet => "pointnet",
        };
        match (self.bottleneck, self.head) {
            (BottleneckKind::Global, _) => format!("{enc}-ae"),
            (BottleneckKind::PerPoint, HeadKind::Attn) => format!("{enc}+attn"),
            (BottleneckKind::PerPoint, HeadKind::Mlp) => format!("{enc}+mlp"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return bad("L and hidden_dim must be at least 1".into());
        }
        if self.n_input == 0 || self.m_output == 0 {
            return bad("N and M must be at least 1".into());
        }
        if self.encoder == EncoderKind::Dgcnn && (self.graph_k == 0 || self.graph_k >= self.n_input)
        {
            return bad(format!(
                "graph_k = {} must be in [1, N = {})",
                self.graph_k, self.n_input
            ));
        }
        if self.bottleneck == BottleneckKind::Global && self.head != HeadKind::Mlp {
            return bad("a global bottleneck uses the MLP decoder; set head to \"mlp\"".into());
        }
        if self.bottleneck == BottleneckKind::PerPoint && self.head == HeadKind::Attn {
            if self.attention_heads == 0 || self.feature_dim % self.attention_heads != 0 {
                return bad(format!(
                    "L = {} must be divisible by attention_heads = {}",
                    self.feature_dim, self.attention_heads
                ));
            }
        }
        Ok(())
    }

    /// Smallest input size the encoder accepts.
    pub fn min_points(&self) -> usize {
        match self.encoder {
            EncoderKind::Dgcnn => self.graph_k + 1,
            EncoderKind::Pointnet => 1,
        }
    }
}

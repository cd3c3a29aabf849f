//! Forward passes of the scene-graph parser: the shared masked-attention
//! decoder, the cross-modal object associator, modality-specific detection
//! heads, the relation proposal constructor and the relation decoder.
//!
//! Everything is single-head attention over dense `f64` matrices. Backbone
//! features are inputs (see [`io`]); weights come from [`params`].

mod associator;
mod decoder;
mod heads;
pub mod io;
pub mod params;
mod relation;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Modality;
use crate::tensor::{Matrix, RngSeed, TensorError};

pub use associator::{associate, associate_objects, filter_associations, fuse_queries, infer_associations};
pub use decoder::{
    attend, binarize_attention_mask, mask_decoder_step, run_mask_decoder, temporal_encode,
};
pub use heads::{classify_objects, detect, mask_logits, open_vocab_label, open_vocab_indices, predict_masks};
pub(crate) use heads::first_argmax;
pub use params::ModelParams;
pub use relation::{
    build_relation_queries, classify_relations, pair_confidence, project_subject_object,
    relation_decode, rpc_refine, select_top_k_pairs,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Shape(String),
    #[error("mask threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("attention mask may only contain 0 and -inf, found {0}")]
    MaskValue(f64),
    #[error("mask decoder needs at least one feature matrix")]
    NoFeatures,
    #[error("relation decoder needs a non-empty context")]
    EmptyContext,
    #[error("requested top-{k} but only {available} pairs exist")]
    TooManyPairs { k: usize, available: usize },
    #[error("pair index ({0}, {1}) out of range")]
    PairIndex(usize, usize),
    #[error("relation token count {0} is odd")]
    OddTokens(usize),
    #[error("class vocabulary is empty")]
    EmptyVocabulary,
    #[error("probabilities must lie in [0, 1]")]
    Probability,
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Model hyper-parameters. Unset counts default to the published
/// configuration: 100 queries, width 256, 9 mask-decoder layers (three per
/// feature scale), 4 proposal layers, 6 relation-decoder layers and a
/// three-layer 3x3 convolutional association filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub num_queries: usize,
    /// Per-modality overrides of `num_queries`.
    pub queries_per_modality: BTreeMap<Modality, usize>,
    pub mask_decoder_layers: usize,
    pub rpc_layers: usize,
    pub relation_decoder_layers: usize,
    pub associator_layers: usize,
    pub associator_kernel: usize,
    /// Hidden width of the two-layer MLP heads; defaults to `embed_dim`.
    pub mlp_hidden: Option<usize>,
    /// Feed-forward width in the relation decoder; defaults to `2 * embed_dim`.
    pub ffn_dim: Option<usize>,
    pub top_k_pairs: usize,
    pub association_threshold: f64,
    pub mask_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 256,
            num_queries: 100,
            queries_per_modality: BTreeMap::new(),
            mask_decoder_layers: 9,
            rpc_layers: 4,
            relation_decoder_layers: 6,
            associator_layers: 3,
            associator_kernel: 3,
            mlp_hidden: None,
            ffn_dim: None,
            top_k_pairs: 10,
            association_threshold: 0.5,
            mask_threshold: 0.5,
        }
    }
}

impl ModelConfig {
    /// Small configuration for tests and demos.
    pub fn tiny(embed_dim: usize, num_queries: usize) -> Self {
        Self {
            embed_dim,
            num_queries,
            mask_decoder_layers: 3,
            rpc_layers: 2,
            relation_decoder_layers: 2,
            top_k_pairs: 4,
            ..Self::default()
        }
    }

    pub fn queries_for(&self, modality: Modality) -> usize {
        self.queries_per_modality
            .get(&modality)
            .copied()
            .unwrap_or(self.num_queries)
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_hidden.unwrap_or(self.embed_dim)
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_dim.unwrap_or(2 * self.embed_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(ModelError::Config("embed_dim must be at least 1".into()));
        }
        if self.associator_kernel.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "associator_kernel must be odd, got {}",
                self.associator_kernel
            )));
        }
        if !(0.0..=1.0).contains(&self.association_threshold) {
            return Err(ModelError::Config(format!(
                "association_threshold {} outside [0, 1]",
                self.association_threshold
            )));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(ModelError::Threshold(self.mask_threshold));
        }
        Ok(())
    }
}

/// Object queries of one modality, `N_q x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub modality: Modality,
    pub queries: Matrix,
}

impl QuerySet {
    pub fn new(modality: Modality, queries: Matrix) -> Self {
        Self { modality, queries }
    }

    pub fn len(&self) -> usize {
        self.queries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.queries.cols()
    }
}

/// Seeded initial queries for a modality.
pub fn init_queries(config: &ModelConfig, modality: Modality, seed: RngSeed) -> QuerySet {
    let n = config.queries_for(modality);
    let d = config.embed_dim;
    QuerySet::new(
        modality,
        seed.uniform_matrix(&format!("queries.{modality}"), n, d, d),
    )
}

/// Additive attention mask holding only `0` (attend) and `-inf` (blocked).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    values: Matrix,
}

impl AttentionMask {
    pub fn new(values: Matrix) -> Result<Self> {
        if let Some(&bad) = values
            .data()
            .iter()
            .find(|&&v| v != 0.0 && v != f64::NEG_INFINITY)
        {
            return Err(ModelError::MaskValue(bad));
        }
        Ok(Self { values })
    }

    pub fn open(rows: usize, cols: usize) -> Self {
        Self {
            values: Matrix::zeros(rows, cols),
        }
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// Raw bidirectional cosine associations in `[-1, 1]` and the filtered
/// scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMatrix {
    pub raw: Matrix,
    pub refined: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairConfidenceMatrix {
    pub values: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutput {
    /// `N_q x |classes|`; the last class column is "no object".
    pub class_logits: Matrix,
    /// `N_q x P` mask logits over flattened pixels or points.
    pub mask_logits: Matrix,
}

/// Relation tokens: `k` subject tokens followed by `k` object tokens, pair
/// `i` occupying rows `i` and `k + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationQuerySet {
    pub tokens: Matrix,
    pub pairs: Vec<(usize, usize)>,
}

impl RelationQuerySet {
    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }
}

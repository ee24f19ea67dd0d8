//! Memory-augmented attention with a bounded abstract conceptual representation.
//!
//! The crate is organised bottom-up: [`tensor`] (dense tensors and a reverse-mode
//! tape), [`attend`] (the one attention kernel everything shares), [`attention`]
//! (standard and windowed multi-head attention), [`memory`] (search patterns and
//! top-k retrieval), [`manar`] (the layer itself) and the tooling built on top.

pub mod attend;
pub mod bench;
pub mod attention;
pub mod checks;
pub mod chm;
pub mod config;
pub mod container;
pub mod csvio;
pub mod error;
pub mod manar;
pub mod memory;
pub mod params;
pub mod tensor;
pub mod train;
pub mod transfer;

pub use attend::{attend, AttnWeights, Prefix, Window};
pub use attention::{mha_forward, roi, roi_range, windowed_mha_forward, Mha, MhaHead, MhaTrace, MhaWeights};
pub use config::{parse_config, ConfigName, ManarConfig, DEFAULT_K_TOP};
pub use container::{load_weights, save_weights, WeightContainer};
pub use error::{Error, Result};
pub use manar::{
    acr_decomposition, build_acr, conceptualize, contextualize_tokens, manar_layer_forward, AcrMatrix,
    AttentionTrace, HeadTrace, ManarHead, ManarLayer, ManarLayerWeights,
};
pub use memory::{
    build_search_patterns, retrieve_flat, retrieve_product, split_concept, KeyMode, KeyTable, MemoryUnit,
    MemoryWeights, RetrievalResult, RetrievedConcept, SearchPatternWeights, SearchPatterns,
};
pub use params::Parameters;
pub use tensor::{Scalar, ScoreCounters, ScoreKind, Tape, Tensor, Var};
pub use transfer::{copy_mha_weights, equivalence_check, staged_unfreeze, FreezeMask};
pub use chm::{chm_report, chm_test, ChmLayerRow, ChmQuery, ChmResult};

//! Shared fixtures for the criterion benchmarks.

use manar_core::{KeyMode, ManarConfig, ManarLayerWeights, MhaWeights, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The benchmark layer: `D = 64`, two heads, `MANAR-256.32.128`, product keys.
pub fn bench_config() -> ManarConfig {
    ManarConfig {
        model_dim: 64,
        heads: 2,
        head_dim: 32,
        memory_size: 256,
        acr_size: 32,
        k_top: 8,
        half_window: 64,
        key_mode: KeyMode::Product,
    }
}

/// Input, standard attention weights and memory-layer weights, fixed by `seed`.
pub struct Fixture {
    pub x: Tensor<f32>,
    pub mha: MhaWeights<f32>,
    pub manar: ManarLayerWeights<f32>,
}

pub fn fixture(cfg: &ManarConfig, n: usize, seed: u64) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Fixture {
        x: Tensor::randn(n, cfg.model_dim, 1.0, &mut rng),
        mha: MhaWeights::init(cfg.heads, cfg.head_dim, &mut rng),
        manar: ManarLayerWeights::init(cfg, &mut rng)?,
    })
}

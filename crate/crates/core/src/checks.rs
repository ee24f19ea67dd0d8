//! Randomised self-checks behind the `decomp-check`, `retrieval-check` and
//! `equiv` subcommands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::MhaWeights;
use crate::error::Result;
use crate::manar::{acr_decomposition, build_acr};
use crate::memory::{composite_topk_bruteforce, retrieve_product, split_concept, KeyTable, MemoryWeights, RetrievedConcept};
use crate::tensor::{Scalar, Tensor};
use crate::transfer::equivalence_check;

/// `max|a − b| / max|a|`, with the denominator floored at the smallest normal.
pub fn max_rel_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let scale = a.data().iter().fold(f64::MIN_POSITIVE, |s, x| s.max(x.as_f64().abs()));
    a.max_abs_diff(b) / scale
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub trial: usize,
    pub n: usize,
    pub acr_size: usize,
    pub head_dim: usize,
    pub rel_diff_f32: f64,
    pub rel_diff_f64: f64,
}

pub const DECOMPOSITION_CSV_HEADER: [&str; 6] = ["trial", "n", "acr_size", "head_dim", "rel_diff_f32", "rel_diff_f64"];

fn concepts_of<T: Scalar>(raw: &Tensor<f64>, d: usize) -> Result<Vec<RetrievedConcept<T>>> {
    (0..raw.rows())
        .map(|i| split_concept(&raw.row(i).iter().map(|&x| T::lit(x)).collect::<Vec<_>>(), d))
        .collect()
}

/// Compares the ACR against its two-term decomposition on random instances with
/// `n ≤ 32`, `m ≤ 8`, `d ≤ 16`, in both precisions.
pub fn decomposition_sweep(trials: usize, seed: u64) -> Result<Vec<DecompositionRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(trials);
    for trial in 0..trials {
        let n = rng.random_range(1..=32);
        let m = rng.random_range(1..=8);
        let d = rng.random_range(1..=16);
        let k_mem = Tensor::<f64>::randn(n, d, 1.5, &mut rng);
        let v = Tensor::<f64>::randn(n, d, 1.0, &mut rng);
        let raw = Tensor::<f64>::randn(m, 3 * d, 1.5, &mut rng);

        let c64 = concepts_of::<f64>(&raw, d)?;
        let (a, _) = build_acr(&c64, &k_mem, &v, d)?;
        let b = acr_decomposition(&c64, &k_mem, &v, d)?;

        let c32 = concepts_of::<f32>(&raw, d)?;
        let (k32, v32) = (k_mem.cast::<f32>(), v.cast::<f32>());
        let (a32, _) = build_acr(&c32, &k32, &v32, d)?;
        let b32 = acr_decomposition(&c32, &k32, &v32, d)?;

        rows.push(DecompositionRow {
            trial,
            n,
            acr_size: m,
            head_dim: d,
            rel_diff_f32: max_rel_diff(&a32.0, &b32.0),
            rel_diff_f64: max_rel_diff(&a.0, &b.0),
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub trial: usize,
    pub memory_size: usize,
    pub k_top: usize,
    /// Keys drawn from a few integers so exact score ties occur.
    pub tied: bool,
    pub matched: bool,
}

pub const RETRIEVAL_CSV_HEADER: [&str; 5] = ["trial", "memory_size", "k_top", "tied", "matched"];

/// Product-key retrieval against brute force over every composite key, for
/// `M ∈ {4, 16, 64, 256}` and `k_top ≤ √M`. Every third trial uses integer-valued
/// keys and queries to exercise the tie-break.
pub fn retrieval_sweep(trials: usize, seed: u64) -> Result<Vec<RetrievalRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(trials);
    for trial in 0..trials {
        let side = [2usize, 4, 8, 16][rng.random_range(0..4)];
        let k_top = rng.random_range(1..=side);
        let half = rng.random_range(1..=4);
        let tied = trial % 3 == 2;
        let draw = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            if tied {
                Tensor::<f64>::from_fn(rows, cols, |_, _| rng.random_range(-1i32..=1) as f64)
            } else {
                Tensor::<f64>::randn(rows, cols, 1.0, rng)
            }
        };
        let k1 = draw(side, half, &mut rng);
        let k2 = draw(side, half, &mut rng);
        let sigma = draw(1, 2 * half, &mut rng);
        let mem = MemoryWeights {
            cells: Tensor::zeros(&[side * side, 3]),
            keys: KeyTable::Product(k1.clone(), k2.clone()),
        };
        let got = retrieve_product(sigma.data(), &mem, k_top)?;
        let mut got_idx = got.indices.clone();
        let mut want = composite_topk_bruteforce(sigma.data(), &k1, &k2, k_top)?;
        got_idx.sort_unstable();
        want.sort_unstable();
        rows.push(RetrievalRow {
            trial,
            memory_size: side * side,
            k_top,
            tied,
            matched: got_idx == want,
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub seed: u64,
    pub n: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub max_abs_diff: f64,
}

pub const EQUIVALENCE_CSV_HEADER: [&str; 5] = ["seed", "n", "heads", "head_dim", "max_abs_diff"];

/// One random multi-head layer per seed, copied into an `m = 0`, `l = n` memory
/// layer; reports the largest output difference in 32-bit.
pub fn equivalence_sweep(seeds: std::ops::Range<u64>) -> Result<Vec<EquivalenceRow>> {
    seeds
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=24);
            let heads = rng.random_range(1..=3);
            let head_dim = rng.random_range(1..=8);
            let w = MhaWeights::<f32>::init(heads, head_dim, &mut rng);
            let x = Tensor::<f32>::randn(n, heads * head_dim, 1.0, &mut rng);
            Ok(EquivalenceRow {
                seed,
                n,
                heads,
                head_dim,
                max_abs_diff: equivalence_check(&w, &x)?,
            })
        })
        .collect()
}

//! Weight-copy transfer from standard attention into the memory-augmented layer.
//!
//! The query, key, value and output maps are copied head by head. The ACR key map
//! `W_k^M` has no counterpart in standard attention; it receives the same key copy
//! as a warm start. Copied matrices are frozen, the memory path stays trainable.

use std::collections::BTreeMap;

use crate::attention::{mha_forward, MhaWeights};
use crate::config::ManarConfig;
use crate::error::{Error, Result};
use crate::manar::{is_memory_param, manar_layer_forward, ManarLayer, ManarLayerWeights};
use crate::memory::{KeyMode, MemoryUnit};
use crate::params::Parameters;
use crate::tensor::{Scalar, Tensor};

/// Trainable flag per named parameter.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FreezeMask {
    flags: BTreeMap<String, bool>,
}

impl FreezeMask {
    /// Every parameter of `params` trainable.
    pub fn all_trainable<P>(params: &impl Parameters<P>, prefix: &str) -> Self {
        let mut flags = BTreeMap::new();
        params.visit(prefix, &mut |name, _| {
            flags.insert(name, true);
        });
        FreezeMask { flags }
    }

    pub fn set(&mut self, name: &str, trainable: bool) {
        self.flags.insert(name.to_string(), trainable);
    }

    /// Unknown names count as trainable.
    pub fn is_trainable(&self, name: &str) -> bool {
        self.flags.get(name).copied().unwrap_or(true)
    }

    pub fn frozen(&self) -> impl Iterator<Item = &str> {
        self.flags.iter().filter(|(_, &t)| !t).map(|(n, _)| n.as_str())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.flags.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Merges another mask into this one; later entries win.
    pub fn extend(&mut self, other: FreezeMask) {
        self.flags.extend(other.flags);
    }

    /// True when every name in `params` appears exactly once and nothing else does.
    pub fn covers<P>(&self, params: &impl Parameters<P>, prefix: &str) -> bool {
        let mut seen = BTreeMap::new();
        params.visit(prefix, &mut |name, _| *seen.entry(name).or_insert(0usize) += 1);
        seen.len() == self.flags.len()
            && seen
                .iter()
                .all(|(n, &c)| c == 1 && self.flags.contains_key(n))
    }
}

/// Copies `src` into `dst` and returns a mask freezing exactly the copied matrices.
/// Parameter names in the mask are prefixed with `prefix`.
pub fn copy_mha_weights<T: Scalar>(
    src: &MhaWeights<T>,
    dst: &mut ManarLayerWeights<T>,
    prefix: &str,
) -> Result<FreezeMask> {
    src.validate()?;
    let d = src.head_dim();
    if src.num_heads() != dst.heads.len() {
        return Err(Error::config(format!(
            "source has {} heads, destination {}",
            src.num_heads(),
            dst.heads.len()
        )));
    }
    if dst.w_o.shape() != src.w_o.shape() || dst.heads.iter().any(|h| h.w_q.shape() != [src.model_dim(), d]) {
        return Err(Error::config(format!(
            "destination widths do not match source (D = {}, d = {d})",
            src.model_dim()
        )));
    }
    for (s, t) in src.heads.iter().zip(dst.heads.iter_mut()) {
        t.w_q = s.w_q.clone();
        t.w_k = s.w_k.clone();
        t.w_v = s.w_v.clone();
        t.w_k_mem = s.w_k.clone();
    }
    dst.w_o = src.w_o.clone();

    let mut mask = FreezeMask::all_trainable(dst, prefix);
    let names: Vec<String> = mask.names().map(str::to_string).collect();
    for name in names {
        mask.set(&name, is_memory_param(&name));
    }
    Ok(mask)
}

/// All parameters trainable from `thaw_step` on; the mask unchanged before.
pub fn staged_unfreeze(mask: &FreezeMask, step: usize, thaw_step: usize) -> FreezeMask {
    if step < thaw_step {
        return mask.clone();
    }
    FreezeMask {
        flags: mask.flags.keys().map(|k| (k.clone(), true)).collect(),
    }
}

/// Builds a memory layer with `m = 0` and `l = n`, copies `src` into it and returns
/// the largest absolute output difference against standard attention on `x`.
pub fn equivalence_check<T: Scalar>(src: &MhaWeights<T>, x: &Tensor<T>) -> Result<f64> {
    src.validate()?;
    let n = x.rows();
    let (h, d) = (src.num_heads(), src.head_dim());
    let cfg = ManarConfig {
        model_dim: src.model_dim(),
        heads: h,
        head_dim: d,
        memory_size: 1,
        acr_size: 0,
        k_top: 1,
        half_window: n.max(1),
        key_mode: KeyMode::Flat,
    };
    let zeros = |r, c| Tensor::zeros(&[r, c]);
    let mut layer: ManarLayerWeights<T> = ManarLayer {
        heads: src
            .heads
            .iter()
            .map(|_| crate::manar::ManarHead {
                w_q: zeros(cfg.model_dim, d),
                w_k_mem: zeros(cfg.model_dim, d),
                w_k: zeros(cfg.model_dim, d),
                w_v: zeros(cfg.model_dim, d),
                search: crate::memory::SearchPatterns {
                    mixers: zeros(0, d),
                    w_k: zeros(cfg.model_dim, d),
                    w_v: zeros(cfg.model_dim, d),
                },
            })
            .collect(),
        w_k_r: zeros(d, d),
        w_o: zeros(cfg.model_dim, cfg.model_dim),
        memory: MemoryUnit {
            cells: zeros(1, 3 * d),
            keys: crate::memory::KeyTable::Flat(zeros(1, d)),
        },
    };
    copy_mha_weights(src, &mut layer, "")?;
    let (a, _) = manar_layer_forward(x, &layer, &cfg)?;
    let (b, _) = mha_forward(x, src)?;
    Ok(a.max_abs_diff(&b))
}

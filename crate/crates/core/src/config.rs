//! Layer hyperparameters and the `MANAR-M.m.C` naming convention.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{exact_sqrt, KeyMode};

/// Cells aggregated per retrieval unless configured otherwise.
pub const DEFAULT_K_TOP: usize = 8;

/// The `(M, m, C)` triple carried by a `MANAR-M.m.C` name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigName {
    pub memory_size: usize,
    pub acr_size: usize,
    /// Context window length `C = 2l`.
    pub context_window: usize,
}

const NAME_PATTERN: &str = "MANAR-<M>.<m>.<C> with non-negative integers (M may use a K suffix)";

fn parse_count(field: &str, input: &str) -> Result<usize> {
    let parse_err = || Error::Parse {
        input: input.to_string(),
        expected: NAME_PATTERN,
    };
    let (digits, mult) = match field.strip_suffix(['K', 'k']) {
        Some(d) => (d, 1024),
        None => (field, 1),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(parse_err());
    }
    digits
        .parse::<usize>()
        .ok()
        .and_then(|v| v.checked_mul(mult))
        .ok_or_else(parse_err)
}

/// Parses `"MANAR-484.64.128"` into `(484, 64, 128)`. A trailing model-size tag
/// such as `-S` or `-B` is accepted and ignored.
pub fn parse_config(name: &str) -> Result<ConfigName> {
    let parse_err = || Error::Parse {
        input: name.to_string(),
        expected: NAME_PATTERN,
    };
    let body = name.strip_prefix("MANAR-").ok_or_else(parse_err)?;
    let body = match body.split_once('-') {
        Some((b, tag)) if !tag.is_empty() && tag.chars().all(|c| c.is_ascii_alphabetic()) => b,
        Some(_) => return Err(parse_err()),
        None => body,
    };
    let fields: Vec<&str> = body.split('.').collect();
    if fields.len() != 3 {
        return Err(parse_err());
    }
    Ok(ConfigName {
        memory_size: parse_count(fields[0], name)?,
        acr_size: parse_count(fields[1], name)?,
        context_window: parse_count(fields[2], name)?,
    })
}

impl FromStr for ConfigName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_config(s)
    }
}

impl fmt::Display for ConfigName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MANAR-{}.{}.{}", self.memory_size, self.acr_size, self.context_window)
    }
}

/// All hyperparameters of one memory-augmented layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManarConfig {
    /// Model width `D`.
    pub model_dim: usize,
    pub heads: usize,
    /// Head width `d`; `D = h·d`.
    pub head_dim: usize,
    /// Memory cells `M`.
    pub memory_size: usize,
    /// Retrieved concepts and ACR rows `m`. Zero disables the global term.
    pub acr_size: usize,
    /// Cells aggregated per retrieval.
    pub k_top: usize,
    /// ROI half-window `l`.
    pub half_window: usize,
    pub key_mode: KeyMode,
}

impl ManarConfig {
    /// Builds a config from a parsed name; the context window must be even.
    pub fn from_name(
        name: ConfigName,
        heads: usize,
        head_dim: usize,
        k_top: usize,
        key_mode: KeyMode,
    ) -> Result<Self> {
        if name.context_window % 2 != 0 {
            return Err(Error::config(format!(
                "context window C = {} must be even (C = 2l)",
                name.context_window
            )));
        }
        let cfg = ManarConfig {
            model_dim: heads * head_dim,
            heads,
            head_dim,
            memory_size: name.memory_size,
            acr_size: name.acr_size,
            k_top,
            half_window: name.context_window / 2,
            key_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn name(&self) -> ConfigName {
        ConfigName {
            memory_size: self.memory_size,
            acr_size: self.acr_size,
            context_window: 2 * self.half_window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::config("heads and head width must be positive"));
        }
        if self.model_dim != self.heads * self.head_dim {
            return Err(Error::config(format!(
                "model width {} != heads {} × head width {}",
                self.model_dim, self.heads, self.head_dim
            )));
        }
        if self.half_window == 0 {
            return Err(Error::config("ROI half-window must be >= 1"));
        }
        if self.acr_size == 0 {
            // the memory is never queried
            return Ok(());
        }
        if self.k_top == 0 {
            return Err(Error::config("k_top must be >= 1"));
        }
        match self.key_mode {
            KeyMode::Flat => {
                if self.k_top > self.memory_size {
                    return Err(Error::config(format!(
                        "k_top = {} exceeds memory size {}",
                        self.k_top, self.memory_size
                    )));
                }
            }
            KeyMode::Product => {
                let side = exact_sqrt(self.memory_size).ok_or_else(|| {
                    Error::config(format!(
                        "product keys need a square memory size, got {}",
                        self.memory_size
                    ))
                })?;
                if self.head_dim % 2 != 0 {
                    return Err(Error::config("product keys need an even head width"));
                }
                if self.k_top > side {
                    return Err(Error::config(format!(
                        "k_top = {} exceeds sqrt(M) = {side}",
                        self.k_top
                    )));
                }
            }
        }
        Ok(())
    }

    /// Closed-form contextualization score entries for one layer on `n` tokens:
    /// per head `m·(n+1) + Σ_i (m + |ROI(i)|)`.
    pub fn score_entries(&self, n: usize) -> u64 {
        let m = self.acr_size as u64;
        let integration = if self.acr_size > 0 { m * (n as u64 + 1) } else { 0 };
        let roi_total: u64 = (0..n)
            .map(|i| crate::attention::roi_range(i, self.half_window, n).len() as u64)
            .sum();
        self.heads as u64 * (integration + m * n as u64 + roi_total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_published_names() {
        let c = parse_config("MANAR-484.64.128").unwrap();
        assert_eq!((c.memory_size, c.acr_size, c.context_window), (484, 64, 128));
        let c = parse_config("MANAR-256.32.96").unwrap();
        assert_eq!((c.memory_size, c.acr_size, c.context_window), (256, 32, 96));
        let c = parse_config("MANAR-256.32.96-S").unwrap();
        assert_eq!(c.memory_size, 256);
        assert_eq!(parse_config("MANAR-16K.128.128").unwrap().memory_size, 16384);
    }

    #[test]
    fn rejects_malformed_names() {
        for bad in ["MANAR-0.0", "MANAR-1.2.3.4", "manar-1.2.3", "MANAR-a.2.3", "MANAR-1..3", "MANAR-1.2.3-", ""] {
            let err = parse_config(bad).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "{bad}");
            assert!(err.to_string().contains("MANAR-<M>.<m>.<C>"));
        }
    }

    #[test]
    fn odd_context_window_is_rejected() {
        let name = parse_config("MANAR-16.4.7").unwrap();
        assert!(ManarConfig::from_name(name, 2, 4, 2, KeyMode::Flat).is_err());
    }

    #[test]
    fn validation_catches_key_constraints() {
        let name = parse_config("MANAR-16.4.8").unwrap();
        assert!(ManarConfig::from_name(name, 2, 4, 4, KeyMode::Product).is_ok());
        assert!(ManarConfig::from_name(name, 2, 4, 5, KeyMode::Product).is_err());
        assert!(ManarConfig::from_name(name, 2, 3, 2, KeyMode::Product).is_err());
        assert!(ManarConfig::from_name(name, 2, 4, 17, KeyMode::Flat).is_err());
        let sq = parse_config("MANAR-15.4.8").unwrap();
        assert!(ManarConfig::from_name(sq, 2, 4, 2, KeyMode::Product).is_err());
        // m = 0 never touches memory, so k_top is irrelevant
        let none = parse_config("MANAR-4.0.8").unwrap();
        assert!(ManarConfig::from_name(none, 2, 4, 8, KeyMode::Flat).is_ok());
    }

    proptest! {
        #[test]
        fn name_round_trips(m in 0usize..100_000, a in 0usize..1000, l in 1usize..5000) {
            let name = ConfigName { memory_size: m, acr_size: a, context_window: 2 * l };
            prop_assert_eq!(parse_config(&name.to_string()).unwrap(), name);
        }
    }
}

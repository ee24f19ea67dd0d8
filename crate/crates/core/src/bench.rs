//! Sequence-length scaling benchmark for standard attention and the memory layer.
//!
//! Time is the median wall clock of repeated single-layer forward passes. Memory
//! is counted, not measured: score entries and other transient buffer elements
//! recorded by the tape, which makes it exact and portable.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{mha_forward, MhaWeights};
use crate::config::ManarConfig;
use crate::error::{Error, Result};
use crate::manar::{manar_layer_forward, ManarLayerWeights};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchArm {
    Mha,
    Manar,
}

impl BenchArm {
    pub fn label(self) -> &'static str {
        match self {
            BenchArm::Mha => "mha",
            BenchArm::Manar => "manar",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowPolicy {
    /// The configured half-window at every length.
    Fixed,
    /// `l = n/2`.
    Half,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchPlan {
    /// Strictly ascending.
    pub lengths: Vec<usize>,
    pub arms: Vec<BenchArm>,
    /// Widths for both arms; memory settings for the memory arm.
    pub layer: ManarConfig,
    pub window: WindowPolicy,
    pub repetitions: usize,
    pub warmups: usize,
    pub seed: u64,
    /// Lengths whose analytic score count exceeds this are recorded as unmeasured.
    pub max_score_entries: u64,
}

impl BenchPlan {
    pub fn validate(&self) -> Result<()> {
        self.layer.validate()?;
        if self.lengths.is_empty() || self.lengths[0] == 0 {
            return Err(Error::arg("benchmark needs positive sequence lengths"));
        }
        if self.lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::arg("sequence lengths must be strictly ascending"));
        }
        if self.repetitions < 5 {
            return Err(Error::arg(format!(
                "at least 5 repetitions required, got {}",
                self.repetitions
            )));
        }
        Ok(())
    }

    /// Layer config actually used at length `n`.
    pub fn layer_at(&self, n: usize) -> ManarConfig {
        let mut c = self.layer;
        if self.window == WindowPolicy::Half {
            c.half_window = (n / 2).max(1);
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub arm: String,
    pub n: usize,
    pub half_window: usize,
    pub median_seconds: f64,
    pub mad_seconds: f64,
    pub analytic_entries: u64,
    pub instrumented_entries: u64,
    pub peak_transient_elements: u64,
    pub measured: bool,
}

pub const BENCH_CSV_HEADER: [&str; 9] = [
    "arm",
    "n",
    "half_window",
    "median_seconds",
    "mad_seconds",
    "analytic_entries",
    "instrumented_entries",
    "peak_transient_elements",
    "measured",
];

/// `h·n²` score entries of standard attention.
pub fn mha_score_entries(heads: usize, n: usize) -> u64 {
    heads as u64 * (n as u64) * (n as u64)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Median absolute deviation from the median.
pub fn mad(xs: &[f64]) -> f64 {
    let m = median(xs);
    median(&xs.iter().map(|x| (x - m).abs()).collect::<Vec<_>>())
}

fn time_runs(reps: usize, warmups: usize, mut run: impl FnMut() -> Result<u64>) -> Result<(Vec<f64>, u64)> {
    let mut entries = None;
    for _ in 0..warmups {
        run()?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        let e = run()?;
        times.push(t.elapsed().as_secs_f64());
        match entries {
            None => entries = Some(e),
            Some(prev) if prev != e => {
                return Err(Error::arg("instrumented counts differ between repetitions"));
            }
            _ => {}
        }
    }
    Ok((times, entries.unwrap_or(0)))
}

/// Runs every arm at every length, sequentially. `on_record` sees each record
/// as soon as it is measured.
pub fn run_bench(plan: &BenchPlan, mut on_record: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let (h, d, dm) = (plan.layer.heads, plan.layer.head_dim, plan.layer.model_dim);
    let mha_w = MhaWeights::<f32>::init(h, d, &mut rng);
    let manar_w = ManarLayerWeights::<f32>::init(&plan.layer, &mut rng)?;
    let mut out = Vec::new();
    for &n in &plan.lengths {
        let x = Tensor::<f32>::randn(n, dm, 1.0, &mut rng);
        for &arm in &plan.arms {
            let cfg = plan.layer_at(n);
            let analytic = match arm {
                BenchArm::Mha => mha_score_entries(h, n),
                BenchArm::Manar => cfg.score_entries(n),
            };
            let mut rec = BenchRecord {
                arm: arm.label().to_string(),
                n,
                half_window: if arm == BenchArm::Mha { n } else { cfg.half_window },
                median_seconds: f64::NAN,
                mad_seconds: f64::NAN,
                analytic_entries: analytic,
                instrumented_entries: 0,
                peak_transient_elements: 0,
                measured: false,
            };
            if analytic <= plan.max_score_entries {
                let mut transient = 0;
                let (times, entries) = time_runs(plan.repetitions, plan.warmups, || match arm {
                    BenchArm::Mha => {
                        let (_, tr) = mha_forward(&x, &mha_w)?;
                        let e: u64 = tr.heads.iter().map(|h| h.weights.num_entries() as u64).sum();
                        transient = e;
                        Ok(e)
                    }
                    BenchArm::Manar => {
                        let (_, tr) = manar_layer_forward(&x, &manar_w, &cfg)?;
                        transient = tr.counters.transient_elements;
                        Ok(tr.counters.contextualization_entries())
                    }
                })?;
                rec.median_seconds = median(&times);
                rec.mad_seconds = mad(&times);
                rec.instrumented_entries = entries;
                rec.peak_transient_elements = transient;
                rec.measured = true;
            } else {
                log::warn!("{} at n = {n}: {analytic} score entries exceed the budget, skipped", arm.label());
            }
            on_record(&rec);
            out.push(rec);
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln t` against `ln n`. Needs at least four points whose
/// lengths span a factor of eight or more.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 4 {
        return Err(Error::arg(format!(
            "slope fit needs at least 4 lengths, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(n, t)| !(n > 0.0) || !(t > 0.0)) {
        return Err(Error::arg("slope fit needs positive lengths and times"));
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(0.0, f64::max);
    if hi < 8.0 * lo {
        return Err(Error::arg(format!("lengths span {lo}..{hi}, need a factor of 8")));
    }
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Slope of the measured records of one arm.
pub fn arm_slope(records: &[BenchRecord], arm: BenchArm) -> Result<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.arm == arm.label() && r.measured)
        .map(|r| (r.n as f64, r.median_seconds))
        .collect();
    fit_loglog_slope(&pts)
}

pub fn write_csv(records: &[BenchRecord], path: &Path) -> Result<()> {
    crate::csvio::write_records(records, &BENCH_CSV_HEADER, path)
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchRecord>> {
    crate::csvio::read_records(path)
}

//! Convex hull membership: is `y` a convex combination of the rows of `V`?
//!
//! Decided by a phase-1 simplex on `{λ ≥ 0, Σλ = 1, Vᵀλ = y}` with one artificial
//! variable per equality and Bland's rule. An "inside" verdict is only returned
//! together with a certificate `λ` that re-verifies by substitution.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ManarConfig;
use crate::error::{Error, Result};
use crate::manar::{manar_layer_forward, ManarHead, ManarLayer, ManarLayerWeights};
use crate::memory::{KeyMode, KeyTable, MemoryUnit, SearchPatterns};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ChmQuery<'a> {
    pub y: &'a [f64],
    /// Candidate points, one per row.
    pub values: &'a Tensor<f64>,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChmResult {
    pub inside: bool,
    /// Convex weights over the rows of `values`, present iff `inside`.
    pub certificate: Option<Vec<f64>>,
}

/// Largest violation of the certificate conditions for `lambda`:
/// `max(-min λ, |Σλ − 1|, ‖Vᵀλ − y‖∞)`.
pub fn certificate_residual(y: &[f64], values: &Tensor<f64>, lambda: &[f64]) -> f64 {
    let neg = lambda.iter().fold(0.0f64, |m, &l| m.max(-l));
    let sum = (lambda.iter().sum::<f64>() - 1.0).abs();
    let mut worst = neg.max(sum);
    for (t, &yt) in y.iter().enumerate() {
        let comb: f64 = lambda.iter().enumerate().map(|(j, &l)| l * values.get(j, t)).sum();
        worst = worst.max((comb - yt).abs());
    }
    worst
}

/// A coordinate where `y` leaves the axis-aligned bounding box of the rows of
/// `values` by more than `eps`. Such a coordinate is a separating hyperplane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxSeparation {
    pub coord: usize,
    /// `y[coord]` exceeds the maximum (true) or undercuts the minimum (false).
    pub above: bool,
    pub bound: f64,
    pub value: f64,
}

pub fn bounding_box_separation(y: &[f64], values: &Tensor<f64>, eps: f64) -> Option<BoxSeparation> {
    (0..y.len()).find_map(|t| {
        let col = (0..values.rows()).map(|j| values.get(j, t));
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if y[t] > hi + eps {
            Some(BoxSeparation { coord: t, above: true, bound: hi, value: y[t] })
        } else if y[t] < lo - eps {
            Some(BoxSeparation { coord: t, above: false, bound: lo, value: y[t] })
        } else {
            None
        }
    })
}

pub fn chm_test(q: &ChmQuery<'_>) -> Result<ChmResult> {
    let (n, d) = (q.values.rows(), q.values.cols());
    if n == 0 {
        return Err(Error::arg("convex hull test needs at least one point"));
    }
    if q.y.len() != d {
        return Err(Error::dim("convex hull query", &[q.y.len()], q.values.shape()));
    }
    if !(q.eps > 0.0) || !q.eps.is_finite() {
        return Err(Error::arg(format!("tolerance must be positive, got {}", q.eps)));
    }
    if !q.values.is_finite() || q.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("convex hull inputs must be finite"));
    }
    let lambda = match phase_one(q.y, q.values)? {
        Some(l) => l,
        None => return Ok(ChmResult { inside: false, certificate: None }),
    };
    if certificate_residual(q.y, q.values, &lambda) <= q.eps {
        Ok(ChmResult { inside: true, certificate: Some(lambda) })
    } else {
        log::debug!("phase-1 optimum within tolerance but certificate failed to verify");
        Ok(ChmResult { inside: false, certificate: None })
    }
}

/// Returns clamped basic λ values when the phase-1 optimum is within the absolute
/// tolerance that makes the equalities feasible, `None` otherwise.
fn phase_one(y: &[f64], values: &Tensor<f64>) -> Result<Option<Vec<f64>>> {
    let (n, d) = (values.rows(), values.cols());
    let rows = d + 1;
    let cols = n + rows + 1; // λ, artificials, rhs
    let rhs = cols - 1;
    let mut tab = vec![0.0f64; (rows + 1) * cols];
    let scale = values.data().iter().chain(y).fold(1.0f64, |m, v| m.max(v.abs()));

    for r in 0..rows {
        let row = &mut tab[r * cols..(r + 1) * cols];
        let b = if r == 0 { 1.0 } else { y[r - 1] };
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            row[j] = sign * if r == 0 { 1.0 } else { values.get(j, r - 1) };
        }
        row[n + r] = 1.0;
        row[rhs] = sign * b;
    }
    // objective row: reduced costs of minimising Σ artificials
    for j in 0..cols {
        if (n..n + rows).contains(&j) {
            continue;
        }
        let s: f64 = (0..rows).map(|r| tab[r * cols + j]).sum();
        tab[rows * cols + j] = -s;
    }
    let mut basis: Vec<usize> = (n..n + rows).collect();
    let tol = 1e-11 * scale;
    let limit = 1000 * (n + rows).pow(2).max(1);

    for _ in 0..limit {
        // Bland: smallest index with negative reduced cost
        let entering = (0..n + rows).find(|&j| tab[rows * cols + j] < -tol);
        let Some(e) = entering else {
            let objective = -tab[rows * cols + rhs];
            if objective > 1e-9 * scale {
                return Ok(None);
            }
            let mut lambda = vec![0.0; n];
            for (r, &b) in basis.iter().enumerate() {
                if b < n {
                    lambda[b] = tab[r * cols + rhs].max(0.0);
                }
            }
            return Ok(Some(lambda));
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..rows {
            let a = tab[r * cols + e];
            if a > tol {
                let ratio = tab[r * cols + rhs] / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - 1e-15 * scale || (ratio <= lratio + 1e-15 * scale && basis[r] < basis[lr]) {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
        }
        let Some((p, _)) = leave else {
            // unbounded direction cannot occur for a bounded-below objective
            return Err(Error::arg("simplex: unbounded phase-1 problem"));
        };
        pivot(&mut tab, cols, p, e);
        basis[p] = e;
    }
    Err(Error::arg("simplex: iteration limit reached"))
}

fn pivot(tab: &mut [f64], cols: usize, p: usize, e: usize) {
    let pv = tab[p * cols + e];
    for v in &mut tab[p * cols..(p + 1) * cols] {
        *v /= pv;
    }
    let prow: Vec<f64> = tab[p * cols..(p + 1) * cols].to_vec();
    let total_rows = tab.len() / cols;
    for r in 0..total_rows {
        if r == p {
            continue;
        }
        let f = tab[r * cols + e];
        if f != 0.0 {
            for (v, pvv) in tab[r * cols..(r + 1) * cols].iter_mut().zip(&prow) {
                *v -= f * pvv;
            }
            tab[r * cols + e] = 0.0;
        }
    }
}

/// One head of one sequence: its value rows and the head outputs to test.
#[derive(Clone, Debug)]
pub struct HeadSample {
    pub values: Tensor<f64>,
    pub outputs: Tensor<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChmLayerRow {
    pub layer_index: usize,
    pub samples: usize,
    pub outside_count: usize,
    pub outside_fraction: f64,
}

pub const CHM_CSV_HEADER: [&str; 4] = ["layer_index", "samples", "outside_count", "outside_fraction"];

/// For every layer, samples `samples` output rows uniformly without replacement
/// across all heads and sequences and counts those outside their head's value hull.
/// Requests above the available rows are clamped with a warning.
pub fn chm_report(layers: &[Vec<HeadSample>], samples: usize, eps: f64, seed: u64) -> Result<Vec<ChmLayerRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(layers.len());
    for (li, heads) in layers.iter().enumerate() {
        let mut pool = Vec::new();
        for (hi, h) in heads.iter().enumerate() {
            if h.values.cols() != h.outputs.cols() {
                return Err(Error::dim("head sample", h.values.shape(), h.outputs.shape()));
            }
            pool.extend((0..h.outputs.rows()).map(|t| (hi, t)));
        }
        let take = if samples > pool.len() {
            log::warn!("layer {li}: {samples} samples requested, only {} outputs available", pool.len());
            pool.len()
        } else {
            samples
        };
        let mut picked: Vec<usize> = sample(&mut rng, pool.len(), take).into_vec();
        picked.sort_unstable();
        let mut outside = 0;
        for idx in picked {
            let (hi, t) = pool[idx];
            let h = &heads[hi];
            let r = chm_test(&ChmQuery { y: h.outputs.row(t), values: &h.values, eps })?;
            if !r.inside {
                outside += 1;
            }
        }
        rows.push(ChmLayerRow {
            layer_index: li,
            samples: take,
            outside_count: outside,
            outside_fraction: if take == 0 { 0.0 } else { outside as f64 / take as f64 },
        });
    }
    Ok(rows)
}

pub fn write_chm_csv(rows: &[ChmLayerRow], path: &Path) -> Result<()> {
    crate::csvio::write_records(rows, &CHM_CSV_HEADER, path)
}

pub fn read_chm_csv(path: &Path) -> Result<Vec<ChmLayerRow>> {
    crate::csvio::read_records(path)
}

/// Offset of the memory values in [`constructed_witness`].
pub const WITNESS_OFFSET: f64 = 1e3;

/// Hand-built layer whose output for token 0 is pulled far outside the hull of
/// the token values.
///
/// All memory cells hold the same concept with value `10³·1` and a self logit
/// that dominates integration, so every ACR row is close to `10³·1`. `W_k^r = I`
/// and `W_q` maps token 0 to `q_0 = 1`, which makes the ACR logits of token 0
/// dominate its local ones. Token values are `v = x`.
pub fn constructed_witness(n: usize, seed: u64) -> Result<(Tensor<f64>, ManarLayerWeights<f64>, ManarConfig)> {
    let d = 4;
    let cfg = ManarConfig {
        model_dim: d,
        heads: 1,
        head_dim: d,
        memory_size: 4,
        acr_size: 2,
        k_top: 1,
        half_window: 1,
        key_mode: KeyMode::Flat,
    };
    if n == 0 {
        return Err(Error::arg("witness needs at least one token"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::<f64>::randn(n, d, 1.0, &mut rng);
    let norm2: f64 = x.row(0).iter().map(|v| v * v).sum();
    let w_q = Tensor::from_fn(d, d, |i, _| x.get(0, i) / norm2);
    let cells = Tensor::from_fn(4, 3 * d, |_, c| match c {
        0 => 10.0,     // c^q
        c if c == d => 10.0, // c^k
        c if c >= 2 * d => WITNESS_OFFSET,
        _ => 0.0,
    });
    let w = ManarLayer {
        heads: vec![ManarHead {
            w_q,
            w_k_mem: Tensor::zeros(&[d, d]),
            w_k: Tensor::eye(d).scale(0.1),
            w_v: Tensor::eye(d),
            search: SearchPatterns {
                mixers: Tensor::randn(2, d, 1.0, &mut rng),
                w_k: Tensor::glorot(d, d, &mut rng),
                w_v: Tensor::glorot(d, d, &mut rng),
            },
        }],
        w_k_r: Tensor::eye(d),
        w_o: Tensor::eye(d),
        memory: MemoryUnit {
            cells,
            keys: KeyTable::Flat(Tensor::randn(4, d, 0.5, &mut rng)),
        },
    };
    Ok((x, w, cfg))
}

/// Outcome of checking the constructed witness.
#[derive(Clone, Debug)]
pub struct WitnessVerdict {
    pub output: Vec<f64>,
    pub values: Tensor<f64>,
    pub simplex: ChmResult,
    pub separation: Option<BoxSeparation>,
}

/// Runs the witness layer and tests token 0 of head 0 against the token values.
pub fn verify_witness(n: usize, seed: u64, eps: f64) -> Result<WitnessVerdict> {
    let (x, w, cfg) = constructed_witness(n, seed)?;
    let (_, trace) = manar_layer_forward(&x, &w, &cfg)?;
    let head = &trace.heads[0];
    let y = head.output.row(0).to_vec();
    let simplex = chm_test(&ChmQuery { y: &y, values: &head.v, eps })?;
    let separation = bounding_box_separation(&y, &head.v, eps);
    Ok(WitnessVerdict { output: y, values: head.v.clone(), simplex, separation })
}

/// Head samples from a pure attention (or `m = 0`) forward pass, for the control.
pub fn head_samples(values: &[Tensor<f64>], outputs: &[Tensor<f64>]) -> Vec<HeadSample> {
    values
        .iter()
        .zip(outputs)
        .map(|(v, o)| HeadSample { values: v.clone(), outputs: o.clone() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{mha_forward, Mha};
    use rand::Rng;

    fn square() -> Tensor<f64> {
        Tensor::from_rows(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]).unwrap()
    }

    fn test(y: &[f64], v: &Tensor<f64>) -> ChmResult {
        chm_test(&ChmQuery { y, values: v, eps: DEFAULT_EPS }).unwrap()
    }

    #[test]
    fn vertices_are_inside_with_a_certificate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Tensor::<f64>::randn(6, 3, 1.0, &mut rng);
        let r = test(v.row(3), &v);
        assert!(r.inside);
        assert!(certificate_residual(v.row(3), &v, r.certificate.as_ref().unwrap()) <= DEFAULT_EPS);
    }

    #[test]
    fn unit_square_examples() {
        assert!(test(&[0.5, 0.5], &square()).inside);
        let r = test(&[2.0, 2.0], &square());
        assert!(!r.inside && r.certificate.is_none());
        let sep = bounding_box_separation(&[2.0, 2.0], &square(), DEFAULT_EPS).unwrap();
        assert_eq!((sep.coord, sep.above, sep.bound), (0, true, 1.0));
        assert!(!test(&[0.5, -1e-3], &square()).inside);
        assert!(test(&[1.0, 0.3], &square()).inside);
    }

    #[test]
    fn degenerate_inputs() {
        let one = Tensor::from_rows(&[&[1.0, 2.0]]).unwrap();
        assert!(test(&[1.0, 2.0], &one).inside);
        assert!(!test(&[1.0, 2.1], &one).inside);
        // duplicated and collinear points
        let line = Tensor::from_rows(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]]).unwrap();
        assert!(test(&[1.5, 1.5], &line).inside);
        assert!(!test(&[1.5, 1.4], &line).inside);
        let bad = |y: &[f64], eps| chm_test(&ChmQuery { y, values: &one, eps });
        assert!(bad(&[f64::NAN, 0.0], 1e-6).is_err());
        assert!(bad(&[0.0, 0.0], 0.0).is_err());
        assert!(bad(&[0.0], 1e-6).is_err());
    }

    #[test]
    fn negative_coordinates_are_handled() {
        let v = Tensor::from_rows(&[&[-3.0, -1.0], &[-1.0, -5.0], &[-2.0, -2.0]]).unwrap();
        assert!(test(&[-2.0, -2.5], &v).inside);
        assert!(!test(&[-1.0, -1.0], &v).inside);
    }

    // exact 2-D hull by monotone chain; returns the counter-clockwise polygon
    fn hull2(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let mut p = points.to_vec();
        p.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
        let mut lower: Vec<[f64; 2]> = Vec::new();
        for &q in &p {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
                lower.pop();
            }
            lower.push(q);
        }
        let mut upper: Vec<[f64; 2]> = Vec::new();
        for &q in p.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
                upper.pop();
            }
            upper.push(q);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        lower
    }

    // signed distance to the polygon boundary: positive inside
    fn signed_distance(poly: &[[f64; 2]], y: [f64; 2]) -> f64 {
        let mut inside = true;
        let mut dist = f64::INFINITY;
        for i in 0..poly.len() {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let (px, py) = (y[0] - a[0], y[1] - a[1]);
            if ex * py - ey * px < 0.0 {
                inside = false;
            }
            let t = ((px * ex + py * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
            let (dx, dy) = (px - t * ex, py - t * ey);
            dist = dist.min((dx * dx + dy * dy).sqrt());
        }
        if inside {
            dist
        } else {
            -dist
        }
    }

    #[test]
    fn agrees_with_exact_planar_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut compared = 0;
        for _ in 0..50 {
            let n = rng.random_range(3..12);
            let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
            let v = Tensor::from_fn(n, 2, |i, j| pts[i][j]);
            let poly = hull2(&pts);
            for _ in 0..40 {
                let y = [rng.random_range(-1.3..1.3), rng.random_range(-1.3..1.3)];
                let sd = signed_distance(&poly, y);
                if sd.abs() <= 10.0 * DEFAULT_EPS {
                    continue;
                }
                assert_eq!(test(&y, &v).inside, sd > 0.0, "{pts:?} {y:?}");
                compared += 1;
            }
        }
        assert!(compared > 1500);
    }

    #[test]
    fn appending_points_keeps_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let v = Tensor::<f64>::randn(5, 3, 1.0, &mut rng);
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
            if test(&y, &v).inside {
                let extra = Tensor::randn(3, 3, 1.0, &mut rng);
                let more = Tensor::concat_rows(&[&v, &extra]).unwrap();
                assert!(test(&y, &more).inside);
            }
        }
    }

    #[test]
    fn attention_outputs_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Mha::<Tensor<f64>>::init(2, 4, &mut rng);
        let x = Tensor::randn(12, 8, 1.0, &mut rng);
        let (_, tr) = mha_forward(&x, &w).unwrap();
        let heads: Vec<HeadSample> = tr
            .heads
            .iter()
            .map(|h| HeadSample { values: h.v.clone(), outputs: h.output.clone() })
            .collect();
        let rows = chm_report(&[heads], 24, DEFAULT_EPS, 1).unwrap();
        assert_eq!(rows[0].samples, 24);
        assert_eq!(rows[0].outside_count, 0);
    }

    #[test]
    fn report_clamps_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let heads = vec![HeadSample { values: Tensor::randn(4, 2, 1.0, &mut rng), outputs: Tensor::randn(5, 2, 1.0, &mut rng) }];
        let a = chm_report(&[heads.clone()], 100, DEFAULT_EPS, 3).unwrap();
        assert_eq!(a[0].samples, 5);
        let b = chm_report(&[heads.clone()], 3, DEFAULT_EPS, 3).unwrap();
        assert_eq!(b, chm_report(&[heads], 3, DEFAULT_EPS, 3).unwrap());
    }

    #[test]
    fn witness_leaves_the_hull() {
        let v = verify_witness(8, 0, DEFAULT_EPS).unwrap();
        assert!(!v.simplex.inside);
        let sep = v.separation.expect("bounding box separates the witness");
        assert!(sep.above && sep.value > 100.0 * sep.bound.abs().max(1.0));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chm.csv");
        let rows = vec![ChmLayerRow { layer_index: 0, samples: 10, outside_count: 3, outside_fraction: 0.3 }];
        write_chm_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("layer_index,samples,outside_count,outside_fraction\n"));
        assert_eq!(read_chm_csv(&path).unwrap(), rows);
    }
}

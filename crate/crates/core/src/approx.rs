//! Tree approximators of piecewise anisotropic truths, rate formulas, and
//! error measurement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::factorial::ln_binomial;

use crate::akd::akd;
use crate::error::{Error, Result};
use crate::funcs::PiecewiseAnisoSpec;
use crate::geometry::{NodeId, TreePartition};
use crate::splitnet::{check_dense, SplitNet};

/// `round(log2(C (λ² d² n / (R ln n))^{d/(2ᾱ+d)}))`, floored at zero.
pub fn choose_l0(n: f64, d: usize, lambda: f64, r: usize, abar: f64, c: f64) -> usize {
    let d = d as f64;
    let base = lambda * lambda * d * d * n / (r as f64 * n.ln());
    let v = (c * base.powf(d / (2.0 * abar + d))).log2().round();
    if v.is_finite() && v > 0.0 {
        v as usize
    } else {
        0
    }
}

/// `ε̄_n = (λd)^{d/(2ᾱ+d)} (R ln n / n)^{ᾱ/(2ᾱ+d)}`.
pub fn rate_eps_bar(n: f64, d: usize, lambda: f64, r: usize, abar: f64) -> f64 {
    let df = d as f64;
    let e = 2.0 * abar + df;
    (lambda * df).powf(df / e) * (r as f64 * n.ln() / n).powf(abar / e)
}

/// `ε_n = sqrt(d ln p / n) + ε̄_n`.
pub fn rate_eps(n: f64, p: usize, d: usize, lambda: f64, r: usize, abar: f64) -> f64 {
    (d as f64 * (p as f64).ln() / n).sqrt() + rate_eps_bar(n, d, lambda, r, abar)
}

/// `γ_n = sqrt(ln C(p, d) / n) + (λ^{d/ᾱ}/n)^{ᾱ/(2ᾱ+d)}`.
pub fn rate_gamma(n: f64, p: usize, d: usize, lambda: f64, abar: f64) -> Result<f64> {
    if d > p {
        return Err(Error::InvalidArgument(format!("d = {d} exceeds p = {p}")));
    }
    let df = d as f64;
    let first = (ln_binomial(p as u64, d as u64).max(0.0) / n).sqrt();
    let second = (lambda.powf(df / abar) / n).powf(abar / (2.0 * abar + df));
    Ok(first + second)
}

/// Least-squares slope of `ln err` against `ln x`.
pub fn rate_slope(xs: &[f64], errs: &[f64]) -> Result<f64> {
    if xs.len() != errs.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), got: errs.len() });
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument("need at least three pairs".into()));
    }
    if xs.iter().chain(errs).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("sizes and errors must be positive".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|v| v.ln()).collect();
    Ok(ols_slope(&lx, &ly))
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Serialize)]
pub struct PieceReport {
    pub counters: Vec<usize>,
    pub depth: usize,
}

/// Step-function approximator `f̂_0` on the assembled tree `T̂`.
#[derive(Debug, Clone)]
pub struct Approximator {
    pub tree: TreePartition,
    /// `𝒯*`, the snapped version of `𝔛*`.
    pub snapped: TreePartition,
    pub snap_divergence: f64,
    pub l0: usize,
    pub pieces: Vec<PieceReport>,
    /// Leaves of `tree` in `leaves()` order.
    pub leaves: Vec<NodeId>,
    /// Piece index `r` of each leaf.
    pub leaf_piece: Vec<usize>,
    pub anchors: Vec<Vec<f64>>,
    /// `true` when no net point was found in `Ω ∩ Ξ*` and the centre was used.
    pub anchor_fallback: Vec<bool>,
    pub heights: Vec<f64>,
    slot: Vec<usize>,
}

impl Approximator {
    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.heights[self.slot[self.tree.locate(x)]]
    }

    /// Achieved `L°` is `l0` for every piece.
    pub fn full_depth(&self) -> bool {
        self.pieces.iter().all(|p| p.depth == self.l0)
    }

    /// Number of `points` that `𝒯*` assigns to a different piece than `𝔛*`.
    pub fn mismatched_points(&self, spec: &PiecewiseAnisoSpec, points: &[Vec<f64>]) -> Result<usize> {
        let ext = spec.extended_partition()?;
        let ext_leaves = ext.leaves();
        let snap_leaves = self.snapped.leaves();
        Ok(points
            .iter()
            .filter(|x| {
                let a = ext_leaves.iter().position(|&l| l == ext.locate(x));
                let b = snap_leaves.iter().position(|&l| l == self.snapped.locate(x));
                a != b
            })
            .count())
    }
}

/// Builds the approximator with `L0` from [`choose_l0`].
pub fn build_approximator(spec: &PiecewiseAnisoSpec, net: &SplitNet, n: f64, c_l0: f64) -> Result<Approximator> {
    let l0 = choose_l0(n, spec.d(), spec.lambda, spec.num_pieces(), spec.abar(), c_l0);
    build_approximator_at_depth(spec, net, l0)
}

/// Snaps `𝔛*` onto the net, runs the anisotropic k-d tree to depth `l0`
/// inside each snapped box, and sets heights to `f_0` at anchor points.
pub fn build_approximator_at_depth(spec: &PiecewiseAnisoSpec, net: &SplitNet, l0: usize) -> Result<Approximator> {
    if net.dim() != spec.p {
        return Err(Error::DimensionMismatch { expected: spec.p, got: net.dim() });
    }
    let ext = spec.extended_partition()?;
    let s = ext.to_partition().chopped_coords();
    let dense = check_dense(net, &ext, &s, f64::INFINITY)?;
    let snapped = dense
        .snapped
        .ok_or_else(|| Error::InvalidArgument("partition cannot be snapped onto the split-net".into()))?;
    let snapped_leaves = snapped.leaves();
    let runs = snapped_leaves
        .par_iter()
        .enumerate()
        .map(|(r, &leaf)| akd(&snapped.node(leaf).rect, net, &spec.alphas[r], l0, &spec.s0))
        .collect::<Result<Vec<_>>>()?;

    let mut tree = snapped.clone();
    for (&leaf, run) in snapped_leaves.iter().zip(&runs) {
        tree.graft(leaf, &run.partition)?;
    }
    let leaves = tree.leaves();
    let mut slot = vec![usize::MAX; tree.capacity()];
    for (i, &l) in leaves.iter().enumerate() {
        slot[l] = i;
    }
    let ext_rects = ext.leaf_rects();
    let results: Vec<(usize, Vec<f64>, bool)> = leaves
        .par_iter()
        .map(|&l| {
            let omega = &tree.node(l).rect;
            let centre = omega.center();
            let top = snapped.locate(&centre);
            let r = snapped_leaves.iter().position(|&x| x == top).expect("snapped leaf");
            let anchor = omega.intersect(&ext_rects[r]).and_then(|both| net.nearest_point_in(&both, &centre));
            match anchor {
                Some(a) => (r, a, false),
                None => (r, centre, true),
            }
        })
        .collect();
    let mut leaf_piece = Vec::with_capacity(leaves.len());
    let mut anchors = Vec::with_capacity(leaves.len());
    let mut anchor_fallback = Vec::with_capacity(leaves.len());
    let mut heights = Vec::with_capacity(leaves.len());
    for (r, a, fb) in results {
        // The anchor sits in Ξ_r*, so evaluate the r-th piece directly.
        heights.push(spec.pieces[r].eval(&spec.project(&a)));
        leaf_piece.push(r);
        anchors.push(a);
        anchor_fallback.push(fb);
    }
    Ok(Approximator {
        tree,
        snapped,
        snap_divergence: dense.achieved,
        l0,
        pieces: runs.iter().map(|r| PieceReport { counters: r.counters.clone(), depth: r.depth }).collect(),
        leaves,
        leaf_piece,
        anchors,
        anchor_fallback,
        heights,
        slot,
    })
}

#[derive(Debug, Clone)]
pub enum Metric<'a> {
    Sup,
    Lv(f64),
    Empirical { v: f64, points: &'a [Vec<f64>] },
}

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    /// Midpoint cells per axis for `p <= max_grid_dim`.
    pub resolution: usize,
    pub max_grid_dim: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self { resolution: 256, max_grid_dim: 2, mc_samples: 200_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ErrorEstimate {
    pub value: f64,
    /// Monte-Carlo standard error of `value` (delta method), when sampled.
    pub std_err: Option<f64>,
}

type Func<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// `‖f_0 − f̂‖` in the requested metric over `[0,1]^p`.
pub fn measure_error(f0: Func, fhat: Func, p: usize, metric: &Metric, quad: &Quadrature) -> ErrorEstimate {
    let diff = |x: &[f64]| (f0(x) - fhat(x)).abs();
    match metric {
        Metric::Empirical { v, points } => {
            let m = points.iter().map(|x| diff(x).powf(*v)).sum::<f64>() / points.len().max(1) as f64;
            ErrorEstimate { value: m.powf(1.0 / v), std_err: None }
        }
        Metric::Sup | Metric::Lv(_) => {
            let v = match metric {
                Metric::Lv(v) => Some(*v),
                _ => None,
            };
            let (agg, mean_sq, count) = if p <= quad.max_grid_dim {
                grid_aggregate(&diff, p, quad.resolution, v)
            } else {
                mc_aggregate(&diff, p, quad.mc_samples, quad.seed, v)
            };
            match v {
                None => ErrorEstimate { value: agg, std_err: None },
                Some(v) => {
                    let mean = agg;
                    let value = mean.powf(1.0 / v);
                    let std_err = (p > quad.max_grid_dim).then(|| {
                        let var = (mean_sq - mean * mean).max(0.0) / count as f64;
                        let se_mean = var.sqrt();
                        if mean > 0.0 {
                            se_mean * value / (v * mean)
                        } else {
                            0.0
                        }
                    });
                    ErrorEstimate { value, std_err }
                }
            }
        }
    }
}

// Returns (max or mean of |e|^v, mean of |e|^{2v}, count).
fn grid_aggregate(diff: &(dyn Fn(&[f64]) -> f64 + Sync), p: usize, res: usize, v: Option<f64>) -> (f64, f64, usize) {
    // The sup is taken over the closed lattice {i/res}, which contains the
    // faces of the cube; integrals use cell midpoints.
    let nodes = if v.is_none() { res + 1 } else { res };
    let coord = |i: usize| {
        if v.is_none() {
            i as f64 / res as f64
        } else {
            (i as f64 + 0.5) / res as f64
        }
    };
    let rows = if p == 1 { 1 } else { nodes.pow(p as u32 - 1) };
    let per_row: Vec<(f64, f64, f64)> = (0..rows)
        .into_par_iter()
        .map(|row| {
            let mut x = vec![0.0; p];
            let mut rest = row;
            for xj in x.iter_mut().skip(1) {
                *xj = coord(rest % nodes);
                rest /= nodes;
            }
            let (mut mx, mut s1, mut s2) = (0.0f64, 0.0, 0.0);
            for i in 0..nodes {
                x[0] = coord(i);
                let e = diff(&x);
                match v {
                    None => mx = mx.max(e),
                    Some(v) => {
                        let t = e.powf(v);
                        s1 += t;
                        s2 += t * t;
                    }
                }
            }
            (mx, s1, s2)
        })
        .collect();
    let count = rows * nodes;
    match v {
        None => (per_row.iter().map(|r| r.0).fold(0.0, f64::max), 0.0, count),
        Some(_) => {
            let s1: f64 = per_row.iter().map(|r| r.1).sum();
            let s2: f64 = per_row.iter().map(|r| r.2).sum();
            (s1 / count as f64, s2 / count as f64, count)
        }
    }
}

fn mc_aggregate(diff: &(dyn Fn(&[f64]) -> f64 + Sync), p: usize, samples: usize, seed: u64, v: Option<f64>) -> (f64, f64, usize) {
    const CHUNK: usize = 4096;
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<(f64, f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(samples - c * CHUNK);
            let mut x = vec![0.0; p];
            let (mut mx, mut s1, mut s2) = (0.0f64, 0.0, 0.0);
            for _ in 0..len {
                x.iter_mut().for_each(|xj| *xj = rng.random());
                let e = diff(&x);
                mx = mx.max(e);
                if let Some(v) = v {
                    let t = e.powf(v);
                    s1 += t;
                    s2 += t * t;
                }
            }
            (mx, s1, s2)
        })
        .collect();
    match v {
        None => (parts.iter().map(|r| r.0).fold(0.0, f64::max), 0.0, samples),
        Some(_) => {
            let s1: f64 = parts.iter().map(|r| r.1).sum();
            let s2: f64 = parts.iter().map(|r| r.2).sum();
            (s1 / samples as f64, s2 / samples as f64, samples)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Condition {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; at most one means the condition holds.
    pub ratio: f64,
    pub holds: bool,
}

impl Condition {
    fn new(lhs: f64, rhs: f64) -> Self {
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        Self { lhs, rhs, ratio, holds: lhs <= rhs }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapConditionReport {
    /// `|S(𝔛*)|`.
    pub chopped: usize,
    pub min_len: f64,
    /// `false` when `|S(𝔛*)| = 0`: every condition then holds automatically.
    pub applicable: bool,
    pub sup: Condition,
    pub lv: Condition,
    pub lv_continuous: Condition,
}

/// Both sides of the sup-norm condition and the two `L_v` conditions.
pub fn check_snap_conditions(
    spec: &PiecewiseAnisoSpec,
    c_n: f64,
    v: f64,
    norm_f0_sup: f64,
    eps_bar: f64,
) -> Result<SnapConditionReport> {
    let ext = spec.extended_partition()?;
    let part = ext.to_partition();
    let s = part.chopped_coords();
    let min_len = part
        .boxes()
        .iter()
        .flat_map(|b| (0..b.dim()).map(move |j| b.len(j)))
        .fold(f64::INFINITY, f64::min);
    if s.is_empty() {
        let ok = Condition { lhs: c_n, rhs: f64::INFINITY, ratio: 0.0, holds: true };
        return Ok(SnapConditionReport {
            chopped: 0,
            min_len,
            applicable: false,
            sup: ok.clone(),
            lv: ok.clone(),
            lv_continuous: ok,
        });
    }
    let k = s.len() as f64;
    let amin = spec.min_alpha();
    let lambda = spec.lambda;
    Ok(SnapConditionReport {
        chopped: s.len(),
        min_len,
        applicable: true,
        sup: Condition::new(c_n.powf(amin), eps_bar / (lambda * k)),
        lv: Condition::new(c_n, (eps_bar / norm_f0_sup).powf(v) * min_len / k),
        lv_continuous: Condition::new(
            c_n.powf(1.0 + v * amin),
            (eps_bar / lambda).powf(v) * min_len / k.powf(v + 1.0),
        ),
    })
}

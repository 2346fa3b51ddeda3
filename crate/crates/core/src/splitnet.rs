//! Split-nets: finite sets of admissible split locations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::akd::{akd, AkdResult};
use crate::error::{Error, Result};
use crate::geometry::{is_s_chopped, partition_divergence, Rect, SplitRecord, TreePartition};

/// Largest point count a net may describe (product layouts are not
/// materialized, but `b_n` must stay exactly representable).
pub const MAX_NET_POINTS: u64 = 1 << 53;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
enum Layout {
    /// Cartesian product of the per-axis value lists.
    Product,
    /// Explicit point list.
    Explicit { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitNet {
    axes: Vec<Vec<f64>>,
    size: u64,
    #[serde(flatten)]
    layout: Layout,
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn check_unit(coord: usize, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfUnitCube { coord, value })
    }
}

impl SplitNet {
    /// `{(i - 1/2)/m : i = 1..m}^p`.
    pub fn regular_grid(p: usize, m: usize) -> Result<Self> {
        if p == 0 || m == 0 {
            return Err(Error::InvalidArgument("regular grid needs p >= 1 and m >= 1".into()));
        }
        let axis: Vec<f64> = (1..=m).map(|i| (i as f64 - 0.5) / m as f64).collect();
        Self::from_axes(vec![axis; p])
    }

    /// Product net from arbitrary per-axis value lists.
    pub fn from_axes(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArgument("net needs at least one axis".into()));
        }
        let mut size: u64 = 1;
        let mut sorted = Vec::with_capacity(axes.len());
        for (j, axis) in axes.into_iter().enumerate() {
            if axis.is_empty() {
                return Err(Error::InvalidArgument(format!("axis {j} has no values")));
            }
            for &v in &axis {
                check_unit(j, v)?;
            }
            let axis = sorted_unique(axis);
            size = size
                .checked_mul(axis.len() as u64)
                .filter(|&s| s <= MAX_NET_POINTS)
                .ok_or_else(|| Error::Overflow(format!("product net exceeds {MAX_NET_POINTS} points")))?;
            sorted.push(axis);
        }
        Ok(Self { axes: sorted, size, layout: Layout::Product })
    }

    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::EmptyData);
        };
        let p = first.len();
        if p == 0 {
            return Err(Error::InvalidArgument("zero-dimensional points".into()));
        }
        let mut axes = vec![Vec::with_capacity(points.len()); p];
        for pt in &points {
            if pt.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: pt.len() });
            }
            for (j, &v) in pt.iter().enumerate() {
                check_unit(j, v)?;
                axes[j].push(v);
            }
        }
        let axes = axes.into_iter().map(sorted_unique).collect();
        Ok(Self { axes, size: points.len() as u64, layout: Layout::Explicit { points } })
    }

    /// One point per row, comma separated; blank lines, `#` comments and a
    /// non-numeric header row are skipped.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_points(parse_csv_rows(&text)?)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// `b_n`.
    pub fn size(&self) -> u64 {
        self.size
    }

    /// Sorted distinct projection `[Z]_j`.
    pub fn axis(&self, j: usize) -> &[f64] {
        &self.axes[j]
    }

    /// `b_j(Z)`.
    pub fn axis_count(&self, j: usize) -> usize {
        self.axes[j].len()
    }

    pub fn is_product(&self) -> bool {
        matches!(self.layout, Layout::Product)
    }

    /// Explicit points, or `None` for product layouts.
    pub fn points(&self) -> Option<&[Vec<f64>]> {
        match &self.layout {
            Layout::Explicit { points } => Some(points),
            Layout::Product => None,
        }
    }

    /// Values of `[Z]_j` strictly inside `(lo_j, hi_j)`.
    pub fn candidates_in(&self, rect: &Rect, j: usize) -> &[f64] {
        let axis = &self.axes[j];
        let (lo, hi) = (rect.lo()[j], rect.hi()[j]);
        let a = axis.partition_point(|&v| v <= lo);
        let b = axis.partition_point(|&v| v < hi);
        if a < b {
            &axis[a..b]
        } else {
            &[]
        }
    }

    /// `b̃_j(Z, Ψ)`.
    pub fn count_in(&self, rect: &Rect, j: usize) -> usize {
        self.candidates_in(rect, j).len()
    }

    pub fn is_candidate(&self, j: usize, tau: f64) -> bool {
        self.axes[j].binary_search_by(|v| v.total_cmp(&tau)).is_ok()
    }

    /// Interior candidate nearest to `tau`; ties go to the smaller value.
    pub fn nearest_candidate(&self, rect: &Rect, j: usize, tau: f64) -> Option<f64> {
        let c = self.candidates_in(rect, j);
        if c.is_empty() {
            return None;
        }
        let k = c.partition_point(|&v| v < tau);
        let above = c.get(k).copied();
        let below = k.checked_sub(1).map(|i| c[i]);
        match (below, above) {
            (Some(b), Some(a)) => Some(if tau - b <= a - tau { b } else { a }),
            (Some(b), None) => Some(b),
            (None, Some(a)) => Some(a),
            (None, None) => None,
        }
    }

    /// Net point inside `rect` (boundary convention respected) nearest to
    /// `target` in sup-norm.
    pub fn nearest_point_in(&self, rect: &Rect, target: &[f64]) -> Option<Vec<f64>> {
        match &self.layout {
            Layout::Product => {
                let mut out = Vec::with_capacity(self.dim());
                for j in 0..self.dim() {
                    let axis = &self.axes[j];
                    let (lo, hi) = (rect.lo()[j], rect.hi()[j]);
                    let a = if rect.is_lower_closed(j) {
                        axis.partition_point(|&v| v < lo)
                    } else {
                        axis.partition_point(|&v| v <= lo)
                    };
                    let b = axis.partition_point(|&v| v <= hi);
                    if a >= b {
                        return None;
                    }
                    let vals = &axis[a..b];
                    let k = vals.partition_point(|&v| v < target[j]);
                    let best = [k.checked_sub(1), (k < vals.len()).then_some(k)]
                        .into_iter()
                        .flatten()
                        .map(|i| vals[i])
                        .min_by(|x, y| (x - target[j]).abs().total_cmp(&(y - target[j]).abs()))?;
                    out.push(best);
                }
                Some(out)
            }
            Layout::Explicit { points } => points
                .iter()
                .filter(|z| rect.contains(z))
                .min_by(|a, b| sup_dist(a, target).total_cmp(&sup_dist(b, target)))
                .cloned(),
        }
    }
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub(crate) fn parse_csv_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if rows.is_empty() => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", i + 1))),
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct DenseCheck {
    pub dense: bool,
    pub snapped: Option<TreePartition>,
    pub achieved: f64,
}

/// Snaps every split of `target` to the nearest admissible candidate and
/// reports the resulting divergence against `c_n`.
///
/// This certifies the constructive upper bound only; a failure does not prove
/// that no closer Z-tree partition exists.
pub fn check_dense(net: &SplitNet, target: &TreePartition, s: &[usize], c_n: f64) -> Result<DenseCheck> {
    if net.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: net.dim(), got: target.dim() });
    }
    if !is_s_chopped(&target.to_partition(), s) {
        return Err(Error::InvalidArgument(format!("target partition is not {s:?}-chopped")));
    }
    let mut snapped = TreePartition::new(target.root_rect().clone());
    for r in target.records() {
        let rect = &snapped.node(r.node).rect;
        let Some(tau) = net.nearest_candidate(rect, r.coord, r.tau) else {
            return Ok(DenseCheck { dense: false, snapped: None, achieved: f64::INFINITY });
        };
        snapped.split(r.node, r.coord, tau)?;
    }
    let achieved = partition_divergence(&target.to_partition(), &snapped.to_partition())?;
    Ok(DenseCheck { dense: achieved <= c_n, snapped: Some(snapped), achieved })
}

/// Snaps a bare split history (convenience for spec files).
pub fn snap_records(net: &SplitNet, root: Rect, records: &[SplitRecord], s: &[usize], c_n: f64) -> Result<DenseCheck> {
    let target = TreePartition::from_records(root, records)?;
    check_dense(net, &target, s, c_n)
}

pub const DEFAULT_REGULARITY_SLACK: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct RegularCheck {
    pub regular: bool,
    pub counters: Vec<usize>,
    /// `max_k len([Ω_k]_{s_j}) / (len([Ψ]_{s_j}) 2^{-l_j})` per `j`.
    pub ratios: Vec<f64>,
    pub result: AkdResult,
}

pub fn check_regular(
    net: &SplitNet,
    rect: &Rect,
    alpha: &[f64],
    l_target: usize,
    s: &[usize],
    slack: f64,
) -> Result<RegularCheck> {
    let result = akd(rect, net, alpha, l_target, s)?;
    let leaves = result.partition.leaf_rects();
    let ratios: Vec<f64> = s
        .iter()
        .zip(&result.counters)
        .map(|(&sj, &lj)| {
            let widest = leaves.iter().map(|b| b.len(sj)).fold(0.0, f64::max);
            widest / (rect.len(sj) * (-(lj as f64)).exp2())
        })
        .collect();
    let regular = result.depth == l_target && ratios.iter().all(|&r| r <= slack);
    Ok(RegularCheck { regular, counters: result.counters.clone(), ratios, result })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn regular_grid_examples() {
        let g = SplitNet::regular_grid(2, 5).unwrap();
        assert_eq!(g.size(), 25);
        assert_eq!((g.axis_count(0), g.axis_count(1)), (5, 5));
        let g1 = SplitNet::regular_grid(1, 1).unwrap();
        assert_eq!(g1.axis(0), &[0.5]);
        let g10 = SplitNet::regular_grid(1, 10).unwrap();
        for (i, v) in g10.axis(0).iter().enumerate() {
            assert!((v - (i as f64 + 0.5) / 10.0).abs() < 1e-15);
        }
        assert!(matches!(SplitNet::regular_grid(8, 1 << 10), Err(Error::Overflow(_))));
    }

    #[test]
    fn from_points_examples() {
        let net = SplitNet::from_points(vec![vec![0.2, 0.2], vec![0.2, 0.8], vec![0.8, 0.5]]).unwrap();
        assert_eq!((net.axis_count(0), net.axis_count(1)), (2, 3));
        let same = SplitNet::from_points(vec![vec![0.3, 0.4]; 7]).unwrap();
        assert_eq!((same.size(), same.axis_count(0), same.axis_count(1)), (7, 1, 1));
        let shuffled: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 / 10.0 + 0.05, ((i * 4) % 9) as f64 / 10.0 + 0.05]).collect();
        let n = SplitNet::from_points(shuffled).unwrap();
        assert_eq!((n.axis_count(0), n.axis_count(1)), (9, 9));
        assert!(matches!(
            SplitNet::from_points(vec![vec![1.2]]),
            Err(Error::OutOfUnitCube { coord: 0, .. })
        ));
    }

    #[test]
    fn candidates_examples() {
        let g = SplitNet::regular_grid(1, 10).unwrap();
        assert_eq!(g.count_in(&Rect::unit(1), 0), 10);
        let inner = Rect::new(vec![0.05], vec![0.95]).unwrap();
        assert_eq!(g.count_in(&inner, 0), 8);
        let flat = Rect::new(vec![0.45], vec![0.45]).unwrap();
        assert!(g.candidates_in(&flat, 0).is_empty());
    }

    #[test]
    fn dense_examples() {
        let g = SplitNet::regular_grid(1, 10).unwrap();
        let mut t = TreePartition::unit(1);
        t.split(0, 0, 0.52).unwrap();
        let d = check_dense(&g, &t, &[0], 0.05).unwrap();
        assert!(d.dense);
        assert!((d.achieved - 0.03).abs() < 1e-12);
        assert_eq!(d.snapped.unwrap().records()[0].tau, 0.55);

        let whole = TreePartition::unit(3);
        let d = check_dense(&SplitNet::regular_grid(3, 2).unwrap(), &whole, &[], 0.0).unwrap();
        assert!(d.dense && d.achieved == 0.0);

        let mut z = TreePartition::unit(1);
        z.split(0, 0, 0.35).unwrap();
        assert_eq!(check_dense(&g, &z, &[0], 0.0).unwrap().achieved, 0.0);

        let single = SplitNet::regular_grid(1, 1).unwrap();
        let mut two = TreePartition::unit(1);
        let (l, _) = two.split(0, 0, 0.6).unwrap();
        two.split(l, 0, 0.3).unwrap();
        let d = check_dense(&single, &two, &[0], 1.0).unwrap();
        assert!(!d.dense && d.snapped.is_none() && d.achieved.is_infinite());
    }

    #[test]
    fn tie_goes_to_smaller() {
        let g = SplitNet::regular_grid(1, 10).unwrap();
        assert_eq!(g.nearest_candidate(&Rect::unit(1), 0, 0.5), Some(0.45));
    }

    // Exhaustive oracle for p = 1: every choice of J-1 cut points.
    fn best_interval_partition(axis: &[f64], cuts: &[f64]) -> f64 {
        let k = cuts.len();
        let mut best = f64::INFINITY;
        let n = axis.len();
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let chosen: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| axis[i]).collect();
            let d = chosen.iter().zip(cuts).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            best = best.min(d);
        }
        best
    }

    #[test]
    fn snap_never_beats_exhaustive_search() {
        let g = SplitNet::regular_grid(1, 8).unwrap();
        for cuts in [vec![0.52], vec![0.2, 0.61], vec![0.1, 0.33, 0.9], vec![0.49, 0.51]] {
            let mut t = TreePartition::unit(1);
            let mut leaf = 0;
            for &c in cuts.iter().rev() {
                leaf = t.split(leaf, 0, c).unwrap().0;
            }
            let oracle = best_interval_partition(g.axis(0), &cuts);
            match check_dense(&g, &t, &[0], 1.0).unwrap().snapped {
                Some(s) => {
                    let achieved = partition_divergence(&t.to_partition(), &s.to_partition()).unwrap();
                    assert!(achieved + 1e-15 >= oracle);
                    assert!(achieved <= 1.0 / 8.0 + 1e-12);
                }
                None => assert!(oracle.is_finite()),
            }
        }
    }

    #[test]
    fn regular_examples() {
        let g = SplitNet::regular_grid(1, 512).unwrap();
        let r = check_regular(&g, &Rect::unit(1), &[1.0], 4, &[0], 3.0).unwrap();
        assert!(r.regular);
        let one = SplitNet::regular_grid(1, 1).unwrap();
        let r = check_regular(&one, &Rect::unit(1), &[1.0], 2, &[0], 3.0).unwrap();
        assert!(!r.regular);
        assert_eq!(r.result.depth, 1);
        let r = check_regular(&g, &Rect::unit(1), &[1.0], 4, &[0], 0.0).unwrap();
        assert!(!r.regular);
    }

    #[test]
    fn csv_parsing_skips_header() {
        let rows = parse_csv_rows("# net\nx1,x2\n0.1,0.2\n0.3, 0.4\n").unwrap();
        assert_eq!(rows, vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        assert!(parse_csv_rows("0.1\nfoo\n").is_err());
    }

    proptest! {
        #[test]
        fn grid_count_brackets_length(m in 1usize..64, a in 0usize..66, b in 0usize..66) {
            let ends: Vec<f64> = (0..=m + 1).map(|i| match i {
                0 => 0.0,
                i if i == m + 1 => 1.0,
                i => (i as f64 - 0.5) / m as f64,
            }).collect();
            let (a, b) = (a % ends.len(), b % ends.len());
            let (lo, hi) = (ends[a.min(b)], ends[a.max(b)]);
            prop_assume!(hi > lo);
            let g = SplitNet::regular_grid(1, m).unwrap();
            let rect = Rect::new(vec![lo], vec![hi]).unwrap();
            let bt = g.count_in(&rect, 0) as f64;
            let ml = m as f64 * (hi - lo);
            prop_assert!(bt <= ml + 1e-9 && ml <= bt + 1.0 + 1e-9);
        }

        #[test]
        fn snapped_grid_divergence_within_mesh(m in 4usize..40, taus in proptest::collection::vec(0.0f64..1.0, 1..4)) {
            let g = SplitNet::regular_grid(1, m).unwrap();
            let mut t = TreePartition::unit(1);
            for &tau in &taus {
                let leaf = t.locate(&[tau]);
                let r = t.node(leaf).rect.clone();
                if tau - r.lo()[0] >= 1.0 / m as f64 && r.hi()[0] - tau >= 1.0 / m as f64 {
                    t.split(leaf, 0, tau).unwrap();
                }
            }
            prop_assume!(t.num_leaves() > 1);
            let d = check_dense(&g, &t, &[0], 1.0 / m as f64).unwrap();
            prop_assert!(d.dense, "achieved {}", d.achieved);
        }
    }
}

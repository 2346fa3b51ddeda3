//! Anisotropic k-d trees built by level-wise midpoint splitting.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Rect, TreePartition};
use crate::splitnet::SplitNet;

/// Relative tolerance when comparing `l_j * alpha_j` for ties.
const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct AkdResult {
    /// `l_j`, indexed like `alpha` and `S`.
    pub counters: Vec<usize>,
    /// Achieved depth `L° = Σ l_j`.
    pub depth: usize,
    /// Index into `S` chosen at each level.
    pub sequence: Vec<usize>,
    pub partition: TreePartition,
}

/// The `⌈b̃/2⌉`-th interior candidate along `j`, with the two halves.
pub fn midpoint_split(net: &SplitNet, rect: &Rect, j: usize) -> Option<(Rect, Rect, f64)> {
    let c = net.candidates_in(rect, j);
    if c.is_empty() {
        return None;
    }
    let tau = c[c.len().div_ceil(2) - 1];
    let (l, r) = rect.split(j, tau).ok()?;
    Some((l, r, tau))
}

fn choose(counters: &[usize], alpha: &[f64]) -> usize {
    let score = |j: usize| counters[j] as f64 * alpha[j];
    let best = (0..alpha.len()).map(score).fold(f64::INFINITY, f64::min);
    (0..alpha.len())
        .find(|&j| score(j) <= best + TIE_RTOL * best.abs())
        .unwrap_or(0)
}

/// Runs the construction on `rect` until `Σ l_j = l_target` or some leaf has
/// no interior candidate along the chosen coordinate. In the latter case the
/// whole level is skipped, so the leaf count stays `2^{L°}`.
pub fn akd(rect: &Rect, net: &SplitNet, alpha: &[f64], l_target: usize, s: &[usize]) -> Result<AkdResult> {
    if alpha.len() != s.len() {
        return Err(Error::DimensionMismatch { expected: s.len(), got: alpha.len() });
    }
    if alpha.is_empty() && l_target > 0 {
        return Err(Error::InvalidArgument("empty coordinate set with positive depth".into()));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(Error::InvalidArgument(format!("smoothness {a} outside (0, 1]")));
    }
    if let Some(&j) = s.iter().find(|&&j| j >= rect.dim()) {
        return Err(Error::InvalidArgument(format!("coordinate {j} >= dimension {}", rect.dim())));
    }
    if net.dim() != rect.dim() {
        return Err(Error::DimensionMismatch { expected: rect.dim(), got: net.dim() });
    }

    let mut tree = TreePartition::new(rect.clone());
    let mut leaves = vec![TreePartition::ROOT];
    let mut counters = vec![0; alpha.len()];
    let mut sequence = Vec::new();
    while sequence.len() < l_target {
        let j = choose(&counters, alpha);
        let coord = s[j];
        let mut taus = Vec::with_capacity(leaves.len());
        for &id in &leaves {
            match midpoint_split(net, &tree.node(id).rect, coord) {
                Some((_, _, tau)) => taus.push(tau),
                None => break,
            }
        }
        if taus.len() < leaves.len() {
            break;
        }
        let mut next = Vec::with_capacity(2 * leaves.len());
        for (&id, &tau) in leaves.iter().zip(&taus) {
            let (l, r) = tree.split(id, coord, tau)?;
            next.push(l);
            next.push(r);
        }
        leaves = next;
        counters[j] += 1;
        sequence.push(j);
    }
    Ok(AkdResult { depth: sequence.len(), counters, sequence, partition: tree })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcs::harmonic_mean;
    use proptest::prelude::*;

    #[test]
    fn midpoint_examples() {
        let g = SplitNet::regular_grid(1, 10).unwrap();
        let (_, _, tau) = midpoint_split(&g, &Rect::unit(1), 0).unwrap();
        assert!((tau - 0.45).abs() < 1e-15);
        let nine = SplitNet::from_axes(vec![(1..=9).map(|i| i as f64 / 10.0).collect()]).unwrap();
        let (l, r, tau) = midpoint_split(&nine, &Rect::unit(1), 0).unwrap();
        assert_eq!(tau, 0.5);
        assert_eq!((l.hi()[0], r.lo()[0]), (0.5, 0.5));
        let one = SplitNet::from_axes(vec![vec![0.3]]).unwrap();
        assert_eq!(midpoint_split(&one, &Rect::unit(1), 0).unwrap().2, 0.3);
        assert!(midpoint_split(&one, &Rect::new(vec![0.3], vec![1.0]).unwrap(), 0).is_none());
    }

    #[test]
    fn hand_traced_sequence() {
        let g = SplitNet::regular_grid(2, 512).unwrap();
        let r = akd(&Rect::unit(2), &g, &[0.25, 0.5], 6, &[0, 1]).unwrap();
        assert_eq!(r.counters, vec![4, 2]);
        assert_eq!(r.sequence, vec![0, 1, 0, 0, 1, 0]);
        assert_eq!(r.partition.num_leaves(), 64);

        let r = akd(&Rect::unit(2), &g, &[1.0, 1.0], 4, &[0, 1]).unwrap();
        assert_eq!(r.counters, vec![2, 2]);
        assert_eq!(r.sequence, vec![0, 1, 0, 1]);

        let r = akd(&Rect::unit(2), &g, &[0.3, 0.9], 0, &[0, 1]).unwrap();
        assert_eq!(r.counters, vec![0, 0]);
        assert_eq!(r.partition.num_leaves(), 1);
    }

    #[test]
    fn stops_level_wise() {
        // Three candidates: level one splits at 0.5, level two has candidates
        // in both halves, level three has none anywhere.
        let net = SplitNet::from_axes(vec![vec![0.25, 0.5, 0.75]]).unwrap();
        let r = akd(&Rect::unit(1), &net, &[1.0], 5, &[0]).unwrap();
        assert_eq!(r.depth, 2);
        assert_eq!(r.partition.num_leaves(), 4);
        // Two candidates: the right half after splitting at 0.25 has 0.75, the
        // left has nothing, so level two is skipped entirely.
        let net = SplitNet::from_axes(vec![vec![0.25, 0.75]]).unwrap();
        let r = akd(&Rect::unit(1), &net, &[1.0], 3, &[0]).unwrap();
        assert_eq!(r.depth, 1);
        assert_eq!(r.partition.num_leaves(), 2);
    }

    #[test]
    fn one_below_ideal_count_can_fail() {
        // l_j > L abar/(d a_j) - 1 does not hold for every input.
        let alpha = [1.0, 1.0, 0.05];
        let g = SplitNet::regular_grid(3, 64).unwrap();
        let r = akd(&Rect::unit(3), &g, &alpha, 3, &[0, 1, 2]).unwrap();
        assert_eq!(r.counters, vec![1, 1, 1]);
        let abar = harmonic_mean(&alpha).unwrap();
        assert!((r.counters[2] as f64) < 3.0 * abar / (3.0 * 0.05) - 1.0);
    }

    #[test]
    fn deterministic() {
        let g = SplitNet::regular_grid(3, 64).unwrap();
        let a = akd(&Rect::unit(3), &g, &[0.4, 0.7, 1.0], 9, &[2, 0, 1]).unwrap();
        let b = akd(&Rect::unit(3), &g, &[0.4, 0.7, 1.0], 9, &[2, 0, 1]).unwrap();
        assert_eq!(a.partition.records(), b.partition.records());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn counters_track_smoothness(alpha in proptest::collection::vec(0.05f64..=1.0, 1..=4), l in 0usize..=10) {
            let d = alpha.len();
            let g = SplitNet::regular_grid(d, 1 << 11).unwrap();
            let s: Vec<usize> = (0..d).collect();
            let r = akd(&Rect::unit(d), &g, &alpha, l, &s).unwrap();
            prop_assert_eq!(r.depth, l);
            prop_assert_eq!(r.counters.iter().sum::<usize>(), l);
            let abar = harmonic_mean(&alpha).unwrap();
            // Greedy balance gives (l_k - 1) a_k <= l_j a_j for all k, hence
            // l_j >= (L - d + 1) abar / (d a_j).
            for j in 0..d {
                let bound = (l as f64 - d as f64 + 1.0) * abar / (d as f64 * alpha[j]);
                prop_assert!(r.counters[j] as f64 >= bound - 1e-9);
            }
            let vol: f64 = r.partition.leaf_rects().iter().map(Rect::volume).sum();
            prop_assert!((vol - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rich_grid_is_regular(alpha in proptest::collection::vec(0.1f64..=1.0, 1..=2), l in 1usize..=8) {
            let d = alpha.len();
            let g = SplitNet::regular_grid(d, 4 << l).unwrap();
            let s: Vec<usize> = (0..d).collect();
            let r = crate::splitnet::check_regular(&g, &Rect::unit(d), &alpha, l, &s, 3.0).unwrap();
            prop_assert!(r.regular, "{:?}", r.ratios);
        }
    }
}

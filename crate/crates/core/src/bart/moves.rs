//! Grow, prune and change proposals on a single tree.

use rand::Rng;
use serde::Serialize;

use crate::geometry::{NodeId, Rect, TreePartition};
use crate::priors::{draw_coord, leaf_log_term, PriorConfig};
use crate::splitnet::SplitNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Move {
    Grow { leaf: NodeId, coord: usize, tau: f64 },
    Prune { node: NodeId },
    Change { node: NodeId, coord: usize, tau: f64 },
}

/// Move-type probabilities for a tree with `nog` prunable nodes.
pub(crate) fn type_probs(weights: &[f64; 3], nog: usize) -> [f64; 3] {
    if nog == 0 {
        return [1.0, 0.0, 0.0];
    }
    let s: f64 = weights.iter().sum();
    [weights[0] / s, weights[1] / s, weights[2] / s]
}

fn pick<R: Rng + ?Sized>(probs: &[f64; 3], rng: &mut R) -> MoveKind {
    let u: f64 = rng.random();
    if u < probs[0] {
        MoveKind::Grow
    } else if u < probs[0] + probs[1] {
        MoveKind::Prune
    } else {
        MoveKind::Change
    }
}

/// Draws a proposal. `None` means the drawn move is impossible (no candidate
/// on the drawn coordinate, or the leaf sits at the depth guard) and the
/// chain stays put.
pub(crate) fn draw_move<R: Rng + ?Sized>(
    tree: &TreePartition,
    eta: &[f64],
    prior: &PriorConfig,
    net: &SplitNet,
    weights: &[f64; 3],
    rng: &mut R,
) -> (MoveKind, Option<Move>) {
    let nogs = tree.nog_nodes();
    let kind = pick(&type_probs(weights, nogs.len()), rng);
    let mv = match kind {
        MoveKind::Grow => {
            let leaves = tree.leaves();
            let leaf = leaves[rng.random_range(0..leaves.len())];
            let node = tree.node(leaf);
            if prior.split_prob(node.depth) == 0.0 {
                None
            } else {
                let coord = draw_coord(eta, rng);
                let c = net.candidates_in(&node.rect, coord);
                (!c.is_empty()).then(|| Move::Grow { leaf, coord, tau: c[rng.random_range(0..c.len())] })
            }
        }
        MoveKind::Prune => Some(Move::Prune { node: nogs[rng.random_range(0..nogs.len())] }),
        MoveKind::Change => {
            let node = nogs[rng.random_range(0..nogs.len())];
            let coord = draw_coord(eta, rng);
            let c = net.candidates_in(&tree.node(node).rect, coord);
            (!c.is_empty()).then(|| Move::Change { node, coord, tau: c[rng.random_range(0..c.len())] })
        }
    };
    (kind, mv)
}

fn lt(rect: &Rect, depth: usize, eta: &[f64], prior: &PriorConfig, net: &SplitNet) -> f64 {
    leaf_log_term(rect, depth, eta, prior, net)
}

/// `ln ν^{ℓ+1} + lt(left) + lt(right) − lt(node)`: the tree-prior ratio of
/// splitting a leaf, without the `η_j / b̃_j` factor that the proposal cancels.
fn split_gain(rect: &Rect, depth: usize, coord: usize, tau: f64, eta: &[f64], prior: &PriorConfig, net: &SplitNet) -> f64 {
    let (l, r) = rect.split(coord, tau).expect("candidate inside node");
    prior.split_prob(depth).ln() + lt(&l, depth + 1, eta, prior, net) + lt(&r, depth + 1, eta, prior, net)
        - lt(rect, depth, eta, prior, net)
}

/// Log of prior ratio times reverse-over-forward proposal probability.
pub(crate) fn move_log_ratio(
    tree: &TreePartition,
    mv: &Move,
    eta: &[f64],
    prior: &PriorConfig,
    net: &SplitNet,
    weights: &[f64; 3],
) -> f64 {
    let nog = tree.nog_nodes().len();
    match *mv {
        Move::Grow { leaf, coord, tau } => {
            let node = tree.node(leaf);
            let k = tree.num_leaves() as f64;
            let sibling_nog = node.parent.is_some_and(|pa| {
                let s = tree.node(pa).split.expect("parent is internal");
                let sib = if s.left == leaf { s.right } else { s.left };
                tree.is_leaf(sib)
            });
            let nog_after = (nog - sibling_nog as usize + 1) as f64;
            let fwd = type_probs(weights, nog)[0] / k;
            let rev = type_probs(weights, 1)[1] / nog_after;
            split_gain(&node.rect, node.depth, coord, tau, eta, prior, net) + rev.ln() - fwd.ln()
        }
        Move::Prune { node } => {
            let n = tree.node(node);
            let s = n.split.expect("internal");
            let k_after = (tree.num_leaves() - 1) as f64;
            let nog_after = if node == TreePartition::ROOT { 0 } else { 1 };
            let fwd = type_probs(weights, nog)[1] / nog as f64;
            let rev = type_probs(weights, nog_after)[0] / k_after;
            -split_gain(&n.rect, n.depth, s.coord, s.tau, eta, prior, net) + rev.ln() - fwd.ln()
        }
        Move::Change { node, coord, tau } => {
            let n = tree.node(node);
            let s = n.split.expect("internal");
            let d = n.depth + 1;
            let (l, r) = n.rect.split(coord, tau).expect("candidate inside node");
            lt(&l, d, eta, prior, net) + lt(&r, d, eta, prior, net)
                - lt(&tree.node(s.left).rect, d, eta, prior, net)
                - lt(&tree.node(s.right).rect, d, eta, prior, net)
        }
    }
}

pub(crate) fn apply_move(tree: &mut TreePartition, mv: &Move) {
    match *mv {
        Move::Grow { leaf, coord, tau } => {
            tree.split(leaf, coord, tau).expect("valid grow");
        }
        Move::Prune { node } => tree.prune(node).expect("valid prune"),
        Move::Change { node, coord, tau } => tree.change(node, coord, tau).expect("valid change"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::tree_log_prior;

    fn all_trees(p: usize, guard: usize, net: &SplitNet) -> Vec<TreePartition> {
        fn rec(tree: &TreePartition, leaves: Vec<NodeId>, guard: usize, net: &SplitNet, out: &mut Vec<TreePartition>) {
            let Some((&first, rest)) = leaves.split_first() else {
                out.push(tree.clone());
                return;
            };
            rec(tree, rest.to_vec(), guard, net, out);
            let node = tree.node(first);
            if node.depth >= guard {
                return;
            }
            for j in 0..tree.dim() {
                for &tau in net.candidates_in(&node.rect, j) {
                    let mut t = tree.clone();
                    let (l, r) = t.split(first, j, tau).unwrap();
                    let mut next = vec![l, r];
                    next.extend_from_slice(rest);
                    rec(&t, next, guard, net, out);
                }
            }
        }
        let mut out = Vec::new();
        rec(&TreePartition::unit(p), vec![TreePartition::ROOT], guard, net, &mut out);
        out
    }

    /// Every proposal with its probability, computed by walking the mechanism.
    fn proposals(tree: &TreePartition, eta: &[f64], prior: &PriorConfig, net: &SplitNet, w: &[f64; 3]) -> Vec<(Move, f64)> {
        let nogs = tree.nog_nodes();
        let probs = type_probs(w, nogs.len());
        let mut out = Vec::new();
        let leaves = tree.leaves();
        for &leaf in &leaves {
            let node = tree.node(leaf);
            if prior.split_prob(node.depth) == 0.0 {
                continue;
            }
            for (j, &e) in eta.iter().enumerate() {
                let c = net.candidates_in(&node.rect, j);
                for &tau in c {
                    out.push((Move::Grow { leaf, coord: j, tau }, probs[0] / leaves.len() as f64 * e / c.len() as f64));
                }
            }
        }
        for &node in &nogs {
            out.push((Move::Prune { node }, probs[1] / nogs.len() as f64));
            for (j, &e) in eta.iter().enumerate() {
                let c = net.candidates_in(&tree.node(node).rect, j);
                for &tau in c {
                    out.push((Move::Change { node, coord: j, tau }, probs[2] / nogs.len() as f64 * e / c.len() as f64));
                }
            }
        }
        out
    }

    fn same_partition(a: &TreePartition, b: &TreePartition) -> bool {
        a.records() == b.records()
    }

    #[test]
    fn acceptance_ratio_identity() {
        let mut total = 0;
        for (p, guard, net) in [
            (1, 3, SplitNet::from_axes(vec![vec![0.5]]).unwrap()),
            (2, 2, SplitNet::regular_grid(2, 1).unwrap()),
            (2, 3, SplitNet::from_axes(vec![vec![0.5], vec![0.25, 0.75]]).unwrap()),
        ] {
            let prior = PriorConfig { nu: 0.4, depth_guard: guard, ..PriorConfig::default() };
            let eta: Vec<f64> = if p == 1 { vec![1.0] } else { vec![0.3, 0.7] };
            let w = [0.4, 0.4, 0.2];
            let mut checked = 0;
            for tree in all_trees(p, guard, &net) {
                let lp = tree_log_prior(&tree, &eta, &prior, &net).unwrap();
                for (mv, q_fwd) in proposals(&tree, &eta, &prior, &net, &w) {
                    let mut t2 = tree.clone();
                    apply_move(&mut t2, &mv);
                    // A change to the current split leaves the tree as is; its
                    // ratio does not affect the stationary law.
                    if same_partition(&t2, &tree) {
                        continue;
                    }
                    let lp2 = tree_log_prior(&t2, &eta, &prior, &net).unwrap();
                    let q_rev: f64 = proposals(&t2, &eta, &prior, &net, &w)
                        .into_iter()
                        .filter(|(m, _)| {
                            let mut t3 = t2.clone();
                            apply_move(&mut t3, m);
                            same_partition(&t3, &tree)
                        })
                        .map(|(_, q)| q)
                        .sum();
                    let exact = lp2 - lp + q_rev.ln() - q_fwd.ln();
                    let got = move_log_ratio(&tree, &mv, &eta, &prior, &net, &w);
                    assert!((got - exact).abs() < 1e-10, "{mv:?}: {got} vs {exact}");
                    checked += 1;
                }
            }
            assert!(checked > 0);
            total += checked;
        }
        assert!(total > 50, "{total}");
    }
}

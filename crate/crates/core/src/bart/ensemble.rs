use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NodeId, TreePartition};

/// Sum of tree step functions. `heights[t]` is indexed by node id of
/// `trees[t]`; entries at internal or recycled ids are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub trees: Vec<TreePartition>,
    pub heights: Vec<Vec<f64>>,
}

impl Ensemble {
    /// `t` root-only trees on `[0,1]^p` with height `h` each.
    pub fn roots(t: usize, p: usize, h: f64) -> Self {
        Self { trees: vec![TreePartition::unit(p); t], heights: vec![vec![h]; t] }
    }

    /// Builds an ensemble from trees and per-tree heights listed in leaf order.
    pub fn from_leaf_heights(trees: Vec<TreePartition>, leaf_heights: Vec<Vec<f64>>) -> Result<Self> {
        if trees.len() != leaf_heights.len() {
            return Err(Error::DimensionMismatch { expected: trees.len(), got: leaf_heights.len() });
        }
        let mut heights = Vec::with_capacity(trees.len());
        for (tree, hs) in trees.iter().zip(&leaf_heights) {
            let leaves = tree.leaves();
            if leaves.len() != hs.len() {
                return Err(Error::DimensionMismatch { expected: leaves.len(), got: hs.len() });
            }
            let mut v = vec![0.0; tree.capacity()];
            for (&id, &h) in leaves.iter().zip(hs) {
                v[id] = h;
            }
            heights.push(v);
        }
        Ok(Self { trees, heights })
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.trees.first().map_or(0, TreePartition::dim)
    }

    pub fn height(&self, t: usize, id: NodeId) -> f64 {
        self.heights[t][id]
    }

    #[cfg(test)]
    pub(crate) fn set_height(&mut self, t: usize, id: NodeId, h: f64) {
        let v = &mut self.heights[t];
        if v.len() <= id {
            v.resize(id + 1, 0.0);
        }
        v[id] = h;
    }

    /// Heights of tree `t` in leaf order.
    pub fn leaf_heights(&self, t: usize) -> Vec<f64> {
        self.trees[t].leaves().into_iter().map(|id| self.heights[t][id]).collect()
    }

    pub fn tree_eval(&self, t: usize, x: &[f64]) -> f64 {
        self.heights[t][self.trees[t].locate(x)]
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (0..self.trees.len()).map(|t| self.tree_eval(t, x)).sum()
    }

    pub fn total_leaves(&self) -> usize {
        self.trees.iter().map(TreePartition::num_leaves).sum()
    }

    /// Mean height over all leaves of all trees.
    pub fn mean_height(&self) -> f64 {
        let (mut s, mut k) = (0.0, 0usize);
        for t in 0..self.trees.len() {
            for h in self.leaf_heights(t) {
                s += h;
                k += 1;
            }
        }
        s / k as f64
    }

    /// `∫ exp(f)` exactly, by evaluating on the common refinement of all split
    /// points. Cost grows like the product over axes of the split counts.
    pub fn normalizer_exact(&self) -> f64 {
        let p = self.dim();
        if self.trees.len() == 1 {
            let tree = &self.trees[0];
            return tree.leaves().iter().map(|&id| tree.node(id).rect.volume() * self.heights[0][id].exp()).sum();
        }
        let mut cuts: Vec<Vec<f64>> = vec![vec![0.0, 1.0]; p];
        for tree in &self.trees {
            for id in tree.internal_nodes() {
                let s = tree.node(id).split.expect("internal");
                cuts[s.coord].push(s.tau);
            }
        }
        for c in &mut cuts {
            c.sort_by(f64::total_cmp);
            c.dedup();
        }
        let mut total = 0.0;
        let mut idx = vec![0usize; p];
        let mut x = vec![0.0; p];
        'cells: loop {
            let mut vol = 1.0;
            for j in 0..p {
                let (a, b) = (cuts[j][idx[j]], cuts[j][idx[j] + 1]);
                vol *= b - a;
                // Any interior point lies in the same leaf as the whole cell.
                x[j] = 0.5 * (a + b);
            }
            total += vol * self.eval(&x).exp();
            for j in 0..p {
                idx[j] += 1;
                if idx[j] + 1 < cuts[j].len() {
                    continue 'cells;
                }
                idx[j] = 0;
            }
            break;
        }
        total
    }

    /// `∫ exp(f)` by the midpoint rule on `res^p` cells.
    pub fn normalizer_grid(&self, res: usize) -> f64 {
        let (points, w) = midpoint_grid(self.dim(), res);
        points.iter().map(|x| w * self.eval(x).exp()).sum()
    }
}

/// Cell midpoints of the regular `res^p` grid and the common cell volume.
pub fn midpoint_grid(p: usize, res: usize) -> (Vec<Vec<f64>>, f64) {
    let total = res.pow(p as u32);
    let h = 1.0 / res as f64;
    let points = (0..total)
        .map(|mut k| {
            (0..p)
                .map(|_| {
                    let i = k % res;
                    k /= res;
                    (i as f64 + 0.5) * h
                })
                .collect()
        })
        .collect();
    (points, h.powi(p as i32))
}

/// `∫ exp(f)`: the closed form for a single tree, otherwise the midpoint rule
/// at `resolution` cells per axis.
pub fn density_normalizer(ensemble: &Ensemble, resolution: usize) -> f64 {
    if ensemble.len() == 1 {
        ensemble.normalizer_exact()
    } else {
        ensemble.normalizer_grid(resolution)
    }
}

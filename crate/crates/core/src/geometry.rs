//! Axis-aligned boxes of the unit cube, box partitions, binary tree
//! partitions, and the bottleneck Hausdorff divergence between partitions.
//!
//! Splits follow the `{x_j <= tau}` / `{x_j > tau}` dichotomy: a left child
//! keeps a closed upper face at `tau`, a right child gets an open lower face.
//! Upper faces are therefore always closed and only lower faces carry a flag.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

const UNIT_TOL: f64 = 1e-12;

/// A hyper-rectangle inside `[0,1]^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    lo: Vec<f64>,
    hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower_closed: Option<Vec<bool>>,
}

impl Rect {
    /// Closed box `[lo, hi]`.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        if lo.is_empty() {
            return Err(Error::InvalidBox("zero-dimensional box".into()));
        }
        for j in 0..lo.len() {
            let (a, b) = (lo[j], hi[j]);
            if !(a.is_finite() && b.is_finite()) || a > b || a < -UNIT_TOL || b > 1.0 + UNIT_TOL {
                return Err(Error::InvalidBox(format!(
                    "coordinate {j}: [{a}, {b}] is not an interval inside [0, 1]"
                )));
            }
        }
        Ok(Self { lo, hi, lower_closed: None })
    }

    pub fn unit(p: usize) -> Self {
        Self { lo: vec![0.0; p], hi: vec![1.0; p], lower_closed: None }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// `len([Ψ]_j)`.
    pub fn len(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }

    pub fn is_lower_closed(&self, j: usize) -> bool {
        self.lower_closed.as_ref().map_or(true, |c| c[j])
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.len(j)).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Membership under the boundary convention.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|j| {
                let above = if self.is_lower_closed(j) { x[j] >= self.lo[j] } else { x[j] > self.lo[j] };
                above && x[j] <= self.hi[j]
            })
    }

    /// Dichotomize along `coord` at `tau`, which must lie in the open interval
    /// `int([Ψ]_coord)`.
    pub fn split(&self, coord: usize, tau: f64) -> Result<(Rect, Rect)> {
        if coord >= self.dim() {
            return Err(Error::InvalidArgument(format!("coordinate {coord} >= dimension {}", self.dim())));
        }
        if !(tau > self.lo[coord] && tau < self.hi[coord]) {
            return Err(Error::SplitOutsideNode {
                coord,
                tau,
                lo: self.lo[coord],
                hi: self.hi[coord],
            });
        }
        let mut left = self.clone();
        left.hi[coord] = tau;
        let mut right = self.clone();
        right.lo[coord] = tau;
        let mut closed = self.lower_closed.clone().unwrap_or_else(|| vec![true; self.dim()]);
        closed[coord] = false;
        right.lower_closed = Some(closed);
        Ok((left, right))
    }

    /// Closed-hull intersection; `None` when the hulls do not meet.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        if self.dim() != other.dim() {
            return None;
        }
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        let mut closed = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let (a, b) = (self.lo[j].max(other.lo[j]), self.hi[j].min(other.hi[j]));
            if a > b {
                return None;
            }
            let c = match self.lo[j].partial_cmp(&other.lo[j]) {
                Some(std::cmp::Ordering::Greater) => self.is_lower_closed(j),
                Some(std::cmp::Ordering::Less) => other.is_lower_closed(j),
                _ => self.is_lower_closed(j) && other.is_lower_closed(j),
            };
            lo.push(a);
            hi.push(b);
            closed.push(c);
        }
        let lower_closed = if closed.iter().all(|&c| c) { None } else { Some(closed) };
        Some(Rect { lo, hi, lower_closed })
    }

    /// Coordinates restricted to `coords`, in that order.
    pub fn project(&self, coords: &[usize]) -> Rect {
        Rect {
            lo: coords.iter().map(|&j| self.lo[j]).collect(),
            hi: coords.iter().map(|&j| self.hi[j]).collect(),
            lower_closed: self
                .lower_closed
                .as_ref()
                .map(|c| coords.iter().map(|&j| c[j]).collect()),
        }
    }
}

/// Hausdorff distance between the closures of two boxes under the sup-norm
/// point metric.
pub fn hausdorff_box(a: &Rect, b: &Rect) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok((0..a.dim())
        .map(|j| (a.lo[j] - b.lo[j]).abs().max((a.hi[j] - b.hi[j]).abs()))
        .fold(0.0, f64::max))
}

/// A finite ordered collection of disjoint boxes covering `[0,1]^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxPartition {
    boxes: Vec<Rect>,
}

impl BoxPartition {
    /// Wraps `boxes` after checking dimensions and that the volumes add up to 1.
    pub fn new(boxes: Vec<Rect>) -> Result<Self> {
        let Some(first) = boxes.first() else {
            return Err(Error::InvalidPartition("no boxes".into()));
        };
        let p = first.dim();
        if let Some(b) = boxes.iter().find(|b| b.dim() != p) {
            return Err(Error::DimensionMismatch { expected: p, got: b.dim() });
        }
        let vol: f64 = boxes.iter().map(Rect::volume).sum();
        if (vol - 1.0).abs() > UNIT_TOL * boxes.len().max(1) as f64 {
            return Err(Error::InvalidPartition(format!("total volume {vol} != 1")));
        }
        Ok(Self { boxes })
    }

    /// Wraps boxes without the covering check (used for partitions of sub-boxes).
    pub fn from_boxes_unchecked(boxes: Vec<Rect>) -> Self {
        Self { boxes }
    }

    pub fn boxes(&self) -> &[Rect] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.boxes.first().map_or(0, Rect::dim)
    }

    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        self.boxes.iter().position(|b| b.contains(x))
    }

    /// Coordinates `j` along which some box is shorter than the unit interval.
    pub fn chopped_coords(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&j| self.boxes.iter().any(|b| b.len(j) < 1.0 - UNIT_TOL))
            .collect()
    }
}

/// `true` iff every box is cut along each coordinate of `s` and spans the
/// unit interval along every other coordinate.
pub fn is_s_chopped(partition: &BoxPartition, s: &[usize]) -> bool {
    let p = partition.dim();
    partition.boxes().iter().all(|b| {
        (0..p).all(|j| {
            if s.contains(&j) {
                b.len(j) < 1.0 - UNIT_TOL
            } else {
                b.len(j) >= 1.0 - UNIT_TOL
            }
        })
    })
}

/// Bottleneck assignment value `min_π max_r Haus(Ψ¹_r, Ψ²_π(r))`.
///
/// Solved by binary search over the sorted distinct entries of the distance
/// matrix, testing each threshold for a perfect bipartite matching.
pub fn partition_divergence(a: &BoxPartition, b: &BoxPartition) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::UnequalBoxCount(a.len(), b.len()));
    }
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut dist = vec![0.0; n * n];
    for (r, ba) in a.boxes().iter().enumerate() {
        for (c, bb) in b.boxes().iter().enumerate() {
            dist[r * n + c] = hausdorff_box(ba, bb)?;
        }
    }
    let mut values = dist.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let (mut lo, mut hi) = (0usize, values.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if has_perfect_matching(n, |r, c| dist[r * n + c] <= values[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(values[lo])
}

fn has_perfect_matching(n: usize, allowed: impl Fn(usize, usize) -> bool) -> bool {
    fn augment(
        r: usize,
        n: usize,
        allowed: &impl Fn(usize, usize) -> bool,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for c in 0..n {
            if allowed(r, c) && !seen[c] {
                seen[c] = true;
                if owner[c].map_or(true, |o| augment(o, n, allowed, seen, owner)) {
                    owner[c] = Some(r);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; n];
    (0..n).all(|r| {
        let mut seen = vec![false; n];
        augment(r, n, &allowed, &mut seen, &mut owner)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub coord: usize,
    pub tau: f64,
    pub left: NodeId,
    pub right: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub rect: Rect,
    pub depth: usize,
    pub parent: Option<NodeId>,
    pub split: Option<SplitRule>,
}

/// Serialized form of one split: `{node, coord, tau}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub node: NodeId,
    pub coord: usize,
    pub tau: f64,
}

/// A binary tree partition of a root box.
///
/// Nodes live in an arena; pruned slots are recycled. `records()` emits a
/// canonical split history that `from_records` replays to an identical tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePartition {
    nodes: Vec<Node>,
    free: Vec<NodeId>,
}

impl TreePartition {
    pub fn new(root: Rect) -> Self {
        Self {
            nodes: vec![Node { rect: root, depth: 0, parent: None, split: None }],
            free: Vec::new(),
        }
    }

    pub fn unit(p: usize) -> Self {
        Self::new(Rect::unit(p))
    }

    pub const ROOT: NodeId = 0;

    pub fn root_rect(&self) -> &Rect {
        &self.nodes[Self::ROOT].rect
    }

    pub fn dim(&self) -> usize {
        self.root_rect().dim()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    /// Upper bound (exclusive) on node ids currently in use.
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].split.is_none()
    }

    fn check_live(&self, id: NodeId) -> Result<()> {
        if id >= self.nodes.len() || self.free.contains(&id) {
            return Err(Error::NoSuchNode(id));
        }
        Ok(())
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        match self.free.pop() {
            Some(id) => {
                self.nodes[id] = node;
                id
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        }
    }

    /// Splits leaf `id`; returns `(left, right)`.
    pub fn split(&mut self, id: NodeId, coord: usize, tau: f64) -> Result<(NodeId, NodeId)> {
        self.check_live(id)?;
        if !self.is_leaf(id) {
            return Err(Error::NotALeaf(id));
        }
        let (lr, rr) = self.nodes[id].rect.split(coord, tau)?;
        let depth = self.nodes[id].depth + 1;
        let left = self.alloc(Node { rect: lr, depth, parent: Some(id), split: None });
        let right = self.alloc(Node { rect: rr, depth, parent: Some(id), split: None });
        self.nodes[id].split = Some(SplitRule { coord, tau, left, right });
        Ok((left, right))
    }

    /// Collapses an internal node whose children are both leaves.
    pub fn prune(&mut self, id: NodeId) -> Result<()> {
        self.check_live(id)?;
        let rule = self.nodes[id].split.ok_or(Error::InvalidArgument(format!("node {id} is a leaf")))?;
        if !(self.is_leaf(rule.left) && self.is_leaf(rule.right)) {
            return Err(Error::InvalidArgument(format!("children of node {id} are not both leaves")));
        }
        self.nodes[id].split = None;
        self.free.push(rule.left);
        self.free.push(rule.right);
        Ok(())
    }

    /// Replaces the split rule at an internal node whose children are leaves.
    pub fn change(&mut self, id: NodeId, coord: usize, tau: f64) -> Result<()> {
        let rule = self.nodes[id].split.ok_or(Error::InvalidArgument(format!("node {id} is a leaf")))?;
        if !(self.is_leaf(rule.left) && self.is_leaf(rule.right)) {
            return Err(Error::InvalidArgument(format!("children of node {id} are not both leaves")));
        }
        let (lr, rr) = self.nodes[id].rect.split(coord, tau)?;
        self.nodes[rule.left].rect = lr;
        self.nodes[rule.right].rect = rr;
        self.nodes[id].split = Some(SplitRule { coord, tau, ..rule });
        Ok(())
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![Self::ROOT];
        while let Some(id) = stack.pop() {
            match self.nodes[id].split {
                Some(s) => {
                    stack.push(s.right);
                    stack.push(s.left);
                }
                None => out.push(id),
            }
        }
        out
    }

    /// Internal nodes in preorder.
    pub fn internal_nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![Self::ROOT];
        while let Some(id) = stack.pop() {
            if let Some(s) = self.nodes[id].split {
                out.push(id);
                stack.push(s.right);
                stack.push(s.left);
            }
        }
        out
    }

    /// Internal nodes whose two children are leaves.
    pub fn nog_nodes(&self) -> Vec<NodeId> {
        self.internal_nodes()
            .into_iter()
            .filter(|&id| {
                let s = self.nodes[id].split.unwrap();
                self.is_leaf(s.left) && self.is_leaf(s.right)
            })
            .collect()
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.len() - self.free.len() - self.internal_nodes().len()
    }

    pub fn leaf_rects(&self) -> Vec<Rect> {
        self.leaves().into_iter().map(|id| self.nodes[id].rect.clone()).collect()
    }

    pub fn to_partition(&self) -> BoxPartition {
        BoxPartition::from_boxes_unchecked(self.leaf_rects())
    }

    /// Leaf containing `x`, descending by the split rules.
    pub fn locate(&self, x: &[f64]) -> NodeId {
        let mut id = Self::ROOT;
        while let Some(s) = self.nodes[id].split {
            id = if x[s.coord] <= s.tau { s.left } else { s.right };
        }
        id
    }

    pub fn max_depth(&self) -> usize {
        self.leaves().iter().map(|&id| self.nodes[id].depth).max().unwrap_or(0)
    }

    /// Canonical preorder split history.
    pub fn records(&self) -> Vec<SplitRecord> {
        let mut map = vec![usize::MAX; self.nodes.len()];
        map[Self::ROOT] = 0;
        let mut next = 1;
        let mut out = Vec::new();
        for id in self.internal_nodes() {
            let s = self.nodes[id].split.unwrap();
            out.push(SplitRecord { node: map[id], coord: s.coord, tau: s.tau });
            map[s.left] = next;
            map[s.right] = next + 1;
            next += 2;
        }
        out
    }

    pub fn from_records(root: Rect, records: &[SplitRecord]) -> Result<Self> {
        let mut tree = Self::new(root);
        for r in records {
            tree.split(r.node, r.coord, r.tau)?;
        }
        Ok(tree)
    }

    /// Replays the splits of `sub` (whose root box must equal the leaf's box)
    /// beneath leaf `leaf`.
    pub fn graft(&mut self, leaf: NodeId, sub: &TreePartition) -> Result<()> {
        if !self.is_leaf(leaf) {
            return Err(Error::NotALeaf(leaf));
        }
        let mut map = vec![usize::MAX; sub.nodes.len()];
        map[Self::ROOT] = leaf;
        for id in sub.internal_nodes() {
            let s = sub.nodes[id].split.unwrap();
            let (l, r) = self.split(map[id], s.coord, s.tau)?;
            map[s.left] = l;
            map[s.right] = r;
        }
        Ok(())
    }

    /// Splits applied along `coords` are re-indexed through `coords[j]` and the
    /// root is lifted into `[0,1]^p` (unit length on all other axes).
    pub fn embed(&self, coords: &[usize], p: usize) -> Result<TreePartition> {
        if coords.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: coords.len() });
        }
        if coords.iter().any(|&c| c >= p) {
            return Err(Error::InvalidArgument(format!("coordinate set {coords:?} not inside 0..{p}")));
        }
        let mut lo = vec![0.0; p];
        let mut hi = vec![1.0; p];
        let root = self.root_rect();
        for (j, &c) in coords.iter().enumerate() {
            lo[c] = root.lo()[j];
            hi[c] = root.hi()[j];
        }
        let records: Vec<SplitRecord> = self
            .records()
            .into_iter()
            .map(|r| SplitRecord { coord: coords[r.coord], ..r })
            .collect();
        Self::from_records(Rect::new(lo, hi)?, &records)
    }
}

impl Serialize for TreePartition {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            root: &'a Rect,
            splits: Vec<SplitRecord>,
        }
        Repr { root: self.root_rect(), splits: self.records() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TreePartition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            root: Rect,
            #[serde(default)]
            splits: Vec<SplitRecord>,
        }
        let r = Repr::deserialize(deserializer)?;
        TreePartition::from_records(r.root, &r.splits).map_err(serde::de::Error::custom)
    }
}

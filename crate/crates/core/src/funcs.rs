//! Piecewise anisotropic truths, synthetic generators, and Hölder checks.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rect, TreePartition};

const ABAR_TOL: f64 = 1e-12;

/// `d / Σ_j 1/α_j`.
pub fn harmonic_mean(alpha: &[f64]) -> Result<f64> {
    if alpha.is_empty() {
        return Err(Error::InvalidArgument("empty smoothness vector".into()));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::InvalidArgument(format!("non-positive smoothness {a}")));
    }
    Ok(alpha.len() as f64 / alpha.iter().map(|a| a.recip()).sum::<f64>())
}

/// `1 + (1/p) {Σ_j (-1)^j 1(x_j >= 1/2)} {Σ_j (x_j - 1/2)^2}` with `j`
/// counted from one.
pub fn sim_function(x: &[f64]) -> f64 {
    let p = x.len() as f64;
    let mut sign = 0.0;
    let mut sq = 0.0;
    for (i, &v) in x.iter().enumerate() {
        if v >= 0.5 {
            sign += if i % 2 == 0 { -1.0 } else { 1.0 };
        }
        sq += (v - 0.5) * (v - 0.5);
    }
    1.0 + sign * sq / p
}

/// Sum of the `2^d` signed quadrant pyramids. Zero outside `[-1, 1]^d`.
pub fn packing_kernel(x: &[f64]) -> f64 {
    let mut negatives = 0usize;
    let mut worst: f64 = 0.0;
    for &v in x {
        let a = v.abs();
        if a > 1.0 {
            return 0.0;
        }
        if v < 0.0 {
            negatives += 1;
        }
        worst = worst.max((a - 0.5).abs());
    }
    let mag = 0.5 - worst;
    if mag <= 0.0 {
        return 0.0;
    }
    if negatives % 2 == 1 {
        -mag
    } else {
        mag
    }
}

/// `∫ K^2` over `[-1, 1]^d`.
pub fn packing_kernel_l2_sq(d: usize) -> f64 {
    let d = d as f64;
    d.exp2() / (2.0 * (d + 1.0) * (d + 2.0))
}

/// Midpoint-rule `(∫K, ∫K^2)` over `[-1, 1]^d` with `n` cells per axis.
pub fn packing_kernel_integrals(d: usize, n: usize) -> (f64, f64) {
    let h = 2.0 / n as f64;
    let cell = h.powi(d as i32);
    let total = n.pow(d as u32);
    let mut x = vec![0.0; d];
    let (mut s1, mut s2) = (0.0, 0.0);
    for flat in 0..total {
        let mut rest = flat;
        for xj in x.iter_mut() {
            *xj = -1.0 + h * ((rest % n) as f64 + 0.5);
            rest /= n;
        }
        let k = packing_kernel(&x);
        s1 += k;
        s2 += k * k;
    }
    (s1 * cell, s2 * cell)
}

/// One piece `Ξ_r` of a bump family with its mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpPiece {
    pub rect: Rect,
    pub alpha: Vec<f64>,
}

/// `h_ω = Σ_r Σ_ℓ ω_{rℓ} φ_r^ℓ` with `φ(x) = (δ/4) K((x - c)/(u/2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpFamily {
    pub delta: f64,
    pub pieces: Vec<BumpPiece>,
    /// One flag per mesh cell, pieces in order, cells in row-major order
    /// (first coordinate fastest).
    pub omega: Vec<bool>,
}

impl BumpFamily {
    pub fn new(delta: f64, pieces: Vec<BumpPiece>, omega: Vec<bool>) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidArgument(format!("delta {delta} outside (0, 1]")));
        }
        for pc in &pieces {
            if pc.alpha.len() != pc.rect.dim() {
                return Err(Error::DimensionMismatch { expected: pc.rect.dim(), got: pc.alpha.len() });
            }
        }
        let fam = Self { delta, pieces, omega };
        let cells = fam.cell_count();
        if fam.omega.len() != cells {
            return Err(Error::InvalidArgument(format!(
                "omega has {} entries, mesh has {cells} cells",
                fam.omega.len()
            )));
        }
        Ok(fam)
    }

    /// Per-axis cell counts `⌈len δ^{-1/α_j}⌉` for piece `r`.
    pub fn cells_per_axis(&self, r: usize) -> Vec<usize> {
        let pc = &self.pieces[r];
        (0..pc.rect.dim())
            .map(|j| ((pc.rect.len(j) * self.delta.powf(-1.0 / pc.alpha[j])).ceil() as usize).max(1))
            .collect()
    }

    /// Mesh sizes `u_{rj}`.
    pub fn mesh(&self, r: usize) -> Vec<f64> {
        let pc = &self.pieces[r];
        self.cells_per_axis(r)
            .iter()
            .enumerate()
            .map(|(j, &m)| pc.rect.len(j) / m as f64)
            .collect()
    }

    pub fn cell_count(&self) -> usize {
        (0..self.pieces.len()).map(|r| self.cells_per_axis(r).iter().product::<usize>()).sum()
    }

    /// Centre of cell `flat` of piece `r`.
    pub fn cell_center(&self, r: usize, flat: usize) -> Vec<f64> {
        let counts = self.cells_per_axis(r);
        let u = self.mesh(r);
        let lo = self.pieces[r].rect.lo();
        let mut rest = flat;
        counts
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let i = rest % m;
                rest /= m;
                lo[j] + (i as f64 + 0.5) * u[j]
            })
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut offset = 0;
        for (r, pc) in self.pieces.iter().enumerate() {
            let counts = self.cells_per_axis(r);
            let ncell: usize = counts.iter().product();
            if pc.rect.contains(x) {
                let u = self.mesh(r);
                let mut flat = 0;
                let mut stride = 1;
                let mut z = Vec::with_capacity(x.len());
                for j in 0..x.len() {
                    let rel = (x[j] - pc.rect.lo()[j]) / u[j];
                    let i = (rel.floor().max(0.0) as usize).min(counts[j] - 1);
                    flat += i * stride;
                    stride *= counts[j];
                    let c = pc.rect.lo()[j] + (i as f64 + 0.5) * u[j];
                    z.push((x[j] - c) / (u[j] / 2.0));
                }
                return if self.omega[offset + flat] {
                    self.delta / 4.0 * packing_kernel(&z)
                } else {
                    0.0
                };
            }
            offset += ncell;
        }
        0.0
    }
}

/// User-supplied piece function.
#[derive(Clone)]
pub struct CustomFn(pub Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl fmt::Debug for CustomFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomFn")
    }
}

/// Piece function `h_r`, evaluated at the active coordinates `x_S`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Piece {
    Constant { value: f64 },
    /// `Σ_j c_j x_j^{e_j}`.
    Power { coef: Vec<f64>, exponent: Vec<f64> },
    Bumps { family: BumpFamily },
    Sim,
    /// `a sqrt(x(1-x)) sin(c / (x + 0.05))` in the first active coordinate.
    Doppler { amplitude: f64, c: f64 },
    #[serde(skip)]
    Custom(CustomFn),
}

impl Piece {
    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Piece::Custom(CustomFn(Arc::new(f)))
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Piece::Constant { value } => *value,
            Piece::Power { coef, exponent } => {
                coef.iter().zip(exponent).zip(z).map(|((c, e), x)| c * x.powf(*e)).sum()
            }
            Piece::Bumps { family } => family.eval(z),
            Piece::Sim => sim_function(z),
            Piece::Doppler { amplitude, c } => {
                let x = z[0];
                amplitude * (x * (1.0 - x)).max(0.0).sqrt() * (c / (x + 0.05)).sin()
            }
            Piece::Custom(f) => (f.0)(z),
        }
    }
}

/// `(W_S^p h)(x) = h(x_S)`.
pub fn sparse_embed<F>(h: F, s: &[usize], p: usize) -> Result<impl Fn(&[f64]) -> f64>
where
    F: Fn(&[f64]) -> f64,
{
    if s.len() > p {
        return Err(Error::InvalidArgument(format!("|S| = {} exceeds p = {p}", s.len())));
    }
    if let Some(&j) = s.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidArgument(format!("coordinate {j} not in 0..{p}")));
    }
    let s = s.to_vec();
    Ok(move |x: &[f64]| {
        let z: Vec<f64> = s.iter().map(|&j| x[j]).collect();
        h(&z)
    })
}

/// `(𝔛, A, λ, S_0, p)` together with the piece functions.
///
/// `partition` lives on `[0,1]^d`; `alphas[r]` and `pieces[r]` follow the
/// order of `partition.leaves()`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiecewiseAnisoSpec {
    pub p: usize,
    pub s0: Vec<usize>,
    pub partition: TreePartition,
    pub alphas: Vec<Vec<f64>>,
    pub lambda: f64,
    pub pieces: Vec<Piece>,
}

impl PiecewiseAnisoSpec {
    pub fn new(
        p: usize,
        s0: Vec<usize>,
        partition: TreePartition,
        alphas: Vec<Vec<f64>>,
        lambda: f64,
        pieces: Vec<Piece>,
    ) -> Result<Self> {
        let spec = Self { p, s0, partition, alphas, lambda, pieces };
        spec.validate()?;
        Ok(spec)
    }

    /// Single piece on `[0,1]^d`.
    pub fn single(p: usize, s0: Vec<usize>, alpha: Vec<f64>, lambda: f64, piece: Piece) -> Result<Self> {
        let d = s0.len();
        Self::new(p, s0, TreePartition::unit(d), vec![alpha], lambda, vec![piece])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if d == 0 || d > self.p {
            return Err(Error::InvalidArgument(format!("need 1 <= |S0| <= p, got |S0| = {d}, p = {}", self.p)));
        }
        let mut seen = self.s0.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != d || seen.iter().any(|&j| j >= self.p) {
            return Err(Error::InvalidArgument(format!("S0 {:?} is not a subset of 0..{}", self.s0, self.p)));
        }
        if self.partition.dim() != d || self.partition.root_rect() != &Rect::unit(d) {
            return Err(Error::InvalidPartition("partition must live on [0,1]^d".into()));
        }
        let r = self.partition.num_leaves();
        if self.alphas.len() != r || self.pieces.len() != r {
            return Err(Error::InvalidArgument(format!(
                "{r} boxes but {} alpha vectors and {} pieces",
                self.alphas.len(),
                self.pieces.len()
            )));
        }
        let mut abar = None;
        for a in &self.alphas {
            if a.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: a.len() });
            }
            if a.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
                return Err(Error::InvalidArgument(format!("smoothness {a:?} outside (0, 1]")));
            }
            let h = harmonic_mean(a)?;
            match abar {
                None => abar = Some(h),
                Some(h0) if (h - h0).abs() > ABAR_TOL * h0.max(1.0) => {
                    return Err(Error::InvalidArgument(format!("harmonic means differ: {h0} vs {h}")));
                }
                _ => {}
            }
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.s0.len()
    }

    pub fn num_pieces(&self) -> usize {
        self.alphas.len()
    }

    pub fn abar(&self) -> f64 {
        harmonic_mean(&self.alphas[0]).expect("validated")
    }

    pub fn min_alpha(&self) -> f64 {
        self.alphas.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Active coordinates `x_S`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.s0.iter().map(|&j| x[j]).collect()
    }

    /// Index `r` of the piece containing `z ∈ [0,1]^d`.
    pub fn piece_index(&self, z: &[f64]) -> usize {
        let leaf = self.partition.locate(z);
        self.partition.leaves().iter().position(|&l| l == leaf).expect("leaf")
    }

    /// `h_0(z)` for `z ∈ [0,1]^d`.
    pub fn eval_local(&self, z: &[f64]) -> f64 {
        self.pieces[self.piece_index(z)].eval(z)
    }

    /// `f_0(x) = h_0(x_S)` for `x ∈ [0,1]^p`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_local(&self.project(x))
    }

    /// `𝔛*`: the partition lifted into `[0,1]^p` through `S_0`.
    pub fn extended_partition(&self) -> Result<TreePartition> {
        self.partition.embed(&self.s0, self.p)
    }

    /// `S(𝔛*)`.
    pub fn chopped_coords(&self) -> Result<Vec<usize>> {
        Ok(self.extended_partition()?.to_partition().chopped_coords())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    /// `sim_function` on `[0,1]^p` expressed as `2^p` orthant pieces with
    /// Lipschitz smoothness.
    pub fn sim(p: usize) -> Result<Self> {
        let mut tree = TreePartition::unit(p);
        for j in 0..p {
            for leaf in tree.leaves() {
                tree.split(leaf, j, 0.5)?;
            }
        }
        let r = tree.num_leaves();
        Self::new(p, (0..p).collect(), tree, vec![vec![1.0; p]; r], 1.0, vec![Piece::Sim; r])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderReport {
    pub max_ratio: f64,
    pub per_piece: Vec<f64>,
    pub holds: bool,
}

/// Largest observed `|h(x) - h(y)| / Σ_j |x_j - y_j|^{α_{rj}}` over random
/// pairs drawn inside each piece.
pub fn validate_holder(spec: &PiecewiseAnisoSpec, samples_per_box: usize, seed: u64) -> HolderReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rects = spec.partition.leaf_rects();
    let mut per_piece = Vec::with_capacity(rects.len());
    for (r, rect) in rects.iter().enumerate() {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..rect.dim()).map(|j| rect.lo()[j] + rng.random::<f64>() * rect.len(j)).collect()
        };
        let mut best: f64 = 0.0;
        for _ in 0..samples_per_box {
            let (x, y) = (draw(&mut rng), draw(&mut rng));
            if !(rect.contains(&x) && rect.contains(&y)) {
                continue;
            }
            let denom: f64 = x
                .iter()
                .zip(&y)
                .zip(&spec.alphas[r])
                .map(|((a, b), al)| (a - b).abs().powf(*al))
                .sum();
            if denom > 0.0 {
                let num = (spec.pieces[r].eval(&x) - spec.pieces[r].eval(&y)).abs();
                best = best.max(num / denom);
            }
        }
        per_piece.push(best);
    }
    let max_ratio = per_piece.iter().copied().fold(0.0, f64::max);
    HolderReport { max_ratio, holds: max_ratio <= spec.lambda * (1.0 + 1e-9), per_piece }
}

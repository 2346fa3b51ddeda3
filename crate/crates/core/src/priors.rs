//! Dirichlet-sparse tree priors, height and variance priors, exact log-prior
//! evaluation, and Monte-Carlo checks of the concentration lemmas.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::geometry::{NodeId, Rect, TreePartition};
use crate::splitnet::SplitNet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub trees: usize,
    pub nu: f64,
    pub zeta: f64,
    pub xi: f64,
    pub sigma_shape: f64,
    pub sigma_scale: f64,
    /// Nodes at this depth are never split.
    pub depth_guard: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { trees: 200, nu: 0.25, zeta: 1.0, xi: 2.0, sigma_shape: 3.0, sigma_scale: 1.0, depth_guard: 64 }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::InvalidArgument("need at least one tree".into()));
        }
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return Err(Error::InvalidArgument(format!("nu = {} outside (0, 1/2)", self.nu)));
        }
        if !(self.zeta > 0.0) || !(self.xi > 1.0) {
            return Err(Error::InvalidArgument("need zeta > 0 and xi > 1".into()));
        }
        if !(self.sigma_shape > 0.0 && self.sigma_scale > 0.0) {
            return Err(Error::InvalidArgument("inverse-gamma parameters must be positive".into()));
        }
        Ok(())
    }

    /// Dirichlet concentration `ζ / p^ξ`.
    pub fn dirichlet_shape(&self, p: usize) -> f64 {
        self.zeta / (p as f64).powf(self.xi)
    }

    /// Prior height variance `1/T`.
    pub fn height_variance(&self) -> f64 {
        1.0 / self.trees as f64
    }

    /// `ν^{ℓ+1}`.
    pub fn split_prob(&self, depth: usize) -> f64 {
        if depth >= self.depth_guard {
            0.0
        } else {
            self.nu.powi(depth as i32 + 1)
        }
    }
}

/// `ln G` for `G ~ Gamma(a, 1)`, stable for tiny `a` via
/// `G = G' U^{1/a}` with `G' ~ Gamma(a + 1, 1)`.
pub fn ln_gamma_draw<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a >= 1.0 {
        Gamma::new(a, 1.0).expect("shape").sample(rng).ln()
    } else {
        let g = Gamma::new(a + 1.0, 1.0).expect("shape").sample(rng);
        let u: f64 = rng.sample(Open01);
        g.ln() + u.ln() / a
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Dirichlet draw with arbitrary parameters, built in log space.
pub fn sample_dirichlet<R: Rng + ?Sized>(params: &[f64], rng: &mut R) -> Vec<f64> {
    if params.len() == 1 {
        return vec![1.0];
    }
    let lg: Vec<f64> = params.iter().map(|&a| ln_gamma_draw(a, rng)).collect();
    let lse = log_sum_exp(&lg);
    let mut eta: Vec<f64> = lg.iter().map(|x| (x - lse).exp()).collect();
    let s: f64 = eta.iter().sum();
    eta.iter_mut().for_each(|e| *e /= s);
    eta
}

/// `η ~ Dir(ζ/p^ξ, …, ζ/p^ξ)`.
pub fn sample_eta<R: Rng + ?Sized>(p: usize, config: &PriorConfig, rng: &mut R) -> Vec<f64> {
    sample_dirichlet(&vec![config.dirichlet_shape(p); p], rng)
}

/// Log density of `Dir(params)` at `eta`.
pub fn dirichlet_ln_pdf(params: &[f64], eta: &[f64]) -> f64 {
    let norm = ln_gamma(params.iter().sum()) - params.iter().map(|&a| ln_gamma(a)).sum::<f64>();
    norm + params.iter().zip(eta).map(|(a, e)| (a - 1.0) * e.ln()).sum::<f64>()
}

pub(crate) fn draw_coord<R: Rng + ?Sized>(eta: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * eta.iter().sum::<f64>();
    let mut acc = 0.0;
    for (j, &e) in eta.iter().enumerate() {
        acc += e;
        if u < acc {
            return j;
        }
    }
    eta.iter().rposition(|&e| e > 0.0).unwrap_or(0)
}

/// Top-down draw from the tree prior: a node at depth `ℓ` splits with
/// probability `ν^{ℓ+1}`, the coordinate is drawn from `η`, the split point is
/// uniform over the interior candidates. A drawn coordinate without
/// candidates makes the node terminal.
pub fn sample_tree<R: Rng + ?Sized>(eta: &[f64], config: &PriorConfig, net: &SplitNet, rng: &mut R) -> TreePartition {
    let mut tree = TreePartition::unit(net.dim());
    let mut stack = vec![TreePartition::ROOT];
    while let Some(id) = stack.pop() {
        let depth = tree.node(id).depth;
        if rng.random::<f64>() >= config.split_prob(depth) {
            continue;
        }
        let j = draw_coord(eta, rng);
        let cands = net.candidates_in(&tree.node(id).rect, j);
        if cands.is_empty() {
            continue;
        }
        let tau = cands[rng.random_range(0..cands.len())];
        let (l, r) = tree.split(id, j, tau).expect("interior candidate");
        stack.push(r);
        stack.push(l);
    }
    tree
}

/// `Σ_j η_j` over coordinates with at least one interior candidate.
fn feasible_mass(tree: &TreePartition, id: NodeId, eta: &[f64], net: &SplitNet) -> f64 {
    let rect = &tree.node(id).rect;
    (0..eta.len()).filter(|&j| net.count_in(rect, j) > 0).map(|j| eta[j]).sum()
}

/// Log-probability that a node with box `rect` at `depth` stays terminal.
pub(crate) fn leaf_log_term(rect: &Rect, depth: usize, eta: &[f64], config: &PriorConfig, net: &SplitNet) -> f64 {
    let q = config.split_prob(depth);
    if q == 0.0 {
        return 0.0;
    }
    let mass: f64 = (0..eta.len()).filter(|&j| net.count_in(rect, j) > 0).map(|j| eta[j]).sum();
    (-q * mass).ln_1p()
}

/// Exact log-probability of `tree` under [`sample_tree`].
///
/// Internal nodes contribute `ln ν^{ℓ+1} + ln η_j − ln b̃_j`; a leaf below the
/// depth guard contributes `ln(1 − ν^{ℓ+1} Σ_{j feasible} η_j)`.
pub fn tree_log_prior(tree: &TreePartition, eta: &[f64], config: &PriorConfig, net: &SplitNet) -> Result<f64> {
    if eta.len() != tree.dim() || net.dim() != tree.dim() {
        return Err(Error::DimensionMismatch { expected: tree.dim(), got: eta.len().min(net.dim()) });
    }
    let mut total = 0.0;
    for id in tree.internal_nodes() {
        let node = tree.node(id);
        let s = node.split.expect("internal");
        if !net.is_candidate(s.coord, s.tau) {
            return Err(Error::SplitNotInNet { coord: s.coord, tau: s.tau });
        }
        let b = net.count_in(&node.rect, s.coord) as f64;
        total += config.split_prob(node.depth).ln() + eta[s.coord].ln() - b.ln();
    }
    for id in tree.leaves() {
        let node = tree.node(id);
        total += leaf_log_term(&node.rect, node.depth, eta, config, net);
    }
    Ok(total)
}

/// Split counts per coordinate.
pub fn split_counts(tree: &TreePartition, p: usize) -> Vec<usize> {
    let mut c = vec![0; p];
    for id in tree.internal_nodes() {
        c[tree.node(id).split.expect("internal").coord] += 1;
    }
    c
}

/// Independent `N(0, 1/T)` heights, one vector per tree.
pub fn sample_heights<R: Rng + ?Sized>(leaf_counts: &[usize], config: &PriorConfig, rng: &mut R) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, config.height_variance().sqrt()).expect("sd");
    leaf_counts.iter().map(|&k| (0..k).map(|_| normal.sample(rng)).collect()).collect()
}

/// `σ² ~ InvGamma(shape, scale)`.
pub fn sample_sigma2<R: Rng + ?Sized>(config: &PriorConfig, rng: &mut R) -> f64 {
    config.sigma_scale / Gamma::new(config.sigma_shape, 1.0).expect("shape").sample(rng)
}

#[derive(Debug, Clone, Serialize)]
pub struct PriorConcentrationReport {
    pub leaves: usize,
    pub tree_log_prior: f64,
    /// Adds `T − 1` root-only trees.
    pub forest_log_prior: f64,
    /// `−(K̂ ln n + d ln p)`.
    pub unit_bound: f64,
    /// Smallest `C` with `forest_log_prior >= −C (K̂ ln n + d ln p)`.
    pub implied_constant: f64,
    /// `ln Π(T̂)` with `η` integrated out.
    pub marginal_log_prior: f64,
    pub marginal_std_err: f64,
}

/// Evaluates the tree prior of `that` at `eta_star` and, by importance
/// sampling from `Dir(a + split counts)`, with `η` integrated out.
#[allow(clippy::too_many_arguments)]
pub fn check_prior_concentration(
    that: &TreePartition,
    n: f64,
    d: usize,
    config: &PriorConfig,
    eta_star: &[f64],
    net: &SplitNet,
    samples: usize,
    seed: u64,
) -> Result<PriorConcentrationReport> {
    let p = that.dim();
    let cond = tree_log_prior(that, eta_star, config, net)?;
    let forest = cond + (config.trees as f64 - 1.0) * (-config.nu).ln_1p();
    let leaves = that.num_leaves();
    let scale = leaves as f64 * n.ln() + d as f64 * (p as f64).ln();

    // Π(T̂ | η) = A Π_j η_j^{c_j} L(η) where L collects the leaf terms, so with
    // q = Dir(a + c) the weight is A L(η) B(a + c) / B(a).
    let a = config.dirichlet_shape(p);
    let counts = split_counts(that, p);
    let post: Vec<f64> = counts.iter().map(|&c| a + c as f64).collect();
    let ln_b = |v: &[f64]| v.iter().map(|&x| ln_gamma(x)).sum::<f64>() - ln_gamma(v.iter().sum());
    let ln_a: f64 = that
        .internal_nodes()
        .iter()
        .map(|&id| {
            let node = that.node(id);
            let s = node.split.expect("internal");
            config.split_prob(node.depth).ln() - (net.count_in(&node.rect, s.coord) as f64).ln()
        })
        .sum();
    let ln_ratio = if p == 1 { 0.0 } else { ln_b(&post) - ln_b(&vec![a; p]) };
    let leaf_ids = that.leaves();
    let ln_leaf = |eta: &[f64]| -> f64 {
        leaf_ids
            .iter()
            .map(|&id| {
                let q = config.split_prob(that.node(id).depth);
                if q > 0.0 {
                    (-q * feasible_mass(that, id, eta, net)).ln_1p()
                } else {
                    0.0
                }
            })
            .sum()
    };
    let (est, se) = if p == 1 {
        (ln_leaf(&[1.0]), 0.0)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..samples.max(1)).map(|_| ln_leaf(&sample_dirichlet(&post, &mut rng))).collect();
        log_mean_exp_with_se(&vals)
    };
    Ok(PriorConcentrationReport {
        leaves,
        tree_log_prior: cond,
        forest_log_prior: forest,
        unit_bound: -scale,
        implied_constant: -forest / scale,
        marginal_log_prior: ln_a + ln_ratio + est,
        marginal_std_err: se,
    })
}

/// `ln mean(exp(v))` and its delta-method standard error.
fn log_mean_exp_with_se(v: &[f64]) -> (f64, f64) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (m + mean.ln(), (var / n).sqrt() / mean)
}

/// `P(a, x)` given `ln x`, accurate when `x^a` underflows in linear space.
fn lower_reg_gamma_from_ln(a: f64, ln_x: f64) -> f64 {
    if ln_x == f64::INFINITY {
        return 1.0;
    }
    if ln_x == f64::NEG_INFINITY {
        return 0.0;
    }
    if ln_x < -30.0 {
        // Leading series term; the next is smaller by a factor ~ a x / (a + 1).
        (a * ln_x - ln_gamma(a + 1.0)).exp()
    } else {
        gamma_lr(a, ln_x.exp())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloBound {
    pub estimate: f64,
    pub std_err: f64,
    /// Plain indicator hits among the trials.
    pub hits: u64,
    /// Implied constant at the point estimate.
    pub constant: f64,
    /// Implied constants at `estimate ± 2 SE` (ordered low, high).
    pub constant_interval: (f64, f64),
    /// Set when no trial hit the event and only a one-sided bound is known.
    pub one_sided: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DirichletLemmaReport {
    pub p: usize,
    pub s: usize,
    pub eps: f64,
    pub trials: usize,
    /// `P(‖η − η*‖₁ <= ε)`, estimated by conditioning on all but `G_1`.
    pub near: MonteCarloBound,
    /// `P(min_{|S|=s} Σ_{j∉S} η_j >= ε)`.
    pub tail: MonteCarloBound,
}

/// Monte-Carlo check of both Dirichlet concentration bounds with `η*`
/// uniform on the first `s` coordinates.
///
/// The lower-bound probability is tiny for sparse Dirichlet draws, so it is
/// estimated by Rao-Blackwellization: given the other gamma variables, the
/// distance is convex in `η_1`, the event is an interval in `G_1`, and its
/// probability is a regularized incomplete gamma difference.
pub fn check_dirichlet_lemma(
    p: usize,
    s: usize,
    eps: f64,
    config: &PriorConfig,
    trials: usize,
    seed: u64,
) -> Result<DirichletLemmaReport> {
    if s == 0 || s > p {
        return Err(Error::InvalidArgument(format!("need 1 <= s <= p, got s = {s}, p = {p}")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least two trials".into()));
    }
    let a = config.dirichlet_shape(p);
    const CHUNK: usize = 8192;
    let chunks = trials.div_ceil(CHUNK);
    let parts: Vec<[f64; 5]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(trials - c * CHUNK);
            let mut lg = vec![0.0; p];
            let mut acc = [0.0; 5];
            for _ in 0..len {
                lg.iter_mut().for_each(|x| *x = ln_gamma_draw(a, &mut rng));
                let pr = near_probability(&lg, s, eps, a);
                acc[0] += pr;
                acc[1] += pr * pr;
                let eta = normalize_log(&lg);
                if l1_to_uniform(&eta, s) <= eps {
                    acc[2] += 1.0;
                }
                if tail_mass(&lg, s) >= eps {
                    acc[3] += 1.0;
                }
            }
            acc[4] = len as f64;
            acc
        })
        .collect();
    let tot = parts.iter().fold([0.0; 5], |mut t, a| {
        for i in 0..5 {
            t[i] += a[i];
        }
        t
    });
    let n = trials as f64;
    let p1 = tot[0] / n;
    let se1 = ((tot[1] / n - p1 * p1).max(0.0) / (n - 1.0)).sqrt();
    let lnp = (p as f64).ln();
    let xi = config.xi;
    // Lower bound holds for C >= -ln P / (ξ s ln(p/ε)).
    let c_near = |pr: f64| -pr.ln() / (xi * s as f64 * (p as f64 / eps).ln());
    let near = bound_report(p1, se1, tot[2] as u64, c_near);

    let hits = tot[3];
    let p2 = hits / n;
    let se2 = (p2 * (1.0 - p2) / n).sqrt();
    // Upper bound holds for C <= (−ln P − ln ε) / ((ξ − 1) s ln p).
    let c_tail = |pr: f64| (-pr.ln() - eps.ln()) / ((xi - 1.0) * s as f64 * lnp);
    let tail = if hits == 0.0 {
        // Rule of three: P < 3/n with ~95% confidence.
        let ub = 3.0 / n;
        MonteCarloBound {
            estimate: 0.0,
            std_err: 0.0,
            hits: 0,
            constant: c_tail(ub),
            constant_interval: (c_tail(ub), f64::INFINITY),
            one_sided: true,
        }
    } else {
        bound_report(p2, se2, hits as u64, c_tail)
    };
    Ok(DirichletLemmaReport { p, s, eps, trials, near, tail })
}

fn bound_report(est: f64, se: f64, hits: u64, c: impl Fn(f64) -> f64) -> MonteCarloBound {
    let lo = (est - 2.0 * se).max(f64::MIN_POSITIVE);
    let hi = (est + 2.0 * se).min(1.0);
    let (a, b) = (c(lo), c(hi));
    MonteCarloBound {
        estimate: est,
        std_err: se,
        hits,
        constant: c(est),
        constant_interval: (a.min(b), a.max(b)),
        one_sided: est == 0.0,
    }
}

fn normalize_log(lg: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(lg);
    lg.iter().map(|x| (x - lse).exp()).collect()
}

fn l1_to_uniform(eta: &[f64], s: usize) -> f64 {
    let t = 1.0 / s as f64;
    eta.iter().enumerate().map(|(j, &e)| if j < s { (e - t).abs() } else { e }).sum()
}

/// Mass outside the `s` largest coordinates.
fn tail_mass(lg: &[f64], s: usize) -> f64 {
    let mut sorted = lg.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let lse_all = log_sum_exp(&sorted);
    if sorted.len() == s {
        return 0.0;
    }
    (log_sum_exp(&sorted[s..]) - lse_all).exp()
}

/// `P(‖η − η*‖₁ <= ε | G_2, …, G_p)`.
fn near_probability(lg: &[f64], s: usize, eps: f64, a: f64) -> f64 {
    let ln_w = log_sum_exp(&lg[1..]);
    let g: Vec<f64> = lg[1..].iter().map(|x| (x - ln_w).exp()).collect();
    let t = 1.0 / s as f64;
    // With u = η_1, η_j = (1 − u) g_j for j >= 2.
    let dist = |u: f64| -> f64 {
        let mut d = (u - t).abs();
        for (k, &gj) in g.iter().enumerate() {
            let e = (1.0 - u) * gj;
            d += if k + 1 < s { (e - t).abs() } else { e };
        }
        d
    };
    let mut knots = vec![0.0, 1.0, t];
    for &gj in g.iter().take(s.saturating_sub(1)) {
        if gj > 0.0 {
            let u = 1.0 - t / gj;
            if (0.0..=1.0).contains(&u) {
                knots.push(u);
            }
        }
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let vals: Vec<f64> = knots.iter().map(|&u| dist(u)).collect();
    let (imin, &dmin) = vals.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("knots");
    if dmin > eps {
        return 0.0;
    }
    // dist is convex and piecewise linear between knots: walk outwards.
    let mut lo = knots[imin];
    for i in (0..imin).rev() {
        if vals[i] <= eps {
            lo = knots[i];
        } else {
            lo = knots[i] + (knots[i + 1] - knots[i]) * (vals[i] - eps) / (vals[i] - vals[i + 1]);
            break;
        }
    }
    let mut hi = knots[imin];
    for i in imin + 1..knots.len() {
        if vals[i] <= eps {
            hi = knots[i];
        } else {
            hi = knots[i - 1] + (knots[i] - knots[i - 1]) * (eps - vals[i - 1]) / (vals[i] - vals[i - 1]);
            break;
        }
    }
    // u = G_1 / (G_1 + W)  <=>  G_1 = W u / (1 − u).
    let ln_t = |u: f64| {
        if u <= 0.0 {
            f64::NEG_INFINITY
        } else if u >= 1.0 {
            f64::INFINITY
        } else {
            u.ln() - (-u).ln_1p() + ln_w
        }
    };
    (lower_reg_gamma_from_ln(a, ln_t(hi)) - lower_reg_gamma_from_ln(a, ln_t(lo))).max(0.0)
}

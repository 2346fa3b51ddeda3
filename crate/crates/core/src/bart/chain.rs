use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::ensemble::{midpoint_grid, Ensemble};
use super::moves::{apply_move, draw_move, move_log_ratio, Move, MoveKind};
use super::truncated::{ln_normal_interval, sample_truncated_gamma, sample_truncated_normal};
use super::{logistic, Data, EtaMode, Fault, McmcConfig, ModelKind, ModelSpec, MoveStats, Posterior};
use crate::error::{Error, Result};
use crate::geometry::{NodeId, Rect};
use crate::priors::{leaf_log_term, sample_dirichlet, split_counts, PriorConfig};
use crate::splitnet::SplitNet;

/// Adaptation window for the random-walk step, in sweeps.
const ADAPT_WINDOW: usize = 50;
const TARGET_ACCEPT: (f64, f64) = (0.30, 0.45);
const MAX_QUAD_POINTS: usize = 1 << 20;
const SIGMA_TRIES: usize = 100;

/// The sampled quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainState {
    pub ensemble: Ensemble,
    pub sigma2: f64,
    pub eta: Vec<f64>,
    pub iteration: usize,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// One Markov chain. Fits at the data (and, for density models, at the
/// quadrature points) are cached per tree leaf and updated incrementally.
pub struct Chain<'a> {
    model: ModelSpec,
    net: &'a SplitNet,
    prior: PriorConfig,
    cfg: McmcConfig,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    quad: Vec<Vec<f64>>,
    quad_w: f64,
    resolution: usize,
    state: ChainState,
    leaf_of: Vec<Vec<NodeId>>,
    qleaf_of: Vec<Vec<NodeId>>,
    fit: Vec<f64>,
    qfit: Vec<f64>,
    base: Vec<f64>,
    qbase: Vec<f64>,
    rng: ChaCha8Rng,
    step: f64,
    window: (u64, u64),
    stats: MoveStats,
}

impl<'a> Chain<'a> {
    /// Starts from root-only trees. Regression heights start at `ȳ/T`.
    pub fn new(data: &Data, model: &ModelSpec, net: &'a SplitNet, prior: &PriorConfig, cfg: &McmcConfig) -> Result<Self> {
        let p = net.dim();
        let t = prior.trees;
        let (h0, s0) = if model.kind.is_regression() {
            let n = data.y.len().max(1) as f64;
            let mean = data.y.iter().sum::<f64>() / n;
            let var = data.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            let mut h = mean / t as f64;
            let mut s = if var > 0.0 { var } else { 1.0 };
            if let Some(tr) = model.truncation {
                h = h.clamp(-tr.c1, tr.c1);
                s = s.clamp(1.0 / tr.c2, tr.c2);
            }
            (h, model.sigma2.unwrap_or(s))
        } else {
            (0.0, 1.0)
        };
        let state = ChainState {
            ensemble: Ensemble::roots(t, p, h0),
            sigma2: s0,
            eta: vec![1.0 / p as f64; p],
            iteration: 0,
        };
        Self::from_state(data, model, net, prior, cfg, state)
    }

    pub fn from_state(
        data: &Data,
        model: &ModelSpec,
        net: &'a SplitNet,
        prior: &PriorConfig,
        cfg: &McmcConfig,
        state: ChainState,
    ) -> Result<Self> {
        model.validate()?;
        prior.validate()?;
        cfg.validate()?;
        let p = net.dim();
        data.validate(model.kind, p)?;
        if net.size() == 0 {
            return Err(Error::InvalidArgument("empty split-net".into()));
        }
        if state.ensemble.len() != prior.trees || state.ensemble.dim() != p || state.eta.len() != p {
            return Err(Error::InvalidArgument("initial state does not match prior or net".into()));
        }
        let resolution = model.resolution(net);
        let (quad, quad_w) = if model.kind == ModelKind::Density && prior.trees > 1 {
            let cells = (resolution as f64).powi(p as i32);
            if cells > MAX_QUAD_POINTS as f64 {
                return Err(Error::InvalidArgument(format!("{cells} quadrature cells exceed {MAX_QUAD_POINTS}")));
            }
            midpoint_grid(p, resolution)
        } else {
            (Vec::new(), 0.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cfg.stream);
        let n = data.x.len();
        let nq = quad.len();
        let mut chain = Self {
            model: *model,
            net,
            prior: *prior,
            cfg: *cfg,
            x: data.x.clone(),
            y: data.y.clone(),
            quad,
            quad_w,
            resolution,
            state,
            leaf_of: Vec::new(),
            qleaf_of: Vec::new(),
            fit: vec![0.0; n],
            qfit: vec![0.0; nq],
            base: vec![0.0; n],
            qbase: vec![0.0; nq],
            rng,
            step: cfg.initial_step,
            window: (0, 0),
            stats: MoveStats::default(),
        };
        chain.rebuild_cache();
        Ok(chain)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn stats(&self) -> &MoveStats {
        &self.stats
    }

    pub fn height_step(&self) -> f64 {
        self.step
    }

    /// Cached `f` at the training covariates.
    pub fn fitted(&self) -> &[f64] {
        &self.fit
    }

    /// Replaces the responses, keeping the covariates.
    pub fn set_response(&mut self, y: Vec<f64>) -> Result<()> {
        if y.len() != self.x.len() {
            return Err(Error::DimensionMismatch { expected: self.x.len(), got: y.len() });
        }
        if self.model.kind == ModelKind::Classification {
            if let Some(&bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidLabel(bad));
            }
        }
        self.y = y;
        Ok(())
    }

    fn rebuild_cache(&mut self) {
        let ens = &self.state.ensemble;
        self.leaf_of = ens.trees.iter().map(|t| self.x.iter().map(|x| t.locate(x)).collect()).collect();
        self.qleaf_of = ens.trees.iter().map(|t| self.quad.iter().map(|x| t.locate(x)).collect()).collect();
        let ens = &mut self.state.ensemble;
        for (tree, hs) in ens.trees.iter().zip(ens.heights.iter_mut()) {
            if hs.len() < tree.capacity() {
                hs.resize(tree.capacity(), 0.0);
            }
        }
        let ens = &self.state.ensemble;
        self.fit = (0..self.x.len()).map(|i| (0..ens.len()).map(|t| ens.heights[t][self.leaf_of[t][i]]).sum()).collect();
        self.qfit = (0..self.quad.len()).map(|q| (0..ens.len()).map(|t| ens.heights[t][self.qleaf_of[t][q]]).sum()).collect();
    }

    fn check_cache(&mut self) {
        let ens = &self.state.ensemble;
        let mut drift: f64 = 0.0;
        for (x, f) in self.x.iter().zip(&self.fit) {
            drift = drift.max((ens.eval(x) - f).abs());
        }
        for (x, f) in self.quad.iter().zip(&self.qfit) {
            drift = drift.max((ens.eval(x) - f).abs());
        }
        self.stats.max_fit_drift = self.stats.max_fit_drift.max(drift);
        self.rebuild_cache();
    }

    fn tau2(&self) -> f64 {
        self.prior.height_variance()
    }

    fn gaussian(&self) -> bool {
        self.model.kind.is_regression()
    }

    /// One full sweep: every tree, then `σ²`, then `η`.
    pub fn sweep(&mut self) {
        for t in 0..self.prior.trees {
            self.tree_step(t);
        }
        if self.gaussian() {
            self.sigma_step();
        }
        if self.cfg.eta == EtaMode::Dirichlet && self.net.dim() > 1 {
            self.eta_step();
        }
        self.state.iteration += 1;
        let it = self.state.iteration;
        if it <= self.cfg.burnin && it % ADAPT_WINDOW == 0 && !self.gaussian() {
            let (prop, acc) = self.window;
            if prop > 0 {
                let rate = acc as f64 / prop as f64;
                if rate < TARGET_ACCEPT.0 {
                    self.step *= 0.8;
                } else if rate > TARGET_ACCEPT.1 {
                    self.step *= 1.25;
                }
            }
            self.window = (0, 0);
        }
        if self.cfg.check_every > 0 && it % self.cfg.check_every == 0 {
            self.check_cache();
        }
    }

    /// Burn-in, then `iterations` sweeps keeping every `thin`-th.
    pub fn run(&mut self, predict_at: &[Vec<f64>]) -> Result<Posterior> {
        for _ in 0..self.cfg.burnin {
            self.sweep();
        }
        let mut post = Posterior {
            kind: self.model.kind,
            sigma2: Vec::new(),
            leaves: Vec::new(),
            eta: Vec::new(),
            train_mean: vec![0.0; self.x.len()],
            predictions: Vec::new(),
            log_normalizer: Vec::new(),
            ensembles: Vec::new(),
            stats: MoveStats::default(),
            height_step: self.step,
        };
        let mut kept = 0.0;
        for k in 0..self.cfg.iterations {
            self.sweep();
            if (k + 1) % self.cfg.thin != 0 {
                continue;
            }
            kept += 1.0;
            for (m, f) in post.train_mean.iter_mut().zip(&self.fit) {
                *m += (f - *m) / kept;
            }
            let ens = &self.state.ensemble;
            post.sigma2.push(self.state.sigma2);
            post.leaves.push(ens.total_leaves());
            post.eta.push(self.state.eta.clone());
            let mut values: Vec<f64> = predict_at.iter().map(|x| ens.eval(x)).collect();
            match self.model.kind {
                ModelKind::Classification => values.iter_mut().for_each(|v| *v = logistic(*v)),
                ModelKind::Density => {
                    let lz = self.log_normalizer();
                    post.log_normalizer.push(lz);
                    values.iter_mut().for_each(|v| *v = (*v - lz).exp());
                }
                _ => {}
            }
            post.predictions.push(values);
            if self.cfg.keep_ensembles {
                post.ensembles.push(ens.clone());
            }
        }
        self.check_cache();
        post.stats = self.stats;
        Ok(post)
    }

    /// `ln ∫ exp(f)` under the chain's quadrature.
    pub fn log_normalizer(&self) -> f64 {
        if self.prior.trees == 1 {
            self.state.ensemble.normalizer_exact().ln()
        } else {
            (self.qfit.iter().map(|f| self.quad_w * f.exp()).sum::<f64>()).ln()
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    // ---- per-tree update -------------------------------------------------

    fn tree_step(&mut self, t: usize) {
        {
            let hs = &self.state.ensemble.heights[t];
            for (i, b) in self.base.iter_mut().enumerate() {
                *b = self.fit[i] - hs[self.leaf_of[t][i]];
            }
            for (q, b) in self.qbase.iter_mut().enumerate() {
                *b = self.qfit[q] - hs[self.qleaf_of[t][q]];
            }
        }
        if self.cfg.topology {
            self.topology_step(t);
        }
        if self.gaussian() {
            self.gaussian_heights(t);
        } else {
            self.rw_heights(t);
        }
        let hs = &self.state.ensemble.heights[t];
        for (i, f) in self.fit.iter_mut().enumerate() {
            *f = self.base[i] + hs[self.leaf_of[t][i]];
        }
        for (q, f) in self.qfit.iter_mut().enumerate() {
            *f = self.qbase[q] + hs[self.qleaf_of[t][q]];
        }
    }

    fn members(ids: &[NodeId], nodes: &[NodeId]) -> Vec<usize> {
        (0..ids.len()).filter(|&i| nodes.contains(&ids[i])).collect()
    }

    fn split_members(points: &[Vec<f64>], members: &[usize], coord: usize, tau: f64) -> (Vec<usize>, Vec<usize>) {
        members.iter().partition(|&&i| points[i][coord] <= tau)
    }

    fn topology_step(&mut self, t: usize) {
        let tree = &self.state.ensemble.trees[t];
        let (kind, mv) = draw_move(tree, &self.state.eta, &self.prior, self.net, &self.cfg.move_weights, &mut self.rng);
        let Some(mv) = mv else {
            self.counter(kind).record(false);
            return;
        };
        let log_q = move_log_ratio(tree, &mv, &self.state.eta, &self.prior, self.net, &self.cfg.move_weights);

        // Old and new leaves touched by the move, with their members.
        let lo = &self.leaf_of[t];
        let qlo = &self.qleaf_of[t];
        let (old_ids, new_rects, rule): (Vec<NodeId>, Vec<Rect>, Option<(usize, f64)>) = match mv {
            Move::Grow { leaf, coord, tau } => {
                let (l, r) = tree.node(leaf).rect.split(coord, tau).expect("valid grow");
                (vec![leaf], vec![l, r], Some((coord, tau)))
            }
            Move::Prune { node } => {
                let s = tree.node(node).split.expect("internal");
                (vec![s.left, s.right], vec![tree.node(node).rect.clone()], None)
            }
            Move::Change { node, coord, tau } => {
                let s = tree.node(node).split.expect("internal");
                let (l, r) = tree.node(node).rect.split(coord, tau).expect("valid change");
                (vec![s.left, s.right], vec![l, r], Some((coord, tau)))
            }
        };
        let old_obs: Vec<Vec<usize>> = old_ids.iter().map(|&id| Self::members(lo, &[id])).collect();
        let old_q: Vec<Vec<usize>> = old_ids.iter().map(|&id| Self::members(qlo, &[id])).collect();
        let all_obs: Vec<usize> = Self::members(lo, &old_ids);
        let all_q: Vec<usize> = Self::members(qlo, &old_ids);
        let (new_obs, new_q): (Vec<Vec<usize>>, Vec<Vec<usize>>) = match rule {
            Some((c, tau)) => {
                let (a, b) = Self::split_members(&self.x, &all_obs, c, tau);
                let (qa, qb) = Self::split_members(&self.quad, &all_q, c, tau);
                (vec![a, b], vec![qa, qb])
            }
            None => (vec![all_obs], vec![all_q]),
        };
        let old_rects: Vec<Rect> = old_ids.iter().map(|&id| tree.node(id).rect.clone()).collect();
        let old_h: Vec<f64> = old_ids.iter().map(|&id| self.state.ensemble.heights[t][id]).collect();

        let (log_lik, new_h) = if !self.cfg.likelihood {
            (0.0, self.prior_heights(new_rects.len()))
        } else if self.gaussian() {
            let m = |obs: &Vec<usize>| self.gauss_marginal(obs);
            (new_obs.iter().map(m).sum::<f64>() - old_obs.iter().map(m).sum::<f64>(), Vec::new())
        } else {
            let new_h = self.prior_heights(new_rects.len());
            let d = self.explicit_delta(t, (&old_obs, &old_q, &old_rects, &old_h), (&new_obs, &new_q, &new_rects, &new_h));
            (d, new_h)
        };
        let accept = self.rng.random::<f64>().ln() < log_q + log_lik;
        self.counter(kind).record(accept);
        if !accept {
            return;
        }

        let tree = &mut self.state.ensemble.trees[t];
        apply_move(tree, &mv);
        let new_ids: Vec<NodeId> = match mv {
            Move::Grow { leaf, .. } | Move::Change { node: leaf, .. } => {
                let s = tree.node(leaf).split.expect("internal");
                vec![s.left, s.right]
            }
            Move::Prune { node } => vec![node],
        };
        let cap = tree.capacity();
        if self.state.ensemble.heights[t].len() < cap {
            self.state.ensemble.heights[t].resize(cap, 0.0);
        }
        for (k, &id) in new_ids.iter().enumerate() {
            for &i in &new_obs[k] {
                self.leaf_of[t][i] = id;
            }
            for &q in &new_q[k] {
                self.qleaf_of[t][q] = id;
            }
            if let Some(&h) = new_h.get(k) {
                self.state.ensemble.heights[t][id] = h;
            }
        }
    }

    fn counter(&mut self, kind: MoveKind) -> &mut super::Counter {
        match kind {
            MoveKind::Grow => &mut self.stats.grow,
            MoveKind::Prune => &mut self.stats.prune,
            MoveKind::Change => &mut self.stats.change,
        }
    }

    fn prior_heights(&mut self, k: usize) -> Vec<f64> {
        (0..k).map(|_| self.draw_height(0.0, self.tau2())).collect()
    }

    /// Normal draw, restricted to `[−c1, c1]` under truncation.
    fn draw_height(&mut self, mean: f64, var: f64) -> f64 {
        let sd = var.sqrt();
        match self.model.truncation.filter(|_| self.model.kind == ModelKind::RegressionRandom) {
            Some(tr) => sample_truncated_normal(mean, sd, -tr.c1, tr.c1, &mut self.rng),
            None => {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                mean + sd * z
            }
        }
    }

    fn residual(&self, i: usize) -> f64 {
        self.y[i] - self.base[i]
    }

    /// Conjugate posterior `(mean, var)` of a leaf height given its members.
    fn leaf_posterior(&self, obs: &[usize]) -> (f64, f64) {
        let (s2, t2) = (self.state.sigma2, self.tau2());
        let n = obs.len() as f64;
        let s: f64 = obs.iter().map(|&i| self.residual(i)).sum();
        let denom = s2 + n * t2;
        (t2 * s / denom, s2 * t2 / denom)
    }

    /// Log marginal likelihood of one leaf with its height integrated out,
    /// up to factors shared by every tree topology.
    fn gauss_marginal(&self, obs: &[usize]) -> f64 {
        let (s2, t2) = (self.state.sigma2, self.tau2());
        let n = obs.len() as f64;
        let s: f64 = obs.iter().map(|&i| self.residual(i)).sum();
        let mut v = -0.5 * (n * t2 / s2).ln_1p() + t2 * s * s / (2.0 * s2 * (s2 + n * t2));
        if let Some(tr) = self.model.truncation.filter(|_| self.model.kind == ModelKind::RegressionRandom) {
            let (mu, var) = self.leaf_posterior(obs);
            v += ln_normal_interval(mu, var.sqrt(), -tr.c1, tr.c1) - ln_normal_interval(0.0, t2.sqrt(), -tr.c1, tr.c1);
        }
        v
    }

    fn gaussian_heights(&mut self, t: usize) {
        let leaves = self.state.ensemble.trees[t].leaves();
        let buckets = self.buckets(t, &leaves);
        for (k, &id) in leaves.iter().enumerate() {
            let (mean, var) = if self.cfg.likelihood { self.leaf_posterior(&buckets[k]) } else { (0.0, self.tau2()) };
            let h = self.draw_height(mean, var);
            self.state.ensemble.heights[t][id] = h;
        }
    }

    /// Member indices per leaf of tree `t`.
    fn buckets(&self, t: usize, leaves: &[NodeId]) -> Vec<Vec<usize>> {
        let cap = self.state.ensemble.trees[t].capacity();
        let mut slot = vec![usize::MAX; cap];
        for (k, &id) in leaves.iter().enumerate() {
            slot[id] = k;
        }
        let mut out = vec![Vec::new(); leaves.len()];
        for (i, &id) in self.leaf_of[t].iter().enumerate() {
            out[slot[id]].push(i);
        }
        out
    }

    fn qbuckets(&self, t: usize, leaves: &[NodeId]) -> Vec<Vec<usize>> {
        let cap = self.state.ensemble.trees[t].capacity();
        let mut slot = vec![usize::MAX; cap];
        for (k, &id) in leaves.iter().enumerate() {
            slot[id] = k;
        }
        let mut out = vec![Vec::new(); leaves.len()];
        for (q, &id) in self.qleaf_of[t].iter().enumerate() {
            out[slot[id]].push(q);
        }
        out
    }

    /// Classification log-likelihood of `obs` at height `h`.
    fn class_ll(&self, obs: &[usize], h: f64) -> f64 {
        obs.iter()
            .map(|&i| {
                let z = self.base[i] + h;
                self.y[i] * z - softplus(z)
            })
            .sum()
    }

    /// `∫_leaf exp(f_{−t})`: the cell volume when there is a single tree,
    /// otherwise the quadrature sum over the leaf's points.
    fn leaf_mass(&self, quad: &[usize], rect: &Rect) -> f64 {
        if self.prior.trees == 1 {
            rect.volume()
        } else {
            quad.iter().map(|&q| self.quad_w * self.qbase[q].exp()).sum()
        }
    }

    fn tree_normalizer(&self, t: usize) -> f64 {
        let ens = &self.state.ensemble;
        if self.prior.trees == 1 {
            ens.normalizer_exact()
        } else {
            let hs = &ens.heights[t];
            self.qbase.iter().zip(&self.qleaf_of[t]).map(|(b, &id)| self.quad_w * (b + hs[id]).exp()).sum()
        }
    }

    /// Log-likelihood change for non-Gaussian models when the leaves in `old`
    /// are replaced by `new`, each given as (members, quadrature members,
    /// boxes, heights).
    #[allow(clippy::type_complexity)]
    fn explicit_delta(
        &self,
        t: usize,
        old: (&[Vec<usize>], &[Vec<usize>], &[Rect], &[f64]),
        new: (&[Vec<usize>], &[Vec<usize>], &[Rect], &[f64]),
    ) -> f64 {
        match self.model.kind {
            ModelKind::Classification => {
                let side = |(obs, _, _, hs): (&[Vec<usize>], &[Vec<usize>], &[Rect], &[f64])| -> f64 {
                    obs.iter().zip(hs).map(|(o, &h)| self.class_ll(o, h)).sum()
                };
                side(new) - side(old)
            }
            ModelKind::Density => {
                let z = self.tree_normalizer(t);
                let lin = |(obs, _, _, hs): (&[Vec<usize>], &[Vec<usize>], &[Rect], &[f64])| -> f64 {
                    obs.iter().zip(hs).map(|(o, &h)| o.len() as f64 * h).sum()
                };
                let mass = |(_, qs, rects, hs): (&[Vec<usize>], &[Vec<usize>], &[Rect], &[f64])| -> f64 {
                    qs.iter().zip(rects).zip(hs).map(|((q, r), &h)| h.exp() * self.leaf_mass(q, r)).sum()
                };
                let z_new = z - mass(old) + mass(new);
                lin(new) - lin(old) - self.x.len() as f64 * (z_new.max(f64::MIN_POSITIVE).ln() - z.ln())
            }
            _ => unreachable!("explicit heights only for non-Gaussian models"),
        }
    }

    fn rw_heights(&mut self, t: usize) {
        let leaves = self.state.ensemble.trees[t].leaves();
        let obs = self.buckets(t, &leaves);
        let qs = self.qbuckets(t, &leaves);
        let t2 = self.tau2();
        let mut z = if self.model.kind == ModelKind::Density { self.tree_normalizer(t) } else { 0.0 };
        for (k, &id) in leaves.iter().enumerate() {
            let h = self.state.ensemble.heights[t][id];
            let eps: f64 = StandardNormal.sample(&mut self.rng);
            let h2 = h + self.step * eps;
            let mut log_r = -(h2 * h2 - h * h) / (2.0 * t2);
            let mut z2 = z;
            if self.cfg.likelihood {
                log_r += match self.model.kind {
                    ModelKind::Classification => self.class_ll(&obs[k], h2) - self.class_ll(&obs[k], h),
                    ModelKind::Density => {
                        let rect = &self.state.ensemble.trees[t].node(id).rect;
                        let m = self.leaf_mass(&qs[k], rect);
                        z2 = z + m * (h2.exp() - h.exp());
                        obs[k].len() as f64 * (h2 - h) - self.x.len() as f64 * (z2.ln() - z.ln())
                    }
                    _ => unreachable!(),
                };
            }
            let accept = self.rng.random::<f64>().ln() < log_r;
            self.stats.height.record(accept);
            self.window.0 += 1;
            if accept {
                self.window.1 += 1;
                self.state.ensemble.heights[t][id] = h2;
                z = z2;
            }
        }
    }

    // ---- global updates --------------------------------------------------

    fn sigma_step(&mut self) {
        if self.model.sigma2.is_some() {
            return;
        }
        let (mut shape, mut scale) = (self.prior.sigma_shape, self.prior.sigma_scale);
        if self.cfg.likelihood {
            let ssr: f64 = self.y.iter().zip(&self.fit).map(|(y, f)| (y - f) * (y - f)).sum();
            shape += 0.5 * self.y.len() as f64;
            scale += match self.cfg.fault {
                Some(Fault::SigmaScale) => 0.25 * ssr,
                None => 0.5 * ssr,
            };
        }
        // σ² ~ IG(shape, scale) ⇔ 1/σ² ~ Gamma(shape, rate = scale).
        let (lo, hi) = match self.model.truncation.filter(|_| self.model.kind == ModelKind::RegressionRandom) {
            Some(tr) => (1.0 / tr.c2, tr.c2),
            None => (0.0, f64::INFINITY),
        };
        let prec = if hi.is_finite() {
            sample_truncated_gamma(shape, scale, lo, hi, SIGMA_TRIES, &mut self.stats.sigma_truncation, &mut self.rng)
        } else {
            rand_distr::Gamma::new(shape, 1.0).expect("gamma parameters").sample(&mut self.rng) / scale
        };
        self.state.sigma2 = 1.0 / prec;
    }

    /// Independence proposal from `Dir(a + counts)`; the leaf terms of the
    /// tree prior enter the acceptance ratio.
    fn eta_step(&mut self) {
        let p = self.net.dim();
        let a = self.prior.dirichlet_shape(p);
        let mut counts = vec![0usize; p];
        for tree in &self.state.ensemble.trees {
            for (c, k) in counts.iter_mut().zip(split_counts(tree, p)) {
                *c += k;
            }
        }
        let params: Vec<f64> = counts.iter().map(|&c| a + c as f64).collect();
        let proposal = sample_dirichlet(&params, &mut self.rng);
        let leaf_terms = |eta: &[f64]| -> f64 {
            let mut s = 0.0;
            for tree in &self.state.ensemble.trees {
                for id in tree.leaves() {
                    let node = tree.node(id);
                    s += leaf_log_term(&node.rect, node.depth, eta, &self.prior, self.net);
                }
            }
            s
        };
        let log_r = leaf_terms(&proposal) - leaf_terms(&self.state.eta);
        let accept = log_r >= 0.0 || self.rng.random::<f64>().ln() < log_r;
        self.stats.eta.record(accept);
        if accept {
            self.state.eta = proposal;
        }
    }
}

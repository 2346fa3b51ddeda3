//! Joint-distribution test of the sampler: prior draws against a chain that
//! alternates posterior updates with fresh data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::chain::{Chain, ChainState};
use super::ensemble::Ensemble;
use super::truncated::{sample_truncated_gamma, sample_truncated_normal};
use super::{logistic, Counter, Data, EtaMode, McmcConfig, ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::priors::{sample_eta, sample_sigma2, sample_tree, PriorConfig};
use crate::splitnet::SplitNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GewekeStat {
    Sigma2,
    /// Leaf count of the first tree.
    Leaves0,
    TotalLeaves,
    MeanHeight,
    /// First coordinate weight.
    Eta0,
}

impl GewekeStat {
    fn eval(self, s: &ChainState) -> f64 {
        match self {
            Self::Sigma2 => s.sigma2,
            Self::Leaves0 => s.ensemble.trees[0].num_leaves() as f64,
            Self::TotalLeaves => s.ensemble.total_leaves() as f64,
            Self::MeanHeight => s.ensemble.mean_height(),
            Self::Eta0 => s.eta[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GewekeConfig {
    pub rounds: usize,
    /// Observations, with covariates drawn once from the uniform law.
    pub n: usize,
    /// Sweeps between data refreshes. Zero makes the successive simulator
    /// draw its parameters from the prior, so both simulators coincide.
    pub sweeps_per_round: usize,
    pub batches: usize,
    pub seed: u64,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        Self { rounds: 10_000, n: 20, sweeps_per_round: 1, batches: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GewekeResult {
    pub stat: GewekeStat,
    pub prior_mean: f64,
    pub chain_mean: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GewekeReport {
    pub results: Vec<GewekeResult>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.results.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
    }
}

fn draw_state<R: Rng>(model: &ModelSpec, net: &SplitNet, prior: &PriorConfig, mode: EtaMode, rng: &mut R) -> ChainState {
    let p = net.dim();
    let eta = match mode {
        EtaMode::Dirichlet => sample_eta(p, prior, rng),
        EtaMode::Uniform => vec![1.0 / p as f64; p],
    };
    let trunc = model.truncation.filter(|_| model.kind == ModelKind::RegressionRandom);
    let sd = prior.height_variance().sqrt();
    let trees: Vec<_> = (0..prior.trees).map(|_| sample_tree(&eta, prior, net, rng)).collect();
    let heights = trees
        .iter()
        .map(|t| {
            (0..t.num_leaves())
                .map(|_| match trunc {
                    Some(tr) => sample_truncated_normal(0.0, sd, -tr.c1, tr.c1, rng),
                    None => {
                        let z: f64 = StandardNormal.sample(rng);
                        sd * z
                    },
                })
                .collect()
        })
        .collect();
    let ensemble = Ensemble::from_leaf_heights(trees, heights).expect("leaf counts match");
    let sigma2 = match (model.sigma2, trunc) {
        (Some(s), _) => s,
        (None, Some(tr)) => {
            let mut c = Counter::default();
            1.0 / sample_truncated_gamma(prior.sigma_shape, prior.sigma_scale, 1.0 / tr.c2, tr.c2, 100, &mut c, rng)
        }
        (None, None) if model.kind.is_regression() => sample_sigma2(prior, rng),
        _ => 1.0,
    };
    ChainState { ensemble, sigma2, eta, iteration: 0 }
}

fn draw_response<R: Rng>(kind: ModelKind, state: &ChainState, x: &[Vec<f64>], rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|xi| {
            let f = state.ensemble.eval(xi);
            match kind {
                ModelKind::Classification => (rng.random::<f64>() < logistic(f)) as u8 as f64,
                _ => {
                    let z: f64 = StandardNormal.sample(rng);
                    f + state.sigma2.sqrt() * z
                }
            }
        })
        .collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0))
}

/// Batch-means standard error of the mean.
fn batch_se(v: &[f64], batches: usize) -> f64 {
    let b = batches.clamp(2, v.len().max(2));
    let size = v.len() / b;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b).map(|k| v[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64).collect();
    (mean_var(&means).1 / b as f64).sqrt()
}

/// Compares the marginal-conditional simulator (independent prior draws)
/// with the successive-conditional simulator on each statistic and returns
/// the z-scores of the mean differences.
pub fn geweke_joint_test(
    model: &ModelSpec,
    net: &SplitNet,
    prior: &PriorConfig,
    mcmc: &McmcConfig,
    stats: &[GewekeStat],
    cfg: &GewekeConfig,
) -> Result<GewekeReport> {
    if !matches!(model.kind, ModelKind::RegressionFixed | ModelKind::RegressionRandom | ModelKind::Classification) {
        return Err(Error::InvalidArgument("joint test covers regression and classification".into()));
    }
    if cfg.rounds < 2 || cfg.n == 0 {
        return Err(Error::InvalidArgument("need at least two rounds and one observation".into()));
    }
    let p = net.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x: Vec<Vec<f64>> = (0..cfg.n).map(|_| (0..p).map(|_| rng.random::<f64>()).collect()).collect();

    let mut rng_mc = rng.clone();
    rng_mc.set_stream(1);
    let marginal: Vec<ChainState> = (0..cfg.rounds).map(|_| draw_state(model, net, prior, mcmc.eta, &mut rng_mc)).collect();

    let mut rng_sc = rng.clone();
    rng_sc.set_stream(2);
    let mut successive = Vec::with_capacity(cfg.rounds);
    if cfg.sweeps_per_round == 0 {
        for _ in 0..cfg.rounds {
            successive.push(draw_state(model, net, prior, mcmc.eta, &mut rng_sc));
        }
    } else {
        let init = draw_state(model, net, prior, mcmc.eta, &mut rng_sc);
        let y = draw_response(model.kind, &init, &x, &mut rng_sc);
        let chain_cfg = McmcConfig { burnin: 0, seed: cfg.seed, stream: 3, ..*mcmc };
        let mut chain = Chain::from_state(&Data::new(x.clone(), y), model, net, prior, &chain_cfg, init)?;
        for _ in 0..cfg.rounds {
            for _ in 0..cfg.sweeps_per_round {
                chain.sweep();
            }
            let y = draw_response(model.kind, chain.state(), &x, &mut rng_sc);
            chain.set_response(y)?;
            successive.push(chain.state().clone());
        }
    }

    let results = stats
        .iter()
        .map(|&stat| {
            let a: Vec<f64> = marginal.iter().map(|s| stat.eval(s)).collect();
            let b: Vec<f64> = successive.iter().map(|s| stat.eval(s)).collect();
            let (ma, va) = mean_var(&a);
            let mb = mean_var(&b).0;
            let se = (va / a.len() as f64 + batch_se(&b, cfg.batches).powi(2)).sqrt();
            let z = if se > 0.0 { (ma - mb) / se } else { 0.0 };
            GewekeResult { stat, prior_mean: ma, chain_mean: mb, z }
        })
        .collect();
    Ok(GewekeReport { results })
}

//! Sum-of-trees posterior sampling for regression, density estimation and
//! binary classification.

mod chain;
mod ensemble;
mod geweke;
mod moves;
mod truncated;

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::PriorConfig;
use crate::splitnet::SplitNet;

pub use chain::{Chain, ChainState};
pub use ensemble::{density_normalizer, midpoint_grid, Ensemble};
pub use geweke::{geweke_joint_test, GewekeConfig, GewekeReport, GewekeStat};
pub use moves::MoveKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    RegressionFixed,
    RegressionRandom,
    Density,
    Classification,
}

impl ModelKind {
    pub fn is_regression(self) -> bool {
        matches!(self, Self::RegressionFixed | Self::RegressionRandom)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reg-fixed" => Ok(Self::RegressionFixed),
            "reg-random" => Ok(Self::RegressionRandom),
            "density" => Ok(Self::Density),
            "classify" => Ok(Self::Classification),
            _ => Err(Error::Parse(format!("unknown model {s:?}"))),
        }
    }
}

/// Heights restricted to `[−c1, c1]`, `σ²` to `[1/c2, c2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Only used by random-design regression.
    pub truncation: Option<Truncation>,
    /// Known noise variance; `σ²` is not updated when set.
    pub sigma2: Option<f64>,
    /// Cells per axis for the density normalizer. Defaults to twice the
    /// largest per-axis candidate count of the net.
    pub density_resolution: Option<usize>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self { kind, truncation: None, sigma2: None, density_resolution: None }
    }

    pub fn regression() -> Self {
        Self::new(ModelKind::RegressionFixed)
    }

    pub fn regression_random(truncation: Truncation) -> Self {
        Self { truncation: Some(truncation), ..Self::new(ModelKind::RegressionRandom) }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.truncation {
            if !(t.c1 > 0.0 && t.c2 > 1.0) {
                return Err(Error::InvalidArgument("truncation needs c1 > 0 and c2 > 1".into()));
            }
        }
        if self.kind == ModelKind::RegressionRandom && self.truncation.is_none() {
            return Err(Error::InvalidArgument("random-design regression needs truncation bounds".into()));
        }
        if let Some(s) = self.sigma2 {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument("known noise variance must be positive".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn resolution(&self, net: &SplitNet) -> usize {
        self.density_resolution
            .unwrap_or_else(|| 2 * (0..net.dim()).map(|j| net.axis_count(j)).max().unwrap_or(1).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaMode {
    /// Dirichlet prior on the coordinate weights, updated each sweep.
    Dirichlet,
    /// `η` fixed at `1/p`.
    Uniform,
}

#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// Halves the residual term in the `σ²` scale.
    SigmaScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Sweeps after burn-in.
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// RNG stream, so chains sharing a seed stay independent.
    pub stream: u64,
    pub eta: EtaMode,
    /// Grow/prune/change moves. Off keeps every tree fixed.
    pub topology: bool,
    /// Off samples the prior.
    pub likelihood: bool,
    /// Grow, prune, change.
    pub move_weights: [f64; 3],
    pub keep_ensembles: bool,
    /// Initial random-walk scale for non-Gaussian height updates.
    pub initial_step: f64,
    /// Cached fits are recomputed and compared every this many sweeps.
    pub check_every: usize,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            burnin: 1000,
            thin: 1,
            seed: 0,
            stream: 0,
            eta: EtaMode::Dirichlet,
            topology: true,
            likelihood: true,
            move_weights: [0.4, 0.4, 0.2],
            keep_ensembles: false,
            initial_step: 0.5,
            check_every: 100,
            fault: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        if self.move_weights.iter().any(|w| !(*w >= 0.0)) || self.move_weights[0] <= 0.0 {
            return Err(Error::InvalidArgument("move weights must be nonnegative with grow > 0".into()));
        }
        if self.move_weights[1] <= 0.0 {
            return Err(Error::InvalidArgument("prune weight must be positive".into()));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::InvalidArgument("initial step must be positive".into()));
        }
        Ok(())
    }
}

/// Covariates in `[0,1]^p` and responses. Density data leave `y` empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Data {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Data {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Self {
        Self { x, y }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn validate(&self, kind: ModelKind, p: usize) -> Result<()> {
        if self.x.is_empty() {
            return Err(Error::EmptyData);
        }
        for row in &self.x {
            if row.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::OutOfUnitCube { coord: j, value: v });
                }
            }
        }
        if kind != ModelKind::Density && self.y.len() != self.x.len() {
            return Err(Error::DimensionMismatch { expected: self.x.len(), got: self.y.len() });
        }
        if kind == ModelKind::Classification {
            if let Some(&bad) = self.y.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidLabel(bad));
            }
        }
        if let Some(&bad) = self.y.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite response {bad}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Counter {
    pub proposed: u64,
    pub accepted: u64,
}

impl Counter {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub(crate) fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    fn merge(&mut self, o: &Counter) {
        self.proposed += o.proposed;
        self.accepted += o.accepted;
    }
}

/// Chain diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MoveStats {
    pub grow: Counter,
    pub prune: Counter,
    pub change: Counter,
    /// Random-walk height updates.
    pub height: Counter,
    pub eta: Counter,
    /// Truncated `σ²` draws: `proposed` counts attempts, `accepted` draws
    /// that landed inside the bounds.
    pub sigma_truncation: Counter,
    /// Largest gap between cached and recomputed fits.
    pub max_fit_drift: f64,
}

impl MoveStats {
    pub fn merge(&mut self, o: &MoveStats) {
        self.grow.merge(&o.grow);
        self.prune.merge(&o.prune);
        self.change.merge(&o.change);
        self.height.merge(&o.height);
        self.eta.merge(&o.eta);
        self.sigma_truncation.merge(&o.sigma_truncation);
        self.max_fit_drift = self.max_fit_drift.max(o.max_fit_drift);
    }

    /// Plain-text summary, one line per move.
    pub fn report(&self) -> String {
        let line = |name: &str, c: &Counter| format!("{name:<16} {:>10} {:>10} {:>8.4}\n", c.proposed, c.accepted, c.rate());
        let mut s = format!("{:<16} {:>10} {:>10} {:>8}\n", "move", "proposed", "accepted", "rate");
        s += &line("grow", &self.grow);
        s += &line("prune", &self.prune);
        s += &line("change", &self.change);
        s += &line("height-rw", &self.height);
        s += &line("eta", &self.eta);
        s += &line("sigma2-trunc", &self.sigma_truncation);
        s += &format!("max fit drift    {:.3e}\n", self.max_fit_drift);
        s
    }
}

/// Retained draws of one or more chains.
#[derive(Debug, Clone, Serialize)]
pub struct Posterior {
    pub kind: ModelKind,
    pub sigma2: Vec<f64>,
    /// Total leaf count per retained draw.
    pub leaves: Vec<usize>,
    pub eta: Vec<Vec<f64>>,
    /// Posterior mean of `f` at the training covariates.
    pub train_mean: Vec<f64>,
    /// Response-scale values at the requested points, one row per draw.
    pub predictions: Vec<Vec<f64>>,
    /// `ln ∫ exp(f)` per draw (density only).
    pub log_normalizer: Vec<f64>,
    #[serde(skip)]
    pub ensembles: Vec<Ensemble>,
    pub stats: MoveStats,
    pub height_step: f64,
}

impl Posterior {
    pub fn draws(&self) -> usize {
        self.sigma2.len()
    }

    /// Concatenates chains in order; training means are averaged by draw count.
    pub fn merge(chains: Vec<Posterior>) -> Result<Posterior> {
        let mut it = chains.into_iter();
        let mut out = it.next().ok_or(Error::EmptyData)?;
        for c in it {
            let (a, b) = (out.draws() as f64, c.draws() as f64);
            if a + b > 0.0 {
                for (m, x) in out.train_mean.iter_mut().zip(&c.train_mean) {
                    *m = (a * *m + b * x) / (a + b);
                }
            }
            out.sigma2.extend(c.sigma2);
            out.leaves.extend(c.leaves);
            out.eta.extend(c.eta);
            out.predictions.extend(c.predictions);
            out.log_normalizer.extend(c.log_normalizer);
            out.ensembles.extend(c.ensembles);
            out.stats.merge(&c.stats);
        }
        Ok(out)
    }
}

/// Runs one chain and collects draws, evaluating predictions at `predict_at`.
pub fn fit(
    data: &Data,
    model: &ModelSpec,
    net: &SplitNet,
    prior: &PriorConfig,
    mcmc: &McmcConfig,
    predict_at: &[Vec<f64>],
) -> Result<Posterior> {
    let mut chain = Chain::new(data, model, net, prior, mcmc)?;
    chain.run(predict_at)
}

/// Independent chains on streams `0..chains`, run concurrently and merged.
pub fn fit_chains(
    data: &Data,
    model: &ModelSpec,
    net: &SplitNet,
    prior: &PriorConfig,
    mcmc: &McmcConfig,
    predict_at: &[Vec<f64>],
    chains: usize,
) -> Result<Posterior> {
    let runs: Result<Vec<Posterior>> = (0..chains.max(1) as u64)
        .into_par_iter()
        .map(|k| fit(data, model, net, prior, &McmcConfig { stream: k, ..*mcmc }, predict_at))
        .collect();
    Posterior::merge(runs?)
}

/// Pointwise posterior mean and central 90% interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let (i, frac) = (h.floor() as usize, h - h.floor());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Summarizes draws given as rows of per-point values.
pub fn summarize(draws: &[Vec<f64>]) -> Result<Prediction> {
    let first = draws.first().ok_or(Error::EmptyData)?;
    let m = first.len();
    let mut out = Prediction { mean: Vec::with_capacity(m), lower: Vec::with_capacity(m), upper: Vec::with_capacity(m) };
    let mut col = Vec::with_capacity(draws.len());
    for i in 0..m {
        col.clear();
        col.extend(draws.iter().map(|d| d[i]));
        out.mean.push(col.iter().sum::<f64>() / col.len() as f64);
        col.sort_by(f64::total_cmp);
        out.lower.push(quantile(&col, 0.05));
        out.upper.push(quantile(&col, 0.95));
    }
    Ok(out)
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Response-scale evaluation of one ensemble: `f`, `H(f)` or `exp(f)/∫exp(f)`.
pub fn response(ensemble: &Ensemble, kind: ModelKind, resolution: usize, points: &[Vec<f64>]) -> Vec<f64> {
    let f = points.iter().map(|x| ensemble.eval(x));
    match kind {
        ModelKind::RegressionFixed | ModelKind::RegressionRandom => f.collect(),
        ModelKind::Classification => f.map(logistic).collect(),
        ModelKind::Density => {
            let z = density_normalizer(ensemble, resolution);
            f.map(|v| v.exp() / z).collect()
        }
    }
}

/// Posterior summary at `points` from stored ensembles.
pub fn predict(ensembles: &[Ensemble], kind: ModelKind, resolution: usize, points: &[Vec<f64>]) -> Result<Prediction> {
    let draws: Vec<Vec<f64>> = ensembles.par_iter().map(|e| response(e, kind, resolution, points)).collect();
    summarize(&draws)
}

//! Data generation, the simulation study, approximation-decay and
//! contraction studies, and their CSV output.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::akd::akd;
use crate::approx::{build_approximator_at_depth, measure_error, ols_slope, rate_eps, rate_slope, Metric, Quadrature};
use crate::bart::{fit, logistic, Data, EtaMode, McmcConfig, ModelKind, ModelSpec, Truncation};
use crate::error::{Error, Result};
use crate::funcs::{packing_kernel, packing_kernel_integrals, packing_kernel_l2_sq, sim_function, PiecewiseAnisoSpec};
use crate::geometry::Rect;
use crate::priors::{sample_eta, sample_tree, PriorConfig};
use crate::splitnet::SplitNet;

pub const SIMSTUDY_SCHEMA: &str = "arborart.simstudy.v1";
pub const CONTRACTION_SCHEMA: &str = "arborart.contraction.v1";
pub const DECAY_SCHEMA: &str = "arborart.decay.v1";
pub const PRIORSIM_SCHEMA: &str = "arborart.priorsim.v1";
pub const DATA_SCHEMA: &str = "arborart.data.v1";

/// Cap on grid cells used to sample from a density by inversion.
const DENSITY_CELLS: f64 = (1u64 << 18) as f64;

/// Regression truth.
#[derive(Debug, Clone)]
pub enum Truth {
    /// `sim_function` on `[0,1]^p`.
    Sim { p: usize },
    Spec(PiecewiseAnisoSpec),
    /// Sum of components on a common ambient dimension.
    Additive(Vec<PiecewiseAnisoSpec>),
}

impl Truth {
    pub fn dim(&self) -> usize {
        match self {
            Truth::Sim { p } => *p,
            Truth::Spec(s) => s.p,
            Truth::Additive(v) => v.first().map_or(0, |s| s.p),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Truth::Sim { .. } => sim_function(x),
            Truth::Spec(s) => s.eval(x),
            Truth::Additive(v) => v.iter().map(|s| s.eval(x)).sum(),
        }
    }

    /// `(d, λ, R, ᾱ)` for the rate formula, when defined.
    pub fn rate_params(&self) -> Option<(usize, f64, usize, f64)> {
        match self {
            Truth::Sim { p } => Some((*p, 1.0, 1 << p, 1.0)),
            Truth::Spec(s) => Some((s.d(), s.lambda, s.num_pieces(), s.abar())),
            Truth::Additive(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Truth::Sim { p } if *p == 0 => Err(Error::InvalidArgument("p must be positive".into())),
            Truth::Spec(s) => s.validate(),
            Truth::Additive(v) => {
                if v.is_empty() {
                    return Err(Error::InvalidArgument("empty additive truth".into()));
                }
                let p = v[0].p;
                for s in v {
                    s.validate()?;
                    if s.p != p {
                        return Err(Error::DimensionMismatch { expected: p, got: s.p });
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NetChoice {
    /// Coordinates of the training covariates.
    Design,
    /// Regular grid with `m` candidates per axis.
    Grid(usize),
}

impl FromStr for NetChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t == "design" {
            return Ok(Self::Design);
        }
        let m = t.strip_prefix("grid").map(|r| r.trim_start_matches([':', ' ', '=']).trim());
        match m.and_then(|m| m.parse::<usize>().ok()) {
            Some(m) if m > 0 => Ok(Self::Grid(m)),
            _ => Err(Error::Parse(format!("net must be `design` or `grid M`, got {s:?}"))),
        }
    }
}

impl NetChoice {
    pub fn build(&self, p: usize, x: &[Vec<f64>]) -> Result<SplitNet> {
        match *self {
            NetChoice::Design => SplitNet::from_points(x.to_vec()),
            NetChoice::Grid(m) => SplitNet::regular_grid(p, m),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub n: usize,
    pub p: usize,
    pub sigma0: f64,
    pub replicates: usize,
    pub seed: u64,
    pub model: ModelSpec,
    pub prior: PriorConfig,
    pub mcmc: McmcConfig,
    pub net: NetChoice,
    pub out_of_sample: usize,
    pub output: Option<PathBuf>,
    /// Drops the timestamp line from CSV headers.
    pub deterministic: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "sim".into(),
            n: 1000,
            p: 2,
            sigma0: 0.05,
            replicates: 20,
            seed: 0,
            model: ModelSpec::regression(),
            prior: PriorConfig::default(),
            mcmc: McmcConfig::default(),
            net: NetChoice::Design,
            out_of_sample: 500,
            output: None,
            deterministic: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Parse(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Parse(format!("bad boolean {value:?} for {key}"))),
    }
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "scenario",
        "n",
        "p",
        "sigma0",
        "replicates",
        "seed",
        "model",
        "sigma2_known",
        "c1",
        "c2",
        "density_resolution",
        "trees",
        "nu",
        "zeta",
        "xi",
        "sigma_shape",
        "sigma_scale",
        "depth_guard",
        "iterations",
        "burnin",
        "thin",
        "eta",
        "net",
        "out_of_sample",
        "output",
        "deterministic",
    ];

    /// Sets one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "scenario" => self.scenario = v.to_string(),
            "n" => self.n = parse(key, v)?,
            "p" => self.p = parse(key, v)?,
            "sigma0" => self.sigma0 = parse(key, v)?,
            "replicates" => self.replicates = parse(key, v)?,
            "seed" => {
                self.seed = parse(key, v)?;
                self.mcmc.seed = self.seed;
            }
            "model" => self.model.kind = v.parse()?,
            "sigma2_known" => self.model.sigma2 = Some(parse(key, v)?),
            "c1" | "c2" => {
                let mut t = self.model.truncation.unwrap_or(Truncation { c1: 10.0, c2: 100.0 });
                if key.trim() == "c1" {
                    t.c1 = parse(key, v)?;
                } else {
                    t.c2 = parse(key, v)?;
                }
                self.model.truncation = Some(t);
            }
            "density_resolution" => self.model.density_resolution = Some(parse(key, v)?),
            "trees" => self.prior.trees = parse(key, v)?,
            "nu" => self.prior.nu = parse(key, v)?,
            "zeta" => self.prior.zeta = parse(key, v)?,
            "xi" => self.prior.xi = parse(key, v)?,
            "sigma_shape" => self.prior.sigma_shape = parse(key, v)?,
            "sigma_scale" => self.prior.sigma_scale = parse(key, v)?,
            "depth_guard" => self.prior.depth_guard = parse(key, v)?,
            "iterations" => self.mcmc.iterations = parse(key, v)?,
            "burnin" => self.mcmc.burnin = parse(key, v)?,
            "thin" => self.mcmc.thin = parse(key, v)?,
            "eta" => {
                self.mcmc.eta = match v {
                    "dirichlet" => EtaMode::Dirichlet,
                    "uniform" => EtaMode::Uniform,
                    _ => return Err(Error::Parse(format!("eta must be dirichlet or uniform, got {v:?}"))),
                }
            }
            "net" => self.net = v.parse()?,
            "out_of_sample" => self.out_of_sample = parse(key, v)?,
            "output" => self.output = Some(PathBuf::from(v)),
            "deterministic" => self.deterministic = parse_bool(key, v)?,
            other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", no + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0) {
            return Err(Error::InvalidArgument("sigma0 must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("need at least one replicate".into()));
        }
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidArgument("n and p must be positive".into()));
        }
        self.model.validate()?;
        self.prior.validate()?;
        self.mcmc.validate()
    }

    fn header(&self, schema: &str) -> String {
        let mut s = format!("# schema={schema}\n");
        if !self.deterministic {
            let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            let _ = writeln!(s, "# generated_unix={t}");
        }
        s
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform_points<R: Rng>(n: usize, p: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..p).map(|_| rng.random::<f64>()).collect()).collect()
}

/// `n` i.i.d. draws from `exp(f)/∫exp(f)` on `[0,1]^p`: a cell of a regular
/// grid is drawn by inverse CDF of the midpoint masses, then a uniform point
/// inside it.
pub fn sample_density<R: Rng>(f: &(dyn Fn(&[f64]) -> f64 + Sync), p: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let res = (DENSITY_CELLS.powf(1.0 / p as f64).floor() as usize).clamp(1, 4096);
    let total = res.pow(p as u32);
    let h = 1.0 / res as f64;
    let cell = |mut k: usize| -> Vec<usize> {
        (0..p)
            .map(|_| {
                let i = k % res;
                k /= res;
                i
            })
            .collect()
    };
    let logs: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|k| f(&cell(k).iter().map(|&i| (i as f64 + 0.5) * h).collect::<Vec<_>>()))
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cdf = Vec::with_capacity(total);
    let mut acc = 0.0;
    for l in &logs {
        acc += (l - m).exp();
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c <= u).min(total - 1);
            cell(k).iter().map(|&i| (i as f64 + rng.random::<f64>()) * h).collect()
        })
        .collect()
}

/// Response at `x` under the model family.
pub fn draw_response<R: Rng>(kind: ModelKind, truth: &Truth, x: &[f64], sigma0: f64, rng: &mut R) -> f64 {
    let f = truth.eval(x);
    match kind {
        ModelKind::Classification => (rng.random::<f64>() < logistic(f)) as u8 as f64,
        _ => {
            let z: f64 = StandardNormal.sample(rng);
            f + sigma0 * z
        }
    }
}

/// Covariates uniform on `[0,1]^p` with responses from the model family, or
/// for density models draws from `exp(f_0)/∫exp(f_0)` with no responses.
pub fn generate_data_with<R: Rng>(kind: ModelKind, truth: &Truth, n: usize, sigma0: f64, rng: &mut R) -> Result<Data> {
    truth.validate()?;
    if !(sigma0 >= 0.0) {
        return Err(Error::InvalidArgument("sigma0 must be nonnegative".into()));
    }
    let p = truth.dim();
    if kind == ModelKind::Density {
        let f = |x: &[f64]| truth.eval(x);
        return Ok(Data::new(sample_density(&f, p, n, rng), Vec::new()));
    }
    let x = uniform_points(n, p, rng);
    let y = x.iter().map(|xi| draw_response(kind, truth, xi, sigma0, rng)).collect();
    Ok(Data::new(x, y))
}

/// [`generate_data_with`] seeded from the config.
pub fn generate_data(config: &ExperimentConfig, truth: &Truth) -> Result<Data> {
    if truth.dim() != config.p {
        return Err(Error::DimensionMismatch { expected: config.p, got: truth.dim() });
    }
    generate_data_with(config.model.kind, truth, config.n, config.sigma0, &mut rng_for(config.seed, 0))
}

/// Dataset as CSV: `x1..xp[,y]`.
pub fn data_to_csv(config: &ExperimentConfig, data: &Data) -> String {
    let mut s = config.header(DATA_SCHEMA);
    let p = data.x.first().map_or(0, Vec::len);
    let mut cols: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    if !data.y.is_empty() {
        cols.push("y".into());
    }
    s += &cols.join(",");
    s.push('\n');
    for (i, x) in data.x.iter().enumerate() {
        let mut row: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
        if let Some(y) = data.y.get(i) {
            row.push(format!("{y}"));
        }
        s += &row.join(",");
        s.push('\n');
    }
    s
}

/// Parses `x1..xp[,y]` rows; `p` tells whether the last column is a response.
pub fn data_from_csv(text: &str, p: Option<usize>) -> Result<Data> {
    let rows = crate::splitnet::parse_csv_rows(text)?;
    let width = rows.first().map_or(0, Vec::len);
    let p = p.unwrap_or(width.saturating_sub(1));
    if width != p && width != p + 1 {
        return Err(Error::Parse(format!("rows have {width} columns for p = {p}")));
    }
    let mut data = Data::default();
    for r in rows {
        if r.len() != width {
            return Err(Error::Parse("ragged CSV".into()));
        }
        data.x.push(r[..p].to_vec());
        if width == p + 1 {
            data.y.push(r[p]);
        }
    }
    Ok(data)
}

// ---- simulation study ----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Bart,
    SingleTree,
    Constant,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Bart, Arm::SingleTree, Arm::Constant];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Bart => "bart",
            Arm::SingleTree => "single-tree",
            Arm::Constant => "constant",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimRow {
    pub replicate: usize,
    pub arm: Arm,
    pub trees: usize,
    pub rmspe: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimStudy {
    pub rows: Vec<SimRow>,
}

impl SimStudy {
    pub fn mean_rmspe(&self, arm: Arm) -> f64 {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.arm == arm).map(|r| r.rmspe).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn to_csv(&self, config: &ExperimentConfig) -> String {
        let mut s = config.header(SIMSTUDY_SCHEMA);
        s += "scenario,replicate,arm,n,p,sigma0,trees,rmspe\n";
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.10}",
                config.scenario,
                r.replicate,
                r.arm.name(),
                config.n,
                config.p,
                config.sigma0,
                r.trees,
                r.rmspe
            );
        }
        s
    }
}

fn rmspe(pred: &[f64], y: &[f64]) -> f64 {
    (pred.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt()
}

/// One replicate of the regression study: BART with uniform coordinate
/// weights, a single-tree chain, and the training mean, scored on fresh
/// noisy out-of-sample responses.
fn simstudy_replicate(config: &ExperimentConfig, truth: &Truth, r: usize) -> Result<Vec<SimRow>> {
    let mut rng = rng_for(config.seed, 2 * r as u64);
    let train = generate_data_with(ModelKind::RegressionFixed, truth, config.n, config.sigma0, &mut rng)?;
    let test = generate_data_with(ModelKind::RegressionFixed, truth, config.out_of_sample, config.sigma0, &mut rng)?;
    let net = config.net.build(config.p, &train.x)?;
    let model = ModelSpec { kind: ModelKind::RegressionFixed, ..config.model };
    let mut rows = Vec::with_capacity(3);
    for (k, arm) in Arm::ALL.into_iter().enumerate() {
        let (trees, pred) = match arm {
            Arm::Constant => {
                let m = train.y.iter().sum::<f64>() / train.y.len() as f64;
                (0, vec![m; test.y.len()])
            }
            _ => {
                let t = if arm == Arm::Bart { config.prior.trees } else { 1 };
                let prior = PriorConfig { trees: t, ..config.prior };
                let mcmc = McmcConfig {
                    eta: EtaMode::Uniform,
                    seed: config.seed,
                    stream: 1 + 2 * r as u64 * Arm::ALL.len() as u64 + k as u64,
                    ..config.mcmc
                };
                let post = fit(&train, &model, &net, &prior, &mcmc, &test.x)?;
                let draws = post.predictions.len() as f64;
                let mut mean = vec![0.0; test.x.len()];
                for d in &post.predictions {
                    for (m, v) in mean.iter_mut().zip(d) {
                        *m += v / draws;
                    }
                }
                (t, mean)
            }
        };
        rows.push(SimRow { replicate: r, arm, trees, rmspe: rmspe(&pred, &test.y) });
    }
    Ok(rows)
}

pub fn run_simstudy(config: &ExperimentConfig) -> Result<SimStudy> {
    config.validate()?;
    let truth = Truth::Sim { p: config.p };
    let reps: Result<Vec<Vec<SimRow>>> =
        (0..config.replicates).into_par_iter().map(|r| simstudy_replicate(config, &truth, r)).collect();
    Ok(SimStudy { rows: reps?.into_iter().flatten().collect() })
}

// ---- contraction study ---------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ContractionRow {
    pub n: usize,
    /// Empirical L2 distance between posterior mean and truth at the design.
    pub error: f64,
    pub sigma2_mean: f64,
    pub sigma2_gap: f64,
    pub rate_eps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionStudy {
    pub rows: Vec<ContractionRow>,
    /// Slope of `ln error` on `ln n`.
    pub slope: Option<f64>,
    pub spearman: f64,
}

impl ContractionStudy {
    pub fn to_csv(&self, config: &ExperimentConfig) -> String {
        let mut s = config.header(CONTRACTION_SCHEMA);
        s += "scenario,n,error,sigma2_mean,sigma2_gap,rate_eps\n";
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.10},{:.10},{:.10},{:.10}",
                config.scenario, r.n, r.error, r.sigma2_mean, r.sigma2_gap, r.rate_eps
            );
        }
        if let Some(b) = self.slope {
            let _ = writeln!(s, "# slope={b:.6}");
        }
        let _ = writeln!(s, "# spearman={:.6}", self.spearman);
        s
    }
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

pub fn run_contraction_study(config: &ExperimentConfig, truth: &Truth, n_list: &[usize]) -> Result<ContractionStudy> {
    config.validate()?;
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("sample sizes must be increasing".into()));
    }
    if truth.dim() != config.p {
        return Err(Error::DimensionMismatch { expected: config.p, got: truth.dim() });
    }
    let model = ModelSpec { kind: ModelKind::RegressionFixed, ..config.model };
    let rows: Result<Vec<ContractionRow>> = n_list
        .par_iter()
        .enumerate()
        .map(|(k, &n)| {
            let mut rng = rng_for(config.seed, 2 * k as u64);
            let data = generate_data_with(ModelKind::RegressionFixed, truth, n, config.sigma0, &mut rng)?;
            let net = config.net.build(config.p, &data.x)?;
            let mcmc = McmcConfig { seed: config.seed, stream: 2 * k as u64 + 1, ..config.mcmc };
            let post = fit(&data, &model, &net, &config.prior, &mcmc, &[])?;
            let err = (data.x.iter().zip(&post.train_mean).map(|(x, m)| (m - truth.eval(x)).powi(2)).sum::<f64>()
                / n as f64)
                .sqrt();
            let s2 = post.sigma2.iter().sum::<f64>() / post.sigma2.len().max(1) as f64;
            let eps = truth
                .rate_params()
                .map_or(f64::NAN, |(d, lambda, r, abar)| rate_eps(n as f64, config.p, d, lambda, r, abar));
            Ok(ContractionRow {
                n,
                error: err,
                sigma2_mean: s2,
                sigma2_gap: (s2 - config.sigma0 * config.sigma0).abs(),
                rate_eps: eps,
            })
        })
        .collect();
    let rows = rows?;
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(ContractionStudy { slope: rate_slope(&ns, &errs).ok(), spearman: spearman(&ns, &errs), rows })
}

// ---- approximation decay -------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub level: usize,
    /// Per-piece AKD counters.
    pub counters: Vec<Vec<usize>>,
    pub leaves: usize,
    pub sup_error: f64,
    /// `12 λ d 2^{−ᾱL/d}`.
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayStudy {
    pub rows: Vec<DecayRow>,
    /// OLS slope of `ln sup_error` on `L`.
    pub slope: f64,
    /// `−(ᾱ/d) ln 2`.
    pub target_slope: f64,
}

impl DecayStudy {
    pub fn to_csv(&self, config: &ExperimentConfig) -> String {
        let mut s = config.header(DECAY_SCHEMA);
        s += "level,leaves,counters,sup_error,bound\n";
        for r in &self.rows {
            let c: Vec<String> =
                r.counters.iter().map(|v| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")).collect();
            let _ = writeln!(s, "{},{},{},{:.10},{:.10}", r.level, r.leaves, c.join("|"), r.sup_error, r.bound);
        }
        let _ = writeln!(s, "# slope={:.6} target={:.6}", self.slope, self.target_slope);
        s
    }
}

/// Sup-norm error of the tree approximator across depths.
pub fn run_decay_study(spec: &PiecewiseAnisoSpec, net: &SplitNet, levels: &[usize], quad: &Quadrature) -> Result<DecayStudy> {
    if levels.len() < 2 {
        return Err(Error::InvalidArgument("need at least two levels".into()));
    }
    let (d, abar, lambda) = (spec.d() as f64, spec.abar(), spec.lambda);
    let f0 = |x: &[f64]| spec.eval(x);
    let mut rows = Vec::with_capacity(levels.len());
    for &l in levels {
        let a = build_approximator_at_depth(spec, net, l)?;
        let g = |x: &[f64]| a.eval(x);
        let sup = measure_error(&f0, &g, spec.p, &Metric::Sup, quad).value;
        rows.push(DecayRow {
            level: l,
            counters: a.pieces.iter().map(|p| p.counters.clone()).collect(),
            leaves: a.num_leaves(),
            sup_error: sup,
            bound: 12.0 * lambda * d * 2f64.powf(-abar * l as f64 / d),
        });
    }
    let ls: Vec<f64> = rows.iter().map(|r| r.level as f64).collect();
    let le: Vec<f64> = rows.iter().map(|r| r.sup_error.ln()).collect();
    Ok(DecayStudy { slope: ols_slope(&ls, &le), target_slope: -(abar / d) * 2f64.ln(), rows })
}

// ---- prior simulation ----------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PriorSim {
    /// `histogram[k]` counts draws with `k + 1` leaves.
    pub leaf_histogram: Vec<u64>,
    pub depth_histogram: Vec<u64>,
    pub draws: u64,
    /// Mean of `max_j η_j`.
    pub eta_max_mean: f64,
    /// Mean number of coordinates with `η_j >= 0.01`.
    pub eta_active_mean: f64,
}

impl PriorSim {
    /// `P(K > k)` for `k = 0, 1, …`.
    pub fn leaf_tail(&self) -> Vec<f64> {
        let mut above = self.draws;
        self.leaf_histogram
            .iter()
            .map(|&c| {
                above -= c;
                above as f64 / self.draws as f64
            })
            .collect()
    }

    pub fn to_csv(&self, config: &ExperimentConfig) -> String {
        let mut s = config.header(PRIORSIM_SCHEMA);
        s += "leaves,count,tail\n";
        for (k, (c, t)) in self.leaf_histogram.iter().zip(self.leaf_tail()).enumerate() {
            let _ = writeln!(s, "{},{},{:.10}", k + 1, c, t);
        }
        let _ = writeln!(s, "# eta_max_mean={:.6} eta_active_mean={:.6}", self.eta_max_mean, self.eta_active_mean);
        s
    }
}

/// Draws `(η, tree)` from the prior and tallies leaf counts and depths.
pub fn run_prior_sim(p: usize, prior: &PriorConfig, net: &SplitNet, draws: u64, seed: u64, eta: EtaMode) -> Result<PriorSim> {
    prior.validate()?;
    if net.dim() != p {
        return Err(Error::DimensionMismatch { expected: p, got: net.dim() });
    }
    let chunks = 64u64;
    let per = draws.div_ceil(chunks);
    let parts: Vec<(Vec<u64>, Vec<u64>, f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, c);
            let (mut lh, mut dh, mut emax, mut eact) = (Vec::new(), Vec::new(), 0.0, 0.0);
            let m = per.min(draws.saturating_sub(c * per));
            for _ in 0..m {
                let e = match eta {
                    EtaMode::Dirichlet => sample_eta(p, prior, &mut rng),
                    EtaMode::Uniform => vec![1.0 / p as f64; p],
                };
                emax += e.iter().copied().fold(0.0, f64::max);
                eact += e.iter().filter(|&&v| v >= 0.01).count() as f64;
                let t = sample_tree(&e, prior, net, &mut rng);
                let (k, d) = (t.num_leaves() - 1, t.max_depth());
                if lh.len() <= k {
                    lh.resize(k + 1, 0);
                }
                if dh.len() <= d {
                    dh.resize(d + 1, 0);
                }
                lh[k] += 1;
                dh[d] += 1;
            }
            (lh, dh, emax, eact)
        })
        .collect();
    let mut out = PriorSim {
        leaf_histogram: Vec::new(),
        depth_histogram: Vec::new(),
        draws,
        eta_max_mean: 0.0,
        eta_active_mean: 0.0,
    };
    for (lh, dh, emax, eact) in parts {
        out.eta_max_mean += emax;
        out.eta_active_mean += eact;
        for (dst, src) in [(&mut out.leaf_histogram, lh), (&mut out.depth_histogram, dh)] {
            if dst.len() < src.len() {
                dst.resize(src.len(), 0);
            }
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    out.eta_max_mean /= draws as f64;
    out.eta_active_mean /= draws as f64;
    Ok(out)
}

// ---- kernel and AKD checks -----------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct KernelCheck {
    pub d: usize,
    pub integral: f64,
    pub l2_sq: f64,
    pub l2_sq_exact: f64,
    /// Largest `|K(x) − K(y)| / Σ_j |x_j − y_j|` over the sampled pairs.
    pub max_lipschitz_ratio: f64,
}

pub fn kernel_check(d: usize, cells: usize, pairs: usize, seed: u64) -> KernelCheck {
    let (integral, l2_sq) = packing_kernel_integrals(d, cells);
    let ratio = (0..64u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, c);
            let m = pairs.div_ceil(64);
            let mut best: f64 = 0.0;
            for _ in 0..m {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let l1: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
                if l1 > 0.0 {
                    best = best.max((packing_kernel(&x) - packing_kernel(&y)).abs() / l1);
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    KernelCheck { d, integral, l2_sq, l2_sq_exact: packing_kernel_l2_sq(d), max_lipschitz_ratio: ratio }
}

/// AKD on the unit cube over a regular grid, all coordinates active.
pub fn run_akd(alpha: &[f64], l: usize, grid: (usize, usize)) -> Result<crate::akd::AkdResult> {
    let (p, m) = grid;
    if alpha.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: alpha.len() });
    }
    let net = SplitNet::regular_grid(p, m)?;
    akd(&Rect::unit(p), &net, alpha, l, &(0..p).collect::<Vec<_>>())
}

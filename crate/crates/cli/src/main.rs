use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use arborart::approx::{rate_eps, rate_gamma, Quadrature};
use arborart::bart::{fit_chains, summarize, EtaMode, McmcConfig, ModelKind, ModelSpec};
use arborart::experiments::{
    data_from_csv, data_to_csv, generate_data, kernel_check, run_akd, run_contraction_study, run_decay_study,
    run_prior_sim, run_simstudy, ExperimentConfig, NetChoice, Truth,
};
use arborart::funcs::{Piece, PiecewiseAnisoSpec};
use arborart::priors::{check_dirichlet_lemma, PriorConfig};
use arborart::splitnet::SplitNet;

#[derive(Parser)]
#[command(name = "arborart", version, about = "Tree-partition priors, BART samplers and their experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset.
    Datagen(Common),
    /// Held-out RMSPE of BART against single-tree and constant baselines.
    Simstudy(Common),
    /// Approximation error of the AKD tree approximator across depths.
    Rate(RateArgs),
    /// Posterior error against sample size.
    Contraction {
        #[command(flatten)]
        common: Common,
        /// Increasing sample sizes.
        #[arg(long, value_delimiter = ',', default_value = "250,500,1000,2000")]
        ns: Vec<usize>,
    },
    /// Prior draws of trees and coordinate weights.
    Priorsim(PriorsimArgs),
    /// Packing-kernel integrals and Lipschitz check.
    Kernelcheck {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        d: Vec<usize>,
        /// Quadrature cells per axis.
        #[arg(long, default_value_t = 400)]
        cells: usize,
        #[arg(long, default_value_t = 100_000)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Anisotropic k-d split counters on a regular grid.
    Akd {
        #[arg(long, value_delimiter = ',', required = true)]
        alpha: Vec<f64>,
        #[arg(long = "L")]
        depth: usize,
        /// Dimension and candidates per axis.
        #[arg(long, num_args = 2, value_names = ["P", "M"])]
        grid: Vec<usize>,
    },
    /// Run the sampler on a CSV dataset.
    Fit(FitArgs),
}

/// Config file plus overrides shared by the experiment commands.
#[derive(Args)]
struct Common {
    /// Flat `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    net: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Omit the timestamp from CSV headers.
    #[arg(long)]
    deterministic: bool,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            c.apply_text(&text)?;
        }
        let flags: [(&str, Option<String>); 10] = [
            ("n", self.n.map(|v| v.to_string())),
            ("p", self.p.map(|v| v.to_string())),
            ("sigma0", self.sigma0.map(|v| v.to_string())),
            ("replicates", self.replicates.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("model", self.model.clone()),
            ("trees", self.trees.map(|v| v.to_string())),
            ("iterations", self.iters.map(|v| v.to_string())),
            ("burnin", self.burnin.map(|v| v.to_string())),
            ("net", self.net.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                c.set(k, &v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("expected KEY=VALUE, got {kv:?}"))?;
            c.set(k, v)?;
        }
        if let Some(o) = &self.output {
            c.output = Some(o.clone());
        }
        c.deterministic |= self.deterministic;
        Ok(c)
    }
}

#[derive(Args)]
struct RateArgs {
    /// Exponents of `f(x) = Σ_j x_j^{a_j}`, also used as smoothness.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5")]
    exponents: Vec<f64>,
    /// Candidates per axis of the regular net.
    #[arg(long, default_value_t = 512)]
    grid: usize,
    #[arg(long, value_delimiter = ',', default_value = "6,7,8,9,10,11,12,13,14")]
    levels: Vec<usize>,
    /// Lattice resolution for the sup norm.
    #[arg(long, default_value_t = 2048)]
    resolution: usize,
    /// Also print the rate formulas at this `n` with `p` covariates.
    #[arg(long, num_args = 2, value_names = ["N", "P"])]
    formula: Option<Vec<f64>>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct PriorsimArgs {
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 1.0)]
    zeta: f64,
    #[arg(long, default_value_t = 2.0)]
    xi: f64,
    #[arg(long, default_value_t = 0.25)]
    nu: f64,
    #[arg(long, default_value_t = 200)]
    trees: usize,
    /// Candidates per axis of the regular net.
    #[arg(long, default_value_t = 16)]
    grid: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    uniform_eta: bool,
    /// Run the Dirichlet concentration check at sparsity `S` and radius `EPS`.
    #[arg(long, num_args = 2, value_names = ["S", "EPS"])]
    lemma: Option<Vec<f64>>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value = "reg-fixed")]
    model: String,
    /// CSV with covariates in `[0,1]` and, except for density, a final response column.
    #[arg(long)]
    data: PathBuf,
    /// `design` or `grid M`.
    #[arg(long, default_value = "design")]
    net: String,
    #[arg(long, default_value_t = 200)]
    trees: usize,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 1000)]
    burnin: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Fixed noise variance for regression.
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    uniform_eta: bool,
    /// Points to predict at, same column layout as the covariates; defaults to the training covariates.
    #[arg(long)]
    predict: Option<PathBuf>,
    /// Output prefix; writes `<prefix>_draws.csv` and `<prefix>_predictions.csv`.
    #[arg(short, long, default_value = "fit")]
    output: String,
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ARBORART_THREADS") {
        let n: usize = v.parse().with_context(|| format!("ARBORART_THREADS={v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    configure_threads()?;
    match Cli::parse().cmd {
        Cmd::Datagen(common) => {
            let c = common.config()?;
            let truth = Truth::Sim { p: c.p };
            let data = generate_data(&c, &truth)?;
            emit(c.output.as_deref(), &data_to_csv(&c, &data))
        }
        Cmd::Simstudy(common) => {
            let c = common.config()?;
            let study = run_simstudy(&c)?;
            for arm in arborart::experiments::Arm::ALL {
                eprintln!("{:<12} mean rmspe {:.6}", arm.name(), study.mean_rmspe(arm));
            }
            emit(c.output.as_deref(), &study.to_csv(&c))
        }
        Cmd::Contraction { common, ns } => {
            let c = common.config()?;
            let study = run_contraction_study(&c, &Truth::Sim { p: c.p }, &ns)?;
            emit(c.output.as_deref(), &study.to_csv(&c))
        }
        Cmd::Rate(a) => {
            let p = a.exponents.len();
            if p == 0 {
                bail!("need at least one exponent");
            }
            let spec = PiecewiseAnisoSpec::single(
                p,
                (0..p).collect(),
                a.exponents.clone(),
                1.0,
                Piece::Power { coef: vec![1.0; p], exponent: a.exponents.clone() },
            )?;
            let net = SplitNet::regular_grid(p, a.grid)?;
            let quad = Quadrature { resolution: a.resolution, ..Default::default() };
            let study = run_decay_study(&spec, &net, &a.levels, &quad)?;
            let c = ExperimentConfig { deterministic: a.deterministic, ..Default::default() };
            let mut text = study.to_csv(&c);
            if let Some(f) = &a.formula {
                let (n, pp) = (f[0], f[1] as usize);
                let (d, abar) = (spec.d(), spec.abar());
                text += &format!(
                    "# rate_eps={:.6} rate_gamma={:.6}\n",
                    rate_eps(n, pp, d, 1.0, 1, abar),
                    rate_gamma(n, pp, d, 1.0, abar)?
                );
            }
            emit(a.output.as_deref(), &text)
        }
        Cmd::Priorsim(a) => {
            let prior =
                PriorConfig { trees: a.trees, nu: a.nu, zeta: a.zeta, xi: a.xi, ..Default::default() };
            let net = SplitNet::regular_grid(a.p, a.grid)?;
            let mode = if a.uniform_eta { EtaMode::Uniform } else { EtaMode::Dirichlet };
            let sim = run_prior_sim(a.p, &prior, &net, a.trials, a.seed, mode)?;
            let c = ExperimentConfig { deterministic: a.deterministic, ..Default::default() };
            let mut text = sim.to_csv(&c);
            if let Some(l) = &a.lemma {
                let r = check_dirichlet_lemma(a.p, l[0] as usize, l[1], &prior, a.trials as usize, a.seed)?;
                text += &format!(
                    "# lemma s={} eps={} near_estimate={:.6e} near_constant={:.6} tail_estimate={:.6e} tail_constant={:.6}\n",
                    r.s, r.eps, r.near.estimate, r.near.constant, r.tail.estimate, r.tail.constant
                );
            }
            emit(a.output.as_deref(), &text)
        }
        Cmd::Kernelcheck { d, cells, pairs, seed } => {
            println!("d,integral,l2_sq,l2_sq_exact,max_lipschitz_ratio");
            for d in d {
                let k = kernel_check(d, cells, pairs, seed);
                println!("{},{:.3e},{:.8},{:.8},{:.6}", k.d, k.integral, k.l2_sq, k.l2_sq_exact, k.max_lipschitz_ratio);
            }
            Ok(())
        }
        Cmd::Akd { alpha, depth, grid } => {
            let (p, m) = match grid.as_slice() {
                [p, m] => (*p, *m),
                [] => (alpha.len(), 512),
                _ => bail!("--grid takes P M"),
            };
            let r = run_akd(&alpha, depth, (p, m))?;
            let counters: Vec<String> = r.counters.iter().map(|c| c.to_string()).collect();
            println!("counters={} depth={} leaves={}", counters.join(","), r.depth, r.partition.num_leaves());
            Ok(())
        }
        Cmd::Fit(a) => run_fit(a),
    }
}

fn run_fit(a: FitArgs) -> Result<()> {
    let kind: ModelKind = a.model.parse()?;
    let text = fs::read_to_string(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let width = text.lines().find(|l| !l.trim().is_empty() && !l.starts_with('#')).map_or(0, |l| l.split(',').count());
    let p = if kind == ModelKind::Density { width } else { width.saturating_sub(1) };
    let data = data_from_csv(&text, Some(p))?;
    let net = a.net.parse::<NetChoice>()?.build(p, &data.x)?;
    let model = ModelSpec { sigma2: a.sigma2, ..ModelSpec::new(kind) };
    let prior = PriorConfig { trees: a.trees, ..Default::default() };
    let mcmc = McmcConfig {
        iterations: a.iters,
        burnin: a.burnin,
        thin: a.thin,
        seed: a.seed,
        eta: if a.uniform_eta { EtaMode::Uniform } else { EtaMode::Dirichlet },
        ..Default::default()
    };
    let points = match &a.predict {
        Some(path) => data_from_csv(&fs::read_to_string(path)?, Some(p))?.x,
        None => data.x.clone(),
    };
    let post = fit_chains(&data, &model, &net, &prior, &mcmc, &points, a.chains.max(1))?;

    let mut draws = String::from("# schema=arborart.draws.v1\ndraw,sigma2,leaves,log_normalizer");
    for j in 1..=p {
        draws += &format!(",eta{j}");
    }
    draws.push('\n');
    for k in 0..post.draws() {
        let s2 = post.sigma2.get(k).map_or(String::new(), |v| format!("{v}"));
        let z = post.log_normalizer.get(k).map_or(String::new(), |v| format!("{v}"));
        draws += &format!("{k},{s2},{},{z}", post.leaves[k]);
        for e in &post.eta[k] {
            draws += &format!(",{e}");
        }
        draws.push('\n');
    }
    fs::write(format!("{}_draws.csv", a.output), draws)?;

    let summary = summarize(&post.predictions)?;
    let mut pred = String::from("# schema=arborart.predictions.v1\n");
    pred += &(1..=p).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    pred += ",mean,lower,upper\n";
    for (i, x) in points.iter().enumerate() {
        let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        pred += &format!("{},{},{},{}\n", xs.join(","), summary.mean[i], summary.lower[i], summary.upper[i]);
    }
    fs::write(format!("{}_predictions.csv", a.output), pred)?;

    eprintln!("model {:?}, {} draws, height step {:.4}", post.kind, post.draws(), post.height_step);
    eprint!("{}", post.stats.report());
    Ok(())
}

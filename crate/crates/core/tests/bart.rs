use std::collections::HashMap;

use arborart::bart::*;
use arborart::geometry::TreePartition;
use arborart::priors::{sample_eta, sample_tree, tree_log_prior, PriorConfig};
use arborart::splitnet::SplitNet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform_points(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..p).map(|_| rng.random::<f64>()).collect()).collect()
}

fn batch_se(v: &[f64], batches: usize) -> f64 {
    let size = v.len() / batches;
    let means: Vec<f64> = (0..batches).map(|k| v[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    (means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (batches as f64 - 1.0) / batches as f64).sqrt()
}

#[test]
fn constant_response_is_recovered() {
    // Every cell between consecutive candidates holds a design point, so no
    // leaf is ever empty.
    let m = 4;
    let net = SplitNet::regular_grid(2, m).unwrap();
    let x: Vec<Vec<f64>> =
        (0..=m).flat_map(|i| (0..=m).map(move |j| vec![i as f64 / m as f64, j as f64 / m as f64])).collect();
    let data = Data::new(x.clone(), vec![0.7; x.len()]);
    let model = ModelSpec { sigma2: Some(1e-8), ..ModelSpec::regression() };
    let prior = PriorConfig { trees: 20, ..PriorConfig::default() };
    let mcmc = McmcConfig { iterations: 200, burnin: 200, seed: 4, ..McmcConfig::default() };
    let pts = uniform_points(50, 2, 8);
    let post = fit(&data, &model, &net, &prior, &mcmc, &pts).unwrap();
    let pred = summarize(&post.predictions).unwrap();
    for v in pred.mean {
        assert!((v - 0.7).abs() < 1e-3, "{v}");
    }
    assert!(post.stats.max_fit_drift < 1e-10);
}

#[test]
fn fixed_tree_heights_match_conjugate_posterior() {
    let net = SplitNet::regular_grid(1, 4).unwrap();
    let mut tree = TreePartition::unit(1);
    let (l, _) = tree.split(0, 0, 0.625).unwrap();
    tree.split(l, 0, 0.375).unwrap();
    let x = uniform_points(30, 1, 2);
    let y: Vec<f64> = x.iter().map(|v| if v[0] < 0.5 { 1.0 } else { -0.5 }).collect();
    let sigma2 = 0.3;
    let prior = PriorConfig { trees: 1, ..PriorConfig::default() };
    let model = ModelSpec { sigma2: Some(sigma2), ..ModelSpec::regression() };
    let mcmc = McmcConfig { iterations: 40_000, burnin: 0, topology: false, keep_ensembles: true, seed: 1, ..McmcConfig::default() };
    let state = ChainState {
        ensemble: Ensemble::from_leaf_heights(vec![tree.clone()], vec![vec![0.0; 3]]).unwrap(),
        sigma2,
        eta: vec![1.0],
        iteration: 0,
    };
    let mut chain = Chain::from_state(&Data::new(x.clone(), y.clone()), &model, &net, &prior, &mcmc, state).unwrap();
    let post = chain.run(&[]).unwrap();
    let draws = post.ensembles.len() as f64;
    let tau2 = 1.0;
    for (k, id) in tree.leaves().into_iter().enumerate() {
        let members: Vec<f64> = x.iter().zip(&y).filter(|(xi, _)| tree.locate(xi) == id).map(|(_, &yi)| yi).collect();
        let n = members.len() as f64;
        let s: f64 = members.iter().sum();
        let mean = tau2 * s / (sigma2 + n * tau2);
        let var = sigma2 * tau2 / (sigma2 + n * tau2);
        let hs: Vec<f64> = post.ensembles.iter().map(|e| e.leaf_heights(0)[k]).collect();
        let m = hs.iter().sum::<f64>() / draws;
        let v = hs.iter().map(|h| (h - m) * (h - m)).sum::<f64>() / (draws - 1.0);
        assert!((m - mean).abs() < 3.0 * (var / draws).sqrt(), "leaf {k}: mean {m} vs {mean}");
        assert!((v - var).abs() < 3.0 * var * (2.0 / (draws - 1.0)).sqrt(), "leaf {k}: var {v} vs {var}");
    }
}

fn record_key(t: &TreePartition) -> Vec<(usize, usize, u64)> {
    t.records().iter().map(|r| (r.node, r.coord, r.tau.to_bits())).collect()
}

#[test]
fn prior_only_chain_matches_enumerated_tree_law() {
    let net = SplitNet::regular_grid(2, 1).unwrap();
    let prior = PriorConfig { trees: 1, nu: 0.45, depth_guard: 3, ..PriorConfig::default() };
    let eta = vec![0.5, 0.5];
    let data = Data::new(vec![vec![0.5, 0.5]], vec![0.0]);
    let mcmc = McmcConfig {
        iterations: 200_000,
        burnin: 0,
        likelihood: false,
        eta: EtaMode::Uniform,
        keep_ensembles: true,
        seed: 11,
        ..McmcConfig::default()
    };
    let post = fit(&data, &ModelSpec::regression(), &net, &prior, &mcmc, &[]).unwrap();
    let mut freq: HashMap<_, f64> = HashMap::new();
    let mut trees = HashMap::new();
    for e in &post.ensembles {
        let k = record_key(&e.trees[0]);
        *freq.entry(k.clone()).or_default() += 1.0;
        trees.entry(k).or_insert_with(|| e.trees[0].clone());
    }
    let total = post.ensembles.len() as f64;
    let mut mass = 0.0;
    for (k, c) in &freq {
        let pi = tree_log_prior(&trees[k], &eta, &prior, &net).unwrap().exp();
        mass += pi;
        // Autocorrelated draws: allow a generous multiple of the iid SE.
        let se = (pi * (1.0 - pi) / total).sqrt();
        assert!((c / total - pi).abs() < 10.0 * se + 1e-3, "{k:?}: {} vs {pi}", c / total);
    }
    assert!(mass > 0.999, "visited prior mass {mass}");
}

#[test]
fn prior_only_chain_matches_prior_samplers() {
    let net = SplitNet::regular_grid(2, 3).unwrap();
    let prior = PriorConfig { trees: 3, nu: 0.4, ..PriorConfig::default() };
    let data = Data::new(vec![vec![0.5, 0.5]], vec![0.0]);
    let mcmc = McmcConfig { iterations: 100_000, burnin: 1000, likelihood: false, seed: 5, ..McmcConfig::default() };
    let post = fit(&data, &ModelSpec::regression(), &net, &prior, &mcmc, &[]).unwrap();
    let leaves: Vec<f64> = post.leaves.iter().map(|&k| k as f64).collect();
    let eta0: Vec<f64> = post.eta.iter().map(|e| e[0]).collect();
    let sig: Vec<f64> = post.sigma2.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let m = 100_000;
    let (mut pl, mut pe) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for _ in 0..m {
        let eta = sample_eta(2, &prior, &mut rng);
        pl.push((0..3).map(|_| sample_tree(&eta, &prior, &net, &mut rng).num_leaves() as f64).sum::<f64>());
        pe.push(eta[0]);
    }
    for (name, chain, reference) in [("leaves", &leaves, &pl), ("eta0", &eta0, &pe)] {
        let mc = chain.iter().sum::<f64>() / chain.len() as f64;
        let mr = reference.iter().sum::<f64>() / reference.len() as f64;
        let vr = reference.iter().map(|v| (v - mr) * (v - mr)).sum::<f64>() / (m as f64 - 1.0);
        let se = (batch_se(chain, 50).powi(2) + vr / m as f64).sqrt();
        assert!((mc - mr).abs() < 4.0 * se, "{name}: {mc} vs {mr} (se {se})");
    }
    // IG(3, 1) has mean 1/2.
    let ms = sig.iter().sum::<f64>() / sig.len() as f64;
    assert!((ms - 0.5).abs() < 4.0 * batch_se(&sig, 50), "sigma2 mean {ms}");
}

#[test]
fn truncated_runs_respect_bounds() {
    let net = SplitNet::regular_grid(1, 8).unwrap();
    let x = uniform_points(60, 1, 3);
    let y: Vec<f64> = x.iter().map(|v| 5.0 * v[0]).collect();
    let tr = Truncation { c1: 0.2, c2: 4.0 };
    let model = ModelSpec::regression_random(tr);
    let prior = PriorConfig { trees: 5, ..PriorConfig::default() };
    let mcmc = McmcConfig { iterations: 400, burnin: 100, keep_ensembles: true, seed: 2, ..McmcConfig::default() };
    let post = fit(&Data::new(x, y), &model, &net, &prior, &mcmc, &[]).unwrap();
    for e in &post.ensembles {
        for t in 0..e.len() {
            assert!(e.leaf_heights(t).iter().all(|h| h.abs() <= tr.c1));
        }
    }
    assert!(post.sigma2.iter().all(|&s| (1.0 / tr.c2..=tr.c2).contains(&s)));
    assert!(post.stats.sigma_truncation.proposed > 0);
}

#[test]
fn classification_predictions_in_unit_interval() {
    let net = SplitNet::regular_grid(1, 8).unwrap();
    let x = uniform_points(200, 1, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y: Vec<f64> = x.iter().map(|v| (rng.random::<f64>() < if v[0] > 0.5 { 0.9 } else { 0.1 }) as u8 as f64).collect();
    let model = ModelSpec::new(ModelKind::Classification);
    let prior = PriorConfig { trees: 10, ..PriorConfig::default() };
    let mcmc = McmcConfig { iterations: 500, burnin: 500, seed: 3, ..McmcConfig::default() };
    let pts = vec![vec![0.1], vec![0.3], vec![0.7], vec![0.9]];
    let post = fit(&Data::new(x, y), &model, &net, &prior, &mcmc, &pts).unwrap();
    assert!(post.predictions.iter().flatten().all(|&v| v > 0.0 && v < 1.0));
    let s = summarize(&post.predictions).unwrap();
    assert!(s.mean[0] < 0.35 && s.mean[3] > 0.65, "{:?}", s.mean);
    let rate = post.stats.height.rate();
    assert!(rate > 0.1 && rate < 0.8, "random-walk acceptance {rate}");
}

#[test]
fn density_draws_integrate_to_one() {
    let net = SplitNet::regular_grid(2, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // Four fifths of the mass on the left half.
    let x: Vec<Vec<f64>> = (0..300)
        .map(|_| {
            let half = if rng.random::<f64>() < 0.8 { 0.0 } else { 0.5 };
            vec![half + 0.5 * rng.random::<f64>(), rng.random()]
        })
        .collect();
    let model = ModelSpec::new(ModelKind::Density);
    for trees in [1, 4] {
        let prior = PriorConfig { trees, ..PriorConfig::default() };
        let mcmc = McmcConfig { iterations: 300, burnin: 300, keep_ensembles: true, seed: 1, ..McmcConfig::default() };
        let pts = vec![vec![0.25, 0.5], vec![0.75, 0.5]];
        let post = fit(&Data::new(x.clone(), vec![]), &model, &net, &prior, &mcmc, &pts).unwrap();
        for e in post.ensembles.iter().step_by(10) {
            let z = e.normalizer_exact();
            let grid = e.normalizer_grid(64) / z;
            assert!((grid - 1.0).abs() < 1e-3, "{grid}");
        }
        for (lz, e) in post.log_normalizer.iter().zip(&post.ensembles) {
            assert!((lz.exp() / e.normalizer_exact() - 1.0).abs() < 1e-9);
        }
        let s = summarize(&post.predictions).unwrap();
        assert!(s.mean[0] > s.mean[1], "{:?}", s.mean);
    }
}

#[test]
fn chains_are_reproducible() {
    let net = SplitNet::regular_grid(2, 8).unwrap();
    let x = uniform_points(50, 2, 1);
    let y: Vec<f64> = x.iter().map(|v| v[0] + v[1]).collect();
    let data = Data::new(x, y);
    let prior = PriorConfig { trees: 5, ..PriorConfig::default() };
    let mcmc = McmcConfig { iterations: 50, burnin: 50, seed: 7, ..McmcConfig::default() };
    let pts = uniform_points(5, 2, 2);
    let a = fit(&data, &ModelSpec::regression(), &net, &prior, &mcmc, &pts).unwrap();
    let b = fit(&data, &ModelSpec::regression(), &net, &prior, &mcmc, &pts).unwrap();
    assert_eq!(a.predictions, b.predictions);
    assert_eq!(a.sigma2, b.sigma2);
    let c = fit(&data, &ModelSpec::regression(), &net, &prior, &McmcConfig { stream: 1, ..mcmc }, &pts).unwrap();
    assert_ne!(a.sigma2, c.sigma2);
    let merged = fit_chains(&data, &ModelSpec::regression(), &net, &prior, &mcmc, &pts, 3).unwrap();
    assert_eq!(merged.draws(), 150);
    assert_eq!(&merged.sigma2[..50], &a.sigma2[..]);
}

#[test]
fn fit_rejects_bad_input() {
    let net = SplitNet::regular_grid(1, 4).unwrap();
    let prior = PriorConfig { trees: 2, ..PriorConfig::default() };
    let mcmc = McmcConfig::default();
    let run = |d: Data, kind: ModelKind| fit(&d, &ModelSpec::new(kind), &net, &prior, &mcmc, &[]);
    assert!(run(Data::default(), ModelKind::RegressionFixed).is_err());
    assert!(run(Data::new(vec![vec![1.2]], vec![0.0]), ModelKind::RegressionFixed).is_err());
    assert!(run(Data::new(vec![vec![0.2]], vec![0.5]), ModelKind::Classification).is_err());
}

fn geweke_setup() -> (ModelSpec, SplitNet, PriorConfig, McmcConfig) {
    let net = SplitNet::regular_grid(2, 2).unwrap();
    let prior = PriorConfig { trees: 2, nu: 0.45, ..PriorConfig::default() };
    let mcmc = McmcConfig { eta: EtaMode::Dirichlet, check_every: 0, ..McmcConfig::default() };
    (ModelSpec::regression(), net, prior, mcmc)
}

const STATS: [GewekeStat; 5] =
    [GewekeStat::Sigma2, GewekeStat::Leaves0, GewekeStat::TotalLeaves, GewekeStat::MeanHeight, GewekeStat::Eta0];

#[test]
fn geweke_zero_sweeps_is_trivial() {
    let (model, net, prior, mcmc) = geweke_setup();
    let cfg = GewekeConfig { rounds: 2000, sweeps_per_round: 0, ..GewekeConfig::default() };
    let r = geweke_joint_test(&model, &net, &prior, &mcmc, &STATS, &cfg).unwrap();
    assert!(r.max_abs_z() < 4.0, "{r:?}");
}

#[test]
fn geweke_passes_and_detects_injected_bug() {
    let (model, net, prior, mcmc) = geweke_setup();
    let cfg = GewekeConfig { rounds: 10_000, ..GewekeConfig::default() };
    let good = geweke_joint_test(&model, &net, &prior, &mcmc, &STATS, &cfg).unwrap();
    assert!(good.max_abs_z() < 4.0, "{good:#?}");
    let bad = geweke_joint_test(&model, &net, &prior, &McmcConfig { fault: Some(Fault::SigmaScale), ..mcmc }, &STATS, &cfg).unwrap();
    assert!(bad.max_abs_z() > 6.0, "{bad:#?}");
}

#[test]
fn geweke_classification() {
    let net = SplitNet::regular_grid(2, 2).unwrap();
    let prior = PriorConfig { trees: 2, nu: 0.45, ..PriorConfig::default() };
    let mcmc = McmcConfig { check_every: 0, ..McmcConfig::default() };
    let model = ModelSpec::new(ModelKind::Classification);
    let cfg = GewekeConfig { rounds: 10_000, ..GewekeConfig::default() };
    let stats = [GewekeStat::Leaves0, GewekeStat::TotalLeaves, GewekeStat::MeanHeight, GewekeStat::Eta0];
    let r = geweke_joint_test(&model, &net, &prior, &mcmc, &stats, &cfg).unwrap();
    assert!(r.max_abs_z() < 4.0, "{r:#?}");
}

#[test]
fn geweke_truncated_regression() {
    let (_, net, prior, mcmc) = geweke_setup();
    let model = ModelSpec::regression_random(Truncation { c1: 0.5, c2: 5.0 });
    let cfg = GewekeConfig { rounds: 10_000, seed: 1, ..GewekeConfig::default() };
    let r = geweke_joint_test(&model, &net, &prior, &mcmc, &STATS, &cfg).unwrap();
    assert!(r.max_abs_z() < 4.0, "{r:#?}");
}

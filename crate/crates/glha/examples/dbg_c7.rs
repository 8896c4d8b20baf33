use glha::cascade::{
    evaluate_cascade, train_cascade, CascadeConfig, CascadeModel, Init, PostProcess, TrainOptions,
};
use glha::prior::{PriorModel, DEFAULT_BINS};
use glha::synth::{generate_pair, pair_rng, CorrespondencePair, SceneConfig};
use std::time::Instant;

fn dataset(n_pairs: usize, n: usize, rate: f64, seed: u64) -> Vec<CorrespondencePair> {
    let scene = SceneConfig { points_per_pair: n, inlier_rate: rate, ..SceneConfig::default() };
    (0..n_pairs)
        .map(|k| generate_pair(&mut pair_rng(seed, k as u64), &scene, &format!("p{k}")).unwrap())
        .collect()
}

fn fit_prior(pairs: &[CorrespondencePair]) -> PriorModel {
    let (mut inl, mut out) = (Vec::new(), Vec::new());
    for p in pairs {
        for (&r, &l) in p.ratios.iter().zip(&p.labels) {
            if l { inl.push(r) } else { out.push(r) }
        }
    }
    PriorModel::fit(&inl, &out, DEFAULT_BINS).unwrap()
}

fn cascade_cfg(iters: usize, eta: Vec<f64>, seed: u64) -> CascadeConfig {
    CascadeConfig {
        channels: 16, feature_layers: 12, refine_layers: 3, refinement_modules: 2,
        guidance: vec![0.3, 0.25, 0.2], eta, eta_reg: 0.1, warmup_iters: 300,
        ca_groups: 4, ca_reduction: 4, batch_size: 16, iters, seed,
        ..CascadeConfig::default()
    }
}

fn control_cfg(iters: usize, seed: u64) -> CascadeConfig {
    CascadeConfig {
        channels: 16, feature_layers: 18, refine_layers: 3, refinement_modules: 0,
        guidance: vec![0.2], eta: vec![], eta_reg: 0.1, warmup_iters: 300,
        ca_groups: 4, ca_reduction: 4, batch_size: 16, iters, seed,
        ..CascadeConfig::default()
    }
}

fn run(label: &str, cfg: &CascadeConfig, prior: &PriorModel, train: &[CorrespondencePair], test: &[CorrespondencePair]) {
    let mut model = CascadeModel::new(cfg, Init::Seeded(cfg.seed)).unwrap();
    let t0 = Instant::now();
    let _ = train_cascade(&mut model, prior, train, &[], &TrainOptions::default()).unwrap();
    let ev = evaluate_cascade(&model, prior, test, &PostProcess::WeightedEightPoint).unwrap();
    println!(
        "[{label}] stageP {:?} P {:.4} R {:.4} F1 {:.4} Fg {:.4} ({:.1}s)",
        ev.per_stage.iter().map(|s| format!("{:.3}", s.precision)).collect::<Vec<_>>(),
        ev.precision, ev.recall, ev.f_one, ev.f_guided, t0.elapsed().as_secs_f64()
    );
}

fn main() {
    let t_all = Instant::now();

    // Arm A: original data (rate 0.3), 3000 iters.
    let train_a = dataset(400, 256, 0.3, 7021);
    let test_a = dataset(150, 256, 0.3, 7022);
    let prior_a = fit_prior(&train_a);
    run("A cas 3000 r.3", &cascade_cfg(3000, vec![0.1, 0.1], 1), &prior_a, &train_a, &test_a);
    run("A ctl 3000 r.3", &control_cfg(3000, 1), &prior_a, &train_a, &test_a);

    // Arm B: harder data (rate 0.2), 3000 iters.
    let train_b = dataset(400, 256, 0.2, 7031);
    let test_b = dataset(150, 256, 0.2, 7032);
    let prior_b = fit_prior(&train_b);
    run("B cas 3000 r.2", &cascade_cfg(3000, vec![0.1, 0.1], 1), &prior_b, &train_b, &test_b);
    run("B ctl 3000 r.2", &control_cfg(3000, 1), &prior_b, &train_b, &test_b);

    // Arm C: stronger intermediate supervision (diagnostic only), rate 0.3.
    run("C cas eta.3 3000 r.3", &cascade_cfg(3000, vec![0.3, 0.3], 1), &prior_a, &train_a, &test_a);

    println!("total {:.1} min", t_all.elapsed().as_secs_f64() / 60.0);
}

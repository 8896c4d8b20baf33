use glha::cascade::{train_cascade, CascadeConfig, CascadeModel, Init, TrainOptions};
use glha::prior::{PriorModel, DEFAULT_BINS};
use glha::synth::{generate_pair, pair_rng, SceneConfig};
use std::time::Instant;

fn bench(label: &str, cfg: &CascadeConfig, n: usize, rate: f64) {
    let scene = SceneConfig { points_per_pair: n, inlier_rate: rate, ..SceneConfig::default() };
    let pairs: Vec<_> = (0..32)
        .map(|k| generate_pair(&mut pair_rng(7, k), &scene, &format!("p{k}")).unwrap())
        .collect();
    let (mut inl, mut out) = (Vec::new(), Vec::new());
    for p in &pairs {
        for (&r, &l) in p.ratios.iter().zip(&p.labels) {
            if l { inl.push(r) } else { out.push(r) }
        }
    }
    let prior = PriorModel::fit(&inl, &out, DEFAULT_BINS).unwrap();
    let mut model = CascadeModel::new(cfg, Init::Seeded(1)).unwrap();
    let t0 = Instant::now();
    let _ = train_cascade(&mut model, &prior, &pairs, &[], &TrainOptions { eval_every: cfg.iters, ..Default::default() }).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("{label}: {:.0} ms/iter -> {:.1} min per 5k iters", 1000.0 * dt / cfg.iters as f64, dt / cfg.iters as f64 * 5000.0 / 60.0);
}

fn main() {
    let single = |c: usize, fl: usize, g: usize| CascadeConfig {
        channels: c, feature_layers: fl, refine_layers: 3, refinement_modules: 0,
        guidance: vec![1.0], eta: vec![], warmup_iters: 2, ca_groups: g, ca_reduction: 4,
        batch_size: 16, iters: 10, seed: 1, ..CascadeConfig::default()
    };
    bench("single C=32 12L N=512", &single(32, 12, 8), 512, 0.1);
    bench("single C=16  6L N=512", &single(16, 6, 4), 512, 0.1);
    bench("single C=16  4L N=512", &single(16, 4, 4), 512, 0.1);
    let cascade = CascadeConfig {
        channels: 16, feature_layers: 12, refine_layers: 3, refinement_modules: 2,
        guidance: vec![0.3, 0.25, 0.2], eta: vec![0.1, 0.1], warmup_iters: 2, ca_groups: 4, ca_reduction: 4,
        batch_size: 16, iters: 10, seed: 1, ..CascadeConfig::default()
    };
    bench("cascade C=16 12+2x3 N=256", &cascade, 256, 0.3);
    let control = CascadeConfig {
        channels: 16, feature_layers: 18, refine_layers: 3, refinement_modules: 0,
        guidance: vec![0.2], eta: vec![], warmup_iters: 2, ca_groups: 4, ca_reduction: 4,
        batch_size: 16, iters: 10, seed: 1, ..CascadeConfig::default()
    };
    bench("control C=16 18L N=256", &control, 256, 0.3);
}

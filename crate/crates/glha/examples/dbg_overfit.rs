use glha::cascade::{train_cascade, CascadeConfig, CascadeModel, Init, TrainOptions};
use glha::prior::{PriorModel, DEFAULT_BINS};
use glha::synth::{generate_pair, pair_rng, SceneConfig};
use std::time::Instant;

fn main() {
    let scene = SceneConfig { points_per_pair: 64, inlier_rate: 0.4, ..SceneConfig::default() };
    let pairs: Vec<_> = (0..4)
        .map(|k| generate_pair(&mut pair_rng(7, k), &scene, &format!("p{k}")).unwrap())
        .collect();
    let (mut inl, mut out) = (Vec::new(), Vec::new());
    for p in &pairs {
        for (&r, &l) in p.ratios.iter().zip(&p.labels) {
            if l { inl.push(r) } else { out.push(r) }
        }
    }
    let prior = PriorModel::fit(&inl, &out, DEFAULT_BINS).unwrap();
    let cfg = CascadeConfig {
        channels: 16,
        feature_layers: 2,
        refine_layers: 1,
        refinement_modules: 1,
        guidance: vec![0.3, 0.2],
        eta: vec![0.1],
        warmup_iters: 100,
        ca_groups: 4,
        ca_reduction: 4,
        batch_size: 4,
        iters: 600,
        seed: 1,
        ..CascadeConfig::default()
    };
    let mut model = CascadeModel::new(&cfg, Init::Seeded(1)).unwrap();
    let t0 = Instant::now();
    let report = train_cascade(&mut model, &prior, &pairs, &pairs, &TrainOptions { eval_every: 100, ..Default::default() }).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    for c in &report.curves {
        println!("iter {:4}  loss {:.4}  reg {:.4}  lam {:?}  val P {:.3} R {:.3} F {:?}",
            c.iter, c.loss_total, c.loss_reg,
            c.lambda_stages.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>(),
            c.val_precision, c.val_recall,
            c.val_stage_f.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>());
    }
    println!("total {:.1}s  ({:.1} ms/iter at batch 4, N=64)", dt, 1000.0 * dt / 600.0);
}

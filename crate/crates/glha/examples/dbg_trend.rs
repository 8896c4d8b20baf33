use glha::cascade::{
    evaluate_cascade, train_cascade, CascadeConfig, CascadeModel, Init, PostProcess, TrainOptions,
};
use glha::guided::LossKind;
use glha::prior::{PriorModel, DEFAULT_BINS};
use glha::ransac::{ransac_essential, RansacConfig};
use glha::epipolar::{map_at, pose_error, recover_pose};
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

fn main() {
    let t_all = Instant::now();

    // ---- criterion 5 sniff: guided(n=1) vs IB-CE at rate 0.1 ----
    let train = dataset(400, 512, 0.1, 7001);
    let test = dataset(200, 512, 0.1, 7002);
    let prior = fit_prior(&train);
    for (label, loss) in [("guided", LossKind::Guided), ("ibce", LossKind::InstanceBalanced)] {
        let cfg = CascadeConfig {
            channels: 16, feature_layers: 6, refine_layers: 1, refinement_modules: 0,
            guidance: vec![1.0], eta: vec![], eta_reg: 0.0, warmup_iters: 0,
            ca_groups: 4, ca_reduction: 4, batch_size: 16, iters: 1500, seed: 1,
            ..CascadeConfig::default()
        };
        let mut model = CascadeModel::new(&cfg, Init::Seeded(1)).unwrap();
        let t0 = Instant::now();
        let rep = train_cascade(&mut model, &prior, &train, &[], &TrainOptions { loss, eval_every: 1500 }).unwrap();
        let ev = evaluate_cascade(&model, &prior, &test, &PostProcess::WeightedEightPoint).unwrap();
        println!("[c5 {label}] P {:.4} R {:.4} |P-R| {:.4} F1 {:.4} loss {:.4} ({:.1}s)",
            ev.precision, ev.recall, (ev.precision - ev.recall).abs(), ev.f_one,
            rep.curves.last().unwrap().loss_total, t0.elapsed().as_secs_f64());
    }

    // ---- criterion 6 sniff: guidance diagonal at rate 0.15 ----
    let train6 = dataset(600, 256, 0.15, 7011);
    let test6 = dataset(200, 256, 0.15, 7012);
    let prior6 = fit_prior(&train6);
    let mut frontier = Vec::new();
    for n in [0.5, 1.0, 2.0] {
        let cfg = CascadeConfig {
            channels: 16, feature_layers: 4, refine_layers: 1, refinement_modules: 0,
            guidance: vec![n], eta: vec![], eta_reg: 0.0, warmup_iters: 0,
            ca_groups: 4, ca_reduction: 4, batch_size: 16, iters: 1500, seed: 1,
            ..CascadeConfig::default()
        };
        let mut model = CascadeModel::new(&cfg, Init::Seeded(1)).unwrap();
        let t0 = Instant::now();
        let _ = train_cascade(&mut model, &prior6, &train6, &[], &TrainOptions { loss: LossKind::Guided, eval_every: 1500 }).unwrap();
        let ev = evaluate_cascade(&model, &prior6, &test6, &PostProcess::WeightedEightPoint).unwrap();
        println!("[c6 n={n}] P {:.4} R {:.4} F0.5 {:.4} F1 {:.4} F2 {:.4} ({:.1}s)",
            ev.precision, ev.recall, ev.f_half, ev.f_one, ev.f_two, t0.elapsed().as_secs_f64());
        frontier.push((n, ev.f_half, ev.f_one, ev.f_two));
    }
    for (col, name) in [(1usize, "F0.5"), (2, "F1"), (3, "F2")] {
        let pick = |t: &(f64, f64, f64, f64)| match col { 1 => t.1, 2 => t.2, _ => t.3 };
        let best = frontier.iter().max_by(|a, b| pick(a).total_cmp(&pick(b))).unwrap().0;
        println!("[c6 diag] best {name} is n={best}");
    }

    // ---- criterion 7/8 sniff: cascade vs 18L control at rate 0.3 ----
    let train7 = dataset(400, 256, 0.3, 7021);
    let test7 = dataset(150, 256, 0.3, 7022);
    let prior7 = fit_prior(&train7);
    let cas_cfg = CascadeConfig {
        channels: 16, feature_layers: 12, refine_layers: 3, refinement_modules: 2,
        guidance: vec![0.3, 0.25, 0.2], eta: vec![0.1, 0.1], eta_reg: 0.1, warmup_iters: 300,
        ca_groups: 4, ca_reduction: 4, batch_size: 16, iters: 1500, seed: 1,
        ..CascadeConfig::default()
    };
    let mut cas = CascadeModel::new(&cas_cfg, Init::Seeded(1)).unwrap();
    let t0 = Instant::now();
    let _ = train_cascade(&mut cas, &prior7, &train7, &[], &TrainOptions::default()).unwrap();
    let ev_cas = evaluate_cascade(&cas, &prior7, &test7, &PostProcess::WeightedEightPoint).unwrap();
    println!("[c7 cascade] stageP {:?} finalP {:.4} R {:.4} Fg {:.4} fallback {:?} ({:.1}s)",
        ev_cas.per_stage.iter().map(|s| format!("{:.4}", s.precision)).collect::<Vec<_>>(),
        ev_cas.precision, ev_cas.recall, ev_cas.f_guided, ev_cas.fallback_rate, t0.elapsed().as_secs_f64());
    let ctl_cfg = CascadeConfig {
        channels: 16, feature_layers: 18, refine_layers: 3, refinement_modules: 0,
        guidance: vec![0.2], eta: vec![], eta_reg: 0.1, warmup_iters: 300,
        ca_groups: 4, ca_reduction: 4, batch_size: 16, iters: 1500, seed: 1,
        ..CascadeConfig::default()
    };
    let mut ctl = CascadeModel::new(&ctl_cfg, Init::Seeded(1)).unwrap();
    let t0 = Instant::now();
    let _ = train_cascade(&mut ctl, &prior7, &train7, &[], &TrainOptions::default()).unwrap();
    let ev_ctl = evaluate_cascade(&ctl, &prior7, &test7, &PostProcess::WeightedEightPoint).unwrap();
    println!("[c7 control] P {:.4} R {:.4} Fg {:.4} ({:.1}s)", ev_ctl.precision, ev_ctl.recall, ev_ctl.f_guided, t0.elapsed().as_secs_f64());
    println!("[c7 verdict] cascade Fg {:.4} vs control Fg {:.4}; final>coarse: {}",
        ev_cas.f_guided, ev_ctl.f_guided,
        ev_cas.per_stage.last().unwrap().precision > ev_cas.per_stage[0].precision);

    // ---- criterion 8 sniff: classifier+RANSAC vs raw RANSAC mAP@5 ----
    let ev_cr = evaluate_cascade(&cas, &prior7, &test7, &PostProcess::Ransac(RansacConfig::default())).unwrap();
    let mut raw_errs = Vec::new();
    for (k, p) in test7.iter().enumerate() {
        let cfg = RansacConfig { seed: 42u64.wrapping_add(k as u64), ..RansacConfig::default() };
        let err = match ransac_essential(&p.coords, &cfg) {
            Ok(res) => match recover_pose(&res.essential, &p.coords) {
                Ok(est) => { let e = pose_error(&est.rotation, &est.translation, &p.r_gt, &p.t_gt); e.rot_deg.max(e.trans_deg) }
                Err(_) => 180.0,
            },
            Err(_) => 180.0,
        };
        raw_errs.push(err);
    }
    println!("[c8] classifier+ransac mAP@5 {:.4} vs raw ransac mAP@5 {:.4}", ev_cr.map5, map_at(&raw_errs, 5));

    println!("total {:.1} min", t_all.elapsed().as_secs_f64() / 60.0);
}

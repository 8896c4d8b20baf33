//! End-to-end training on a small synthetic split: fit the ratio prior,
//! train a compact staged classifier with the balance-guided loss, and
//! evaluate it on held-out pairs. Finishes in well under a minute.
//!
//!     cargo run --example train_tiny

use glha::cascade::{
    evaluate_cascade, train_cascade, CascadeConfig, CascadeModel, Init, PostProcess,
    TrainOptions,
};
use glha::guided::LossKind;
use glha::prior::{PriorModel, DEFAULT_BINS};
use glha::ransac::RansacConfig;
use glha::synth::{generate_dataset, read_dataset, DatasetConfig, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Data: 40 pairs of 128 correspondences at 40% inliers.
    let data_cfg = DatasetConfig {
        scene: SceneConfig {
            points_per_pair: 128,
            inlier_rate: 0.4,
            ..SceneConfig::default()
        },
        n_pairs: 40,
        split: (0.75, 0.1, 0.15),
        seed: 17,
    };
    let dir = std::env::temp_dir().join("glha_example_train");
    let paths = generate_dataset(&data_cfg, &dir)?;
    let train = read_dataset(&paths.train)?;
    let val = read_dataset(&paths.val)?;
    let test = read_dataset(&paths.test)?;
    println!(
        "dataset: {} train / {} val / {} test pairs",
        train.len(),
        val.len(),
        test.len()
    );

    // Prior: histogram densities of the match ratio, fitted on train labels.
    let mut inl = Vec::new();
    let mut out = Vec::new();
    for p in &train {
        for (&r, &l) in p.ratios.iter().zip(&p.labels) {
            if l {
                inl.push(r)
            } else {
                out.push(r)
            }
        }
    }
    let prior = PriorModel::fit(&inl, &out, DEFAULT_BINS)?;

    // Model: one scored stage plus one refinement module, 16 channels.
    let config = CascadeConfig {
        channels: 16,
        feature_layers: 3,
        refine_layers: 1,
        refinement_modules: 1,
        guidance: vec![0.3, 0.2],
        eta: vec![0.1],
        eta_reg: 0.1,
        warmup_iters: 100,
        ca_groups: 4,
        ca_reduction: 4,
        batch_size: 8,
        iters: 400,
        seed: 17,
        ..CascadeConfig::default()
    };
    config.validate()?;
    let mut model = CascadeModel::new(&config, Init::Seeded(17))?;
    println!(
        "model: {} stages, {} trainable scalars",
        config.stages(),
        model.params.trainable_scalars()
    );

    let opts = TrainOptions {
        loss: LossKind::Guided,
        eval_every: 100,
    };
    let report = train_cascade(&mut model, &prior, &train, &val, &opts)?;
    println!("\n iter   total loss   final-stage loss   val P     val R");
    for c in &report.curves {
        println!(
            "{:>5}   {:>10.4}   {:>16.4}   {:>6.3}   {:>6.3}",
            c.iter,
            c.loss_total,
            c.loss_stages.last().copied().unwrap_or(f64::NAN),
            c.val_precision,
            c.val_recall
        );
    }

    // Held-out evaluation, with both pose back-ends: the soft
    // confidence-weighted least-squares fit, and a robust refit restricted
    // to the points the classifier kept.
    let eval = evaluate_cascade(&model, &prior, &test, &PostProcess::WeightedEightPoint)?;
    let eval_r = evaluate_cascade(
        &model,
        &prior,
        &test,
        &PostProcess::Ransac(RansacConfig { seed: 17, ..RansacConfig::default() }),
    )?;
    println!("\nheld-out test ({} pairs):", test.len());
    println!("  precision {:.4}  recall {:.4}  F1 {:.4}", eval.precision, eval.recall, eval.f_one);
    for (s, st) in eval.per_stage.iter().enumerate() {
        println!(
            "  stage {s}: precision {:.4} recall {:.4} (guided toward n = {})",
            st.precision, st.recall, eval.guidance[s]
        );
    }
    println!(
        "\npose quality: weighted fit mAP@10deg {:.3}; robust refit on predictions mAP@10deg {:.3}",
        eval.map10, eval_r.map10
    );
    println!("(a briefly trained model's soft weights still sit near the noise floor;");
    println!(" the robust refit on its predicted inliers is what the pipeline ships)");
    Ok(())
}

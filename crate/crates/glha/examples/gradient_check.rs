//! Verifies reverse-mode gradients against central finite differences, first
//! for a small op composition on the tape, then for the full staged
//! classifier differentiated with respect to its own parameters.
//!
//!     cargo run --example gradient_check

use glha::autodiff::{grad_check, Mode, Tape, Tensor};
use glha::cascade::{CascadeConfig, CascadeModel, Init};
use glha::epipolar::Correspondence;
use glha::synth::{generate_pair, pair_rng, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Op-level: row softmax feeding an elementwise mix, reduced to a scalar.
    let report = grad_check(
        |tape, ids| {
            let sm = tape.softmax_rows(ids[0])?;
            let prod = tape.mul(sm, ids[1])?;
            tape.sum_all(prod)
        },
        &[
            (
                "logits",
                Tensor::from_vec(3, 4, (0..12).map(|i| 0.3 * i as f64 - 1.8).collect()),
            ),
            (
                "mix",
                Tensor::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.7).sin()).collect()),
            ),
        ],
        12,
        1e-5,
        1,
    )?;
    println!(
        "softmax mix      {} probes, max rel err {:.3e} -> {}",
        report.checked,
        report.max_rel_err,
        verdict(report.passes(1e-6))
    );

    // Same machinery on a deeper chain with a normalization in the middle.
    let report = grad_check(
        |tape, ids| {
            let lin = tape.linear(ids[0], ids[1], Some(ids[2]))?;
            let act = tape.tanh(lin);
            let sm = tape.softmax_rows(act)?;
            let lg = tape.log(sm)?;
            tape.mean_all(lg)
        },
        &[
            (
                "x",
                Tensor::from_vec(6, 3, (0..18).map(|i| (i as f64 * 1.3).cos()).collect()),
            ),
            (
                "w",
                Tensor::from_vec(3, 5, (0..15).map(|i| 0.1 * i as f64 - 0.7).collect()),
            ),
            ("b", Tensor::row_from(&[0.1, -0.2, 0.3, 0.0, -0.1])),
        ],
        10,
        1e-5,
        2,
    )?;
    println!(
        "linear/log-soft  {} probes, max rel err {:.3e} -> {}",
        report.checked,
        report.max_rel_err,
        verdict(report.passes(1e-6))
    );

    // Model-level: the staged classifier's gradient with respect to its own
    // parameters, collected through the name-to-leaf binding a forward pass
    // exposes, against finite differences on the parameter store itself.
    let config = CascadeConfig {
        channels: 8,
        feature_layers: 1,
        refine_layers: 1,
        refinement_modules: 1,
        guidance: vec![0.3, 0.2],
        eta: vec![0.1],
        ca_groups: 2,
        ca_reduction: 4,
        ..CascadeConfig::default()
    };
    config.validate()?;
    let mut model = CascadeModel::new(&config, Init::Seeded(3))?;

    let scene = SceneConfig {
        points_per_pair: 24,
        inlier_rate: 0.6,
        ..SceneConfig::default()
    };
    let mut rng = pair_rng(5, 0);
    let pair = generate_pair(&mut rng, &scene, "probe")?;

    // Reverse-mode gradients for every parameter in one pass.
    let mut tape = Tape::new(Mode::Train);
    let pass = model.forward_on_tape(&mut tape, &pair.coords, &pair.ratios, false)?;
    let out = scalar_head(&mut tape, *pass.nodes.stage_logits.last().unwrap())?;
    tape.backward(out, 1.0)?;

    let names: Vec<String> = model
        .params
        .iter()
        .filter(|e| e.trainable)
        .map(|e| e.name.clone())
        .collect();
    let h = 1e-5;
    let mut worst = (0.0_f64, String::new());
    let mut checked = 0;
    for name in names.iter().step_by(3) {
        let id = pass.binding[name];
        let ad = tape.grad(id).expect("trainable leaf has a gradient").clone();
        let coord = ad.numel() / 2; // one representative coordinate per tensor
        let base = model.params.get(name).unwrap().data()[coord];

        model.params.get_mut(name).unwrap().data_mut()[coord] = base + h;
        let up = eval_scalar(&model, &pair.coords, &pair.ratios)?;
        model.params.get_mut(name).unwrap().data_mut()[coord] = base - h;
        let dn = eval_scalar(&model, &pair.coords, &pair.ratios)?;
        model.params.get_mut(name).unwrap().data_mut()[coord] = base;

        let fd = (up - dn) / (2.0 * h);
        let a = ad.data()[coord];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        checked += 1;
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    println!(
        "full classifier  {checked} parameter tensors probed, max rel err {:.3e} (at '{}') -> {}",
        worst.0,
        worst.1,
        verdict(worst.0 < 1e-4)
    );
    Ok(())
}

/// Smooth scalar readout of the final-stage logits.
fn scalar_head(tape: &mut Tape, logits: glha::autodiff::NodeId) -> Result<glha::autodiff::NodeId, glha::autodiff::AdError> {
    let probs = tape.sigmoid(logits);
    tape.mean_all(probs)
}

fn eval_scalar(
    model: &CascadeModel,
    coords: &[Correspondence],
    prior: &[f64],
) -> Result<f64, Box<dyn std::error::Error>> {
    let mut tape = Tape::new(Mode::Train);
    let pass = model.forward_on_tape(&mut tape, coords, prior, false)?;
    let out = scalar_head(&mut tape, *pass.nodes.stage_logits.last().unwrap())?;
    Ok(tape.value(out).item())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISMATCH"
    }
}

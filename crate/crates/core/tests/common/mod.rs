#![allow(dead_code)]

use pushlearn::geometry::Planar2;
use pushlearn::metrics::{step_loss, step_loss_grad, NormStats};
use pushlearn::model::{
    combined_backward, combined_forward, CombinedModel, PredictionOutcome, PushInput,
};
use pushlearn::nn::{mlp_init, CONTACT_DIMS};
use pushlearn::physics::OnlineParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A model with Glorot weights and nonzero biases, plausible push-scale
/// statistics, and a random input/target pair.
pub fn random_instance(seed: u64) -> (CombinedModel, PushInput, PredictionOutcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mlp = mlp_init(seed, &CONTACT_DIMS);
    for layer in &mut mlp.layers {
        for b in &mut layer.biases {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    let norm = NormStats {
        input_mean: [
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.002..0.002),
            rng.random_range(-0.002..0.002),
        ],
        input_std: [
            rng.random_range(0.2..0.5),
            rng.random_range(0.2..0.5),
            rng.random_range(0.005..0.02),
            rng.random_range(0.005..0.02),
        ],
        dp_mean: [
            rng.random_range(-0.001..0.001),
            rng.random_range(-0.001..0.001),
        ],
        dp_std: rng.random_range(0.005..0.02),
        dw_mean: rng.random_range(-0.005..0.005),
        dw_std: rng.random_range(0.01..0.05),
    };
    let online = OnlineParams::from_h(
        Planar2::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)),
        rng.random_range(0.02..0.2),
    )
    .unwrap();
    let input = PushInput {
        p_r_o: Planar2::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)),
        u_r_o: Planar2::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02)),
    };
    let target = PredictionOutcome {
        dp_o: Planar2::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02)),
        dw_o: rng.random_range(-0.05..0.05),
    };
    (CombinedModel { mlp, online, norm }, input, target)
}

fn loss_at(
    model: &CombinedModel,
    input: &PushInput,
    target: &PredictionOutcome,
    flat: &[f64],
) -> f64 {
    let mut m = model.clone();
    let n = m.mlp.num_params();
    m.mlp.set_flat(&flat[..n]).unwrap();
    m.online = OnlineParams::from_array([flat[n], flat[n + 1], flat[n + 2]]);
    let (pred, _) = combined_forward(&m, input).unwrap();
    step_loss(&pred, target, &m.norm).total
}

pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst_rel: f64,
}

/// Central differences of the total step loss over every MLP weight and the
/// three online parameters, against the analytic backward pass.
pub fn check_combined_gradient(seed: u64) -> GradCheck {
    let (model, input, target) = random_instance(seed);
    let (pred, tape) = combined_forward(&model, &input).unwrap();
    let grads = combined_backward(&model, &tape, &step_loss_grad(&pred, &target, &model.norm));
    let mut analytic = grads.mlp.to_flat();
    analytic.extend(grads.online_array());
    let mut base = model.mlp.to_flat();
    base.extend(model.online.to_array());
    assert_eq!(base.len(), 695);

    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        worst_rel: 0.0,
    };
    for k in 0..base.len() {
        let step = 1e-6 * base[k].abs().max(1.0);
        let mut p = base.clone();
        p[k] += step;
        let fp = loss_at(&model, &input, &target, &p);
        p[k] = base[k] - step;
        let fm = loss_at(&model, &input, &target, &p);
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic[k];
        if a.abs() < 1e-8 && numeric.abs() < 1e-8 {
            out.skipped += 1;
            continue;
        }
        out.checked += 1;
        out.worst_rel = out
            .worst_rel
            .max((a - numeric).abs() / a.abs().max(numeric.abs()));
    }
    out
}

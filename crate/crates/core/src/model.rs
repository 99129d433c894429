//! The combined push predictor and the pure-network baseline.
//!
//! Combined dataflow for one input `(p_r_o, u_r_o)`:
//!
//! ```text
//! p_r_o + v --z-score--> MLP --de-normalize--> (c, u_c)
//!     --quasi-static push(h)--> (dCOM, dw) --(R(dw) - I) v--> (dp_o, dw)
//! ```
//!
//! The network runs in normalized units. Its four outputs are mapped back to
//! meters with the input statistics of `(p_r_o, u_r_o)`, because the physical
//! push model depends on absolute lengths through `h`.

use serde::{Deserialize, Serialize};

use crate::geometry::Planar2;
use crate::metrics::NormStats;
use crate::nn::{mlp_backward, mlp_forward, MlpParams, MlpTape};
use crate::physics::{
    correct_input_position, correct_output_motion, correct_output_motion_grad, physical_push,
    physical_push_grad, ContactState, OnlineParams, PhysicalOutcome, PhysicsError,
};

/// Robot position and motion in the object frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PushInput {
    pub p_r_o: Planar2,
    pub u_r_o: Planar2,
}

/// Object displacement and rotation in the object frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub dp_o: Planar2,
    pub dw_o: f64,
}

impl PredictionOutcome {
    pub fn is_finite(&self) -> bool {
        self.dp_o.is_finite() && self.dw_o.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinedModel {
    pub mlp: MlpParams,
    pub online: OnlineParams,
    pub norm: NormStats,
}

/// Intermediates of one [`combined_forward`] call.
#[derive(Clone, Debug)]
pub struct CombinedTape {
    mlp: MlpTape,
    contact: ContactState,
    h: f64,
    dh_drho: f64,
    physical: PhysicalOutcome,
    v: Planar2,
}

impl CombinedTape {
    /// Contact point and motion produced by the network, in meters.
    pub fn contact(&self) -> ContactState {
        self.contact
    }

    pub fn physical(&self) -> PhysicalOutcome {
        self.physical
    }
}

/// Gradients of a scalar loss with respect to both parameter groups.
#[derive(Clone, Debug)]
pub struct CombinedGrads {
    pub mlp: MlpParams,
    pub v: Planar2,
    pub rho: f64,
}

impl CombinedGrads {
    pub fn online_array(&self) -> [f64; 3] {
        [self.v.x, self.v.y, self.rho]
    }
}

fn z_score(x: f64, mean: f64, std: f64) -> f64 {
    (x - mean) / std
}

/// Network input for a COM-corrected robot position and motion.
fn network_input(norm: &NormStats, corrected: Planar2, u: Planar2) -> [f64; 4] {
    let raw = [corrected.x, corrected.y, u.x, u.y];
    std::array::from_fn(|i| z_score(raw[i], norm.input_mean[i], norm.input_std[i]))
}

pub fn combined_forward(
    model: &CombinedModel,
    input: &PushInput,
) -> Result<(PredictionOutcome, CombinedTape), PhysicsError> {
    let v = model.online.v;
    let corrected = correct_input_position(input.p_r_o, v);
    let z = network_input(&model.norm, corrected, input.u_r_o);
    let (out, mlp_tape) = mlp_forward(&model.mlp, &z);
    let m = &model.norm.input_mean;
    let s = &model.norm.input_std;
    let contact = ContactState {
        c: Planar2::new(out[0] * s[0] + m[0], out[1] * s[1] + m[1]),
        u_c: Planar2::new(out[2] * s[2] + m[2], out[3] * s[3] + m[3]),
    };
    let h = model.online.h();
    let physical = physical_push(&contact, h)?;
    let dp_o = correct_output_motion(physical.d_com, physical.d_omega, v);
    let pred = PredictionOutcome {
        dp_o,
        dw_o: physical.d_omega,
    };
    let tape = CombinedTape {
        mlp: mlp_tape,
        contact,
        h,
        dh_drho: model.online.dh_drho(),
        physical,
        v,
    };
    Ok((pred, tape))
}

/// Reverse pass given `d loss / d prediction`.
///
/// `v` collects gradient from both the input correction and the output
/// correction.
pub fn combined_backward(
    model: &CombinedModel,
    tape: &CombinedTape,
    loss_grad: &PredictionOutcome,
) -> CombinedGrads {
    let g_dp = loss_grad.dp_o;
    let motion = correct_output_motion_grad(tape.physical.d_com, tape.physical.d_omega, tape.v);
    let g_com = g_dp;
    let g_omega = loss_grad.dw_o + g_dp.dot(motion.d_omega);
    let dv = motion.d_v;
    let g_v_output = Planar2::new(
        dv[0][0] * g_dp.x + dv[1][0] * g_dp.y,
        dv[0][1] * g_dp.x + dv[1][1] * g_dp.y,
    );

    let jac = physical_push_grad(&tape.contact, tape.h).expect("h validated in forward pass");
    let g_in = jac.pullback(g_com, g_omega);
    let g_rho = g_in[4] * tape.dh_drho;

    let s = &model.norm.input_std;
    let g_out: Vec<f64> = (0..4).map(|i| g_in[i] * s[i]).collect();
    let (g_mlp, g_z) = mlp_backward(&model.mlp, &tape.mlp, &g_out);
    let g_v_input = Planar2::new(g_z[0] / s[0], g_z[1] / s[1]);

    CombinedGrads {
        mlp: g_mlp,
        v: g_v_input + g_v_output,
        rho: g_rho,
    }
}

/// Pure-network predictor mapping the normalized input straight to the
/// normalized outcome `(dp_x, dp_y, dw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineNn {
    pub mlp: MlpParams,
    pub norm: NormStats,
}

fn baseline_input(norm: &NormStats, input: &PushInput) -> [f64; 4] {
    network_input(norm, input.p_r_o, input.u_r_o)
}

fn baseline_decode(norm: &NormStats, out: &[f64]) -> PredictionOutcome {
    PredictionOutcome {
        dp_o: Planar2::new(
            out[0] * norm.dp_std + norm.dp_mean[0],
            out[1] * norm.dp_std + norm.dp_mean[1],
        ),
        dw_o: out[2] * norm.dw_std + norm.dw_mean,
    }
}

pub fn baseline_nn_forward(
    params: &MlpParams,
    norm: &NormStats,
    input: &PushInput,
) -> PredictionOutcome {
    let (out, _) = mlp_forward(params, &baseline_input(norm, input));
    baseline_decode(norm, &out)
}

impl BaselineNn {
    pub fn predict(&self, input: &PushInput) -> PredictionOutcome {
        baseline_nn_forward(&self.mlp, &self.norm, input)
    }

    /// Prediction plus the parameter gradient of the loss whose prediction
    /// gradient is produced by `loss_grad`.
    pub fn predict_with_grad(
        &self,
        input: &PushInput,
        loss_grad: impl FnOnce(&PredictionOutcome) -> PredictionOutcome,
    ) -> (PredictionOutcome, MlpParams) {
        let (out, tape) = mlp_forward(&self.mlp, &baseline_input(&self.norm, input));
        let pred = baseline_decode(&self.norm, &out);
        let g = loss_grad(&pred);
        let g_out = [
            g.dp_o.x * self.norm.dp_std,
            g.dp_o.y * self.norm.dp_std,
            g.dw_o * self.norm.dw_std,
        ];
        let (grads, _) = mlp_backward(&self.mlp, &tape, &g_out);
        (pred, grads)
    }
}

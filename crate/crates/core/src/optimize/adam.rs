use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates for bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }
}

/// One Adam update of `pixels` in place.
pub fn adam_step(
    state: &mut AdamState,
    pixels: &mut Tensor,
    grad: &Tensor,
    learning_rate: f64,
) -> Result<()> {
    ensure_same_shape("adam_step", pixels, grad)?;
    if state.first_moment.len() != pixels.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![state.first_moment.len()],
            rhs: pixels.shape().to_vec(),
        });
    }
    if let Some(i) = grad.data().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "adam_step gradient at index {i} (step {})",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - BETA1.powf(t);
    let bias2 = 1.0 - BETA2.powf(t);
    for (((x, &g), m), v) in pixels
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *x -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

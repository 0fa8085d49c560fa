use serde::{Deserialize, Serialize};

use super::FeatureError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one entry per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        AdamMoments { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam update at step `t` (1-based), in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    t: u64,
    lr: f64,
) -> Result<(), FeatureError> {
    if t == 0 {
        return Err(FeatureError::NonFinite("adam step count must start at 1".into()));
    }
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), moments.m.len());
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut moments.m).zip(&mut moments.v) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        if !p.is_finite() {
            return Err(FeatureError::NonFinite(format!("adam produced {p} from gradient {g}")));
        }
    }
    Ok(())
}

use crate::error::{Error, Result};

/// Heavy-ball momentum step: `v ← μ·v + g`, `p ← p − lr·v`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64, momentum: f64, velocity: &mut [f64]) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape {
            op: "sgd_step",
            left: vec![params.len()],
            right: vec![grads.len(), velocity.len()],
        });
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

use crate::error::{PdaError, Result};

/// Momentum used for every parameter group.
pub const MOMENTUM: f64 = 0.9;
pub const LR_GAMMA: f64 = 0.0002;
pub const LR_ALPHA: f64 = 0.75;

/// Classical momentum: `v <- momentum * v + g; theta <- theta - lr * v`.
///
/// Nothing is written when any updated value would be non-finite.
pub fn apply_sgd_momentum(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(PdaError::Shape(format!(
            "optimizer got {} params, {} grads, {} velocity entries",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    let finite = params
        .iter()
        .zip(grads)
        .zip(velocity.iter())
        .all(|((p, g), v)| {
            let v = momentum * v + g;
            v.is_finite() && (p - lr * v).is_finite()
        });
    if !finite {
        return Err(PdaError::Numeric("non-finite parameter update".into()));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// `lr0 * (1 + gamma * n)^(-alpha)` for epoch `n`.
pub fn lr_schedule(epoch: usize, lr0: f64, gamma: f64, alpha: f64) -> f64 {
    lr0 * (1.0 + gamma * epoch as f64).powf(-alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0, 0.0];
        apply_sgd_momentum(&mut p, &[0.0, 0.0], &mut v, 0.1, MOMENTUM).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn no_momentum_is_plain_sgd() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0, 0.0];
        apply_sgd_momentum(&mut p, &[0.5, -1.0], &mut v, 0.1, 0.0).unwrap();
        assert_eq!(p, vec![1.0 - 0.1 * 0.5, -2.0 + 0.1 * 1.0]);
    }

    #[test]
    fn two_momentum_steps() {
        // v1 = g, v2 = 0.9 g + g = 1.9 g
        let (lr, g) = (0.01, 2.0);
        let mut p = vec![0.0];
        let mut v = vec![0.0];
        apply_sgd_momentum(&mut p, &[g], &mut v, lr, MOMENTUM).unwrap();
        apply_sgd_momentum(&mut p, &[g], &mut v, lr, MOMENTUM).unwrap();
        assert!((p[0] + lr * g * (1.0 + 1.9)).abs() < 1e-15);
        assert!((v[0] - 1.9 * g).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_updates() {
        let mut p = vec![1.0];
        let mut v = vec![0.0];
        let err = apply_sgd_momentum(&mut p, &[f64::INFINITY], &mut v, 0.1, MOMENTUM);
        assert!(matches!(err, Err(PdaError::Numeric(_))));
        assert_eq!((p[0], v[0]), (1.0, 0.0));
        assert!(apply_sgd_momentum(&mut p, &[1.0, 2.0], &mut v, 0.1, MOMENTUM).is_err());
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(0, 0.01, LR_GAMMA, LR_ALPHA), 0.01);
        let expected = 0.01 * 1.2f64.powf(-0.75);
        let lr = lr_schedule(1000, 0.01, LR_GAMMA, LR_ALPHA);
        assert!((lr - expected).abs() < 1e-15);
        assert!((lr - 0.008721).abs() < 1e-6);
        for n in 0..10_000 {
            assert!(
                lr_schedule(n + 1, 0.01, LR_GAMMA, LR_ALPHA)
                    <= lr_schedule(n, 0.01, LR_GAMMA, LR_ALPHA)
            );
        }
    }
}

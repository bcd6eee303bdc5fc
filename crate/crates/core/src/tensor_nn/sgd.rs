use super::Tensor;
use crate::error::{Error, Result};

/// Plain gradient descent: `p ← p − lr·g`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub learning_rate: f32,
    pub rng_seed: u64,
    pub step_count: u64,
}

impl SgdState {
    pub fn new(learning_rate: f32, rng_seed: u64) -> Result<Self> {
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::Precondition(format!(
                "learning rate must be finite and non-negative, got {learning_rate}"
            )));
        }
        Ok(Self {
            learning_rate,
            rng_seed,
            step_count: 0,
        })
    }
}

/// Apply one update to every `(name, parameter)` pair. All gradients are checked
/// before anything is written, so a rejected step leaves the parameters untouched.
pub fn sgd_step(
    params: Vec<(String, &mut Tensor)>,
    grads: &[Tensor],
    state: &mut SgdState,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape {
            context: "sgd step",
            dimension: "parameter tensor count",
            expected: params.len(),
            found: grads.len(),
        });
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::Shape {
                context: "sgd step",
                dimension: "gradient element count",
                expected: p.len(),
                found: g.len(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    let lr = state.learning_rate;
    for ((_, p), g) in params.into_iter().zip(grads) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    state.step_count += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(p: &mut Tensor, g: f32, lr: f32) -> Result<()> {
        let mut state = SgdState::new(lr, 0)?;
        sgd_step(
            vec![("p".to_string(), p)],
            &[Tensor::vector(vec![g; 1])],
            &mut state,
        )
    }

    #[test]
    fn zero_rate_leaves_params() {
        let mut p = Tensor::vector(vec![1.25]);
        step(&mut p, 7.0, 0.0).unwrap();
        assert_eq!(p.data(), &[1.25]);
    }

    #[test]
    fn single_update() {
        let mut p = Tensor::vector(vec![1.0]);
        step(&mut p, 2.0, 0.5).unwrap();
        assert_eq!(p.data(), &[0.0]);
    }

    #[test]
    fn quadratic_converges_geometrically() {
        // p_k - 3 = (0 - 3)(1 - lr)^k; after 100 steps at lr 0.1 the gap is 3·0.9^100 ≈ 8e-5.
        let mut p = Tensor::vector(vec![0.0]);
        let mut state = SgdState::new(0.1, 0).unwrap();
        for _ in 0..100 {
            let g = Tensor::vector(vec![p.data()[0] - 3.0]);
            sgd_step(vec![("p".into(), &mut p)], &[g], &mut state).unwrap();
        }
        assert_eq!(state.step_count, 100);
        assert!((p.data()[0] - 3.0).abs() < 1e-3);
        assert!((p.data()[0] as f64 - (3.0 - 3.0 * 0.9f64.powi(100))).abs() < 1e-5);
    }

    #[test]
    fn non_finite_gradient_is_named_and_not_applied() {
        let mut a = Tensor::vector(vec![1.0]);
        let mut b = Tensor::vector(vec![1.0]);
        let mut state = SgdState::new(0.1, 0).unwrap();
        let err = sgd_step(
            vec![("a".into(), &mut a), ("head.dense0.bias".into(), &mut b)],
            &[Tensor::vector(vec![1.0]), Tensor::vector(vec![f32::INFINITY])],
            &mut state,
        )
        .unwrap_err();
        assert!(err.to_string().contains("head.dense0.bias"));
        assert_eq!(a.data(), &[1.0]);
        assert_eq!(state.step_count, 0);
    }

    #[test]
    fn negative_rate_rejected() {
        assert!(SgdState::new(-0.1, 0).is_err());
    }
}

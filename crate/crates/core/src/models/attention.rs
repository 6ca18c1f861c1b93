//! Additive attention scoring, context aggregation and the sigmoid decoder.
//!
//! The functions here operate on plain tensors and serve as the reference
//! semantics; the model's forward pass records the same computations on the
//! gradient tape and is tested against these.

use crate::error::{Error, Result};
use crate::tensor::fsum::{fdot, fsum};
use crate::tensor::{masked_softmax, sigmoid, Tensor};

/// Parameters of the additive scoring function `v . tanh(W1 h + b)`.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    /// `[hidden, attention_dim]`.
    pub w1: Tensor,
    /// `[attention_dim]`.
    pub b: Tensor,
    /// `[attention_dim]`.
    pub v: Tensor,
}

/// Attention distribution over positions: masked softmax of the additive
/// scores. Errors when every position is masked.
pub fn attend_additive(
    hidden: &Tensor,
    params: &AttentionParams,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    if hidden.rank() != 2 || hidden.shape()[1] != params.w1.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "attend",
            detail: format!("hidden {:?} vs w1 {:?}", hidden.shape(), params.w1.shape()),
        });
    }
    let t_len = hidden.shape()[0];
    let d_a = params.w1.shape()[1];
    let w1 = params.w1.values();
    let mut scores = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let h = hidden.row(t);
        let mut score = 0.0;
        for j in 0..d_a {
            let mut z = params.b.values()[j];
            for (i, &hi) in h.iter().enumerate() {
                z += hi * w1[i * d_a + j];
            }
            score += params.v.values()[j] * z.tanh();
        }
        scores.push(score);
    }
    masked_softmax(&scores, mask)
}

/// Convex combination of hidden rows. `alpha` must be a distribution: entries
/// nonnegative and summing to 1 within 1e-6.
pub fn aggregate_context(hidden: &Tensor, alpha: &[f64]) -> Result<Vec<f64>> {
    if hidden.rank() != 2 || hidden.shape()[0] != alpha.len() {
        return Err(Error::ShapeMismatch {
            op: "aggregate",
            detail: format!("hidden {:?} vs alpha len {}", hidden.shape(), alpha.len()),
        });
    }
    let sum = fsum(alpha.iter().copied());
    if (sum - 1.0).abs() > 1e-6 || alpha.iter().any(|&a| a < 0.0) {
        return Err(Error::NotNormalized { sum });
    }
    let (t_len, dim) = (hidden.shape()[0], hidden.shape()[1]);
    let hv = hidden.values();
    Ok((0..dim)
        .map(|j| fsum((0..t_len).map(|t| alpha[t] * hv[t * dim + j])))
        .collect())
}

/// Per-label sigmoid of the affine decoder scores. `theta` is `[L, hidden]`.
pub fn decode(context: &[f64], theta: &Tensor, bias: &[f64]) -> Result<Vec<f64>> {
    if theta.rank() != 2 || theta.shape()[1] != context.len() || theta.shape()[0] != bias.len() {
        return Err(Error::ShapeMismatch {
            op: "decode",
            detail: format!(
                "theta {:?} vs context {} and bias {}",
                theta.shape(),
                context.len(),
                bias.len()
            ),
        });
    }
    Ok((0..theta.shape()[0])
        .map(|l| sigmoid(fdot(theta.row(l), context) + bias[l]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(hidden: usize, d_a: usize, v_val: f64) -> AttentionParams {
        AttentionParams {
            w1: Tensor::matrix(hidden, d_a, vec![0.3; hidden * d_a]).unwrap(),
            b: Tensor::vector(vec![0.1; d_a]),
            v: Tensor::vector(vec![v_val; d_a]),
        }
    }

    #[test]
    fn zero_scorer_gives_uniform_attention() {
        let hidden = Tensor::matrix(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0]).unwrap();
        let alpha = attend_additive(&hidden, &params(2, 4, 0.0), None).unwrap();
        for a in &alpha {
            assert_abs_diff_eq!(*a, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_position_gets_all_mass() {
        let hidden = Tensor::matrix(1, 2, vec![0.4, -0.2]).unwrap();
        let alpha = attend_additive(&hidden, &params(2, 4, 0.7), None).unwrap();
        assert_eq!(alpha, vec![1.0]);
    }

    #[test]
    fn matches_direct_formula() {
        // Independent evaluation of v . tanh(W1 h + b) then softmax.
        let hidden = Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]).unwrap();
        let p = AttentionParams {
            w1: Tensor::matrix(2, 2, vec![0.2, -0.4, 0.6, 0.8]).unwrap(),
            b: Tensor::vector(vec![0.05, -0.1]),
            v: Tensor::vector(vec![1.5, -0.5]),
        };
        let mut scores = [0.0f64; 3];
        for (t, s) in scores.iter_mut().enumerate() {
            let h = hidden.row(t);
            let z0 = (0.2 * h[0] + 0.6 * h[1] + 0.05).tanh();
            let z1 = (-0.4 * h[0] + 0.8 * h[1] - 0.1).tanh();
            *s = 1.5 * z0 - 0.5 * z1;
        }
        let max = scores.iter().cloned().fold(f64::MIN, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let expected: Vec<f64> = exps.iter().map(|e| e / z).collect();

        let alpha = attend_additive(&hidden, &p, None).unwrap();
        for (a, e) in alpha.iter().zip(&expected) {
            assert_abs_diff_eq!(*a, *e, epsilon = 1e-12);
        }
    }

    #[test]
    fn aggregation_identity_and_mean() {
        let hidden = Tensor::matrix(2, 3, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]).unwrap();
        // One-hot picks out a row exactly.
        let ctx = aggregate_context(&hidden, &[0.0, 1.0]).unwrap();
        assert_eq!(ctx, vec![2.0, 2.0, 2.0]);
        // Uniform is the row mean.
        let ctx = aggregate_context(&hidden, &[0.5, 0.5]).unwrap();
        assert_eq!(ctx, vec![1.5, 1.5, 1.5]);
        // Hand arithmetic.
        let ctx = aggregate_context(&hidden, &[0.3, 0.7]).unwrap();
        for v in ctx {
            assert_abs_diff_eq!(v, 1.7, epsilon = 1e-12);
        }
    }

    #[test]
    fn aggregation_rejects_non_distributions() {
        let hidden = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            aggregate_context(&hidden, &[0.9, 0.3]),
            Err(Error::NotNormalized { .. })
        ));
        assert!(matches!(
            aggregate_context(&hidden, &[1.2, -0.2]),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn joint_permutation_leaves_context_bit_identical() {
        let hidden = Tensor::matrix(
            4,
            3,
            vec![
                0.1234, -2.5, 3.75, 1e-3, 0.77, -0.11, 9.5, -4.25, 0.333, 0.5, 0.25, -1.5,
            ],
        )
        .unwrap();
        let alpha = [0.4, 0.3, 0.2, 0.1];
        let base = aggregate_context(&hidden, &alpha).unwrap();

        let perm = [2usize, 0, 3, 1];
        let mut vals = Vec::new();
        for &p in &perm {
            vals.extend_from_slice(hidden.row(p));
        }
        let permuted = Tensor::matrix(4, 3, vals).unwrap();
        let alpha_p: Vec<f64> = perm.iter().map(|&p| alpha[p]).collect();
        let ctx = aggregate_context(&permuted, &alpha_p).unwrap();
        for (a, b) in base.iter().zip(&ctx) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn decoder_matches_direct_sigmoid() {
        let theta = Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, -1.0]).unwrap();
        let y = decode(&[0.3, 0.4], &theta, &[0.0, 0.0]).unwrap();
        assert_eq!(y[0], 0.5);
        assert_abs_diff_eq!(y[1], sigmoid(-0.1), epsilon = 1e-15);

        // Saturation: a large score lands within 1e-9 of 1.
        let theta = Tensor::matrix(1, 1, vec![30.0]).unwrap();
        let y = decode(&[1.0], &theta, &[0.0]).unwrap();
        assert!(y[0] >= 1.0 - 1e-9);
    }
}

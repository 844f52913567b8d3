//! Symmetric InfoNCE over in-batch query/target pairs.
//!
//! Scores are S[i][j] = (q_i . t_j) / tau with a learnable temperature
//! tau = exp(log_tau). The loss averages the query-to-target and
//! target-to-query directions:
//!
//!   loss = -1/(2B) * sum_i [ log softmax_row_i(S)_ii + log softmax_col_i(S)_ii ]
//!
//! computed with log-sum-exp stabilization. Matched pairs sit on the
//! diagonal; everything else in the batch is a negative.

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor2};

/// Pre-exponential score matrix S[i][j] = (q_i . t_j) / tau.
/// Rows of `queries` and `targets` are expected unit-norm.
pub fn similarity_matrix(queries: &Tensor2, targets: &Tensor2, tau: f64) -> Result<Tensor2> {
    if queries.rows() < 2 {
        return Err(Error::BatchTooSmall {
            size: queries.rows(),
        });
    }
    if queries.rows() != targets.rows() || queries.cols() != targets.cols() {
        return Err(Error::DimMismatch {
            op: "similarity_matrix",
            detail: format!(
                "{}x{} vs {}x{}",
                queries.rows(),
                queries.cols(),
                targets.rows(),
                targets.cols()
            ),
        });
    }
    let mut s = matmul_nt(queries, targets)?;
    s.scale_inplace(1.0 / tau);
    Ok(s)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Symmetric InfoNCE loss over a square score matrix. Always >= 0; zero is
/// approached only when each diagonal entry dominates its row and column.
pub fn info_nce(s: &Tensor2) -> Result<f64> {
    let b = s.rows();
    if b != s.cols() {
        return Err(Error::DimMismatch {
            op: "info_nce",
            detail: format!("{}x{} not square", s.rows(), s.cols()),
        });
    }
    if !s.is_finite() {
        return Err(Error::NonFinite {
            op: "info_nce scores".into(),
        });
    }
    let mut total = 0.0;
    for i in 0..b {
        let row_lse = log_sum_exp(s.row(i).iter().copied());
        let col_lse = log_sum_exp((0..b).map(|k| s.at(k, i)));
        total += row_lse - s.at(i, i) + col_lse - s.at(i, i);
    }
    Ok(total / (2.0 * b as f64))
}

/// Gradient of [`info_nce`] with respect to every score:
/// dL/dS[i][j] = (row_softmax[i][j] + col_softmax[i][j] - 2*delta_ij) / (2B).
pub fn info_nce_backward(s: &Tensor2) -> Tensor2 {
    let b = s.rows();
    let mut d = Tensor2::zeros(b, b);
    let inv = 1.0 / (2.0 * b as f64);

    // row softmax
    for i in 0..b {
        let lse = log_sum_exp(s.row(i).iter().copied());
        let drow = d.row_mut(i);
        for (j, sv) in s.row(i).iter().enumerate() {
            drow[j] += (sv - lse).exp();
        }
        let _ = i;
    }
    // column softmax
    for j in 0..b {
        let lse = log_sum_exp((0..b).map(|k| s.at(k, j)));
        for i in 0..b {
            *d.at_mut(i, j) += (s.at(i, j) - lse).exp();
        }
    }
    for i in 0..b {
        *d.at_mut(i, i) -= 2.0;
    }
    d.scale_inplace(inv);
    d
}

/// Loss plus gradients with respect to the unit query rows, the unit target
/// rows, and log_tau, chaining through the similarity matrix.
pub struct BatchLoss {
    pub loss: f64,
    pub d_queries: Tensor2,
    pub d_targets: Tensor2,
    pub d_log_tau: f64,
}

pub fn batch_loss(queries: &Tensor2, targets: &Tensor2, log_tau: f64) -> Result<BatchLoss> {
    let tau = log_tau.exp();
    let s = similarity_matrix(queries, targets, tau)?;
    let loss = info_nce(&s)?;
    let d_s = info_nce_backward(&s);

    // S = (Q T^T) / tau, tau = exp(log_tau):
    //   dL/dQ = (dS @ T) / tau,  dL/dT = (dS^T @ Q) / tau
    //   dL/dlog_tau = -sum_ij dS_ij * S_ij
    let mut d_queries = matmul(&d_s, targets)?;
    d_queries.scale_inplace(1.0 / tau);
    let mut d_targets = matmul_tn(&d_s, queries)?;
    d_targets.scale_inplace(1.0 / tau);
    let d_log_tau = -d_s
        .data()
        .iter()
        .zip(s.data())
        .map(|(g, sv)| g * sv)
        .sum::<f64>();

    Ok(BatchLoss {
        loss,
        d_queries,
        d_targets,
        d_log_tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn orthonormal_rows_give_identity_scores() {
        let q = Tensor2::from_vec(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let s = similarity_matrix(&q, &q, 1.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.at(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn doubling_tau_halves_scores() {
        let q = Tensor2::from_vec(2, 2, vec![0.6, 0.8, 0.8, -0.6]).unwrap();
        let t = Tensor2::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let s1 = similarity_matrix(&q, &t, 0.5).unwrap();
        let s2 = similarity_matrix(&q, &t, 1.0).unwrap();
        for (a, b) in s1.data().iter().zip(s2.data()) {
            assert!(close(*a, 2.0 * b, 1e-12));
        }
    }

    #[test]
    fn matched_orthogonal_pairs_at_half_tau() {
        let q = Tensor2::from_vec(2, 2, vec![1., 0., 0., 1.]).unwrap();
        let s = similarity_matrix(&q, &q, 0.5).unwrap();
        assert_eq!(s.at(0, 0), 2.0);
        assert_eq!(s.at(1, 1), 2.0);
        assert_eq!(s.at(0, 1), 0.0);
        assert_eq!(s.at(1, 0), 0.0);
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let q = Tensor2::from_vec(1, 2, vec![1., 0.]).unwrap();
        assert!(matches!(
            similarity_matrix(&q, &q, 1.0),
            Err(Error::BatchTooSmall { .. })
        ));
    }

    #[test]
    fn indistinguishable_scores_give_log2() {
        let s = Tensor2::from_vec(2, 2, vec![0.7, 0.7, 0.7, 0.7]).unwrap();
        let loss = info_nce(&s).unwrap();
        assert!(close(loss, std::f64::consts::LN_2, 1e-12));
    }

    #[test]
    fn diagonal_two_scalar_value() {
        let s = Tensor2::from_vec(2, 2, vec![2., 0., 0., 2.]).unwrap();
        let loss = info_nce(&s).unwrap();
        let expect = (1.0 + (-2.0f64).exp()).ln();
        assert!(close(loss, expect, 1e-12));
        assert!(close(loss, 0.1269, 1e-4));
    }

    #[test]
    fn saturated_correct_assignment_loss_vanishes() {
        let mut s = Tensor2::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                *s.at_mut(i, j) = if i == j { 100.0 } else { -100.0 };
            }
        }
        let loss = info_nce(&s).unwrap();
        assert!(loss >= 0.0 && loss < 1e-6);
    }

    fn rand_square(b: usize, seed: u64) -> Tensor2 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = Tensor2::zeros(b, b);
        for v in s.data_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        s
    }

    #[test]
    fn transpose_symmetry_and_shift_invariance() {
        for seed in 0..100 {
            let s = rand_square(4, seed);
            let loss = info_nce(&s).unwrap();
            assert!(loss >= 0.0);

            let mut st = Tensor2::zeros(4, 4);
            for i in 0..4 {
                for j in 0..4 {
                    *st.at_mut(i, j) = s.at(j, i);
                }
            }
            assert!(close(loss, info_nce(&st).unwrap(), 1e-9));

            let mut shifted = s.clone();
            for v in shifted.data_mut() {
                *v += 13.25;
            }
            assert!(close(loss, info_nce(&shifted).unwrap(), 1e-9));
        }
    }

    #[test]
    fn analytic_score_gradient_matches_finite_differences() {
        let s = rand_square(4, 7);
        let grad = info_nce_backward(&s);
        let h = 1e-5;
        for idx in 0..16 {
            let mut plus = s.clone();
            plus.data_mut()[idx] += h;
            let mut minus = s.clone();
            minus.data_mut()[idx] -= h;
            let fd = (info_nce(&plus).unwrap() - info_nce(&minus).unwrap()) / (2.0 * h);
            assert!(
                close(grad.data()[idx], fd, 1e-7),
                "idx {}: {} vs {}",
                idx,
                grad.data()[idx],
                fd
            );
        }
    }
}

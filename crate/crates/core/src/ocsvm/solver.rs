//! Pairwise coordinate descent (SMO) for the one-class dual
//!
//! ```text
//! min_a  1/2 a^T K a   s.t.  0 <= a_i <= C,  sum_i a_i = 1,  C = 1 / (nu * l)
//! ```
//!
//! Working pairs follow the maximal-violating-pair rule for the first index
//! and second-order gain for the partner. Ties resolve to the lowest index,
//! so the result depends only on input order.

use crate::error::{Error, Result};

use super::kernel::Gram;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct DualSolution {
    pub alpha: Vec<f64>,
    /// `K a`, i.e. the expansion value at every training point.
    pub grad: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    /// `max_{a_t < C} -g_t - min_{a_t > 0} -g_t` at exit.
    pub kkt_gap: f64,
    pub objective: f64,
}

/// Feasible starting point: the first `floor(nu l)` coefficients at the
/// bound, the remainder on the next one.
pub(crate) fn initial_alpha(l: usize, upper: f64) -> Vec<f64> {
    let mut alpha = vec![0.0; l];
    let mut left = 1.0;
    for a in alpha.iter_mut() {
        if left <= 0.0 {
            break;
        }
        let take = upper.min(left);
        *a = take;
        left -= take;
        if left < 1e-15 {
            left = 0.0;
        }
    }
    alpha
}

fn violating_pair_gap(alpha: &[f64], grad: &[f64], upper: f64) -> (Option<usize>, f64, f64) {
    let mut best_i = None;
    let mut m_up = f64::NEG_INFINITY;
    let mut m_low = f64::INFINITY;
    for (t, (&a, &g)) in alpha.iter().zip(grad).enumerate() {
        if a < upper && -g > m_up {
            m_up = -g;
            best_i = Some(t);
        }
        if a > 0.0 && -g < m_low {
            m_low = -g;
        }
    }
    (best_i, m_up, m_low)
}

pub(crate) fn solve(gram: &Gram<'_>, nu: f64, tol: f64, max_iter: usize) -> Result<DualSolution> {
    let l = gram.len();
    let upper = 1.0 / (nu * l as f64);
    let mut alpha = initial_alpha(l, upper);

    let mut grad = vec![0.0; l];
    let mut buf = Vec::new();
    for (j, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            let row = gram.row(j, &mut buf);
            for (g, k) in grad.iter_mut().zip(row) {
                *g += a * k;
            }
        }
    }

    let mut row_i = Vec::new();
    let mut row_j = Vec::new();
    let mut iterations = 0;
    let mut objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();

    let kkt_gap = loop {
        let (i, m_up, m_low) = violating_pair_gap(&alpha, &grad, upper);
        let gap = m_up - m_low;
        let i = match i {
            Some(i) if gap > tol => i,
            _ => break gap.max(0.0),
        };
        if iterations >= max_iter {
            return Err(Error::NonConvergence {
                iterations,
                kkt_residual: gap,
            });
        }

        let ki = gram.row(i, &mut row_i);
        let kii = gram.diag(i);
        let mut best_j = None;
        let mut best_gain = f64::NEG_INFINITY;
        for t in 0..l {
            if alpha[t] <= 0.0 {
                continue;
            }
            let b = grad[t] - grad[i];
            if b <= 0.0 {
                continue;
            }
            let a = kii + gram.diag(t) - 2.0 * ki[t];
            let gain = b * b / if a > 0.0 { a } else { TAU };
            if gain > best_gain {
                best_gain = gain;
                best_j = Some(t);
            }
        }
        let j = match best_j {
            Some(j) => j,
            // no partner can reduce the objective
            None => break gap,
        };

        let curvature = kii + gram.diag(j) - 2.0 * ki[j];
        let b = grad[j] - grad[i];
        let mut delta = b / curvature.max(TAU);
        let room_i = upper - alpha[i];
        let room_j = alpha[j];
        let mut clip_i = false;
        let mut clip_j = false;
        if delta >= room_i {
            delta = room_i;
            clip_i = true;
        }
        if delta >= room_j {
            delta = room_j;
            clip_j = true;
            clip_i = room_i == room_j;
        }
        alpha[i] = if clip_i { upper } else { alpha[i] + delta };
        alpha[j] = if clip_j { 0.0 } else { alpha[j] - delta };

        let kj = gram.row(j, &mut row_j);
        for t in 0..l {
            grad[t] += delta * (ki[t] - kj[t]);
        }

        let change = -delta * b + 0.5 * delta * delta * curvature;
        debug_assert!(
            change <= 1e-12 * (1.0 + objective.abs()),
            "dual objective increased by {change} at update {iterations}"
        );
        objective += change;
        iterations += 1;
    };

    let rho = offset(&alpha, &grad, upper);
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();
    Ok(DualSolution {
        alpha,
        grad,
        rho,
        iterations,
        kkt_gap,
        objective,
    })
}

/// Mean expansion value over margin vectors; with none, the midpoint of
/// the interval the bound vectors allow.
fn offset(alpha: &[f64], grad: &[f64], upper: f64) -> f64 {
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (&a, &g) in alpha.iter().zip(grad) {
        if a > 0.0 && a < upper {
            free_sum += g;
            free_count += 1;
        } else if a >= upper {
            lo = lo.max(g);
        } else {
            hi = hi.min(g);
        }
    }
    if free_count > 0 {
        return free_sum / free_count as f64;
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_point_is_feasible() {
        for (l, nu) in [(10, 0.1), (10, 0.35), (200, 0.05), (7, 0.99), (3, 0.5)] {
            let c = 1.0 / (nu * l as f64);
            let a = initial_alpha(l, c);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.iter().all(|&x| (0.0..=c + 1e-15).contains(&x)));
        }
    }

    #[test]
    fn offset_midpoint_without_free_vectors() {
        // a0 at the bound (g = 0.2), a1 at zero (g = 0.6)
        let rho = offset(&[1.0, 0.0], &[0.2, 0.6], 1.0);
        assert!((rho - 0.4).abs() < 1e-15);
    }
}

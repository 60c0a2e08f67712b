//! Two-task toy landscape used by the convergence race (the CAGrad toy
//! objective). Closed-form losses and gradients; no tape involved.
//!
//! With x = (x1, x2):
//!
//! ```text
//! u1  = 0.5*(-x1 - 7) - tanh(-x2)
//! u2  = 0.5*(-x1 + 3) + tanh(-x2) + 2
//! f1l = ln(max(|u1|, 5e-6)) + 6          f2l = ln(max(|u2|, 5e-6)) + 6
//! f1s = ((-x1+7)^2 + 0.1*(-x2-8)^2)/10 - 20
//! f2s = ((-x1-7)^2 + 0.1*(-x2-8)^2)/10 - 20
//! c1  = max(tanh( 0.5*x2), 0)            c2  = max(tanh(-0.5*x2), 0)
//! L1  = f1l*c1 + f1s*c2                  L2  = f2l*c1 + f2s*c2
//! ```
//!
//! For x2 < 0 only the quadratic bowls are active; their average is minimized
//! at `GLOBAL_MIN`, computed once by bisection on the analytic derivative and
//! frozen here. At kinks (|u| at the log floor, x2 = 0) gradients take the
//! positive branch, matching the tape's convention.

const LOWER: f64 = 5e-6;

/// Argmin of the average loss (L1+L2)/2.
pub const GLOBAL_MIN: [f64; 2] = [0.0, -8.355109776756223];

/// Average loss value at [`GLOBAL_MIN`].
pub const GLOBAL_MIN_AVG_LOSS: f64 = -15.091638445306597;

/// The three starting points of the race (the reference implementation's
/// "three different starting points").
pub const STARTS: [[f64; 2]; 3] = [[-8.5, 7.5], [-8.5, -5.0], [9.0, 9.0]];

/// Both task losses at x.
pub fn losses(x: [f64; 2]) -> [f64; 2] {
    let [x1, x2] = x;
    let u1 = 0.5 * (-x1 - 7.0) - (-x2).tanh();
    let u2 = 0.5 * (-x1 + 3.0) + (-x2).tanh() + 2.0;
    let f1l = u1.abs().max(LOWER).ln() + 6.0;
    let f2l = u2.abs().max(LOWER).ln() + 6.0;
    let c1 = (0.5 * x2).tanh().max(0.0);
    let c2 = (-0.5 * x2).tanh().max(0.0);
    let f1s = ((-x1 + 7.0).powi(2) + 0.1 * (-x2 - 8.0).powi(2)) / 10.0 - 20.0;
    let f2s = ((-x1 - 7.0).powi(2) + 0.1 * (-x2 - 8.0).powi(2)) / 10.0 - 20.0;
    [f1l * c1 + f1s * c2, f2l * c1 + f2s * c2]
}

/// Per-task gradients at x: `grads(x)[t]` is ∇L_t.
pub fn grads(x: [f64; 2]) -> [[f64; 2]; 2] {
    let [x1, x2] = x;
    let th = x2.tanh();
    let sech2 = 1.0 - th * th;
    let u1 = 0.5 * (-x1 - 7.0) + th;
    let u2 = 0.5 * (-x1 + 3.0) - th + 2.0;
    // d ln(max(|u|, LOWER)) / du, positive branch at the floor boundary
    let dlog = |u: f64| if u.abs() >= LOWER { 1.0 / u } else { 0.0 };
    let (d1, d2) = (dlog(u1), dlog(u2));
    let f1l = u1.abs().max(LOWER).ln() + 6.0;
    let f2l = u2.abs().max(LOWER).ln() + 6.0;

    let th_half = (0.5 * x2).tanh();
    let sech2_half = 1.0 - th_half * th_half;
    let (c1, dc1) = if x2 >= 0.0 {
        (th_half, 0.5 * sech2_half)
    } else {
        (0.0, 0.0)
    };
    let (c2, dc2) = if x2 <= 0.0 {
        (-th_half, -0.5 * sech2_half)
    } else {
        (0.0, 0.0)
    };

    let f1s = ((x1 - 7.0).powi(2) + 0.1 * (x2 + 8.0).powi(2)) / 10.0 - 20.0;
    let f2s = ((x1 + 7.0).powi(2) + 0.1 * (x2 + 8.0).powi(2)) / 10.0 - 20.0;
    let f1s_x1 = (x1 - 7.0) / 5.0;
    let f2s_x1 = (x1 + 7.0) / 5.0;
    let fs_x2 = 0.02 * (x2 + 8.0);

    let g1 = [
        d1 * -0.5 * c1 + f1s_x1 * c2,
        d1 * sech2 * c1 + f1l * dc1 + fs_x2 * c2 + f1s * dc2,
    ];
    let g2 = [
        d2 * -0.5 * c1 + f2s_x1 * c2,
        d2 * -sech2 * c1 + f2l * dc1 + fs_x2 * c2 + f2s * dc2,
    ];
    [g1, g2]
}

pub fn avg_loss(x: [f64; 2]) -> f64 {
    let [l1, l2] = losses(x);
    0.5 * (l1 + l2)
}

/// Euclidean distance to the average-loss global minimum.
pub fn dist_to_min(x: [f64; 2]) -> f64 {
    let dx = x[0] - GLOBAL_MIN[0];
    let dy = x[1] - GLOBAL_MIN[1];
    (dx * dx + dy * dy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd_grads(x: [f64; 2]) -> [[f64; 2]; 2] {
        let h = 1e-6;
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let (lp, lm) = (losses(xp), losses(xm));
            for t in 0..2 {
                out[t][i] = (lp[t] - lm[t]) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn gradients_match_finite_differences_away_from_kinks() {
        // Points chosen away from x2=0 and the log floor.
        let points = [
            [-8.5, 7.5],
            [-8.5, -5.0],
            [9.0, 9.0],
            [0.3, -8.0],
            [3.0, 2.0],
            [-2.0, -1.5],
            [6.9, 4.2],
        ];
        for &p in &points {
            let g = grads(p);
            let fd = fd_grads(p);
            for t in 0..2 {
                for i in 0..2 {
                    assert_relative_eq!(g[t][i], fd[t][i], max_relative = 1e-5, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn losses_at_reference_points_are_finite_and_symmetric_at_min() {
        for &s in &STARTS {
            let [l1, l2] = losses(s);
            assert!(l1.is_finite() && l2.is_finite());
        }
        // At the average-loss minimum both tasks take the same value, and the
        // average equals the frozen constant.
        let [l1, l2] = losses(GLOBAL_MIN);
        assert_relative_eq!(l1, l2, max_relative = 1e-12);
        assert_relative_eq!(avg_loss(GLOBAL_MIN), GLOBAL_MIN_AVG_LOSS, max_relative = 1e-14);
    }

    #[test]
    fn global_min_is_stationary_for_average_loss() {
        let g = grads(GLOBAL_MIN);
        let avg = [0.5 * (g[0][0] + g[1][0]), 0.5 * (g[0][1] + g[1][1])];
        assert!(avg[0].abs() < 1e-9, "d avg/dx1 = {}", avg[0]);
        assert!(avg[1].abs() < 1e-9, "d avg/dx2 = {}", avg[1]);
        // ... and a genuine minimum: nearby points are no better.
        for delta in [[1e-3, 0.0], [-1e-3, 0.0], [0.0, 1e-3], [0.0, -1e-3]] {
            let p = [GLOBAL_MIN[0] + delta[0], GLOBAL_MIN[1] + delta[1]];
            assert!(avg_loss(p) >= GLOBAL_MIN_AVG_LOSS);
        }
    }

    #[test]
    fn upper_half_plane_uses_only_log_terms() {
        // For x2 > 0, c2 = 0: moving the quadratic centers has no effect.
        let l = losses([2.0, 3.0]);
        let u1: f64 = 0.5 * (-2.0 - 7.0) - (-3.0f64).tanh();
        let c1: f64 = (1.5f64).tanh();
        assert_relative_eq!(l[0], (u1.abs().ln() + 6.0) * c1, max_relative = 1e-12);
    }
}

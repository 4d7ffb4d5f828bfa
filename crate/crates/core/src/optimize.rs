//! Bounded Nelder-Mead simplex minimizer.
//!
//! Gradient-free, deterministic, with box constraints enforced by clamping
//! reflected points back into the feasible region. Good enough for the
//! low-dimensional, well-conditioned objectives in this crate (spectrum
//! minima, Lorentzian line fits).

/// Result of a simplex minimization.
#[derive(Debug, Clone)]
pub struct MinResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Options controlling convergence.
#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Relative simplex-size tolerance on parameters.
    pub x_tol: f64,
    /// Absolute spread tolerance on function values.
    pub f_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            x_tol: 1e-10,
            f_tol: 1e-14,
        }
    }
}

fn clamp(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Minimize `f` starting from `x0` with per-axis initial step `scale`,
/// constrained to the box `[lo, hi]`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    scale: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &NelderMeadOptions,
) -> MinResult {
    let n = x0.len();
    assert!(n >= 1 && scale.len() == n && lo.len() == n && hi.len() == n);

    // Initial simplex: x0 plus one displaced vertex per axis.
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scale[i];
        clamp(&mut v, lo, hi);
        // Degenerate vertex if the step was clamped away: push inward instead.
        if (v[i] - x0[i]).abs() < 1e-300 {
            v[i] = x0[i] - scale[i];
            clamp(&mut v, lo, hi);
        }
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;

        // Sort vertices by value (stable order keeps the run deterministic).
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        let sorted: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let sorted_vals: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = sorted;
        values = sorted_vals;

        // Convergence: simplex extent and value spread.
        let mut x_extent = 0.0f64;
        for i in 0..n {
            let mut ext = 0.0f64;
            for v in &simplex[1..] {
                ext = ext.max((v[i] - simplex[0][i]).abs());
            }
            let denom = simplex[0][i].abs().max(scale[i].abs()).max(1e-300);
            x_extent = x_extent.max(ext / denom);
        }
        let f_spread = values[n] - values[0];
        if x_extent < opts.x_tol && f_spread.abs() < opts.f_tol {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for i in 0..n {
                centroid[i] += v[i] / n as f64;
            }
        }

        let mut reflected = vec![0.0; n];
        for i in 0..n {
            reflected[i] = centroid[i] + alpha * (centroid[i] - simplex[n][i]);
        }
        clamp(&mut reflected, lo, hi);
        let f_r = f(&reflected);

        if f_r < values[0] {
            // Try expansion.
            let mut expanded = vec![0.0; n];
            for i in 0..n {
                expanded[i] = centroid[i] + gamma * (reflected[i] - centroid[i]);
            }
            clamp(&mut expanded, lo, hi);
            let f_e = f(&expanded);
            if f_e < f_r {
                simplex[n] = expanded;
                values[n] = f_e;
            } else {
                simplex[n] = reflected;
                values[n] = f_r;
            }
        } else if f_r < values[n - 1] {
            simplex[n] = reflected;
            values[n] = f_r;
        } else {
            // Contraction (outside if the reflection improved on the worst).
            let (base, f_base) = if f_r < values[n] {
                (reflected.clone(), f_r)
            } else {
                (simplex[n].clone(), values[n])
            };
            let mut contracted = vec![0.0; n];
            for i in 0..n {
                contracted[i] = centroid[i] + rho * (base[i] - centroid[i]);
            }
            clamp(&mut contracted, lo, hi);
            let f_c = f(&contracted);
            if f_c < f_base {
                simplex[n] = contracted;
                values[n] = f_c;
            } else {
                // Shrink toward the best vertex.
                for k in 1..=n {
                    for i in 0..n {
                        simplex[k][i] = simplex[0][i] + sigma * (simplex[k][i] - simplex[0][i]);
                    }
                    let vk = simplex[k].clone();
                    values[k] = f(&vk);
                }
            }
        }
    }

    MinResult {
        x: simplex[0].clone(),
        value: values[0],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let r = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2),
            &[0.0, 0.0],
            &[0.5, 0.5],
            &[-10.0, -10.0],
            &[10.0, 10.0],
            &NelderMeadOptions::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-6, "x0 = {}", r.x[0]);
        assert!((r.x[1] + 1.0).abs() < 1e-6, "x1 = {}", r.x[1]);
    }

    #[test]
    fn respects_bounds() {
        let r = nelder_mead(
            |x| (x[0] - 5.0).powi(2),
            &[0.0],
            &[0.3],
            &[-1.0],
            &[1.0],
            &NelderMeadOptions::default(),
        );
        assert!((r.x[0] - 1.0).abs() < 1e-8, "should pin at upper bound, got {}", r.x[0]);
    }

    #[test]
    fn rosenbrock_2d() {
        let opts = NelderMeadOptions {
            max_iterations: 20000,
            ..Default::default()
        };
        let r = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.2, 0.2],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            &opts,
        );
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }
}

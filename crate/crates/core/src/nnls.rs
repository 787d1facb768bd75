//! Nonnegative quadratic minimization `min_{θ ≥ 0} ½θᵀGθ − bᵀθ` for a
//! symmetric positive definite `G` (Lawson–Hanson active set).

use nalgebra::{DMatrix, DVector};

const MAX_OUTER: usize = 500;

/// Solves the problem and returns `θ`. `g` must be positive definite.
pub fn solve(g: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = b.len();
    let scale = g.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let bscale = b.amax().max(f64::MIN_POSITIVE);
    let tol = 1e-13 * (scale + bscale);
    let mut theta = DVector::zeros(k);
    let mut passive = vec![false; k];

    for _ in 0..MAX_OUTER {
        // Negative gradient.
        let w = b - g * &theta;
        let next = (0..k)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        match next {
            Some(j) if w[j] > tol => passive[j] = true,
            _ => break,
        }
        loop {
            let z = solve_passive(g, b, &passive);
            if (0..k).filter(|&j| passive[j]).all(|j| z[j] > 0.0) {
                theta = z;
                break;
            }
            // Step back to the boundary and drop the variables that hit zero.
            let mut alpha = 1.0f64;
            for j in 0..k {
                if passive[j] && z[j] <= 0.0 {
                    let denom = theta[j] - z[j];
                    if denom > 0.0 {
                        alpha = alpha.min(theta[j] / denom);
                    }
                }
            }
            theta += (z - &theta) * alpha;
            for j in 0..k {
                if passive[j] && theta[j] <= 1e-15 * theta.amax().max(1.0) {
                    passive[j] = false;
                    theta[j] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    theta
}

fn solve_passive(g: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..b.len()).filter(|&j| passive[j]).collect();
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| g[(idx[r], idx[c])]);
    let rhs = DVector::from_fn(idx.len(), |r, _| b[idx[r]]);
    let sol = match sub.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => sub.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(idx.len())),
    };
    let mut out = DVector::zeros(b.len());
    for (r, &j) in idx.iter().enumerate() {
        out[j] = sol[r];
    }
    out
}

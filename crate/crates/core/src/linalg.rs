//! Dense 4×4 helpers used by evaluation and export only.
//!
//! Nothing on the training or inference path calls into this module.

use crate::distribution::{CholeskyFactor, MixtureParams, DIM};

pub type Mat4 = [[f64; DIM]; DIM];

/// Gauss-Jordan inverse with partial pivoting; `None` when singular.
pub fn invert(m: &Mat4) -> Option<Mat4> {
    let mut a = *m;
    let mut inv: Mat4 = core::array::from_fn(|r| core::array::from_fn(|c| f64::from(r == c)));
    for col in 0..DIM {
        let pivot = (col..DIM).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col] == 0.0 || !a[pivot][col].is_finite() {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for c in 0..DIM {
            a[col][c] /= p;
            inv[col][c] /= p;
        }
        for r in 0..DIM {
            if r == col || a[r][col] == 0.0 {
                continue;
            }
            let f = a[r][col];
            for c in 0..DIM {
                a[r][c] -= f * a[col][c];
                inv[r][c] -= f * inv[col][c];
            }
        }
    }
    Some(inv)
}

/// Covariance `(UᵀU)⁻¹ = U⁻¹ U⁻ᵀ` of one component; `None` if not finite.
pub fn component_covariance(factor: &CholeskyFactor) -> Option<Mat4> {
    // Columns of U⁻¹.
    let cols: [[f64; DIM]; DIM] =
        core::array::from_fn(|c| factor.solve(&core::array::from_fn(|r| f64::from(r == c))));
    let cov: Mat4 =
        core::array::from_fn(|r| core::array::from_fn(|c| (0..DIM).map(|k| cols[k][r] * cols[k][c]).sum()));
    cov.iter().flatten().all(|v| v.is_finite()).then_some(cov)
}

/// Mean and covariance of the whole mixture (law of total covariance).
pub fn mixture_moments(params: &MixtureParams) -> Option<([f64; DIM], Mat4)> {
    let phi = params.weights();
    let mut mean = [0.0; DIM];
    for (w, m) in phi.iter().zip(params.means()) {
        for (o, v) in mean.iter_mut().zip(&m.0) {
            *o += w * v;
        }
    }
    let mut cov = [[0.0; DIM]; DIM];
    for ((w, m), f) in phi.iter().zip(params.means()).zip(params.factors()) {
        let sigma = component_covariance(f)?;
        let d: [f64; DIM] = core::array::from_fn(|j| m.0[j] - mean[j]);
        for r in 0..DIM {
            for c in 0..DIM {
                cov[r][c] += w * (sigma[r][c] + d[r] * d[c]);
            }
        }
    }
    Some((mean, cov))
}

/// Correlation matrix of a covariance.
pub fn correlation(cov: &Mat4) -> Mat4 {
    core::array::from_fn(|r| core::array::from_fn(|c| cov[r][c] / crate::math::sqrt(cov[r][r] * cov[c][c])))
}

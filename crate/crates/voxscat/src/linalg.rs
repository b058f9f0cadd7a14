//! Dense complex linear-algebra helpers: matrix 1-norm and a Hager-style
//! condition estimator on top of the LU factorizations.

use nalgebra::{DMatrix, DVector, LU};
use num_complex::Complex64;

type CMatrix = DMatrix<Complex64>;
type CVector = DVector<Complex64>;

/// Maximum column sum of moduli.
pub(crate) fn norm1(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|c| c.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// 1-norm condition estimate of `m` from its LU factorization plus one
/// factorization of the adjoint. Hager's power method on `‖m⁻¹‖₁`; a lower
/// bound, usually within a small factor of the true value.
pub(crate) fn cond1_estimate(
    m: &CMatrix,
    lu: &LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let lu_adj = m.adjoint().lu();
    let mut x = CVector::from_element(n, Complex64::new(1.0 / n as f64, 0.0));
    let mut inv_norm = 0.0f64;
    for _ in 0..5 {
        let y = match lu.solve(&x) {
            Some(y) => y,
            None => return f64::INFINITY,
        };
        inv_norm = inv_norm.max(y.iter().map(|c| c.norm()).sum());
        // unit phase of y
        let xi = y.map(|c| {
            if c.norm() == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                c / c.norm()
            }
        });
        let z = match lu_adj.solve(&xi) {
            Some(z) => z,
            None => return f64::INFINITY,
        };
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .map(|(j, c)| (j, c.norm()))
            .fold((0, 0.0), |acc, it| if it.1 > acc.1 { it } else { acc });
        if zmax <= z.dotc(&x).re {
            break;
        }
        x = CVector::zeros(n);
        x[jmax] = Complex64::new(1.0, 0.0);
    }
    norm1(m) * inv_norm
}

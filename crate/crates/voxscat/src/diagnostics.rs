//! Executable uniqueness diagnostics for the first-kind equation.
//!
//! Two complementary facts about `∫_P G(x,y) J(y) dy = u_s(x)` on exterior
//! data are made runnable here:
//!
//! * **Non-uniqueness among smooth densities.** On `P = [-1,1]³` the
//!   polynomial bump `ψ = (1-x₁²)²(1-x₂²)²(1-x₃²)²` yields a density
//!   `J = -(Δ + k₀²)ψ` whose volume potential vanishes identically outside
//!   `P` while reproducing `ψ` inside, for every `k₀`.
//!   [`nonuniqueness_oracle`] verifies both statements by quadrature
//!   refinement.
//!
//! * **Uniqueness among piecewise constants.** The exponentials
//!   `exp(i r_I·ξ)` on the sphere `|ξ| = k₀` have the Gram matrix
//!   `Γ_II' = 4π k₀ sin(k₀|r_II'|)/|r_II'|` (diagonal `4π k₀²`); strict
//!   diagonal dominance of `Γ` — guaranteed when `k₀ > π²n³/(2l)` — makes
//!   piecewise-constant solutions unique. [`uniqueness_bound`] reports the
//!   bound and the actually computed dominance margin; the artifact reports
//!   rather than enforces it, since practical runs sit far below the bound
//!   yet reconstruct fine.

use nalgebra::{DMatrix, Point3};
use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{Grid, Parallelepiped};
use crate::kernels::{
    voxel_kernel_integral, QuadratureError, QuadratureSpec, Wavenumber, FOUR_PI,
};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("gram matrix requires k0 > 0, got {0}")]
    NonPositiveWavenumber(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Kernel(#[from] crate::kernels::KernelError),
}

/// Gram matrix of the voxel-shift exponentials on the sphere `|ξ| = k₀`.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    pub k0: f64,
    pub grid: Grid,
}

/// Shift vector `r_I = (i₁h₁, i₂h₂, i₃h₃)` of a voxel.
fn shift(grid: &Grid, linear: usize) -> Point3<f64> {
    let idx = grid.from_linear(linear);
    let h = grid.spacing();
    Point3::new(
        idx.0[0] as f64 * h.x,
        idx.0[1] as f64 * h.y,
        idx.0[2] as f64 * h.z,
    )
}

/// Builds `Γ_II' = 4π k₀ sin(k₀ |r_I - r_I'|)/|r_I - r_I'|`, `Γ_II = 4π k₀²`.
pub fn gram_matrix(grid: &Grid, k0: f64) -> Result<GramMatrix, DiagnosticsError> {
    if !(k0 > 0.0) {
        return Err(DiagnosticsError::NonPositiveWavenumber(k0));
    }
    let n = grid.voxel_count();
    let shifts: Vec<Point3<f64>> = (0..n).map(|l| shift(grid, l)).collect();
    let matrix = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            FOUR_PI * k0 * k0
        } else {
            let r = (shifts[i] - shifts[j]).norm();
            FOUR_PI * k0 * (k0 * r).sin() / r
        }
    });
    Ok(GramMatrix {
        matrix,
        k0,
        grid: grid.clone(),
    })
}

/// Outcome of the sufficient uniqueness condition for piecewise-constant
/// currents.
#[derive(Debug, Clone, Copy)]
pub struct UniquenessReport {
    /// `π²n³/(2l)`; only defined for cubic voxel counts (n per axis equal).
    pub bound: Option<f64>,
    /// `k₀ > bound` (false when the bound is undefined).
    pub satisfied: bool,
    /// Max row sum of `|Γ_II'|/(4πk₀)` off the diagonal, the norm `‖Γ̃‖_∞`.
    pub offdiag_norm: f64,
    /// `k₀ - offdiag_norm`; positive means strict diagonal dominance, the
    /// mechanism that makes `Γ` nonsingular.
    pub dominance_margin: f64,
}

/// Evaluates the sufficient condition `k₀ > π²n³/(2l)` and the actual
/// diagonal-dominance margin of the Gram matrix.
pub fn uniqueness_bound(grid: &Grid, k0: f64) -> Result<UniquenessReport, DiagnosticsError> {
    if !(k0 > 0.0) {
        return Err(DiagnosticsError::NonPositiveWavenumber(k0));
    }
    let counts = grid.n();
    let bound = if counts[0] == counts[1] && counts[1] == counts[2] {
        let n = counts[0] as f64;
        let l = grid.bounds().min_edge();
        Some(std::f64::consts::PI.powi(2) * n.powi(3) / (2.0 * l))
    } else {
        None
    };

    let n = grid.voxel_count();
    let shifts: Vec<Point3<f64>> = (0..n).map(|l| shift(grid, l)).collect();
    let mut offdiag_norm = 0.0f64;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let r = (shifts[i] - shifts[j]).norm();
            row += ((k0 * r).sin() / r).abs();
        }
        offdiag_norm = offdiag_norm.max(row);
    }
    Ok(UniquenessReport {
        bound,
        satisfied: bound.map(|b| k0 > b).unwrap_or(false),
        offdiag_norm,
        dominance_margin: k0 - offdiag_norm,
    })
}

/// Result of the executable non-uniqueness construction.
#[derive(Debug, Clone)]
pub struct NonuniquenessReport {
    /// `max |v|` over the exterior probes at the finest level (exact value 0).
    pub max_exterior_potential: f64,
    /// `max |v - ψ|` over interior probes at the finest level (exact value 0).
    pub interior_match_error: f64,
    /// `(exterior, interior)` errors per refinement level, coarse to fine.
    pub levels: Vec<(f64, f64)>,
}

/// `ψ(x) = Π (1 - x_i²)²` on `[-1,1]³`.
fn psi(p: &Point3<f64>) -> f64 {
    let f = |t: f64| {
        let s = 1.0 - t * t;
        s * s
    };
    f(p.x) * f(p.y) * f(p.z)
}

/// `J = -(Δ + k₀²)ψ` expanded through `f''(t) = 12t² - 4`.
fn density(p: &Point3<f64>, k0: f64) -> f64 {
    let f = |t: f64| {
        let s = 1.0 - t * t;
        s * s
    };
    let fpp = |t: f64| 12.0 * t * t - 4.0;
    let laplacian = fpp(p.x) * f(p.y) * f(p.z)
        + f(p.x) * fpp(p.y) * f(p.z)
        + f(p.x) * f(p.y) * fpp(p.z);
    -(laplacian + k0 * k0 * psi(p))
}

/// Verifies, by a three-level quadrature refinement study, that the volume
/// potential of `J = -(Δ + k₀²)ψ` vanishes outside `P = [-1,1]³` and equals
/// `ψ` inside.
///
/// Exterior probes (26 points at distance >= 0.5) use composite tensor Gauss
/// quadrature with `2^level` subcells per axis. Interior probes (27 points)
/// split off the kernel singularity by writing
/// `v(x) = ∫ G(x,y)(J(y) - J(x)) dy + J(x)·∫ G(x,y) dy` and evaluating the
/// second integral with the box-potential machinery.
pub fn nonuniqueness_oracle(
    k0: f64,
    spec: &QuadratureSpec,
) -> Result<NonuniquenessReport, DiagnosticsError> {
    if !(k0 > 0.0) {
        return Err(DiagnosticsError::NonPositiveWavenumber(k0));
    }
    let domain = Parallelepiped::cube(-1.0, 2.0).expect("static box");
    let k0c = Complex64::new(k0, 0.0);

    // 6 face + 12 edge + 8 corner directions, pushed 0.5 outside the cube
    let mut exterior = Vec::new();
    for sx in [-1i32, 0, 1] {
        for sy in [-1i32, 0, 1] {
            for sz in [-1i32, 0, 1] {
                if sx == 0 && sy == 0 && sz == 0 {
                    continue;
                }
                exterior.push(Point3::new(
                    1.5 * sx as f64,
                    1.5 * sy as f64,
                    1.5 * sz as f64,
                ));
            }
        }
    }
    let interior: Vec<Point3<f64>> = {
        let offs = [-0.55, 0.1, 0.62];
        let mut v = Vec::new();
        for &x in &offs {
            for &y in &offs {
                for &z in &offs {
                    v.push(Point3::new(x, y, z));
                }
            }
        }
        v
    };

    let mut levels = Vec::new();
    for level in 0..3usize {
        let cells_per_axis = 2usize << level; // 2, 4, 8
        let order = spec.smooth_order.max(8);

        let ext_err = exterior
            .iter()
            .map(|p| {
                composite_potential(p, &domain, cells_per_axis, order, k0c).norm()
            })
            .fold(0.0, f64::max);

        let int_err = interior
            .iter()
            .map(|p| {
                let v = interior_potential(p, &domain, cells_per_axis, order, k0, spec)?;
                Ok((v - Complex64::from(psi(p))).norm())
            })
            .try_fold(0.0f64, |acc, r: Result<f64, DiagnosticsError>| {
                r.map(|e| acc.max(e))
            })?;

        levels.push((ext_err, int_err));
    }
    let finest = *levels.last().expect("three levels");
    Ok(NonuniquenessReport {
        max_exterior_potential: finest.0,
        interior_match_error: finest.1,
        levels,
    })
}

/// `∫_P G(x,y) J(y) dy` by composite tensor Gauss for exterior targets.
fn composite_potential(
    target: &Point3<f64>,
    domain: &Parallelepiped,
    cells_per_axis: usize,
    order: usize,
    k0: Complex64,
) -> Complex64 {
    integrate_composite(domain, cells_per_axis, order, &|q| {
        let r = (q - target).norm();
        (Complex64::i() * k0 * r).exp() / (FOUR_PI * r) * density(q, k0.re)
    })
}

/// Interior evaluation with the singularity subtracted at the target.
fn interior_potential(
    target: &Point3<f64>,
    domain: &Parallelepiped,
    cells_per_axis: usize,
    order: usize,
    k0: f64,
    spec: &QuadratureSpec,
) -> Result<Complex64, DiagnosticsError> {
    let k0c = Complex64::new(k0, 0.0);
    let j_at = density(target, k0);
    // ∫ G·(J - J(x)): the integrand is bounded at the target (kernel 1/r
    // times an O(r) numerator); composite Gauss with cells graded by the
    // splitting below converges cleanly. The kernel value at r = 0 is
    // irrelevant (measure zero, never sampled by Gauss nodes).
    let smooth = integrate_composite(domain, cells_per_axis, order, &|q| {
        let r = (q - target).norm();
        if r == 0.0 {
            return Complex64::default();
        }
        (Complex64::i() * k0c * r).exp() / (FOUR_PI * r) * (density(q, k0) - j_at)
    });
    // J(x)·∫ G: Newton part in closed form plus the entire remainder
    let kw = Wavenumber::real(k0).expect("positive k0");
    let tol_spec = QuadratureSpec {
        smooth_order: order.min(12),
        near_split: spec.near_split.max(3) + cells_per_axis.ilog2() as usize,
        tol: spec.tol,
    };
    let g_int = voxel_kernel_integral(kw, target, domain, &tol_spec)?;
    Ok(smooth + Complex64::from(j_at) * g_int)
}

fn integrate_composite(
    domain: &Parallelepiped,
    cells_per_axis: usize,
    order: usize,
    f: &dyn Fn(&Point3<f64>) -> Complex64,
) -> Complex64 {
    let lo = domain.lower();
    let ext = domain.extent();
    let step = ext / cells_per_axis as f64;
    let rule = crate::kernels::gauss_rule(order);
    let jac = step.x * step.y * step.z / 8.0;
    let mut acc = Complex64::default();
    for cx in 0..cells_per_axis {
        for cy in 0..cells_per_axis {
            for cz in 0..cells_per_axis {
                let c = Point3::new(
                    lo.x + (cx as f64 + 0.5) * step.x,
                    lo.y + (cy as f64 + 0.5) * step.y,
                    lo.z + (cz as f64 + 0.5) * step.z,
                );
                for (i, &xi) in rule.nodes.iter().enumerate() {
                    for (j, &yj) in rule.nodes.iter().enumerate() {
                        for (k, &zk) in rule.nodes.iter().enumerate() {
                            let q = Point3::new(
                                c.x + 0.5 * step.x * xi,
                                c.y + 0.5 * step.y * yj,
                                c.z + 0.5 * step.z * zk,
                            );
                            acc += rule.weights[i]
                                * rule.weights[j]
                                * rule.weights[k]
                                * f(&q);
                        }
                    }
                }
            }
        }
    }
    acc * jac
}

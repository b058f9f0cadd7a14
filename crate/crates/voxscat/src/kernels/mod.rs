//! Helmholtz kernels and their quadrature over voxels.
//!
//! The free-space Green function of the Helmholtz equation,
//! `G(x,y) = exp(ik₀|x-y|)/(4π|x-y|)`, together with its conjugate variant
//! `Ḡ = exp(-ik₀r)/(4πr)` and the entire difference kernel
//! `G₀ = sin(k₀r)/(4πr)`. A point source at `x₀` radiates the incident
//! field `u₀(x) = G(x, x₀)`.
//!
//! All functions are pure and safe to call concurrently.

mod gauss;
mod newton;
mod quadrature;

pub use newton::newton_box_potential;
pub use quadrature::voxel_kernel_integral;

pub(crate) use gauss::rule as gauss_rule;

use nalgebra::Point3;
use num_complex::Complex64;
use thiserror::Error;

pub(crate) const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel is singular at coincident points")]
    CoincidentPoints,
    #[error("wavenumber must have Re > 0 and Im >= 0, got {0}")]
    InvalidWavenumber(Complex64),
}

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error(
        "quadrature tolerance unreachable at configured orders: achieved ~{achieved:.3e}, requested {requested:.3e}"
    )]
    ToleranceUnreachable { achieved: f64, requested: f64 },
    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(&'static str),
}

/// Exterior wavenumber `k₀`. The real part must be positive; a positive
/// imaginary part models an absorbing background (both radiation conditions
/// are supported downstream).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wavenumber(Complex64);

impl Wavenumber {
    pub fn new(k0: Complex64) -> Result<Self, KernelError> {
        if k0.re > 0.0 && k0.im >= 0.0 {
            Ok(Self(k0))
        } else {
            Err(KernelError::InvalidWavenumber(k0))
        }
    }

    pub fn real(k0: f64) -> Result<Self, KernelError> {
        Self::new(Complex64::new(k0, 0.0))
    }

    pub fn as_complex(self) -> Complex64 {
        self.0
    }
}

impl std::fmt::Display for Wavenumber {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Quadrature configuration for the kernel integrals.
///
/// `smooth_order` is the base tensor Gauss order for regular integrals,
/// `near_split` the base dyadic grading depth near the singularity, `tol`
/// the target relative error. The integrator escalates beyond the base
/// settings until `tol` is met or an error is returned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub smooth_order: usize,
    pub near_split: usize,
    pub tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            smooth_order: 4,
            near_split: 3,
            tol: 1e-8,
        }
    }
}

impl QuadratureSpec {
    pub(crate) fn validate(&self) -> Result<(), QuadratureError> {
        if self.smooth_order < 1 {
            return Err(QuadratureError::InvalidSpec("smooth_order must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(QuadratureError::InvalidSpec("tol must be > 0"));
        }
        Ok(())
    }

    /// Spec with a tighter tolerance, other knobs unchanged.
    pub fn with_tol(self, tol: f64) -> Self {
        Self { tol, ..self }
    }
}

/// Free-space Green function `exp(ik₀r)/(4πr)`, `r = |x-y|`.
pub fn green(
    k0: Wavenumber,
    x: &Point3<f64>,
    y: &Point3<f64>,
) -> Result<Complex64, KernelError> {
    let r = (x - y).norm();
    if r == 0.0 {
        return Err(KernelError::CoincidentPoints);
    }
    Ok((Complex64::i() * k0.as_complex() * r).exp() / (FOUR_PI * r))
}

/// Conjugate fundamental solution `exp(-ik₀r)/(4πr)`.
pub fn green_conj(
    k0: Wavenumber,
    x: &Point3<f64>,
    y: &Point3<f64>,
) -> Result<Complex64, KernelError> {
    let r = (x - y).norm();
    if r == 0.0 {
        return Err(KernelError::CoincidentPoints);
    }
    Ok((-Complex64::i() * k0.as_complex() * r).exp() / (FOUR_PI * r))
}

/// Entire kernel `sin(k₀r)/(4πr)`, with the removable-singularity value
/// `k₀/(4π)` at `r = 0`.
pub fn green_sinc(k0: Wavenumber, x: &Point3<f64>, y: &Point3<f64>) -> Complex64 {
    let r = (x - y).norm();
    let k = k0.as_complex();
    if r == 0.0 {
        return k / FOUR_PI;
    }
    let z = k * r;
    // sin(z)/z via series near zero to avoid cancellation
    let sinc = if z.norm() < 1e-4 {
        Complex64::from(1.0) - z * z / 6.0
    } else {
        z.sin() / z
    };
    k * sinc / FOUR_PI
}

/// Incident field of a point source at `x₀`: `u₀(x) = G(x, x₀)`.
pub fn incident_field(
    k0: Wavenumber,
    x0: &Point3<f64>,
    x: &Point3<f64>,
) -> Result<Complex64, KernelError> {
    green(k0, x, x0)
}

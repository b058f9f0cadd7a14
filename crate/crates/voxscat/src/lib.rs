//! Scalar-wave diffraction by an inhomogeneous parallelepiped and the
//! reconstruction of its refractive index from near-field data.
//!
//! The direct problem is posed as the Lippmann-Schwinger volume integral
//! equation for the total field `u` inside the scatterer `P`,
//!
//! ```text
//! u(x) - ∫_P (k²(y) - k₀²) G(x,y) u(y) dy = u₀(x),    x ∈ P,
//! ```
//!
//! with `G(x,y) = exp(ik₀|x-y|)/(4π|x-y|)` and a point-source incident field
//! `u₀`. The field anywhere outside `P` follows from the integral
//! representation with the same kernel. Both are discretized by collocation
//! on a uniform voxel mesh with piecewise-constant unknowns.
//!
//! The inverse problem — recovering `k(x)` from total-field samples on a
//! receiver set outside `P` — is solved by the linear two-step method:
//!
//! 1. solve the first-kind system `∫_P G(x,y) J(y) dy = u_s(x)` on the
//!    receivers for the current `J = (k² - k₀²)u`;
//! 2. recover `k(x)` algebraically from the Lippmann-Schwinger relation
//!    inside `P`.
//!
//! No nonlinear iteration is involved. The [`inverse`] module also provides
//! the mitigation machinery for the ill-conditioned first step (truncated
//! SVD, measurement filtering, rotation fusion, adaptive refinement) and the
//! [`diagnostics`] module turns the uniqueness/non-uniqueness theory of the
//! first-kind equation into executable checks.
//!
//! Dense loops (matrix assembly, receiver evaluation) run on rayon when the
//! default `parallel` feature is enabled and fall back to sequential
//! iteration without it; results are bitwise identical either way.

// validation guards are written `!(x > 0.0)` on purpose: NaN must fail them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod forward;
pub mod geometry;
pub mod inverse;
pub mod io;
pub mod kernels;
pub mod measurement;

mod linalg;
mod par;

pub use diagnostics::{gram_matrix, nonuniqueness_oracle, uniqueness_bound, GramMatrix};
pub use forward::{
    assemble_ls_matrix, current_from_solution, scattered_field_at, solve_forward,
    ComplexVoxelField, ForwardSolution, RefractiveField,
};
pub use geometry::{Face, Grid, Parallelepiped, VoxelIndex};
pub use inverse::{
    assemble_first_kind, filter_measurements, reconstruct_k, refinement_region, rotation_fuse,
    solve_current, FirstKindSystem, Reconstruction, RegularizationSpec,
};
pub use kernels::{
    green, green_conj, green_sinc, incident_field, voxel_kernel_integral, QuadratureSpec,
    Wavenumber,
};
pub use measurement::{
    build_receivers, build_receivers_focused, synthesize, synthesize_with_solution,
    MeasurementSet, NoiseSpec, PlaneAxis, ReceiverArray,
};

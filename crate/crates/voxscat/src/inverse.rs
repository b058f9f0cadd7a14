//! The two-step reconstruction of the refractive index from near-field
//! data, plus the mitigation procedures for its ill-conditioned first step.
//!
//! Step 1 solves the first-kind system `B·J = u_s` on the receivers, where
//! `B[i][j] = ∫_{Π_j} G(r_i, y) dy` has a smooth kernel and is severely
//! ill-conditioned; a truncated SVD (or Tikhonov filter) regularizes the
//! least-squares solve and reports the retained conditioning. Step 2
//! recovers `k(x)` voxelwise from
//!
//! ```text
//! k_i² = k₀² + J_i / D_i,    D_i = u₀(x_i) + Σ_j ∫_{Π_j} G(x_i,y) dy · J_j,
//! ```
//!
//! the Lippmann-Schwinger relation evaluated at the collocation points
//! (`D_i` is the reconstructed total field). Voxels whose denominator falls
//! under a guard threshold are masked instead of silently dividing by a
//! near-null field.
//!
//! Artifacts from noisy data are attacked three ways: measurement filtering
//! against a model prediction, median fusion of reconstructions from rotated
//! source/receiver configurations, and adaptive refinement of the detected
//! inhomogeneity region (driven by [`refinement_region`]).

use nalgebra::{DMatrix, DVector, Point3};
use num_complex::Complex64;
use thiserror::Error;

use crate::forward::{ComplexVoxelField, ForwardError, RefractiveField};
use crate::geometry::{Grid, VoxelIndex};
use crate::io::{self, CsvError};
use crate::kernels::{
    incident_field, voxel_kernel_integral, KernelError, QuadratureError, QuadratureSpec,
    Wavenumber,
};
use crate::measurement::{MeasurementSet, ReceiverArray};
use crate::par;

#[derive(Debug, Error)]
pub enum InverseError {
    #[error("first-kind system needs receivers >= voxels, got {rows} x {cols}")]
    Underdetermined { rows: usize, cols: usize },
    #[error("measurement receivers do not match the assembled system")]
    ReceiverMismatch,
    #[error("receiver at {0:?} lies inside the scatterer closure")]
    ReceiverInsideScatterer(Point3<f64>),
    #[error("regularization dropped every singular mode")]
    DegenerateRegularization,
    #[error("svd cutoff must lie in (0,1), got {0}")]
    InvalidCutoff(f64),
    #[error("tikhonov lambda must be >= 0, got {0}")]
    InvalidLambda(f64),
    #[error("denominator guard must be > 0, got {0}")]
    InvalidGuard(f64),
    #[error("filtering kept {kept} receivers, fewer than the {needed} required")]
    InsufficientData { kept: usize, needed: usize },
    #[error("reconstructions live on different grids")]
    GridMismatch,
    #[error("rotation fusion needs at least 2 reconstructions, got {0}")]
    TooFewReconstructions(usize),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Csv(#[from] CsvError),
}

/// Discretized first-kind operator from the grid voxels to the receivers.
#[derive(Debug, Clone)]
pub struct FirstKindSystem {
    pub matrix: DMatrix<Complex64>,
    pub receivers: ReceiverArray,
    pub grid: Grid,
    pub k0: Wavenumber,
}

/// Choice of regularizer for the first-kind solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegularizationSpec {
    /// Drop singular values below `rel_cutoff · σ_max`.
    TruncatedSvd { rel_cutoff: f64 },
    /// Spectral filter `σ/(σ² + λ²)`.
    Tikhonov { lambda: f64 },
}

impl Default for RegularizationSpec {
    fn default() -> Self {
        RegularizationSpec::TruncatedSvd { rel_cutoff: 1e-8 }
    }
}

impl RegularizationSpec {
    fn validate(&self) -> Result<(), InverseError> {
        match *self {
            RegularizationSpec::TruncatedSvd { rel_cutoff } => {
                if rel_cutoff <= 0.0 || rel_cutoff >= 1.0 {
                    return Err(InverseError::InvalidCutoff(rel_cutoff));
                }
            }
            RegularizationSpec::Tikhonov { lambda } => {
                if lambda < 0.0 {
                    return Err(InverseError::InvalidLambda(lambda));
                }
            }
        }
        Ok(())
    }
}

/// Diagnostics of one first-kind solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveDiagnostics {
    /// Ratio of extreme retained singular values.
    pub cond_b: f64,
    pub dropped_modes: usize,
    /// Relative residual of the regularized solution.
    pub residual: f64,
}

/// Output of the two-step method on one configuration.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub k_rec: RefractiveField,
    pub j_rec: ComplexVoxelField,
    /// True where the voxel recovery is trusted.
    pub mask: Vec<bool>,
    pub k0: Wavenumber,
    pub diagnostics: ReconstructionDiagnostics,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReconstructionDiagnostics {
    pub cond_b: f64,
    pub dropped_modes: usize,
    pub residual: f64,
    pub masked_count: usize,
}

/// Assembles `B[i][j] = ∫_{Π_j} G(r_i, y) dy` over all receivers.
pub fn assemble_first_kind(
    grid: &Grid,
    k0: Wavenumber,
    receivers: &ReceiverArray,
    spec: &QuadratureSpec,
) -> Result<FirstKindSystem, InverseError> {
    for r in &receivers.positions {
        if grid.bounds().distance_to(r) == 0.0 {
            return Err(InverseError::ReceiverInsideScatterer(*r));
        }
    }
    let boxes = grid.voxel_boxes();
    let m = receivers.len();
    let n = grid.voxel_count();
    let rows: Vec<Vec<Complex64>> = par::try_map_indexed(m, |i| {
        let r = receivers.positions[i];
        boxes
            .iter()
            .map(|bx| voxel_kernel_integral(k0, &r, bx, spec))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(FirstKindSystem {
        matrix: DMatrix::from_row_iterator(m, n, rows.into_iter().flatten()),
        receivers: receivers.clone(),
        grid: grid.clone(),
        k0,
    })
}

/// Regularized least-squares solve of `B·J = u_scattered`.
pub fn solve_current(
    system: &FirstKindSystem,
    meas: &MeasurementSet,
    reg: &RegularizationSpec,
) -> Result<(ComplexVoxelField, SolveDiagnostics), InverseError> {
    reg.validate()?;
    let (m, n) = (system.matrix.nrows(), system.matrix.ncols());
    if m < n {
        return Err(InverseError::Underdetermined { rows: m, cols: n });
    }
    if meas.receivers.positions != system.receivers.positions {
        return Err(InverseError::ReceiverMismatch);
    }

    let b = DVector::from_column_slice(&meas.u_scattered);
    let svd = system.matrix.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested");
    let v_t = svd.v_t.as_ref().expect("requested");
    let rank = svd.singular_values.len();
    let sigma_max = svd.singular_values.max();

    let mut j = DVector::<Complex64>::zeros(n);
    let mut kept = 0usize;
    let mut sigma_min_kept = f64::INFINITY;
    for i in 0..rank {
        let sigma = svd.singular_values[i];
        let coeff = u.column(i).dotc(&b);
        let filter = match *reg {
            RegularizationSpec::TruncatedSvd { rel_cutoff } => {
                if sigma < rel_cutoff * sigma_max || sigma == 0.0 {
                    continue;
                }
                1.0 / sigma
            }
            RegularizationSpec::Tikhonov { lambda } => {
                if sigma == 0.0 {
                    continue;
                }
                sigma / (sigma * sigma + lambda * lambda)
            }
        };
        kept += 1;
        sigma_min_kept = sigma_min_kept.min(sigma);
        j += v_t.row(i).adjoint() * (coeff * filter);
    }
    if kept == 0 {
        return Err(InverseError::DegenerateRegularization);
    }

    let b_norm = b.norm();
    let residual = if b_norm == 0.0 {
        0.0
    } else {
        (&system.matrix * &j - &b).norm() / b_norm
    };
    let diagnostics = SolveDiagnostics {
        cond_b: sigma_max / sigma_min_kept,
        dropped_modes: rank - kept,
        residual,
    };
    Ok((
        ComplexVoxelField::new(system.grid.clone(), j.iter().copied().collect())?,
        diagnostics,
    ))
}

/// Step 2: recovers `k(x)` from the current. The denominator is the
/// reconstructed total field at each voxel center; voxels with
/// `|D_i| <= guard_eps·|u₀(x_i)|` are masked and carry `k₀` as placeholder.
///
/// The square root takes the passive branch: a slightly negative `Im k²`
/// (numerical noise around a lossless medium) is projected to zero before
/// the principal root, so `Im k >= 0` holds without flipping `Re k`.
pub fn reconstruct_k(
    j_rec: &ComplexVoxelField,
    k0: Wavenumber,
    source: &Point3<f64>,
    spec: &QuadratureSpec,
    guard_eps: f64,
    solve_diag: SolveDiagnostics,
) -> Result<Reconstruction, InverseError> {
    if !(guard_eps > 0.0) {
        return Err(InverseError::InvalidGuard(guard_eps));
    }
    let grid = j_rec.grid().clone();
    let n = grid.voxel_count();
    let centers = grid.centers();
    let boxes = grid.voxel_boxes();
    let jv = j_rec.values();
    let k0c = k0.as_complex();
    let k0sq = k0c * k0c;

    let denominators: Vec<(Complex64, Complex64)> = par::try_map_indexed(n, |i| {
        let u0 = incident_field(k0, source, &centers[i])?;
        let mut d = u0;
        for (bx, jj) in boxes.iter().zip(jv) {
            if *jj != Complex64::default() {
                d += voxel_kernel_integral(k0, &centers[i], bx, spec)? * jj;
            }
        }
        Ok::<_, InverseError>((d, u0))
    })?;

    let mut k_vox = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for (i, (d, u0)) in denominators.iter().enumerate() {
        if d.norm() > guard_eps * u0.norm() {
            let mut ksq = k0sq + jv[i] / d;
            if ksq.im < 0.0 {
                ksq.im = 0.0;
            }
            k_vox.push(ksq.sqrt());
            mask.push(true);
        } else {
            k_vox.push(k0c);
            mask.push(false);
        }
    }
    let masked_count = mask.iter().filter(|m| !**m).count();
    Ok(Reconstruction {
        k_rec: RefractiveField::new(grid, k_vox)?,
        j_rec: j_rec.clone(),
        mask,
        k0,
        diagnostics: ReconstructionDiagnostics {
            cond_b: solve_diag.cond_b,
            dropped_modes: solve_diag.dropped_modes,
            residual: solve_diag.residual,
            masked_count,
        },
    })
}

/// Discards receivers that deviate grossly from a model-predicted reference
/// or whose lattice Laplacian is rough beyond the local field scale. The
/// roughness test needs a complete lattice and is skipped otherwise.
///
/// `min_survivors` is the number of receivers the downstream first-kind
/// solve requires (its voxel count).
pub fn filter_measurements(
    meas: &MeasurementSet,
    reference: &MeasurementSet,
    max_rel_dev: f64,
    max_rough: f64,
    min_survivors: usize,
) -> Result<MeasurementSet, InverseError> {
    if meas.receivers.positions != reference.receivers.positions {
        return Err(InverseError::ReceiverMismatch);
    }
    let m = meas.receivers.len();
    let mut keep = vec![true; m];
    for ((flag, measured), predicted) in keep.iter_mut().zip(&meas.u_total).zip(&reference.u_total) {
        let reference_scale = predicted.norm().max(1e-300);
        if (measured - predicted).norm() / reference_scale > max_rel_dev {
            *flag = false;
        }
    }

    if meas.receivers.complete_lattice {
        let [p0, p1] = meas.receivers.per_plane;
        let planes = meas.receivers.plane_offsets.len();
        if p0 >= 3 && p1 >= 3 {
            for plane in 0..planes {
                let at = |a: usize, b: usize| meas.u_total[plane * p0 * p1 + a * p1 + b];
                for a in 1..p0 - 1 {
                    for b in 1..p1 - 1 {
                        let c = at(a, b);
                        let nb = [at(a - 1, b), at(a + 1, b), at(a, b - 1), at(a, b + 1)];
                        let lap = nb.iter().sum::<Complex64>() - 4.0 * c;
                        let scale =
                            (c.norm() + nb.iter().map(|v| v.norm()).sum::<f64>()) / 5.0;
                        if lap.norm() > max_rough * scale.max(1e-300) {
                            keep[plane * p0 * p1 + a * p1 + b] = false;
                        }
                    }
                }
            }
        }
    }

    let kept = keep.iter().filter(|k| **k).count();
    if kept < min_survivors {
        return Err(InverseError::InsufficientData {
            kept,
            needed: min_survivors,
        });
    }
    let pick = |v: &[Complex64]| -> Vec<Complex64> {
        v.iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(x, _)| *x)
            .collect()
    };
    Ok(MeasurementSet {
        source: meas.source,
        k0: meas.k0,
        receivers: meas.receivers.subset(&keep),
        u_total: pick(&meas.u_total),
        u_incident: pick(&meas.u_incident),
        u_scattered: pick(&meas.u_scattered),
        noise: meas.noise,
    })
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Fuses reconstructions from rotated source/receiver configurations by the
/// per-voxel componentwise median over unmasked entries. A voxel stays
/// masked in the fusion when unmasked in fewer than half the inputs.
/// Artifacts move with the configuration while true inhomogeneities persist,
/// so the median suppresses them.
pub fn rotation_fuse(recs: &[Reconstruction]) -> Result<Reconstruction, InverseError> {
    if recs.len() < 2 {
        return Err(InverseError::TooFewReconstructions(recs.len()));
    }
    let grid = recs[0].k_rec.grid().clone();
    if recs.iter().any(|r| r.k_rec.grid() != &grid) {
        return Err(InverseError::GridMismatch);
    }
    let n = grid.voxel_count();
    let k0 = recs[0].k0;
    let total = recs.len();

    let mut k_vox = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    let mut j_vox = Vec::with_capacity(n);
    for v in 0..n {
        let unmasked: Vec<Complex64> = recs
            .iter()
            .filter(|r| r.mask[v])
            .map(|r| r.k_rec.values()[v])
            .collect();
        if unmasked.len() * 2 < total {
            k_vox.push(k0.as_complex());
            mask.push(false);
        } else {
            let re = median(unmasked.iter().map(|c| c.re).collect());
            let im = median(unmasked.iter().map(|c| c.im).collect());
            k_vox.push(Complex64::new(re, im.max(0.0)));
            mask.push(true);
        }
        let jre = median(recs.iter().map(|r| r.j_rec.values()[v].re).collect());
        let jim = median(recs.iter().map(|r| r.j_rec.values()[v].im).collect());
        j_vox.push(Complex64::new(jre, jim));
    }
    let masked_count = mask.iter().filter(|m| !**m).count();
    // worst case of the ingredients
    let diagnostics = ReconstructionDiagnostics {
        cond_b: recs
            .iter()
            .map(|r| r.diagnostics.cond_b)
            .fold(0.0, f64::max),
        dropped_modes: recs
            .iter()
            .map(|r| r.diagnostics.dropped_modes)
            .max()
            .unwrap_or(0),
        residual: recs
            .iter()
            .map(|r| r.diagnostics.residual)
            .fold(0.0, f64::max),
        masked_count,
    };
    Ok(Reconstruction {
        k_rec: RefractiveField::new(grid.clone(), k_vox)?,
        j_rec: ComplexVoxelField::new(grid, j_vox)?,
        mask,
        k0,
        diagnostics,
    })
}

/// Bounding box of the voxels whose recovered contrast exceeds
/// `threshold·|k₀|`; `None` when nothing exceeds it. Masked voxels are
/// excluded. This drives adaptive refinement of the inhomogeneity region.
pub fn refinement_region(
    rec: &Reconstruction,
    threshold: f64,
) -> Option<(VoxelIndex, VoxelIndex)> {
    let grid = rec.k_rec.grid();
    let k0 = rec.k0.as_complex();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for idx in grid.indices() {
        let l = grid.linear(idx);
        if !rec.mask[l] {
            continue;
        }
        if (rec.k_rec.values()[l] - k0).norm() > threshold * k0.norm() {
            any = true;
            for k in 0..3 {
                lo[k] = lo[k].min(idx.0[k]);
                hi[k] = hi[k].max(idx.0[k]);
            }
        }
    }
    any.then_some((VoxelIndex(lo), VoxelIndex(hi)))
}

impl Reconstruction {
    /// Writes `i1,i2,i3,re_k,im_k,masked` rows plus a `.diag` sidecar.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), CsvError> {
        let grid = self.k_rec.grid();
        let mut out = String::from("i1,i2,i3,re_k,im_k,masked\n");
        for (linear, idx) in grid.indices().enumerate() {
            io::push_fields(
                &mut out,
                &[
                    idx.0[0].to_string(),
                    idx.0[1].to_string(),
                    idx.0[2].to_string(),
                    io::fmt_f64(self.k_rec.values()[linear].re),
                    io::fmt_f64(self.k_rec.values()[linear].im),
                    (!self.mask[linear] as u8).to_string(),
                ],
            );
        }
        std::fs::write(path, out)?;

        let d = &self.diagnostics;
        let diag = format!(
            "cond_B = {}\ndropped_modes = {}\nresidual = {}\nmasked_count = {}\n",
            io::fmt_f64(d.cond_b),
            d.dropped_modes,
            io::fmt_f64(d.residual),
            d.masked_count
        );
        std::fs::write(path.with_extension("diag"), diag)?;
        Ok(())
    }
}

//! The direct scattering problem: assemble and solve the collocation
//! discretization of the Lippmann-Schwinger equation for the total field
//! inside `P`, then evaluate the field anywhere outside through the integral
//! representation.
//!
//! With voxel-constant refractive index `k_j` and voxel centers `x_i` as
//! collocation points, the discrete system is `(I - A) u = u₀` with
//!
//! ```text
//! A[i][j] = (k_j² - k₀²) ∫_{Π_j} G(x_i, y) dy.
//! ```
//!
//! The solve is a dense partial-pivot LU; the relative residual and a 1-norm
//! condition estimate of `I - A` are reported with every solution. Assembly
//! is parallel over matrix rows.

use nalgebra::{DMatrix, DVector, Point3};
use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::Grid;
use crate::io::{self, CsvError};
use crate::kernels::{
    incident_field, voxel_kernel_integral, KernelError, QuadratureError, QuadratureSpec,
    Wavenumber,
};
use crate::linalg;
use crate::par;

/// Relative residual above which a factorized solve is rejected.
const RESIDUAL_LIMIT: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("refractive field needs Im k >= 0 in every voxel (voxel {0})")]
    NegativeAbsorption(usize),
    #[error("field length {got} does not match grid voxel count {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("point {0:?} must lie strictly outside the closure of the scatterer")]
    PointInsideScatterer(Point3<f64>),
    #[error("linear system is numerically singular (condition estimate {cond_estimate:.3e}, residual {residual:.3e})")]
    SingularSystem { cond_estimate: f64, residual: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Csv(#[from] CsvError),
}

/// Voxel-constant restriction of the refractive index `k(x)` to a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RefractiveField {
    grid: Grid,
    k_vox: Vec<Complex64>,
}

impl RefractiveField {
    /// Builds from per-voxel values; every voxel must satisfy `Im k >= 0`.
    pub fn new(grid: Grid, k_vox: Vec<Complex64>) -> Result<Self, ForwardError> {
        if k_vox.len() != grid.voxel_count() {
            return Err(ForwardError::LengthMismatch {
                got: k_vox.len(),
                expected: grid.voxel_count(),
            });
        }
        if let Some(j) = k_vox.iter().position(|k| k.im < 0.0) {
            return Err(ForwardError::NegativeAbsorption(j));
        }
        Ok(Self { grid, k_vox })
    }

    /// Homogeneous field `k ≡ k₀` (zero contrast).
    pub fn uniform(grid: Grid, k0: Wavenumber) -> Self {
        let n = grid.voxel_count();
        Self {
            grid,
            k_vox: vec![k0.as_complex(); n],
        }
    }

    /// Samples `k(x)` at the voxel centers.
    pub fn from_fn(
        grid: Grid,
        f: impl Fn(&Point3<f64>) -> Complex64,
    ) -> Result<Self, ForwardError> {
        let values = grid
            .centers()
            .iter()
            .map(f)
            .collect::<Vec<_>>();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.k_vox
    }

    /// Per-voxel contrast `k_j² - k₀²`.
    pub fn contrast(&self, k0: Wavenumber) -> Vec<Complex64> {
        let k0sq = k0.as_complex() * k0.as_complex();
        self.k_vox.iter().map(|k| k * k - k0sq).collect()
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), CsvError> {
        write_voxel_csv(&self.grid, &self.k_vox, path)
    }

    pub fn read_csv(grid: Grid, path: &std::path::Path) -> Result<Self, ForwardError> {
        let values = read_voxel_csv(&grid, path)?;
        Self::new(grid, values)
    }
}

/// One complex value per voxel: the total field `u|_P`, the incident field
/// `u₀|_P`, or the current `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVoxelField {
    grid: Grid,
    values: Vec<Complex64>,
}

impl ComplexVoxelField {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self, ForwardError> {
        if values.len() != grid.voxel_count() {
            return Err(ForwardError::LengthMismatch {
                got: values.len(),
                expected: grid.voxel_count(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), CsvError> {
        write_voxel_csv(&self.grid, &self.values, path)
    }

    pub fn read_csv(grid: Grid, path: &std::path::Path) -> Result<Self, ForwardError> {
        let values = read_voxel_csv(&grid, path)?;
        Self::new(grid, values)
    }
}

/// Result of a forward solve.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    /// Total field at the voxel centers.
    pub u_in: ComplexVoxelField,
    /// Relative discrete residual of the accepted solve.
    pub residual: f64,
    /// 1-norm condition estimate of `I - A`.
    pub cond_estimate: f64,
}

/// Assembles the discrete `I - A` collocation matrix.
pub fn assemble_ls_matrix(
    field: &RefractiveField,
    k0: Wavenumber,
    spec: &QuadratureSpec,
) -> Result<DMatrix<Complex64>, ForwardError> {
    let grid = field.grid();
    let n = grid.voxel_count();
    let centers = grid.centers();
    let boxes = grid.voxel_boxes();
    let contrast = field.contrast(k0);
    let rows: Vec<Vec<Complex64>> = par::try_map_indexed(n, |i| {
        let x = centers[i];
        let mut row = Vec::with_capacity(n);
        for j in 0..n {
            let mut entry = if i == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::default()
            };
            // zero contrast contributes nothing; skip its quadrature
            if contrast[j] != Complex64::default() {
                entry -= contrast[j] * voxel_kernel_integral(k0, &x, &boxes[j], spec)?;
            }
            row.push(entry);
        }
        Ok::<_, ForwardError>(row)
    })?;
    Ok(DMatrix::from_row_iterator(
        n,
        n,
        rows.into_iter().flatten(),
    ))
}

/// Incident field sampled at the voxel centers.
pub fn incident_on_grid(
    grid: &Grid,
    k0: Wavenumber,
    source: &Point3<f64>,
) -> Result<ComplexVoxelField, ForwardError> {
    let values = grid
        .centers()
        .iter()
        .map(|c| incident_field(k0, source, c))
        .collect::<Result<Vec<_>, _>>()?;
    ComplexVoxelField::new(grid.clone(), values)
}

/// Solves the forward problem for a point source strictly outside `P`.
pub fn solve_forward(
    field: &RefractiveField,
    k0: Wavenumber,
    source: &Point3<f64>,
    spec: &QuadratureSpec,
) -> Result<ForwardSolution, ForwardError> {
    let grid = field.grid();
    if grid.bounds().distance_to(source) == 0.0 {
        return Err(ForwardError::PointInsideScatterer(*source));
    }
    let m = assemble_ls_matrix(field, k0, spec)?;
    let rhs_field = incident_on_grid(grid, k0, source)?;
    let rhs = DVector::from_column_slice(rhs_field.values());

    let lu = m.clone().lu();
    let cond_estimate = linalg::cond1_estimate(&m, &lu);
    let mut u = lu.solve(&rhs).ok_or(ForwardError::SingularSystem {
        cond_estimate,
        residual: f64::INFINITY,
    })?;
    let rhs_norm = rhs.norm();
    let mut residual = (&m * &u - &rhs).norm() / rhs_norm;
    if residual > RESIDUAL_LIMIT {
        // one step of iterative refinement before giving up
        if let Some(correction) = lu.solve(&(&rhs - &m * &u)) {
            u += correction;
            residual = (&m * &u - &rhs).norm() / rhs_norm;
        }
        if residual > RESIDUAL_LIMIT {
            return Err(ForwardError::SingularSystem {
                cond_estimate,
                residual,
            });
        }
    }
    Ok(ForwardSolution {
        u_in: ComplexVoxelField::new(grid.clone(), u.iter().copied().collect())?,
        residual,
        cond_estimate,
    })
}

/// Scattered field at an exterior point `x` through the integral
/// representation. The total field there is `u₀(x)` plus this value.
pub fn scattered_field_at(
    u_in: &ComplexVoxelField,
    field: &RefractiveField,
    k0: Wavenumber,
    x: &Point3<f64>,
    spec: &QuadratureSpec,
) -> Result<Complex64, ForwardError> {
    if field.grid() != u_in.grid() {
        return Err(ForwardError::LengthMismatch {
            got: u_in.values().len(),
            expected: field.grid().voxel_count(),
        });
    }
    if field.grid().bounds().distance_to(x) == 0.0 {
        return Err(ForwardError::PointInsideScatterer(*x));
    }
    let contrast = field.contrast(k0);
    let boxes = field.grid().voxel_boxes();
    let mut acc = Complex64::default();
    for (j, bx) in boxes.iter().enumerate() {
        if contrast[j] == Complex64::default() {
            continue;
        }
        acc += contrast[j] * voxel_kernel_integral(k0, x, bx, spec)? * u_in.values()[j];
    }
    Ok(acc)
}

/// The current `J = (k² - k₀²) u` on the grid.
pub fn current_from_solution(
    u_in: &ComplexVoxelField,
    field: &RefractiveField,
    k0: Wavenumber,
) -> ComplexVoxelField {
    let contrast = field.contrast(k0);
    let values = u_in
        .values()
        .iter()
        .zip(&contrast)
        .map(|(u, c)| c * u)
        .collect();
    ComplexVoxelField {
        grid: u_in.grid.clone(),
        values,
    }
}

fn write_voxel_csv(
    grid: &Grid,
    values: &[Complex64],
    path: &std::path::Path,
) -> Result<(), CsvError> {
    let mut out = String::from("i1,i2,i3,re,im\n");
    for (linear, idx) in grid.indices().enumerate() {
        io::push_fields(
            &mut out,
            &[
                idx.0[0].to_string(),
                idx.0[1].to_string(),
                idx.0[2].to_string(),
                io::fmt_f64(values[linear].re),
                io::fmt_f64(values[linear].im),
            ],
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_voxel_csv(grid: &Grid, path: &std::path::Path) -> Result<Vec<Complex64>, CsvError> {
    let text = std::fs::read_to_string(path)?;
    let mut values = vec![None; grid.voxel_count()];
    for (line, fields) in io::data_rows(&text) {
        if fields.len() != 5 {
            return Err(CsvError::Malformed {
                line,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let idx = crate::geometry::VoxelIndex([
            io::parse_usize(fields[0], line)?,
            io::parse_usize(fields[1], line)?,
            io::parse_usize(fields[2], line)?,
        ]);
        if !grid.is_valid(idx) {
            return Err(CsvError::Malformed {
                line,
                msg: format!("voxel index {:?} outside grid {:?}", idx.0, grid.n()),
            });
        }
        values[grid.linear(idx)] = Some(Complex64::new(
            io::parse_f64(fields[3], line)?,
            io::parse_f64(fields[4], line)?,
        ));
    }
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| CsvError::Malformed {
                line: 0,
                msg: format!("missing row for linear voxel {i}"),
            })
        })
        .collect()
}

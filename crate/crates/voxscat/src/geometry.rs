//! Scatterer geometry: the parallelepiped `P`, its uniform voxel mesh,
//! index bookkeeping and mesh refinement.
//!
//! The mesh is the uniform partition of `P = (a₁,b₁)×(a₂,b₂)×(a₃,b₃)` into
//! `n₁·n₂·n₃` congruent voxels `Π_I = Π₀ + r_I`, `r_I = (i₁h₁, i₂h₂, i₃h₃)`,
//! with `h_k = (b_k - a_k)/n_k`. Multi-indices map to linear indices in
//! row-major order: `linear = i₁·n₂·n₃ + i₂·n₃ + i₃`.
//!
//! Point ownership uses half-open voxels `[x_k, x_{k+1})` with the global
//! upper face closed, so every point of the closed box belongs to exactly
//! one voxel.
//!
//! All geometry values are immutable after construction and safe to share
//! across threads.

use nalgebra::{Point3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate box on axis {axis}: lower corner {lo} must be < upper corner {hi}")]
    DegenerateBox { axis: usize, lo: f64, hi: f64 },
    #[error("voxel counts must all be >= 1, got {0:?}")]
    EmptyGrid([usize; 3]),
    #[error("voxel index {index:?} out of range for grid {n:?}")]
    IndexOutOfRange { index: [usize; 3], n: [usize; 3] },
    #[error("refinement region is empty")]
    EmptyRegion,
    #[error("refinement region is not a full axis-aligned box of voxels")]
    NonBoxRegion,
    #[error("refinement factor must be >= 1")]
    ZeroFactor,
}

/// Axis-aligned open box `P = {x : a_i < x_i < b_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parallelepiped {
    a: Point3<f64>,
    b: Point3<f64>,
}

impl Parallelepiped {
    pub fn new(a: Point3<f64>, b: Point3<f64>) -> Result<Self, GeometryError> {
        for axis in 0..3 {
            if !(a[axis] < b[axis]) {
                return Err(GeometryError::DegenerateBox {
                    axis,
                    lo: a[axis],
                    hi: b[axis],
                });
            }
        }
        Ok(Self { a, b })
    }

    /// Cube `[lo, lo+edge]³`.
    pub fn cube(lo: f64, edge: f64) -> Result<Self, GeometryError> {
        Self::new(
            Point3::new(lo, lo, lo),
            Point3::new(lo + edge, lo + edge, lo + edge),
        )
    }

    pub fn lower(&self) -> Point3<f64> {
        self.a
    }

    pub fn upper(&self) -> Point3<f64> {
        self.b
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.b - self.a
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.a, &self.b)
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    /// Length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        self.extent().norm()
    }

    /// Shortest edge length, `l = min_i |b_i - a_i|`.
    pub fn min_edge(&self) -> f64 {
        let e = self.extent();
        e.x.min(e.y).min(e.z)
    }

    /// Membership in the closed box.
    pub fn contains(&self, x: &Point3<f64>) -> bool {
        (0..3).all(|k| self.a[k] <= x[k] && x[k] <= self.b[k])
    }

    /// Euclidean distance from `x` to the closed box (zero inside).
    pub fn distance_to(&self, x: &Point3<f64>) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let d = (self.a[k] - x[k]).max(0.0).max(x[k] - self.b[k]);
            d2 += d * d;
        }
        d2.sqrt()
    }

    /// Center of the given face.
    pub fn face_center(&self, face: Face) -> Point3<f64> {
        let mut c = self.center();
        let (axis, to_upper) = face.axis_side();
        c[axis] = if to_upper { self.b[axis] } else { self.a[axis] };
        c
    }

    /// Splits the box into its eight octants at the center.
    pub(crate) fn octants(&self) -> [Parallelepiped; 8] {
        let c = self.center();
        std::array::from_fn(|m| {
            let mut lo = self.a;
            let mut hi = c;
            for k in 0..3 {
                if m >> k & 1 == 1 {
                    lo[k] = c[k];
                    hi[k] = self.b[k];
                }
            }
            Parallelepiped { a: lo, b: hi }
        })
    }
}

/// One of the six faces of a parallelepiped, named by outward normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    XNeg,
    XPos,
    YNeg,
    YPos,
    ZNeg,
    ZPos,
}

impl Face {
    /// (axis, points to the upper side).
    pub fn axis_side(self) -> (usize, bool) {
        match self {
            Face::XNeg => (0, false),
            Face::XPos => (0, true),
            Face::YNeg => (1, false),
            Face::YPos => (1, true),
            Face::ZNeg => (2, false),
            Face::ZPos => (2, true),
        }
    }

    pub fn outward_normal(self) -> Vector3<f64> {
        let (axis, up) = self.axis_side();
        let mut n = Vector3::zeros();
        n[axis] = if up { 1.0 } else { -1.0 };
        n
    }
}

/// Multi-index of one voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VoxelIndex(pub [usize; 3]);

/// Uniform voxel mesh over a parallelepiped.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    bounds: Parallelepiped,
    n: [usize; 3],
    h: Vector3<f64>,
}

impl Grid {
    pub fn new(bounds: Parallelepiped, n: [usize; 3]) -> Result<Self, GeometryError> {
        if n.contains(&0) {
            return Err(GeometryError::EmptyGrid(n));
        }
        let e = bounds.extent();
        let h = Vector3::new(e.x / n[0] as f64, e.y / n[1] as f64, e.z / n[2] as f64);
        Ok(Self { bounds, n, h })
    }

    pub fn bounds(&self) -> &Parallelepiped {
        &self.bounds
    }

    pub fn n(&self) -> [usize; 3] {
        self.n
    }

    /// Voxel edge lengths `h = (h₁, h₂, h₃)`.
    pub fn spacing(&self) -> Vector3<f64> {
        self.h
    }

    /// Total voxel count `N = n₁·n₂·n₃`.
    pub fn voxel_count(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_valid(&self, idx: VoxelIndex) -> bool {
        (0..3).all(|k| idx.0[k] < self.n[k])
    }

    /// Row-major linear index.
    pub fn linear(&self, idx: VoxelIndex) -> usize {
        idx.0[0] * self.n[1] * self.n[2] + idx.0[1] * self.n[2] + idx.0[2]
    }

    pub fn from_linear(&self, linear: usize) -> VoxelIndex {
        let i3 = linear % self.n[2];
        let rest = linear / self.n[2];
        VoxelIndex([rest / self.n[1], rest % self.n[1], i3])
    }

    /// Iterates all voxel indices in linear (row-major) order.
    pub fn indices(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        (0..self.voxel_count()).map(|l| self.from_linear(l))
    }

    /// Center of voxel `Π_I`, `a + (i + ½)∘h`.
    pub fn voxel_center(&self, idx: VoxelIndex) -> Result<Point3<f64>, GeometryError> {
        self.check(idx)?;
        let a = self.bounds.lower();
        Ok(Point3::new(
            a.x + (idx.0[0] as f64 + 0.5) * self.h.x,
            a.y + (idx.0[1] as f64 + 0.5) * self.h.y,
            a.z + (idx.0[2] as f64 + 0.5) * self.h.z,
        ))
    }

    /// The closed box of voxel `Π_I`.
    pub fn voxel_box(&self, idx: VoxelIndex) -> Result<Parallelepiped, GeometryError> {
        self.check(idx)?;
        let a = self.bounds.lower();
        let lo = Point3::new(
            a.x + idx.0[0] as f64 * self.h.x,
            a.y + idx.0[1] as f64 * self.h.y,
            a.z + idx.0[2] as f64 * self.h.z,
        );
        Ok(Parallelepiped {
            a: lo,
            b: lo + self.h,
        })
    }

    /// All voxel centers in linear order.
    pub fn centers(&self) -> Vec<Point3<f64>> {
        self.indices()
            .map(|i| self.voxel_center(i).expect("index from iterator is valid"))
            .collect()
    }

    /// All voxel boxes in linear order.
    pub fn voxel_boxes(&self) -> Vec<Parallelepiped> {
        self.indices()
            .map(|i| self.voxel_box(i).expect("index from iterator is valid"))
            .collect()
    }

    /// Voxel owning `x`, or `None` outside the closed box. Half-open voxel
    /// convention: a coordinate on the global upper face maps to the last
    /// voxel of that axis.
    pub fn locate(&self, x: &Point3<f64>) -> Option<VoxelIndex> {
        if !self.bounds.contains(x) {
            return None;
        }
        let a = self.bounds.lower();
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let i = ((x[k] - a[k]) / self.h[k]).floor();
            idx[k] = (i.max(0.0) as usize).min(self.n[k] - 1);
        }
        Some(VoxelIndex(idx))
    }

    /// New grid covering the bounding box of `region`, each original voxel
    /// split `factor³`-ways. The region must tile an axis-aligned box of
    /// voxels exactly.
    pub fn refine(&self, region: &[VoxelIndex], factor: usize) -> Result<Grid, GeometryError> {
        if factor == 0 {
            return Err(GeometryError::ZeroFactor);
        }
        if region.is_empty() {
            return Err(GeometryError::EmptyRegion);
        }
        for &idx in region {
            self.check(idx)?;
        }
        let mut lo = region[0].0;
        let mut hi = region[0].0;
        for idx in region {
            for k in 0..3 {
                lo[k] = lo[k].min(idx.0[k]);
                hi[k] = hi[k].max(idx.0[k]);
            }
        }
        let extent = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
        let mut seen: Vec<VoxelIndex> = region.to_vec();
        seen.sort_unstable_by_key(|i| i.0);
        seen.dedup();
        if seen.len() != extent[0] * extent[1] * extent[2] {
            return Err(GeometryError::NonBoxRegion);
        }
        let a = self
            .voxel_box(VoxelIndex(lo))
            .expect("checked above")
            .lower();
        let b = self
            .voxel_box(VoxelIndex(hi))
            .expect("checked above")
            .upper();
        Grid::new(
            Parallelepiped::new(a, b)?,
            [
                extent[0] * factor,
                extent[1] * factor,
                extent[2] * factor,
            ],
        )
    }

    fn check(&self, idx: VoxelIndex) -> Result<(), GeometryError> {
        if self.is_valid(idx) {
            Ok(())
        } else {
            Err(GeometryError::IndexOutOfRange {
                index: idx.0,
                n: self.n,
            })
        }
    }
}

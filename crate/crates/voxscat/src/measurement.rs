//! Receiver arrays, source placement and synthetic near-field data.
//!
//! Receivers live on lattices over planes parallel to the xy-, xz- or
//! yz-plane, offset by `d_r` from the nearest face of the scatterer on the
//! positive side of the plane normal. Synthetic measurements run the forward
//! solver and evaluate the exterior representation at every receiver, with
//! optional multiplicative complex Gaussian noise `u → u·(1 + ε)` applied to
//! the total field (per-component deviation `rel_sigma`, seeded for
//! reproducibility).

use nalgebra::Point3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::forward::{
    scattered_field_at, solve_forward, ForwardError, ForwardSolution, RefractiveField,
};
use crate::geometry::Parallelepiped;
use crate::io::{self, CsvError};
use crate::kernels::{incident_field, QuadratureSpec, Wavenumber};
use crate::par;

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("receiver layout parameter {0} must be >= 1")]
    DegenerateLayout(&'static str),
    #[error("receiver standoff d_r must be > 0, got {0}")]
    NonPositiveStandoff(f64),
    #[error("generated receiver at {0:?} intersects the scatterer")]
    ReceiverInsideScatterer(Point3<f64>),
    #[error("source at {0:?} must lie outside the scatterer and away from all receivers")]
    InvalidSource(Point3<f64>),
    #[error("footprint box must be contained in the scatterer footprint")]
    FootprintOutsideScatterer,
    #[error("noise sigma must be >= 0, got {0}")]
    NegativeSigma(f64),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Csv(#[from] CsvError),
}

/// Orientation of the receiver planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneAxis {
    /// Planes parallel to the xy-plane (normal +z).
    Xy,
    /// Planes parallel to the xz-plane (normal +y).
    Xz,
    /// Planes parallel to the yz-plane (normal +x).
    Yz,
}

impl PlaneAxis {
    /// (in-plane axis 0, in-plane axis 1, normal axis).
    pub fn axes(self) -> (usize, usize, usize) {
        match self {
            PlaneAxis::Xy => (0, 1, 2),
            PlaneAxis::Xz => (0, 2, 1),
            PlaneAxis::Yz => (1, 2, 0),
        }
    }
}

impl std::fmt::Display for PlaneAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlaneAxis::Xy => write!(f, "xy"),
            PlaneAxis::Xz => write!(f, "xz"),
            PlaneAxis::Yz => write!(f, "yz"),
        }
    }
}

/// Lattice of field-sampling points on one or more parallel planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverArray {
    pub axis: PlaneAxis,
    /// Plane offsets from the nearest scatterer face, `d_r + j·gap`.
    pub plane_offsets: Vec<f64>,
    pub per_plane: [usize; 2],
    pub positions: Vec<Point3<f64>>,
    /// True while the positions form the full plane lattice; filtering
    /// produces reduced arrays for which lattice-based operations are
    /// unavailable.
    pub complete_lattice: bool,
}

impl ReceiverArray {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Same metadata with a subset of positions, flagged incomplete.
    pub(crate) fn subset(&self, keep: &[bool]) -> ReceiverArray {
        ReceiverArray {
            axis: self.axis,
            plane_offsets: self.plane_offsets.clone(),
            per_plane: self.per_plane,
            positions: self
                .positions
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(p, _)| *p)
                .collect(),
            complete_lattice: keep.iter().all(|k| *k),
        }
    }
}

/// Multiplicative noise description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviation per real component of the complex factor ε.
    pub rel_sigma: f64,
    pub seed: u64,
}

/// Total/incident/scattered samples of one source-receiver configuration.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub source: Point3<f64>,
    pub k0: Wavenumber,
    pub receivers: ReceiverArray,
    pub u_total: Vec<Complex64>,
    pub u_incident: Vec<Complex64>,
    pub u_scattered: Vec<Complex64>,
    pub noise: Option<NoiseSpec>,
}

/// Builds the lattice over the scatterer's own footprint.
pub fn build_receivers(
    scatterer: &Parallelepiped,
    axis: PlaneAxis,
    d_r: f64,
    n_planes: usize,
    plane_gap: f64,
    per_plane: [usize; 2],
) -> Result<ReceiverArray, MeasurementError> {
    build_receivers_focused(scatterer, scatterer, axis, d_r, n_planes, plane_gap, per_plane)
}

/// Builds the lattice with its footprint taken from `footprint` (a region of
/// interest) while plane offsets are measured from the face of `scatterer`,
/// so every receiver keeps distance exactly `d_r` from the obstacle.
///
/// Each plane carries `per_plane[0] × per_plane[1]` points at the cell
/// centers of the footprint extended by one cell margin per side.
pub fn build_receivers_focused(
    scatterer: &Parallelepiped,
    footprint: &Parallelepiped,
    axis: PlaneAxis,
    d_r: f64,
    n_planes: usize,
    plane_gap: f64,
    per_plane: [usize; 2],
) -> Result<ReceiverArray, MeasurementError> {
    if d_r <= 0.0 {
        return Err(MeasurementError::NonPositiveStandoff(d_r));
    }
    if n_planes == 0 {
        return Err(MeasurementError::DegenerateLayout("n_planes"));
    }
    if per_plane[0] == 0 || per_plane[1] == 0 {
        return Err(MeasurementError::DegenerateLayout("per_plane"));
    }
    let (u_axis, v_axis, n_axis) = axis.axes();
    for k in [u_axis, v_axis] {
        if footprint.lower()[k] < scatterer.lower()[k] - 1e-12
            || footprint.upper()[k] > scatterer.upper()[k] + 1e-12
        {
            return Err(MeasurementError::FootprintOutsideScatterer);
        }
    }

    let coords = |k: usize, count: usize| -> Vec<f64> {
        let lo = footprint.lower()[k];
        let hi = footprint.upper()[k];
        let width = hi - lo;
        let margin = width / count as f64;
        let span = width + 2.0 * margin;
        (0..count)
            .map(|i| (lo - margin) + span * (i as f64 + 0.5) / count as f64)
            .collect()
    };
    let us = coords(u_axis, per_plane[0]);
    let vs = coords(v_axis, per_plane[1]);
    let plane_offsets: Vec<f64> = (0..n_planes).map(|j| d_r + j as f64 * plane_gap).collect();

    let mut positions = Vec::with_capacity(n_planes * per_plane[0] * per_plane[1]);
    for off in &plane_offsets {
        let w = scatterer.upper()[n_axis] + off;
        for &u in &us {
            for &v in &vs {
                let mut p = Point3::origin();
                p[u_axis] = u;
                p[v_axis] = v;
                p[n_axis] = w;
                if scatterer.distance_to(&p) == 0.0 {
                    return Err(MeasurementError::ReceiverInsideScatterer(p));
                }
                positions.push(p);
            }
        }
    }
    Ok(ReceiverArray {
        axis,
        plane_offsets,
        per_plane,
        positions,
        complete_lattice: true,
    })
}

/// Synthesizes a measurement set by solving the forward problem first.
pub fn synthesize(
    field: &RefractiveField,
    k0: Wavenumber,
    source: &Point3<f64>,
    receivers: &ReceiverArray,
    spec: &QuadratureSpec,
    noise: Option<NoiseSpec>,
) -> Result<MeasurementSet, MeasurementError> {
    let solution = solve_forward(field, k0, source, spec)?;
    synthesize_with_solution(field, k0, source, &solution, receivers, spec, noise)
}

/// Same as [`synthesize`] but reuses an existing forward solution, so one
/// solve can feed several receiver configurations.
pub fn synthesize_with_solution(
    field: &RefractiveField,
    k0: Wavenumber,
    source: &Point3<f64>,
    solution: &ForwardSolution,
    receivers: &ReceiverArray,
    spec: &QuadratureSpec,
    noise: Option<NoiseSpec>,
) -> Result<MeasurementSet, MeasurementError> {
    if field.grid().bounds().distance_to(source) == 0.0 {
        return Err(MeasurementError::InvalidSource(*source));
    }
    if receivers
        .positions
        .iter()
        .any(|r| (r - source).norm() < 1e-12)
    {
        return Err(MeasurementError::InvalidSource(*source));
    }
    if let Some(n) = &noise {
        if n.rel_sigma < 0.0 {
            return Err(MeasurementError::NegativeSigma(n.rel_sigma));
        }
    }

    let m = receivers.len();
    let scattered: Vec<Complex64> = par::try_map_indexed(m, |i| {
        scattered_field_at(&solution.u_in, field, k0, &receivers.positions[i], spec)
    })
    .map_err(MeasurementError::Forward)?;
    let incident: Vec<Complex64> = receivers
        .positions
        .iter()
        .map(|r| incident_field(k0, source, r))
        .collect::<Result<_, _>>()
        .map_err(ForwardError::Kernel)?;

    let mut total: Vec<Complex64> = incident
        .iter()
        .zip(&scattered)
        .map(|(a, b)| a + b)
        .collect();
    if let Some(n) = &noise {
        if n.rel_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
            let dist = Normal::new(0.0, n.rel_sigma).expect("sigma checked above");
            for t in total.iter_mut() {
                let eps = Complex64::new(dist.sample(&mut rng), dist.sample(&mut rng));
                *t *= Complex64::new(1.0, 0.0) + eps;
            }
        }
    }
    let u_scattered: Vec<Complex64> = total
        .iter()
        .zip(&incident)
        .map(|(t, i)| t - i)
        .collect();
    Ok(MeasurementSet {
        source: *source,
        k0,
        receivers: receivers.clone(),
        u_total: total,
        u_incident: incident,
        u_scattered,
        noise,
    })
}

impl MeasurementSet {
    /// Minimum distance from any receiver to the scatterer box.
    pub fn min_distance_to(&self, scatterer: &Parallelepiped) -> f64 {
        self.receivers
            .positions
            .iter()
            .map(|p| scatterer.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Writes `rx,ry,rz,re_total,im_total,re_inc,im_inc` rows plus a `.meta`
    /// sidecar with the scalar metadata.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), CsvError> {
        let mut out = String::from("rx,ry,rz,re_total,im_total,re_inc,im_inc\n");
        for (i, p) in self.receivers.positions.iter().enumerate() {
            io::push_fields(
                &mut out,
                &[
                    io::fmt_f64(p.x),
                    io::fmt_f64(p.y),
                    io::fmt_f64(p.z),
                    io::fmt_f64(self.u_total[i].re),
                    io::fmt_f64(self.u_total[i].im),
                    io::fmt_f64(self.u_incident[i].re),
                    io::fmt_f64(self.u_incident[i].im),
                ],
            );
        }
        std::fs::write(path, out)?;

        let mut meta = String::new();
        meta.push_str(&format!(
            "k0 = {} {}\n",
            io::fmt_f64(self.k0.as_complex().re),
            io::fmt_f64(self.k0.as_complex().im)
        ));
        meta.push_str(&format!(
            "source = {} {} {}\n",
            io::fmt_f64(self.source.x),
            io::fmt_f64(self.source.y),
            io::fmt_f64(self.source.z)
        ));
        if let Some(n) = &self.noise {
            meta.push_str(&format!("noise.rel_sigma = {}\n", io::fmt_f64(n.rel_sigma)));
            meta.push_str(&format!("noise.seed = {}\n", n.seed));
        }
        std::fs::write(path.with_extension("meta"), meta)?;
        Ok(())
    }

    /// Reads a set written by [`MeasurementSet::write_csv`]. The receiver
    /// array is rebuilt as an unstructured (non-lattice) list.
    pub fn read_csv(path: &std::path::Path) -> Result<MeasurementSet, MeasurementError> {
        let text = std::fs::read_to_string(path).map_err(CsvError::Io)?;
        let mut positions = Vec::new();
        let mut u_total = Vec::new();
        let mut u_incident = Vec::new();
        for (line, fields) in io::data_rows(&text) {
            if fields.len() != 7 {
                return Err(CsvError::Malformed {
                    line,
                    msg: format!("expected 7 fields, got {}", fields.len()),
                }
                .into());
            }
            positions.push(Point3::new(
                io::parse_f64(fields[0], line)?,
                io::parse_f64(fields[1], line)?,
                io::parse_f64(fields[2], line)?,
            ));
            u_total.push(Complex64::new(
                io::parse_f64(fields[3], line)?,
                io::parse_f64(fields[4], line)?,
            ));
            u_incident.push(Complex64::new(
                io::parse_f64(fields[5], line)?,
                io::parse_f64(fields[6], line)?,
            ));
        }

        let meta_path = path.with_extension("meta");
        let meta = std::fs::read_to_string(&meta_path).map_err(CsvError::Io)?;
        let mut k0 = None;
        let mut source = None;
        let mut rel_sigma = None;
        let mut seed = None;
        for (i, line) in meta.lines().enumerate() {
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let nums: Vec<&str> = value.split_whitespace().collect();
            match key {
                "k0" => {
                    k0 = Some(Complex64::new(
                        io::parse_f64(nums[0], i + 1)?,
                        io::parse_f64(nums.get(1).copied().unwrap_or("0"), i + 1)?,
                    ))
                }
                "source" => {
                    source = Some(Point3::new(
                        io::parse_f64(nums[0], i + 1)?,
                        io::parse_f64(nums[1], i + 1)?,
                        io::parse_f64(nums[2], i + 1)?,
                    ))
                }
                "noise.rel_sigma" => rel_sigma = Some(io::parse_f64(value, i + 1)?),
                "noise.seed" => {
                    seed = Some(io::parse_usize(value, i + 1)? as u64)
                }
                _ => {}
            }
        }
        let k0 = Wavenumber::new(k0.ok_or_else(|| CsvError::Malformed {
            line: 0,
            msg: "meta sidecar missing k0".into(),
        })?)
        .map_err(ForwardError::Kernel)?;
        let source = source.ok_or_else(|| CsvError::Malformed {
            line: 0,
            msg: "meta sidecar missing source".into(),
        })?;
        let noise = match (rel_sigma, seed) {
            (Some(rel_sigma), Some(seed)) => Some(NoiseSpec { rel_sigma, seed }),
            _ => None,
        };

        let u_scattered: Vec<Complex64> = u_total
            .iter()
            .zip(&u_incident)
            .map(|(t, i)| t - i)
            .collect();
        Ok(MeasurementSet {
            source,
            k0,
            receivers: ReceiverArray {
                axis: PlaneAxis::Xy,
                plane_offsets: Vec::new(),
                per_plane: [0, 0],
                positions,
                complete_lattice: false,
            },
            u_total,
            u_incident,
            u_scattered,
            noise,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;
    use approx::assert_relative_eq;

    fn cube() -> Parallelepiped {
        Parallelepiped::cube(0.0, 0.15).unwrap()
    }

    #[test]
    fn lattice_placement_examples() {
        let arr = build_receivers(&cube(), PlaneAxis::Xy, 0.005, 1, 0.0, [4, 4]).unwrap();
        assert_eq!(arr.len(), 16);
        for p in &arr.positions {
            assert_relative_eq!(p.z, 0.155, max_relative = 1e-14);
        }
        let far = build_receivers(&cube(), PlaneAxis::Xy, 0.05, 1, 0.0, [4, 4]).unwrap();
        assert!(far.positions.iter().all(|p| (p.z - 0.20).abs() < 1e-14));

        let single = build_receivers(&cube(), PlaneAxis::Xy, 0.01, 1, 0.0, [1, 1]).unwrap();
        assert_eq!(single.len(), 1);
        let p = single.positions[0];
        assert_relative_eq!(p.x, 0.075, max_relative = 1e-13);
        assert_relative_eq!(p.y, 0.075, max_relative = 1e-13);
    }

    #[test]
    fn nearest_receiver_distance_is_d_r() {
        for per in [[1, 1], [2, 2], [3, 5], [8, 8]] {
            for axis in [PlaneAxis::Xy, PlaneAxis::Xz, PlaneAxis::Yz] {
                let arr = build_receivers(&cube(), axis, 0.005, 2, 0.01, per).unwrap();
                let dmin = arr
                    .positions
                    .iter()
                    .map(|p| cube().distance_to(p))
                    .fold(f64::INFINITY, f64::min);
                assert_relative_eq!(dmin, 0.005, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn synthesis_noise_contract() {
        let grid = Grid::new(cube(), [2, 2, 2]).unwrap();
        let k0 = Wavenumber::real(40.0).unwrap();
        let field = RefractiveField::from_fn(grid.clone(), |c| {
            if c.x < 0.075 {
                Complex64::new(50.0, 0.0)
            } else {
                Complex64::new(40.0, 0.0)
            }
        })
        .unwrap();
        let receivers = build_receivers(&cube(), PlaneAxis::Xy, 0.005, 1, 0.0, [3, 3]).unwrap();
        let source = Point3::new(0.075, 0.075, -0.003);
        let spec = QuadratureSpec::default();

        let clean = synthesize(&field, k0, &source, &receivers, &spec, None).unwrap();
        let zero_sigma = synthesize(
            &field,
            k0,
            &source,
            &receivers,
            &spec,
            Some(NoiseSpec { rel_sigma: 0.0, seed: 1 }),
        )
        .unwrap();
        assert_eq!(clean.u_total, zero_sigma.u_total);

        let noisy_a = synthesize(
            &field,
            k0,
            &source,
            &receivers,
            &spec,
            Some(NoiseSpec { rel_sigma: 0.01, seed: 7 }),
        )
        .unwrap();
        let noisy_b = synthesize(
            &field,
            k0,
            &source,
            &receivers,
            &spec,
            Some(NoiseSpec { rel_sigma: 0.01, seed: 7 }),
        )
        .unwrap();
        assert_eq!(noisy_a.u_total, noisy_b.u_total);
        assert_ne!(noisy_a.u_total, clean.u_total);

        // redundant storage stays consistent
        for i in 0..noisy_a.u_total.len() {
            let diff = noisy_a.u_total[i] - noisy_a.u_incident[i] - noisy_a.u_scattered[i];
            assert!(diff.norm() < 1e-14);
        }
    }

    #[test]
    fn source_coinciding_with_a_receiver_is_rejected() {
        let grid = Grid::new(cube(), [1, 1, 1]).unwrap();
        let k0 = Wavenumber::real(40.0).unwrap();
        let field = RefractiveField::uniform(grid, k0);
        let receivers = build_receivers(&cube(), PlaneAxis::Xy, 0.01, 1, 0.0, [1, 1]).unwrap();
        let on_receiver = receivers.positions[0];
        let err = synthesize(
            &field,
            k0,
            &on_receiver,
            &receivers,
            &QuadratureSpec::default(),
            None,
        );
        assert!(matches!(err, Err(MeasurementError::InvalidSource(_))));
    }

    #[test]
    fn zero_contrast_measures_nothing_scattered() {
        let grid = Grid::new(cube(), [2, 2, 2]).unwrap();
        let k0 = Wavenumber::real(40.0).unwrap();
        let field = RefractiveField::uniform(grid, k0);
        let receivers = build_receivers(&cube(), PlaneAxis::Xz, 0.01, 1, 0.0, [2, 2]).unwrap();
        let m = synthesize(
            &field,
            k0,
            &Point3::new(0.075, -0.003, 0.075),
            &receivers,
            &QuadratureSpec::default(),
            None,
        )
        .unwrap();
        assert!(m.u_scattered.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn measurement_csv_round_trip() {
        let grid = Grid::new(cube(), [2, 2, 2]).unwrap();
        let k0 = Wavenumber::real(40.0).unwrap();
        let field = RefractiveField::from_fn(grid, |c| {
            Complex64::new(40.0 + 60.0 * c.x, 0.3)
        })
        .unwrap();
        let receivers = build_receivers(&cube(), PlaneAxis::Xy, 0.005, 1, 0.0, [2, 3]).unwrap();
        let source = Point3::new(0.075, 0.075, -0.003);
        let m = synthesize(
            &field,
            k0,
            &source,
            &receivers,
            &QuadratureSpec::default(),
            Some(NoiseSpec { rel_sigma: 0.02, seed: 3 }),
        )
        .unwrap();
        let dir = std::env::temp_dir().join("voxscat_meas_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("meas.csv");
        m.write_csv(&path).unwrap();
        let back = MeasurementSet::read_csv(&path).unwrap();
        assert_eq!(m.u_total, back.u_total);
        assert_eq!(m.u_incident, back.u_incident);
        assert_eq!(m.source, back.source);
        assert_eq!(m.noise.unwrap().seed, back.noise.unwrap().seed);
        for (a, b) in m.u_scattered.iter().zip(&back.u_scattered) {
            assert!((a - b).norm() < 1e-13 * a.norm().max(1e-300));
        }
    }
}

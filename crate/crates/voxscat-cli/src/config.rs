//! Line-oriented `key = value` scenario configuration.
//!
//! The format is deliberately flat and diffable: one `key = value` pair per
//! line, `#` comments, repeated keys for list entries (`source`,
//! `truth.inclusion`, `receivers`). See the bundled `scenarios/*.cfg` for
//! the full grammar in use.

use std::path::{Path, PathBuf};

use nalgebra::Point3;
use num_complex::Complex64;
use thiserror::Error;
use voxscat::{
    Face, Grid, NoiseSpec, Parallelepiped, PlaneAxis, QuadratureSpec, RefractiveField,
    RegularizationSpec, Wavenumber,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}, key `{key}`: {msg}")]
    Parse {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("key `{key}`: {msg}")]
    Validation { key: String, msg: String },
}

fn parse_err(line: usize, key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        line,
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn validation(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// One homogeneous box of refractive index inside the scatterer.
#[derive(Debug, Clone)]
pub struct Inclusion {
    pub bounds: Parallelepiped,
    pub k: Complex64,
}

/// Ground-truth description: a background value plus box inclusions,
/// realized on the simulation grid (`grid.n` per axis times `refine`).
#[derive(Debug, Clone)]
pub struct TruthSpec {
    pub refine: usize,
    pub background: Complex64,
    pub inclusions: Vec<Inclusion>,
    /// The original scatterer box; stays fixed through refinement rounds.
    pub bounds: Parallelepiped,
    pub base_n: [usize; 3],
}

impl TruthSpec {
    pub fn simulation_grid(&self) -> Grid {
        Grid::new(
            self.bounds.clone(),
            [
                self.base_n[0] * self.refine,
                self.base_n[1] * self.refine,
                self.base_n[2] * self.refine,
            ],
        )
        .expect("validated")
    }

    /// Value of k(x) at a point, by the declared piecewise definition.
    pub fn value_at(&self, x: &Point3<f64>) -> Complex64 {
        for inc in &self.inclusions {
            if inc.bounds.contains(x) {
                return inc.k;
            }
        }
        self.background
    }

    /// Samples the truth on an arbitrary grid (voxel centers).
    pub fn field_on(&self, grid: &Grid) -> RefractiveField {
        RefractiveField::from_fn(grid.clone(), |c| self.value_at(c))
            .expect("truth values satisfy Im k >= 0 by validation")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SourceSpec {
    pub face: Face,
    pub d_s: f64,
}

impl SourceSpec {
    /// Source point at distance `d_s` from the face center, on the outward
    /// normal of the scatterer box.
    pub fn position(&self, scatterer: &Parallelepiped) -> Point3<f64> {
        scatterer.face_center(self.face) + self.face.outward_normal() * self.d_s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReceiverSpec {
    pub axis: PlaneAxis,
    pub d_r: f64,
    pub n_planes: usize,
    pub plane_gap: f64,
    pub per_plane: [usize; 2],
}

impl ReceiverSpec {
    pub fn count(&self) -> usize {
        self.n_planes * self.per_plane[0] * self.per_plane[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterStage {
    /// Filter against the incident-field prediction before the first solve.
    PreSolve,
    /// Solve once, predict the data from the recovered current, filter,
    /// re-solve on the survivors.
    PostSolve,
}

#[derive(Debug, Clone, Copy)]
pub struct FilterSpec {
    pub stage: FilterStage,
    pub max_rel_dev: f64,
    pub max_rough: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct RefineSpec {
    pub threshold: f64,
    pub factor: usize,
}

/// Everything one experiment needs.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    /// Reconstruction domain (equals the scatterer box until a refinement
    /// round narrows it to the detected inhomogeneity region).
    pub bounds: Parallelepiped,
    pub grid_n: [usize; 3],
    pub k0: Wavenumber,
    pub truth: TruthSpec,
    pub sources: Vec<SourceSpec>,
    pub receivers: Vec<ReceiverSpec>,
    pub noise: Option<NoiseSpec>,
    pub regularization: RegularizationSpec,
    pub filter: Option<FilterSpec>,
    pub fuse: bool,
    pub refine: RefineSpec,
    pub guard_eps: f64,
    pub quadrature: QuadratureSpec,
    pub output_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".to_string());
        Self::parse_str(&text, &name)
    }

    pub fn recon_grid(&self) -> Grid {
        Grid::new(self.bounds.clone(), self.grid_n).expect("validated")
    }

    /// Smallest true inclusion contrast, the scale against which spurious
    /// background deviations count as artifacts.
    pub fn min_inclusion_contrast(&self) -> f64 {
        self.truth
            .inclusions
            .iter()
            .map(|i| (i.k - self.truth.background).norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn parse_str(text: &str, name: &str) -> Result<Self, ConfigError> {
        let mut box_a: Option<Point3<f64>> = None;
        let mut box_b: Option<Point3<f64>> = None;
        let mut grid_n: Option<[usize; 3]> = None;
        let mut k0: Option<Complex64> = None;
        let mut truth_refine = 1usize;
        let mut truth_background: Option<Complex64> = None;
        let mut inclusions_raw: Vec<(usize, [f64; 6], Complex64)> = Vec::new();
        let mut sources: Vec<SourceSpec> = Vec::new();
        let mut receivers: Vec<ReceiverSpec> = Vec::new();
        let mut noise_sigma: Option<f64> = None;
        let mut noise_seed = 0u64;
        let mut reg_method = "tsvd".to_string();
        let mut reg_cutoff = 1e-8f64;
        let mut reg_lambda = 0.0f64;
        let mut filter_enabled = false;
        let mut filter_stage = FilterStage::PreSolve;
        let mut filter_max_rel_dev = 0.5f64;
        let mut filter_max_rough = 8.0f64;
        let mut fuse = false;
        let mut refine_threshold = 0.1f64;
        let mut refine_factor = 2usize;
        let mut guard_eps = 1e-3f64;
        let mut quad = QuadratureSpec::default();
        let mut output_dir: Option<PathBuf> = None;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, line, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            let nums = || -> Vec<&str> { value.split_whitespace().collect() };
            let real = |s: &str| -> Result<f64, ConfigError> {
                s.parse()
                    .map_err(|_| parse_err(line_no, key, format!("not a number: {s:?}")))
            };
            let integer = |s: &str| -> Result<usize, ConfigError> {
                s.parse()
                    .map_err(|_| parse_err(line_no, key, format!("not an integer: {s:?}")))
            };
            let complex = |fields: &[&str]| -> Result<Complex64, ConfigError> {
                match fields {
                    [re] => Ok(Complex64::new(real(re)?, 0.0)),
                    [re, im] => Ok(Complex64::new(real(re)?, real(im)?)),
                    _ => Err(parse_err(line_no, key, "expected `re [im]`")),
                }
            };
            let triple = |fields: &[&str]| -> Result<Point3<f64>, ConfigError> {
                if fields.len() != 3 {
                    return Err(parse_err(line_no, key, "expected three numbers"));
                }
                Ok(Point3::new(real(fields[0])?, real(fields[1])?, real(fields[2])?))
            };

            match key {
                "box.a" => box_a = Some(triple(&nums())?),
                "box.b" => box_b = Some(triple(&nums())?),
                "grid.n" => {
                    let f = nums();
                    if f.len() != 3 {
                        return Err(parse_err(line_no, key, "expected three integers"));
                    }
                    grid_n = Some([integer(f[0])?, integer(f[1])?, integer(f[2])?]);
                }
                "k0" => k0 = Some(complex(&nums())?),
                "truth.refine" => truth_refine = integer(value)?,
                "truth.background" => truth_background = Some(complex(&nums())?),
                "truth.inclusion" => {
                    let f = nums();
                    if f.len() != 8 {
                        return Err(parse_err(
                            line_no,
                            key,
                            "expected `x0 y0 z0 x1 y1 z1 re im`",
                        ));
                    }
                    let mut c = [0.0f64; 6];
                    for (slot, s) in c.iter_mut().zip(&f[..6]) {
                        *slot = real(s)?;
                    }
                    inclusions_raw.push((line_no, c, complex(&f[6..])?));
                }
                "source" => {
                    let f = nums();
                    if f.len() != 2 {
                        return Err(parse_err(line_no, key, "expected `face d_s`"));
                    }
                    let face = match f[0] {
                        "x-" => Face::XNeg,
                        "x+" => Face::XPos,
                        "y-" => Face::YNeg,
                        "y+" => Face::YPos,
                        "z-" => Face::ZNeg,
                        "z+" => Face::ZPos,
                        other => {
                            return Err(parse_err(
                                line_no,
                                key,
                                format!("unknown face {other:?} (x-/x+/y-/y+/z-/z+)"),
                            ))
                        }
                    };
                    sources.push(SourceSpec {
                        face,
                        d_s: real(f[1])?,
                    });
                }
                "receivers" => {
                    let f = nums();
                    if f.len() != 6 {
                        return Err(parse_err(
                            line_no,
                            key,
                            "expected `axis d_r n_planes gap per0 per1`",
                        ));
                    }
                    let axis = match f[0] {
                        "xy" => PlaneAxis::Xy,
                        "xz" => PlaneAxis::Xz,
                        "yz" => PlaneAxis::Yz,
                        other => {
                            return Err(parse_err(
                                line_no,
                                key,
                                format!("unknown plane axis {other:?} (xy/xz/yz)"),
                            ))
                        }
                    };
                    receivers.push(ReceiverSpec {
                        axis,
                        d_r: real(f[1])?,
                        n_planes: integer(f[2])?,
                        plane_gap: real(f[3])?,
                        per_plane: [integer(f[4])?, integer(f[5])?],
                    });
                }
                "noise.rel_sigma" => noise_sigma = Some(real(value)?),
                "noise.seed" => noise_seed = integer(value)? as u64,
                "reg.method" => reg_method = value.to_string(),
                "reg.cutoff" => reg_cutoff = real(value)?,
                "reg.lambda" => reg_lambda = real(value)?,
                "filter.enabled" => filter_enabled = parse_bool(value, line_no, key)?,
                "filter.stage" => {
                    filter_stage = match value {
                        "pre" => FilterStage::PreSolve,
                        "post" => FilterStage::PostSolve,
                        other => {
                            return Err(parse_err(
                                line_no,
                                key,
                                format!("unknown stage {other:?} (pre/post)"),
                            ))
                        }
                    }
                }
                "filter.max_rel_dev" => filter_max_rel_dev = real(value)?,
                "filter.max_rough" => filter_max_rough = real(value)?,
                "fuse" => fuse = parse_bool(value, line_no, key)?,
                "refine.threshold" => refine_threshold = real(value)?,
                "refine.factor" => refine_factor = integer(value)?,
                "guard_eps" => guard_eps = real(value)?,
                "quad.order" => quad.smooth_order = integer(value)?,
                "quad.split" => quad.near_split = integer(value)?,
                "quad.tol" => quad.tol = real(value)?,
                "output_dir" => output_dir = Some(PathBuf::from(value)),
                other => {
                    return Err(parse_err(line_no, other, "unknown key"));
                }
            }
        }

        // ---- assembly & validation ----
        let a = box_a.ok_or_else(|| validation("box.a", "missing"))?;
        let b = box_b.ok_or_else(|| validation("box.b", "missing"))?;
        let bounds = Parallelepiped::new(a, b)
            .map_err(|e| validation("box", e.to_string()))?;
        let grid_n = grid_n.ok_or_else(|| validation("grid.n", "missing"))?;
        if grid_n.contains(&0) {
            return Err(validation("grid.n", "voxel counts must be >= 1"));
        }
        let k0 = Wavenumber::new(k0.ok_or_else(|| validation("k0", "missing"))?)
            .map_err(|e| validation("k0", e.to_string()))?;
        if truth_refine == 0 {
            return Err(validation("truth.refine", "must be >= 1"));
        }
        let background = truth_background.unwrap_or_else(|| k0.as_complex());
        if background.im < 0.0 {
            return Err(validation("truth.background", "Im k must be >= 0"));
        }

        let truth = TruthSpec {
            refine: truth_refine,
            background,
            inclusions: Vec::new(),
            bounds: bounds.clone(),
            base_n: grid_n,
        };
        let sim_grid = truth.simulation_grid();
        let h = sim_grid.spacing();
        let mut inclusions = Vec::new();
        for (line_no, c, k) in inclusions_raw {
            let inc_bounds =
                Parallelepiped::new(Point3::new(c[0], c[1], c[2]), Point3::new(c[3], c[4], c[5]))
                    .map_err(|e| parse_err(line_no, "truth.inclusion", e.to_string()))?;
            if !bounds.contains(&inc_bounds.lower()) || !bounds.contains(&inc_bounds.upper()) {
                return Err(parse_err(
                    line_no,
                    "truth.inclusion",
                    "inclusion box must lie inside the scatterer box",
                ));
            }
            for axis in 0..3 {
                for coord in [inc_bounds.lower()[axis], inc_bounds.upper()[axis]] {
                    let steps = (coord - bounds.lower()[axis]) / h[axis];
                    if (steps - steps.round()).abs() > 1e-9 {
                        return Err(parse_err(
                            line_no,
                            "truth.inclusion",
                            format!(
                                "coordinate {coord} on axis {axis} is not aligned with the \
                                 simulation lattice (spacing {})",
                                h[axis]
                            ),
                        ));
                    }
                }
            }
            if k.norm() <= k0.as_complex().norm() {
                return Err(parse_err(
                    line_no,
                    "truth.inclusion",
                    format!("|k| = {} must exceed |k0| = {}", k.norm(), k0.as_complex().norm()),
                ));
            }
            if k.im < 0.0 {
                return Err(parse_err(line_no, "truth.inclusion", "Im k must be >= 0"));
            }
            inclusions.push(Inclusion {
                bounds: inc_bounds,
                k,
            });
        }
        let truth = TruthSpec {
            inclusions,
            ..truth
        };

        if sources.is_empty() {
            return Err(validation("source", "at least one source is required"));
        }
        for s in &sources {
            if s.d_s <= 0.0 {
                return Err(validation("source", "d_s must be > 0"));
            }
        }
        if receivers.is_empty() {
            return Err(validation("receivers", "at least one receiver block is required"));
        }
        let n_recon: usize = grid_n.iter().product();
        for r in &receivers {
            if r.d_r <= 0.0 {
                return Err(validation("receivers", "d_r must be > 0"));
            }
            if r.n_planes == 0 || r.per_plane[0] == 0 || r.per_plane[1] == 0 {
                return Err(validation("receivers", "plane counts must be >= 1"));
            }
            if r.count() < n_recon {
                return Err(validation(
                    "receivers",
                    format!(
                        "block provides {} receivers but the first-kind solve needs >= {} \
                         (one per voxel)",
                        r.count(),
                        n_recon
                    ),
                ));
            }
        }

        let noise = match noise_sigma {
            Some(s) if s < 0.0 => {
                return Err(validation("noise.rel_sigma", "must be >= 0"));
            }
            Some(s) => Some(NoiseSpec {
                rel_sigma: s,
                seed: noise_seed,
            }),
            None => None,
        };
        let regularization = match reg_method.as_str() {
            "tsvd" => {
                if !(reg_cutoff > 0.0 && reg_cutoff < 1.0) {
                    return Err(validation("reg.cutoff", "must lie in (0,1)"));
                }
                RegularizationSpec::TruncatedSvd {
                    rel_cutoff: reg_cutoff,
                }
            }
            "tikhonov" => {
                if reg_lambda < 0.0 {
                    return Err(validation("reg.lambda", "must be >= 0"));
                }
                RegularizationSpec::Tikhonov { lambda: reg_lambda }
            }
            other => {
                return Err(validation(
                    "reg.method",
                    format!("unknown method {other:?} (tsvd/tikhonov)"),
                ));
            }
        };
        let filter = filter_enabled.then_some(FilterSpec {
            stage: filter_stage,
            max_rel_dev: filter_max_rel_dev,
            max_rough: filter_max_rough,
        });
        if refine_factor == 0 {
            return Err(validation("refine.factor", "must be >= 1"));
        }
        if !(guard_eps > 0.0) {
            return Err(validation("guard_eps", "must be > 0"));
        }
        let output_dir = output_dir.ok_or_else(|| validation("output_dir", "missing"))?;

        Ok(ScenarioConfig {
            name: name.to_string(),
            bounds,
            grid_n,
            k0,
            truth,
            sources,
            receivers,
            noise,
            regularization,
            filter,
            fuse,
            refine: RefineSpec {
                threshold: refine_threshold,
                factor: refine_factor,
            },
            guard_eps,
            quadrature: quad,
            output_dir,
        })
    }
}

fn parse_bool(value: &str, line: usize, key: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        other => Err(parse_err(line, key, format!("not a boolean: {other:?}"))),
    }
}

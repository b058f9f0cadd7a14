//! Closed-form Newton potential of an axis-aligned box.
//!
//! `newton_box_potential` evaluates `∫_box dy / |p - y|` exactly. The box is
//! first reduced to eight corner boxes with the target at a corner; on a
//! corner box with non-negative half-axis lengths the classical primitive
//!
//! ```text
//! F(x,y,z) = xy·ln(z+r) + yz·ln(x+r) + zx·ln(y+r)
//!          - x²/2·atan(yz/(xr)) - y²/2·atan(zx/(yr)) - z²/2·atan(xy/(zr))
//! ```
//!
//! with `r = |(x,y,z)|` is free of branch issues, so the corner-sum
//! evaluation is valid for targets inside, on the boundary of, or outside
//! the box.

use nalgebra::Point3;

use crate::geometry::Parallelepiped;

/// `∫_box dy / |p - y|`. Finite for every `p`, including points inside the box.
pub fn newton_box_potential(p: &Point3<f64>, bx: &Parallelepiped) -> f64 {
    let lo = bx.lower();
    let hi = bx.upper();
    let mut total = 0.0;
    // Split each axis at the target: ∫_a^b = ∫_p^b - ∫_p^a, with orientation
    // signs folded into the corner weight.
    for m in 0..8usize {
        let mut sign = 1.0;
        let mut arg = [0.0f64; 3];
        for k in 0..3 {
            let c = if m >> k & 1 == 1 { hi[k] } else { lo[k] };
            let limit_sign = if m >> k & 1 == 1 { 1.0 } else { -1.0 };
            let d = c - p[k];
            sign *= limit_sign * d.signum();
            arg[k] = d.abs();
        }
        total += sign * corner_potential(arg[0], arg[1], arg[2]);
    }
    total
}

/// `∫_0^X ∫_0^Y ∫_0^Z du / |u|` for non-negative extents.
fn corner_potential(x: f64, y: f64, z: f64) -> f64 {
    let mut w = 0.0;
    for m in 0..8usize {
        let ux = if m & 1 == 1 { x } else { 0.0 };
        let uy = if m >> 1 & 1 == 1 { y } else { 0.0 };
        let uz = if m >> 2 & 1 == 1 { z } else { 0.0 };
        // iterated difference: sign = (-1)^(number of lower limits)
        let s = if (3 - m.count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
        w += s * primitive(ux, uy, uz);
    }
    w
}

/// The primitive F; terms with vanishing prefactor are dropped to avoid
/// 0·ln(0) and 0·atan(0/0).
fn primitive(x: f64, y: f64, z: f64) -> f64 {
    let r = (x * x + y * y + z * z).sqrt();
    let mut f = 0.0;
    if x != 0.0 && y != 0.0 {
        f += x * y * (z + r).ln();
    }
    if y != 0.0 && z != 0.0 {
        f += y * z * (x + r).ln();
    }
    if z != 0.0 && x != 0.0 {
        f += z * x * (y + r).ln();
    }
    if x != 0.0 {
        f -= 0.5 * x * x * (y * z / (x * r)).atan();
    }
    if y != 0.0 {
        f -= 0.5 * y * y * (z * x / (y * r)).atan();
    }
    if z != 0.0 {
        f -= 0.5 * z * z * (x * y / (z * r)).atan();
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Point3;

    fn unit_cube_centered() -> Parallelepiped {
        Parallelepiped::new(Point3::new(-0.5, -0.5, -0.5), Point3::new(0.5, 0.5, 0.5)).unwrap()
    }

    /// Oracle: adaptive dyadic subdivision toward the target. Cells at
    /// distance >= 2 diameters integrate 1/r with a hand-inlined 3-point
    /// tensor Gauss rule; cells still touching the target at max depth are
    /// excluded (their contribution is O(diam²) and is recovered by
    /// Richardson extrapolation over two depths).
    fn subdivision_oracle(p: &Point3<f64>, bx: &Parallelepiped, depth: usize) -> f64 {
        const N3: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const W3: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        fn gauss3(p: &Point3<f64>, cell: &Parallelepiped) -> f64 {
            let c = cell.center();
            let half = cell.extent() / 2.0;
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        let q = Point3::new(
                            c.x + half.x * N3[i],
                            c.y + half.y * N3[j],
                            c.z + half.z * N3[k],
                        );
                        acc += W3[i] * W3[j] * W3[k] / (q - p).norm();
                    }
                }
            }
            acc * cell.volume() / 8.0
        }
        fn go(p: &Point3<f64>, cell: &Parallelepiped, depth: usize) -> f64 {
            let d = cell.distance_to(p);
            if d >= 2.0 * cell.diameter() {
                return gauss3(p, cell);
            }
            if depth == 0 {
                return if d == 0.0 { 0.0 } else { gauss3(p, cell) };
            }
            cell.octants().iter().map(|o| go(p, o, depth - 1)).sum()
        }
        go(p, bx, depth)
    }

    fn oracle_richardson(p: &Point3<f64>, bx: &Parallelepiped) -> f64 {
        // excluded singular cells scale like 4^{-depth}
        let coarse = subdivision_oracle(p, bx, 11);
        let fine = subdivision_oracle(p, bx, 12);
        (4.0 * fine - coarse) / 3.0
    }

    #[test]
    fn matches_subdivision_oracle_at_center() {
        let bx = unit_cube_centered();
        let p = Point3::new(0.0, 0.0, 0.0);
        let exact = newton_box_potential(&p, &bx);
        let q = oracle_richardson(&p, &bx);
        assert_relative_eq!(exact, q, max_relative = 1e-7);
    }

    #[test]
    fn center_of_unit_cube_value() {
        // Frozen from the subdivision oracle at depths (12,13) with
        // Richardson extrapolation: 2.380077366, oracle gap 2.4e-9.
        let bx = unit_cube_centered();
        let v = newton_box_potential(&Point3::new(0.0, 0.0, 0.0), &bx);
        assert_relative_eq!(v, 2.380_077_364, max_relative = 1e-8);
    }

    #[test]
    fn far_field_is_monopole() {
        let bx = unit_cube_centered();
        for p in [
            Point3::new(40.0, 3.0, -7.0),
            Point3::new(-55.0, 21.0, 10.0),
        ] {
            let v = newton_box_potential(&p, &bx);
            let mono = bx.volume() / (p - bx.center()).norm();
            assert_relative_eq!(v, mono, max_relative = 1e-3);
        }
    }

    #[test]
    fn continuous_across_boundary_points() {
        let bx = unit_cube_centered();
        // face, edge and corner targets must be finite and agree with nearby
        // exterior values
        for (on, near) in [
            (Point3::new(0.5, 0.0, 0.0), Point3::new(0.5 + 1e-9, 0.0, 0.0)),
            (Point3::new(0.5, 0.5, 0.0), Point3::new(0.5 + 1e-9, 0.5, 0.0)),
            (
                Point3::new(0.5, 0.5, 0.5),
                Point3::new(0.5 + 1e-9, 0.5 + 1e-9, 0.5),
            ),
        ] {
            let v_on = newton_box_potential(&on, &bx);
            let v_near = newton_box_potential(&near, &bx);
            assert!(v_on.is_finite());
            assert_relative_eq!(v_on, v_near, max_relative = 1e-6);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn subdivision_oracle_agreement_random(
            px in -1.2f64..1.2, py in -1.2f64..1.2, pz in -1.2f64..1.2,
            ex in 0.3f64..1.4, ey in 0.3f64..1.4, ez in 0.3f64..1.4,
        ) {
            let bx = Parallelepiped::new(
                Point3::new(-ex / 2.0, -ey / 2.0, -ez / 2.0),
                Point3::new(ex / 2.0, ey / 2.0, ez / 2.0),
            ).unwrap();
            let p = Point3::new(px, py, pz);
            let exact = newton_box_potential(&p, &bx);
            let approx = oracle_richardson(&p, &bx);
            proptest::prop_assert!(
                (exact - approx).abs() <= 1e-4 * exact.abs().max(1e-6),
                "exact = {exact}, oracle = {approx}"
            );
        }
    }
}

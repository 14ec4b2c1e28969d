//! Synthetic near-isometric shape pairs with known ground truth.
//!
//! Each generator builds a seeded base mesh and deforms it with a smooth
//! analytic field that keeps connectivity, so the ground-truth map between a
//! base and any of its deformations is the identity.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmap::{Direction, PointMap};
use crate::geometry::{normalize, Face, Shape, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    BentCylinder,
    BumpySphere,
    StretchedGrid,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bent_cylinder" => Ok(SynthKind::BentCylinder),
            "bumpy_sphere" => Ok(SynthKind::BumpySphere),
            "stretched_grid" => Ok(SynthKind::StretchedGrid),
            other => Err(Error::InvalidArgument(format!(
                "unsupported synthetic kind '{other}'"
            ))),
        }
    }
}

/// Smallest supported vertex budget.
pub const MIN_SYNTH_VERTICES: usize = 50;

/// Base mesh, unit-area normalized.
pub fn synth_base(kind: SynthKind, n_target: usize, seed: u64) -> Result<Shape> {
    if n_target < MIN_SYNTH_VERTICES {
        return Err(Error::InvalidArgument(format!(
            "n_target must be >= {MIN_SYNTH_VERTICES}, got {n_target}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = match kind {
        SynthKind::BentCylinder => cylinder(n_target, &mut rng)?,
        SynthKind::BumpySphere => bumpy_sphere(n_target, &mut rng)?,
        SynthKind::StretchedGrid => grid(n_target, &mut rng)?,
    };
    normalize(&raw)
}

/// Applies the kind's smooth deformation field, then re-normalizes.
pub fn synth_deform(kind: SynthKind, base: &Shape, magnitude: f64, seed: u64) -> Result<Shape> {
    if magnitude == 0.0 {
        return Ok(base.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let deformed = match kind {
        SynthKind::BentCylinder => bend_along_axis(base, magnitude, &mut rng),
        SynthKind::BumpySphere => twist(base, magnitude, &mut rng),
        SynthKind::StretchedGrid => roll_and_stretch(base, magnitude, &mut rng),
    };
    normalize(&deformed)
}

/// Base mesh, a deformed copy, and the identity ground truth (base → deformed).
pub fn synth_pair(
    kind: SynthKind,
    n_target: usize,
    deform_magnitude: f64,
    seed: u64,
) -> Result<(Shape, Shape, PointMap)> {
    let base = synth_base(kind, n_target, seed)?.with_id(format!("{kind:?}_{seed}_a"));
    let deformed =
        synth_deform(kind, &base, deform_magnitude, seed)?.with_id(format!("{kind:?}_{seed}_b"));
    let gt = PointMap::identity(base.n_vertices(), Direction::MToN)
        .with_ids(base.id.clone(), deformed.id.clone());
    Ok((base, deformed, gt))
}

/// `n_shapes` deformations of one base mesh; all share connectivity, so the
/// ground truth between any two members is the identity.
pub fn synth_collection(
    kind: SynthKind,
    n_target: usize,
    n_shapes: usize,
    magnitude: f64,
    seed: u64,
) -> Result<Vec<Shape>> {
    let base = synth_base(kind, n_target, seed)?;
    (0..n_shapes)
        .map(|i| {
            let s = synth_deform(
                kind,
                &base,
                magnitude,
                seed.wrapping_mul(1000).wrapping_add(i as u64 + 1),
            )?;
            Ok(s.with_id(format!("{kind:?}_{seed}_{i}")))
        })
        .collect()
}

fn quad_grid_faces(rows: usize, cols: usize, wrap_cols: bool) -> Vec<Face> {
    let idx = |r: usize, c: usize| r * cols + (c % cols);
    let ncols = if wrap_cols { cols } else { cols - 1 };
    let mut faces = Vec::with_capacity(2 * (rows - 1) * ncols);
    for r in 0..rows - 1 {
        for c in 0..ncols {
            let (a, b, cc, d) = (idx(r, c), idx(r, c + 1), idx(r + 1, c + 1), idx(r + 1, c));
            if (r + c) % 2 == 0 {
                faces.push([a, b, cc]);
                faces.push([a, cc, d]);
            } else {
                faces.push([a, b, d]);
                faces.push([b, cc, d]);
            }
        }
    }
    faces
}

const CYL_RADIUS: f64 = 0.4;
const CYL_HEIGHT: f64 = 2.0;

/// Tapered open tube with smooth seeded bumps, axis along z.
fn cylinder<R: Rng>(n_target: usize, rng: &mut R) -> Result<Shape> {
    let cols = ((1.475 * n_target as f64).sqrt().round() as usize).max(6);
    let rows = (n_target / cols).max(3);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(1..4) as f64,
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(1..3) as f64,
            )
        })
        .collect();
    let mut v = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let z = CYL_HEIGHT * r as f64 / (rows - 1) as f64;
        for c in 0..cols {
            let jitter = if r == 0 || r == rows - 1 {
                0.0
            } else {
                rng.random_range(-0.2..0.2)
            };
            let theta = 2.0 * PI * (c as f64 + jitter) / cols as f64;
            let mut rad = CYL_RADIUS * (1.0 + 0.35 * z / CYL_HEIGHT);
            let wobble: f64 = bumps
                .iter()
                .map(|&(a, m, ph, l)| a * (m * theta + ph).sin() * (PI * l * z / CYL_HEIGHT).sin())
                .sum();
            rad *= 1.0 + 0.05 * wobble;
            v.push([rad * theta.cos(), rad * theta.sin(), z]);
        }
    }
    Shape::new("bent_cylinder", v, quad_grid_faces(rows, cols, true))
}

/// Bends the tube axis along a planar curve of smoothly varying curvature.
fn bend_along_axis<R: Rng>(shape: &Shape, magnitude: f64, rng: &mut R) -> Shape {
    let phi = rng.random_range(0.0..2.0 * PI);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let b0 = sign * rng.random_range(0.6..1.0);
    let b1 = rng.random_range(-0.4..0.4);
    let ph = rng.random_range(0.0..2.0 * PI);

    // Work in the current (normalized) frame: the axis is z, centered at 0.
    let (zmin, zmax) = shape
        .vertices()
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v[2]), b.max(v[2])));
    let len = zmax - zmin;
    let s0 = 0.5 * (zmin + zmax);
    let k0 = magnitude * (PI / 3.0) / len;
    let curvature = |s: f64| k0 * (b0 + b1 * (2.0 * PI * (s - zmin) / len + ph).sin());

    // Tangent angle and centerline by fine trapezoid integration from s0.
    let steps = 4000;
    let ds = len / steps as f64;
    let sample = |s_target: f64| -> (f64, f64, f64) {
        let n = ((s_target - s0).abs() / ds).ceil().max(1.0) as usize;
        let h = (s_target - s0) / n as f64;
        let (mut psi, mut p, mut q) = (0.0f64, 0.0f64, s0);
        let mut s = s0;
        for _ in 0..n {
            let k1 = curvature(s);
            let k2 = curvature(s + h);
            let psi_next = psi + 0.5 * h * (k1 + k2);
            p += 0.5 * h * (psi.sin() + psi_next.sin());
            q += 0.5 * h * (psi.cos() + psi_next.cos());
            psi = psi_next;
            s += h;
        }
        (psi, p, q)
    };
    let mut cache: HashMap<u64, (f64, f64, f64)> = HashMap::new();
    let (cphi, sphi) = (phi.cos(), phi.sin());
    shape.map_vertices(|_, v| {
        let (psi, p, q) = *cache.entry(v[2].to_bits()).or_insert_with(|| sample(v[2]));
        let u = v[0] * cphi + v[1] * sphi;
        let w = -v[0] * sphi + v[1] * cphi;
        // In-plane normal n = (cos psi, -sin psi) in (u, z) coordinates.
        let nu = p + u * psi.cos();
        let nz = q - u * psi.sin();
        [nu * cphi - w * sphi, nu * sphi + w * cphi, nz]
    })
}

/// Unit icosphere after `level` rounds of 4-to-1 subdivision
/// (10·4^level + 2 vertices).
pub fn icosphere(level: usize) -> Shape {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut f: Vec<Face> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let unit = |p: Vec3| {
        let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        p.map(|x| x / n)
    };
    v.iter_mut().for_each(|p| *p = unit(*p));
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut nf = Vec::with_capacity(f.len() * 4);
        for tri in &f {
            let mut m = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                m[k] = *mid.entry(key).or_insert_with(|| {
                    let p = [
                        0.5 * (v[a][0] + v[b][0]),
                        0.5 * (v[a][1] + v[b][1]),
                        0.5 * (v[a][2] + v[b][2]),
                    ];
                    v.push(unit(p));
                    v.len() - 1
                });
            }
            nf.push([tri[0], m[0], m[2]]);
            nf.push([tri[1], m[1], m[0]]);
            nf.push([tri[2], m[2], m[1]]);
            nf.push([m[0], m[1], m[2]]);
        }
        f = nf;
    }
    Shape::new("icosphere", v, f).expect("icosphere is a valid closed mesh")
}

fn bumpy_sphere<R: Rng>(n_target: usize, rng: &mut R) -> Result<Shape> {
    let level = (0..6)
        .min_by_key(|&l| (10 * 4usize.pow(l as u32) + 2).abs_diff(n_target))
        .unwrap();
    let sphere = icosphere(level);
    let centers: Vec<(Vec3, f64)> = (0..4)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let a: f64 = rng.random_range(0.0..2.0 * PI);
            let r = (1.0 - z * z).sqrt();
            ([r * a.cos(), r * a.sin(), z], rng.random_range(0.5..1.0))
        })
        .collect();
    Ok(sphere
        .map_vertices(|_, p| {
            let bump: f64 = centers
                .iter()
                .map(|(c, a)| {
                    let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                    a * (-d2 / 0.3).exp()
                })
                .sum();
            let r = 1.0 + 0.12 * bump;
            [1.3 * r * p[0], r * p[1], 0.8 * r * p[2]]
        })
        .with_id("bumpy_sphere"))
}

/// Rotation about a random axis by an angle growing linearly along that axis.
fn twist<R: Rng>(shape: &Shape, magnitude: f64, rng: &mut R) -> Shape {
    let z: f64 = rng.random_range(-1.0..1.0);
    let a: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    let axis = nalgebra::Unit::new_normalize(nalgebra::Vector3::new(r * a.cos(), r * a.sin(), z));
    let rate = magnitude * (PI / 6.0) * rng.random_range(0.7..1.3);
    shape.map_vertices(|_, p| {
        let v = nalgebra::Vector3::new(p[0], p[1], p[2]);
        let h = v.dot(&axis);
        let rot = nalgebra::Rotation3::from_axis_angle(&axis, rate * h);
        let w = rot * v;
        [w[0], w[1], w[2]]
    })
}

/// Irregular height-field patch over [0, 1.5] × [0, 1].
fn grid<R: Rng>(n_target: usize, rng: &mut R) -> Result<Shape> {
    let cols = ((1.5 * n_target as f64).sqrt().round() as usize).max(4);
    let rows = (n_target / cols).max(3);
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..1.5),
                rng.random_range(0.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let mut v = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let interior = r > 0 && r < rows - 1 && c > 0 && c < cols - 1;
            let (jx, jy) = if interior {
                (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2))
            } else {
                (0.0, 0.0)
            };
            let x = 1.5 * (c as f64 + jx) / (cols - 1) as f64;
            let y = (r as f64 + jy) / (rows - 1) as f64;
            let z: f64 = bumps
                .iter()
                .map(|&(bx, by, a)| {
                    0.15 * a * (-((x - bx).powi(2) + (y - by).powi(2)) / 0.08).exp()
                })
                .sum();
            v.push([x, y, z]);
        }
    }
    Shape::new("stretched_grid", v, quad_grid_faces(rows, cols, false))
}

/// Rolls the patch around an axis parallel to y and stretches it mildly along y.
fn roll_and_stretch<R: Rng>(shape: &Shape, magnitude: f64, rng: &mut R) -> Shape {
    let kappa = magnitude * (PI / 2.0) * rng.random_range(0.7..1.3) / 1.5;
    let stretch = 0.1 * magnitude * rng.random_range(0.5..1.0);
    let ph = rng.random_range(0.0..PI);
    shape.map_vertices(|_, p| {
        let (x, y, z) = (p[0], p[1], p[2]);
        let y2 = y * (1.0 + stretch * (PI * x + ph).sin());
        if kappa.abs() < 1e-12 {
            return [x, y2, z];
        }
        let rad = 1.0 / kappa;
        let th = x * kappa;
        [(rad - z) * th.sin(), y2, rad - (rad - z) * th.cos()]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge_ratios(a: &Shape, b: &Shape) -> (f64, f64) {
        let len = |s: &Shape, i: usize, j: usize| {
            let (p, q) = (s.vertices()[i], s.vertices()[j]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        };
        a.edges()
            .iter()
            .map(|&(i, j)| len(b, i, j) / len(a, i, j))
            .fold((f64::MAX, f64::MIN), |(lo, hi), r| (lo.min(r), hi.max(r)))
    }

    #[test]
    fn zero_magnitude_gives_identical_pair() {
        for kind in [
            SynthKind::BentCylinder,
            SynthKind::BumpySphere,
            SynthKind::StretchedGrid,
        ] {
            let (a, b, gt) = synth_pair(kind, 200, 0.0, 5).unwrap();
            assert_eq!(a.vertices(), b.vertices());
            assert_eq!(
                gt.hard().unwrap(),
                (0..a.n_vertices()).collect::<Vec<_>>().as_slice()
            );
        }
    }

    #[test]
    fn bent_cylinder_is_near_isometric() {
        for seed in 0..5 {
            let (a, b, _) = synth_pair(SynthKind::BentCylinder, 800, 0.3, seed).unwrap();
            let (lo, hi) = edge_ratios(&a, &b);
            assert!(
                lo >= 0.85 && hi <= 1.15,
                "seed {seed}: edge ratios in [{lo}, {hi}]"
            );
            assert_ne!(a.vertices(), b.vertices());
        }
    }

    #[test]
    fn other_kinds_stay_close_to_isometric() {
        for kind in [SynthKind::BumpySphere, SynthKind::StretchedGrid] {
            let (a, b, _) = synth_pair(kind, 600, 0.3, 2).unwrap();
            let (lo, hi) = edge_ratios(&a, &b);
            assert!(lo >= 0.75 && hi <= 1.25, "{kind:?}: [{lo}, {hi}]");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let p1 = synth_pair(SynthKind::BentCylinder, 300, 0.3, 11).unwrap();
        let p2 = synth_pair(SynthKind::BentCylinder, 300, 0.3, 11).unwrap();
        assert_eq!(p1.0, p2.0);
        assert_eq!(p1.1, p2.1);
        let p3 = synth_pair(SynthKind::BentCylinder, 300, 0.3, 12).unwrap();
        assert_ne!(p1.1.vertices(), p3.1.vertices());
    }

    #[test]
    fn vertex_budget_respected() {
        assert!(synth_pair(SynthKind::BumpySphere, 49, 0.1, 0).is_err());
        let (a, _, _) = synth_pair(SynthKind::BentCylinder, 800, 0.1, 0).unwrap();
        assert!((700..=900).contains(&a.n_vertices()));
        assert!((a.total_area() - 1.0).abs() < 1e-10);
        assert!("blob".parse::<SynthKind>().is_err());
    }

    #[test]
    fn icosphere_counts() {
        assert_eq!(icosphere(0).n_vertices(), 12);
        assert_eq!(icosphere(2).n_vertices(), 162);
        assert_eq!(icosphere(2).faces().len(), 320);
    }
}

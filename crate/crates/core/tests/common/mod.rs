#![allow(dead_code)]

use nalgebra::DMatrix;
use ncp_core::Shape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Largest relative disagreement between an analytic gradient and central
/// differences of `f`, perturbing each entry of `x` by `h`. Entries whose
/// magnitude is below `1e-6` of the gradient scale are compared absolutely
/// against that floor.
pub fn fd_max_rel_err(
    x: &DMatrix<f64>,
    analytic: &DMatrix<f64>,
    h: f64,
    mut f: impl FnMut(&DMatrix<f64>) -> f64,
) -> f64 {
    assert_eq!(x.shape(), analytic.shape());
    let floor = analytic.amax().max(1e-12) * 1e-6;
    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for idx in 0..x.len() {
        let orig = xp[idx];
        xp[idx] = orig + h;
        let up = f(&xp);
        xp[idx] = orig - h;
        let down = f(&xp);
        xp[idx] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = analytic[idx];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}

/// Regular triangulated grid of `rows × cols` vertices with a gentle bump.
pub fn grid_shape(rows: usize, cols: usize) -> Shape {
    let mut v = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let x = c as f64 / (cols - 1) as f64;
            let y = r as f64 / (rows - 1) as f64;
            v.push([x, y, 0.2 * (3.0 * x).sin() * (2.0 * y).cos()]);
        }
    }
    let mut f = Vec::new();
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let a = r * cols + c;
            f.push([a, a + 1, a + cols + 1]);
            f.push([a, a + cols + 1, a + cols]);
        }
    }
    Shape::new("grid", v, f).unwrap()
}

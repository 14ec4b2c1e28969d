//! Shapes, normalization and data augmentation.
//!
//! A [`Shape`] is a vertex array with an optional triangle list. Vertex order
//! is the canonical index space for every map computed downstream, so nothing
//! in this module reorders vertices except the connected-component cleanup
//! performed at construction.

use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Face = [usize; 3];

/// Minimum number of vertices a shape may have.
pub const MIN_VERTICES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub id: String,
    vertices: Vec<Vec3>,
    faces: Vec<Face>,
}

impl Shape {
    /// Builds a validated shape.
    ///
    /// Zero-area faces are dropped. When faces are present and the edge graph
    /// is disconnected, only the largest component is kept (with a warning),
    /// which re-indexes the surviving vertices in their original order.
    pub fn new(id: impl Into<String>, vertices: Vec<Vec3>, faces: Vec<Face>) -> Result<Self> {
        let id = id.into();
        if vertices.is_empty() {
            return Err(Error::EmptyGeometry(format!(
                "shape '{id}' has no vertices"
            )));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Degenerate(format!(
                "shape '{id}' has non-finite coordinates"
            )));
        }
        let n = vertices.len();
        for f in &faces {
            for &i in f {
                if i >= n {
                    return Err(Error::IndexOutOfRange {
                        index: i,
                        n_vertices: n,
                    });
                }
            }
        }
        let had_faces = !faces.is_empty();
        let faces: Vec<Face> = faces
            .into_iter()
            .filter(|f| triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]) > 0.0)
            .collect();
        if had_faces && faces.is_empty() {
            return Err(Error::EmptyGeometry(format!(
                "shape '{id}' has only degenerate faces"
            )));
        }

        let (vertices, faces) = if faces.is_empty() {
            (vertices, faces)
        } else {
            keep_largest_component(&id, vertices, faces)
        };

        if vertices.len() < MIN_VERTICES {
            return Err(Error::EmptyGeometry(format!(
                "shape '{id}' has {} vertices, need at least {MIN_VERTICES}",
                vertices.len()
            )));
        }
        Ok(Shape {
            id,
            vertices,
            faces,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn is_mesh(&self) -> bool {
        !self.faces.is_empty()
    }

    /// Vertex coordinates as an n×3 matrix.
    pub fn coords(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.vertices.len(), 3, |i, j| self.vertices[i][j])
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.vertices.len() as f64;
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for k in 0..3 {
                c[k] += v[k];
            }
        }
        c.map(|x| x / n)
    }

    pub fn total_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                triangle_area(
                    &self.vertices[f[0]],
                    &self.vertices[f[1]],
                    &self.vertices[f[2]],
                )
            })
            .sum()
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| {
                [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
                    .into_iter()
                    .map(|(a, b)| (a.min(b), a.max(b)))
            })
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Returns a copy with every vertex passed through `f`. Connectivity is kept.
    pub fn map_vertices(&self, mut f: impl FnMut(usize, &Vec3) -> Vec3) -> Shape {
        Shape {
            id: self.id.clone(),
            vertices: self
                .vertices
                .iter()
                .enumerate()
                .map(|(i, v)| f(i, v))
                .collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Shape {
        self.id = id.into();
        self
    }

    /// Reorders vertices so that new vertex `i` is old vertex `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Shape> {
        let n = self.n_vertices();
        if order.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} for {n} vertices",
                order.len()
            )));
        }
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in order.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            inverse[old] = new;
        }
        Ok(Shape {
            id: self.id.clone(),
            vertices: order.iter().map(|&o| self.vertices[o]).collect(),
            faces: self.faces.iter().map(|f| f.map(|i| inverse[i])).collect(),
        })
    }
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let u = Vector3::new(b[0] - a[0], b[1] - a[1], b[2] - a[2]);
    let v = Vector3::new(c[0] - a[0], c[1] - a[1], c[2] - a[2]);
    0.5 * u.cross(&v).norm()
}

fn keep_largest_component(
    id: &str,
    vertices: Vec<Vec3>,
    faces: Vec<Face>,
) -> (Vec<Vec3>, Vec<Face>) {
    let n = vertices.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for f in &faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2])] {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut used = vec![false; n];
    for f in &faces {
        for &i in f {
            used[i] = true;
        }
    }
    let mut size = vec![0usize; n];
    for v in 0..n {
        if used[v] {
            let r = find(&mut parent, v);
            size[r] += 1;
        }
    }
    let n_components = size.iter().filter(|&&s| s > 0).count();
    let n_used = used.iter().filter(|&&u| u).count();
    if n_components == 1 && n_used == n {
        return (vertices, faces);
    }
    // Largest component; ties go to the one containing the lowest vertex.
    let best = (0..n)
        .max_by_key(|&r| (size[r], std::cmp::Reverse(r)))
        .unwrap();
    log::warn!(
        "shape '{id}': {n_components} components, {} unreferenced vertices; keeping the largest component ({} vertices)",
        n - n_used,
        size[best]
    );
    let mut remap = vec![usize::MAX; n];
    let mut kept = Vec::with_capacity(size[best]);
    for v in 0..n {
        if used[v] && find(&mut parent, v) == best {
            remap[v] = kept.len();
            kept.push(vertices[v]);
        }
    }
    let faces = faces
        .into_iter()
        .filter(|f| remap[f[0]] != usize::MAX)
        .map(|f| f.map(|i| remap[i]))
        .collect();
    (kept, faces)
}

/// Centers a shape at its vertex centroid and rescales it.
///
/// Meshes are scaled to unit total surface area; point clouds to a unit-radius
/// bounding sphere about the centroid.
pub fn normalize(shape: &Shape) -> Result<Shape> {
    let c = shape.centroid();
    let scale = if shape.is_mesh() {
        let area = shape.total_area();
        if !(area > 0.0) {
            return Err(Error::Degenerate(format!(
                "shape '{}' has zero area",
                shape.id
            )));
        }
        1.0 / area.sqrt()
    } else {
        let radius = shape
            .vertices()
            .iter()
            .map(|v| ((v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2) + (v[2] - c[2]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        if !(radius > 0.0) {
            return Err(Error::Degenerate(format!(
                "all points of shape '{}' coincide",
                shape.id
            )));
        }
        1.0 / radius
    };
    Ok(shape.map_vertices(|_, v| {
        [
            (v[0] - c[0]) * scale,
            (v[1] - c[1]) * scale,
            (v[2] - c[2]) * scale,
        ]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    pub rotate: bool,
    pub scale_range: [f64; 2],
    pub jitter_std: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            rotate: true,
            scale_range: [0.9, 1.1],
            jitter_std: 0.01,
        }
    }
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            rotate: false,
            scale_range: [1.0, 1.0],
            jitter_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "scale_range must satisfy 0 < low <= high, got [{lo}, {hi}]"
            )));
        }
        if !(self.jitter_std >= 0.0) {
            return Err(Error::InvalidArgument("jitter_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Uniformly distributed random rotation.
pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    let q: Vector4<f64> = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
    UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

/// Random rotation about the origin, uniform scaling and Gaussian jitter.
pub fn augment(shape: &Shape, params: &AugmentParams, seed: u64) -> Shape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment_with(shape, params, &mut rng)
}

pub fn augment_with<R: Rng>(shape: &Shape, params: &AugmentParams, rng: &mut R) -> Shape {
    let rot = if params.rotate {
        random_rotation(rng)
    } else {
        Matrix3::identity()
    };
    let [lo, hi] = params.scale_range;
    let scale = if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    let jitter = if params.jitter_std > 0.0 {
        Some(Normal::new(0.0, params.jitter_std).expect("jitter_std validated"))
    } else {
        None
    };
    shape.map_vertices(|_, v| {
        let p = rot * Vector3::new(v[0], v[1], v[2]) * scale;
        let mut out = [p[0], p[1], p[2]];
        if let Some(d) = &jitter {
            for c in &mut out {
                *c += d.sample(rng);
            }
        }
        out
    })
}

//! Correspondence quality metrics and the instruments used in experiments.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fmap::{nearest_rows, PointMap};
use crate::geometry::Shape;
use crate::spectral::{cotan_laplacian, LaplacianPair};

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    vertex: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    // Min-heap on distance, then on vertex index for a fixed pop order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Edge graph with Euclidean edge lengths, as adjacency lists.
fn edge_graph(shape: &Shape) -> Vec<Vec<(usize, f64)>> {
    let v = shape.vertices();
    let mut adj = vec![Vec::new(); shape.n_vertices()];
    for (a, b) in shape.edges() {
        let len = (0..3)
            .map(|c| (v[a][c] - v[b][c]).powi(2))
            .sum::<f64>()
            .sqrt();
        adj[a].push((b, len));
        adj[b].push((a, len));
    }
    adj
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier {
        dist: 0.0,
        vertex: source,
    });
    while let Some(Frontier { dist: d, vertex: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(w, len) in &adj[u] {
            let nd = d + len;
            if nd < dist[w] {
                dist[w] = nd;
                heap.push(Frontier {
                    dist: nd,
                    vertex: w,
                });
            }
        }
    }
    dist
}

/// Shortest edge-path distances from a set of source vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicField {
    n: usize,
    sources: Vec<usize>,
    row_of: Vec<Option<usize>>,
    dist: Vec<f64>,
}

impl GeodesicField {
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    /// Distances from the `i`-th source to every vertex.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.dist[i * self.n..(i + 1) * self.n]
    }

    /// Distance between `u` and `v` when either one is a source.
    pub fn between(&self, u: usize, v: usize) -> Option<f64> {
        if let Some(r) = self.row_of.get(u).copied().flatten() {
            return Some(self.row(r)[v]);
        }
        self.row_of
            .get(v)
            .copied()
            .flatten()
            .map(|r| self.row(r)[u])
    }
}

/// Dijkstra over the mesh edge graph from every listed source.
pub fn geodesic_distances(shape: &Shape, sources: &[usize]) -> Result<GeodesicField> {
    if !shape.is_mesh() {
        return Err(Error::InvalidArgument(
            "geodesics need a triangle mesh".into(),
        ));
    }
    let n = shape.n_vertices();
    let adj = edge_graph(shape);
    let mut row_of = vec![None; n];
    let mut dist = Vec::with_capacity(sources.len() * n);
    for (r, &s) in sources.iter().enumerate() {
        if s >= n {
            return Err(Error::IndexOutOfRange {
                index: s,
                n_vertices: n,
            });
        }
        let d = dijkstra(&adj, s);
        if d.iter().any(|x| x.is_infinite()) {
            return Err(Error::Degenerate(format!(
                "mesh '{}' is disconnected",
                shape.id
            )));
        }
        dist.extend_from_slice(&d);
        row_of[s].get_or_insert(r);
    }
    Ok(GeodesicField {
        n,
        sources: sources.to_vec(),
        row_of,
        dist,
    })
}

/// Distance on a target shape used to score correspondences: edge-graph
/// geodesics on meshes, Euclidean distance on point clouds.
#[derive(Debug, Clone)]
pub enum SurfaceMetric {
    Geodesic(GeodesicField),
    Euclidean(Vec<[f64; 3]>),
}

impl SurfaceMetric {
    /// All-pairs metric on `shape`.
    pub fn for_shape(shape: &Shape) -> Result<SurfaceMetric> {
        let all: Vec<usize> = (0..shape.n_vertices()).collect();
        Self::for_sources(shape, &all)
    }

    /// Metric able to answer queries with one endpoint among `sources`.
    pub fn for_sources(shape: &Shape, sources: &[usize]) -> Result<SurfaceMetric> {
        if shape.is_mesh() {
            let mut uniq = sources.to_vec();
            uniq.sort_unstable();
            uniq.dedup();
            Ok(SurfaceMetric::Geodesic(geodesic_distances(shape, &uniq)?))
        } else {
            Ok(SurfaceMetric::Euclidean(shape.vertices().to_vec()))
        }
    }

    pub fn dist(&self, u: usize, v: usize) -> f64 {
        match self {
            SurfaceMetric::Geodesic(g) => g
                .between(u, v)
                .expect("geodesic query without a source endpoint"),
            SurfaceMetric::Euclidean(x) => (0..3)
                .map(|c| (x[u][c] - x[v][c]).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

fn check_pair(map: &PointMap, gt: &PointMap) -> Result<(Vec<usize>, Vec<usize>)> {
    gt.expect_direction(map.direction)?;
    let (p, g) = (map.hard()?, gt.hard()?);
    if p.len() != g.len() {
        return Err(Error::DimensionMismatch(format!(
            "predicted map covers {} vertices, ground truth {}",
            p.len(),
            g.len()
        )));
    }
    Ok((p.to_vec(), g.to_vec()))
}

/// Per-vertex distances between predicted and true images.
pub fn pointwise_errors(map: &PointMap, gt: &PointMap, metric: &SurfaceMetric) -> Result<Vec<f64>> {
    let (p, g) = check_pair(map, gt)?;
    Ok(p.iter().zip(&g).map(|(&a, &b)| metric.dist(b, a)).collect())
}

/// Mean distance between predicted and true images, times 100.
pub fn geodesic_error_with(map: &PointMap, gt: &PointMap, metric: &SurfaceMetric) -> Result<f64> {
    let e = pointwise_errors(map, gt, metric)?;
    if e.is_empty() {
        return Err(Error::EmptyGeometry("empty map".into()));
    }
    Ok(100.0 * e.iter().sum::<f64>() / e.len() as f64)
}

/// Mean geodesic error ×100 of `map` against `gt`; `shape` is the codomain of
/// both maps.
pub fn geodesic_error(map: &PointMap, gt: &PointMap, shape: &Shape) -> Result<f64> {
    let (_, g) = check_pair(map, gt)?;
    gt.validate(shape.n_vertices())?;
    map.validate(shape.n_vertices())?;
    let metric = SurfaceMetric::for_sources(shape, &g)?;
    geodesic_error_with(map, gt, &metric)
}

/// Replaces each entry of `gt` by a uniform index in `0..codomain` with
/// probability `p`.
pub fn corrupt_map(gt: &PointMap, p: f64, codomain: usize, seed: u64) -> Result<PointMap> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "corruption level {p} outside [0, 1]"
        )));
    }
    if codomain == 0 {
        return Err(Error::EmptyGeometry("empty codomain".into()));
    }
    let t = gt.hard()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = t
        .iter()
        .map(|&x| {
            if rng.random::<f64>() < p {
                rng.random_range(0..codomain)
            } else {
                x
            }
        })
        .collect();
    let mut out = PointMap::from_hard(image, gt.direction);
    out.m_id.clone_from(&gt.m_id);
    out.n_id.clone_from(&gt.n_id);
    Ok(out)
}

/// Edge weights `w_uv = −W_uv` of a stiffness matrix, one entry per edge.
fn edge_weights(lap: &LaplacianPair) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for u in 0..lap.n() {
        for (v, w) in lap.stiffness.row(u) {
            if v > u {
                out.push((u, v, -w));
            }
        }
    }
    out
}

/// `Σ_{(u,v) ∈ E_M} w_uv ‖ψ(u) − ψ(v)‖²` with `ψ = Π X_N` for a hard map M → N
/// and cotan weights of M.
pub fn map_smoothness(map: &PointMap, shape_m: &Shape, shape_n: &Shape) -> Result<f64> {
    let t = map.hard()?;
    if t.len() != shape_m.n_vertices() {
        return Err(Error::DimensionMismatch(format!(
            "map covers {} vertices, source shape has {}",
            t.len(),
            shape_m.n_vertices()
        )));
    }
    map.validate(shape_n.n_vertices())?;
    let lap = cotan_laplacian(shape_m)?;
    let x = shape_n.vertices();
    Ok(edge_weights(&lap)
        .into_iter()
        .map(|(u, v, w)| {
            let (a, b) = (x[t[u]], x[t[v]]);
            w * (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>()
        })
        .sum())
}

/// Mean Rayleigh quotient `(gᵀ W g) / (gᵀ A g)` over the columns of `g`.
pub fn embedding_dirichlet(g: &DMatrix<f64>, lap: &LaplacianPair) -> Result<f64> {
    if g.nrows() != lap.n() || g.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "embedding is {}x{}, Laplacian has {} vertices",
            g.nrows(),
            g.ncols(),
            lap.n()
        )));
    }
    let mut total = 0.0;
    for (c, col) in g.column_iter().enumerate() {
        let col = col.into_owned();
        let den: f64 = col.iter().zip(&lap.mass).map(|(x, a)| a * x * x).sum();
        if !(den > 0.0) {
            return Err(Error::Degenerate(format!(
                "embedding column {c} has zero norm"
            )));
        }
        total += lap.quadratic_form(&col) / den;
    }
    Ok(total / g.ncols() as f64)
}

/// Smallest nearest-neighbour distance after centering the rows at their
/// centroid and scaling the farthest row to unit radius.
pub fn injectivity_margin(g: &DMatrix<f64>) -> Result<f64> {
    if g.nrows() < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    let mean = g.row_mean();
    let mut x = g.clone();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    let radius = x.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    if radius == 0.0 {
        return Ok(0.0);
    }
    x /= radius;
    let mut best = f64::INFINITY;
    for i in 0..x.nrows() {
        for j in i + 1..x.nrows() {
            best = best.min((x.row(i) - x.row(j)).norm());
        }
    }
    Ok(best)
}

/// Fraction of errors at or below each threshold.
pub fn pck_curve(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(
            "thresholds must be ascending".into(),
        ));
    }
    if errors.is_empty() {
        return Ok(vec![0.0; thresholds.len()]);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .collect())
}

/// Pulls source labels back along a hard map whose codomain is the labelled
/// shape.
pub fn transfer_labels(map: &PointMap, source_labels: &[usize]) -> Result<Vec<usize>> {
    map.validate(source_labels.len())?;
    Ok(map.hard()?.iter().map(|&i| source_labels[i]).collect())
}

/// Mean IoU over classes present in either labelling.
pub fn iou(pred: &[usize], gt: &[usize], n_classes: usize) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted labels for {} ground-truth labels",
            pred.len(),
            gt.len()
        )));
    }
    let mut inter = vec![0usize; n_classes];
    let mut union = vec![0usize; n_classes];
    for (&p, &g) in pred.iter().zip(gt) {
        if p >= n_classes || g >= n_classes {
            return Err(Error::IndexOutOfRange {
                index: p.max(g),
                n_vertices: n_classes,
            });
        }
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let present: Vec<f64> = inter
        .iter()
        .zip(&union)
        .filter(|(_, &u)| u > 0)
        .map(|(&i, &u)| i as f64 / u as f64)
        .collect();
    if present.is_empty() {
        return Ok(1.0);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Nearest vertex of `shape` to each query point.
pub fn snap_to_vertices(shape: &Shape, points: &[[f64; 3]]) -> Vec<usize> {
    let q = DMatrix::from_fn(points.len(), 3, |i, c| points[i][c]);
    nearest_rows(&q, &shape.coords())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub pair_id: String,
    pub provenance: String,
    pub geodesic_error: f64,
    pub smoothness: Option<f64>,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl EvalReport {
    pub fn mean_error(&self, provenance: &str) -> Option<f64> {
        let e: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.provenance == provenance)
            .map(|r| r.geodesic_error)
            .collect();
        (!e.is_empty()).then(|| e.iter().sum::<f64>() / e.len() as f64)
    }

    /// CSV with columns `pair_id,provenance,geodesic_error,smoothness`, plus
    /// `iou` when any record has one.
    pub fn to_csv(&self) -> String {
        let with_iou = self.records.iter().any(|r| r.iou.is_some());
        let mut out = String::from("pair_id,provenance,geodesic_error,smoothness");
        if with_iou {
            out.push_str(",iou");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{},{:.6},{}",
                r.pair_id,
                r.provenance,
                r.geodesic_error,
                opt(r.smoothness)
            );
            if with_iou {
                let _ = write!(out, ",{}", opt(r.iou));
            }
            out.push('\n');
        }
        out
    }
}

/// CSV of `threshold,fraction` rows.
pub fn pck_csv(thresholds: &[f64], fractions: &[f64]) -> String {
    let mut out = String::from("threshold,fraction\n");
    for (t, f) in thresholds.iter().zip(fractions) {
        let _ = writeln!(out, "{t:.6},{f:.6}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmap::Direction;
    use crate::geometry::normalize;
    use crate::spectral::eigenbasis;
    use crate::synth::icosphere;

    fn strip() -> Shape {
        // Vertices 0,1,2 on a line with unit spacing, lifted by a third row.
        let v = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [0.0, 5.0, 0.0],
            [1.0, 5.0, 0.0],
            [2.0, 5.0, 0.0],
        ];
        let f = vec![[0, 1, 4], [0, 4, 3], [1, 2, 5], [1, 5, 4]];
        Shape::new("strip", v, f).unwrap()
    }

    #[test]
    fn path_distances() {
        let g = geodesic_distances(&strip(), &[0]).unwrap();
        assert_eq!(g.row(0)[2], 2.0);
        assert_eq!(g.between(2, 0), Some(2.0));
        assert_eq!(g.row(0)[0], 0.0);
    }

    #[test]
    fn self_distance_zero_and_symmetric() {
        let s = normalize(&icosphere(2)).unwrap();
        let all: Vec<usize> = (0..s.n_vertices()).collect();
        let g = geodesic_distances(&s, &all).unwrap();
        for u in 0..s.n_vertices() {
            assert_eq!(g.row(u)[u], 0.0);
            for v in (0..s.n_vertices()).step_by(7) {
                assert!((g.row(u)[v] - g.row(v)[u]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn antipodal_distance_near_half_circumference() {
        let s = normalize(&icosphere(4)).unwrap();
        let r_eq = (1.0 / (4.0 * std::f64::consts::PI)).sqrt();
        let x = s.vertices();
        let far = (1..s.n_vertices())
            .max_by(|&a, &b| {
                let da: f64 = (0..3).map(|c| (x[a][c] - x[0][c]).powi(2)).sum();
                let db: f64 = (0..3).map(|c| (x[b][c] - x[0][c]).powi(2)).sum();
                da.total_cmp(&db)
            })
            .unwrap();
        let d = geodesic_distances(&s, &[0]).unwrap().row(0)[far];
        let exact = std::f64::consts::PI * r_eq;
        assert!(d >= exact * 0.99 && d <= exact * 1.12, "{d} vs {exact}");
    }

    #[test]
    fn geodesic_error_cases() {
        let s = strip();
        let gt = PointMap::from_hard(vec![0, 1, 2, 3, 4, 5], Direction::MToN);
        assert_eq!(geodesic_error(&gt, &gt, &s).unwrap(), 0.0);
        // Every bottom vertex shifted one unit edge along the line.
        let off = PointMap::from_hard(vec![1, 0, 1], Direction::MToN);
        let gt3 = PointMap::from_hard(vec![0, 1, 2], Direction::MToN);
        assert!((geodesic_error(&off, &gt3, &s).unwrap() - 100.0).abs() < 1e-12);
        let wrong = PointMap::from_hard(vec![0, 1, 2], Direction::NToM);
        assert!(geodesic_error(&wrong, &gt3, &s).is_err());
    }

    #[test]
    fn random_map_error_matches_mean_pairwise_distance() {
        let s = normalize(&icosphere(3)).unwrap();
        let n = s.n_vertices();
        let metric = SurfaceMetric::for_shape(&s).unwrap();
        let mut oracle = 0.0;
        for u in 0..n {
            for v in 0..n {
                oracle += metric.dist(u, v);
            }
        }
        oracle *= 100.0 / (n * n) as f64;
        let gt = PointMap::identity(n, Direction::MToN);
        let rand = corrupt_map(&gt, 1.0, n, 4).unwrap();
        let e = geodesic_error(&rand, &gt, &s).unwrap();
        assert!((e - oracle).abs() < 0.1 * oracle, "{e} vs {oracle}");
    }

    #[test]
    fn corruption_levels() {
        let n = 1000;
        let gt = PointMap::identity(n, Direction::MToN);
        assert_eq!(corrupt_map(&gt, 0.0, n, 1).unwrap(), gt);
        assert_eq!(
            corrupt_map(&gt, 0.5, n, 3).unwrap(),
            corrupt_map(&gt, 0.5, n, 3).unwrap()
        );
        let mut inside = 0;
        for seed in 0..100 {
            let c = corrupt_map(&gt, 0.5, n, seed).unwrap();
            let changed = c
                .hard()
                .unwrap()
                .iter()
                .enumerate()
                .filter(|(i, &x)| *i != x)
                .count();
            let frac = changed as f64 / n as f64;
            let scale = 1.0 - 1.0 / n as f64;
            if frac >= 0.45 * scale && frac <= 0.55 * scale {
                inside += 1;
            }
        }
        assert!(inside >= 99, "{inside}");
        assert!(corrupt_map(&gt, 1.5, n, 0).is_err());
    }

    #[test]
    fn smoothness_identity_matches_quadratic_form() {
        let s = normalize(&icosphere(2)).unwrap();
        let id = PointMap::identity(s.n_vertices(), Direction::MToN);
        let e = map_smoothness(&id, &s, &s).unwrap();
        let lap = cotan_laplacian(&s).unwrap();
        let x = s.coords();
        let q: f64 = (0..3)
            .map(|c| lap.quadratic_form(&x.column(c).into_owned()))
            .sum();
        assert!((e - q).abs() < 1e-10 * q.max(1.0));
        let constant = PointMap::from_hard(vec![3; s.n_vertices()], Direction::MToN);
        assert_eq!(map_smoothness(&constant, &s, &s).unwrap(), 0.0);
    }

    #[test]
    fn dirichlet_of_eigenfunctions() {
        let s = normalize(&icosphere(2)).unwrap();
        let lap = cotan_laplacian(&s).unwrap();
        let b = eigenbasis(&lap, 6).unwrap();
        for j in 1..6 {
            let col = b.phi.columns(j, 1).into_owned();
            let e = embedding_dirichlet(&col, &lap).unwrap();
            assert!((e - b.evals[j]).abs() < 1e-8 * b.evals[j].max(1.0));
        }
        let ones = DMatrix::from_element(s.n_vertices(), 1, 2.0);
        assert!(embedding_dirichlet(&ones, &lap).unwrap().abs() < 1e-12);
        let zeros = DMatrix::zeros(s.n_vertices(), 1);
        assert!(embedding_dirichlet(&zeros, &lap).is_err());
    }

    #[test]
    fn injectivity_cases() {
        let dup = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 3.0]);
        assert_eq!(injectivity_margin(&dup).unwrap(), 0.0);
        for n in 2..6usize {
            let simplex = DMatrix::<f64>::identity(n, n);
            let radius = ((n - 1) as f64 / n as f64).sqrt();
            let expected = 2f64.sqrt() / radius;
            assert!((injectivity_margin(&simplex).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn pck_cases() {
        assert_eq!(pck_curve(&[0.1, 0.3], &[0.2, 0.4]).unwrap(), vec![0.5, 1.0]);
        assert_eq!(pck_curve(&[0.0; 4], &[0.0, 0.1]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(pck_curve(&[5.0, 1e9], &[f64::INFINITY]).unwrap(), vec![1.0]);
        assert!(pck_curve(&[0.0], &[0.2, 0.1]).is_err());
    }

    #[test]
    fn label_transfer_and_iou() {
        let labels = vec![0, 0, 1, 1];
        let id = PointMap::identity(4, Direction::NToM);
        let t = transfer_labels(&id, &labels).unwrap();
        assert_eq!(iou(&t, &labels, 2).unwrap(), 1.0);
        assert_eq!(iou(&[1, 1], &[0, 0], 2).unwrap(), 0.0);
        // Class 1 on four vertices each, overlapping on two.
        let pred = [1, 1, 1, 1, 0, 0];
        let gt = [0, 0, 1, 1, 1, 1];
        let mut inter = 0.0;
        let mut union = 0.0;
        for c in 0..2 {
            let i = pred
                .iter()
                .zip(&gt)
                .filter(|(&p, &g)| p == c && g == c)
                .count() as f64;
            let u = pred
                .iter()
                .zip(&gt)
                .filter(|(&p, &g)| p == c || g == c)
                .count() as f64;
            inter += i / u;
            union += 1.0;
        }
        assert!((iou(&pred, &gt, 2).unwrap() - inter / union).abs() < 1e-15);
        assert!((iou(&[1, 1, 0, 0], &[0, 1, 1, 0], 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(iou(&[2], &[0], 2).is_err());
    }

    #[test]
    fn report_csv() {
        let r = EvalReport {
            records: vec![EvalRecord {
                pair_id: "a__b".into(),
                provenance: "stage1".into(),
                geodesic_error: 1.5,
                smoothness: None,
                iou: None,
            }],
        };
        assert_eq!(
            r.to_csv(),
            "pair_id,provenance,geodesic_error,smoothness\na__b,stage1,1.500000,\n"
        );
        assert_eq!(r.mean_error("stage1"), Some(1.5));
    }
}

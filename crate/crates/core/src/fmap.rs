//! Functional maps and point-to-point maps.
//!
//! Conventions: `M` is the source shape and `N` the target. A functional map
//! `C_MN` sends spectral coefficients on `M` to coefficients on `N`
//! (`b = C a`), and its pointwise counterpart is a hard map `T: N → M`.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Each vertex of M is assigned a vertex of N.
    #[serde(rename = "M->N")]
    MToN,
    /// Each vertex of N is assigned a vertex of M.
    #[serde(rename = "N->M")]
    NToM,
}

impl Direction {
    pub fn reverse(self) -> Direction {
        match self {
            Direction::MToN => Direction::NToM,
            Direction::NToM => Direction::MToN,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::MToN => "M->N",
            Direction::NToM => "N->M",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M->N" => Ok(Direction::MToN),
            "N->M" => Ok(Direction::NToM),
            other => Err(Error::Format(format!("unknown direction '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapData {
    /// `image[v]` is the vertex assigned to domain vertex `v`.
    Hard(Vec<usize>),
    /// Row-stochastic matrix, rows over the domain.
    Soft(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    pub direction: Direction,
    pub m_id: String,
    pub n_id: String,
    pub data: MapData,
}

impl PointMap {
    pub fn from_hard(image: Vec<usize>, direction: Direction) -> PointMap {
        PointMap {
            direction,
            m_id: String::new(),
            n_id: String::new(),
            data: MapData::Hard(image),
        }
    }

    pub fn from_soft(matrix: DMatrix<f64>, direction: Direction) -> PointMap {
        PointMap {
            direction,
            m_id: String::new(),
            n_id: String::new(),
            data: MapData::Soft(matrix),
        }
    }

    pub fn identity(n: usize, direction: Direction) -> PointMap {
        PointMap::from_hard((0..n).collect(), direction)
    }

    pub fn with_ids(mut self, m_id: impl Into<String>, n_id: impl Into<String>) -> PointMap {
        self.m_id = m_id.into();
        self.n_id = n_id.into();
        self
    }

    pub fn hard_indices(&self) -> Option<&[usize]> {
        match &self.data {
            MapData::Hard(v) => Some(v),
            MapData::Soft(_) => None,
        }
    }

    /// Hard indices or an error for soft maps.
    pub fn hard(&self) -> Result<&[usize]> {
        self.hard_indices()
            .ok_or_else(|| Error::InvalidArgument("expected a hard point map".into()))
    }

    pub fn soft_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.data {
            MapData::Soft(s) => Some(s),
            MapData::Hard(_) => None,
        }
    }

    pub fn domain_len(&self) -> usize {
        match &self.data {
            MapData::Hard(v) => v.len(),
            MapData::Soft(s) => s.nrows(),
        }
    }

    pub fn expect_direction(&self, expected: Direction) -> Result<()> {
        if self.direction != expected {
            return Err(Error::DirectionMismatch {
                expected: expected.to_string(),
                got: self.direction.to_string(),
            });
        }
        Ok(())
    }

    /// Checks hard indices against the codomain size, or row-stochasticity.
    pub fn validate(&self, codomain: usize) -> Result<()> {
        match &self.data {
            MapData::Hard(v) => {
                if let Some(&bad) = v.iter().find(|&&i| i >= codomain) {
                    return Err(Error::IndexOutOfRange {
                        index: bad,
                        n_vertices: codomain,
                    });
                }
            }
            MapData::Soft(s) => {
                if s.ncols() != codomain {
                    return Err(Error::DimensionMismatch(format!(
                        "soft map has {} columns, codomain has {codomain}",
                        s.ncols()
                    )));
                }
                for (i, row) in s.row_iter().enumerate() {
                    if row.iter().any(|&x| !(x >= 0.0)) || (row.sum() - 1.0).abs() > 1e-8 {
                        return Err(Error::InvalidArgument(format!("row {i} is not stochastic")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Spectral map `C` (rows: target coefficients, columns: source coefficients).
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMap {
    pub c: DMatrix<f64>,
    pub source_id: String,
    pub target_id: String,
}

impl FunctionalMap {
    pub fn new(c: DMatrix<f64>) -> FunctionalMap {
        FunctionalMap {
            c,
            source_id: String::new(),
            target_id: String::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.c.ncols()
    }
}

/// Per-row factorizations retained for the adjoint solve.
#[derive(Debug, Clone)]
pub struct FmapContext {
    pub(crate) a_spec: DMatrix<f64>,
    pub(crate) b_spec: DMatrix<f64>,
    pub(crate) c: DMatrix<f64>,
    pub(crate) systems: Vec<Cholesky<f64, Dyn>>,
}

#[derive(Debug, Clone)]
pub struct FmapSolution {
    pub map: FunctionalMap,
    /// Set when a ridge of [`RIDGE`] had to be added to a singular row system.
    pub regularized: bool,
    pub context: FmapContext,
}

pub const RIDGE: f64 = 1e-9;

/// Least-squares functional map with the Laplacian commutativity penalty.
///
/// Minimizes `‖C A − B‖² + λ ‖C Λ_M − Λ_N C‖²` (squared Frobenius norms).
/// The penalty is diagonal in each row of `C`, so row `i` solves
/// `(A Aᵀ + λ D_i) c_i = A b_i` with `D_i = diag((μ_j − ν_i)²)`.
pub fn solve_fmap(
    a_spec: &DMatrix<f64>,
    b_spec: &DMatrix<f64>,
    evals_m: &[f64],
    evals_n: &[f64],
    lambda: f64,
) -> Result<FmapSolution> {
    let (km, d) = a_spec.shape();
    let kn = b_spec.nrows();
    if d == 0 || b_spec.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "spectral features {}x{} and {}x{}",
            km,
            d,
            kn,
            b_spec.ncols()
        )));
    }
    if evals_m.len() != km || evals_n.len() != kn {
        return Err(Error::DimensionMismatch(
            "eigenvalue counts do not match spectral feature rows".into(),
        ));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let gram = a_spec * a_spec.transpose();
    let rhs = a_spec * b_spec.transpose(); // column i is A b_i
    let scale = (gram.trace() / km as f64).max(1.0);
    let mut c = DMatrix::zeros(kn, km);
    let mut systems = Vec::with_capacity(kn);
    let mut regularized = false;
    for i in 0..kn {
        let mut sys = gram.clone();
        for j in 0..km {
            sys[(j, j)] += lambda * (evals_m[j] - evals_n[i]).powi(2);
        }
        let chol = match well_conditioned_cholesky(&sys) {
            Some(ch) => ch,
            None => {
                regularized = true;
                for j in 0..km {
                    sys[(j, j)] += RIDGE * scale;
                }
                sys.cholesky().ok_or_else(|| {
                    Error::Degenerate("functional map system singular after ridge".into())
                })?
            }
        };
        let ci = chol.solve(&rhs.column(i).into_owned());
        c.row_mut(i).copy_from(&ci.transpose());
        systems.push(chol);
    }
    if regularized {
        log::warn!("functional map system was rank deficient; added ridge {RIDGE}");
    }
    Ok(FmapSolution {
        map: FunctionalMap::new(c.clone()),
        regularized,
        context: FmapContext {
            a_spec: a_spec.clone(),
            b_spec: b_spec.clone(),
            c,
            systems,
        },
    })
}

fn well_conditioned_cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let ch = m.clone().cholesky()?;
    let diag = ch.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    // Pivot ratio squared approximates the inverse condition number.
    ((lo / hi).powi(2) > 1e-14).then_some(ch)
}

/// Index of the nearest row of `data` for each row of `query`; lowest index
/// wins ties.
pub fn nearest_rows(query: &DMatrix<f64>, data: &DMatrix<f64>) -> Vec<usize> {
    let d = query.ncols();
    assert_eq!(d, data.ncols(), "feature dimensions differ");
    // Row-major copies keep the inner loop contiguous.
    let q: Vec<f64> = query.transpose().iter().copied().collect();
    let x: Vec<f64> = data.transpose().iter().copied().collect();
    let nd = data.nrows();
    (0..query.nrows())
        .map(|i| {
            let qi = &q[i * d..(i + 1) * d];
            let mut best = (f64::INFINITY, 0usize);
            for j in 0..nd {
                let xj = &x[j * d..(j + 1) * d];
                let mut s = 0.0;
                for t in 0..d {
                    let diff = qi[t] - xj[t];
                    s += diff * diff;
                }
                if s < best.0 {
                    best = (s, j);
                }
            }
            best.1
        })
        .collect()
}

/// Pointwise map `T: N → M` from `C_MN`: `T(y) = argmin_x ‖Φ_N[y] − (Φ_M Cᵀ)[x]‖`.
pub fn fmap_to_p2p(
    c: &FunctionalMap,
    phi_m: &DMatrix<f64>,
    phi_n: &DMatrix<f64>,
) -> Result<PointMap> {
    if phi_m.ncols() != c.c.ncols() || phi_n.ncols() != c.c.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "C is {}x{}, bases have {} and {} columns",
            c.c.nrows(),
            c.c.ncols(),
            phi_n.ncols(),
            phi_m.ncols()
        )));
    }
    let emb_m = phi_m * c.c.transpose();
    Ok(
        PointMap::from_hard(nearest_rows(phi_n, &emb_m), Direction::NToM)
            .with_ids(c.source_id.clone(), c.target_id.clone()),
    )
}

/// Spectral representation of the pull-back along `T: N → M`:
/// `C = Φ_Nᵀ A_N Π_NM Φ_M`.
pub fn p2p_to_fmap(
    map: &PointMap,
    basis_m: &SpectralBasis,
    basis_n: &SpectralBasis,
) -> Result<FunctionalMap> {
    map.expect_direction(Direction::NToM)?;
    let t = map.hard()?;
    if t.len() != basis_n.n() {
        return Err(Error::DimensionMismatch(format!(
            "map covers {} vertices, target has {}",
            t.len(),
            basis_n.n()
        )));
    }
    map.validate(basis_m.n())?;
    let pulled = DMatrix::from_fn(t.len(), basis_m.k(), |y, j| basis_m.phi[(t[y], j)]);
    let c = basis_n.pinv() * pulled;
    Ok(FunctionalMap {
        c,
        source_id: map.m_id.clone(),
        target_id: map.n_id.clone(),
    })
}

/// Nearest neighbours in feature space. `f` holds M's features and `g` N's;
/// `direction` picks which side is the domain.
pub fn nn_map(f: &DMatrix<f64>, g: &DMatrix<f64>, direction: Direction) -> Result<PointMap> {
    if f.ncols() != g.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "feature widths {} and {}",
            f.ncols(),
            g.ncols()
        )));
    }
    let image = match direction {
        Direction::MToN => nearest_rows(f, g),
        Direction::NToM => nearest_rows(g, f),
    };
    Ok(PointMap::from_hard(image, direction))
}

/// Pairwise Euclidean distances between rows of `f` and rows of `g`.
pub fn pairwise_distances(f: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let fg = f * g.transpose();
    let fn2: Vec<f64> = f.row_iter().map(|r| r.norm_squared()).collect();
    let gn2: Vec<f64> = g.row_iter().map(|r| r.norm_squared()).collect();
    DMatrix::from_fn(f.nrows(), g.nrows(), |i, j| {
        (fn2[i] + gn2[j] - 2.0 * fg[(i, j)]).max(0.0).sqrt()
    })
}

/// Row-wise softmax of negative Euclidean feature distances (M → N).
pub fn soft_correspondence(f: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<PointMap> {
    if f.ncols() != g.ncols() {
        return Err(Error::DimensionMismatch("feature widths differ".into()));
    }
    let d = pairwise_distances(f, g);
    Ok(PointMap::from_soft(softmax_neg_rows(&d), Direction::MToN))
}

pub(crate) fn softmax_neg_rows(d: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = d.map(|x| -x);
    for mut row in s.row_iter_mut() {
        let m = row.max();
        row.apply(|x| *x = (*x - m).exp());
        let z = row.sum();
        row /= z;
    }
    s
}

/// Reverse-mode through `soft_correspondence`: given `dL/dS`, returns
/// `(dL/dF, dL/dG)`.
pub fn soft_correspondence_backward(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    s: &DMatrix<f64>,
    ds: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = pairwise_distances(f, g);
    // dL/dD_ij = -S_ij (dS_ij - Σ_k S_ik dS_ik)
    let mut e = DMatrix::zeros(s.nrows(), s.ncols());
    for i in 0..s.nrows() {
        let inner: f64 = s.row(i).dot(&ds.row(i));
        for j in 0..s.ncols() {
            let dd = -s[(i, j)] * (ds[(i, j)] - inner);
            // Subgradient 0 where the distance vanishes.
            e[(i, j)] = if d[(i, j)] > 1e-300 {
                dd / d[(i, j)]
            } else {
                0.0
            };
        }
    }
    distance_weight_backward(f, g, &e)
}

/// With `E_ij = (dL/dD_ij) / D_ij` for Euclidean distances (or
/// `dL/d(D²_ij)` times two for squared ones), returns the feature gradients
/// `dF_i = Σ_j E_ij (F_i − G_j)` and `dG_j = −Σ_i E_ij (F_i − G_j)`.
pub(crate) fn distance_weight_backward(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    e: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let row_sums: Vec<f64> = e.row_iter().map(|r| r.sum()).collect();
    let col_sums: Vec<f64> = e.column_iter().map(|c| c.sum()).collect();
    let mut df = -(e * g);
    for (i, mut row) in df.row_iter_mut().enumerate() {
        row += f.row(i) * row_sums[i];
    }
    let mut dg = -(e.transpose() * f);
    for (j, mut row) in dg.row_iter_mut().enumerate() {
        row += g.row(j) * col_sums[j];
    }
    (df, dg)
}

fn token_or_dash(s: &str) -> &str {
    if s.is_empty() {
        "-"
    } else {
        s
    }
}

/// Plain-text hard map: header `pointmap <dir> <m_id> <n_id> <len>`, then one
/// `domain_index image_index` line per domain vertex.
pub fn format_point_map(map: &PointMap) -> Result<String> {
    let t = map.hard()?;
    let mut out = String::with_capacity(12 * t.len() + 64);
    let _ = writeln!(
        out,
        "pointmap {} {} {} {}",
        map.direction,
        token_or_dash(&map.m_id),
        token_or_dash(&map.n_id),
        t.len()
    );
    for (i, j) in t.iter().enumerate() {
        let _ = writeln!(out, "{i} {j}");
    }
    Ok(out)
}

pub fn parse_point_map(text: &str) -> Result<PointMap> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty map file".into()))?
        .split_whitespace()
        .collect();
    let [tag, dir, m_id, n_id, len] = header.as_slice() else {
        return Err(Error::Format("malformed map header".into()));
    };
    if *tag != "pointmap" {
        return Err(Error::Format("missing 'pointmap' tag".into()));
    }
    let len: usize = len
        .parse()
        .map_err(|_| Error::Format(format!("bad map length '{len}'")))?;
    let undash = |s: &str| {
        if s == "-" {
            String::new()
        } else {
            s.to_string()
        }
    };
    let mut image = vec![usize::MAX; len];
    for (ln, l) in lines.enumerate() {
        let mut it = l.split_whitespace().map(str::parse::<usize>);
        match (it.next(), it.next()) {
            (Some(Ok(i)), Some(Ok(j))) if i < len => image[i] = j,
            _ => return Err(Error::Format(format!("bad map line {}: '{l}'", ln + 2))),
        }
    }
    if image.contains(&usize::MAX) {
        return Err(Error::Format("map file does not cover every vertex".into()));
    }
    Ok(PointMap::from_hard(image, dir.parse()?).with_ids(undash(m_id), undash(n_id)))
}

pub fn write_point_map(path: &Path, map: &PointMap) -> Result<()> {
    std::fs::write(path, format_point_map(map)?).map_err(|e| Error::io(path, e))
}

pub fn read_point_map(path: &Path) -> Result<PointMap> {
    parse_point_map(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// `k` on the first line, then `k` rows of `k` reals.
pub fn format_fmap(c: &FunctionalMap) -> Result<String> {
    let k = c.c.nrows();
    if c.c.ncols() != k {
        return Err(Error::DimensionMismatch(
            "fmap file requires a square C".into(),
        ));
    }
    let mut out = format!("{k}\n");
    for i in 0..k {
        let row: Vec<String> = (0..k).map(|j| format!("{}", c.c[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_fmap(text: &str) -> Result<FunctionalMap> {
    let mut toks = text.split_whitespace();
    let k: usize = toks
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format("missing fmap size".into()))?;
    let vals: Vec<f64> = toks
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Format(format!("bad real '{t}'")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != k * k {
        return Err(Error::Format(format!(
            "expected {} entries, got {}",
            k * k,
            vals.len()
        )));
    }
    Ok(FunctionalMap::new(DMatrix::from_row_slice(k, k, &vals)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_features_give_identity_fmap() {
        let i = DMatrix::<f64>::identity(4, 4);
        let ev = [0.0, 1.0, 2.0, 3.0];
        let sol = solve_fmap(&i, &i, &ev, &ev, 0.0).unwrap();
        assert!((sol.map.c - &i).amax() < 1e-14);
        assert!(!sol.regularized);
    }

    #[test]
    fn commutativity_hand_case() {
        let i = DMatrix::<f64>::identity(2, 2);
        let c = solve_fmap(&i, &i, &[0.0, 1.0], &[0.0, 2.0], 10.0)
            .unwrap()
            .map
            .c;
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0 / 11.0]);
        assert!((c - expected).amax() < 1e-12);
    }

    #[test]
    fn rank_deficient_flagged() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let sol = solve_fmap(&a, &a, &[0.0, 1.0], &[0.0, 1.0], 0.0).unwrap();
        assert!(sol.regularized);
        assert!(sol.map.c.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn hand_checkable_nn() {
        let f = DMatrix::from_row_slice(2, 1, &[0.0, 10.0]);
        let g = DMatrix::from_row_slice(2, 1, &[9.0, 1.0]);
        assert_eq!(
            nn_map(&f, &g, Direction::MToN).unwrap().hard().unwrap(),
            &[1, 0]
        );
        assert_eq!(
            nn_map(&f, &g, Direction::NToM).unwrap().hard().unwrap(),
            &[1, 0]
        );
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let f = DMatrix::from_row_slice(1, 1, &[0.0]);
        let g = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 1.0]);
        assert_eq!(
            nn_map(&f, &g, Direction::MToN).unwrap().hard().unwrap(),
            &[0]
        );
    }

    #[test]
    fn uniform_soft_rows() {
        let f = DMatrix::from_element(3, 2, 0.5);
        let s = soft_correspondence(&f, &f).unwrap();
        let s = s.soft_matrix().unwrap();
        assert!(s.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn map_file_roundtrip() {
        let m = PointMap::from_hard(vec![3, 1, 2, 0], Direction::NToM).with_ids("a", "b");
        let back = parse_point_map(&format_point_map(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let anon = PointMap::from_hard(vec![0, 0], Direction::MToN);
        assert_eq!(
            parse_point_map(&format_point_map(&anon).unwrap()).unwrap(),
            anon
        );
        assert!(parse_point_map("pointmap M->N a b 3\n0 1\n1 1\n").is_err());
    }

    #[test]
    fn fmap_file_roundtrip() {
        let c = FunctionalMap::new(DMatrix::from_fn(3, 3, |i, j| {
            (i as f64 - 0.3 * j as f64).sin()
        }));
        let back = parse_fmap(&format_fmap(&c).unwrap()).unwrap();
        assert_eq!(back.c, c.c);
        assert!(parse_fmap("2\n1 2 3\n").is_err());
    }

    #[test]
    fn validate_catches_bad_maps() {
        let m = PointMap::from_hard(vec![0, 5], Direction::MToN);
        assert!(m.validate(3).is_err());
        let s = PointMap::from_soft(DMatrix::from_row_slice(1, 2, &[0.5, 0.6]), Direction::MToN);
        assert!(s.validate(2).is_err());
        assert!(m.expect_direction(Direction::NToM).is_err());
    }
}

//! Training objectives with exact gradients.
//!
//! Throughout, `F` holds the features of shape M (one row per vertex) and `G`
//! those of shape N. All norms are squared Frobenius unless noted.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fmap::{
    distance_weight_backward, pairwise_distances, soft_correspondence_backward, softmax_neg_rows,
    Direction, FmapContext, PointMap,
};

/// Temperature used for the contrastive loss.
pub const NCE_TAU: f64 = 0.07;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub d_f: Option<DMatrix<f64>>,
    pub d_g: Option<DMatrix<f64>>,
    /// One gradient per functional-map argument, in argument order.
    pub d_c: Vec<DMatrix<f64>>,
}

impl LossValue {
    fn features(value: f64, d_f: DMatrix<f64>, d_g: DMatrix<f64>) -> LossValue {
        LossValue {
            value,
            d_f: Some(d_f),
            d_g: Some(d_g),
            d_c: Vec::new(),
        }
    }

    fn fmaps(value: f64, d_c: Vec<DMatrix<f64>>) -> LossValue {
        LossValue {
            value,
            d_f: None,
            d_g: None,
            d_c,
        }
    }
}

fn check_widths(f: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<()> {
    if f.ncols() != g.ncols() || f.nrows() == 0 || g.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "features {}x{} and {}x{}",
            f.nrows(),
            f.ncols(),
            g.nrows(),
            g.ncols()
        )));
    }
    Ok(())
}

fn gather_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

fn scatter_rows(into: &mut DMatrix<f64>, idx: &[usize], rows: &DMatrix<f64>) {
    for (r, &i) in idx.iter().enumerate() {
        let mut dst = into.row_mut(i);
        dst += rows.row(r);
    }
}

/// Contrastive loss over matched pairs `(i, j)`, averaged over pairs.
///
/// For each pair the logits are `−‖F_i − G_k‖² / τ` over the distinct second
/// components `k` of `pairs`, and the pair's own `j` is the positive.
pub fn nce_loss(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    pairs: &[(usize, usize)],
    tau: f64,
) -> Result<LossValue> {
    check_widths(f, g)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "nce_loss needs at least one pair".into(),
        ));
    }
    for &(i, j) in pairs {
        if i >= f.nrows() || j >= g.nrows() {
            return Err(Error::IndexOutOfRange {
                index: i.max(j),
                n_vertices: if i >= f.nrows() { f.nrows() } else { g.nrows() },
            });
        }
    }
    let mut cand: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    cand.sort_unstable();
    cand.dedup();
    let pos_col: Vec<usize> = pairs
        .iter()
        .map(|p| cand.binary_search(&p.1).expect("candidate present"))
        .collect();
    let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let fp = gather_rows(f, &rows);
    let gk = gather_rows(g, &cand);
    let d = pairwise_distances(&fp, &gk);
    let np = pairs.len() as f64;
    let mut value = 0.0;
    let mut e = DMatrix::zeros(pairs.len(), cand.len());
    for (r, &pc) in pos_col.iter().enumerate() {
        let logits: Vec<f64> = d.row(r).iter().map(|x| -x * x / tau).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let lse = m + z.ln();
        value += lse - logits[pc];
        for (c, l) in logits.iter().enumerate() {
            let p = (l - lse).exp();
            let dlogit = (p - if c == pc { 1.0 } else { 0.0 }) / np;
            // d(−‖F−G‖²/τ)/dF = −2(F−G)/τ
            e[(r, c)] = -2.0 * dlogit / tau;
        }
    }
    let (dfp, dgk) = distance_weight_backward(&fp, &gk, &e);
    let mut df = DMatrix::zeros(f.nrows(), f.ncols());
    let mut dg = DMatrix::zeros(g.nrows(), g.ncols());
    scatter_rows(&mut df, &rows, &dfp);
    scatter_rows(&mut dg, &cand, &dgk);
    Ok(LossValue::features(value / np, df, dg))
}

/// `‖S X − Π_gt X‖²` with `S = soft_correspondence(F, G)` (rows M, columns N),
/// `X` the n_N×3 coordinates of N and `gt` a hard map M → N.
pub fn lie_loss(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    coords: &DMatrix<f64>,
    gt: &PointMap,
) -> Result<LossValue> {
    check_widths(f, g)?;
    gt.expect_direction(Direction::MToN)?;
    let t = gt.hard()?;
    if t.len() != f.nrows() || coords.nrows() != g.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "map covers {} vertices for {} features; {} coordinates for {} features",
            t.len(),
            f.nrows(),
            coords.nrows(),
            g.nrows()
        )));
    }
    gt.validate(g.nrows())?;
    let s = softmax_neg_rows(&pairwise_distances(f, g));
    let mut r = &s * coords;
    r -= gather_rows(coords, t);
    let value = r.norm_squared();
    let ds = (&r * coords.transpose()) * 2.0;
    let (df, dg) = soft_correspondence_backward(f, g, &s, &ds);
    Ok(LossValue::features(value, df, dg))
}

/// Cycle loss on explicit soft maps, with gradients w.r.t. both matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCycle {
    pub value: f64,
    pub d_s_mn: DMatrix<f64>,
    pub d_s_nm: DMatrix<f64>,
}

/// `‖X_N − S_NM S_MN X_N‖²` for soft maps `S_MN` (n_M×n_N) and `S_NM` (n_N×n_M).
pub fn cycle_loss(
    s_mn: &DMatrix<f64>,
    s_nm: &DMatrix<f64>,
    x_n: &DMatrix<f64>,
) -> Result<SoftCycle> {
    if s_mn.ncols() != x_n.nrows() || s_nm.nrows() != x_n.nrows() || s_nm.ncols() != s_mn.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "S_MN {}x{}, S_NM {}x{}, X_N {}x{}",
            s_mn.nrows(),
            s_mn.ncols(),
            s_nm.nrows(),
            s_nm.ncols(),
            x_n.nrows(),
            x_n.ncols()
        )));
    }
    let y = s_mn * x_n;
    let mut r = s_nm * &y;
    r -= x_n;
    let value = r.norm_squared();
    let dz = r * 2.0;
    let d_s_nm = &dz * y.transpose();
    let dy = s_nm.tr_mul(&dz);
    let d_s_mn = dy * x_n.transpose();
    Ok(SoftCycle {
        value,
        d_s_mn,
        d_s_nm,
    })
}

/// [`cycle_loss`] with both soft maps built from features, differentiated
/// through to `F` and `G`.
pub fn cycle_loss_features(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    x_n: &DMatrix<f64>,
) -> Result<LossValue> {
    check_widths(f, g)?;
    let d = pairwise_distances(f, g);
    let s_mn = softmax_neg_rows(&d);
    let s_nm = softmax_neg_rows(&d.transpose());
    let cyc = cycle_loss(&s_mn, &s_nm, x_n)?;
    let (mut df, mut dg) = soft_correspondence_backward(f, g, &s_mn, &cyc.d_s_mn);
    let (dg2, df2) = soft_correspondence_backward(g, f, &s_nm, &cyc.d_s_nm);
    df += df2;
    dg += dg2;
    Ok(LossValue::features(cyc.value, df, dg))
}

/// `‖C_MN C_NM − I‖²`.
pub fn bijectivity_loss(c_mn: &DMatrix<f64>, c_nm: &DMatrix<f64>) -> Result<LossValue> {
    if !c_mn.is_square() || c_mn.shape() != c_nm.shape() {
        return Err(Error::DimensionMismatch(format!(
            "bijectivity needs equal square maps, got {:?} and {:?}",
            c_mn.shape(),
            c_nm.shape()
        )));
    }
    let k = c_mn.nrows();
    let r = c_mn * c_nm - DMatrix::identity(k, k);
    let value = r.norm_squared();
    let d_mn = (&r * c_nm.transpose()) * 2.0;
    let d_nm = c_mn.tr_mul(&r) * 2.0;
    Ok(LossValue::fmaps(value, vec![d_mn, d_nm]))
}

/// `‖CᵀC − I‖²`.
pub fn orthogonality_loss(c: &DMatrix<f64>) -> Result<LossValue> {
    if !c.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "orthogonality needs a square map, got {:?}",
            c.shape()
        )));
    }
    let k = c.ncols();
    let r = c.tr_mul(c) - DMatrix::identity(k, k);
    let value = r.norm_squared();
    // R is symmetric, so d/dC = 2C(R + Rᵀ) = 4CR.
    let d = (c * &r) * 4.0;
    Ok(LossValue::fmaps(value, vec![d]))
}

/// Symmetric chamfer distance between point sets (rows), with unsquared
/// Euclidean nearest distances. Returns the value and, for every row of each
/// set, the index of its nearest row in the other set.
pub fn chamfer_distance(p: &DMatrix<f64>, q: &DMatrix<f64>) -> (f64, Vec<usize>, Vec<usize>) {
    let d = pairwise_distances(p, q);
    let argmin = |it: &mut dyn Iterator<Item = f64>| {
        let mut best = (f64::INFINITY, 0);
        for (j, x) in it.enumerate() {
            if x < best.0 {
                best = (x, j);
            }
        }
        best
    };
    let mut value = 0.0;
    let mut p_to_q = Vec::with_capacity(p.nrows());
    for row in d.row_iter() {
        let (v, j) = argmin(&mut row.iter().copied());
        value += v;
        p_to_q.push(j);
    }
    let mut q_to_p = Vec::with_capacity(q.nrows());
    for col in d.column_iter() {
        let (v, i) = argmin(&mut col.iter().copied());
        value += v;
        q_to_p.push(i);
    }
    (value, p_to_q, q_to_p)
}

/// Chamfer distance between `Φ Φ† X` and `Φ C_NM C_MN Φ† X` on shape M, with
/// `Φ† = Φᵀ A`. Gradients hold the nearest-neighbour pairing fixed; the
/// returned `d_c` is `[dC_MN, dC_NM]`.
pub fn chamfer_spectral_loss(
    coords: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    mass: &[f64],
    c_mn: &DMatrix<f64>,
    c_nm: &DMatrix<f64>,
) -> Result<LossValue> {
    let (n, k) = phi.shape();
    if coords.nrows() != n
        || mass.len() != n
        || c_mn.ncols() != k
        || c_nm.nrows() != k
        || c_nm.ncols() != c_mn.nrows()
    {
        return Err(Error::DimensionMismatch(format!(
            "coords {}x{}, basis {n}x{k}, C_MN {:?}, C_NM {:?}",
            coords.nrows(),
            coords.ncols(),
            c_mn.shape(),
            c_nm.shape()
        )));
    }
    let mut weighted = coords.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= mass[i];
    }
    let y = phi.tr_mul(&weighted);
    let src = phi * &y;
    let cc = c_nm * c_mn;
    let tgt = phi * (&cc * &y);
    let (value, s_to_t, t_to_s) = chamfer_distance(&src, &tgt);
    let mut d_tgt = DMatrix::zeros(n, coords.ncols());
    let mut push = |ti: usize, si: usize| {
        let diff = tgt.row(ti) - src.row(si);
        let norm = diff.norm();
        if norm > 0.0 {
            let mut r = d_tgt.row_mut(ti);
            r += diff / norm;
        }
    };
    for (si, &ti) in s_to_t.iter().enumerate() {
        push(ti, si);
    }
    for (ti, &si) in t_to_s.iter().enumerate() {
        push(ti, si);
    }
    let d_cc = phi.tr_mul(&d_tgt) * y.transpose();
    let d_nm = &d_cc * c_mn.transpose();
    let d_mn = c_nm.tr_mul(&d_cc);
    Ok(LossValue::fmaps(value, vec![d_mn, d_nm]))
}

/// Adjoint of [`crate::fmap::solve_fmap`]: maps `dL/dC` to gradients w.r.t. the
/// spectral features `A` (k_M×d) and `B` (k_N×d).
pub fn fmap_backward(
    d_c: &DMatrix<f64>,
    ctx: &FmapContext,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if d_c.shape() != ctx.c.shape() || ctx.systems.len() != ctx.c.nrows() {
        return Err(Error::StaleCache(format!(
            "gradient is {:?} but the solve produced {:?}",
            d_c.shape(),
            ctx.c.shape()
        )));
    }
    let (kn, km) = ctx.c.shape();
    // Column i of Z solves Sys_i z_i = dL/dc_i.
    let mut z = DMatrix::zeros(km, kn);
    for (i, sys) in ctx.systems.iter().enumerate() {
        let zi = sys.solve(&d_c.row(i).transpose());
        z.column_mut(i).copy_from(&zi);
    }
    let a = &ctx.a_spec;
    let d_b = z.tr_mul(a);
    // Sys_i = A Aᵀ + diag: its gradient is −z_i c_iᵀ, summed over rows.
    let s = -(&z * &ctx.c);
    let d_a = &z * &ctx.b_spec + (&s + s.transpose()) * a;
    Ok((d_a, d_b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn nce_single_pair_is_zero() {
        let f = m(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let g = m(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        let l = nce_loss(&f, &g, &[(1, 0)], NCE_TAU).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn nce_identical_features_is_ln_n() {
        let n = 5;
        let f = DMatrix::from_element(n, 3, 0.3);
        let pairs: Vec<_> = (0..n).map(|i| (i, (i + 2) % n)).collect();
        let l = nce_loss(&f, &f, &pairs, NCE_TAU).unwrap();
        assert!((l.value - (n as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn nce_separated_features_near_zero() {
        let n = 4;
        let f = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 10.0 * i as f64 } else { 0.0 });
        let pairs: Vec<_> = (0..n).map(|i| (i, i)).collect();
        let l = nce_loss(&f, &f, &pairs, NCE_TAU).unwrap();
        assert!(l.value < 1e-3);
    }

    #[test]
    fn nce_rejects_bad_tau() {
        let f = DMatrix::zeros(2, 2);
        assert!(nce_loss(&f, &f, &[(0, 0)], 0.0).is_err());
        assert!(nce_loss(&f, &f, &[(0, 0)], -1.0).is_err());
    }

    #[test]
    fn lie_uniform_two_points() {
        let f = DMatrix::zeros(2, 3);
        let coords = m(2, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let gt = PointMap::identity(2, Direction::MToN);
        let l = lie_loss(&f, &f, &coords, &gt).unwrap();
        assert!((l.value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lie_direction_checked() {
        let f = DMatrix::zeros(2, 3);
        let gt = PointMap::identity(2, Direction::NToM);
        assert!(matches!(
            lie_loss(&f, &f, &f, &gt),
            Err(Error::DirectionMismatch { .. })
        ));
    }

    #[test]
    fn lie_separated_limit() {
        let f = DMatrix::from_fn(3, 1, |i, _| 100.0 * i as f64);
        let coords = m(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let gt = PointMap::identity(3, Direction::MToN);
        assert!(lie_loss(&f, &f, &coords, &gt).unwrap().value < 1e-30);
    }

    #[test]
    fn cycle_hand_cases() {
        let x = m(2, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let u = DMatrix::from_element(2, 2, 0.5);
        assert!((cycle_loss(&u, &u, &x).unwrap().value - 0.5).abs() < 1e-15);
        let p = m(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(cycle_loss(&p, &p, &x).unwrap().value, 0.0);
    }

    #[test]
    fn structural_losses_hand_cases() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(bijectivity_loss(&i3, &i3).unwrap().value, 0.0);
        assert_eq!(orthogonality_loss(&i3).unwrap().value, 0.0);
        let two = DMatrix::<f64>::identity(2, 2) * 2.0;
        assert_eq!(orthogonality_loss(&two).unwrap().value, 18.0);
        let perm = m(3, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(orthogonality_loss(&perm).unwrap().value, 0.0);
        assert!(orthogonality_loss(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn fmap_backward_zero() {
        let a = m(2, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, -0.5]);
        let b = m(2, 3, &[0.0, 1.0, 0.5, 1.0, 0.0, 0.5]);
        let sol = crate::fmap::solve_fmap(&a, &b, &[0.0, 1.0], &[0.0, 1.0], 0.1).unwrap();
        let (da, db) = fmap_backward(&DMatrix::zeros(2, 2), &sol.context).unwrap();
        assert_eq!(da.norm(), 0.0);
        assert_eq!(db.norm(), 0.0);
        assert!(matches!(
            fmap_backward(&DMatrix::zeros(3, 2), &sol.context),
            Err(Error::StaleCache(_))
        ));
    }
}

//! Few-shot keypoint detection: transfer labelled keypoints through
//! feature-space maps, reject those failing a cycle-consistency check, and
//! merge the survivors per keypoint id.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{snap_to_vertices, SurfaceMetric};
use crate::featnet::FeatureNet;
use crate::fmap::nearest_rows;
use crate::geometry::Shape;
use crate::spectral::SpectralBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Keypoint {
    pub id: u32,
    pub vertex: usize,
}

/// Keypoints on one shape, sorted by id; ids are unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeypointSet {
    pub shape_id: String,
    entries: Vec<Keypoint>,
}

impl KeypointSet {
    pub fn new(shape_id: impl Into<String>, mut entries: Vec<Keypoint>) -> Result<KeypointSet> {
        entries.sort();
        if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidArgument(format!(
                "duplicate keypoint id {}",
                w[0].id
            )));
        }
        Ok(KeypointSet {
            shape_id: shape_id.into(),
            entries,
        })
    }

    pub fn entries(&self) -> &[Keypoint] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|k| k.id)
    }

    pub fn vertex_of(&self, id: u32) -> Option<usize> {
        self.entries
            .binary_search_by_key(&id, |k| k.id)
            .ok()
            .map(|i| self.entries[i].vertex)
    }

    pub fn validate(&self, n_vertices: usize) -> Result<()> {
        match self.entries.iter().find(|k| k.vertex >= n_vertices) {
            Some(k) => Err(Error::IndexOutOfRange {
                index: k.vertex,
                n_vertices,
            }),
            None => Ok(()),
        }
    }
}

/// Header `keypoints <shape_id> <count>`, then `id vertex` lines.
pub fn format_keypoints(set: &KeypointSet) -> String {
    let id = if set.shape_id.is_empty() {
        "-"
    } else {
        &set.shape_id
    };
    let mut out = format!("keypoints {id} {}\n", set.len());
    for k in &set.entries {
        let _ = writeln!(out, "{} {}", k.id, k.vertex);
    }
    out
}

pub fn parse_keypoints(text: &str) -> Result<KeypointSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hl, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing keypoints header".into(),
    })?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 3 || h[0] != "keypoints" {
        return Err(Error::Parse {
            line: hl,
            msg: format!("expected 'keypoints <shape_id> <count>', got '{header}'"),
        });
    }
    let count: usize = h[2].parse().map_err(|_| Error::Parse {
        line: hl,
        msg: format!("bad keypoint count '{}'", h[2]),
    })?;
    let mut entries = Vec::with_capacity(count);
    for (ln, line) in lines {
        let mut it = line.split_whitespace();
        let parse = |t: Option<&str>| -> Result<usize> {
            t.and_then(|t| t.parse().ok()).ok_or(Error::Parse {
                line: ln,
                msg: format!("expected 'id vertex', got '{line}'"),
            })
        };
        let id = parse(it.next())?;
        let vertex = parse(it.next())?;
        let id = u32::try_from(id).map_err(|_| Error::Parse {
            line: ln,
            msg: format!("keypoint id {id} too large"),
        })?;
        entries.push(Keypoint { id, vertex });
    }
    if entries.len() != count {
        return Err(Error::Parse {
            line: hl,
            msg: format!(
                "header announces {count} keypoints, found {}",
                entries.len()
            ),
        });
    }
    let shape_id = if h[1] == "-" { "" } else { h[1] };
    KeypointSet::new(shape_id, entries)
}

pub fn write_keypoints(path: &Path, set: &KeypointSet) -> Result<()> {
    std::fs::write(path, format_keypoints(set)).map_err(|e| Error::io(path, e))
}

pub fn read_keypoints(path: &Path) -> Result<KeypointSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keypoints(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FskdParams {
    /// Cycle residual above which a transferred keypoint is dropped.
    pub nu: f64,
    /// Temperature of the combination weights.
    pub sigma: f64,
    pub n_sources: usize,
}

impl Default for FskdParams {
    fn default() -> Self {
        FskdParams {
            nu: 0.05,
            sigma: 0.01,
            n_sources: 3,
        }
    }
}

impl FskdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !(self.sigma > 0.0) || self.n_sources == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid FSKD parameters {self:?}"
            )));
        }
        Ok(())
    }
}

/// Greedy maximum coverage of keypoint ids. Candidates are visited in a
/// seeded random order, so ties go to whichever comes first in it.
pub fn select_sources(labeled: &[KeypointSet], n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > labeled.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot choose {n} sources among {}",
            labeled.len()
        )));
    }
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut covered = std::collections::BTreeSet::new();
    let mut chosen = Vec::with_capacity(n);
    while chosen.len() < n {
        let mut best: Option<(usize, usize)> = None;
        for &c in &order {
            if chosen.contains(&c) {
                continue;
            }
            let gain = labeled[c].ids().filter(|id| !covered.contains(id)).count();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((c, gain));
            }
        }
        let (c, _) = best.expect("candidates remain while chosen.len() < n");
        covered.extend(labeled[c].ids());
        chosen.push(c);
    }
    Ok(chosen)
}

/// Normalized weights `exp(−l_i/σ) / Σ_j exp(−l_j/σ)`.
pub fn combination_weights(residuals: &[f64], sigma: f64) -> Vec<f64> {
    let lo = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    let d: Vec<f64> = residuals
        .iter()
        .map(|l| (-(l - lo) / sigma).exp())
        .collect();
    let z: f64 = d.iter().sum();
    d.into_iter().map(|x| x / z).collect()
}

/// A labelled shape together with its feature embedding.
#[derive(Debug, Clone, Copy)]
pub struct FskdSource<'a> {
    pub shape: &'a Shape,
    pub features: &'a DMatrix<f64>,
    pub keypoints: &'a KeypointSet,
}

/// One transferred keypoint and its fate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: u32,
    pub source: usize,
    pub vertex: usize,
    pub residual: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FskdPrediction {
    pub keypoints: KeypointSet,
    pub candidates: Vec<Candidate>,
}

/// Cycle residual `‖x_v − x_{T_NM(T_MN(v))}‖²` on the source shape for a
/// transferred keypoint.
fn cycle_residual(src: &Shape, v: usize, back: usize) -> f64 {
    let (a, b) = (src.vertices()[v], src.vertices()[back]);
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum()
}

/// Keypoint prediction from precomputed features.
pub fn fskd_predict_features(
    sources: &[FskdSource<'_>],
    target: &Shape,
    target_features: &DMatrix<f64>,
    params: &FskdParams,
) -> Result<FskdPrediction> {
    params.validate()?;
    let mut candidates = Vec::new();
    for (si, s) in sources.iter().enumerate() {
        s.keypoints.validate(s.shape.n_vertices())?;
        if s.features.ncols() != target_features.ncols() {
            return Err(Error::DimensionMismatch("feature widths differ".into()));
        }
        let kp: Vec<usize> = s.keypoints.entries().iter().map(|k| k.vertex).collect();
        let query = DMatrix::from_fn(kp.len(), s.features.ncols(), |r, c| s.features[(kp[r], c)]);
        let forward = nearest_rows(&query, target_features);
        let landed = DMatrix::from_fn(kp.len(), s.features.ncols(), |r, c| {
            target_features[(forward[r], c)]
        });
        let back = nearest_rows(&landed, s.features);
        for (r, k) in s.keypoints.entries().iter().enumerate() {
            let residual = cycle_residual(s.shape, k.vertex, back[r]);
            candidates.push(Candidate {
                id: k.id,
                source: si,
                vertex: forward[r],
                residual,
                kept: residual <= params.nu,
            });
        }
    }
    let mut by_id: BTreeMap<u32, Vec<&Candidate>> = BTreeMap::new();
    for c in candidates.iter().filter(|c| c.kept) {
        by_id.entry(c.id).or_default().push(c);
    }
    let x = target.vertices();
    let mut out = Vec::with_capacity(by_id.len());
    for (id, group) in by_id {
        let vertex = if group.len() == 1 {
            group[0].vertex
        } else {
            let l: Vec<f64> = group.iter().map(|c| c.residual).collect();
            let w = combination_weights(&l, params.sigma);
            let mut p = [0.0; 3];
            for (c, wi) in group.iter().zip(&w) {
                for d in 0..3 {
                    p[d] += wi * x[c.vertex][d];
                }
            }
            snap_to_vertices(target, &[p])[0]
        };
        out.push(Keypoint { id, vertex });
    }
    Ok(FskdPrediction {
        keypoints: KeypointSet::new(target.id.clone(), out)?,
        candidates,
    })
}

/// Keypoints on `target` transferred from labelled sources through the
/// nearest-neighbour maps of `net`'s features.
pub fn fskd_predict(
    sources: &[(&Shape, &SpectralBasis, &KeypointSet)],
    target: (&Shape, &SpectralBasis),
    net: &FeatureNet,
    params: &FskdParams,
) -> Result<FskdPrediction> {
    let feats = sources
        .iter()
        .map(|(s, b, _)| net.forward(s, b).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<FskdSource<'_>> = sources
        .iter()
        .zip(&feats)
        .map(|((s, _, k), f)| FskdSource {
            shape: s,
            features: f,
            keypoints: k,
        })
        .collect();
    let (tf, _) = net.forward(target.0, target.1)?;
    fskd_predict_features(&views, target.0, &tf, params)
}

/// IoU of keypoint sets: a prediction counts as matched when its nearest
/// ground-truth keypoint lies within `threshold`.
pub fn keypoint_miou(
    pred: &KeypointSet,
    gt: &KeypointSet,
    metric: &SurfaceMetric,
    threshold: f64,
) -> f64 {
    let inter = pred
        .entries()
        .iter()
        .filter(|p| {
            gt.entries()
                .iter()
                .map(|g| metric.dist(g.vertex, p.vertex))
                .fold(f64::INFINITY, f64::min)
                < threshold
        })
        .count();
    let union = pred.len() + gt.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

//! Shape loading and the per-shape basis cache.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use ncp_core::geometry::normalize;
use ncp_core::mesh_io::load_shape;
use ncp_core::pipeline::{shape_laplacian, synthetic_shapes, Collection, PreparedShape};
use ncp_core::spectral::{
    content_hash, eigenbasis, read_basis_cache, shape_hash, write_basis_cache,
};
use ncp_core::Shape;

use crate::config::{expand_globs, GroundTruth, RunConfig};
use crate::error::{CliError, CliResult};

/// A normalized shape before spectral preprocessing.
#[derive(Debug, Clone)]
pub struct ShapeSource {
    pub shape: Shape,
    pub canonical: Option<Vec<usize>>,
    /// Hash of the file bytes, or of the generated geometry.
    pub source_hash: String,
}

fn read_vts(path: &Path, n: usize) -> CliResult<Vec<usize>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let idx = text
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    if idx.len() != n {
        return Err(CliError::Runtime(format!(
            "{}: {} indices for {n} vertices",
            path.display(),
            idx.len()
        )));
    }
    Ok(idx)
}

/// Loads and normalizes one shape file.
pub fn load_file(path: &Path, gt: GroundTruth) -> CliResult<ShapeSource> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let shape = normalize(&load_shape(path)?)?;
    let canonical = match gt {
        GroundTruth::None => None,
        GroundTruth::Identity => Some((0..shape.n_vertices()).collect()),
        GroundTruth::Vts => Some(read_vts(&path.with_extension("vts"), shape.n_vertices())?),
    };
    Ok(ShapeSource {
        shape,
        canonical,
        source_hash: content_hash(&bytes),
    })
}

/// Input files named by the configuration, in sorted order.
pub fn input_files(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let files = expand_globs(&cfg.data.inputs, "data.inputs")?;
    let mut seen = BTreeSet::new();
    for f in &files {
        let stem = f
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !seen.insert(stem.clone()) {
            return Err(CliError::Validation(format!(
                "two input files share the shape id '{stem}'"
            )));
        }
    }
    Ok(files)
}

/// Every shape of the configuration; `Err` entries are per-input failures
/// labelled by file name.
pub fn load_each(cfg: &RunConfig) -> CliResult<Vec<(String, CliResult<ShapeSource>)>> {
    if let Some(s) = &cfg.data.synthetic {
        let shapes = synthetic_shapes(s.kind, s.n_target, s.n_shapes, s.magnitude, cfg.seed)?;
        return Ok(shapes
            .into_iter()
            .map(|(shape, order)| {
                let src = ShapeSource {
                    source_hash: shape_hash(&shape),
                    canonical: Some(order),
                    shape,
                };
                (src.shape.id.clone(), Ok(src))
            })
            .collect());
    }
    Ok(input_files(cfg)?
        .into_iter()
        .map(|p| (p.display().to_string(), load_file(&p, cfg.data.gt)))
        .collect())
}

pub fn load_all(cfg: &RunConfig) -> CliResult<Vec<ShapeSource>> {
    load_each(cfg)?.into_iter().map(|(_, r)| r).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Built,
    Cached,
}

impl fmt::Display for CacheStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CacheStatus::Built => "built",
            CacheStatus::Cached => "cached",
        })
    }
}

pub fn cache_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.basis"))
}

/// Laplacian and basis of `src`, reusing the cache when it was built from
/// the same source with the same basis size.
pub fn prepare(
    src: &ShapeSource,
    k: usize,
    cache_dir: &Path,
) -> CliResult<(PreparedShape, CacheStatus)> {
    let lap = shape_laplacian(&src.shape)?;
    let k = k.min(src.shape.n_vertices());
    let path = cache_path(cache_dir, &src.shape.id);
    let cached = match read_basis_cache(&path) {
        Ok((basis, hash))
            if hash == src.source_hash && basis.k() == k && basis.n() == src.shape.n_vertices() =>
        {
            Some(basis)
        }
        Ok(_) => None,
        Err(e) => {
            if path.exists() {
                log::warn!("ignoring unreadable cache {}: {e}", path.display());
            }
            None
        }
    };
    let (basis, status) = match cached {
        Some(b) => (b, CacheStatus::Cached),
        None => {
            let basis = eigenbasis(&lap, k)?;
            std::fs::create_dir_all(cache_dir).map_err(|e| {
                CliError::Runtime(format!("cannot create {}: {e}", cache_dir.display()))
            })?;
            let tmp = path.with_extension("basis.tmp");
            write_basis_cache(&tmp, &basis, &src.source_hash)?;
            std::fs::rename(&tmp, &path)
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
            (basis, CacheStatus::Built)
        }
    };
    let shape = PreparedShape {
        shape: src.shape.clone(),
        lap,
        basis,
        canonical: None,
    };
    let shape = match &src.canonical {
        Some(c) => shape.with_canonical(c.clone())?,
        None => shape,
    };
    Ok((shape, status))
}

/// All shapes, prepared through the cache.
pub fn prepare_all(cfg: &RunConfig) -> CliResult<Vec<PreparedShape>> {
    let dir = cfg.cache_dir();
    load_all(cfg)?
        .iter()
        .map(|s| prepare(s, cfg.train.basis_size(), &dir).map(|r| r.0))
        .collect()
}

pub fn index_of(shapes: &[PreparedShape], id: &str) -> CliResult<usize> {
    shapes
        .iter()
        .position(|s| s.id() == id)
        .ok_or_else(|| CliError::Validation(format!("no shape with id '{id}'")))
}

/// The collection with the configured split, or a transductive one.
pub fn collection(cfg: &RunConfig, shapes: Vec<PreparedShape>) -> CliResult<Collection> {
    if cfg.data.train.is_empty() && cfg.data.test.is_empty() {
        return Ok(Collection::transductive(shapes)?);
    }
    let ids = |v: &[String]| {
        v.iter()
            .map(|id| index_of(&shapes, id))
            .collect::<CliResult<Vec<_>>>()
    };
    let (train, test) = (ids(&cfg.data.train)?, ids(&cfg.data.test)?);
    Collection::new(shapes, train, test)
        .map_err(|e| CliError::Validation(format!("[data] split: {e}")))
}

/// Pair of shape indices named by optional ids, defaulting to the first two.
pub fn pick_pair(
    shapes: &[PreparedShape],
    m: Option<&str>,
    n: Option<&str>,
) -> CliResult<(usize, usize)> {
    let i = m.map_or(Ok(0), |id| index_of(shapes, id))?;
    let j = match n {
        Some(id) => index_of(shapes, id)?,
        None => usize::from(i == 0),
    };
    if i == j || shapes.len() < 2 {
        return Err(CliError::Validation(
            "a pair of two distinct shapes is required".into(),
        ));
    }
    Ok((i, j))
}

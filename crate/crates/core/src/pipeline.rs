//! Two-stage unsupervised matching: a structurally regularized functional-map
//! network (stage 1) whose predicted maps supervise a freshly initialized
//! network (stage 2), plus single-pair test-time denoising and the
//! corrupted-supervision demonstration.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    corrupt_map, geodesic_error_with, map_smoothness, EvalRecord, EvalReport, SurfaceMetric,
};
use crate::featnet::{adam_step, AdamConfig, Arch, FeatureNet, ForwardCache, OptimState};
use crate::fmap::{fmap_to_p2p, nearest_rows, nn_map, solve_fmap, Direction, PointMap};
use crate::geometry::{augment_with, AugmentParams, Shape};
use crate::losses::{
    bijectivity_loss, chamfer_spectral_loss, fmap_backward, lie_loss, nce_loss, orthogonality_loss,
};
use crate::spectral::{
    cotan_laplacian, eigenbasis, pointcloud_laplacian, LaplacianPair, SpectralBasis,
};
use crate::synth::{synth_base, synth_deform, SynthKind};

/// Neighbourhood size of the point-cloud Laplacian.
pub const POINTCLOUD_KNN: usize = 10;

/// A shape with its Laplacian and spectral basis.
#[derive(Debug, Clone)]
pub struct PreparedShape {
    pub shape: Shape,
    pub lap: LaplacianPair,
    pub basis: SpectralBasis,
    /// Index of each vertex in a shared template, when known.
    pub canonical: Option<Vec<usize>>,
}

/// Laplacian of a mesh, or a kNN graph Laplacian for a point cloud with the
/// bandwidth set to the mean distance to the `POINTCLOUD_KNN`-th neighbour.
pub fn shape_laplacian(shape: &Shape) -> Result<LaplacianPair> {
    if shape.is_mesh() {
        return cotan_laplacian(shape);
    }
    let k = POINTCLOUD_KNN.min(shape.n_vertices() - 1);
    let coords = shape.coords();
    let mut total = 0.0;
    for i in 0..shape.n_vertices() {
        let mut d: Vec<f64> = (0..shape.n_vertices())
            .filter(|&j| j != i)
            .map(|j| (coords.row(i) - coords.row(j)).norm())
            .collect();
        d.select_nth_unstable_by(k - 1, f64::total_cmp);
        total += d[k - 1];
    }
    pointcloud_laplacian(shape, k, total / shape.n_vertices() as f64)
}

impl PreparedShape {
    pub fn new(shape: Shape, k: usize) -> Result<PreparedShape> {
        let lap = shape_laplacian(&shape)?;
        let basis = eigenbasis(&lap, k.min(shape.n_vertices()))?;
        Ok(PreparedShape {
            shape,
            lap,
            basis,
            canonical: None,
        })
    }

    pub fn with_canonical(mut self, canonical: Vec<usize>) -> Result<PreparedShape> {
        if canonical.len() != self.shape.n_vertices() {
            return Err(Error::DimensionMismatch(
                "canonical index per vertex required".into(),
            ));
        }
        self.canonical = Some(canonical);
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.shape.id
    }
}

/// Shapes with train and test pairings. Pairs are unordered `(i, j)`, `i < j`.
#[derive(Debug, Clone)]
pub struct Collection {
    pub shapes: Vec<PreparedShape>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_pairs: Vec<(usize, usize)>,
    pub test_pairs: Vec<(usize, usize)>,
}

fn all_pairs(idx: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            out.push((i.min(j), i.max(j)));
        }
    }
    out
}

impl Collection {
    /// Disjoint train and test shape sets; pairs are all pairs within each.
    pub fn new(
        shapes: Vec<PreparedShape>,
        train: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Collection> {
        for &i in train.iter().chain(&test) {
            if i >= shapes.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    n_vertices: shapes.len(),
                });
            }
        }
        if let Some(i) = train.iter().find(|i| test.contains(i)) {
            return Err(Error::InvalidArgument(format!(
                "shape {i} is in both train and test"
            )));
        }
        if train.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least two train shapes".into(),
            ));
        }
        Ok(Collection {
            train_pairs: all_pairs(&train),
            test_pairs: all_pairs(&test),
            shapes,
            train,
            test,
        })
    }

    /// Trains and evaluates on the same shapes (no held-out split).
    pub fn transductive(shapes: Vec<PreparedShape>) -> Result<Collection> {
        if shapes.len() < 2 {
            return Err(Error::InvalidArgument("need at least two shapes".into()));
        }
        log::warn!("collection evaluates on its training pairs (train = test)");
        let idx: Vec<usize> = (0..shapes.len()).collect();
        let pairs = all_pairs(&idx);
        Ok(Collection {
            shapes,
            train: idx.clone(),
            test: idx,
            train_pairs: pairs.clone(),
            test_pairs: pairs,
        })
    }

    /// Seeded near-isometric collection: a base shape and deformations of it,
    /// each with its vertices shuffled, with template indices recorded.
    pub fn synthetic(
        kind: SynthKind,
        n_target: usize,
        n_shapes: usize,
        magnitude: f64,
        k: usize,
        seed: u64,
    ) -> Result<Vec<PreparedShape>> {
        synthetic_shapes(kind, n_target, n_shapes, magnitude, seed)?
            .into_iter()
            .map(|(shape, order)| PreparedShape::new(shape, k)?.with_canonical(order))
            .collect()
    }

    pub fn shape(&self, i: usize) -> &PreparedShape {
        &self.shapes[i]
    }

    /// Ground-truth map `i → j` from template indices, when both are known and
    /// every template vertex of `i` exists on `j`.
    pub fn gt_map(&self, i: usize, j: usize) -> Option<PointMap> {
        template_map(&self.shapes[i], &self.shapes[j])
    }

    pub fn pair_id(&self, (i, j): (usize, usize)) -> String {
        format!("{}__{}", self.shapes[i].id(), self.shapes[j].id())
    }
}

/// Map `m → n` matching equal template indices, when both shapes have them
/// and every template vertex of `m` exists on `n`.
pub fn template_map(m: &PreparedShape, n: &PreparedShape) -> Option<PointMap> {
    let (cm, cn) = (m.canonical.as_ref()?, n.canonical.as_ref()?);
    let size = cn.iter().chain(cm).max()? + 1;
    let mut inv = vec![usize::MAX; size];
    for (v, &c) in cn.iter().enumerate() {
        inv[c] = v;
    }
    let image: Option<Vec<usize>> = cm
        .iter()
        .map(|&c| (inv[c] != usize::MAX).then_some(inv[c]))
        .collect();
    Some(PointMap::from_hard(image?, Direction::MToN).with_ids(m.id(), n.id()))
}

/// Shapes of `Collection::synthetic` with their template indices, before any
/// spectral preprocessing.
pub fn synthetic_shapes(
    kind: SynthKind,
    n_target: usize,
    n_shapes: usize,
    magnitude: f64,
    seed: u64,
) -> Result<Vec<(Shape, Vec<usize>)>> {
    let base = synth_base(kind, n_target, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a11);
    (0..n_shapes)
        .map(|s| {
            let shape = if s == 0 {
                base.clone()
            } else {
                synth_deform(kind, &base, magnitude, seed.wrapping_add(1000 + s as u64))?
            };
            let mut order: Vec<usize> = (0..shape.n_vertices()).collect();
            shuffle(&mut order, &mut rng);
            let shape = shape
                .permuted(&order)?
                .with_id(format!("{}_{seed}_{s}", kind_name(kind)));
            Ok((shape, order))
        })
        .collect()
}

fn kind_name(kind: SynthKind) -> &'static str {
    match kind {
        SynthKind::BentCylinder => "bent_cylinder",
        SynthKind::BumpySphere => "bumpy_sphere",
        SynthKind::StretchedGrid => "stretched_grid",
    }
}

fn shuffle(v: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Loss {
    #[default]
    Lie,
    Nce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    Nn,
    #[default]
    Fmap,
}

impl FromStr for Stage2Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lie" => Ok(Stage2Loss::Lie),
            "nce" => Ok(Stage2Loss::Nce),
            other => Err(Error::InvalidArgument(format!("unknown loss '{other}'"))),
        }
    }
}

impl FromStr for Extraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(Extraction::Nn),
            "fmap" => Ok(Extraction::Fmap),
            other => Err(Error::InvalidArgument(format!(
                "unknown extraction '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub n_iters_stage1: usize,
    pub n_iters_stage2: usize,
    /// Iterations per noise level in the demonstration.
    pub n_iters_demo: usize,
    /// Basis size of the functional maps.
    pub k: usize,
    /// Basis size used by the network's diffusion layers.
    pub k_net: usize,
    pub lambda: f64,
    pub tau: f64,
    pub stage2_loss: Stage2Loss,
    pub extraction: Extraction,
    pub patience: usize,
    pub max_iters_denoise: usize,
    pub log_every: usize,
    pub w_bij: f64,
    pub w_orth: f64,
    pub w_chamfer: f64,
    pub arch: Arch,
    pub augment: AugmentParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            n_iters_stage1: 800,
            n_iters_stage2: 800,
            n_iters_demo: 800,
            k: 30,
            k_net: 64,
            lambda: 0.0,
            tau: crate::losses::NCE_TAU,
            stage2_loss: Stage2Loss::Lie,
            extraction: Extraction::Fmap,
            patience: 100,
            max_iters_denoise: 3000,
            log_every: 10,
            w_bij: 1.0,
            w_orth: 1.0,
            w_chamfer: 1.0,
            arch: Arch::desk(),
            augment: AugmentParams {
                rotate: false,
                scale_range: [0.9, 1.1],
                jitter_std: 0.005,
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if self.k == 0 || self.k_net == 0 {
            return bad("basis sizes must be positive");
        }
        if self.patience == 0 || self.max_iters_denoise == 0 || self.log_every == 0 {
            return bad("patience, max_iters_denoise and log_every must be >= 1");
        }
        if [self.w_bij, self.w_orth, self.w_chamfer]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return bad("loss weights must be >= 0");
        }
        self.arch.validate()?;
        self.augment.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Basis size to compute when preparing shapes for this configuration.
    pub fn basis_size(&self) -> usize {
        self.k.max(self.k_net)
    }
}

/// Decorrelated child seed.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Stage1,
    Stage2,
    Denoised,
    Gt,
    Corrupted,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Stage1 => "stage1",
            Provenance::Stage2 => "stage2",
            Provenance::Denoised => "denoised",
            Provenance::Gt => "gt",
            Provenance::Corrupted => "corrupted",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    pub pair: (usize, usize),
    pub provenance: Provenance,
    /// `MToN` maps go from `pair.0` to `pair.1`; `NToM` maps the other way.
    pub map: PointMap,
}

/// At most one map per pair and provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapSet {
    entries: Vec<MapEntry>,
}

impl MapSet {
    pub fn insert(&mut self, entry: MapEntry) {
        match self
            .entries
            .iter_mut()
            .find(|e| e.pair == entry.pair && e.provenance == entry.provenance)
        {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn get(&self, pair: (usize, usize), provenance: Provenance) -> Option<&MapEntry> {
        self.entries
            .iter()
            .find(|e| e.pair == pair && e.provenance == provenance)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MapEntry> {
        self.entries.iter()
    }

    pub fn with_provenance(&self, provenance: Provenance) -> impl Iterator<Item = &MapEntry> {
        self.entries
            .iter()
            .filter(move |e| e.provenance == provenance)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: MapSet) {
        for e in other.entries {
            self.insert(e);
        }
    }
}

impl MapEntry {
    /// `(domain, codomain)` shape indices of the map.
    pub fn oriented(&self) -> (usize, usize) {
        match self.map.direction {
            Direction::MToN => self.pair,
            Direction::NToM => (self.pair.1, self.pair.0),
        }
    }
}

/// Per-shape data reused by every training iteration.
struct ShapeCache {
    net_basis: SpectralBasis,
    /// `Φᵀ A` for the functional-map basis.
    pinv: DMatrix<f64>,
    /// `A Φ` (the transpose of `pinv`), mapping spectral gradients back.
    pinv_t: DMatrix<f64>,
    evals: Vec<f64>,
    fmap_basis: SpectralBasis,
    coords: DMatrix<f64>,
}

impl ShapeCache {
    fn new(p: &PreparedShape, cfg: &TrainConfig) -> Result<ShapeCache> {
        let kb = p.basis.k();
        if kb < cfg.k || kb < cfg.k_net.min(p.shape.n_vertices()) {
            return Err(Error::DimensionMismatch(format!(
                "shape '{}' has {kb} basis functions, configuration needs {}",
                p.id(),
                cfg.basis_size()
            )));
        }
        let fmap_basis = p.basis.truncated(cfg.k);
        let pinv = fmap_basis.pinv();
        Ok(ShapeCache {
            net_basis: p.basis.truncated(cfg.k_net.min(kb)),
            pinv_t: pinv.transpose(),
            evals: fmap_basis.evals.iter().copied().collect(),
            pinv,
            fmap_basis,
            coords: p.shape.coords(),
        })
    }
}

fn caches(shapes: &[PreparedShape], cfg: &TrainConfig) -> Result<Vec<ShapeCache>> {
    shapes.iter().map(|p| ShapeCache::new(p, cfg)).collect()
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn check_finite(value: f64, iteration: usize, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration,
            msg: format!("{what} loss is {value}"),
        })
    }
}

fn forward_augmented(
    net: &FeatureNet,
    p: &PreparedShape,
    c: &ShapeCache,
    augment: &AugmentParams,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, ForwardCache)> {
    let shape = augment_with(&p.shape, augment, rng);
    net.forward(&shape, &c.net_basis)
}

/// Features of every shape under `net`, without augmentation.
pub fn embed_all(
    net: &FeatureNet,
    shapes: &[PreparedShape],
    cfg: &TrainConfig,
) -> Result<Vec<DMatrix<f64>>> {
    shapes
        .iter()
        .map(|p| {
            let basis = p.basis.truncated(cfg.k_net.min(p.basis.k()));
            net.forward(&p.shape, &basis).map(|r| r.0)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: FeatureNet,
    /// Loss of every iteration.
    pub losses: Vec<f64>,
}

struct StructuralStep {
    value: f64,
    d_f: DMatrix<f64>,
    d_g: DMatrix<f64>,
}

/// Stage-1 objective on one pair of feature matrices and its gradients.
fn structural_step(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    cm: &ShapeCache,
    cn: &ShapeCache,
    point_clouds: bool,
    cfg: &TrainConfig,
) -> Result<StructuralStep> {
    let a = &cm.pinv * f;
    let b = &cn.pinv * g;
    let s_mn = solve_fmap(&a, &b, &cm.evals, &cn.evals, cfg.lambda)?;
    let s_nm = solve_fmap(&b, &a, &cn.evals, &cm.evals, cfg.lambda)?;
    let (c_mn, c_nm) = (&s_mn.map.c, &s_nm.map.c);
    let mut value = 0.0;
    let mut d_mn = DMatrix::zeros(c_mn.nrows(), c_mn.ncols());
    let mut d_nm = DMatrix::zeros(c_nm.nrows(), c_nm.ncols());
    if cfg.w_bij > 0.0 {
        let l1 = bijectivity_loss(c_mn, c_nm)?;
        let l2 = bijectivity_loss(c_nm, c_mn)?;
        value += cfg.w_bij * (l1.value + l2.value);
        d_mn += (&l1.d_c[0] + &l2.d_c[1]) * cfg.w_bij;
        d_nm += (&l1.d_c[1] + &l2.d_c[0]) * cfg.w_bij;
    }
    if cfg.w_orth > 0.0 {
        let o1 = orthogonality_loss(c_mn)?;
        let o2 = orthogonality_loss(c_nm)?;
        value += cfg.w_orth * (o1.value + o2.value);
        d_mn += &o1.d_c[0] * cfg.w_orth;
        d_nm += &o2.d_c[0] * cfg.w_orth;
    }
    if point_clouds && cfg.w_chamfer > 0.0 {
        let mass_m: Vec<f64> = cm.fmap_basis.mass.iter().copied().collect();
        let mass_n: Vec<f64> = cn.fmap_basis.mass.iter().copied().collect();
        let h1 = chamfer_spectral_loss(&cm.coords, &cm.fmap_basis.phi, &mass_m, c_mn, c_nm)?;
        let h2 = chamfer_spectral_loss(&cn.coords, &cn.fmap_basis.phi, &mass_n, c_nm, c_mn)?;
        value += cfg.w_chamfer * (h1.value + h2.value);
        d_mn += (&h1.d_c[0] + &h2.d_c[1]) * cfg.w_chamfer;
        d_nm += (&h1.d_c[1] + &h2.d_c[0]) * cfg.w_chamfer;
    }
    let (da1, db1) = fmap_backward(&d_mn, &s_mn.context)?;
    let (db2, da2) = fmap_backward(&d_nm, &s_nm.context)?;
    Ok(StructuralStep {
        value,
        d_f: &cm.pinv_t * (da1 + da2),
        d_g: &cn.pinv_t * (db1 + db2),
    })
}

/// Unsupervised training with bijectivity and orthogonality of the functional
/// maps (plus the spectral chamfer term on point clouds).
pub fn stage1_train(collection: &Collection, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if collection.train_pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "stage 1 needs at least one train pair".into(),
        ));
    }
    let cache = caches(&collection.shapes, cfg)?;
    let mut net = FeatureNet::init_random(cfg.arch, sub_seed(cfg.seed, 1))?;
    let mut opt = OptimState::new(net.params().len(), cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 2));
    let mut losses = Vec::with_capacity(cfg.n_iters_stage1);
    for it in 0..cfg.n_iters_stage1 {
        let (i, j) = collection.train_pairs[rng.random_range(0..collection.train_pairs.len())];
        let (pm, pn) = (&collection.shapes[i], &collection.shapes[j]);
        let (f, cf) = forward_augmented(&net, pm, &cache[i], &cfg.augment, &mut rng)?;
        let (g, cg) = forward_augmented(&net, pn, &cache[j], &cfg.augment, &mut rng)?;
        let clouds = !pm.shape.is_mesh() || !pn.shape.is_mesh();
        let step = structural_step(&f, &g, &cache[i], &cache[j], clouds, cfg)?;
        check_finite(step.value, it, "stage 1")?;
        let (mut grads, _) = net.backward(&cache[i].net_basis, &cf, &step.d_f)?;
        let (gg, _) = net.backward(&cache[j].net_basis, &cg, &step.d_g)?;
        add_into(&mut grads, &gg);
        adam_step(&mut net, &grads, &mut opt)?;
        losses.push(step.value);
    }
    Ok(TrainOutcome { net, losses })
}

/// Maps for `pairs` from a trained stage-1 network.
///
/// In `fmap` mode the map for `(i, j)` is the pointwise conversion of `C_ij`
/// and runs `j → i`; in `nn` mode it is the nearest-neighbour map `i → j`.
pub fn stage1_predict(
    net: &FeatureNet,
    collection: &Collection,
    pairs: &[(usize, usize)],
    cfg: &TrainConfig,
) -> Result<MapSet> {
    let cache = caches(&collection.shapes, cfg)?;
    let feats = embed_all(net, &collection.shapes, cfg)?;
    let mut out = MapSet::default();
    for &(i, j) in pairs {
        let (im, jn) = (collection.shapes[i].id(), collection.shapes[j].id());
        let map = match cfg.extraction {
            Extraction::Nn => nn_map(&feats[i], &feats[j], Direction::MToN)?,
            Extraction::Fmap => {
                let a = &cache[i].pinv * &feats[i];
                let b = &cache[j].pinv * &feats[j];
                let sol = solve_fmap(&a, &b, &cache[i].evals, &cache[j].evals, cfg.lambda)?;
                fmap_to_p2p(&sol.map, &cache[i].fmap_basis.phi, &cache[j].fmap_basis.phi)?
            }
        };
        out.insert(MapEntry {
            pair: (i, j),
            provenance: Provenance::Stage1,
            map: map.with_ids(im, jn),
        });
    }
    Ok(out)
}

/// One supervised step on a hard map `dom → cod`; returns the loss value and
/// parameter gradients.
#[allow(clippy::too_many_arguments)]
fn supervised_step(
    net: &FeatureNet,
    shapes: &[PreparedShape],
    cache: &[ShapeCache],
    dom: usize,
    cod: usize,
    image: &[usize],
    loss: Stage2Loss,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    let (f, cf) = forward_augmented(net, &shapes[dom], &cache[dom], &cfg.augment, rng)?;
    let (g, cg) = forward_augmented(net, &shapes[cod], &cache[cod], &cfg.augment, rng)?;
    let l = match loss {
        Stage2Loss::Lie => {
            let gt = PointMap::from_hard(image.to_vec(), Direction::MToN);
            lie_loss(&f, &g, &cache[cod].coords, &gt)?
        }
        Stage2Loss::Nce => {
            let pairs: Vec<(usize, usize)> = image.iter().copied().enumerate().collect();
            nce_loss(&f, &g, &pairs, cfg.tau)?
        }
    };
    let d_f = l.d_f.as_ref().expect("feature loss has dF");
    let d_g = l.d_g.as_ref().expect("feature loss has dG");
    let (mut grads, _) = net.backward(&cache[dom].net_basis, &cf, d_f)?;
    let (gg, _) = net.backward(&cache[cod].net_basis, &cg, d_g)?;
    add_into(&mut grads, &gg);
    Ok((l.value, grads))
}

/// Trains a freshly initialized network to reproduce `maps` (used as ground
/// truth) with the configured pointwise loss.
pub fn stage2_train(
    collection: &Collection,
    maps: &[&MapEntry],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if maps.is_empty() {
        return Err(Error::InvalidArgument(
            "stage 2 needs at least one supervising map".into(),
        ));
    }
    let cache = caches(&collection.shapes, cfg)?;
    let oriented: Vec<(usize, usize, &[usize])> = maps
        .iter()
        .map(|e| {
            let (d, c) = e.oriented();
            let t = e.map.hard()?;
            e.map.validate(collection.shapes[c].shape.n_vertices())?;
            if t.len() != collection.shapes[d].shape.n_vertices() {
                return Err(Error::DimensionMismatch(format!(
                    "map for pair {:?} does not cover its domain",
                    e.pair
                )));
            }
            Ok((d, c, t))
        })
        .collect::<Result<_>>()?;
    let mut net = FeatureNet::init_random(cfg.arch, sub_seed(cfg.seed, 3))?;
    let mut opt = OptimState::new(net.params().len(), cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 4));
    let mut losses = Vec::with_capacity(cfg.n_iters_stage2);
    for it in 0..cfg.n_iters_stage2 {
        let (d, c, t) = oriented[rng.random_range(0..oriented.len())];
        let (value, grads) = supervised_step(
            &net,
            &collection.shapes,
            &cache,
            d,
            c,
            t,
            cfg.stage2_loss,
            cfg,
            &mut rng,
        )?;
        check_finite(value, it, "stage 2")?;
        adam_step(&mut net, &grads, &mut opt)?;
        losses.push(value);
    }
    Ok(TrainOutcome { net, losses })
}

/// Geodesic error (×100) and smoothness of a map entry against the
/// collection's ground truth, if known.
pub fn score_entry(collection: &Collection, entry: &MapEntry) -> Result<Option<(f64, f64)>> {
    let (d, c) = entry.oriented();
    let Some(gt) = collection.gt_map(d, c) else {
        return Ok(None);
    };
    let map = PointMap::from_hard(entry.map.hard()?.to_vec(), Direction::MToN);
    let cod = &collection.shapes[c].shape;
    let metric = SurfaceMetric::for_sources(cod, gt.hard()?)?;
    let err = geodesic_error_with(&map, &gt, &metric)?;
    let smooth = if collection.shapes[d].shape.is_mesh() {
        map_smoothness(&map, &collection.shapes[d].shape, cod)?
    } else {
        f64::NAN
    };
    Ok(Some((err, smooth)))
}

/// Report rows for every entry with known ground truth, in entry order.
pub fn score_maps(collection: &Collection, maps: &MapSet) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for e in maps.iter() {
        if let Some((err, smooth)) = score_entry(collection, e)? {
            report.records.push(EvalRecord {
                pair_id: collection.pair_id(e.pair),
                provenance: e.provenance.to_string(),
                geodesic_error: err,
                smoothness: smooth.is_finite().then_some(smooth),
                iou: None,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct NcpOutcome {
    pub stage1: TrainOutcome,
    pub stage2: TrainOutcome,
    /// Stage-1 maps on train pairs (the stage-2 supervision).
    pub train_maps: MapSet,
    /// Stage-1 and stage-2 maps on test pairs.
    pub test_maps: MapSet,
    pub report: EvalReport,
}

/// Full two-stage run: stage-1 training and prediction on train pairs,
/// stage-2 training on those maps, and nearest-neighbour test maps from the
/// stage-2 network alongside the stage-1 test maps for comparison.
pub fn ncp_un(collection: &Collection, cfg: &TrainConfig) -> Result<NcpOutcome> {
    cfg.validate()?;
    let stage1 = stage1_train(collection, cfg)?;
    let train_maps = stage1_predict(&stage1.net, collection, &collection.train_pairs, cfg)?;
    let supervision: Vec<&MapEntry> = train_maps.with_provenance(Provenance::Stage1).collect();
    let stage2 = stage2_train(collection, &supervision, cfg)?;
    let mut test_maps = stage1_predict(&stage1.net, collection, &collection.test_pairs, cfg)?;
    let feats = embed_all(&stage2.net, &collection.shapes, cfg)?;
    for &(i, j) in &collection.test_pairs {
        let map = nn_map(&feats[i], &feats[j], Direction::MToN)?
            .with_ids(collection.shapes[i].id(), collection.shapes[j].id());
        test_maps.insert(MapEntry {
            pair: (i, j),
            provenance: Provenance::Stage2,
            map,
        });
    }
    let report = score_maps(collection, &test_maps)?;
    Ok(NcpOutcome {
        stage1,
        stage2,
        train_maps,
        test_maps,
        report,
    })
}

/// `‖X_N − Π_NM Π_MN X_N‖²` for hard maps `t_mn: M → N` and `t_nm: N → M`.
pub fn cycle_loss_hard(t_mn: &[usize], t_nm: &[usize], x_n: &DMatrix<f64>) -> f64 {
    (0..x_n.nrows())
        .map(|y| (x_n.row(y) - x_n.row(t_mn[t_nm[y]])).norm_squared())
        .sum()
}

#[derive(Debug, Clone)]
pub struct DenoiseOutcome {
    /// Map `M → N` from the snapshot with the lowest cycle loss.
    pub map: PointMap,
    pub best_iteration: usize,
    pub best_cycle: f64,
    /// Cycle loss after every iteration.
    pub cycles: Vec<f64>,
    pub losses: Vec<f64>,
    pub net: FeatureNet,
}

/// Fits a fresh network to one noisy map with the contrastive loss and keeps
/// the weights whose nearest-neighbour maps are most cycle-consistent.
///
/// Training stops once the cycle loss has not improved for `patience`
/// iterations, or after `max_iters_denoise`.
pub fn test_time_denoise(
    shape_m: &PreparedShape,
    shape_n: &PreparedShape,
    noisy: &PointMap,
    cfg: &TrainConfig,
) -> Result<DenoiseOutcome> {
    cfg.validate()?;
    noisy.expect_direction(Direction::MToN)?;
    let t = noisy.hard()?;
    if t.len() != shape_m.shape.n_vertices() {
        return Err(Error::DimensionMismatch(
            "noisy map must cover shape M".into(),
        ));
    }
    noisy.validate(shape_n.shape.n_vertices())?;
    let shapes = [shape_m.clone(), shape_n.clone()];
    let cache = caches(&shapes, cfg)?;
    let mut net = FeatureNet::init_random(cfg.arch, sub_seed(cfg.seed, 5))?;
    let mut opt = OptimState::new(net.params().len(), cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 6));
    let x_n = &cache[1].coords;
    let mut best: Option<(usize, f64, FeatureNet, Vec<usize>)> = None;
    let mut cycles = Vec::new();
    let mut losses = Vec::new();
    for it in 0..cfg.max_iters_denoise {
        let (value, grads) = supervised_step(
            &net,
            &shapes,
            &cache,
            0,
            1,
            t,
            Stage2Loss::Nce,
            cfg,
            &mut rng,
        )?;
        check_finite(value, it, "denoising")?;
        adam_step(&mut net, &grads, &mut opt)?;
        losses.push(value);
        let (f, _) = net.forward(&shape_m.shape, &cache[0].net_basis)?;
        let (g, _) = net.forward(&shape_n.shape, &cache[1].net_basis)?;
        let t_mn = nearest_rows(&f, &g);
        let t_nm = nearest_rows(&g, &f);
        let cyc = cycle_loss_hard(&t_mn, &t_nm, x_n);
        cycles.push(cyc);
        if best.as_ref().is_none_or(|b| cyc < b.1) {
            best = Some((it, cyc, net.clone(), t_mn));
        }
        let best_it = best.as_ref().map_or(0, |b| b.0);
        if it - best_it >= cfg.patience {
            break;
        }
    }
    let (best_iteration, best_cycle, best_net, image) = best.expect("at least one iteration ran");
    Ok(DenoiseOutcome {
        map: PointMap::from_hard(image, Direction::MToN).with_ids(shape_m.id(), shape_n.id()),
        best_iteration,
        best_cycle,
        cycles,
        losses,
        net: best_net,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub loss: f64,
    pub geodesic_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoCurve {
    pub noise_level: f64,
    /// Geodesic error (×100) of the corrupted supervising map.
    pub input_error: f64,
    pub points: Vec<CurvePoint>,
}

impl DemoCurve {
    pub fn min_error(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.geodesic_error)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn final_point(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    /// CSV with columns `iteration,loss,geodesic_error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,geodesic_error\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{:.6},{:.6}", p.iteration, p.loss, p.geodesic_error);
        }
        out
    }
}

/// Trains one fresh network per noise level on the ground truth corrupted at
/// that level, logging the contrastive loss and the error of the induced
/// nearest-neighbour map every `log_every` iterations and at the end.
pub fn ncp_demo(
    shape_m: &PreparedShape,
    shape_n: &PreparedShape,
    gt: &PointMap,
    noise_levels: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<DemoCurve>> {
    cfg.validate()?;
    gt.expect_direction(Direction::MToN)?;
    let n = shape_n.shape.n_vertices();
    gt.validate(n)?;
    let metric = SurfaceMetric::for_shape(&shape_n.shape)?;
    let shapes = [shape_m.clone(), shape_n.clone()];
    let cache = caches(&shapes, cfg)?;
    noise_levels
        .iter()
        .enumerate()
        .map(|(li, &p)| {
            let noisy = corrupt_map(gt, p, n, sub_seed(cfg.seed, 100 + li as u64))?;
            let input_error = geodesic_error_with(&noisy, gt, &metric)?;
            let t = noisy.hard()?;
            let mut net = FeatureNet::init_random(cfg.arch, sub_seed(cfg.seed, 7))?;
            let mut opt = OptimState::new(net.params().len(), cfg.adam());
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 8));
            let mut points = Vec::new();
            for it in 1..=cfg.n_iters_demo {
                let (value, grads) = supervised_step(
                    &net,
                    &shapes,
                    &cache,
                    0,
                    1,
                    t,
                    Stage2Loss::Nce,
                    cfg,
                    &mut rng,
                )?;
                check_finite(value, it, "demo")?;
                adam_step(&mut net, &grads, &mut opt)?;
                if it % cfg.log_every == 0 || it == cfg.n_iters_demo {
                    let (f, _) = net.forward(&shape_m.shape, &cache[0].net_basis)?;
                    let (g, _) = net.forward(&shape_n.shape, &cache[1].net_basis)?;
                    let map = PointMap::from_hard(nearest_rows(&f, &g), Direction::MToN);
                    points.push(CurvePoint {
                        iteration: it,
                        loss: value,
                        geodesic_error: geodesic_error_with(&map, gt, &metric)?,
                    });
                }
            }
            Ok(DemoCurve {
                noise_level: p,
                input_error,
                points,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_collection() -> Collection {
        let shapes = Collection::synthetic(SynthKind::BumpySphere, 162, 3, 0.3, 20, 1).unwrap();
        Collection::transductive(shapes).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            n_iters_stage1: 3,
            n_iters_stage2: 3,
            n_iters_demo: 20,
            k: 10,
            k_net: 20,
            max_iters_denoise: 5,
            patience: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn gt_maps_follow_templates() {
        let c = tiny_collection();
        let gt = c.gt_map(0, 1).unwrap();
        let (c0, c1) = (
            c.shapes[0].canonical.as_ref().unwrap(),
            c.shapes[1].canonical.as_ref().unwrap(),
        );
        for (v, &w) in gt.hard().unwrap().iter().enumerate() {
            assert_eq!(c0[v], c1[w]);
        }
        let round = c.gt_map(1, 0).unwrap();
        for (v, &w) in gt.hard().unwrap().iter().enumerate() {
            assert_eq!(round.hard().unwrap()[w], v);
        }
    }

    #[test]
    fn collection_validation() {
        let shapes = Collection::synthetic(SynthKind::BumpySphere, 162, 3, 0.3, 10, 1).unwrap();
        assert!(Collection::new(shapes.clone(), vec![0, 1], vec![1, 2]).is_err());
        assert!(Collection::new(shapes.clone(), vec![0], vec![1]).is_err());
        let c = Collection::new(shapes, vec![0, 1], vec![2]).unwrap();
        assert_eq!(c.train_pairs, vec![(0, 1)]);
        assert!(c.test_pairs.is_empty());
    }

    #[test]
    fn zero_iterations_returns_initial_net() {
        let c = tiny_collection();
        let cfg = TrainConfig {
            n_iters_stage1: 0,
            ..quick_cfg()
        };
        let out = stage1_train(&c, &cfg).unwrap();
        assert_eq!(
            out.net,
            FeatureNet::init_random(cfg.arch, sub_seed(cfg.seed, 1)).unwrap()
        );
    }

    #[test]
    fn stage1_is_deterministic_and_tags_directions() {
        let c = tiny_collection();
        let cfg = quick_cfg();
        let a = stage1_train(&c, &cfg).unwrap();
        let b = stage1_train(&c, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        let maps = stage1_predict(&a.net, &c, &c.train_pairs, &cfg).unwrap();
        assert!(maps.iter().all(|e| e.map.direction == Direction::NToM));
        let nn = TrainConfig {
            extraction: Extraction::Nn,
            ..cfg
        };
        let maps = stage1_predict(&a.net, &c, &c.train_pairs, &nn).unwrap();
        assert!(maps.iter().all(|e| e.map.direction == Direction::MToN));
        assert_eq!(
            maps,
            stage1_predict(&a.net, &c, &c.train_pairs, &nn).unwrap()
        );
    }

    #[test]
    fn stage2_rejects_empty_supervision() {
        let c = tiny_collection();
        assert!(stage2_train(&c, &[], &quick_cfg()).is_err());
    }

    #[test]
    fn hard_cycle_matches_soft_on_one_hot() {
        let x = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let t_mn = [2, 0, 1, 1];
        let t_nm = [3, 0, 2];
        let one_hot =
            |t: &[usize], cols: usize| DMatrix::from_fn(t.len(), cols, |r, c| f64::from(t[r] == c));
        let soft = crate::losses::cycle_loss(&one_hot(&t_mn, 3), &one_hot(&t_nm, 4), &x)
            .unwrap()
            .value;
        assert!((cycle_loss_hard(&t_mn, &t_nm, &x) - soft).abs() < 1e-12);
    }

    #[test]
    fn denoise_snapshot_is_cycle_minimum() {
        let c = tiny_collection();
        let gt = c.gt_map(0, 1).unwrap();
        let out = test_time_denoise(&c.shapes[0], &c.shapes[1], &gt, &quick_cfg()).unwrap();
        let min = out.cycles.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_cycle, min);
        assert_eq!(out.cycles[out.best_iteration], min);
    }

    #[test]
    fn demo_curves_have_monotone_iterations() {
        let c = tiny_collection();
        let gt = c.gt_map(0, 1).unwrap();
        let curves = ncp_demo(&c.shapes[0], &c.shapes[1], &gt, &[0.0, 0.5], &quick_cfg()).unwrap();
        assert_eq!(curves.len(), 2);
        for cv in &curves {
            assert_eq!(
                cv.points.iter().map(|p| p.iteration).collect::<Vec<_>>(),
                vec![10, 20]
            );
        }
        assert_eq!(curves[0].input_error, 0.0);
        assert!(curves[1].input_error > 0.0);
    }
}

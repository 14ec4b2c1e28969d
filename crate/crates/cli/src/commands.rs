//! The six subcommands. Each writes its artifacts under the output directory
//! and finishes with a manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ncp_core::eval::{
    corrupt_map, geodesic_error_with, iou, map_smoothness, pck_curve, pointwise_errors,
    transfer_labels, EvalRecord, EvalReport, SurfaceMetric,
};
use ncp_core::featnet::FeatureNet;
use ncp_core::fmap::{read_point_map, write_point_map};
use ncp_core::fskd::{
    fskd_predict, read_keypoints, select_sources, write_keypoints, Keypoint, KeypointSet,
};
use ncp_core::pipeline::{
    ncp_demo, ncp_un, stage1_train, sub_seed, template_map, test_time_denoise, PreparedShape,
};
use ncp_core::spectral::content_hash;
use ncp_core::{Direction, PointMap};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{expand_globs, RunConfig};
use crate::data::{collection, index_of, load_each, pick_pair, prepare, prepare_all};
use crate::error::{CliError, CliResult};

/// Writer for one run's output directory; records every file for the
/// manifest.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

#[derive(Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a RunConfig,
    outputs: &'a [OutputFile],
}

fn runtime_io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

impl Artifacts {
    pub fn new(dir: &Path) -> CliResult<Artifacts> {
        std::fs::create_dir_all(dir).map_err(|e| runtime_io(dir, e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| runtime_io(parent, e))?;
        }
        std::fs::write(&path, contents.as_ref()).map_err(|e| runtime_io(&path, e))?;
        self.record(rel)
    }

    /// Registers a file written by other means.
    pub fn record(&mut self, rel: &str) -> CliResult<()> {
        let path = self.path(rel);
        let bytes = std::fs::read(&path).map_err(|e| runtime_io(&path, e))?;
        self.files.push(OutputFile {
            file: rel.to_string(),
            sha256: content_hash(&bytes),
        });
        Ok(())
    }

    pub fn finish(mut self, command: &str, cfg: &RunConfig) -> CliResult<()> {
        self.files.sort_by(|a, b| a.file.cmp(&b.file));
        let portable = cfg.portable();
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: &portable,
            outputs: &self.files,
        };
        let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
        let path = self.path("manifest.json");
        std::fs::write(&path, json + "\n").map_err(|e| runtime_io(&path, e))
    }
}

fn file_label(label: &str) -> String {
    Path::new(label)
        .file_name()
        .map_or_else(|| label.to_string(), |f| f.to_string_lossy().into_owned())
}

/// Builds or refreshes the basis cache of every input shape.
pub fn preprocess(cfg: &RunConfig) -> CliResult<()> {
    let dir = cfg.cache_dir();
    let k = cfg.train.basis_size();
    let mut out = Artifacts::new(&cfg.output_dir)?;
    let mut csv = String::from("shape,status,source_hash,n_vertices,k\n");
    let inputs = load_each(cfg)?;
    let total = inputs.len();
    let mut failed = 0;
    for (label, loaded) in inputs {
        let label = file_label(&label);
        match loaded.and_then(|src| prepare(&src, k, &dir).map(|r| (src, r))) {
            Ok((src, (p, status))) => {
                println!("{label}: {status}");
                let _ = writeln!(
                    csv,
                    "{},ok,{},{},{}",
                    p.id(),
                    src.source_hash,
                    p.shape.n_vertices(),
                    p.basis.k()
                );
            }
            Err(e) => {
                failed += 1;
                eprintln!("{label}: failed: {e}");
                let _ = writeln!(csv, "{label},failed,,,");
            }
        }
    }
    out.write("preprocess.csv", csv)?;
    out.finish("preprocess", cfg)?;
    if failed > 0 {
        return Err(CliError::Partial { failed, total });
    }
    Ok(())
}

fn summary_csv(report: &EvalReport, provenances: &[&str]) -> String {
    let mut out = String::from("provenance,mean_geodesic_error,n_pairs\n");
    for p in provenances {
        let n = report.records.iter().filter(|r| r.provenance == *p).count();
        if let Some(m) = report.mean_error(p) {
            let _ = writeln!(out, "{p},{m:.6},{n}");
        }
    }
    out
}

/// Two-stage unsupervised matching over the collection.
pub fn ncp_un_cmd(cfg: &RunConfig) -> CliResult<()> {
    let col = collection(cfg, prepare_all(cfg)?)?;
    let outcome = ncp_un(&col, &cfg.train)?;
    let mut out = Artifacts::new(&cfg.output_dir)?;
    out.write("metrics.csv", outcome.report.to_csv())?;
    out.write(
        "summary.csv",
        summary_csv(&outcome.report, &["stage1", "stage2"]),
    )?;
    let mut losses = String::from("stage,iteration,loss\n");
    for (stage, l) in [
        ("stage1", &outcome.stage1.losses),
        ("stage2", &outcome.stage2.losses),
    ] {
        for (it, v) in l.iter().enumerate() {
            let _ = writeln!(losses, "{stage},{it},{v:.6}");
        }
    }
    out.write("losses.csv", losses)?;
    for e in outcome.test_maps.iter() {
        let rel = format!("maps/{}.{}.map", col.pair_id(e.pair), e.provenance);
        out.write(&rel, ncp_core::fmap::format_point_map(&e.map)?)?;
    }
    for (name, net) in [
        ("stage1.json", &outcome.stage1.net),
        ("stage2.json", &outcome.stage2.net),
    ] {
        net.save(&out.path(name))?;
        out.record(name)?;
    }
    for p in ["stage1", "stage2"] {
        if let Some(m) = outcome.report.mean_error(p) {
            println!("{p} mean geodesic error: {m:.4}");
        }
    }
    out.finish("ncp-un", cfg)
}

fn score(
    map: &PointMap,
    gt: &PointMap,
    metric: &SurfaceMetric,
    m: &PreparedShape,
    n: &PreparedShape,
) -> CliResult<(f64, Option<f64>)> {
    let err = geodesic_error_with(map, gt, metric)?;
    let smooth = if m.shape.is_mesh() {
        Some(map_smoothness(map, &m.shape, &n.shape)?)
    } else {
        None
    };
    Ok((err, smooth))
}

/// Test-time denoising of one map.
pub fn denoise(cfg: &RunConfig) -> CliResult<()> {
    let shapes = prepare_all(cfg)?;
    let (i, j) = pick_pair(
        &shapes,
        cfg.denoise.source.as_deref(),
        cfg.denoise.target.as_deref(),
    )?;
    let (m, n) = (&shapes[i], &shapes[j]);
    let gt = template_map(m, n);
    let (noisy, input_provenance) = match &cfg.denoise.map {
        Some(path) => {
            let map = read_point_map(path)?;
            map.expect_direction(Direction::MToN)?;
            if (!map.m_id.is_empty() && map.m_id != m.id())
                || (!map.n_id.is_empty() && map.n_id != n.id())
            {
                return Err(CliError::Validation(format!(
                    "map {} is for {} -> {}, pair is {} -> {}",
                    path.display(),
                    map.m_id,
                    map.n_id,
                    m.id(),
                    n.id()
                )));
            }
            (map, "input")
        }
        None => {
            let gt = gt.as_ref().ok_or_else(|| {
                CliError::Validation(
                    "denoise without [denoise] map needs ground truth to corrupt".into(),
                )
            })?;
            let p = cfg.denoise.corruption;
            let noisy = corrupt_map(gt, p, n.shape.n_vertices(), sub_seed(cfg.seed, 200))?;
            (noisy, "corrupted")
        }
    };
    let outcome = test_time_denoise(m, n, &noisy, &cfg.train)?;
    let mut out = Artifacts::new(&cfg.output_dir)?;
    write_point_map(&out.path("denoised.map"), &outcome.map)?;
    out.record("denoised.map")?;
    let mut trace = String::from("iteration,loss,cycle_loss\n");
    for (it, (l, c)) in outcome.losses.iter().zip(&outcome.cycles).enumerate() {
        let _ = writeln!(trace, "{it},{l:.6},{c:.6}");
    }
    out.write("denoise.csv", trace)?;
    if let Some(gt) = &gt {
        let metric = SurfaceMetric::for_shape(&n.shape)?;
        let pair_id = format!("{}__{}", m.id(), n.id());
        let mut report = EvalReport::default();
        for (prov, map) in [(input_provenance, &noisy), ("denoised", &outcome.map)] {
            let (err, smooth) = score(map, gt, &metric, m, n)?;
            report.records.push(EvalRecord {
                pair_id: pair_id.clone(),
                provenance: prov.to_string(),
                geodesic_error: err,
                smoothness: smooth,
                iou: None,
            });
            println!("{prov} geodesic error: {err:.4}");
        }
        out.write("metrics.csv", report.to_csv())?;
    }
    println!(
        "best iteration {} of {} (cycle loss {:.6})",
        outcome.best_iteration,
        outcome.cycles.len(),
        outcome.best_cycle
    );
    out.finish("denoise", cfg)
}

/// Training curves against corrupted ground truth, one CSV per noise level.
pub fn demo(cfg: &RunConfig) -> CliResult<()> {
    let shapes = prepare_all(cfg)?;
    let (i, j) = pick_pair(
        &shapes,
        cfg.demo.source.as_deref(),
        cfg.demo.target.as_deref(),
    )?;
    let gt = template_map(&shapes[i], &shapes[j]).ok_or_else(|| {
        CliError::Validation("demo needs ground truth ([data] gt or synthetic data)".into())
    })?;
    if cfg.demo.noise_levels.is_empty() {
        return Err(CliError::Validation("[demo]: noise_levels is empty".into()));
    }
    let curves = ncp_demo(
        &shapes[i],
        &shapes[j],
        &gt,
        &cfg.demo.noise_levels,
        &cfg.train,
    )?;
    let mut out = Artifacts::new(&cfg.output_dir)?;
    let mut summary = String::from("noise_level,input_error,min_error,final_error,final_loss\n");
    for c in &curves {
        let name = format!("demo_p{:03}.csv", (c.noise_level * 100.0).round() as u32);
        out.write(&name, c.to_csv())?;
        let last = c.final_point().copied();
        let _ = writeln!(
            summary,
            "{:.2},{:.6},{:.6},{:.6},{:.6}",
            c.noise_level,
            c.input_error,
            c.min_error(),
            last.map_or(f64::NAN, |p| p.geodesic_error),
            last.map_or(f64::NAN, |p| p.loss)
        );
        println!(
            "p={:.2}: input {:.4} min {:.4}",
            c.noise_level,
            c.input_error,
            c.min_error()
        );
    }
    out.write("demo_summary.csv", summary)?;
    out.finish("demo", cfg)
}

fn read_labels(path: &Path) -> CliResult<Vec<usize>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    text.split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `(pair name, provenance)` from `<pair>.<provenance>.map`.
fn map_provenance(path: &Path) -> String {
    let s = stem(path);
    match s.rsplit_once('.') {
        Some((_, p)) if !p.is_empty() => p.to_string(),
        _ => "input".into(),
    }
}

/// Geodesic error, smoothness, PCK and label-transfer IoU of map files.
pub fn eval(cfg: &RunConfig) -> CliResult<()> {
    if cfg.eval.maps.is_empty() {
        return Err(CliError::Validation("eval needs [eval] maps".into()));
    }
    let shapes = prepare_all(cfg)?;
    let mut labels: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    if !cfg.eval.labels.is_empty() {
        for p in expand_globs(&cfg.eval.labels, "eval.labels")? {
            labels.insert(stem(&p), read_labels(&p)?);
        }
    }
    let mut report = EvalReport::default();
    let mut errors: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for path in expand_globs(&cfg.eval.maps, "eval.maps")? {
        let map = read_point_map(&path)?;
        let (m, n) = (index_of(&shapes, &map.m_id)?, index_of(&shapes, &map.n_id)?);
        let (dom, cod) = match map.direction {
            Direction::MToN => (m, n),
            Direction::NToM => (n, m),
        };
        let oriented = PointMap::from_hard(map.hard()?.to_vec(), Direction::MToN);
        oriented.validate(shapes[cod].shape.n_vertices())?;
        if oriented.domain_len() != shapes[dom].shape.n_vertices() {
            return Err(CliError::Runtime(format!(
                "{} does not cover its domain",
                path.display()
            )));
        }
        let prov = map_provenance(&path);
        let Some(gt) = template_map(&shapes[dom], &shapes[cod]) else {
            log::warn!("no ground truth for {}; skipped", path.display());
            continue;
        };
        let metric = SurfaceMetric::for_sources(&shapes[cod].shape, gt.hard()?)?;
        let (err, smooth) = score(&oriented, &gt, &metric, &shapes[dom], &shapes[cod])?;
        errors
            .entry(prov.clone())
            .or_default()
            .extend(pointwise_errors(&oriented, &gt, &metric)?);
        let label_iou = match (labels.get(shapes[dom].id()), labels.get(shapes[cod].id())) {
            (Some(ld), Some(lc)) => {
                let pred = transfer_labels(&oriented, lc)?;
                let n_classes = ld.iter().chain(lc).max().map_or(1, |m| m + 1);
                Some(iou(&pred, ld, n_classes)?)
            }
            _ => None,
        };
        report.records.push(EvalRecord {
            pair_id: format!("{}__{}", map.m_id, map.n_id),
            provenance: prov,
            geodesic_error: err,
            smoothness: smooth,
            iou: label_iou,
        });
    }
    let mut pck = String::from("provenance,threshold,fraction\n");
    for (prov, e) in &errors {
        let f = pck_curve(e, &cfg.eval.thresholds)?;
        for (t, v) in cfg.eval.thresholds.iter().zip(&f) {
            let _ = writeln!(pck, "{prov},{t:.6},{v:.6}");
        }
    }
    let provenances: Vec<&str> = errors.keys().map(String::as_str).collect();
    let mut out = Artifacts::new(&cfg.output_dir)?;
    out.write("eval.csv", report.to_csv())?;
    out.write("pck.csv", pck)?;
    out.write("summary.csv", summary_csv(&report, &provenances))?;
    for p in &provenances {
        if let Some(m) = report.mean_error(p) {
            println!("{p} mean geodesic error: {m:.4}");
        }
    }
    out.finish("eval", cfg)
}

/// Keypoints on `count` seeded template vertices, for every shape that has
/// template indices.
fn template_keypoints(
    shapes: &[PreparedShape],
    count: usize,
    seed: u64,
) -> CliResult<BTreeMap<String, KeypointSet>> {
    let c0 = shapes[0].canonical.as_ref().ok_or_else(|| {
        CliError::Validation("fskd.synthetic_keypoints needs template indices".into())
    })?;
    if count > c0.len() {
        return Err(CliError::Validation(
            "fskd.synthetic_keypoints exceeds the vertex count".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut template: Vec<usize> = sample(&mut rng, c0.len(), count)
        .into_iter()
        .map(|v| c0[v])
        .collect();
    template.sort_unstable();
    let mut out = BTreeMap::new();
    for s in shapes {
        let Some(c) = &s.canonical else { continue };
        let entries: Vec<Keypoint> = template
            .iter()
            .enumerate()
            .filter_map(|(id, t)| {
                c.iter().position(|x| x == t).map(|vertex| Keypoint {
                    id: id as u32,
                    vertex,
                })
            })
            .collect();
        out.insert(s.id().to_string(), KeypointSet::new(s.id(), entries)?);
    }
    Ok(out)
}

/// Few-shot keypoint transfer to the target shapes.
///
/// Targets are `[fskd] targets`, else the `[data] test` split, else every
/// shape without keypoints, else the last shape. Keypoints on a target are
/// used only as ground truth.
pub fn fskd(cfg: &RunConfig) -> CliResult<()> {
    let shapes = prepare_all(cfg)?;
    let known = if cfg.fskd.synthetic_keypoints > 0 {
        template_keypoints(
            &shapes,
            cfg.fskd.synthetic_keypoints,
            sub_seed(cfg.seed, 301),
        )?
    } else {
        let mut m = BTreeMap::new();
        for p in expand_globs(&cfg.fskd.keypoints, "fskd.keypoints")? {
            let set = read_keypoints(&p)?;
            let id = if set.shape_id.is_empty() {
                stem(&p)
            } else {
                set.shape_id.clone()
            };
            let set = KeypointSet::new(id.clone(), set.entries().to_vec())?;
            m.insert(id, set);
        }
        m
    };
    let targets: Vec<usize> = if !cfg.fskd.targets.is_empty() {
        cfg.fskd
            .targets
            .iter()
            .map(|id| index_of(&shapes, id))
            .collect::<CliResult<_>>()?
    } else if !cfg.data.test.is_empty() {
        cfg.data
            .test
            .iter()
            .map(|id| index_of(&shapes, id))
            .collect::<CliResult<_>>()?
    } else {
        let unlabelled: Vec<usize> = (0..shapes.len())
            .filter(|&i| !known.contains_key(shapes[i].id()))
            .collect();
        if unlabelled.is_empty() {
            vec![shapes.len() - 1]
        } else {
            unlabelled
        }
    };
    let labelled: Vec<usize> = (0..shapes.len())
        .filter(|i| !targets.contains(i) && known.contains_key(shapes[*i].id()))
        .collect();
    let sets: Vec<KeypointSet> = labelled
        .iter()
        .map(|&i| known[shapes[i].id()].clone())
        .collect();
    for (s, &i) in sets.iter().zip(&labelled) {
        s.validate(shapes[i].shape.n_vertices())
            .map_err(|e| CliError::Validation(format!("keypoints of '{}': {e}", shapes[i].id())))?;
    }
    let params = cfg.fskd.params();
    let chosen = select_sources(&sets, params.n_sources, sub_seed(cfg.seed, 300))
        .map_err(|e| CliError::Validation(format!("[fskd]: {e}")))?;
    let net = match &cfg.fskd.checkpoint {
        Some(p) => FeatureNet::load(p)?,
        None => stage1_train(&collection(cfg, shapes.clone())?, &cfg.train)?.net,
    };
    let net_basis = |p: &PreparedShape| p.basis.truncated(cfg.train.k_net.min(p.basis.k()));
    let bases: Vec<_> = shapes.iter().map(net_basis).collect();
    let sources: Vec<_> = chosen
        .iter()
        .map(|&c| (&shapes[labelled[c]].shape, &bases[labelled[c]], &sets[c]))
        .collect();
    let mut out = Artifacts::new(&cfg.output_dir)?;
    let mut cands = String::from("target,keypoint,source,vertex,residual,kept\n");
    let mut miou = String::from("target,n_predicted,miou\n");
    for &t in &targets {
        let pred = fskd_predict(&sources, (&shapes[t].shape, &bases[t]), &net, &params)?;
        let rel = format!("keypoints/{}.kp", shapes[t].id());
        std::fs::create_dir_all(out.path("keypoints"))
            .map_err(|e| runtime_io(&out.path("keypoints"), e))?;
        write_keypoints(&out.path(&rel), &pred.keypoints)?;
        out.record(&rel)?;
        for c in &pred.candidates {
            let _ = writeln!(
                cands,
                "{},{},{},{},{:.6},{}",
                shapes[t].id(),
                c.id,
                shapes[labelled[chosen[c.source]]].id(),
                c.vertex,
                c.residual,
                c.kept
            );
        }
        if let Some(gt) = known.get(shapes[t].id()) {
            let metric = SurfaceMetric::for_shape(&shapes[t].shape)?;
            let v = ncp_core::fskd::keypoint_miou(&pred.keypoints, gt, &metric, cfg.fskd.threshold);
            let _ = writeln!(miou, "{},{},{v:.6}", shapes[t].id(), pred.keypoints.len());
            println!(
                "{}: {} keypoints, mIoU {v:.4}",
                shapes[t].id(),
                pred.keypoints.len()
            );
        } else {
            println!("{}: {} keypoints", shapes[t].id(), pred.keypoints.len());
        }
    }
    out.write("candidates.csv", cands)?;
    out.write("miou.csv", miou)?;
    out.finish("fskd", cfg)
}

//! Acceptance checks for `ncp-core` and the `ncp` command line. Each check
//! returns whether it passed and a one-line summary; the `acceptance` test
//! target runs them all.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use ncp_core::eval::{
    corrupt_map, embedding_dirichlet, geodesic_error, injectivity_margin, map_smoothness,
    SurfaceMetric,
};
use ncp_core::featnet::{Arch, FeatureNet};
use ncp_core::fmap::{nearest_rows, solve_fmap};
use ncp_core::fskd::{
    combination_weights, fskd_predict_features, keypoint_miou, FskdParams, FskdSource, Keypoint,
    KeypointSet,
};
use ncp_core::geometry::normalize;
use ncp_core::losses::{
    bijectivity_loss, chamfer_spectral_loss, cycle_loss_features, fmap_backward, lie_loss,
    nce_loss, orthogonality_loss, NCE_TAU,
};
use ncp_core::pipeline::{
    embed_all, ncp_demo, score_entry, score_maps, stage1_predict, stage1_train, stage2_train,
    sub_seed, test_time_denoise, Collection, MapEntry, MapSet, PreparedShape, Provenance,
    TrainConfig,
};
use ncp_core::spectral::{cotan_laplacian, eigenbasis};
use ncp_core::synth::{icosphere, synth_base, synth_pair, SynthKind};
use ncp_core::{Direction, PointMap, Shape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Outcome = (bool, String);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-scale..scale))
}

/// Largest relative gap between `analytic` and central differences of `f`.
fn fd_err(
    x: &DMatrix<f64>,
    analytic: &DMatrix<f64>,
    h: f64,
    mut f: impl FnMut(&DMatrix<f64>) -> f64,
) -> f64 {
    let floor = analytic.amax().max(1e-12) * 1e-6;
    let mut xp = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let up = f(&xp);
        xp[i] = orig - h;
        let down = f(&xp);
        xp[i] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(floor));
    }
    worst
}

fn grid(rows: usize, cols: usize) -> Shape {
    let mut v = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (c as f64 / (cols - 1) as f64, r as f64 / (rows - 1) as f64);
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
    normalize(&Shape::new("grid", v, f).unwrap()).unwrap()
}

fn gradient_errors() -> Vec<(&'static str, f64)> {
    const H: f64 = 1e-5;
    let mut out = Vec::new();
    let mut r = rng(1);

    let f = random_matrix(&mut r, 12, 5, 0.3);
    let g = random_matrix(&mut r, 10, 5, 0.3);
    let pairs: Vec<_> = (0..12).map(|i| (i, (3 * i + 1) % 10)).collect();
    let l = nce_loss(&f, &g, &pairs, NCE_TAU).unwrap();
    let e1 = fd_err(&f, l.d_f.as_ref().unwrap(), H, |x| {
        nce_loss(x, &g, &pairs, NCE_TAU).unwrap().value
    });
    let e2 = fd_err(&g, l.d_g.as_ref().unwrap(), H, |x| {
        nce_loss(&f, x, &pairs, NCE_TAU).unwrap().value
    });
    out.push(("nce", e1.max(e2)));

    let f = random_matrix(&mut r, 15, 6, 1.0);
    let g = random_matrix(&mut r, 20, 6, 1.0);
    let x = random_matrix(&mut r, 20, 3, 1.0);
    let gt = PointMap::from_hard((0..15).map(|i| (7 * i) % 20).collect(), Direction::MToN);
    let l = lie_loss(&f, &g, &x, &gt).unwrap();
    let e1 = fd_err(&f, l.d_f.as_ref().unwrap(), H, |y| {
        lie_loss(y, &g, &x, &gt).unwrap().value
    });
    let e2 = fd_err(&g, l.d_g.as_ref().unwrap(), H, |y| {
        lie_loss(&f, y, &x, &gt).unwrap().value
    });
    out.push(("lie", e1.max(e2)));

    let l = cycle_loss_features(&f, &g, &x).unwrap();
    let e1 = fd_err(&f, l.d_f.as_ref().unwrap(), H, |y| {
        cycle_loss_features(y, &g, &x).unwrap().value
    });
    let e2 = fd_err(&g, l.d_g.as_ref().unwrap(), H, |y| {
        cycle_loss_features(&f, y, &x).unwrap().value
    });
    out.push(("cycle", e1.max(e2)));

    let a = random_matrix(&mut r, 6, 6, 1.0);
    let b = random_matrix(&mut r, 6, 6, 1.0);
    let l = bijectivity_loss(&a, &b).unwrap();
    let e1 = fd_err(&a, &l.d_c[0], H, |y| bijectivity_loss(y, &b).unwrap().value);
    let e2 = fd_err(&b, &l.d_c[1], H, |y| bijectivity_loss(&a, y).unwrap().value);
    out.push(("bijectivity", e1.max(e2)));
    let l = orthogonality_loss(&a).unwrap();
    out.push((
        "orthogonality",
        fd_err(&a, &l.d_c[0], H, |y| orthogonality_loss(y).unwrap().value),
    ));

    let shape = grid(5, 6);
    let basis = eigenbasis(&cotan_laplacian(&shape).unwrap(), 6).unwrap();
    let coords = shape.coords();
    let mass: Vec<f64> = basis.mass.iter().copied().collect();
    let cmn = DMatrix::identity(6, 6) + random_matrix(&mut r, 6, 6, 0.2);
    let cnm = DMatrix::identity(6, 6) + random_matrix(&mut r, 6, 6, 0.2);
    let l = chamfer_spectral_loss(&coords, &basis.phi, &mass, &cmn, &cnm).unwrap();
    let e1 = fd_err(&cmn, &l.d_c[0], 1e-7, |y| {
        chamfer_spectral_loss(&coords, &basis.phi, &mass, y, &cnm)
            .unwrap()
            .value
    });
    let e2 = fd_err(&cnm, &l.d_c[1], 1e-7, |y| {
        chamfer_spectral_loss(&coords, &basis.phi, &mass, &cmn, y)
            .unwrap()
            .value
    });
    out.push(("chamfer", e1.max(e2)));

    let a = random_matrix(&mut r, 3, 5, 1.0);
    let b = random_matrix(&mut r, 3, 5, 1.0);
    let w = random_matrix(&mut r, 3, 3, 1.0);
    let (em, en) = ([0.0, 0.7, 1.9], [0.0, 0.8, 2.1]);
    let loss =
        |a: &DMatrix<f64>, b: &DMatrix<f64>| solve_fmap(a, b, &em, &en, 0.3).unwrap().map.c.dot(&w);
    let sol = solve_fmap(&a, &b, &em, &en, 0.3).unwrap();
    let (da, db) = fmap_backward(&w, &sol.context).unwrap();
    out.push((
        "fmap",
        fd_err(&a, &da, H, |y| loss(y, &b)).max(fd_err(&b, &db, H, |y| loss(&a, y))),
    ));

    let shape = grid(4, 5);
    let basis = eigenbasis(&cotan_laplacian(&shape).unwrap(), 10).unwrap();
    let arch = Arch {
        in_dim: 3,
        width: 4,
        out_dim: 4,
        n_blocks: 2,
    };
    let mut net = FeatureNet::init_random(arch, 11).unwrap();
    for p in &mut net.params_mut()[..3] {
        *p = 0.5;
    }
    let w = random_matrix(&mut r, 20, 4, 1.0);
    let (_, cache) = net.forward(&shape, &basis).unwrap();
    let (grads, _) = net.backward(&basis, &cache, &w).unwrap();
    let p0 = DMatrix::from_column_slice(grads.len(), 1, net.params());
    let gm = DMatrix::from_column_slice(grads.len(), 1, &grads);
    let e = fd_err(&p0, &gm, 1e-4, |p| {
        let n = FeatureNet::from_params(arch, 0, p.as_slice().to_vec()).unwrap();
        n.forward(&shape, &basis).unwrap().0.dot(&w)
    });
    out.push(("network", e));
    out
}

pub fn criterion_1() -> Outcome {
    let t = Instant::now();
    let grads = gradient_errors();
    let worst_grad = grads.iter().map(|g| g.1).fold(0.0, f64::max);
    let mut meshes = vec![icosphere(2), icosphere(4), grid(12, 15)];
    for kind in [
        SynthKind::BentCylinder,
        SynthKind::BumpySphere,
        SynthKind::StretchedGrid,
    ] {
        meshes.push(synth_base(kind, 800, 0).unwrap());
    }
    let (mut res, mut orth): (f64, f64) = (0.0, 0.0);
    for m in &meshes {
        let lap = cotan_laplacian(&normalize(m).unwrap()).unwrap();
        let b = eigenbasis(&lap, 30).unwrap();
        res = res.max(b.residual(&lap));
        orth = orth.max(b.orthonormality_error());
    }
    let secs = t.elapsed().as_secs_f64();
    let names: Vec<String> = grads.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    (
        worst_grad < 1e-4 && res <= 1e-6 && orth <= 1e-8 && secs < 60.0,
        format!(
            "gradients [{}]; eigen residual {res:.1e}, orthonormality {orth:.1e} on {} meshes; {secs:.1}s",
            names.join(", "),
            meshes.len()
        ),
    )
}

pub fn criterion_2() -> Outcome {
    let eye = DMatrix::<f64>::identity(2, 2);
    let c = solve_fmap(&eye, &eye, &[0.0, 1.0], &[0.0, 2.0], 10.0)
        .unwrap()
        .map
        .c;
    let hand = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0 / 11.0]);
    let e1 = (&c - &hand).amax();
    let mut r = rng(2);
    let a = random_matrix(&mut r, 4, 9, 1.0);
    let b = random_matrix(&mut r, 4, 9, 1.0);
    let c = solve_fmap(&a, &b, &[0.0, 0.5, 1.0, 2.0], &[0.0, 0.6, 1.1, 1.8], 0.0)
        .unwrap()
        .map
        .c;
    let closed = &b * a.transpose() * (&a * a.transpose()).try_inverse().unwrap();
    let e2 = (&c - &closed).amax();
    (
        e1 <= 1e-10 && e2 <= 1e-8,
        format!("hand case {e1:.1e}, least squares {e2:.1e}"),
    )
}

pub fn criterion_3() -> Outcome {
    let cfg = |seed| TrainConfig {
        seed,
        n_iters_demo: 400,
        ..TrainConfig::default()
    };
    let mut wins = 0;
    let mut slowest: f64 = 0.0;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let t = Instant::now();
        let c = cfg(seed);
        let (m, n, gt) = synth_pair(SynthKind::BentCylinder, 800, 1.5, seed).unwrap();
        let m = PreparedShape::new(normalize(&m).unwrap(), c.basis_size()).unwrap();
        let n = PreparedShape::new(n, c.basis_size()).unwrap();
        let curve = &ncp_demo(&m, &n, &gt, &[0.5], &c).unwrap()[0];
        let secs = t.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        if curve.min_error() < curve.input_error {
            wins += 1;
        }
        parts.push(format!(
            "{:.2}->{:.2}",
            curve.input_error,
            curve.min_error()
        ));
    }
    (
        wins >= 4 && slowest < 300.0,
        format!(
            "{wins}/5 seeds below input [{}]; slowest seed {slowest:.0}s",
            parts.join(" ")
        ),
    )
}

/// Stage-1 and stage-2 maps on a 6-shape collection, with the stage-2
/// training time.
pub struct CollectionRun {
    collection: Collection,
    cfg: TrainConfig,
    stage1_maps: MapSet,
    stage1_error: f64,
    stage2_error: f64,
    stage2_time: Duration,
}

pub fn collection_run(seed: u64) -> CollectionRun {
    let cfg = TrainConfig {
        seed,
        lambda: 1e-3,
        ..TrainConfig::default()
    };
    let shapes =
        Collection::synthetic(SynthKind::BentCylinder, 800, 6, 1.5, cfg.basis_size(), seed)
            .unwrap();
    let collection = Collection::transductive(shapes).unwrap();
    let s1 = stage1_train(&collection, &cfg).unwrap();
    let stage1_maps = stage1_predict(&s1.net, &collection, &collection.train_pairs, &cfg).unwrap();
    let t = Instant::now();
    let supervision: Vec<&MapEntry> = stage1_maps.iter().collect();
    let s2 = stage2_train(&collection, &supervision, &cfg).unwrap();
    let stage2_time = t.elapsed();
    let feats = embed_all(&s2.net, &collection.shapes, &cfg).unwrap();
    let mut test = stage1_predict(&s1.net, &collection, &collection.test_pairs, &cfg).unwrap();
    for &(i, j) in &collection.test_pairs {
        let map = ncp_core::fmap::nn_map(&feats[i], &feats[j], Direction::MToN).unwrap();
        test.insert(MapEntry {
            pair: (i, j),
            provenance: Provenance::Stage2,
            map,
        });
    }
    let report = score_maps(&collection, &test).unwrap();
    CollectionRun {
        stage1_error: report.mean_error("stage1").unwrap(),
        stage2_error: report.mean_error("stage2").unwrap(),
        collection,
        cfg,
        stage1_maps,
        stage2_time,
    }
}

pub fn criterion_4(runs: &[CollectionRun], elapsed: f64) -> Outcome {
    let each_improves = runs.iter().all(|r| r.stage2_error <= r.stage1_error);
    let gains: Vec<f64> = runs
        .iter()
        .map(|r| 1.0 - r.stage2_error / r.stage1_error)
        .collect();
    let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
    let parts: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.2}->{:.2}", r.stage1_error, r.stage2_error))
        .collect();
    (
        each_improves && mean_gain >= 0.15 && elapsed < 900.0,
        format!(
            "stage1->stage2 [{}], mean improvement {:.1}%; {elapsed:.0}s",
            parts.join(" "),
            100.0 * mean_gain
        ),
    )
}

pub fn criterion_5() -> Outcome {
    let t = Instant::now();
    let cfg = TrainConfig::default();
    let shapes =
        Collection::synthetic(SynthKind::BentCylinder, 800, 2, 1.5, cfg.basis_size(), 0).unwrap();
    let col = Collection::transductive(shapes).unwrap();
    let (m, n) = (&col.shapes[0], &col.shapes[1]);
    let gt = col.gt_map(0, 1).unwrap();
    let noisy = corrupt_map(&gt, 0.5, n.shape.n_vertices(), sub_seed(cfg.seed, 200)).unwrap();
    let e_in = geodesic_error(&noisy, &gt, &n.shape).unwrap();
    let out = test_time_denoise(m, n, &noisy, &cfg).unwrap();
    let e_out = geodesic_error(&out.map, &gt, &n.shape).unwrap();

    let min_cycle = out.cycles.iter().copied().fold(f64::INFINITY, f64::min);
    let first_min = out.cycles.iter().position(|&c| c == min_cycle).unwrap();
    let k_net = cfg.k_net.min(m.basis.k());
    let (f, _) = out
        .net
        .forward(&m.shape, &m.basis.truncated(k_net))
        .unwrap();
    let (g, _) = out
        .net
        .forward(&n.shape, &n.basis.truncated(k_net))
        .unwrap();
    let snapshot = out.best_cycle == min_cycle
        && out.best_iteration == first_min
        && out.map.hard().unwrap() == nearest_rows(&f, &g).as_slice();

    let clean = test_time_denoise(m, n, &gt, &cfg).unwrap();
    let e_clean = geodesic_error(&clean.map, &gt, &n.shape).unwrap();
    let secs = t.elapsed().as_secs_f64();
    (
        e_out < 0.8 * e_in && e_clean <= 1.0 && snapshot && secs < 300.0,
        format!(
            "corrupted {e_in:.2} -> {e_out:.2} (best iteration {}), clean 0 -> {e_clean:.2}, snapshot exact: {snapshot}; {secs:.0}s",
            out.best_iteration
        ),
    )
}

pub fn criterion_6(run: &CollectionRun) -> Outcome {
    let col = &run.collection;
    let mut pair_time = Duration::ZERO;
    let mut errors = Vec::new();
    for e in run.stage1_maps.iter() {
        let (d, c) = e.oriented();
        let noisy = PointMap::from_hard(e.map.hard().unwrap().to_vec(), Direction::MToN);
        let t = Instant::now();
        let out = test_time_denoise(&col.shapes[d], &col.shapes[c], &noisy, &run.cfg).unwrap();
        pair_time += t.elapsed();
        let entry = MapEntry {
            pair: (d, c),
            provenance: Provenance::Denoised,
            map: out.map,
        };
        errors.push(score_entry(col, &entry).unwrap().unwrap().0);
    }
    let pairwise = errors.iter().sum::<f64>() / errors.len() as f64;
    let faster = run.stage2_time < pair_time;
    let accurate = run.stage2_error <= 1.1 * pairwise;
    (
        faster && accurate,
        format!(
            "stage2 {:.0}s vs {} pairwise denoising runs {:.0}s; error {:.2} vs pairwise {pairwise:.2} (limit {:.2})",
            run.stage2_time.as_secs_f64(),
            errors.len(),
            pair_time.as_secs_f64(),
            run.stage2_error,
            1.1 * pairwise
        ),
    )
}

pub fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut meshes: Vec<Shape> = [
        SynthKind::BentCylinder,
        SynthKind::BumpySphere,
        SynthKind::StretchedGrid,
    ]
    .into_iter()
    .map(|k| synth_base(k, 800, 3).unwrap())
    .collect();
    meshes.push(normalize(&icosphere(3)).unwrap());
    for shape in meshes {
        let p = PreparedShape::new(shape, 64).unwrap();
        let xyz = embedding_dirichlet(&FeatureNet::input_features(&p.shape), &p.lap).unwrap();
        let mut wins = 0;
        let mut margin = f64::INFINITY;
        for seed in 0..5 {
            let net = FeatureNet::init_random(Arch::desk(), seed).unwrap();
            let (f, _) = net.forward(&p.shape, &p.basis).unwrap();
            if embedding_dirichlet(&f, &p.lap).unwrap() < xyz {
                wins += 1;
            }
            margin = margin.min(injectivity_margin(&f).unwrap());
        }
        ok &= wins >= 4 && margin > 0.0;
        parts.push(format!("{} {wins}/5 margin {margin:.1e}", p.id()));
    }
    (ok, parts.join(", "))
}

pub fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    for shape in [
        normalize(&icosphere(3)).unwrap(),
        grid(10, 12),
        synth_base(SynthKind::BumpySphere, 500, 1).unwrap(),
    ] {
        let n = shape.n_vertices();
        let lap = cotan_laplacian(&shape).unwrap();
        let e = map_smoothness(&PointMap::identity(n, Direction::MToN), &shape, &shape).unwrap();
        let x = shape.coords();
        let dirichlet: f64 = (0..3)
            .map(|c| lap.quadratic_form(&DVector::from(x.column(c).into_owned())))
            .sum();
        worst = worst.max((e - dirichlet).abs() / dirichlet.max(1.0));
    }
    let ico = normalize(&icosphere(3)).unwrap();
    let n = ico.n_vertices();
    let ident = map_smoothness(&PointMap::identity(n, Direction::MToN), &ico, &ico).unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng(8));
    let random = map_smoothness(&PointMap::from_hard(perm, Direction::MToN), &ico, &ico).unwrap();
    (
        worst <= 1e-10 && random >= 10.0 * ident,
        format!(
            "identity vs Dirichlet {worst:.1e}; random/identity on icosphere {:.1}",
            random / ident
        ),
    )
}

fn kp(id: &str, entries: &[(u32, usize)]) -> KeypointSet {
    KeypointSet::new(
        id,
        entries
            .iter()
            .map(|&(id, vertex)| Keypoint { id, vertex })
            .collect(),
    )
    .unwrap()
}

fn line(n: usize) -> Shape {
    Shape::new(
        "line",
        (0..n).map(|i| [i as f64, 0.0, 0.0]).collect(),
        Vec::new(),
    )
    .unwrap()
}

pub fn criterion_9() -> Outcome {
    let w = combination_weights(&[0.0, 0.01], 0.01);
    let e = (-1.0f64).exp();
    let weights = w[0] == 1.0 / (1.0 + e) && w[1] == e / (1.0 + e);

    let d = 0.1f64.sqrt();
    let src = Shape::new(
        "s",
        vec![[0.0; 3], [d, 0.0, 0.0], [5.0, 0.0, 0.0], [9.0, 0.0, 0.0]],
        Vec::new(),
    )
    .unwrap();
    let fs = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 5.0, 9.0]);
    let ft = DMatrix::from_row_slice(4, 1, &[0.9, 5.0, 9.0, 20.0]);
    let set = kp("s", &[(7, 0)]);
    let view = FskdSource {
        shape: &src,
        features: &fs,
        keypoints: &set,
    };
    let tight = fskd_predict_features(&[view], &line(4), &ft, &FskdParams::default()).unwrap();
    let loose = FskdParams {
        nu: 0.2,
        ..FskdParams::default()
    };
    let kept = fskd_predict_features(&[view], &line(4), &ft, &loose).unwrap();
    let rejection =
        tight.keypoints.is_empty() && kept.keypoints.entries() == [Keypoint { id: 7, vertex: 0 }];

    let shape = line(10);
    let f = DMatrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
    let set = kp("line", &[(0, 1), (1, 4), (2, 9)]);
    let view = FskdSource {
        shape: &shape,
        features: &f,
        keypoints: &set,
    };
    let p = fskd_predict_features(&[view, view, view], &shape, &f, &FskdParams::default()).unwrap();
    let identity = p.keypoints.entries() == set.entries();

    let metric = SurfaceMetric::for_shape(&shape).unwrap();
    let gt = kp("l", &[(0, 0), (1, 5)]);
    let miou = keypoint_miou(&gt, &gt, &metric, 0.5) == 1.0
        && keypoint_miou(&kp("l", &[]), &gt, &metric, 0.5) == 0.0
        && keypoint_miou(&kp("l", &[(0, 1), (1, 9)]), &gt, &metric, 1.5) == 1.0 / 3.0;
    (
        weights && rejection && identity && miou,
        format!("weights {weights}, rejection {rejection}, identity recovery {identity}, mIoU counts {miou}"),
    )
}

/// Run configuration for small, fast CLI runs.
fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"seed = 5
[data.synthetic]
kind = "bumpy_sphere"
n_target = 100
n_shapes = 4
magnitude = 0.5

[train]
n_iters_stage1 = 10
n_iters_stage2 = 10
n_iters_demo = 20
k = 8
k_net = 12
lambda = 0.001
max_iters_denoise = 15
patience = 5

[train.arch]
in_dim = 3
width = 8
out_dim = 8
n_blocks = 2

[fskd]
synthetic_keypoints = 6
n_sources = 2

{extra}"#
    );
    let path = dir.join(format!("run_{}.toml", extra.len()));
    std::fs::write(&path, text).unwrap();
    path
}

/// Contents of every CSV under `dir`, keyed by relative path.
fn csv_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

/// Every subcommand run twice through the command-line entry point, into
/// separate output and cache directories.
pub fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut differing = Vec::new();
    let mut compared = 0;
    let mut check = |cmd: &str, cfg: &Path| {
        for (out, cache) in [(&a, "cache_a"), (&b, "cache_b")] {
            let args: Vec<OsString> = vec![
                "ncp".into(),
                "--config".into(),
                cfg.into(),
                "--output-dir".into(),
                out.join(cmd).into(),
                "--cache-dir".into(),
                dir.path().join(cache).into(),
                cmd.into(),
            ];
            assert_eq!(ncp_cli::run_args(args), 0, "{cmd} failed");
        }
        let (fa, fb) = (csv_files(&a.join(cmd)), csv_files(&b.join(cmd)));
        compared += fa.len();
        if fa.is_empty() || fa != fb {
            differing.push(cmd.to_string());
        }
    };
    for cmd in ["preprocess", "ncp-un", "denoise", "demo", "fskd"] {
        check(cmd, &cfg);
    }
    let eval_cfg = tiny_config(
        dir.path(),
        &format!("[eval]\nmaps = [\"{}/ncp-un/maps/*.map\"]\n", a.display()),
    );
    check("eval", &eval_cfg);
    (
        differing.is_empty(),
        format!("{compared} CSVs over 6 subcommands; differing: {differing:?}"),
    )
}

pub fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let (ok, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        (false, format!("panicked: {msg}"))
    });
    println!(
        "criterion {n} {name}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

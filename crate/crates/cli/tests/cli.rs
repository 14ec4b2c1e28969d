mod common;

use std::fs;

use common::{csv_files, run, tiny_config, write_meshes};

#[test]
fn every_subcommand_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for cmd in ["preprocess", "ncp-un", "demo", "denoise", "fskd"] {
        for (out, cache) in [(&a, "cache_a"), (&b, "cache_b")] {
            let o = run(&cfg, cmd, &out.join(cmd), &dir.path().join(cache));
            assert_eq!(
                o.status.code(),
                Some(0),
                "{cmd}: {}",
                String::from_utf8_lossy(&o.stderr)
            );
        }
        let (fa, fb) = (csv_files(&a.join(cmd)), csv_files(&b.join(cmd)));
        assert!(!fa.is_empty(), "{cmd} wrote no CSV");
        let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
        assert!(
            fa.len() == fb.len() && differing.is_empty(),
            "{cmd}: {differing:?} differ"
        );
        let manifest = |d: &std::path::Path| fs::read(d.join(cmd).join("manifest.json")).unwrap();
        assert!(manifest(&a) == manifest(&b), "{cmd}: manifests differ");
    }
    let eval_cfg = tiny_config(
        dir.path(),
        &format!("[eval]\nmaps = [\"{}/ncp-un/maps/*.map\"]\n", a.display()),
    );
    for out in [&a, &b] {
        let o = run(
            &eval_cfg,
            "eval",
            &out.join("eval"),
            &dir.path().join("cache_a"),
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert!(
        csv_files(&a.join("eval")) == csv_files(&b.join("eval")),
        "eval outputs differ"
    );
}

#[test]
fn preprocess_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let cache = dir.path().join("cache");
    let out = dir.path().join("out");
    assert_eq!(run(&cfg, "preprocess", &out, &cache).status.code(), Some(0));
    let stamp = || {
        let mut v: Vec<_> = fs::read_dir(&cache)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name(), e.metadata().unwrap().modified().unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let before = stamp();
    let o = run(&cfg, "preprocess", &out, &cache);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().all(|l| l.ends_with(": cached")), "{stdout}");
    assert_eq!(before, stamp());
}

#[test]
fn preprocess_reports_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = dir.path().join("shapes");
    write_meshes(&shapes, 5);
    fs::write(shapes.join("s2.off"), "OFF\n3 1 0\n0 0 0\n1 0\n").unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 1\n[data]\ninputs = [\"{}/*.off\"]\n[train]\nk = 8\nk_net = 8\n",
            shapes.display()
        ),
    )
    .unwrap();
    let cache = dir.path().join("cache");
    let out = dir.path().join("out");
    let o = run(&cfg, "preprocess", &out, &cache);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("s2.off: failed"));
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 4);
    let report = fs::read_to_string(out.join("preprocess.csv")).unwrap();
    assert_eq!(report.lines().filter(|l| l.contains(",ok,")).count(), 4);
    assert!(report.contains("s2.off,failed"));
}

#[test]
fn cache_hash_tracks_file_content() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = dir.path().join("shapes");
    write_meshes(&shapes, 3);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 1\n[data]\ninputs = [\"{}/*.off\"]\n[train]\nk = 8\nk_net = 8\n",
            shapes.display()
        ),
    )
    .unwrap();
    let cache = dir.path().join("cache");
    let out = dir.path().join("out");
    let hashes = || -> Vec<String> {
        assert_eq!(run(&cfg, "preprocess", &out, &cache).status.code(), Some(0));
        fs::read_to_string(out.join("preprocess.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().to_string())
            .collect()
    };
    let first = hashes();
    assert_eq!(first, hashes());
    let text = fs::read_to_string(shapes.join("s1.off")).unwrap();
    fs::write(shapes.join("s1.off"), format!("{text}\n")).unwrap();
    let changed = hashes();
    assert_eq!(first[0], changed[0]);
    assert_ne!(first[1], changed[1]);
    assert_eq!(first[2], changed[2]);
}

#[test]
fn config_errors_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cache = dir.path().join("cache");
    for (name, extra) in [
        ("typo", "[train]\nlearning_rate = 0.1\n"),
        ("nested", "[fskd]\nnu_ = 0.1\n"),
        ("bad_value", "[train]\nlr = -1.0\n"),
    ] {
        let cfg = tiny_config(dir.path(), extra);
        let o = run(&cfg, "preprocess", &out, &cache);
        assert_eq!(
            o.status.code(),
            Some(1),
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let no_seed = dir.path().join("no_seed.toml");
    fs::write(&no_seed, "[data.synthetic]\nkind = \"bumpy_sphere\"\n").unwrap();
    let o = run(&no_seed, "preprocess", &out, &cache);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    let missing = dir.path().join("missing.toml");
    fs::write(&missing, "seed = 1\n[data]\ninputs = [\"nowhere/*.off\"]\n").unwrap();
    assert_eq!(
        run(&missing, "preprocess", &out, &cache).status.code(),
        Some(1)
    );
}

#[test]
fn demo_writes_one_curve_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = run(&cfg, "demo", &out, &dir.path().join("cache"));
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for p in ["000", "025", "050", "075"] {
        let text = fs::read_to_string(out.join(format!("demo_p{p}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iteration,loss,geodesic_error"));
        let its: Vec<usize> = lines
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert!(!its.is_empty());
        assert!(its.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn ncp_un_metrics_list_each_test_pair_once() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = run(&cfg, "ncp-un", &out, &dir.path().join("cache"));
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    for prov in ["stage1", "stage2"] {
        let mut pairs: Vec<&str> = text
            .lines()
            .skip(1)
            .filter(|l| l.split(',').nth(1) == Some(prov))
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(pairs.len(), 6);
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), 6);
    }
    assert!(out.join("stage2.json").is_file());
}

#[test]
fn set_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_ncp"))
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "demo.noise_levels=[0.5]",
            "demo",
        ])
        .arg("--output-dir")
        .arg(&out)
        .env("NCP_CACHE_DIR", dir.path().join("cache"))
        .output()
        .unwrap();
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(out.join("demo_p050.csv").is_file());
    assert!(!out.join("demo_p000.csv").exists());
}

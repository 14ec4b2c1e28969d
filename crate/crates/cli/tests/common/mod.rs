#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ncp_core::mesh_io::save_shape;
use ncp_core::synth::{synth_base, synth_deform, SynthKind};

/// Small synthetic run: four 100-vertex spheres and a few iterations of
/// everything.
pub fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
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
    fs::write(&path, text).unwrap();
    path
}

pub fn run(config: &Path, cmd: &str, out: &Path, cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncp"))
        .arg("--config")
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .arg(cmd)
        .env("NCP_CACHE_DIR", cache)
        .output()
        .expect("ncp runs")
}

/// Contents of every CSV under `dir`, keyed by relative path.
pub fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// `s0.off`, `s1.off`, ... deformations of one base mesh.
pub fn write_meshes(dir: &Path, n: usize) {
    fs::create_dir_all(dir).unwrap();
    let base = synth_base(SynthKind::BumpySphere, 80, 2).unwrap();
    for i in 0..n {
        let s = synth_deform(SynthKind::BumpySphere, &base, 0.3, i as u64).unwrap();
        save_shape(&s, &dir.join(format!("s{i}.off"))).unwrap();
    }
}

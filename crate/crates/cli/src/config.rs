//! Run configuration: a TOML file, `--set key=value` overrides, and
//! validation of every referenced path.

use std::path::{Path, PathBuf};

use ncp_core::fskd::FskdParams;
use ncp_core::pipeline::TrainConfig;
use ncp_core::synth::SynthKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable that overrides `cache_dir`.
pub const CACHE_ENV: &str = "NCP_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub denoise: DenoiseConfig,
    #[serde(default)]
    pub demo: DemoConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub fskd: FskdConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("ncp-out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    /// No ground truth; metrics are skipped.
    #[default]
    None,
    /// All shapes share one vertex order.
    Identity,
    /// A `<stem>.vts` file next to each shape lists its template index per
    /// vertex, one per line.
    Vts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub kind: SynthKind,
    #[serde(default = "default_n_target")]
    pub n_target: usize,
    #[serde(default = "default_n_shapes")]
    pub n_shapes: usize,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
}

fn default_n_target() -> usize {
    800
}

fn default_n_shapes() -> usize {
    6
}

fn default_magnitude() -> f64 {
    1.5
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Glob patterns of OFF/OBJ/PLY files.
    pub inputs: Vec<String>,
    pub synthetic: Option<SyntheticData>,
    pub gt: GroundTruth,
    /// Shape ids; when both are empty every shape is used for training and
    /// testing.
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseConfig {
    /// Shape ids of the pair; default to the first two shapes.
    pub source: Option<String>,
    pub target: Option<String>,
    /// Noisy map file. Without one, the ground truth corrupted at
    /// `corruption` is used.
    pub map: Option<PathBuf>,
    pub corruption: f64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            source: None,
            target: None,
            map: None,
            corruption: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub source: Option<String>,
    pub target: Option<String>,
    pub noise_levels: Vec<f64>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            source: None,
            target: None,
            noise_levels: vec![0.0, 0.25, 0.5, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Glob patterns of point-map files. A file `<name>.<provenance>.map`
    /// is reported under that provenance, others under `input`.
    pub maps: Vec<String>,
    /// Globs of `<shape id>.labels` files (one class index per vertex) for
    /// label-transfer IoU.
    pub labels: Vec<String>,
    /// PCK thresholds in units of unit-area geodesic distance.
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            maps: Vec::new(),
            labels: Vec::new(),
            thresholds: (0..=20).map(|i| f64::from(i) * 0.005).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FskdConfig {
    pub nu: f64,
    pub sigma: f64,
    pub n_sources: usize,
    /// Globs of keypoint files for labelled shapes.
    pub keypoints: Vec<String>,
    /// Ids of shapes to predict; defaults to every shape without keypoints.
    pub targets: Vec<String>,
    /// Feature network checkpoint; a stage-1 network is trained when absent.
    pub checkpoint: Option<PathBuf>,
    /// For data with known template indices: label this many seeded template
    /// vertices on every shape, using `targets` (or the test split) as the
    /// unlabelled shapes.
    pub synthetic_keypoints: usize,
    /// Geodesic radius at which a predicted keypoint counts as correct.
    pub threshold: f64,
}

impl Default for FskdConfig {
    fn default() -> Self {
        let p = FskdParams::default();
        FskdConfig {
            nu: p.nu,
            sigma: p.sigma,
            n_sources: p.n_sources,
            keypoints: Vec::new(),
            targets: Vec::new(),
            checkpoint: None,
            synthetic_keypoints: 0,
            threshold: 0.05,
        }
    }
}

impl FskdConfig {
    pub fn params(&self) -> FskdParams {
        FskdParams {
            nu: self.nu,
            sigma: self.sigma,
            n_sources: self.n_sources,
        }
    }
}

/// Flag-level overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    /// `dotted.key=value` pairs; values parse as TOML, else as strings.
    pub set: Vec<String>,
}

fn set_path(root: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::Validation(format!("--set expects key=value, got '{assignment}'"))
    })?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("--set {key}: '{p}' is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn resolve_glob(base: &Path, pattern: &str) -> String {
    if Path::new(pattern).is_absolute() {
        pattern.to_string()
    } else {
        base.join(pattern).to_string_lossy().into_owned()
    }
}

/// Sorted files matching the patterns; each pattern must match something.
pub fn expand_globs(patterns: &[String], what: &str) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for pat in patterns {
        let paths = glob::glob(pat)
            .map_err(|e| CliError::Validation(format!("bad {what} pattern '{pat}': {e}")))?;
        let mut found: Vec<PathBuf> = paths
            .filter_map(|p| p.ok())
            .filter(|p| p.is_file())
            .collect();
        if found.is_empty() {
            return Err(CliError::Validation(format!(
                "{what} pattern '{pat}' matches no files"
            )));
        }
        found.sort();
        out.extend(found);
    }
    out.dedup();
    Ok(out)
}

impl RunConfig {
    /// Parses `text`, applies overrides, resolves relative paths against
    /// `base` and validates.
    pub fn from_toml(text: &str, base: &Path, ov: &Overrides) -> CliResult<RunConfig> {
        let mut table: toml::Table = toml::from_str(text)
            .map_err(|e| CliError::Validation(format!("config: {}", e.message())))?;
        for s in &ov.set {
            set_path(&mut table, s)?;
        }
        if let Some(seed) = ov.seed {
            let seed = i64::try_from(seed)
                .map_err(|_| CliError::Validation("seed must fit in i64".into()))?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        if table.get("train").and_then(|t| t.get("seed")).is_some() {
            return Err(CliError::Validation(
                "set the seed at the top level ('seed = ...' or --seed), not in [train]".into(),
            ));
        }
        let mut cfg: RunConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| {
                    CliError::Validation(format!("config: {}", e.message()))
                })?;
        cfg.train.seed = cfg.seed;
        if let Some(d) = &ov.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(d) = &ov.cache_dir {
            cfg.cache_dir = Some(d.clone());
        }
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, ov: &Overrides) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_toml(&text, base, ov)
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.output_dir = resolve(base, &self.output_dir);
        self.cache_dir = self.cache_dir.as_ref().map(|d| resolve(base, d));
        let globs = |v: &mut Vec<String>| v.iter_mut().for_each(|g| *g = resolve_glob(base, g));
        globs(&mut self.data.inputs);
        globs(&mut self.eval.maps);
        globs(&mut self.eval.labels);
        globs(&mut self.fskd.keypoints);
        self.denoise.map = self.denoise.map.as_ref().map(|p| resolve(base, p));
        self.fskd.checkpoint = self.fskd.checkpoint.as_ref().map(|p| resolve(base, p));
    }

    /// Cache directory after the environment override.
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self
                .cache_dir
                .clone()
                .unwrap_or_else(|| self.output_dir.join("cache")),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train
            .validate()
            .map_err(|e| CliError::Validation(format!("[train]: {e}")))?;
        match (&self.data.synthetic, self.data.inputs.is_empty()) {
            (Some(_), false) => {
                return Err(CliError::Validation(
                    "[data]: give either 'inputs' or 'synthetic', not both".into(),
                ))
            }
            (None, true) => {
                return Err(CliError::Validation(
                    "[data]: no 'inputs' and no 'synthetic'".into(),
                ))
            }
            (None, false) => {
                expand_globs(&self.data.inputs, "data.inputs")?;
            }
            (Some(s), true) => {
                if s.n_shapes < 2 {
                    return Err(CliError::Validation(
                        "[data.synthetic]: n_shapes must be >= 2".into(),
                    ));
                }
                if !(s.magnitude >= 0.0) {
                    return Err(CliError::Validation(
                        "[data.synthetic]: magnitude must be >= 0".into(),
                    ));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.denoise.corruption) {
            return Err(CliError::Validation(
                "[denoise]: corruption must lie in [0, 1]".into(),
            ));
        }
        if let Some(p) = &self.denoise.map {
            require_file(p, "denoise.map")?;
        }
        if self
            .demo
            .noise_levels
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(CliError::Validation(
                "[demo]: noise levels must lie in [0, 1]".into(),
            ));
        }
        if !self.eval.maps.is_empty() {
            expand_globs(&self.eval.maps, "eval.maps")?;
        }
        if !self.eval.labels.is_empty() {
            expand_globs(&self.eval.labels, "eval.labels")?;
        }
        if self.eval.thresholds.windows(2).any(|w| w[1] < w[0]) {
            return Err(CliError::Validation(
                "[eval]: thresholds must be ascending".into(),
            ));
        }
        self.fskd
            .params()
            .validate()
            .map_err(|e| CliError::Validation(format!("[fskd]: {e}")))?;
        if !self.fskd.keypoints.is_empty() {
            expand_globs(&self.fskd.keypoints, "fskd.keypoints")?;
        }
        if let Some(p) = &self.fskd.checkpoint {
            require_file(p, "fskd.checkpoint")?;
        }
        if !(self.fskd.threshold > 0.0) {
            return Err(CliError::Validation(
                "[fskd]: threshold must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The configuration without its output and cache locations.
    pub fn portable(&self) -> RunConfig {
        RunConfig {
            output_dir: PathBuf::new(),
            cache_dir: None,
            ..self.clone()
        }
    }

    /// Hash of `portable()`.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.portable()).expect("config serializes");
        ncp_core::spectral::content_hash(&json)
    }
}

fn require_file(p: &Path, key: &str) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "{key}: {} does not exist",
            p.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "seed = 3\n[data.synthetic]\nkind = \"bumpy_sphere\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_toml(MIN, Path::new("/tmp"), &Overrides::default()).unwrap();
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!(c.fskd.nu, 0.05);
        assert_eq!(c.output_dir, PathBuf::from("/tmp/ncp-out"));
    }

    #[test]
    fn seed_is_mandatory() {
        let text = "[data.synthetic]\nkind = \"bumpy_sphere\"\n";
        let err = RunConfig::from_toml(text, Path::new("."), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        let ov = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        assert_eq!(
            RunConfig::from_toml(text, Path::new("."), &ov)
                .unwrap()
                .seed,
            9
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            format!("{MIN}[train]\nlearning_rate = 0.1\n"),
            format!("{MIN}[train.augment]\nrotat = true\n"),
            format!("sed = 1\n{MIN}"),
        ] {
            let err =
                RunConfig::from_toml(&text, Path::new("."), &Overrides::default()).unwrap_err();
            assert!(matches!(err, CliError::Validation(_)));
        }
    }

    #[test]
    fn set_overrides_nested_keys() {
        let ov = Overrides {
            set: vec![
                "train.lr=0.01".into(),
                "train.stage2_loss=nce".into(),
                "demo.noise_levels=[0.5]".into(),
            ],
            ..Overrides::default()
        };
        let c = RunConfig::from_toml(MIN, Path::new("."), &ov).unwrap();
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.train.stage2_loss, ncp_core::pipeline::Stage2Loss::Nce);
        assert_eq!(c.demo.noise_levels, vec![0.5]);
    }

    #[test]
    fn hash_ignores_locations_only() {
        let a = RunConfig::from_toml(MIN, Path::new("/a"), &Overrides::default()).unwrap();
        let b = RunConfig::from_toml(MIN, Path::new("/b"), &Overrides::default()).unwrap();
        assert_eq!(a.hash(), b.hash());
        let ov = Overrides {
            seed: Some(4),
            ..Overrides::default()
        };
        assert_ne!(
            a.hash(),
            RunConfig::from_toml(MIN, Path::new("/a"), &ov)
                .unwrap()
                .hash()
        );
    }

    #[test]
    fn seed_inside_train_is_rejected() {
        let text = format!("{MIN}[train]\nseed = 1\n");
        assert!(RunConfig::from_toml(&text, Path::new("."), &Overrides::default()).is_err());
    }
}

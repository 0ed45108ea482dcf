//! End-to-end runs: load the three sources, scale, select verbs, merge, bin,
//! test and classify, then write every report plus a manifest that pins the
//! run down.
//!
//! Configuration is a flat TOML file. Relative paths are resolved against
//! the file's directory. Any key can be overridden with `key=value` pairs,
//! which is how the command line applies its flags.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binning::{bin_equal_count, BinRule, BinnedSeries, BinningOptions, LogBase};
use crate::error::{Error, Result};
use crate::fit::{fit_test, reports_to_tsv, FitReport};
use crate::ingest::{
    estimate_scaling_constant, load_counts, load_intransitive, load_rel_freqs, merge_sources, scale_to_counts,
    select_target_verbs, write_counts, CountRecord, ScalingEstimate, ScalingMode, SourceRanges, SourceSets,
    Strictness, YearRange,
};
use crate::tsc::{classifications_to_tsv, classify, sha256_hex, Hyperparams, TrainingConfig, TscModel};

pub const LOCK_FILE: &str = ".driftsel.lock";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FIT_REPORT_FILE: &str = "fit_report.tsv";
pub const CLASSIFICATION_FILE: &str = "classification.tsv";
pub const MERGED_FILE: &str = "merged_counts.tsv";
pub const SERIES_DIR: &str = "series";
pub const TRAINED_MODEL_FILE: &str = "model.tsc";

/// Config file contents; every key is optional until resolution.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    eebo: Option<String>,
    coha: Option<String>,
    gbooks: Option<String>,
    intransitive: Option<String>,
    output_dir: Option<String>,
    model: Option<String>,
    eebo_range: Option<String>,
    gbooks_range: Option<String>,
    coha_range: Option<String>,
    overlap: Option<String>,
    scaling_mode: Option<String>,
    lenient: Option<bool>,
    min_count: Option<u64>,
    min_be_share: Option<f64>,
    group_b: Option<Vec<String>>,
    binning_rule: Option<String>,
    log_base: Option<String>,
    alpha: Option<f64>,
    train_samples_per_class: Option<usize>,
    train_series_len: Option<usize>,
    train_data_seed: Option<u64>,
    train_binning_mirror: Option<bool>,
    train_epochs: Option<usize>,
    train_batch_size: Option<usize>,
    train_learning_rate: Option<f64>,
    train_seed: Option<u64>,
}

/// Fully resolved pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub eebo: PathBuf,
    pub coha: PathBuf,
    pub gbooks: PathBuf,
    pub intransitive: PathBuf,
    pub output_dir: PathBuf,
    /// Pretrained classifier; when absent one is trained from `training`.
    pub model: Option<PathBuf>,
    pub ranges: SourceRanges,
    pub overlap: YearRange,
    pub scaling_mode: ScalingMode,
    pub strictness: Strictness,
    pub min_count: u64,
    pub min_be_share: f64,
    /// Verbs analysed without the frequency filters, reported as group B.
    pub group_b: Vec<String>,
    pub binning: BinningOptions,
    pub alpha: f64,
    pub training: TrainingConfig,
    pub hyperparams: Hyperparams,
}

pub const DEFAULT_OVERLAP: YearRange = YearRange::new(1810, 2000);
pub const DEFAULT_MIN_COUNT: u64 = 200;
pub const DEFAULT_MIN_BE_SHARE: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.05;

fn parse_with<T>(key: &str, value: Option<String>, default: T, parse: impl Fn(&str) -> Result<T, String>) -> Result<T> {
    match value {
        None => Ok(default),
        Some(v) => parse(&v).map_err(|e| Error::Config(format!("{key}: {e}"))),
    }
}

fn from_str<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

/// Parse one `key=value` override into a TOML table entry. Values that are
/// not valid TOML are taken as bare strings.
fn parse_override(pair: &str) -> Result<(String, toml::Value)> {
    let (key, value) = pair
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{pair}` is not of the form key=value")))?;
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

impl PipelineConfig {
    /// Parse config text; `base` anchors relative paths.
    pub fn from_toml(text: &str, base: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for pair in overrides {
            let (key, value) = parse_override(pair)?;
            table.insert(key, value);
        }
        let raw: RawConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::resolve(raw, base)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, overrides)
    }

    fn resolve(raw: RawConfig, base: &Path) -> Result<Self> {
        let path = |key: &str, v: Option<String>| -> Result<PathBuf> {
            let v = v.ok_or_else(|| Error::Config(format!("missing required key `{key}`")))?;
            Ok(base.join(v))
        };
        let defaults = SourceRanges::default();
        let ranges = SourceRanges {
            eebo: parse_with("eebo_range", raw.eebo_range, defaults.eebo, from_str)?,
            gbooks: parse_with("gbooks_range", raw.gbooks_range, defaults.gbooks, from_str)?,
            coha: parse_with("coha_range", raw.coha_range, defaults.coha, from_str)?,
        };
        let mut training = TrainingConfig::default();
        training.samples_per_class = raw.train_samples_per_class.unwrap_or(training.samples_per_class);
        training.series_len = raw.train_series_len.unwrap_or(training.series_len);
        training.seed = raw.train_data_seed.unwrap_or(training.seed);
        training.binning_mirror = raw.train_binning_mirror.unwrap_or(training.binning_mirror);
        let mut hyperparams = Hyperparams::default();
        hyperparams.epochs = raw.train_epochs.unwrap_or(hyperparams.epochs);
        hyperparams.batch_size = raw.train_batch_size.unwrap_or(hyperparams.batch_size);
        hyperparams.learning_rate = raw.train_learning_rate.unwrap_or(hyperparams.learning_rate);
        hyperparams.seed = raw.train_seed.unwrap_or(hyperparams.seed);

        let config = PipelineConfig {
            eebo: path("eebo", raw.eebo)?,
            coha: path("coha", raw.coha)?,
            gbooks: path("gbooks", raw.gbooks)?,
            intransitive: path("intransitive", raw.intransitive)?,
            output_dir: path("output_dir", raw.output_dir)?,
            model: raw.model.map(|m| base.join(m)),
            ranges,
            overlap: parse_with("overlap", raw.overlap, DEFAULT_OVERLAP, from_str)?,
            scaling_mode: parse_with("scaling_mode", raw.scaling_mode, ScalingMode::default(), from_str)?,
            strictness: if raw.lenient.unwrap_or(false) { Strictness::Lenient } else { Strictness::Strict },
            min_count: raw.min_count.unwrap_or(DEFAULT_MIN_COUNT),
            min_be_share: raw.min_be_share.unwrap_or(DEFAULT_MIN_BE_SHARE),
            group_b: raw.group_b.unwrap_or_default().into_iter().map(|v| v.to_lowercase()).collect(),
            binning: BinningOptions {
                rule: parse_with("binning_rule", raw.binning_rule, BinRule::default(), from_str)?,
                base: parse_with("log_base", raw.log_base, LogBase::default(), from_str)?,
            },
            alpha: raw.alpha.unwrap_or(DEFAULT_ALPHA),
            training,
            hyperparams,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let mut paths = vec![&self.eebo, &self.coha, &self.gbooks, &self.intransitive, &self.output_dir];
        paths.extend(self.model.as_ref());
        let distinct: BTreeSet<_> = paths.iter().collect();
        if distinct.len() != paths.len() {
            return Err(Error::Config("input, model and output paths must be distinct".into()));
        }
        self.ranges.validate()?;
        if self.overlap.is_empty() {
            return Err(Error::Config(format!("empty overlap range {}", self.overlap)));
        }
        if self.min_count < 1 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_be_share) {
            return Err(Error::Config(format!("min_be_share {} outside [0, 1]", self.min_be_share)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.model.is_none() {
            self.training.validate()?;
            self.hyperparams.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerbSummary {
    pub verb: String,
    pub group: String,
    pub tokens: u64,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    /// `file` or `trained`.
    pub origin: String,
    pub sha256: String,
    pub training_config_hash: String,
    pub data_seed: u64,
    pub train_seed: u64,
}

/// Everything needed to repeat a run. Contains no timestamps, so equal
/// inputs give an identical manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub inputs: Vec<InputDigest>,
    pub scaling: ScalingEstimate,
    pub rows_dropped_in_merge: usize,
    pub verbs: Vec<VerbSummary>,
    pub model: ModelInfo,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub series: Vec<BinnedSeries>,
    pub fit: Vec<FitReport>,
    pub classification_tsv: String,
    pub manifest: Manifest,
}

/// Exclusive claim on an output directory, released on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::io(
                &path,
                std::io::Error::new(e.kind(), "another run holds this output directory"),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(InputDigest { path: path.to_path_buf(), sha256: sha256_hex(&bytes) })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Run every stage and write the reports into `config.output_dir`.
pub fn run(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let out_dir = &config.output_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e).in_stage("output"))?;
    let _lock = DirLock::acquire(out_dir).map_err(|e| e.in_stage("output"))?;

    let stage = |name: &'static str| move |e: Error| e.in_stage(name);
    let eebo = load_counts(&config.eebo, config.strictness).map_err(stage("load"))?.records;
    let coha = load_counts(&config.coha, config.strictness).map_err(stage("load"))?.records;
    let gbooks = load_rel_freqs(&config.gbooks, config.strictness).map_err(stage("load"))?.records;
    let intransitive = load_intransitive(&config.intransitive).map_err(stage("load"))?;
    let inputs = [&config.eebo, &config.coha, &config.gbooks, &config.intransitive]
        .into_iter()
        .map(|p| digest(p))
        .collect::<Result<Vec<_>>>()
        .map_err(stage("load"))?;

    let scaling =
        estimate_scaling_constant(&coha, &gbooks, config.overlap, config.scaling_mode).map_err(stage("scaling"))?;
    let gbooks_counts = scale_to_counts(&gbooks, &scaling, config.ranges.gbooks).map_err(stage("scaling"))?;

    let in_range = |rows: &[CountRecord], span: YearRange| -> Vec<CountRecord> {
        rows.iter().filter(|r| span.contains(r.year)).cloned().collect()
    };
    let eebo_span = in_range(&eebo, config.ranges.eebo);
    let coha_span = in_range(&coha, config.ranges.coha);
    let sets = SourceSets { eebo: &eebo_span, gbooks: &gbooks_counts, coha: &coha_span };
    let group_b: BTreeSet<String> = config.group_b.iter().cloned().collect();
    let group_a: Vec<String> = select_target_verbs(sets, &intransitive, config.min_count, config.min_be_share)
        .map_err(stage("select"))?
        .into_iter()
        .filter(|v| !group_b.contains(v))
        .collect();
    let targets: Vec<(String, &str)> =
        group_a.into_iter().map(|v| (v, "A")).chain(group_b.iter().map(|v| (v.clone(), "B"))).collect();
    if targets.is_empty() {
        return Err(Error::NoTargetVerbs.in_stage("select"));
    }

    let merged = merge_sources(&eebo, &gbooks_counts, &coha, &config.ranges);
    let mut series = Vec::with_capacity(targets.len());
    let mut verbs = Vec::with_capacity(targets.len());
    for (verb, group) in &targets {
        let rows: Vec<CountRecord> = merged.records.iter().filter(|r| &r.verb == verb).cloned().collect();
        let s = bin_equal_count(&rows, &config.binning)
            .map_err(|e| Error::SeriesTooSmall(format!("{verb}: {e}")).in_stage("bin"))?;
        verbs.push(VerbSummary { verb: verb.clone(), group: group.to_string(), tokens: s.total_tokens, bins: s.len() });
        series.push(s);
    }

    let fit = series
        .iter()
        .map(|s| fit_test(s, config.alpha).map_err(|e| Error::DegenerateSeries(format!("{}: {e}", s.verb))))
        .collect::<Result<Vec<_>>>()
        .map_err(stage("fit"))?;

    let (model, model_info) = match &config.model {
        Some(path) => {
            let model = TscModel::load(path).map_err(stage("model"))?;
            let info = ModelInfo {
                origin: "file".into(),
                sha256: digest(path).map_err(stage("model"))?.sha256,
                training_config_hash: model.metadata.config_hash.clone(),
                data_seed: model.metadata.config.seed,
                train_seed: model.metadata.hyperparams.seed,
            };
            (model, info)
        }
        None => {
            let model = TscModel::train_from_config(&config.training, &config.hyperparams).map_err(stage("model"))?;
            let text = model.to_text();
            write(&out_dir.join(TRAINED_MODEL_FILE), &text).map_err(stage("model"))?;
            let info = ModelInfo {
                origin: "trained".into(),
                sha256: sha256_hex(text.as_bytes()),
                training_config_hash: model.metadata.config_hash.clone(),
                data_seed: config.training.seed,
                train_seed: config.hyperparams.seed,
            };
            (model, info)
        }
    };

    let classified = series
        .iter()
        .zip(&targets)
        .map(|(s, (_, group))| classify(&model, s).map(|c| (c, group.to_string())))
        .collect::<Result<Vec<_>>>()
        .map_err(stage("classify"))?;
    let classification_tsv = classifications_to_tsv(&classified);

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash(),
        config: config.clone(),
        inputs,
        scaling,
        rows_dropped_in_merge: merged.dropped,
        verbs,
        model: model_info,
    };

    let write_all = || -> Result<()> {
        let series_dir = out_dir.join(SERIES_DIR);
        fs::create_dir_all(&series_dir).map_err(|e| Error::io(&series_dir, e))?;
        for s in &series {
            write(&series_dir.join(format!("{}.tsv", s.verb)), &s.to_tsv())?;
        }
        write(&out_dir.join(MERGED_FILE), &write_counts(&merged.records))?;
        write(&out_dir.join(FIT_REPORT_FILE), &reports_to_tsv(&fit))?;
        write(&out_dir.join(CLASSIFICATION_FILE), &classification_tsv)?;
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write(&out_dir.join(MANIFEST_FILE), &(json + "\n"))
    };
    write_all().map_err(stage("output"))?;

    Ok(PipelineOutput { series, fit, classification_tsv, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        eebo = "e.tsv"
        coha = "c.tsv"
        gbooks = "g.tsv"
        intransitive = "i.txt"
        output_dir = "out"
    "#;

    #[test]
    fn defaults_fill_in() {
        let c = PipelineConfig::from_toml(MINIMAL, Path::new("/data"), &[]).unwrap();
        assert_eq!(c.eebo, PathBuf::from("/data/e.tsv"));
        assert_eq!(c.min_count, 200);
        assert_eq!(c.min_be_share, 0.5);
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.overlap, YearRange::new(1810, 2000));
        assert_eq!(c.ranges, SourceRanges::default());
        assert!(c.model.is_none());
    }

    #[test]
    fn overrides_win() {
        let overrides = vec!["min_count=30".to_string(), "scaling_mode=per-verb".into(), "group_b=[\"Go\"]".into()];
        let c = PipelineConfig::from_toml(MINIMAL, Path::new("."), &overrides).unwrap();
        assert_eq!(c.min_count, 30);
        assert_eq!(c.scaling_mode, ScalingMode::PerVerb);
        assert_eq!(c.group_b, vec!["go".to_string()]);
    }

    #[test]
    fn bad_configs_are_usage_errors() {
        let cases = [
            format!("{MINIMAL}\nalpha = 1.5"),
            format!("{MINIMAL}\nmin_be_share = -0.1"),
            format!("{MINIMAL}\nunknown_key = 3"),
            format!("{MINIMAL}\nmodel = \"e.tsv\""),
            format!("{MINIMAL}\neebo_range = \"1700-1600\""),
            "eebo = \"e.tsv\"".to_string(),
        ];
        for text in cases {
            let err = PipelineConfig::from_toml(&text, Path::new("."), &[]).unwrap_err();
            assert!(err.is_usage(), "{text}: {err}");
        }
        assert!(PipelineConfig::from_toml(MINIMAL, Path::new("."), &["nonsense".into()]).unwrap_err().is_usage());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::from_toml(MINIMAL, Path::new("."), &[]).unwrap();
        let b = PipelineConfig::from_toml(MINIMAL, Path::new("."), &["alpha=0.01".into()]).unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }
}

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use driftsel::binning::{bin_equal_count, parse_series, series_to_tsv, BinRule, BinningOptions, LogBase};
use driftsel::fit::{fit_test, reports_to_tsv};
use driftsel::ingest::{
    estimate_scaling_constant, load_counts, load_intransitive, load_rel_freqs, merge_sources, scale_to_counts,
    select_target_verbs, write_counts, CountRecord, ScalingMode, SourceRanges, SourceSets, Strictness, YearRange,
};
use driftsel::pipeline::{self, PipelineConfig};
use driftsel::tsc::{classifications_to_tsv, classify, Hyperparams, TrainingConfig, TscModel};
use driftsel::wf::{simulate, WfParams};
use driftsel::{Error, Result};

#[derive(Parser)]
#[command(name = "driftsel", version, about = "Drift versus selection in two-variant frequency series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one Wright-Fisher trajectory.
    Simulate(SimulateArgs),
    /// Scale the ratio source, select target verbs and merge the sources.
    Ingest(IngestArgs),
    /// Bin merged counts into per-verb frequency series.
    Bin(BinArgs),
    /// Run the frequency increment test on binned series.
    Fit(FitArgs),
    /// Simulate a training set and train the classifier.
    TscTrain(TrainArgs),
    /// Classify binned series with a trained model.
    Classify(ClassifyArgs),
    /// Run every stage from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Population size.
    #[arg(long)]
    n: u64,
    /// Selection coefficient of the focal variant.
    #[arg(long, allow_negative_numbers = true)]
    s: f64,
    /// Initial frequency.
    #[arg(long)]
    x0: f64,
    /// Generations.
    #[arg(long)]
    t: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    eebo: PathBuf,
    #[arg(long)]
    coha: PathBuf,
    #[arg(long)]
    gbooks: PathBuf,
    #[arg(long)]
    intransitive: PathBuf,
    /// Directory for merged_counts.tsv, targets.txt and scaling.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "1810-2000")]
    overlap: YearRange,
    #[arg(long, default_value = "1473-1700")]
    eebo_range: YearRange,
    #[arg(long, default_value = "1701-1809")]
    gbooks_range: YearRange,
    #[arg(long, default_value = "1810-2009")]
    coha_range: YearRange,
    #[arg(long, default_value = "pooled")]
    scaling_mode: ScalingMode,
    #[arg(long, default_value_t = pipeline::DEFAULT_MIN_COUNT)]
    min_count: u64,
    #[arg(long, default_value_t = pipeline::DEFAULT_MIN_BE_SHARE)]
    min_be_share: f64,
    /// Skip malformed rows instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct BinArgs {
    /// Count table, e.g. merged_counts.tsv.
    #[arg(long)]
    counts: PathBuf,
    /// Verbs to bin; every verb in the table when omitted.
    #[arg(long = "verb")]
    verbs: Vec<String>,
    #[arg(long, default_value = "log-bins")]
    rule: BinRule,
    #[arg(long, default_value = "e")]
    base: LogBase,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Series table produced by `bin`.
    #[arg(long)]
    series: PathBuf,
    #[arg(long, default_value_t = pipeline::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Metrics JSON; defaults to the model path with `.metrics.json` appended.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    series_len: Option<usize>,
    #[arg(long)]
    n_min: Option<u64>,
    #[arg(long)]
    n_max: Option<u64>,
    #[arg(long)]
    t_min: Option<u64>,
    #[arg(long)]
    t_max: Option<u64>,
    #[arg(long)]
    s_min: Option<f64>,
    #[arg(long)]
    s_max: Option<f64>,
    /// Seed of the simulated training set.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Feed simulations to the network without token sampling and binning.
    #[arg(long)]
    no_binning_mirror: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Seed for initialization, splitting and shuffling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Series table produced by `bin`.
    #[arg(long)]
    series: PathBuf,
    /// Group label written in the report.
    #[arg(long, default_value = "A")]
    group: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pretrained model, overriding the config.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Override any config key, e.g. `--set min_count=30`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Io { path: "<stdout>".into(), source: e }),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    emit(Some(path), text)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let params = WfParams {
        population_size: a.n,
        selection_coeff: a.s,
        initial_freq: a.x0,
        generations: a.t,
        seed: a.seed,
    };
    emit(a.out.as_deref(), &simulate(&params)?.to_tsv())
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let strictness = if a.lenient { Strictness::Lenient } else { Strictness::Strict };
    let ranges = SourceRanges { eebo: a.eebo_range, gbooks: a.gbooks_range, coha: a.coha_range };
    ranges.validate()?;
    let eebo = load_counts(&a.eebo, strictness)?;
    let coha = load_counts(&a.coha, strictness)?;
    let gbooks = load_rel_freqs(&a.gbooks, strictness)?;
    for (path, n) in [(&a.eebo, eebo.rejected.len()), (&a.coha, coha.rejected.len()), (&a.gbooks, gbooks.rejected.len())] {
        if n > 0 {
            eprintln!("warning: {}: skipped {n} malformed row(s)", path.display());
        }
    }
    let intransitive = load_intransitive(&a.intransitive)?;
    let scaling = estimate_scaling_constant(&coha.records, &gbooks.records, a.overlap, a.scaling_mode)?;
    let gbooks_counts = scale_to_counts(&gbooks.records, &scaling, ranges.gbooks)?;
    let in_range = |rows: &[CountRecord], span: YearRange| -> Vec<CountRecord> {
        rows.iter().filter(|r| span.contains(r.year)).cloned().collect()
    };
    let eebo_span = in_range(&eebo.records, ranges.eebo);
    let coha_span = in_range(&coha.records, ranges.coha);
    let sets = SourceSets { eebo: &eebo_span, gbooks: &gbooks_counts, coha: &coha_span };
    let targets = select_target_verbs(sets, &intransitive, a.min_count, a.min_be_share)?;
    let merged = merge_sources(&eebo.records, &gbooks_counts, &coha.records, &ranges);
    if merged.dropped > 0 {
        eprintln!("warning: dropped {} row(s) outside their source's year range", merged.dropped);
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    write_file(&a.out.join("merged_counts.tsv"), &write_counts(&merged.records))?;
    let list: String = targets.iter().map(|v| format!("{v}\n")).collect();
    write_file(&a.out.join("targets.txt"), &list)?;
    let json = serde_json::to_string_pretty(&scaling).expect("estimate serializes");
    write_file(&a.out.join("scaling.json"), &(json + "\n"))?;
    if targets.is_empty() {
        return Err(Error::NoTargetVerbs);
    }
    Ok(())
}

fn cmd_bin(a: BinArgs) -> Result<()> {
    let records = load_counts(&a.counts, Strictness::Strict)?.records;
    let verbs: Vec<String> = if a.verbs.is_empty() {
        let mut v: Vec<String> = records.iter().map(|r| r.verb.clone()).collect();
        v.dedup();
        v
    } else {
        a.verbs.iter().map(|v| v.to_lowercase()).collect()
    };
    let options = BinningOptions { rule: a.rule, base: a.base };
    let series = verbs
        .iter()
        .map(|verb| {
            let rows: Vec<CountRecord> = records.iter().filter(|r| &r.verb == verb).cloned().collect();
            bin_equal_count(&rows, &options).map_err(|e| Error::SeriesTooSmall(format!("{verb}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    emit(a.out.as_deref(), &series_to_tsv(&series))
}

fn read_series(path: &Path) -> Result<Vec<driftsel::binning::BinnedSeries>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    parse_series(&text)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha {} outside (0, 1)", a.alpha)));
    }
    let reports = read_series(&a.series)?
        .iter()
        .map(|s| fit_test(s, a.alpha).map_err(|e| Error::DegenerateSeries(format!("{}: {e}", s.verb))))
        .collect::<Result<Vec<_>>>()?;
    emit(a.out.as_deref(), &reports_to_tsv(&reports))
}

fn cmd_tsc_train(a: TrainArgs) -> Result<()> {
    let mut config = TrainingConfig::default();
    let mut hyper = Hyperparams::default();
    config.samples_per_class = a.samples_per_class.unwrap_or(config.samples_per_class);
    config.series_len = a.series_len.unwrap_or(config.series_len);
    config.n_range = (a.n_min.unwrap_or(config.n_range.0), a.n_max.unwrap_or(config.n_range.1));
    config.t_range = (a.t_min.unwrap_or(config.t_range.0), a.t_max.unwrap_or(config.t_range.1));
    config.s_range = (a.s_min.unwrap_or(config.s_range.0), a.s_max.unwrap_or(config.s_range.1));
    config.seed = a.data_seed.unwrap_or(config.seed);
    config.binning_mirror = !a.no_binning_mirror;
    hyper.epochs = a.epochs.unwrap_or(hyper.epochs);
    hyper.batch_size = a.batch_size.unwrap_or(hyper.batch_size);
    hyper.learning_rate = a.learning_rate.unwrap_or(hyper.learning_rate);
    hyper.seed = a.seed.unwrap_or(hyper.seed);
    config.validate()?;
    hyper.validate()?;

    let model = TscModel::train_from_config(&config, &hyper)?;
    model.save(&a.out)?;
    let metrics_path = a.metrics.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".metrics.json");
        PathBuf::from(p)
    });
    let m = &model.metadata;
    let metrics = serde_json::json!({
        "validation_accuracy": m.validation_accuracy,
        "best_epoch": m.best_epoch,
        "epochs": m.epochs,
        "redraws": m.redraws,
        "config_hash": m.config_hash,
        "history": m.history,
    });
    let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    write_file(&metrics_path, &(text + "\n"))?;
    eprintln!(
        "validation accuracy {:.4} (best epoch {} of {})",
        m.validation_accuracy,
        m.best_epoch + 1,
        m.epochs
    );
    Ok(())
}

fn cmd_classify(a: ClassifyArgs) -> Result<()> {
    let model = TscModel::load(&a.model)?;
    let rows = read_series(&a.series)?
        .iter()
        .map(|s| classify(&model, s).map(|c| (c, a.group.clone())))
        .collect::<Result<Vec<_>>>()?;
    emit(a.out.as_deref(), &classifications_to_tsv(&rows))
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let mut overrides = a.overrides;
    let cwd = std::env::current_dir().map_err(|e| Error::Io { path: ".".into(), source: e })?;
    // flag paths are relative to the working directory, not the config file
    if let Some(out) = a.out {
        overrides.push(format!("output_dir={:?}", cwd.join(out)));
    }
    if let Some(model) = a.model {
        overrides.push(format!("model={:?}", cwd.join(model)));
    }
    let config = PipelineConfig::load(&a.config, &overrides)?;
    let out = pipeline::run(&config)?;
    eprintln!(
        "{} verb(s); reports in {}",
        out.manifest.verbs.len(),
        config.output_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Bin(a) => cmd_bin(a),
        Command::Fit(a) => cmd_fit(a),
        Command::TscTrain(a) => cmd_tsc_train(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

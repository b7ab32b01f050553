//! The `revise` command line: synthesize or ingest data, train models,
//! search for recourse, audit and report.

mod records;
mod rows;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use revise_core::adam::AdamConfig;
use revise_core::audit::{
    confounding_audit, flip_table, render_recourse_table, AuditReport, TableColumn, TableFormat,
};
use revise_core::causal::{estimate_ate, train_causal, CausalModelConfig};
use revise_core::classifier::{accuracy_against, train_classifier_on, Architecture, ClassifierConfig, Classifier};
use revise_core::data::{
    split_indices, synth_aux_confounded, synth_causal, synth_classification, CausalConfig, ClassificationConfig,
    Dataset, Encoder, GroundTruth, Label, Schema,
};
use revise_core::persist::{load_model, save_model, PersistedModel};
use revise_core::revise::{ensure_same_encoding, lambda_sweep_batch, lambda_sweep_causal, CostKind, ReviseConfig, SweepOutcome};
use revise_core::vae::{train_vae, VaeConfig};
use revise_core::{Error, ErrorCategory, Result};

pub use rows::parse_rows;

/// Environment variable consulted when a command gets no `--seed`.
pub const SEED_ENV: &str = "REVISE_SEED";

#[derive(Parser, Debug)]
#[command(name = "revise", version, about = "Latent-space recourse for classifiers and causal models")]
struct Cli {
    /// Worker threads for recourse search (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Split a dataset into train, validation and test files.
    Split(SplitArgs),
    /// Train a target classifier.
    TrainClf(TrainClfArgs),
    /// Train a heterogeneous VAE.
    TrainVae(TrainVaeArgs),
    /// Train a causal latent model on treatment/outcome data.
    TrainCausal(TrainCausalArgs),
    /// Search for recourse against a classifier.
    Revise(ReviseArgs),
    /// Search for recourse under an intervention on the treatment.
    ReviseCausal(ReviseCausalArgs),
    /// Count how often recourse flips a reference classifier.
    AuditConfounding(AuditArgs),
    /// Summarize a revise report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthOut {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    schema_out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Two labeled Gaussian blobs with mixed-type columns.
    Classification {
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        dims: usize,
        #[arg(long, default_value_t = 3.0)]
        margin: f64,
        #[arg(long)]
        no_nuisance: bool,
        #[command(flatten)]
        out: SynthOut,
    },
    /// Treatment/outcome data with known potential outcomes.
    Causal {
        #[arg(long, default_value_t = 20000)]
        n: usize,
        #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
        tau: f64,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        confounded: bool,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long)]
        truth_out: Option<PathBuf>,
        #[command(flatten)]
        out: SynthOut,
    },
    /// Labels with an auxiliary attribute tied to them with probability `bias`.
    AuxConfounded {
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        bias: f64,
        #[arg(long)]
        truth_out: Option<PathBuf>,
        #[command(flatten)]
        out: SynthOut,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[command(flatten)]
    input: DataArgs,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.6,0.2,0.2")]
    fractions: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    val_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainCommon {
    #[command(flatten)]
    input: DataArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Reuse the encoding statistics stored in this model file.
    #[arg(long)]
    features_from: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Arch {
    Linear,
    Mlp,
}

#[derive(Args, Debug)]
struct TrainClfArgs {
    #[command(flatten)]
    common: TrainCommon,
    #[arg(long, value_enum, default_value_t = Arch::Linear)]
    arch: Arch,
    /// Hidden widths of the MLP.
    #[arg(long, default_value = "32,32,32")]
    hidden: String,
    /// Weight of the L1 penalty on weights.
    #[arg(long, default_value_t = 0.0)]
    l1: f64,
    /// Train on a binary categorical attribute instead of the label.
    #[arg(long)]
    label_from: Option<String>,
}

#[derive(Args, Debug)]
struct TrainVaeArgs {
    #[command(flatten)]
    common: TrainCommon,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "64")]
    hidden: String,
    /// Condition the decoder on the immutable attributes.
    #[arg(long)]
    conditional: bool,
}

#[derive(Args, Debug)]
struct TrainCausalArgs {
    #[command(flatten)]
    common: TrainCommon,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value = "64")]
    hidden: String,
    #[arg(long, default_value = "16")]
    head_hidden: String,
    /// Additional attributes to treat as immutable.
    #[arg(long, value_delimiter = ',')]
    immutable: Vec<String>,
    /// Dataset on which to report the estimated average treatment effect.
    #[arg(long)]
    eval_data: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Tsv,
    Markdown,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Tsv => TableFormat::Tsv,
            Format::Markdown => TableFormat::Markdown,
        }
    }
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    input: DataArgs,
    /// Rows to revise, e.g. `0..99` or `3,7,12` (inclusive ranges).
    #[arg(long)]
    rows: Option<String>,
    #[arg(long, default_value = "10,1,0.1,1e-2,1e-3,1e-5")]
    lambda_grid: String,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 500)]
    tau_max: usize,
    #[arg(long, default_value = "l1-mad")]
    cost: String,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a per-row table of proposed changes.
    #[arg(long)]
    table_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReviseArgs {
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    clf: PathBuf,
    #[arg(long)]
    vae: PathBuf,
    /// Desired label, `1` or `-1`.
    #[arg(long, default_value = "1", allow_hyphen_values = true)]
    target: String,
}

#[derive(Args, Debug)]
struct ReviseCausalArgs {
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    model: PathBuf,
    /// Treatment value imposed by the intervention.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=1))]
    do_t: u8,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[command(flatten)]
    input: DataArgs,
    /// Target classifier as `name=path`; repeat for each.
    #[arg(long = "target", required = true)]
    targets: Vec<String>,
    /// Classifier whose label changes are counted.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    vae: PathBuf,
    #[arg(long)]
    rows: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 500)]
    tau_max: usize,
    #[arg(long, default_value = "l1-mad")]
    cost: String,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// A report written by `revise` or `revise-causal`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 for usage errors, 2 for data errors, 3 for numeric failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e.category() {
                ErrorCategory::Usage => 1,
                ErrorCategory::Data => 2,
                ErrorCategory::Numeric => 3,
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::config("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("cannot start thread pool: {e}")))?
            .install(|| dispatch(cli.command)),
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(c) => synth(c),
        Command::Split(a) => split(a),
        Command::TrainClf(a) => train_clf(a),
        Command::TrainVae(a) => train_vae_cmd(a),
        Command::TrainCausal(a) => train_causal_cmd(a),
        Command::Revise(a) => revise_cmd(a),
        Command::ReviseCausal(a) => revise_causal_cmd(a),
        Command::AuditConfounding(a) => audit_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

/// `--seed`, else `REVISE_SEED`, else 0.
fn resolve_seed(arg: Option<u64>) -> Result<u64> {
    if let Some(s) = arg {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| Error::config(format!("invalid {what} '{p}'"))))
        .collect()
}

fn write_synth(out: &SynthOut, data: &Dataset, truth: Option<(&GroundTruth, &Option<PathBuf>)>) -> Result<()> {
    data.write_csv(&out.out)?;
    if let Some(p) = &out.schema_out {
        write_file(p, &data.schema().to_text())?;
    }
    if let Some((t, Some(p))) = truth {
        t.write_csv(p)?;
    }
    Ok(())
}

fn synth(c: SynthCommand) -> Result<()> {
    match c {
        SynthCommand::Classification {
            n,
            dims,
            margin,
            no_nuisance,
            out,
        } => {
            let config = ClassificationConfig {
                dims,
                margin,
                nuisance: !no_nuisance,
            };
            let data = synth_classification(n, config, resolve_seed(out.seed)?)?;
            write_synth(&out, &data, None)
        }
        SynthCommand::Causal {
            n,
            tau,
            k,
            confounded,
            noise,
            truth_out,
            out,
        } => {
            let config = CausalConfig {
                k,
                tau,
                confounded,
                noise,
            };
            let (data, truth) = synth_causal(n, config, resolve_seed(out.seed)?)?;
            write_synth(&out, &data, Some((&truth, &truth_out)))
        }
        SynthCommand::AuxConfounded { n, bias, truth_out, out } => {
            let (data, truth) = synth_aux_confounded(n, bias, resolve_seed(out.seed)?)?;
            write_synth(&out, &data, Some((&truth, &truth_out)))
        }
    }
}

fn load_data(input: &DataArgs) -> Result<Dataset> {
    let schema = Schema::load(&input.schema)?;
    Dataset::read_csv(&input.data, &schema)
}

fn split(a: SplitArgs) -> Result<()> {
    let data = load_data(&a.input)?;
    let f: Vec<f64> = parse_list(&a.fractions, "fraction")?;
    let f: [f64; 3] = f
        .try_into()
        .map_err(|_| Error::config("--fractions needs three values"))?;
    let [tr, va, te] = split_indices(data.len(), f, resolve_seed(a.seed)?)?;
    data.subset(&tr).write_csv(&a.train_out)?;
    data.subset(&va).write_csv(&a.val_out)?;
    data.subset(&te).write_csv(&a.test_out)
}

/// Encoder for training: fitted on the data, or taken from another model.
fn features_for(common: &TrainCommon, data: &Dataset) -> Result<Encoder> {
    match &common.features_from {
        Some(p) => {
            let enc = load_model(p)?.encoder().clone();
            data.schema().ensure_compatible(enc.schema())?;
            Ok(enc)
        }
        None => data.fit_encoder(),
    }
}

fn adam(lr: Option<f64>, default: AdamConfig) -> AdamConfig {
    match lr {
        Some(lr) => AdamConfig::with_learning_rate(lr),
        None => default,
    }
}

fn train_clf(a: TrainClfArgs) -> Result<()> {
    let c = &a.common;
    let data = load_data(&c.input)?;
    let features = features_for(c, &data)?;
    let labels = match &a.label_from {
        Some(name) => data.labels_from_attribute(name)?,
        None => data
            .labels()
            .ok_or_else(|| Error::config("the schema declares no label; use --label-from"))?
            .to_vec(),
    };
    let defaults = ClassifierConfig::default();
    let config = ClassifierConfig {
        architecture: match a.arch {
            Arch::Linear => Architecture::LinearSoftmax,
            Arch::Mlp => Architecture::Mlp {
                hidden: parse_list(&a.hidden, "hidden width")?,
            },
        },
        l1_weight: a.l1,
        epochs: c.epochs.unwrap_or(defaults.epochs),
        batch_size: c.batch_size,
        adam: adam(c.lr, defaults.adam),
        seed: resolve_seed(c.seed)?,
    };
    let (clf, report) = train_classifier_on(data.rows(), &labels, &features, &config)?;
    let acc = accuracy_against(&clf, data.rows(), &labels)?;
    save_model(&PersistedModel::Classifier(clf), &c.out)?;
    println!("train_accuracy\t{acc}");
    if let Some(l) = report.losses.last() {
        println!("final_loss\t{l}");
    }
    Ok(())
}

fn train_vae_cmd(a: TrainVaeArgs) -> Result<()> {
    let c = &a.common;
    let data = load_data(&c.input)?;
    let features = features_for(c, &data)?;
    let defaults = VaeConfig::default();
    let config = VaeConfig {
        k: a.k,
        hidden: parse_list(&a.hidden, "hidden width")?,
        epochs: c.epochs.unwrap_or(defaults.epochs),
        batch_size: c.batch_size,
        adam: adam(c.lr, defaults.adam),
        seed: resolve_seed(c.seed)?,
        conditional: a.conditional,
    };
    let (vae, report) = train_vae(&data, &features, &config)?;
    let acc = vae.categorical_accuracy(data.rows())?;
    save_model(&PersistedModel::Vae(vae), &c.out)?;
    if let Some(l) = report.losses.last() {
        println!("final_loss\t{l}");
    }
    println!("min_batch_kl\t{}", report.min_batch_kl);
    println!("categorical_accuracy\t{acc}");
    Ok(())
}

fn train_causal_cmd(a: TrainCausalArgs) -> Result<()> {
    let c = &a.common;
    let data = load_data(&c.input)?;
    let features = features_for(c, &data)?;
    let defaults = CausalModelConfig::default();
    let config = CausalModelConfig {
        k: a.k,
        hidden: parse_list(&a.hidden, "hidden width")?,
        head_hidden: parse_list(&a.head_hidden, "hidden width")?,
        epochs: c.epochs.unwrap_or(defaults.epochs),
        batch_size: c.batch_size,
        adam: adam(c.lr, defaults.adam),
        seed: resolve_seed(c.seed)?,
    };
    let (model, report) = train_causal(&data, &features, &a.immutable, &config)?;
    let eval = match &a.eval_data {
        Some(p) => Dataset::read_csv(p, data.schema())?,
        None => data,
    };
    let ate = estimate_ate(&model, &eval)?;
    save_model(&PersistedModel::Causal(model), &c.out)?;
    if let Some(l) = report.losses.last() {
        println!("final_loss\t{l}");
    }
    println!("ate\t{ate}");
    Ok(())
}

fn revise_config(s: &SearchArgs, target: Label) -> Result<ReviseConfig> {
    let config = ReviseConfig {
        lambda_grid: parse_list(&s.lambda_grid, "lambda")?,
        eta: s.eta,
        tau_max: s.tau_max,
        cost: s.cost.parse::<CostKind>()?,
        target,
        record_trajectory: false,
    };
    config.validate()?;
    Ok(config)
}

fn write_reports(s: &SearchArgs, rows: &[usize], data: &Dataset, outcomes: &[SweepOutcome], schema: &Schema) -> Result<()> {
    let summary = AuditReport::from_sweeps(outcomes)?;
    let text = match s.format {
        Format::Tsv => format!("{}\n{}", records::write_records(rows, outcomes, schema), summary.to_tsv()),
        Format::Markdown => summary.to_markdown(),
    };
    emit(s.out.as_deref(), &text)?;
    if let Some(p) = &s.table_out {
        let mut out = String::new();
        for (&row, o) in rows.iter().zip(outcomes) {
            let names: Vec<String> = o
                .results
                .iter()
                .map(|r| format!("λ={}", r.lambda))
                .chain(std::iter::once("best".to_string()))
                .collect();
            let columns: Vec<TableColumn<'_>> = o
                .results
                .iter()
                .chain(std::iter::once(o.best()))
                .zip(&names)
                .map(|(result, name)| TableColumn { name, schema, result })
                .collect();
            out.push_str(&format!("# row {row}\n"));
            out.push_str(&render_recourse_table(&data.rows()[row], schema, &columns, s.format.into())?);
            out.push('\n');
        }
        write_file(p, &out)?;
    }
    Ok(())
}

fn revise_cmd(a: ReviseArgs) -> Result<()> {
    let s = &a.search;
    let data = load_data(&s.input)?;
    let clf: Classifier = load_model(&a.clf)?.into_classifier()?;
    let vae = load_model(&a.vae)?.into_vae()?;
    data.schema().ensure_compatible(clf.encoder().schema())?;
    ensure_same_encoding(clf.encoder(), vae.features())?;
    let target = Label::parse(&a.target).ok_or_else(|| Error::config(format!("invalid target '{}'", a.target)))?;
    let config = revise_config(s, target)?;
    let rows = match &s.rows {
        Some(spec) => parse_rows(spec, data.len())?,
        None => {
            let preds = clf.predict(data.rows())?;
            (0..data.len()).filter(|&i| preds[i] != target).collect()
        }
    };
    let picked: Vec<Vec<f64>> = rows.iter().map(|&i| data.rows()[i].clone()).collect();
    let outcomes = if picked.is_empty() {
        Vec::new()
    } else {
        lambda_sweep_batch(&picked, &clf, &vae, &config)?
    };
    if outcomes.is_empty() {
        return Err(Error::InvalidData("no rows to revise".into()));
    }
    write_reports(s, &rows, &data, &outcomes, vae.schema())
}

fn revise_causal_cmd(a: ReviseCausalArgs) -> Result<()> {
    let s = &a.search;
    let data = load_data(&s.input)?;
    let model = load_model(&a.model)?.into_causal()?;
    data.schema().ensure_compatible(model.schema())?;
    let (t, y) = match (data.treatment(), data.outcome()) {
        (Some(t), Some(y)) => (t, y),
        _ => return Err(Error::config("the schema declares no treatment and outcome columns")),
    };
    let config = revise_config(s, Label::Positive)?;
    let rows = match &s.rows {
        Some(spec) => parse_rows(spec, data.len())?,
        None => (0..data.len()).filter(|&i| y[i] == 0).collect(),
    };
    if rows.is_empty() {
        return Err(Error::InvalidData("no rows to revise".into()));
    }
    let outcomes: Vec<SweepOutcome> = rows
        .par_iter()
        .map(|&i| lambda_sweep_causal(&data.rows()[i], (t[i], y[i]), &model, a.do_t, &config))
        .collect::<Result<_>>()?;
    write_reports(s, &rows, &data, &outcomes, model.schema())
}

fn audit_cmd(a: AuditArgs) -> Result<()> {
    let data = load_data(&a.input)?;
    let reference = load_model(&a.reference)?.into_classifier()?;
    let vae = load_model(&a.vae)?.into_vae()?;
    data.schema().ensure_compatible(vae.schema())?;
    let mut targets: Vec<(String, Classifier)> = Vec::new();
    for spec in &a.targets {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--target expects name=path, got '{spec}'")))?;
        let clf = load_model(path)?.into_classifier()?;
        ensure_same_encoding(clf.encoder(), vae.features())?;
        targets.push((name.to_string(), clf));
    }
    let rows = match &a.rows {
        Some(spec) => parse_rows(spec, data.len())?,
        None => (0..data.len()).collect(),
    };
    let samples: Vec<Vec<f64>> = rows.iter().map(|&i| data.rows()[i].clone()).collect();
    let config = ReviseConfig {
        lambda_grid: vec![a.lambda],
        eta: a.eta,
        tau_max: a.tau_max,
        cost: a.cost.parse()?,
        ..ReviseConfig::default()
    };
    config.validate()?;
    let named: Vec<(&str, &Classifier)> = targets.iter().map(|(n, c)| (n.as_str(), c)).collect();
    let entries = confounding_audit(&named, &reference, &vae, &samples, a.lambda, &config)?;
    emit(a.out.as_deref(), &flip_table(&entries, a.format.into()))
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let per_row = records::read_records(&text)?;
    let rows: Vec<_> = per_row.into_iter().map(|(_, rs, best)| (rs, best)).collect();
    let report = AuditReport::from_summaries(&rows)?;
    let text = match a.format {
        Format::Tsv => report.to_tsv(),
        Format::Markdown => report.to_markdown(),
    };
    emit(a.out.as_deref(), &text)
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use eeg_audit::adapter::{CommandResponder, EditRequest, ModelAdapter, OfflineAdapter, Refusal, Responder};
use eeg_audit::config::{CellRef, RunConfig, Stages};
use eeg_audit::harness::{generate_planted, respond_with, write_planted, PlantedModel, PlantedSpec};
use eeg_audit::io::{read_json, read_manifest, row_id_digest, write_json, CellManifest, CellPaths};
use eeg_audit::pipeline::{run_audit, CellData, CellInput};
use eeg_audit::report::{export_csvs, read_report, write_report, AuditReport};
use eeg_audit::stats::Status;
use eeg_audit::stages::{extract_features, prepare_cell, write_features, PreparedCell};

#[derive(Parser)]
#[command(name = "eeg-audit", version, about = "Probe, erase and closure audit of frozen EEG models")]
struct Cli {
    #[command(flatten)]
    run: RunFlags,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Anything not covered by a named flag
/// can be set with `--set key=value` using the dotted config key.
#[derive(Args)]
struct RunFlags {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root of the cell directories.
    #[arg(long, global = true, env = "EEG_AUDIT_DATA_ROOT")]
    data_root: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Cell as `task/model`; repeat for several. Defaults to every cell
    /// found under the data root.
    #[arg(long = "cell", global = true)]
    cells: Vec<String>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Dotted override, e.g. `probe.r2_min=0.05`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute expanded features and the QC table from stored epochs.
    Features,
    /// Probe stage only.
    Probe(AuditArgs),
    /// Probe and erase.
    Erase(AuditArgs),
    /// Probe, erase and closure.
    Closure(AuditArgs),
    /// Every stage.
    Audit(AuditArgs),
    /// Planted-model ground-truth harness.
    #[command(subcommand)]
    Harness(HarnessCommand),
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Args)]
struct AuditArgs {
    /// Program serving edited forwards; the exchange directory is appended
    /// as its last argument. Planted cells are served in process when unset.
    #[arg(long, value_name = "PROGRAM")]
    responder: Option<String>,
    /// Extra arguments for the responder, placed before the directory.
    #[arg(long = "responder-arg", allow_hyphen_values = true)]
    responder_args: Vec<String>,
}

#[derive(Subcommand)]
enum HarnessCommand {
    /// Write a planted cell (epochs, features, activations, model, truth).
    Gen(GenArgs),
    /// Answer one edited-forward request from a planted cell's parameters.
    Respond {
        /// The cell's exchange directory (`<cell>/edited`).
        exchange_dir: PathBuf,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "planted")]
    task: String,
    #[arg(long, default_value = "linear")]
    model: String,
    /// JSON planted spec; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    n_used: Option<usize>,
    #[arg(long)]
    n_enc: Option<usize>,
    #[arg(long)]
    snr: Option<f64>,
    /// Comma-separated feature ids for S_used.
    #[arg(long, value_delimiter = ',')]
    used: Option<Vec<String>>,
    /// Comma-separated feature ids for S_enc.
    #[arg(long, value_delimiter = ',')]
    enc: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Re-export the CSV tables of a `report.json`.
    Export {
        report: PathBuf,
        /// Defaults to the report's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().context("empty override key")?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("{key}: {p} is not a section"))?;
    }
    cur.insert(last.to_owned(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn parse_cell(s: &str) -> Result<CellRef> {
    match s.split_once('/') {
        Some((t, m)) if !t.is_empty() && !m.is_empty() => Ok(CellRef {
            task: t.to_owned(),
            model: m.to_owned(),
        }),
        _ => bail!("cell {s:?} is not of the form task/model"),
    }
}

fn load_config(flags: &RunFlags) -> Result<RunConfig> {
    let mut table = match &flags.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => toml::Table::try_from(RunConfig::default())?,
    };
    for o in &flags.overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("override {o:?} lacks '='"))?;
        set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    let mut cfg: RunConfig = table.try_into().context("invalid run configuration")?;
    if let Some(d) = &flags.data_root {
        cfg.data_root = d.clone();
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(o) = &flags.out_dir {
        cfg.out_dir = Some(o.clone());
    }
    if let Some(w) = flags.workers {
        cfg.workers = w;
    }
    if !flags.cells.is_empty() {
        cfg.cells = flags.cells.iter().map(|c| parse_cell(c)).collect::<Result<_>>()?;
    }
    Ok(cfg)
}

/// Every `task/model` directory under the data root holding a manifest.
fn discover_cells(root: &Path) -> Result<Vec<CellRef>> {
    let mut out = Vec::new();
    let dirs = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = fs::read_dir(p)
            .with_context(|| format!("listing {}", p.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        v.sort();
        Ok(v)
    };
    for task in dirs(root)? {
        for model in dirs(&task)? {
            if model.join("manifest.json").exists() {
                let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                out.push(CellRef {
                    task: name(&task),
                    model: name(&model),
                });
            }
        }
    }
    Ok(out)
}

fn cells_of(cfg: &RunConfig) -> Result<Vec<CellRef>> {
    if !cfg.cells.is_empty() {
        return Ok(cfg.cells.clone());
    }
    let cells = discover_cells(&cfg.data_root)?;
    if cells.is_empty() {
        bail!("no cells under {}", cfg.data_root.display());
    }
    Ok(cells)
}

/// In-process responder owning a planted model loaded from disk.
struct PlantedFiles(PlantedModel);

impl Responder for PlantedFiles {
    fn respond(&self, exchange_dir: &Path, request: &EditRequest) -> eeg_audit::Result<()> {
        respond_with(&self.0, exchange_dir, request)
    }
}

fn open_adapter(
    paths: &CellPaths,
    manifest: &CellManifest,
    args: &AuditArgs,
) -> eeg_audit::Result<Box<dyn ModelAdapter>> {
    if let Some(program) = &args.responder {
        let r = CommandResponder {
            program: program.clone(),
            args: args.responder_args.clone(),
        };
        return Ok(Box::new(OfflineAdapter::open(paths.clone(), r)?));
    }
    let planted = paths.planted_dir();
    if planted.exists() {
        let model = PlantedModel::load(&planted, manifest)?;
        return Ok(Box::new(OfflineAdapter::open(paths.clone(), PlantedFiles(model))?));
    }
    Err(eeg_audit::Error::InvalidArgument(format!(
        "{} has no planted model; pass --responder to serve edited forwards",
        manifest.cell()
    )))
}

fn cmd_features(cfg: &RunConfig) -> Result<bool> {
    let mut clean = true;
    for c in cells_of(cfg)? {
        let paths = CellPaths::new(&cfg.data_root, &c.task, &c.model);
        let manifest = read_manifest(&paths)?;
        let out = extract_features(&paths, &manifest, &cfg.lexicon)?;
        for f in &out.failures {
            warn!("{}: {}", f.cell, f.reason);
        }
        clean &= out.failures.is_empty();
        let fm = write_features(&paths, &manifest, &out)?;
        let starred = fm.standardizer.qc.iter().filter(|q| q.low_variance).count();
        info!(
            "{}: {} rows, {} columns, {starred} low-variance, {} rejected epochs",
            c.label(),
            fm.values.nrows(),
            fm.values.ncols(),
            out.failures.len()
        );
    }
    Ok(clean)
}

fn cmd_audit(mut cfg: RunConfig, stages: Option<Stages>, args: &AuditArgs) -> Result<bool> {
    if let Some(s) = stages {
        cfg.stages = s;
    }
    let cells = cells_of(&cfg)?;
    let prepared: Vec<(CellRef, std::result::Result<PreparedCell, String>)> = cells
        .into_iter()
        .map(|c| {
            let paths = CellPaths::new(&cfg.data_root, &c.task, &c.model);
            let p = prepare_cell(&paths, |p, m| open_adapter(p, m, args)).map_err(|e| e.to_string());
            (c, p)
        })
        .collect();
    let inputs: Vec<CellInput<'_>> = prepared
        .iter()
        .map(|(c, p)| match p {
            Ok(p) => CellInput::Ready(CellData {
                manifest: &p.manifest,
                features: &p.features,
                adapter: p.adapter.as_ref(),
            }),
            Err(reason) => CellInput::Skipped {
                cell: c.label(),
                reason: reason.clone(),
            },
        })
        .collect();
    let report = run_audit(&cfg, &inputs);
    let dir = cfg.report_dir();
    write_report(&dir, &report).with_context(|| format!("writing report to {}", dir.display()))?;
    summarise(&report);
    info!("report written to {}", dir.display());
    let clean = report.hard_errors().next().is_none() && report.leakage.pass;
    Ok(clean)
}

fn summarise(r: &AuditReport) {
    for c in &r.cells {
        let causal = c.triplets.iter().filter(|t| t.status == Status::RepresentationCausal).count();
        let encoded = c.probes.iter().filter(|p| p.selection_encoded).count();
        let closure = c.closure.as_ref().and_then(|k| k.ratio);
        info!(
            "{}: fm {:.4}, {encoded} selection-encoded, {causal} representation-causal, closure {}",
            c.cell(),
            c.fm,
            closure.map_or("undefined".into(), |v| format!("{v:.4}"))
        );
    }
    for f in r.hard_errors() {
        warn!("{} [{}] {}", f.cell, f.stage, f.reason);
    }
    if !r.leakage.pass {
        warn!("leakage audit failed: {:?}", r.leakage.violations);
    }
}

fn cmd_harness_gen(cfg: &RunConfig, a: &GenArgs) -> Result<()> {
    let mut spec: PlantedSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => PlantedSpec {
            seed: cfg.seed,
            ..PlantedSpec::default()
        },
    };
    spec.task = a.task.clone();
    spec.model = a.model.clone();
    macro_rules! take {
        ($($f:ident),*) => { $( if let Some(v) = a.$f.clone() { spec.$f = v; } )* };
    }
    take!(n_train, n_val, n_test, n_used, n_enc, snr);
    if a.used.is_some() {
        spec.used = a.used.clone();
    }
    if a.enc.is_some() {
        spec.enc = a.enc.clone();
    }
    let cell = generate_planted(&spec)?;
    let paths = CellPaths::new(&cfg.data_root, &spec.task, &spec.model);
    write_planted(&paths, &cell)?;
    info!(
        "planted cell {} written to {}: used {:?}, encoded-only {:?}",
        cell.manifest.cell(),
        paths.root.display(),
        cell.truth.used,
        cell.truth.enc
    );
    Ok(())
}

/// Serves one request, writing a refusal record instead of predictions when
/// the request does not match the cell.
fn cmd_harness_respond(exchange_dir: &Path) -> Result<()> {
    let request: EditRequest = read_json(&exchange_dir.join("request.json"))?;
    let cell_dir = exchange_dir.parent().context("exchange directory has no parent cell")?;
    let paths = CellPaths::at(cell_dir);
    let manifest = read_manifest(&paths)?;
    let refuse = |reason: String| -> Result<()> {
        warn!("refusing request: {reason}");
        write_json(&exchange_dir.join("refusal.json"), &Refusal { reason })?;
        Ok(())
    };
    if request.cell != manifest.cell() {
        return refuse(format!("request for {} sent to {}", request.cell, manifest.cell()));
    }
    if request.row_id_digest != row_id_digest(&manifest.splits.get(request.split).row_ids) {
        return refuse("row-id digest does not match the manifest".into());
    }
    let model = PlantedModel::load(&paths.planted_dir(), &manifest)?;
    match respond_with(&model, exchange_dir, &request) {
        Ok(()) => Ok(()),
        Err(e) => refuse(e.to_string()),
    }
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(&cli.run)?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .context("starting worker pool")?;
    }
    let stages = |probe, erase, closure, taxonomy| Stages {
        probe,
        erase,
        closure,
        taxonomy,
    };
    match &cli.command {
        Command::Features => cmd_features(&cfg),
        Command::Probe(a) => cmd_audit(cfg, Some(Stages::probe_only()), a),
        Command::Erase(a) => cmd_audit(cfg, Some(stages(true, true, false, false)), a),
        Command::Closure(a) => cmd_audit(cfg, Some(stages(true, true, true, false)), a),
        Command::Audit(a) => cmd_audit(cfg, None, a),
        Command::Harness(HarnessCommand::Gen(a)) => cmd_harness_gen(&cfg, a).map(|()| true),
        Command::Harness(HarnessCommand::Respond { exchange_dir }) => cmd_harness_respond(exchange_dir).map(|()| true),
        Command::Report(ReportCommand::Export { report, out }) => {
            let r = read_report(report)?;
            let dir = out
                .clone()
                .or_else(|| report.parent().map(Path::to_path_buf))
                .unwrap_or_else(|| PathBuf::from("."));
            export_csvs(&dir, &r)?;
            info!("CSV tables written to {}", dir.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

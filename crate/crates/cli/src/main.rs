use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Args, Parser, Subcommand};
use gapfill::config::RunConfig;
use gapfill::error::{Error, Result};
use gapfill::eval::EvalReport;
use gapfill::ingest::{parse_events, RawEvent};
use gapfill::io::{
    align_predictions, read_predictions, write_ablation, write_cdf, write_distinct, write_events_csv,
    write_ground_truth_csv, write_json, write_mask, write_predictions, write_timelines, write_verdicts,
    PredictionRow, TimelineMeta,
};
use gapfill::par::init_threads;
use gapfill::pipeline::{ablate, preprocess, run_models, score_model, split_cohort, AblationAxis, PreparedCohort};
use gapfill::synth::generate_cohort;
use gapfill::timeline::{AssignedTimeline, Resolution};

const EXTERNAL_DEFAULT: &str = "gapfill-rnn";

#[derive(Parser)]
#[command(name = "gapfill", version, about = "Complete sparse location timelines and evaluate baselines")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Filter accounts and build assigned timelines.
    Preprocess(Common),
    /// Split, tune, predict and evaluate.
    Run(Common),
    /// Sweep one parameter with ILC.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// m, users, grid or r
        #[arg(long)]
        axis: AblationAxis,
    },
    /// Generate a synthetic cohort with ground truth.
    Synth(Common),
}

/// Flags override values from the config file, which override the defaults.
#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Event file, CSV or JSON lines.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Slot length in hours (1 or 2).
    #[arg(long)]
    resolution: Option<u32>,
    /// Cell side in miles.
    #[arg(long)]
    grid_size: Option<f64>,
    /// Comma-separated model names; `rnn` runs the external model.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(e) = &self.events {
            c.events = Some(e.clone());
        }
        if let Some(s) = self.seed {
            c.seed = s;
            c.synth.seed = s;
        }
        if let Some(r) = self.resolution {
            c.resolution = Resolution::try_from(r)?;
        }
        if let Some(g) = self.grid_size {
            c.cell_size = g;
        }
        if let Some(m) = &self.models {
            c.models = m.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        if let Some(o) = &self.out_dir {
            c.out_dir = o.clone();
        }
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        c.validate()?;
        if let Some(n) = c.threads {
            init_threads(n);
        }
        Ok(c)
    }
}

fn out_dir(c: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&c.out_dir).map_err(|e| Error::io(&c.out_dir, e))?;
    Ok(&c.out_dir)
}

fn load_events(c: &RunConfig) -> Result<Vec<RawEvent>> {
    let path = c
        .events
        .as_ref()
        .ok_or_else(|| Error::Config("no event file given (--events or \"events\" in the config)".into()))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (events, report) = parse_events(BufReader::new(file))?;
    if report.skipped > 0 {
        eprintln!("warning: skipped {} malformed lines in {}", report.skipped, path.display());
    }
    Ok(events)
}

fn prepare(c: &RunConfig) -> Result<PreparedCohort> {
    let events = load_events(c)?;
    let dir = out_dir(c)?;
    let (cohort, report) = preprocess(events, &c.setup()?, c.exec())?;
    write_timelines(&dir.join("timelines.csv"), &cohort.timelines, &meta(&cohort))?;
    write_verdicts(&dir.join("verdicts.csv"), &report.verdicts)?;
    let summary = serde_json::json!({
        "users_total": report.users_total,
        "excluded_spoofing": report.excluded_spoofing,
        "excluded_listed": report.excluded_listed,
        "failed_inclusion": report.failed_inclusion,
        "included": report.included,
        "events_total": report.events_total,
        "mean_daytime_empty": report.mean_daytime_empty,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    eprintln!(
        "{} of {} users included ({} spoofing, {} listed, {} below inclusion)",
        report.included, report.users_total, report.excluded_spoofing, report.excluded_listed, report.failed_inclusion
    );
    Ok(cohort)
}

fn meta(cohort: &PreparedCohort) -> TimelineMeta {
    TimelineMeta::new(cohort.resolution, cohort.window, cohort.spec)
}

fn cmd_run(c: &RunConfig) -> Result<()> {
    let cohort = prepare(c)?;
    let dir = out_dir(c)?;
    let params = c.params();
    let split = split_cohort(&cohort, params.train_ratio, params.seed, params.exec);
    write_mask(&dir.join("mask.csv"), &split.mask)?;
    let models = c.internal_models()?;
    let out = run_models(&cohort, &split, &models, &params)?;
    let mut rows = Vec::new();
    for o in &out.outputs {
        for (u, preds) in split.mask.users.iter().zip(&o.predictions) {
            for (&q, p) in u.test.iter().zip(preds) {
                rows.push(PredictionRow {
                    user_id: u.user_id.clone(),
                    q,
                    prediction: p.clone(),
                    model: Some(o.model.as_str().to_string()),
                });
            }
        }
    }
    write_predictions(&dir.join("predictions.csv"), &rows)?;
    let mut report = out.report;
    if c.wants_external() {
        let training = dir.join("training_timelines.csv");
        write_timelines(&training, &split.training, &meta(&cohort))?;
        if let Some(m) = external_model(c, dir, &training, &split.mask)? {
            let distinct: Vec<usize> = cohort.timelines.iter().map(AssignedTimeline::distinct_cells).collect();
            report.models.push(score_model("rnn", &split, &m, &distinct));
        }
    }
    write_reports(dir, &report)
}

fn write_reports(dir: &Path, report: &EvalReport) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    write_cdf(&dir.join("accuracy_cdf.csv"), report)?;
    write_distinct(&dir.join("distinct_locations.csv"), report)?;
    for m in &report.models {
        eprintln!(
            "{:<10} top1 {:6.2}  top3 {:6.2}  filled {:6.2}",
            m.model, m.top1_acc, m.top3_acc, m.filled_pct
        );
    }
    Ok(())
}

/// Run the external model; `None` (with a warning) when it is unavailable or fails.
fn external_model(
    c: &RunConfig,
    dir: &Path,
    timelines: &Path,
    mask: &gapfill::eval::SplitMask,
) -> Result<Option<Vec<Vec<gapfill::ilc::SlotPrediction>>>> {
    let command = c.rnn_command.clone().unwrap_or_else(|| EXTERNAL_DEFAULT.to_string());
    let mut parts = command.split_whitespace();
    let Some(program) = parts.next() else {
        return Err(Error::Config("empty rnn_command".into()));
    };
    let output = dir.join("predictions_rnn.csv");
    let status = Command::new(program)
        .args(parts)
        .arg("--timelines")
        .arg(timelines)
        .arg("--mask")
        .arg(dir.join("mask.csv"))
        .arg("--out")
        .arg(&output)
        .arg("--seed")
        .arg(c.seed.to_string())
        .status();
    match status {
        Ok(s) if s.success() => {
            let rows = read_predictions(&output)?;
            Ok(Some(align_predictions(&rows, mask)))
        }
        Ok(s) => {
            eprintln!("warning: {program} exited with {s}; skipping rnn");
            Ok(None)
        }
        Err(e) => {
            eprintln!("warning: cannot run {program} ({e}); skipping rnn");
            Ok(None)
        }
    }
}

fn cmd_ablate(c: &RunConfig, axis: AblationAxis) -> Result<()> {
    let events = load_events(c)?;
    let dir = out_dir(c)?;
    let points = ablate(&events, &c.setup()?, &c.params(), axis, c.ablate.values(axis), c.ablate.replications)?;
    let name = serde_json::to_value(axis)?.as_str().unwrap_or("axis").to_string();
    write_ablation(&dir.join(format!("ablation_{name}.csv")), &points)?;
    for p in &points {
        eprintln!("{name} = {:<6} top1 {:6.2}  filled {:6.2}", p.value, p.top1_acc, p.filled_pct);
    }
    Ok(())
}

fn cmd_synth(c: &RunConfig) -> Result<()> {
    let dir = out_dir(c)?;
    let cohort = generate_cohort(&c.synth, c.exec())?;
    write_events_csv(&dir.join("events.csv"), &cohort.events())?;
    write_ground_truth_csv(&dir.join("ground_truth.csv"), &cohort.users)?;
    write_json(&dir.join("synth.json"), &cohort.config)?;
    write_json(&dir.join("groups.json"), &cohort.groups)?;
    eprintln!("{} users, {} events", cohort.users.len(), cohort.events().len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Preprocess(common) => common.config().and_then(|c| prepare(&c).map(drop)),
        Cmd::Run(common) => common.config().and_then(|c| cmd_run(&c)),
        Cmd::Ablate { common, axis } => common.config().and_then(|c| cmd_ablate(&c, *axis)),
        Cmd::Synth(common) => common.config().and_then(|c| cmd_synth(&c)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

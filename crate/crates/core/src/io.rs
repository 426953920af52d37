//! CSV and JSON artifacts. Every writer goes through [`write_atomic`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{accuracy_cdf, distinct_location_pairs, EvalReport, SplitMask, UserSplit};
use crate::geo::{GridCell, GridSpec};
use crate::ilc::{SlotPrediction, Source};
use crate::ingest::{format_timestamp, AccountVerdict, RawEvent};
use crate::pipeline::AblationPoint;
use crate::synth::GroundTruthTimeline;
use crate::timeline::{AssignedTimeline, Provenance, Resolution, Slot, StudyWindow};

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_bytes<T: Serialize>(header: Option<&[&str]>, rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(header.is_none()).from_writer(Vec::new());
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::data("csv buffer", e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path.display().to_string(), e.to_string()))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

// ---------------------------------------------------------------------------
// events

#[derive(Serialize)]
struct EventRow<'a> {
    user_id: &'a str,
    timestamp: String,
    lat: f64,
    lon: f64,
}

pub fn write_events_csv(path: &Path, events: &[RawEvent]) -> Result<()> {
    let rows = events.iter().map(|e| EventRow {
        user_id: &e.user_id,
        timestamp: format_timestamp(e.ts),
        lat: e.point.lat,
        lon: e.point.lon,
    });
    write_atomic(path, &csv_bytes(None, rows)?)
}

#[derive(Serialize, Deserialize)]
struct TruthRow {
    user_id: String,
    group: usize,
    q: usize,
    cell: u32,
}

pub fn write_ground_truth_csv(path: &Path, users: &[GroundTruthTimeline]) -> Result<()> {
    let rows = users.iter().flat_map(|u| {
        u.cells.iter().enumerate().map(|(q, c)| TruthRow {
            user_id: u.user_id.clone(),
            group: u.group,
            q,
            cell: c.0,
        })
    });
    write_atomic(path, &csv_bytes(None, rows)?)
}

// ---------------------------------------------------------------------------
// timelines

/// Sidecar describing how a timelines CSV was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineMeta {
    pub resolution: Resolution,
    pub study_start: NaiveDate,
    pub weeks: u32,
    pub grid: GridSpec,
    pub grid_digest: String,
}

impl TimelineMeta {
    pub fn new(resolution: Resolution, window: StudyWindow, grid: GridSpec) -> Self {
        TimelineMeta {
            resolution,
            study_start: window.start,
            weeks: window.weeks,
            grid_digest: grid.digest(),
            grid,
        }
    }

    pub fn window(&self) -> Result<StudyWindow> {
        StudyWindow::new(self.study_start, self.weeks)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TimelineRow {
    user_id: String,
    q: usize,
    cell: u32,
    provenance: String,
}

pub fn meta_path(timelines_csv: &Path) -> std::path::PathBuf {
    timelines_csv.with_extension("meta.json")
}

/// Assigned slots only, one row each, plus the `.meta.json` sidecar.
pub fn write_timelines(path: &Path, timelines: &[AssignedTimeline], meta: &TimelineMeta) -> Result<()> {
    let rows = timelines.iter().flat_map(|tl| {
        tl.slots.iter().enumerate().filter_map(|(q, s)| {
            s.map(|s| TimelineRow {
                user_id: tl.user_id.clone(),
                q,
                cell: s.cell.0,
                provenance: s.provenance.as_str().to_string(),
            })
        })
    });
    let bytes = if timelines.is_empty() {
        b"user_id,q,cell,provenance\n".to_vec()
    } else {
        csv_bytes(None, rows)?
    };
    write_atomic(path, &bytes)?;
    write_json(&meta_path(path), meta)
}

/// Read timelines back. Users appear in id order; users with no rows are absent.
pub fn read_timelines(path: &Path) -> Result<(Vec<AssignedTimeline>, TimelineMeta)> {
    let meta: TimelineMeta = read_json(&meta_path(path))?;
    if meta.grid.digest() != meta.grid_digest {
        return Err(Error::data("timeline meta", "grid digest mismatch"));
    }
    let window = meta.window()?;
    let mut users: BTreeMap<String, AssignedTimeline> = BTreeMap::new();
    for (i, row) in reader(path)?.deserialize::<TimelineRow>().enumerate() {
        let row = row?;
        let ctx = || format!("{} row {}", path.display(), i + 2);
        let provenance =
            Provenance::parse(&row.provenance).ok_or_else(|| Error::data(ctx(), format!("provenance {:?}", row.provenance)))?;
        if row.cell >= meta.grid.n_cells() {
            return Err(Error::data(ctx(), format!("cell {} outside grid", row.cell)));
        }
        let tl = users
            .entry(row.user_id.clone())
            .or_insert_with(|| AssignedTimeline::empty(row.user_id.clone(), meta.resolution, window));
        let slot = tl
            .slots
            .get_mut(row.q)
            .ok_or_else(|| Error::data(ctx(), format!("slot {} outside the study window", row.q)))?;
        *slot = Some(Slot {
            cell: GridCell(row.cell),
            provenance,
        });
    }
    Ok((users.into_values().collect(), meta))
}

// ---------------------------------------------------------------------------
// split mask

#[derive(Debug, Serialize, Deserialize)]
struct MaskRow {
    user_id: String,
    q: usize,
}

pub fn write_mask(path: &Path, mask: &SplitMask) -> Result<()> {
    let rows = mask.users.iter().flat_map(|u| {
        u.test.iter().map(|&q| MaskRow {
            user_id: u.user_id.clone(),
            q,
        })
    });
    write_atomic(path, &csv_bytes(Some(&["user_id", "q"]), rows)?)
}

pub fn read_mask(path: &Path) -> Result<SplitMask> {
    let mut users: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for row in reader(path)?.deserialize::<MaskRow>() {
        let row = row?;
        users.entry(row.user_id).or_default().push(row.q);
    }
    Ok(SplitMask {
        users: users
            .into_iter()
            .map(|(user_id, mut test)| {
                test.sort_unstable();
                test.dedup();
                UserSplit { user_id, test }
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// predictions

pub const PREDICTION_COLUMNS: [&str; 10] = [
    "user_id",
    "q",
    "predicted_cell",
    "rank1",
    "rank2",
    "rank3",
    "score1",
    "score2",
    "score3",
    "source",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub user_id: String,
    pub q: usize,
    pub prediction: SlotPrediction,
    pub model: Option<String>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let with_model = rows.iter().any(|r| r.model.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = PREDICTION_COLUMNS.to_vec();
    if with_model {
        header.push("model");
    }
    w.write_record(&header)?;
    for r in rows {
        let p = &r.prediction;
        let mut rec = vec![r.user_id.clone(), r.q.to_string(), opt(p.cell.map(|c| c.0))];
        for i in 0..3 {
            rec.push(opt(p.top.get(i).map(|e| e.0 .0)));
        }
        for i in 0..3 {
            rec.push(opt(p.top.get(i).map(|e| e.1)));
        }
        rec.push(p.source.as_str().to_string());
        if with_model {
            rec.push(r.model.clone().unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::data("csv buffer", e.to_string()))?;
    write_atomic(path, &bytes)
}

fn parse_source(s: &str) -> Option<Source> {
    Some(match s {
        "given" | "given_data" => Source::GivenData,
        "predicted" => Source::Predicted,
        "fallback" => Source::Fallback,
        "unfilled" | "" => Source::Unfilled,
        _ => return None,
    })
}

/// Header-driven reader: columns may come in any order, extra columns are
/// ignored, and `model` is optional.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| col(name).ok_or_else(|| Error::data(path.display().to_string(), format!("missing column {name}")));
    let (iu, iq, ip, isrc) = (required("user_id")?, required("q")?, required("predicted_cell")?, required("source")?);
    let ranks: Vec<Option<usize>> = (1..=3).map(|i| col(&format!("rank{i}"))).collect();
    let scores: Vec<Option<usize>> = (1..=3).map(|i| col(&format!("score{i}"))).collect();
    let imodel = col("model");
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ctx = || format!("{} row {}", path.display(), n + 2);
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let cell = |s: &str| -> Result<Option<GridCell>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(|c| Some(GridCell(c))).map_err(|_| Error::data(ctx(), format!("bad cell {s:?}")))
            }
        };
        let predicted = cell(field(ip))?;
        let mut top = Vec::new();
        for i in 0..3 {
            let Some(c) = ranks[i].map(field).map(cell).transpose()?.flatten() else {
                continue;
            };
            let score = scores[i].map(field).filter(|s| !s.is_empty()).map_or(Ok(0.0), |s| {
                s.parse::<f64>().map_err(|_| Error::data(ctx(), format!("bad score {s:?}")))
            })?;
            top.push((c, score));
        }
        if top.is_empty() {
            if let Some(c) = predicted {
                top.push((c, 1.0));
            }
        }
        let source = parse_source(field(isrc)).ok_or_else(|| Error::data(ctx(), format!("bad source {:?}", field(isrc))))?;
        out.push(PredictionRow {
            user_id: field(iu).to_string(),
            q: field(iq).parse().map_err(|_| Error::data(ctx(), "bad slot index"))?,
            prediction: SlotPrediction {
                cell: predicted,
                top,
                source: if predicted.is_none() { Source::Unfilled } else { source },
            },
            model: imodel.map(|i| field(i).to_string()),
        });
    }
    Ok(out)
}

/// Arrange prediction rows along a mask; slots without a row are unfilled.
pub fn align_predictions(rows: &[PredictionRow], mask: &SplitMask) -> Vec<Vec<SlotPrediction>> {
    let mut by_key: BTreeMap<(&str, usize), &SlotPrediction> = BTreeMap::new();
    for r in rows {
        by_key.insert((r.user_id.as_str(), r.q), &r.prediction);
    }
    mask.users
        .iter()
        .map(|u| {
            u.test
                .iter()
                .map(|&q| {
                    by_key
                        .get(&(u.user_id.as_str(), q))
                        .map_or_else(SlotPrediction::unfilled, |p| (*p).clone())
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// reports

#[derive(Serialize)]
struct VerdictRow<'a> {
    user_id: &'a str,
    total_events: usize,
    violating_events: usize,
    violating_fraction: f64,
    listed: bool,
    excluded: bool,
}

pub fn write_verdicts(path: &Path, verdicts: &[AccountVerdict]) -> Result<()> {
    let rows = verdicts.iter().map(|v| VerdictRow {
        user_id: &v.user_id,
        total_events: v.total_events,
        violating_events: v.violating_events,
        violating_fraction: v.violating_fraction(),
        listed: v.listed,
        excluded: v.excluded,
    });
    let header = ["user_id", "total_events", "violating_events", "violating_fraction", "listed", "excluded"];
    write_atomic(path, &csv_bytes(Some(&header), rows)?)
}

pub fn write_cdf(path: &Path, report: &EvalReport) -> Result<()> {
    let rows: Vec<(String, f64, f64)> = report
        .models
        .iter()
        .flat_map(|m| accuracy_cdf(m).into_iter().map(move |(a, f)| (m.model.clone(), a, f)))
        .collect();
    write_atomic(path, &csv_bytes(Some(&["model", "top1_acc", "fraction_of_users"]), rows)?)
}

pub fn write_distinct(path: &Path, report: &EvalReport) -> Result<()> {
    let rows: Vec<(String, usize, f64)> = report
        .models
        .iter()
        .flat_map(|m| distinct_location_pairs(m).into_iter().map(move |(d, a)| (m.model.clone(), d, a)))
        .collect();
    write_atomic(path, &csv_bytes(Some(&["model", "distinct_cells", "top1_acc"]), rows)?)
}

pub fn write_ablation(path: &Path, points: &[AblationPoint]) -> Result<()> {
    let header = ["axis", "value", "replications", "users", "top1_acc", "top3_acc", "filled_pct"];
    let rows = points.iter().map(|p| {
        (
            serde_json::to_value(p.axis).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
            p.value,
            p.replications,
            p.users,
            p.top1_acc,
            p.top3_acc,
            p.filled_pct,
        )
    });
    write_atomic(path, &csv_bytes(Some(&header), rows)?)
}

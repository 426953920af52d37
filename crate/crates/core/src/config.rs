//! Run configuration: one JSON document, validated before any work starts.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{build_grid_spec, BBox};
use crate::pipeline::{AblationAxis, Model, PipelineParams, Setup, DEFAULT_M};
use crate::par::Exec;
use crate::synth::{CohortConfig, NYC_CENTER};
use crate::timeline::{LocalClock, Resolution, StudyWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Event file (CSV or JSON lines).
    pub events: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub bbox: BBox,
    pub cell_size: f64,
    pub resolution: Resolution,
    pub study_start: Option<NaiveDate>,
    pub weeks: Option<u32>,
    pub clock: LocalClock,
    /// Accounts dropped regardless of the speed filter.
    pub exclude_users: Vec<String>,
    pub alpha: Option<f64>,
    pub m: usize,
    pub k_top: usize,
    pub train_ratio: f64,
    pub beta: Option<f64>,
    pub poi_gamma: Option<f64>,
    pub models: Vec<String>,
    pub seed: u64,
    /// Worker threads; all cores when absent, sequential when 1.
    pub threads: Option<usize>,
    /// External model executable run when `rnn` is in `models`.
    pub rnn_command: Option<String>,
    pub ablate: AblateConfig,
    pub synth: CohortConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub m: Vec<f64>,
    pub users: Vec<f64>,
    pub grid: Vec<f64>,
    pub resolution: Vec<f64>,
    pub replications: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            m: AblationAxis::M.default_values(),
            users: AblationAxis::Users.default_values(),
            grid: AblationAxis::Grid.default_values(),
            resolution: AblationAxis::Resolution.default_values(),
            replications: 10,
        }
    }
}

impl AblateConfig {
    pub fn values(&self, axis: AblationAxis) -> &[f64] {
        match axis {
            AblationAxis::M => &self.m,
            AblationAxis::Users => &self.users,
            AblationAxis::Grid => &self.grid,
            AblationAxis::Resolution => &self.resolution,
        }
    }
}

pub const EXTERNAL_MODEL: &str = "rnn";

impl Default for RunConfig {
    fn default() -> Self {
        let params = PipelineParams::default();
        RunConfig {
            events: None,
            out_dir: PathBuf::from("out"),
            bbox: BBox::square_miles(NYC_CENTER, 29.0),
            cell_size: 1.0,
            resolution: Resolution::OneHour,
            study_start: None,
            weeks: None,
            clock: LocalClock::default(),
            exclude_users: Vec::new(),
            alpha: params.alpha,
            m: DEFAULT_M,
            k_top: params.k_top,
            train_ratio: params.train_ratio,
            beta: None,
            poi_gamma: params.poi_gamma,
            models: Model::ALL.iter().map(|m| m.as_str().to_string()).collect(),
            seed: 0,
            threads: None,
            rnn_command: None,
            ablate: AblateConfig::default(),
            synth: CohortConfig::default(),
        }
    }
}

fn in_unit(name: &str, v: f64, closed_top: bool) -> Result<()> {
    let ok = v >= 0.0 && (v < 1.0 || (closed_top && v == 1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} is out of range")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        build_grid_spec(self.bbox, self.cell_size)?;
        if let Some(a) = self.alpha {
            in_unit("alpha", a, false)?;
        }
        if let Some(b) = self.beta {
            in_unit("beta", b, true)?;
        }
        if let Some(g) = self.poi_gamma {
            in_unit("poi_gamma", g, true)?;
        }
        if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0) {
            return Err(Error::Config(format!("train_ratio = {} is out of range", self.train_ratio)));
        }
        if self.k_top == 0 {
            return Err(Error::Config("k_top must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        self.internal_models()?;
        self.window()?;
        if self.weeks.is_some() && self.study_start.is_none() {
            return Err(Error::Config("weeks requires study_start".into()));
        }
        self.synth.validate()
    }

    /// Built-in models, in the order given; the external model is skipped.
    pub fn internal_models(&self) -> Result<Vec<Model>> {
        self.models
            .iter()
            .filter(|m| !self.is_external(m))
            .map(|m| m.parse())
            .collect()
    }

    pub fn wants_external(&self) -> bool {
        self.models.iter().any(|m| self.is_external(m))
    }

    fn is_external(&self, m: &str) -> bool {
        m.trim().eq_ignore_ascii_case(EXTERNAL_MODEL)
    }

    pub fn window(&self) -> Result<Option<StudyWindow>> {
        self.study_start
            .map(|s| StudyWindow::new(s, self.weeks.unwrap_or(26)))
            .transpose()
    }

    pub fn exec(&self) -> Exec {
        if self.threads == Some(1) {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    pub fn setup(&self) -> Result<Setup> {
        Ok(Setup {
            bbox: self.bbox,
            cell_size: self.cell_size,
            resolution: self.resolution,
            clock: self.clock,
            window: self.window()?,
            exclude: self.exclude_users.clone(),
        })
    }

    pub fn params(&self) -> PipelineParams {
        PipelineParams {
            train_ratio: self.train_ratio,
            seed: self.seed,
            alpha: self.alpha,
            m: self.m,
            k_top: self.k_top,
            beta: self.beta,
            poi_gamma: self.poi_gamma,
            exec: self.exec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seed": 1, "colour": "blue"}"#).unwrap_err();
        assert!(err.to_string().contains("colour"));
        let ok: RunConfig = serde_json::from_str(r#"{"seed": 4, "resolution": 2}"#).unwrap();
        assert_eq!((ok.seed, ok.resolution), (4, Resolution::TwoHours));
        assert!(serde_json::from_str::<RunConfig>(r#"{"resolution": 3}"#).is_err());
    }

    #[test]
    fn bad_values_are_config_errors() {
        let degenerate = RunConfig {
            bbox: BBox {
                min_lat: 1.0,
                min_lon: 1.0,
                max_lat: 1.0,
                max_lon: 2.0,
            },
            ..RunConfig::default()
        };
        assert!(degenerate.validate().unwrap_err().is_config());
        for bad in [
            RunConfig { alpha: Some(1.0), ..RunConfig::default() },
            RunConfig { train_ratio: 0.0, ..RunConfig::default() },
            RunConfig { models: vec!["ilc".into(), "lstm".into()], ..RunConfig::default() },
            RunConfig { study_start: NaiveDate::from_ymd_opt(2014, 1, 7), ..RunConfig::default() },
            RunConfig { cell_size: -1.0, ..RunConfig::default() },
        ] {
            assert!(bad.validate().unwrap_err().is_config(), "{bad:?}");
        }
    }

    #[test]
    fn external_model_is_separate() {
        let c = RunConfig {
            models: vec!["markov0".into(), "RNN".into()],
            ..RunConfig::default()
        };
        assert!(c.wants_external());
        assert_eq!(c.internal_models().unwrap(), vec![Model::Markov0]);
    }
}

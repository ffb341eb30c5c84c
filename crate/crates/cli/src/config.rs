//! Run configuration: one JSON file per run, overridden by flags.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use prefgeo_core::studies::{ComparisonStudyConfig, PredictionStudyConfig, TimingStudyConfig};
use prefgeo_core::{Error, Estimator, FitSettings, MhConfig, Region, Result, SimulationConfig, SpatialGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mh,
    Kriging,
    Mode,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mh" => Ok(Method::Mh),
            "kriging" => Ok(Method::Kriging),
            "mode" => Ok(Method::Mode),
            other => Err(Error::Config(format!("unknown prediction method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    pub method: Method,
    pub mh: MhConfig,
    /// Also write PGM heatmaps of the surfaces.
    pub heatmap: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            method: Method::Mh,
            mh: MhConfig {
                iterations: 300,
                burn_in: 100,
                ..Default::default()
            },
            heatmap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Region of the analysis grid.
    pub region: Region,
    /// Analysis grid `(nx, ny)` used by fit and predict.
    pub grid: (usize, usize),
    pub simulation: SimulationConfig,
    pub estimator: Estimator,
    pub fit: FitSettings,
    pub predict: PredictConfig,
    /// Dataset CSV for fit and predict.
    pub data: Option<PathBuf>,
    /// Parameter or fit-report JSON for predict.
    pub theta: Option<PathBuf>,
    /// Surfaces compared by evaluate.
    pub predicted: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub prediction_study: PredictionStudyConfig,
    pub timing_study: TimingStudyConfig,
    pub comparison_study: ComparisonStudyConfig,
    /// Worker threads for studies; all cores if absent.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            region: Region::UNIT_SQUARE,
            grid: (15, 15),
            simulation: SimulationConfig::default(),
            estimator: Estimator::Mcem,
            fit: FitSettings::default(),
            predict: PredictConfig::default(),
            data: None,
            theta: None,
            predicted: None,
            truth: None,
            prediction_study: PredictionStudyConfig::default(),
            timing_study: TimingStudyConfig::default(),
            comparison_study: ComparisonStudyConfig::default(),
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Schema {
            line: e.line(),
            message: format!("config: {e}"),
        })
    }

    pub fn analysis_grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(self.region, self.grid.0, self.grid.1)
    }

    /// Hex SHA-256 prefix of the canonical JSON form, excluding the seed.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("seed");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        hex::encode(&digest[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_hash() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json(text.as_bytes()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.hash().len(), 16);
        let other = RunConfig {
            grid: (10, 10),
            ..cfg.clone()
        };
        assert_ne!(other.hash(), cfg.hash());
        let reseeded = RunConfig { seed: 9, ..cfg.clone() };
        assert_eq!(reseeded.hash(), cfg.hash());
    }

    #[test]
    fn partial_config() {
        let cfg = RunConfig::from_json(br#"{"grid": [20, 20], "predict": {"method": "kriging"}}"#).unwrap();
        assert_eq!(cfg.grid, (20, 20));
        assert_eq!(cfg.predict.method, Method::Kriging);
        assert_eq!(cfg.predict.mh.iterations, 300);
    }

    #[test]
    fn bad_config_reports_line() {
        let err = RunConfig::from_json(b"{\n\"grid\": 3\n}").unwrap_err();
        assert!(matches!(err, Error::Schema { line: 2, .. }), "{err}");
    }
}

//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "preset": "custom",
//!   "spec": {
//!     "model": {"kepler": {"k": 1016.895192894334, "m2": 1.0}},
//!     "horizon": 30.0,
//!     "intervals": 300,
//!     "cost": {"type": "quadratic", "x_ref": {...}, "q": [1, 1, 0, 1], "u_ref": [0, 0], "r": [0.01, 0.01]},
//!     "x0": {"s": 5.0, "v_s": 0.0, "th": 0.0, "v_th": 2.85},
//!     "terminal": {"fixed": [[0, 6.0]]}
//!   },
//!   "nco_check": true,
//!   "turnpike_scan": {"horizons": [30, 60, 90], "epsilon": 0.1}
//! }
//! ```
//!
//! `"model": "kepler"` selects the default parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::State;
use crate::ocp::{ControlBounds, OcpSpec, StageCost, Terminal};
use crate::presets::{kepler_model, preset_fig1, preset_fig2, KeplerModel, KeplerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Preset {
    KeplerFig1,
    KeplerFig2,
    Custom,
}

impl TryFrom<String> for Preset {
    type Error = Error;

    fn try_from(name: String) -> Result<Self> {
        Self::parse(&name)
    }
}

impl From<Preset> for String {
    fn from(p: Preset) -> Self {
        p.name().to_string()
    }
}

impl Preset {
    pub const NAMES: [&'static str; 3] = ["kepler-fig1", "kepler-fig2", "custom"];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "kepler-fig1" => Ok(Self::KeplerFig1),
            "kepler-fig2" => Ok(Self::KeplerFig2),
            "custom" => Ok(Self::Custom),
            _ => Err(Error::InvalidArgument(format!("unknown preset {name:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::KeplerFig1 => "kepler-fig1",
            Self::KeplerFig2 => "kepler-fig2",
            Self::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelConfig {
    Named(String),
    Kepler { kepler: KeplerParams },
}

impl ModelConfig {
    pub fn kepler_params(&self) -> Result<KeplerParams> {
        let p = match self {
            Self::Named(n) if n == "kepler" => KeplerParams::default(),
            Self::Named(n) => return Err(Error::InvalidArgument(format!("unknown model {n:?}"))),
            Self::Kepler { kepler } => *kepler,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Serializable problem definition on a Kepler model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcpConfig {
    pub model: ModelConfig,
    pub horizon: f64,
    pub intervals: usize,
    pub cost: StageCost,
    pub x0: State,
    #[serde(default, skip_serializing_if = "Terminal::is_none")]
    pub terminal: Terminal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_bounds: Option<ControlBounds>,
}

impl OcpConfig {
    pub fn to_spec(&self) -> Result<OcpSpec<KeplerModel>> {
        let params = self.model.kepler_params()?;
        let spec = OcpSpec {
            model: kepler_model(&params),
            horizon: self.horizon,
            intervals: self.intervals,
            cost: self.cost.clone(),
            x0: self.x0,
            terminal: self.terminal.clone(),
            control_bounds: self.control_bounds.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_spec(spec: &OcpSpec<KeplerModel>) -> Self {
        Self {
            model: ModelConfig::Kepler { kepler: spec.model.params },
            horizon: spec.horizon,
            intervals: spec.intervals,
            cost: spec.cost.clone(),
            x0: spec.x0,
            terminal: spec.terminal.clone(),
            control_bounds: spec.control_bounds.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub horizons: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// Required for `custom`; ignored otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<OcpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<KeplerParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default)]
    pub nco_check: bool,
    #[serde(default)]
    pub tocp: bool,
    #[serde(default)]
    pub sop: bool,
    #[serde(default)]
    pub dissipativity: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turnpike_scan: Option<ScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            preset,
            spec: None,
            params: None,
            out: None,
            nco_check: false,
            tocp: false,
            sop: false,
            dissipativity: false,
            turnpike_scan: None,
            tol: None,
            max_iter: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn resolve_spec(&self) -> Result<OcpSpec<KeplerModel>> {
        let params = self.params.unwrap_or_default();
        params.validate()?;
        match self.preset {
            Preset::KeplerFig1 => Ok(preset_fig1(&params)),
            Preset::KeplerFig2 => Ok(preset_fig2(&params)),
            Preset::Custom => self
                .spec
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("preset \"custom\" needs a \"spec\" object".into()))?
                .to_spec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_round_trip() {
        for n in Preset::NAMES {
            assert_eq!(Preset::parse(n).unwrap().name(), n);
        }
        assert!(Preset::parse("kepler-fig3").is_err());
    }

    #[test]
    fn model_forms() {
        let m: ModelConfig = serde_json::from_str("\"kepler\"").unwrap();
        assert_eq!(m.kepler_params().unwrap(), KeplerParams::default());
        let m: ModelConfig = serde_json::from_str(r#"{"kepler": {"k": 2.0, "m2": 3.0}}"#).unwrap();
        assert_eq!(m.kepler_params().unwrap(), KeplerParams { k: 2.0, m2: 3.0 });
        let m: ModelConfig = serde_json::from_str("\"pendulum\"").unwrap();
        assert!(m.kepler_params().is_err());
    }

    #[test]
    fn custom_spec_round_trips_through_json() {
        let spec = preset_fig1(&KeplerParams::default());
        let cfg = ExperimentConfig { spec: Some(OcpConfig::from_spec(&spec)), ..ExperimentConfig::from_preset(Preset::Custom) };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap().resolve_spec().unwrap();
        assert_eq!(back.x0, spec.x0);
        assert_eq!(back.intervals, 300);
        assert!(matches!(back.terminal, Terminal::Fixed(ref c) if c.len() == 3));
    }

    #[test]
    fn custom_without_spec_is_rejected() {
        let cfg = ExperimentConfig::from_json(r#"{"preset": "custom"}"#).unwrap();
        assert!(cfg.resolve_spec().is_err());
        let err = ExperimentConfig::from_json(r#"{"preset": "nope"}"#).unwrap_err();
        assert!(err.to_string().contains("unknown preset"), "{err}");
    }

    #[test]
    fn minimal_preset_config() {
        let cfg = ExperimentConfig::from_json(r#"{"preset": "kepler-fig2", "nco_check": true}"#).unwrap();
        assert!(cfg.nco_check && !cfg.sop);
        assert_eq!(cfg.resolve_spec().unwrap().intervals, 200);
    }
}

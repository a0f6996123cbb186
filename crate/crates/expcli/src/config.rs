use std::fmt;
use std::path::Path;

use evmlink::channel::{ChannelContext, ImpairmentConfig};
use evmlink::constellation::{build_constellation, ConstellationSpec, Scheme};
use evmlink::mac_frames::{FrameType, MgmtFrameSpec};
use evmlink::ofdm_phy::convolutional::CodeRate;
use evmlink::ofdm_phy::{DataRate, OfdmParams};
use evmlink::vho_engine::{LinkParams, Scenario, TriggerMetric, VhoPolicy};
use evmlink::vsa::{AnalyzerConfig, Tracking};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::plot::PlotSpec;
use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Command {
    Single,
    SweepNav,
    SweepSnr,
    Vho,
    CompareTriggers,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Single => "single",
            Command::SweepNav => "sweep_nav",
            Command::SweepSnr => "sweep_snr",
            Command::Vho => "vho",
            Command::CompareTriggers => "compare_triggers",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepUnit {
    Ms,
    Us,
    /// Per-subcarrier SNR in dB.
    Db,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    pub unit: SweepUnit,
}

impl SweepAxis {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start + i as f64 * self.step).collect()
    }

    /// CSV column holding the swept value.
    pub fn column(&self) -> &'static str {
        match self.unit {
            SweepUnit::Ms => "nav_ms",
            SweepUnit::Us => "nav_us",
            SweepUnit::Db => "snr_db",
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("start", self.start), ("stop", self.stop), ("step", self.step)] {
            if !v.is_finite() {
                return Err(CliError::config(&format!("sweep.{name}"), "must be finite"));
            }
        }
        if self.step <= 0.0 {
            return Err(CliError::config("sweep.step", "must be positive"));
        }
        if self.start > self.stop {
            return Err(CliError::config("sweep", format!("start {} exceeds stop {}", self.start, self.stop)));
        }
        if self.points().len() > 100_000 {
            return Err(CliError::config("sweep", "more than 100000 points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyConfig {
    pub scheme: Scheme,
    pub code_rate: CodeRate,
    pub sample_rate_hz: f64,
}

impl Default for PhyConfig {
    fn default() -> Self {
        PhyConfig { scheme: Scheme::Bpsk, code_rate: CodeRate::Half, sample_rate_hz: 20e6 }
    }
}

impl PhyConfig {
    pub fn link(&self) -> LinkParams {
        LinkParams {
            params: OfdmParams {
                code_rate: self.code_rate,
                sample_rate_hz: self.sample_rate_hz,
                ..OfdmParams::default()
            },
            spec: self.constellation(),
        }
    }

    pub fn constellation(&self) -> ConstellationSpec {
        build_constellation(self.scheme)
    }

    fn validate(&self) -> Result<()> {
        if DataRate::lookup(self.scheme, self.code_rate).is_none() {
            return Err(CliError::config(
                "phy",
                format!("{:?} at code rate {:?} is not an OFDM rate", self.scheme, self.code_rate),
            ));
        }
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(CliError::config("phy.sample_rate_hz", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub dir: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths { dir: "out".into() }
    }
}

fn default_standard() -> String {
    "IEEE 802.11g".into()
}

fn default_n_frames() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    /// Label only; the PHY is always the 64-subcarrier OFDM mode.
    #[serde(default = "default_standard")]
    pub standard: String,
    #[serde(default)]
    pub phy: PhyConfig,
    #[serde(default)]
    pub frame: MgmtFrameSpec,
    /// Frame types swept; empty means just `frame.frame_type`.
    #[serde(default)]
    pub frame_types: Vec<FrameType>,
    /// Noise as per-subcarrier SNR in dB, the way a signal generator sets
    /// AWGN; resolved into `impairments.ebn0_db`.
    #[serde(default)]
    pub subcarrier_snr_db: Option<f64>,
    #[serde(default)]
    pub impairments: ImpairmentConfig,
    #[serde(default)]
    pub analyzer: AnalyzerConfig,
    /// Tracking modes applied to the same received frames; empty means
    /// just `analyzer.tracking`.
    #[serde(default)]
    pub tracking_modes: Vec<Tracking>,
    #[serde(default)]
    pub sweep: Option<SweepAxis>,
    #[serde(default = "default_n_frames")]
    pub n_frames: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub parallel: Option<usize>,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(default)]
    pub plot: Option<PlotSpec>,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub policy: VhoPolicy,
    /// Metrics compared by `compare_triggers`; the policy is mapped to each.
    #[serde(default)]
    pub trigger_metrics: Vec<TriggerMetric>,
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        parse_config(&format!("{{\"command\": \"{command}\"}}")).expect("minimal config parses")
    }

    /// Fill every defaulted list and axis so the resolved file fully
    /// describes the run, then validate.
    pub fn resolve(mut self) -> Result<Self> {
        if self.frame_types.is_empty() {
            self.frame_types = vec![self.frame.frame_type];
        }
        if self.tracking_modes.is_empty() {
            self.tracking_modes = vec![self.analyzer.tracking];
        }
        match self.command {
            Command::SweepNav if self.sweep.is_none() => {
                self.sweep = Some(SweepAxis { start: 1.0, stop: 30.0, step: 1.0, unit: SweepUnit::Ms })
            }
            Command::SweepSnr if self.sweep.is_none() => {
                self.sweep = Some(SweepAxis { start: 0.0, stop: 30.0, step: 5.0, unit: SweepUnit::Db })
            }
            Command::Vho | Command::CompareTriggers if self.scenario.is_none() => {
                self.scenario = Some(Scenario::ramp(21, 20.0, 0.0, 20.0))
            }
            _ => {}
        }
        if let Some(snr) = self.subcarrier_snr_db {
            if !snr.is_finite() {
                return Err(CliError::config("subcarrier_snr_db", "must be finite"));
            }
            let link = self.phy.link();
            let ebn0 = ChannelContext::for_link(&link.params, &link.spec).ebn0_for_subcarrier_snr_db(snr);
            match self.impairments.ebn0_db {
                Some(e) if (e - ebn0).abs() > 1e-9 => {
                    return Err(CliError::config("impairments.ebn0_db", "conflicts with subcarrier_snr_db"))
                }
                _ => self.impairments.ebn0_db = Some(ebn0),
            }
        }
        if self.command == Command::CompareTriggers && self.trigger_metrics.is_empty() {
            self.trigger_metrics = vec![TriggerMetric::Evm, TriggerMetric::Snr, TriggerMetric::Ber];
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(CliError::config("n_frames", "must be at least 1"));
        }
        if self.parallel == Some(0) {
            return Err(CliError::config("parallel", "must be at least 1"));
        }
        self.phy.validate()?;
        self.impairments.validate().map_err(|e| CliError::config("impairments", e.to_string()))?;
        match (self.command, &self.sweep) {
            (Command::SweepNav, Some(s)) if s.unit == SweepUnit::Db => {
                return Err(CliError::config("sweep.unit", "a NAV sweep is in ms or us"));
            }
            (Command::SweepSnr, Some(s)) if s.unit != SweepUnit::Db => {
                return Err(CliError::config("sweep.unit", "an SNR sweep is in db"));
            }
            _ => {}
        }
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        match self.command {
            Command::Single | Command::SweepSnr => {
                for ft in &self.frame_types {
                    self.frame.with_frame_type(*ft).validate().map_err(|e| CliError::config("frame", e.to_string()))?;
                }
            }
            Command::Vho | Command::CompareTriggers => {
                self.policy.validate().map_err(|e| CliError::config("policy", e.to_string()))?;
                if let Some(sc) = &self.scenario {
                    sc.validate().map_err(|e| CliError::config("scenario", e.to_string()))?;
                }
            }
            Command::SweepNav => {}
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the resolved config, ignoring
    /// settings that do not change results (thread count, output dir).
    pub fn config_hash(&self) -> String {
        let canonical = ExperimentConfig { parallel: None, output: OutputPaths::default(), plot: None, ..self.clone() };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

/// Parse a JSON config; schema errors name the offending field path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config { path, message: e.into_inner().to_string() }
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

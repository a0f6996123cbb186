//! Vertical handover triggering from link-quality measurements.
//!
//! The engine keeps, per network, every snapshot it has seen and a count of
//! consecutive valid measurements that violate the policy threshold. The
//! serving network is handed over once that count reaches the dwell count
//! and some other network's latest measurement clears the threshold by the
//! hysteresis margin.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::{apply_channel, derive_seed, ChannelContext, ImpairmentConfig};
use crate::constellation::ConstellationSpec;
use crate::error::{Error, Result};
use crate::mac_frames::{build_mgmt_frame, data_field_bits, MgmtFrameSpec};
use crate::numerics::{ber_from_evm, evm_snr_convert, linear_to_db, EvmSnrDirection};
use crate::ofdm_phy::{decode_bits, grid_to_coded_bits, transmit, OfdmParams};
use crate::vsa::{
    analyze_frame, measure_ber, AnalyzerConfig, CfoCorrection, ChannelEstimation, EvmAccumulator, EvmScope, Tracking,
};

pub type NetworkId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub network_id: NetworkId,
    pub rat_label: String,
    pub timestamp: u64,
    pub evm_rms: f64,
    pub snr_db: f64,
    pub ber: f64,
    pub measurement_valid: bool,
}

impl NetworkSnapshot {
    /// Snapshot whose SNR and BER follow from the EVM analytically.
    pub fn analytic(network_id: NetworkId, timestamp: u64, evm_rms: f64, spec: &ConstellationSpec) -> Result<Self> {
        Ok(NetworkSnapshot {
            network_id,
            rat_label: String::new(),
            timestamp,
            evm_rms,
            snr_db: linear_to_db(evm_snr_convert(evm_rms, EvmSnrDirection::EvmToSnr)?),
            ber: ber_from_evm(spec, evm_rms)?,
            measurement_valid: true,
        })
    }

    /// A failed measurement: kept in the history, never counted.
    pub fn invalid(network_id: NetworkId, rat_label: &str, timestamp: u64) -> Self {
        NetworkSnapshot {
            network_id,
            rat_label: rat_label.into(),
            timestamp,
            evm_rms: 0.0,
            snr_db: 0.0,
            ber: 0.0,
            measurement_valid: false,
        }
    }

    pub fn metric(&self, metric: TriggerMetric) -> f64 {
        match metric {
            TriggerMetric::Evm => self.evm_rms,
            TriggerMetric::Snr => self.snr_db,
            TriggerMetric::Ber => self.ber,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.measurement_valid {
            return Ok(());
        }
        if !(self.evm_rms >= 0.0) || !(0.0..=1.0).contains(&self.ber) || self.snr_db.is_nan() {
            return Err(Error::Domain(format!(
                "snapshot of network {} at {} has evm {} and ber {}",
                self.network_id, self.timestamp, self.evm_rms, self.ber
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerMetric {
    Evm,
    Snr,
    Ber,
}

impl TriggerMetric {
    pub fn name(self) -> &'static str {
        match self {
            TriggerMetric::Evm => "evm",
            TriggerMetric::Snr => "snr",
            TriggerMetric::Ber => "ber",
        }
    }

    fn higher_is_better(self) -> bool {
        self == TriggerMetric::Snr
    }

    /// BER needs the frame demodulated and decoded; EVM and SNR do not.
    pub fn demodulation_required(self) -> bool {
        self == TriggerMetric::Ber
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VhoPolicy {
    pub trigger_metric: TriggerMetric,
    /// EVM as a fraction, SNR in dB, BER as a probability.
    pub serving_degrade_threshold: f64,
    pub candidate_margin: f64,
    pub dwell_count: usize,
}

impl Default for VhoPolicy {
    fn default() -> Self {
        VhoPolicy {
            trigger_metric: TriggerMetric::Evm,
            serving_degrade_threshold: 0.50,
            candidate_margin: 0.10,
            dwell_count: 2,
        }
    }
}

impl VhoPolicy {
    pub fn validate(&self) -> Result<()> {
        let (t, m) = (self.serving_degrade_threshold, self.candidate_margin);
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Configuration(format!("threshold {t} must be positive")));
        }
        if !(m >= 0.0) || !m.is_finite() {
            return Err(Error::Configuration(format!("candidate margin {m} must be non-negative")));
        }
        if !self.trigger_metric.higher_is_better() && m >= t {
            return Err(Error::Configuration(format!("margin {m} leaves no acceptable candidate below {t}")));
        }
        if self.dwell_count == 0 {
            return Err(Error::Configuration("dwell count must be at least 1".into()));
        }
        Ok(())
    }

    /// The same policy expressed in another metric. EVM bounds map to SNR
    /// through `SNR = 1/EVM²` and to BER through the EVM-based BER formula,
    /// so decisions on analytic snapshots coincide.
    pub fn mapped_to(&self, metric: TriggerMetric, spec: &ConstellationSpec) -> Result<Self> {
        let evm_policy = self.as_evm(spec)?;
        let thr = evm_policy.serving_degrade_threshold;
        let bound = thr - evm_policy.candidate_margin;
        let (t, b) = match metric {
            TriggerMetric::Evm => (thr, bound),
            TriggerMetric::Snr => (-20.0 * thr.log10(), -20.0 * bound.log10()),
            TriggerMetric::Ber => (ber_from_evm(spec, thr)?, ber_from_evm(spec, bound)?),
        };
        let p = VhoPolicy {
            trigger_metric: metric,
            serving_degrade_threshold: t,
            candidate_margin: (b - t).abs(),
            ..*self
        };
        p.validate()?;
        Ok(p)
    }

    fn as_evm(&self, spec: &ConstellationSpec) -> Result<Self> {
        let (t, m) = (self.serving_degrade_threshold, self.candidate_margin);
        let (thr, bound) = match self.trigger_metric {
            TriggerMetric::Evm => (t, t - m),
            TriggerMetric::Snr => (10f64.powf(-t / 20.0), 10f64.powf(-(t + m) / 20.0)),
            TriggerMetric::Ber => {
                return Err(Error::Configuration(format!(
                    "BER thresholds are not mapped back to EVM ({:?})",
                    spec.scheme
                )))
            }
        };
        Ok(VhoPolicy {
            trigger_metric: TriggerMetric::Evm,
            serving_degrade_threshold: thr,
            candidate_margin: thr - bound,
            ..*self
        })
    }

    /// True when `value` breaches the serving threshold.
    pub fn violates(&self, value: f64) -> bool {
        if self.trigger_metric.higher_is_better() {
            value < self.serving_degrade_threshold
        } else {
            value > self.serving_degrade_threshold
        }
    }

    /// Level a candidate must beat, threshold shifted by the margin.
    pub fn candidate_bound(&self) -> f64 {
        if self.trigger_metric.higher_is_better() {
            self.serving_degrade_threshold + self.candidate_margin
        } else {
            self.serving_degrade_threshold - self.candidate_margin
        }
    }

    fn acceptable(&self, value: f64) -> bool {
        if self.trigger_metric.higher_is_better() {
            value > self.candidate_bound()
        } else {
            value < self.candidate_bound()
        }
    }

    fn better(&self, a: f64, b: f64) -> bool {
        if self.trigger_metric.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTrack {
    pub rat_label: String,
    pub history: Vec<NetworkSnapshot>,
    /// Consecutive valid measurements breaching the threshold.
    pub violations: usize,
}

impl NetworkTrack {
    pub fn latest_valid(&self) -> Option<&NetworkSnapshot> {
        self.history.iter().rev().find(|s| s.measurement_valid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub policy: VhoPolicy,
    pub serving: Option<NetworkId>,
    pub networks: BTreeMap<NetworkId, NetworkTrack>,
}

impl EngineState {
    pub fn new(policy: VhoPolicy, serving: Option<NetworkId>) -> Result<Self> {
        policy.validate()?;
        Ok(EngineState { policy, serving, networks: BTreeMap::new() })
    }

    /// Record a snapshot, returning the successor state.
    pub fn observe(&self, snapshot: NetworkSnapshot) -> Result<EngineState> {
        snapshot.validate()?;
        let mut next = self.clone();
        let track = next.networks.entry(snapshot.network_id).or_insert_with(|| NetworkTrack {
            rat_label: snapshot.rat_label.clone(),
            history: Vec::new(),
            violations: 0,
        });
        if let Some(last) = track.history.last() {
            if snapshot.timestamp <= last.timestamp {
                return Err(Error::Ordering(format!(
                    "network {} snapshot at {} after {}",
                    snapshot.network_id, snapshot.timestamp, last.timestamp
                )));
            }
        }
        if snapshot.measurement_valid {
            if self.policy.violates(snapshot.metric(self.policy.trigger_metric)) {
                track.violations += 1;
            } else {
                track.violations = 0;
            }
        }
        track.history.push(snapshot);
        Ok(next)
    }

    pub fn with_serving(&self, serving: NetworkId) -> EngineState {
        EngineState { serving: Some(serving), ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "target")]
pub enum Verdict {
    Stay,
    Handover(NetworkId),
}

/// Values behind a decision, all taken from observed snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReason {
    pub metric: TriggerMetric,
    pub serving: NetworkId,
    pub serving_value: Option<f64>,
    pub threshold: f64,
    pub consecutive_violations: usize,
    pub dwell_count: usize,
    pub candidate_bound: f64,
    pub best_candidate: Option<(NetworkId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VhoDecision {
    pub verdict: Verdict,
    pub at_timestamp: u64,
    pub reason: DecisionReason,
}

/// Pure decision on the current state.
pub fn decide(state: &EngineState) -> Result<VhoDecision> {
    let policy = &state.policy;
    let serving = state.serving.ok_or_else(|| Error::Configuration("no serving network designated".into()))?;
    let track = state
        .networks
        .get(&serving)
        .ok_or_else(|| Error::Configuration(format!("serving network {serving} has no measurements")))?;
    let metric = policy.trigger_metric;
    let at_timestamp = state.networks.values().filter_map(|t| t.history.last()).map(|s| s.timestamp).max().unwrap_or(0);

    let mut best: Option<(NetworkId, f64)> = None;
    for (&id, t) in &state.networks {
        if id == serving {
            continue;
        }
        if let Some(s) = t.latest_valid() {
            let v = s.metric(metric);
            if policy.acceptable(v) && best.is_none_or(|(_, b)| policy.better(v, b)) {
                best = Some((id, v));
            }
        }
    }
    let degraded = track.violations >= policy.dwell_count;
    let verdict = match best {
        Some((id, _)) if degraded => Verdict::Handover(id),
        _ => Verdict::Stay,
    };
    Ok(VhoDecision {
        verdict,
        at_timestamp,
        reason: DecisionReason {
            metric,
            serving,
            serving_value: track.latest_valid().map(|s| s.metric(metric)),
            threshold: policy.serving_degrade_threshold,
            consecutive_violations: track.violations,
            dwell_count: policy.dwell_count,
            candidate_bound: policy.candidate_bound(),
            best_candidate: best,
        },
    })
}

/// Changes applied to a network's impairments from a given step onward.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpairmentDelta {
    pub ebn0_db: Option<f64>,
    pub cfo_hz: Option<f64>,
    pub phase_noise_linewidth_hz: Option<f64>,
    pub iq_gain_imbalance_db: Option<f64>,
    pub iq_phase_skew_deg: Option<f64>,
}

impl ImpairmentDelta {
    fn apply(&self, cfg: &mut ImpairmentConfig) {
        if let Some(v) = self.ebn0_db {
            cfg.ebn0_db = Some(v);
        }
        let fields = [
            (self.cfo_hz, &mut cfg.cfo_hz),
            (self.phase_noise_linewidth_hz, &mut cfg.phase_noise_linewidth_hz),
            (self.iq_gain_imbalance_db, &mut cfg.iq_gain_imbalance_db),
            (self.iq_phase_skew_deg, &mut cfg.iq_phase_skew_deg),
        ];
        for (v, slot) in fields {
            if let Some(v) = v {
                *slot = v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub step: u64,
    #[serde(flatten)]
    pub delta: ImpairmentDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSchedule {
    pub id: NetworkId,
    #[serde(default)]
    pub rat_label: String,
    #[serde(default)]
    pub base: ImpairmentConfig,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
}

impl NetworkSchedule {
    /// Impairments in force at `step`: the base with every entry up to and
    /// including `step` applied in order.
    pub fn impairments_at(&self, step: u64) -> ImpairmentConfig {
        let mut cfg = self.base.clone();
        let mut entries: Vec<&ScheduleEntry> = self.schedule.iter().filter(|e| e.step <= step).collect();
        entries.sort_by_key(|e| e.step);
        entries.iter().for_each(|e| e.delta.apply(&mut cfg));
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BerMode {
    /// BER predicted from the measured EVM; no decoding.
    #[default]
    Predicted,
    /// BER counted on the decoded frame.
    Decoded,
}

fn scenario_analyzer() -> AnalyzerConfig {
    // Unbiased EVM at low SNR: no pilot-noise amplification, full-frame
    // channel estimate.
    AnalyzerConfig {
        tracking: Tracking::Off,
        cfo_correction: CfoCorrection::Refined,
        channel_estimation: ChannelEstimation::FullFrame,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub steps: u64,
    pub serving: NetworkId,
    pub networks: Vec<NetworkSchedule>,
    #[serde(default)]
    pub frame: MgmtFrameSpec,
    #[serde(default)]
    pub ber_mode: BerMode,
    #[serde(default = "scenario_analyzer")]
    pub analyzer: AnalyzerConfig,
}

impl Scenario {
    /// Serving network 0 ramps linearly in Eb/N0 from `start_db` to `end_db`
    /// over `steps`; network 1 holds `candidate_db`.
    pub fn ramp(steps: u64, start_db: f64, end_db: f64, candidate_db: f64) -> Self {
        let slope = if steps > 1 { (end_db - start_db) / (steps - 1) as f64 } else { 0.0 };
        let serving = NetworkSchedule {
            id: 0,
            rat_label: "WLAN".into(),
            base: ImpairmentConfig::awgn(start_db, 0),
            schedule: (0..steps)
                .map(|s| ScheduleEntry {
                    step: s,
                    delta: ImpairmentDelta { ebn0_db: Some(start_db + slope * s as f64), ..Default::default() },
                })
                .collect(),
        };
        let candidate = NetworkSchedule {
            id: 1,
            rat_label: "WiMAX-like".into(),
            base: ImpairmentConfig::awgn(candidate_db, 0),
            schedule: Vec::new(),
        };
        Scenario {
            steps,
            serving: 0,
            networks: vec![serving, candidate],
            frame: MgmtFrameSpec { payload_bits: 4000, ..MgmtFrameSpec::default() },
            ber_mode: BerMode::Predicted,
            analyzer: scenario_analyzer(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.networks.len() < 2 {
            return Err(Error::Configuration("a scenario needs at least two networks".into()));
        }
        if self.steps == 0 {
            return Err(Error::Configuration("scenario schedule is empty".into()));
        }
        let mut ids: Vec<NetworkId> = self.networks.iter().map(|n| n.id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.networks.len() {
            return Err(Error::Configuration("network ids must be distinct".into()));
        }
        if !ids.contains(&self.serving) {
            return Err(Error::Configuration(format!("serving network {} is not in the scenario", self.serving)));
        }
        for n in &self.networks {
            n.base.validate()?;
        }
        self.frame.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u64,
    pub serving: NetworkId,
    pub snapshots: Vec<NetworkSnapshot>,
    pub decision: VhoDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTrace {
    pub policy: VhoPolicy,
    pub steps: Vec<TraceStep>,
}

impl ScenarioTrace {
    pub fn handovers(&self) -> Vec<(u64, NetworkId)> {
        self.steps
            .iter()
            .filter_map(|s| match s.decision.verdict {
                Verdict::Handover(t) => Some((s.step, t)),
                Verdict::Stay => None,
            })
            .collect()
    }

    pub fn csv_header() -> Vec<String> {
        [
            "step",
            "serving",
            "network_id",
            "rat_label",
            "measurement_valid",
            "evm_rms",
            "snr_db",
            "ber",
            "verdict",
            "target",
        ]
        .map(String::from)
        .into()
    }

    /// One row per (step, network).
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for s in &self.steps {
            let (verdict, target) = match s.decision.verdict {
                Verdict::Stay => ("stay", String::new()),
                Verdict::Handover(t) => ("handover", t.to_string()),
            };
            for n in &s.snapshots {
                rows.push(vec![
                    s.step.to_string(),
                    s.serving.to_string(),
                    n.network_id.to_string(),
                    n.rat_label.clone(),
                    n.measurement_valid.to_string(),
                    n.evm_rms.to_string(),
                    n.snr_db.to_string(),
                    n.ber.to_string(),
                    verdict.into(),
                    target.clone(),
                ]);
            }
        }
        rows
    }
}

/// Link the scenario frames are sent over.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkParams {
    pub params: OfdmParams,
    pub spec: ConstellationSpec,
}

/// Measure one network at one step: transmit the scenario frame through the
/// network's impairments and analyze it.
pub fn measure_network(
    scenario: &Scenario,
    network: &NetworkSchedule,
    step: u64,
    link: &LinkParams,
    ber_mode: BerMode,
    seed: u64,
) -> Result<NetworkSnapshot> {
    let frame = MgmtFrameSpec { sequence_number: (step % 4096) as u16, ..scenario.frame.clone() };
    let bits = data_field_bits(&build_mgmt_frame(&frame)?);
    let scramble_seed = (derive_seed(seed, &[u64::from(network.id), step, 1]) % 127 + 1) as u8;
    let tx = transmit(&bits, &link.params, &link.spec, scramble_seed)?;
    let mut cfg = network.impairments_at(step);
    cfg.seed = derive_seed(seed, &[u64::from(network.id), step]);
    let rx = apply_channel(&tx.samples, &ChannelContext::for_frame(&tx), &cfg)?;

    let grid = match analyze_frame(&rx, &tx.reference_grid, &link.params, &scenario.analyzer) {
        Ok(g) => g,
        Err(Error::SyncFailure(_)) => return Ok(NetworkSnapshot::invalid(network.id, &network.rat_label, step)),
        Err(e) => return Err(e),
    };
    let mut acc = EvmAccumulator::new(link.spec.mean_power())?;
    acc.add(&grid)?;
    let evm_rms = acc.scoped(EvmScope::DataAndPilot)?.evm_rms;
    let ber = match ber_mode {
        BerMode::Predicted if evm_rms > 0.0 => ber_from_evm(&link.spec, evm_rms)?,
        BerMode::Predicted => 0.0,
        BerMode::Decoded => {
            let coded = grid_to_coded_bits(&grid.measured, &link.spec);
            let decoded = decode_bits(&coded, &link.params, &link.spec, scramble_seed, bits.len())?;
            measure_ber(&decoded, &bits)?.ber
        }
    };
    Ok(NetworkSnapshot {
        network_id: network.id,
        rat_label: network.rat_label.clone(),
        timestamp: step,
        evm_rms,
        snr_db: grid.ltf_snr_db,
        ber,
        measurement_valid: true,
    })
}

fn run_with_mode(
    scenario: &Scenario,
    policy: &VhoPolicy,
    link: &LinkParams,
    ber_mode: BerMode,
    seed: u64,
) -> Result<ScenarioTrace> {
    scenario.validate()?;
    let mut networks: Vec<&NetworkSchedule> = scenario.networks.iter().collect();
    networks.sort_by_key(|n| n.id);
    let mut state = EngineState::new(*policy, Some(scenario.serving))?;
    let mut steps = Vec::with_capacity(scenario.steps as usize);
    for step in 0..scenario.steps {
        let snapshots = networks
            .iter()
            .map(|n| measure_network(scenario, n, step, link, ber_mode, seed))
            .collect::<Result<Vec<_>>>()?;
        for s in &snapshots {
            state = state.observe(s.clone())?;
        }
        let serving = state.serving.unwrap_or(scenario.serving);
        let decision = decide(&state)?;
        if let Verdict::Handover(target) = decision.verdict {
            state = state.with_serving(target);
        }
        steps.push(TraceStep { step, serving, snapshots, decision });
    }
    Ok(ScenarioTrace { policy: *policy, steps })
}

/// Step the scenario, feeding each network's measurement to the engine and
/// switching the serving network whenever a handover is decided.
pub fn run_scenario(scenario: &Scenario, policy: &VhoPolicy, link: &LinkParams, seed: u64) -> Result<ScenarioTrace> {
    run_with_mode(scenario, policy, link, scenario.ber_mode, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerComparison {
    pub metric: TriggerMetric,
    pub handover_step: Option<u64>,
    pub target: Option<NetworkId>,
    /// Serving measurements from the first threshold breach to the decision.
    pub measurements_to_decision: Option<u64>,
    pub demodulation_required: bool,
}

impl TriggerComparison {
    pub fn csv_header() -> Vec<String> {
        ["metric", "handover_step", "target", "measurements_to_decision", "demodulation_required"]
            .map(String::from)
            .into()
    }

    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.metric.name().into(),
            opt(self.handover_step),
            opt(self.target.map(u64::from)),
            opt(self.measurements_to_decision),
            self.demodulation_required.to_string(),
        ]
    }
}

/// Run the same scenario under each policy. BER policies always decode.
pub fn compare_triggers(
    scenario: &Scenario,
    policies: &[VhoPolicy],
    link: &LinkParams,
    seed: u64,
) -> Result<Vec<TriggerComparison>> {
    policies
        .iter()
        .map(|p| {
            let mode = if p.trigger_metric.demodulation_required() { BerMode::Decoded } else { scenario.ber_mode };
            let trace = run_with_mode(scenario, p, link, mode, seed)?;
            let first = trace.handovers().first().copied();
            let measurements_to_decision = first.map(|(at, _)| {
                let serving = trace.steps[at as usize].serving;
                let breach = trace.steps[..=at as usize]
                    .iter()
                    .filter_map(|s| s.snapshots.iter().find(|n| n.network_id == serving))
                    .filter(|n| n.measurement_valid && p.violates(n.metric(p.trigger_metric)))
                    .map(|n| n.timestamp)
                    .min()
                    .unwrap_or(at);
                at - breach + 1
            });
            Ok(TriggerComparison {
                metric: p.trigger_metric,
                handover_step: first.map(|(s, _)| s),
                target: first.map(|(_, t)| t),
                measurements_to_decision,
                demodulation_required: p.trigger_metric.demodulation_required(),
            })
        })
        .collect()
}

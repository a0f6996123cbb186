use evmlink::channel::{apply_channel, derive_seed, ChannelContext};
use evmlink::mac_frames::{
    build_mgmt_frame, data_field_bits, nav_to_symbol_count, payload_bits_for_symbols, FrameType, MgmtFrameSpec,
};
use evmlink::ofdm_phy::transmit;
use evmlink::vho_engine::{compare_triggers, run_scenario, ScenarioTrace, TriggerComparison};
use evmlink::vsa::{analyze_frame, AnalyzerConfig, EvmAccumulator, EvmReport, Tracking};
use evmlink::Error;
use rayon::prelude::*;

use crate::config::{Command, ExperimentConfig, SweepUnit};
use crate::table::ResultTable;
use crate::{CliError, Result};

pub fn tracking_name(t: Tracking) -> &'static str {
    match t {
        Tracking::Off => "off",
        Tracking::PilotPhaseAmplitude => "pilot_phase_amplitude",
    }
}

/// Execute the commanded pipeline. The config is resolved first, so a raw
/// parsed config is accepted too.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    let config = config.clone().resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallel.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config("parallel", e.to_string()))?;
    pool.install(|| match config.command {
        Command::Single | Command::SweepNav | Command::SweepSnr => evm_table(&config),
        Command::Vho => vho_table(&config),
        Command::CompareTriggers => trigger_table(&config),
    })
}

struct Job {
    point: usize,
    value: Option<f64>,
    frame_type: FrameType,
}

struct JobResult {
    nav_us: u32,
    symbols: usize,
    per_mode: Vec<(EvmAccumulator, usize)>,
}

fn evm_table(config: &ExperimentConfig) -> Result<ResultTable> {
    let sweep = config.sweep.filter(|_| config.command != Command::Single);
    let values: Vec<Option<f64>> = match &sweep {
        Some(s) => s.points().into_iter().map(Some).collect(),
        None => vec![None],
    };
    let jobs: Vec<Job> = values
        .iter()
        .enumerate()
        .flat_map(|(point, &value)| config.frame_types.iter().map(move |&frame_type| Job { point, value, frame_type }))
        .collect();
    let results = jobs.par_iter().map(|j| run_job(config, j)).collect::<Result<Vec<_>>>()?;

    let mut header = Vec::new();
    if let Some(s) = &sweep {
        header.push(s.column().to_string());
    }
    header.extend(["frame_type", "tracking", "nav_us", "ofdm_symbols"].map(String::from));
    header.extend(EvmReport::csv_header());
    header.extend(["sync_ok", "sync_failures", "config_hash"].map(String::from));
    let report_cols = EvmReport::csv_header().len();
    let hash = config.config_hash();

    let mut table = ResultTable::new(header);
    for (job, res) in jobs.iter().zip(results) {
        for (mode, (acc, failures)) in config.tracking_modes.iter().zip(res.per_mode) {
            let mut row = Vec::new();
            if let Some(v) = job.value {
                row.push(v.to_string());
            }
            row.push(job.frame_type.name().to_string());
            row.push(tracking_name(*mode).to_string());
            row.push(res.nav_us.to_string());
            row.push(res.symbols.to_string());
            if acc.frames() > 0 {
                row.extend(acc.report()?.csv_record());
            } else {
                row.extend(std::iter::repeat_n(String::new(), report_cols));
            }
            row.push((failures == 0).to_string());
            row.push(failures.to_string());
            row.push(hash.clone());
            table.push(row);
        }
    }
    Ok(table)
}

fn frame_for(config: &ExperimentConfig, job: &Job) -> Result<MgmtFrameSpec> {
    let link = config.phy.link();
    let base = config.frame.with_frame_type(job.frame_type);
    let (Command::SweepNav, Some(v), Some(axis)) = (config.command, job.value, config.sweep) else {
        return Ok(base);
    };
    let nav = match axis.unit {
        SweepUnit::Ms => v * 1000.0,
        _ => v,
    };
    let nav_us = nav.round();
    if !(0.0..=f64::from(evmlink::mac_frames::MAX_DURATION_US)).contains(&nav_us) {
        return Err(CliError::config("sweep", format!("NAV {nav} us does not fit the Duration field")));
    }
    let nav_us = nav_us as u32;
    let symbols =
        nav_to_symbol_count(nav_us, &link.params).map_err(|e| CliError::config("sweep.start", e.to_string()))?;
    Ok(MgmtFrameSpec {
        nav_us,
        payload_bits: payload_bits_for_symbols(&base, symbols, &link.params, &link.spec),
        ..base
    })
}

fn run_job(config: &ExperimentConfig, job: &Job) -> Result<JobResult> {
    let link = config.phy.link();
    let spec = frame_for(config, job)?;
    let mut impairments = config.impairments.clone();
    if let (Command::SweepSnr, Some(snr)) = (config.command, job.value) {
        impairments.ebn0_db = Some(ChannelContext::for_link(&link.params, &link.spec).ebn0_for_subcarrier_snr_db(snr));
    }
    let mut per_mode = config
        .tracking_modes
        .iter()
        .map(|_| Ok((EvmAccumulator::new(link.spec.mean_power())?, 0usize)))
        .collect::<Result<Vec<_>>>()?;
    let stream = |frame: usize, k: u64| {
        derive_seed(config.seed, &[job.point as u64, u64::from(job.frame_type.subtype()), frame as u64, k])
    };
    let mut symbols = 0;
    for i in 0..config.n_frames {
        let frame = MgmtFrameSpec { sequence_number: (i % 4096) as u16, ..spec.clone() };
        let bits = data_field_bits(&build_mgmt_frame(&frame)?);
        let tx = transmit(&bits, &link.params, &link.spec, (stream(i, 1) % 127 + 1) as u8)?;
        symbols = tx.symbol_count();
        impairments.seed = stream(i, 0);
        let rx = apply_channel(&tx.samples, &ChannelContext::for_frame(&tx), &impairments)?;
        for (mode, (acc, failures)) in config.tracking_modes.iter().zip(per_mode.iter_mut()) {
            let analyzer = AnalyzerConfig { tracking: *mode, ..config.analyzer };
            match analyze_frame(&rx, &tx.reference_grid, &link.params, &analyzer) {
                Ok(grid) => acc.add(&grid)?,
                Err(Error::SyncFailure(_)) => *failures += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(JobResult { nav_us: spec.nav_us, symbols, per_mode })
}

fn with_hash(header: Vec<String>, rows: Vec<Vec<String>>, hash: &str) -> ResultTable {
    let mut header = header;
    header.push("config_hash".into());
    let mut table = ResultTable::new(header);
    for mut r in rows {
        r.push(hash.to_string());
        table.push(r);
    }
    table
}

fn vho_table(config: &ExperimentConfig) -> Result<ResultTable> {
    let scenario = config.scenario.as_ref().expect("resolved config has a scenario");
    let trace = run_scenario(scenario, &config.policy, &config.phy.link(), config.seed)?;
    Ok(with_hash(ScenarioTrace::csv_header(), trace.csv_rows(), &config.config_hash()))
}

fn trigger_table(config: &ExperimentConfig) -> Result<ResultTable> {
    let scenario = config.scenario.as_ref().expect("resolved config has a scenario");
    let link = config.phy.link();
    let policies = config
        .trigger_metrics
        .iter()
        .map(|m| config.policy.mapped_to(*m, &link.spec))
        .collect::<evmlink::Result<Vec<_>>>()
        .map_err(|e| CliError::config("policy", e.to_string()))?;
    let rows = compare_triggers(scenario, &policies, &link, config.seed)?;
    Ok(with_hash(TriggerComparison::csv_header(), rows.iter().map(|r| r.csv_record()).collect(), &config.config_hash()))
}

//! Hand-written SVG line plots of a result table.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::config::Command;
use crate::table::ResultTable;
use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSpec {
    pub x: String,
    pub y: Vec<String>,
    /// Columns whose values split rows into series.
    #[serde(default)]
    pub group_by: Vec<String>,
}

pub fn default_plot_spec(command: Command) -> PlotSpec {
    let spec = |x: &str, y: &str, g: &[&str]| PlotSpec {
        x: x.into(),
        y: vec![y.into()],
        group_by: g.iter().map(|s| s.to_string()).collect(),
    };
    match command {
        Command::Single => spec("ofdm_symbols", "evm_rms", &["frame_type", "tracking"]),
        Command::SweepNav => spec("nav_ms", "evm_rms", &["frame_type", "tracking"]),
        Command::SweepSnr => spec("snr_db", "evm_db", &["frame_type", "tracking"]),
        Command::Vho => spec("step", "evm_rms", &["network_id"]),
        Command::CompareTriggers => spec("metric", "handover_step", &[]),
    }
}

fn axis_label(column: &str) -> String {
    let known = match column {
        "nav_ms" => "NAV (ms)",
        "nav_us" => "NAV (µs)",
        "snr_db" => "Subcarrier SNR (dB)",
        "evm_rms" => "EVM rms (fraction of reference)",
        "evm_pilot" => "Pilot EVM rms (fraction of reference)",
        "evm_db" => "EVM (dB)",
        "evm_pilot_db" => "Pilot EVM (dB)",
        "freq_err_hz" => "Frequency error (Hz)",
        "ofdm_symbols" => "Payload length (OFDM symbols)",
        "step" => "Scenario step (measurements)",
        "handover_step" => "Handover step (measurements)",
        "measurements_to_decision" => "Measurements to decision (count)",
        "snr_db_est" => "SNR (dB)",
        "ber" => "BER (probability)",
        "metric" => "Trigger metric",
        _ => return column.to_string(),
    };
    known.into()
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"];

struct Series {
    label: String,
    color_key: String,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
        (lo - pad, hi + pad)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

/// Line plot with one series per group and y column. Rows whose tracking
/// column reads `off` are drawn dashed, tracked ones solid. A non-numeric x
/// column is treated as categories in first-seen order.
pub fn emit_plot(table: &ResultTable, spec: &PlotSpec) -> Result<String> {
    if table.rows.is_empty() {
        return Err(CliError::Selection("table has no rows".into()));
    }
    if spec.y.is_empty() {
        return Err(CliError::Selection("no y columns selected".into()));
    }
    let xs_raw = table.column(&spec.x)?;
    let group_idx = spec.group_by.iter().map(|g| table.column_index(g)).collect::<Result<Vec<_>>>()?;
    let y_idx = spec.y.iter().map(|y| table.column_index(y)).collect::<Result<Vec<_>>>()?;
    let tracking_idx = table.column_index("tracking").ok();

    let numeric_x: Option<Vec<f64>> = xs_raw.iter().map(|c| c.parse::<f64>().ok()).collect();
    let mut categories: Vec<&str> = Vec::new();
    let xs: Vec<f64> = match &numeric_x {
        Some(v) => v.clone(),
        None => xs_raw
            .iter()
            .map(|c| {
                let i = categories.iter().position(|k| k == c).unwrap_or_else(|| {
                    categories.push(c);
                    categories.len() - 1
                });
                i as f64
            })
            .collect(),
    };

    let mut series: BTreeMap<(usize, String), Series> = BTreeMap::new();
    let mut order: Vec<(usize, String)> = Vec::new();
    for (r, row) in table.rows.iter().enumerate() {
        let group: Vec<&str> = group_idx.iter().map(|&i| row[i].as_str()).collect();
        let dashed = tracking_idx.is_some_and(|i| row[i] == "off");
        for (k, &yi) in y_idx.iter().enumerate() {
            let mut label = group.join(" / ");
            if spec.y.len() > 1 || label.is_empty() {
                label = if label.is_empty() { spec.y[k].clone() } else { format!("{label} / {}", spec.y[k]) };
            }
            let key = (k, group.join("\u{1f}"));
            let s = series.entry(key.clone()).or_insert_with(|| {
                order.push(key.clone());
                let color_key: Vec<&str> = group
                    .iter()
                    .zip(&spec.group_by)
                    .filter(|(_, g)| g.as_str() != "tracking")
                    .map(|(v, _)| *v)
                    .collect();
                Series { label, color_key: format!("{k}:{}", color_key.join("/")), dashed, points: Vec::new() }
            });
            if let Ok(y) = row[yi].parse::<f64>() {
                if y.is_finite() && xs[r].is_finite() {
                    s.points.push((xs[r], y));
                }
            }
        }
    }

    let all: Vec<(f64, f64)> = series.values().flat_map(|s| s.points.iter().copied()).collect();
    let (x0, x1) = if all.is_empty() {
        (0.0, 1.0)
    } else {
        nice_range(
            all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
            all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (y0, y1) = if all.is_empty() {
        (0.0, 1.0)
    } else {
        nice_range(
            all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
            all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
        )
    };

    let (w, h) = (760.0, 480.0);
    let (left, right, top, bottom) = (80.0, 220.0, 30.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut colors: Vec<String> = Vec::new();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>"#
    );

    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let yv = y0 + f * (y1 - y0);
        let py = sy(yv);
        let _ =
            writeln!(svg, r##"<line x1="{left}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#dddddd"/>"##, left + pw);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 6.0,
            py + 4.0,
            fmt_tick(yv)
        );
    }
    if categories.is_empty() {
        for i in 0..=5 {
            let xv = x0 + i as f64 / 5.0 * (x1 - x0);
            let px = sx(xv);
            let _ = writeln!(
                svg,
                r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                top + ph + 18.0,
                fmt_tick(xv)
            );
        }
    } else {
        for (i, c) in categories.iter().enumerate() {
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(i as f64),
                top + ph + 18.0,
                escape(c)
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 15.0,
        escape(&axis_label(&spec.x))
    );
    let ylabel = spec.y.iter().map(|c| axis_label(c)).collect::<Vec<_>>().join(", ");
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&ylabel)
    );

    for (n, key) in order.iter().enumerate() {
        let s = &series[key];
        let ci = colors.iter().position(|c| *c == s.color_key).unwrap_or_else(|| {
            colors.push(s.color_key.clone());
            colors.len() - 1
        });
        let color = PALETTE[ci % PALETTE.len()];
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let class = if s.dashed { "untracked" } else { "tracked" };
        let _ = writeln!(svg, r#"<g class="series {class}" data-label="{}">"#, escape(&s.label));
        if s.points.len() > 1 {
            let pts: Vec<String> = s.points.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
                pts.join(" ")
            );
        }
        for (x, y) in &s.points {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(*x), sy(*y));
        }
        let ly = top + 10.0 + n as f64 * 18.0;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
            lx + 24.0
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 30.0, ly + 4.0, escape(&s.label));
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

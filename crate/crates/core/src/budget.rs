//! Battery-life model, parameter and MAC accounting, and forward-pass timing.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::{PartTable, ALIGNED_SIZE, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::netdef::{count_params, Family, LayerKind, Mode, Network, NetworkSpec};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetParams {
    /// Battery capacity in watt-hours.
    pub capacity_wh: f64,
    /// Draw in normal use, watts.
    pub p_n: f64,
    /// Full draw of the attribute detector, watts.
    pub p_d: f64,
    /// Authentication ratio: the detector runs every `t_a / alpha` seconds.
    pub alpha: f64,
    /// Fraction of time the device is in use.
    pub beta: f64,
    /// Prediction time of the detector, seconds.
    pub t_a: f64,
}

impl BudgetParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.capacity_wh, self.p_n, self.p_d, self.alpha, self.beta, self.t_a];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("budget quantities must be finite and non-negative".into()));
        }
        if self.alpha > 1.0 || self.beta > 1.0 {
            return Err(Error::InvalidArgument("alpha and beta must not exceed 1".into()));
        }
        Ok(())
    }
}

/// Hours until the battery is empty: `C / (P_n + beta * alpha * P_d)`.
pub fn battery_life(p: &BudgetParams) -> Result<f64> {
    p.validate()?;
    let draw = p.p_n + p.beta * p.alpha * p.p_d;
    if draw <= 0.0 {
        return Err(Error::InvalidArgument("total power draw is zero".into()));
    }
    Ok(p.capacity_wh / draw)
}

/// Seconds between authentications, `None` when `alpha = 0` (never).
pub fn auth_interval(t_a: f64, alpha: f64) -> Option<f64> {
    (alpha > 0.0).then(|| t_a / alpha)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub params: BudgetParams,
    pub battery_hours: f64,
    /// `None` means authentication never runs.
    pub auth_interval_s: Option<f64>,
}

pub fn budget_report(p: &BudgetParams) -> Result<BudgetReport> {
    Ok(BudgetReport { params: *p, battery_hours: battery_life(p)?, auth_interval_s: auth_interval(p.t_a, p.alpha) })
}

/// Multiply-accumulates of one forward pass: `h * w * k^2 * c_in * c_out` per
/// same-padded conv and `d_in * d_out` per dense layer; pooling and relu are
/// free.
pub fn count_macs(spec: &NetworkSpec) -> Result<u64> {
    Ok(spec
        .layer_plan()?
        .iter()
        .map(|l| {
            let w: u64 = l.weight_shape.iter().map(|&d| d as u64).product();
            match l.kind {
                LayerKind::Conv { .. } => (l.in_hw.0 * l.in_hw.1) as u64 * w,
                LayerKind::Dense { .. } => w,
            }
        })
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    /// `w x h` crop size.
    pub crop: String,
    pub network: String,
    pub params: usize,
    pub macs: u64,
}

/// One row per part network of `family`, in part-table order.
pub fn part_param_rows(table: &PartTable, family: &Family) -> Result<Vec<ParamRow>> {
    table
        .parts
        .iter()
        .map(|p| {
            let spec = NetworkSpec::multi(family.clone(), p.window.h, p.window.w, p.attributes.len())?;
            Ok(ParamRow {
                crop: format!("{}x{}", p.window.w, p.window.h),
                network: format!("{}-{}", family.prefix(), p.name),
                params: count_params(&spec)?,
                macs: count_macs(&spec)?,
            })
        })
        .collect()
}

/// The single-attribute network on the aligned full face.
pub fn binary_full_row(family: &Family) -> Result<ParamRow> {
    let spec = NetworkSpec::new(family.clone(), Mode::Binary, ALIGNED_SIZE, ALIGNED_SIZE, 1)?;
    let name = match family {
        Family::Deep => "BinaryDeep-Full".to_string(),
        Family::Wide => "BinaryWide-Full".to_string(),
        Family::Custom(_) => "BinaryCustom-Full".to_string(),
    };
    Ok(ParamRow {
        crop: format!("{ALIGNED_SIZE}x{ALIGNED_SIZE}"),
        network: name,
        params: count_params(&spec)?,
        macs: count_macs(&spec)?,
    })
}

pub fn ensemble_name(family: &Family) -> &'static str {
    match family {
        Family::Deep => "MultiDeep",
        Family::Wide => "MultiWide",
        Family::Custom(_) => "MultiCustom",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub network: String,
    pub params: usize,
    pub macs: u64,
    pub mean_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub warmup: usize,
    pub parts: Vec<BenchEntry>,
    /// Sum of the part means: one frame through the whole ensemble.
    pub ensemble_seconds: f64,
    pub binary: Option<BenchEntry>,
    /// One binary network per attribute.
    pub binary_all_seconds: Option<f64>,
}

pub const DEFAULT_WARMUP: usize = 5;

/// Mean wall time of `repetitions` forward passes after `warmup` untimed ones.
pub fn time_forward(net: &Network, input: &Tensor, repetitions: usize, warmup: usize) -> Result<f64> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    for _ in 0..warmup {
        std::hint::black_box(net.forward(input)?);
    }
    let start = Instant::now();
    for _ in 0..repetitions {
        std::hint::black_box(net.forward(input)?);
    }
    Ok(start.elapsed().as_secs_f64() / repetitions as f64)
}

fn entry(name: &str, net: &Network, input: &Tensor, repetitions: usize, warmup: usize) -> Result<BenchEntry> {
    Ok(BenchEntry {
        network: name.to_string(),
        params: net.param_count(),
        macs: count_macs(&net.spec)?,
        mean_seconds: time_forward(net, input, repetitions, warmup)?,
    })
}

/// Times each part network and, optionally, a binary full-face network.
/// With `parallel` the part networks are timed concurrently, one per worker.
pub fn bench_forward(
    parts: &[(String, &Network, &Tensor)],
    binary: Option<(String, &Network, &Tensor)>,
    repetitions: usize,
    warmup: usize,
    parallel: bool,
) -> Result<BenchReport> {
    let time = |(name, net, input): &(String, &Network, &Tensor)| entry(name, net, input, repetitions, warmup);
    let entries = if parallel {
        parts.par_iter().map(time).collect::<Result<Vec<_>>>()?
    } else {
        parts.iter().map(time).collect::<Result<Vec<_>>>()?
    };
    let binary = binary.map(|(name, net, input)| entry(&name, net, input, repetitions, warmup)).transpose()?;
    Ok(BenchReport {
        repetitions,
        warmup,
        ensemble_seconds: entries.iter().map(|e| e.mean_seconds).sum(),
        binary_all_seconds: binary.as_ref().map(|b| NUM_ATTRIBUTES as f64 * b.mean_seconds),
        parts: entries,
        binary,
    })
}

fn group(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Aligned text table of part rows, the ensemble total and the binary row.
pub fn render_param_table(rows: &[ParamRow], ensemble: &str, binary: Option<&ParamRow>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:<20} {:>12} {:>16}", "crop", "network", "parameters", "MACs");
    for r in rows {
        let _ = writeln!(s, "{:<10} {:<20} {:>12} {:>16}", r.crop, r.network, group(r.params as u64), group(r.macs));
    }
    let total: usize = rows.iter().map(|r| r.params).sum();
    let macs: u64 = rows.iter().map(|r| r.macs).sum();
    let _ = writeln!(s, "{:<10} {:<20} {:>12} {:>16}", "Overall", ensemble, group(total as u64), group(macs));
    if let Some(b) = binary {
        let _ = writeln!(s, "{:<10} {:<20} {:>12} {:>16}", b.crop, b.network, group(b.params as u64), group(b.macs));
    }
    s
}

pub fn render_bench_table(report: &BenchReport, ensemble: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<20} {:>12} {:>14}", "network", "parameters", "time/frame (s)");
    for e in &report.parts {
        let _ = writeln!(s, "{:<20} {:>12} {:>14.5}", e.network, group(e.params as u64), e.mean_seconds);
    }
    let total: usize = report.parts.iter().map(|e| e.params).sum();
    let _ = writeln!(s, "{:<20} {:>12} {:>14.5}", ensemble, group(total as u64), report.ensemble_seconds);
    if let (Some(b), Some(all)) = (&report.binary, report.binary_all_seconds) {
        let _ = writeln!(s, "{:<20} {:>12} {:>14.5}", b.network, group(b.params as u64), b.mean_seconds);
        let _ = writeln!(s, "{:<20} {:>12} {:>14.5}", format!("{} x{NUM_ATTRIBUTES}", b.network), "", all);
    }
    s
}

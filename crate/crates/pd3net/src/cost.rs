//! Analytic cost model for conventional vs. spatially separable convolutions,
//! plus a wall-clock benchmark that checks the prediction against the real
//! kernels.
//!
//! For a `KxK` convolution mapping depth `d` to depth `D` over an `HxW` image
//! (stride 1, size-preserving padding):
//!
//! ```text
//! conventional:  params = K^2 * d * D      ops = H*W*D * (2K^2 - 1) * d
//! separable:     params = K*d*D + K*D^2    ops = H*W*D * (2K - 1) * (d + D)
//! ```
//!
//! The separable form wins on parameters when `d > D / (K - 1)` and on
//! operations when `d > D * (2K - 1) / (2K (K - 1))`; the parameter condition
//! is the stricter of the two, so it decides "wins both".

use crate::error::{Error, Result};
use crate::layers;
use crate::rng::Rng;
use crate::tensor::{Fill, Shape, Tensor};

/// Convolution configuration the cost model reasons about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvConfig {
    /// Square kernel size (odd).
    pub kernel: usize,
    /// Input depth `d`.
    pub in_depth: usize,
    /// Output depth `D`.
    pub out_depth: usize,
    pub height: usize,
    pub width: usize,
}

/// Analytic counts, decision thresholds and (optionally) measured timings for
/// one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub nparam_conv: u64,
    pub nops_conv: u64,
    pub nparam_sep: u64,
    pub nops_sep: u64,
    /// Minimum `d / D` ratio for the separable form to need fewer parameters.
    pub param_threshold: f64,
    /// Minimum `d / D` ratio for the separable form to need fewer operations.
    pub ops_threshold: f64,
    pub separable_wins_params: bool,
    pub separable_wins_ops: bool,
    pub separable_wins_both: bool,
    pub measured_conv_ns: Option<u64>,
    pub measured_sep_ns: Option<u64>,
}

impl CostReport {
    pub fn predicted_winner(&self) -> &'static str {
        if self.separable_wins_both {
            "separable"
        } else {
            "conventional"
        }
    }
}

/// Parameter and operation counts of the conventional layer.
pub fn count_conv(cfg: &ConvConfig) -> (u64, u64) {
    let (k, d, dd) = (cfg.kernel as u64, cfg.in_depth as u64, cfg.out_depth as u64);
    let hw = cfg.height as u64 * cfg.width as u64;
    let nparam = k * k * d * dd;
    let nops = hw * dd * (2 * k * k - 1) * d;
    (nparam, nops)
}

/// Parameter and operation counts of the spatially separable layer.
pub fn count_sep(cfg: &ConvConfig) -> (u64, u64) {
    let (k, d, dd) = (cfg.kernel as u64, cfg.in_depth as u64, cfg.out_depth as u64);
    let hw = cfg.height as u64 * cfg.width as u64;
    let nparam = k * d * dd + k * dd * dd;
    let nops = hw * dd * (2 * k - 1) * (d + dd);
    (nparam, nops)
}

/// Evaluate the analytic decision. The win flags come from exact integer
/// comparison of the raw counters; the floating thresholds are reported for
/// display only, so truncated table values never decide a boundary case.
pub fn separable_decision(cfg: &ConvConfig) -> Result<CostReport> {
    if cfg.kernel < 2 {
        return Err(Error::Param(
            "separable decision undefined for kernel 1 (division by K - 1)".into(),
        ));
    }
    let (nparam_conv, nops_conv) = count_conv(cfg);
    let (nparam_sep, nops_sep) = count_sep(cfg);
    let k = cfg.kernel as f64;
    let wins_params = nparam_conv > nparam_sep;
    let wins_ops = nops_conv > nops_sep;
    Ok(CostReport {
        nparam_conv,
        nops_conv,
        nparam_sep,
        nops_sep,
        param_threshold: 1.0 / (k - 1.0),
        ops_threshold: (2.0 * k - 1.0) / (2.0 * k * (k - 1.0)),
        separable_wins_params: wins_params,
        separable_wins_ops: wins_ops,
        separable_wins_both: wins_params && wins_ops,
        measured_conv_ns: None,
        measured_sep_ns: None,
    })
}

/// Run both layer variants on random input and record median wall-clock time.
/// One warm-up run per variant is excluded from the median.
pub fn benchmark_pair(cfg: &ConvConfig, trials: usize, rng: &mut Rng) -> Result<CostReport> {
    if trials < 5 {
        return Err(Error::Param(format!("benchmark needs >= 5 trials, got {trials}")));
    }
    let mut report = separable_decision(cfg)?;
    let k = cfg.kernel;
    let pad = k / 2;
    let x = Tensor::new(
        Shape::new(1, cfg.in_depth, cfg.height, cfg.width),
        Fill::Uniform { lo: 0.0, hi: 1.0 },
        rng,
    )?;
    let w_full = Tensor::new(
        Shape::new(cfg.out_depth, cfg.in_depth, k, k),
        Fill::HeNormal { fan_in: cfg.in_depth * k * k },
        rng,
    )?;
    let w_row = Tensor::new(
        Shape::new(cfg.out_depth, cfg.in_depth, 1, k),
        Fill::HeNormal { fan_in: cfg.in_depth * k },
        rng,
    )?;
    let w_col = Tensor::new(
        Shape::new(cfg.out_depth, cfg.out_depth, k, 1),
        Fill::HeNormal { fan_in: cfg.out_depth * k },
        rng,
    )?;

    let time_conv = || -> Result<u64> {
        let start = std::time::Instant::now();
        let y = layers::conv_forward(&x, &w_full, None, 1, (pad, pad))?;
        let ns = start.elapsed().as_nanos() as u64;
        std::hint::black_box(y.data()[0]);
        Ok(ns)
    };
    let time_sep = || -> Result<u64> {
        let start = std::time::Instant::now();
        let y = layers::sepconv_forward(&x, &w_row, &w_col, None, 1, pad)?;
        let ns = start.elapsed().as_nanos() as u64;
        std::hint::black_box(y.data()[0]);
        Ok(ns)
    };

    time_conv()?; // warm-up
    time_sep()?;
    let mut conv_ns = Vec::with_capacity(trials);
    let mut sep_ns = Vec::with_capacity(trials);
    for _ in 0..trials {
        conv_ns.push(time_conv()?);
        sep_ns.push(time_sep()?);
    }
    report.measured_conv_ns = Some(median(&mut conv_ns));
    report.measured_sep_ns = Some(median(&mut sep_ns));
    Ok(report)
}

fn median(samples: &mut [u64]) -> u64 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

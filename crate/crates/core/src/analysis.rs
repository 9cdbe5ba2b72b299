//! Error metrics, spectra and the cross-iteration report.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::compensator::IterationRecord;
use crate::error::{Error, Result};

/// Telemetry channels in report order: Euler error angles, then body rates.
pub const CHANNELS: [&str; 6] = ["phi", "theta", "psi", "p", "q", "r"];

pub fn rmse(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok((samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMetrics {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile of sorted data by linear interpolation between order statistics
/// at position `p·(n − 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(samples: &[f64]) -> Result<ChannelMetrics> {
    if samples.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5).max(q1);
    let q3 = quantile_sorted(&sorted, 0.75).max(median);
    // sums over sorted data so the result does not depend on input order
    Ok(ChannelMetrics {
        rmse: rmse(&sorted)?,
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        median,
        q1,
        q3,
        iqr: q3 - q1,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}

/// One-sided power spectral density of several equally long channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Hz, from 0 to Nyquist.
    pub frequencies: Vec<f64>,
    pub psd: Vec<Vec<f64>>,
}

impl Spectrum {
    /// `(frequency, value)` of the largest bin of channel `c`.
    pub fn peak(&self, c: usize) -> (f64, f64) {
        self.psd[c]
            .iter()
            .enumerate()
            .fold((0.0, f64::NEG_INFINITY), |best, (k, &v)| {
                if v > best.1 {
                    (self.frequencies[k], v)
                } else {
                    best
                }
            })
    }

    /// `Σ S_k·Δf` of channel `c`.
    pub fn integrated(&self, c: usize) -> f64 {
        let df = self.frequencies.get(1).copied().unwrap_or(0.0);
        self.psd[c].iter().sum::<f64>() * df
    }
}

pub const PSD_MIN_LEN: usize = 8;

/// Mean-removed, Hann-windowed periodogram, one-sided, in units²/Hz.
pub fn psd(samples: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = samples.len();
    if n < PSD_MIN_LEN {
        return Err(Error::TooShort {
            needed: PSD_MIN_LEN,
            got: n,
        });
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect();
    let power: f64 = window.iter().map(|w| w * w).sum();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .zip(&window)
        .map(|(x, w)| Complex::new((x - mean) * w, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let bins = n / 2 + 1;
    let scale = dt / power;
    let psd = (0..bins)
        .map(|k| {
            let s = buf[k].norm_sqr() * scale;
            let nyquist = n.is_multiple_of(2) && k == n / 2;
            if k == 0 || nyquist {
                s
            } else {
                2.0 * s
            }
        })
        .collect();
    let freqs = (0..bins).map(|k| k as f64 / (n as f64 * dt)).collect();
    Ok((freqs, psd))
}

pub fn spectrum(channels: &[Vec<f64>], dt: f64) -> Result<Spectrum> {
    let mut frequencies = Vec::new();
    let mut out = Vec::with_capacity(channels.len());
    for c in channels {
        let (f, p) = psd(c, dt)?;
        frequencies = f;
        out.push(p);
    }
    Ok(Spectrum {
        frequencies,
        psd: out,
    })
}

/// The six report channels of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationChannels {
    pub iteration: usize,
    pub dt: f64,
    pub channels: [Vec<f64>; 6],
}

impl IterationChannels {
    pub fn from_record(record: &IterationRecord, dt: f64) -> Self {
        let euler = record.euler();
        let rates = record.rates();
        IterationChannels {
            iteration: record.index,
            dt,
            channels: [
                euler.iter().map(|e| e.x).collect(),
                euler.iter().map(|e| e.y).collect(),
                euler.iter().map(|e| e.z).collect(),
                rates.iter().map(|w| w.x).collect(),
                rates.iter().map(|w| w.y).collect(),
                rates.iter().map(|w| w.z).collect(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    pub metrics: [ChannelMetrics; 6],
    pub spectrum: Spectrum,
    /// `(frequency, value)` of each channel's largest PSD bin.
    pub peaks: [(f64, f64); 6],
    /// RMSE averaged over φ, θ, ψ.
    pub mean_attitude_rmse: f64,
    /// Largest PSD bin over all six channels.
    pub max_psd_peak: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub iterations: Vec<IterationReport>,
    /// Mean attitude RMSE never increases from one iteration to the next.
    pub rmse_non_increasing: bool,
    /// Largest PSD peak of the last iteration is below the first one's.
    pub peak_decreasing: bool,
}

impl CampaignReport {
    /// Worst ratio `rmse[k+1] / rmse[k]` over consecutive iterations.
    pub fn worst_step_ratio(&self) -> f64 {
        self.iterations
            .windows(2)
            .map(|w| w[1].mean_attitude_rmse / w[0].mean_attitude_rmse)
            .fold(0.0, f64::max)
    }
}

pub fn iteration_report(input: &IterationChannels) -> Result<IterationReport> {
    let mut metrics = Vec::with_capacity(6);
    for c in &input.channels {
        metrics.push(box_stats(c)?);
    }
    let metrics: [ChannelMetrics; 6] = metrics.try_into().expect("six channels");
    let spectrum = spectrum(&input.channels, input.dt)?;
    let peaks: [(f64, f64); 6] = std::array::from_fn(|c| spectrum.peak(c));
    Ok(IterationReport {
        iteration: input.iteration,
        mean_attitude_rmse: (metrics[0].rmse + metrics[1].rmse + metrics[2].rmse) / 3.0,
        max_psd_peak: peaks.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
        metrics,
        spectrum,
        peaks,
    })
}

/// Iterations are sorted by index first, so input order does not matter.
pub fn campaign_report(inputs: &[IterationChannels]) -> Result<CampaignReport> {
    if inputs.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut sorted: Vec<&IterationChannels> = inputs.iter().collect();
    sorted.sort_by_key(|i| i.iteration);
    let mut iterations = Vec::with_capacity(sorted.len());
    for i in sorted {
        iterations.push(iteration_report(i)?);
    }
    let rmse_non_increasing = iterations
        .windows(2)
        .all(|w| w[1].mean_attitude_rmse <= w[0].mean_attitude_rmse);
    let peak_decreasing = iterations.len() == 1
        || iterations[iterations.len() - 1].max_psd_peak < iterations[0].max_psd_peak;
    Ok(CampaignReport {
        iterations,
        rmse_non_increasing,
        peak_decreasing,
    })
}

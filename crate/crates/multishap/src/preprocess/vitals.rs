use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{mean, pop_std};

pub const VITALS_CHANNELS: [&str; 6] = [
    "heart_rate",
    "pulse",
    "spo2",
    "bp_dia",
    "bp_sys",
    "bp_mean",
];
pub const N_VITALS_CHANNELS: usize = 6;
pub const CH_HEART_RATE: usize = 0;
pub const CH_PULSE: usize = 1;

pub const DEFAULT_STEP_SECONDS: f64 = 15.0;
/// Gaps of up to 5 minutes (20 elements at 15 s) are interpolated.
pub const DEFAULT_MAX_GAP: usize = 20;

/// One raw timestamped observation; channels not measured at this time are
/// `None`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawVitalsSample {
    pub time: DateTime<Utc>,
    pub values: [Option<f64>; N_VITALS_CHANNELS],
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawVitals {
    pub samples: Vec<RawVitalsSample>,
}

/// Regularly gridded six-channel vitals, `None` marking missing cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalsSeries {
    pub start_time: DateTime<Utc>,
    pub step_seconds: f64,
    pub channels: [Vec<Option<f64>>; N_VITALS_CHANNELS],
}

impl VitalsSeries {
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn missing_count(&self) -> usize {
        self.channels
            .iter()
            .map(|c| c.iter().filter(|v| v.is_none()).count())
            .sum()
    }

    /// Fully observed values of one channel, in order.
    pub fn observed(&self, channel: usize) -> Vec<f64> {
        self.channels[channel].iter().filter_map(|v| *v).collect()
    }
}

/// Snaps irregular raw samples onto a regular grid from first to last
/// observation. Each grid cell takes the nearest raw sample within half a
/// step; equidistant candidates resolve to the earlier sample.
pub fn resample(raw: &RawVitals, step_seconds: f64) -> Result<VitalsSeries> {
    if raw.samples.is_empty() {
        return Err(Error::EmptyInput("raw vitals".into()));
    }
    for pair in raw.samples.windows(2) {
        if pair[1].time <= pair[0].time {
            return Err(Error::Format("vitals timestamps must be strictly increasing".into()));
        }
    }
    let start = raw.samples[0].time;
    let span = (raw.samples.last().unwrap().time - start)
        .num_milliseconds() as f64
        / 1000.0;
    let n_steps = (span / step_seconds).round() as usize + 1;
    let times: Vec<f64> = raw
        .samples
        .iter()
        .map(|s| (s.time - start).num_milliseconds() as f64 / 1000.0)
        .collect();

    let mut channels: [Vec<Option<f64>>; N_VITALS_CHANNELS] =
        std::array::from_fn(|_| vec![None; n_steps]);
    for ch in 0..N_VITALS_CHANNELS {
        let observed: Vec<(f64, f64)> = times
            .iter()
            .zip(&raw.samples)
            .filter_map(|(&t, s)| s.values[ch].map(|v| (t, v)))
            .collect();
        if observed.is_empty() {
            continue;
        }
        let mut cursor = 0usize;
        for (k, cell) in channels[ch].iter_mut().enumerate() {
            let grid_t = k as f64 * step_seconds;
            while cursor + 1 < observed.len()
                && nearer(observed[cursor + 1].0, observed[cursor].0, grid_t)
            {
                cursor += 1;
            }
            let (t, v) = observed[cursor];
            if (t - grid_t).abs() <= step_seconds / 2.0 {
                *cell = Some(v);
            }
        }
    }
    Ok(VitalsSeries {
        start_time: start,
        step_seconds,
        channels,
    })
}

/// Is candidate `b` strictly nearer to `target` than `a`? Ties keep the
/// earlier sample.
fn nearer(b: f64, a: f64, target: f64) -> bool {
    (b - target).abs() < (a - target).abs()
}

/// Fills interior missing runs of length <= `max_gap` by linear interpolation
/// between the flanking observed values. Longer and boundary runs stay
/// untouched.
pub fn interpolate_gaps(series: &VitalsSeries, max_gap: usize) -> VitalsSeries {
    let mut out = series.clone();
    for channel in out.channels.iter_mut() {
        let n = channel.len();
        let mut i = 0;
        while i < n {
            if channel[i].is_some() {
                i += 1;
                continue;
            }
            let run_start = i;
            while i < n && channel[i].is_none() {
                i += 1;
            }
            let run_len = i - run_start;
            let left = run_start.checked_sub(1).and_then(|j| channel[j]);
            let right = if i < n { channel[i] } else { None };
            if let (Some(lv), Some(rv)) = (left, right) {
                if run_len <= max_gap {
                    let denom = (run_len + 1) as f64;
                    for (offset, cell) in channel[run_start..run_start + run_len].iter_mut().enumerate() {
                        let frac = (offset + 1) as f64 / denom;
                        *cell = Some(lv + (rv - lv) * frac);
                    }
                }
            }
        }
    }
    out
}

/// Heart rate and pulse measure the same signal on different monitors: where
/// exactly one of the two is missing, copy the other's value across.
pub fn cross_fill(series: &VitalsSeries) -> VitalsSeries {
    let mut out = series.clone();
    for k in 0..out.len() {
        match (out.channels[CH_HEART_RATE][k], out.channels[CH_PULSE][k]) {
            (None, Some(p)) => out.channels[CH_HEART_RATE][k] = Some(p),
            (Some(h), None) => out.channels[CH_PULSE][k] = Some(h),
            _ => {}
        }
    }
    out
}

/// Per-channel z-normalization over observed entries (population sd).
/// Channels with fewer than 2 observed values are left as-is; zero-variance
/// channels are set to 0 and flagged.
pub fn znorm(series: &VitalsSeries) -> (VitalsSeries, Vec<usize>) {
    let mut out = series.clone();
    let mut zero_variance = Vec::new();
    for (ch, channel) in out.channels.iter_mut().enumerate() {
        let observed: Vec<f64> = channel.iter().filter_map(|v| *v).collect();
        if observed.len() < 2 {
            continue;
        }
        let m = mean(&observed);
        let sd = pop_std(&observed);
        if sd < 1e-12 {
            for cell in channel.iter_mut() {
                if cell.is_some() {
                    *cell = Some(0.0);
                }
            }
            zero_variance.push(ch);
        } else {
            for cell in channel.iter_mut() {
                if let Some(v) = cell {
                    *v = (*v - m) / sd;
                }
            }
        }
    }
    (out, zero_variance)
}

/// Removes timesteps where any channel is still missing. Returns the kept
/// series and the fraction of steps dropped.
pub fn drop_incomplete_steps(series: &VitalsSeries) -> Result<(VitalsSeries, f64)> {
    let n = series.len();
    let keep: Vec<usize> = (0..n)
        .filter(|&k| series.channels.iter().all(|c| c[k].is_some()))
        .collect();
    if keep.is_empty() {
        return Err(Error::NoUsableVitals);
    }
    let channels: [Vec<Option<f64>>; N_VITALS_CHANNELS] =
        std::array::from_fn(|ch| keep.iter().map(|&k| series.channels[ch][k]).collect());
    let dropped = (n - keep.len()) as f64 / n as f64;
    Ok((
        VitalsSeries {
            start_time: series.start_time,
            step_seconds: series.step_seconds,
            channels,
        },
        dropped,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VitalsPipelineStats {
    pub dropped_step_fraction: f64,
    pub zero_variance_channels: Vec<String>,
    pub n_steps_kept: usize,
}

/// The fixed pipeline: resample -> interpolate -> cross_fill -> znorm ->
/// drop_incomplete_steps.
pub fn preprocess_vitals(raw: &RawVitals) -> Result<(VitalsSeries, VitalsPipelineStats)> {
    let series = resample(raw, DEFAULT_STEP_SECONDS)?;
    let series = interpolate_gaps(&series, DEFAULT_MAX_GAP);
    let series = cross_fill(&series);
    let (series, zero_variance) = znorm(&series);
    let (series, dropped) = drop_incomplete_steps(&series)?;
    Ok((
        series.clone(),
        VitalsPipelineStats {
            dropped_step_fraction: dropped,
            zero_variance_channels: zero_variance
                .into_iter()
                .map(|ch| VITALS_CHANNELS[ch].to_string())
                .collect(),
            n_steps_kept: series.len(),
        },
    ))
}

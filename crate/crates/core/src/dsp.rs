//! Mu-band power estimation and the suppression-based attention index.
//!
//! Band power is estimated with averaged modified periodograms (Welch): Hann
//! windowed segments of one second, 50% overlap, constant detrend, one-sided
//! PSD normalized to µV²/Hz and integrated over the bins inside the band.
//!
//! The attention index compares the current mu power against a reference
//! power recorded while the child is not yet observing anything:
//!
//! ```text
//! index = 100 * clamp(ln(p_ref / max(p_now, 1e-12)) / kappa, 0, 1)
//! ```
//!
//! With the default `kappa = ln 4`, a fourfold power drop is full scale.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to the current power before taking the log ratio (µV²).
pub const POWER_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("invalid DSP configuration: {0}")]
    Config(String),
    #[error("insufficient data: need {needed} samples per channel, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("calibration required: reference power must be positive, got {0}")]
    CalibrationRequired(f64),
    #[error("frame has {got} channels, expected {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("frame contains non-finite samples")]
    NonFinite,
}

/// Closed frequency interval in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Band {
    pub const MU: Band = Band {
        low_hz: 8.0,
        high_hz: 13.0,
    };

    pub fn new(low_hz: f64, high_hz: f64) -> Self {
        Self { low_hz, high_hz }
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.low_hz && f <= self.high_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspConfig {
    pub sample_rate_hz: f64,
    pub channel_count: usize,
    pub mu_band: Band,
    pub window_s: f64,
    pub hop_s: f64,
    pub kappa: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 256.0,
            channel_count: 5,
            mu_band: Band::MU,
            window_s: 2.0,
            hop_s: 1.0,
            kappa: 4f64.ln(),
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        let finite = [
            self.sample_rate_hz,
            self.mu_band.low_hz,
            self.mu_band.high_hz,
            self.window_s,
            self.hop_s,
            self.kappa,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(DspError::Config("parameters must be finite".into()));
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(DspError::Config("sample_rate_hz must be positive".into()));
        }
        if self.channel_count == 0 {
            return Err(DspError::Config("channel_count must be at least 1".into()));
        }
        if self.mu_band.low_hz < 0.0 || self.mu_band.low_hz >= self.mu_band.high_hz {
            return Err(DspError::Config("mu_band must satisfy 0 <= low < high".into()));
        }
        if self.mu_band.high_hz > self.sample_rate_hz / 2.0 {
            return Err(DspError::Config("mu_band exceeds the Nyquist frequency".into()));
        }
        if !(self.hop_s > 0.0 && self.window_s >= self.hop_s) {
            return Err(DspError::Config("need window_s >= hop_s > 0".into()));
        }
        if self.kappa <= 0.0 {
            return Err(DspError::Config("kappa must be positive".into()));
        }
        if self.hop_len() == 0 {
            return Err(DspError::Config("hop shorter than one sample".into()));
        }
        Ok(())
    }

    /// Samples per channel in one analysis window.
    pub fn window_len(&self) -> usize {
        (self.window_s * self.sample_rate_hz).round() as usize
    }

    /// Samples per channel between consecutive index outputs.
    pub fn hop_len(&self) -> usize {
        (self.hop_s * self.sample_rate_hz).round() as usize
    }
}

/// One timestamped block of raw EEG, channel-major, in microvolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EegFrame {
    /// Seconds since session start of the first sample in the block.
    pub t: f64,
    pub samples: Vec<Vec<f64>>,
}

impl EegFrame {
    pub fn channel_count(&self) -> usize {
        self.samples.len()
    }

    pub fn block_len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().flatten().all(|v| v.is_finite())
    }
}

/// One social-attention index value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionSample {
    pub t: f64,
    pub index: f64,
}

impl AttentionSample {
    pub fn new(t: f64, index: f64) -> Self {
        Self { t, index }
    }
}

/// Mean over channels of the mu-band (or any band) power of the trailing
/// `window_s` of the given frames.
pub fn band_power(frames: &[EegFrame], band: Band, cfg: &DspConfig) -> Result<f64, DspError> {
    let channels = cfg.channel_count;
    let mut joined: Vec<Vec<f64>> = vec![Vec::new(); channels];
    for frame in frames {
        if frame.channel_count() != channels {
            return Err(DspError::ChannelMismatch {
                expected: channels,
                got: frame.channel_count(),
            });
        }
        for (dst, src) in joined.iter_mut().zip(&frame.samples) {
            dst.extend_from_slice(src);
        }
    }
    let n = cfg.window_len();
    let got = joined.iter().map(Vec::len).min().unwrap_or(0);
    if got < n {
        return Err(DspError::InsufficientData { needed: n, got });
    }
    let tails: Vec<&[f64]> = joined.iter().map(|c| &c[c.len() - n..]).collect();
    Ok(WelchEstimator::new(n, cfg.sample_rate_hz).mean_band_power(&tails, band))
}

/// Index in [0, 100] from current and reference band power.
pub fn attention_index(p_current: f64, p_baseline: f64, cfg: &DspConfig) -> Result<f64, DspError> {
    if p_baseline <= 0.0 || !p_baseline.is_finite() {
        return Err(DspError::CalibrationRequired(p_baseline));
    }
    let ratio = p_baseline / p_current.max(POWER_FLOOR);
    Ok(100.0 * (ratio.ln() / cfg.kappa).clamp(0.0, 1.0))
}

/// Welch PSD estimator for a fixed window length.
pub struct WelchEstimator {
    sample_rate_hz: f64,
    window_len: usize,
    segment_len: usize,
    step: usize,
    taper: Vec<f64>,
    taper_power: f64,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl WelchEstimator {
    pub fn new(window_len: usize, sample_rate_hz: f64) -> Self {
        let segment_len = (sample_rate_hz.round() as usize).clamp(1, window_len.max(1));
        let step = (segment_len / 2).max(1);
        // periodic Hann
        let taper: Vec<f64> = (0..segment_len)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment_len as f64).cos())
            .collect();
        let taper_power = taper.iter().map(|w| w * w).sum::<f64>().max(f64::MIN_POSITIVE);
        let fft = FftPlanner::new().plan_fft_forward(segment_len);
        Self {
            sample_rate_hz,
            window_len,
            segment_len,
            step,
            taper,
            taper_power,
            fft,
        }
    }

    pub fn resolution_hz(&self) -> f64 {
        self.sample_rate_hz / self.segment_len as f64
    }

    /// One-sided PSD (µV²/Hz) of a single channel, bins `0..=segment_len/2`.
    pub fn psd(&self, signal: &[f64]) -> Vec<f64> {
        let n = self.segment_len;
        let signal = &signal[signal.len().saturating_sub(self.window_len)..];
        let mut acc = vec![0.0; n / 2 + 1];
        let mut segments = 0usize;
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut start = 0;
        while start + n <= signal.len() {
            let seg = &signal[start..start + n];
            let mean = seg.iter().sum::<f64>() / n as f64;
            for ((b, x), w) in buf.iter_mut().zip(seg).zip(&self.taper) {
                *b = Complex::new((x - mean) * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, a) in acc.iter_mut().enumerate() {
                *a += buf[k].norm_sqr();
            }
            segments += 1;
            start += self.step;
        }
        if segments == 0 {
            return acc;
        }
        let scale = 1.0 / (self.sample_rate_hz * self.taper_power * segments as f64);
        for (k, a) in acc.iter_mut().enumerate() {
            let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                1.0
            } else {
                2.0
            };
            *a *= scale * one_sided;
        }
        acc
    }

    pub fn band_power(&self, signal: &[f64], band: Band) -> f64 {
        let df = self.resolution_hz();
        self.psd(signal)
            .iter()
            .enumerate()
            .filter(|(k, _)| band.contains(*k as f64 * df))
            .map(|(_, p)| p * df)
            .sum()
    }

    pub fn mean_band_power(&self, channels: &[&[f64]], band: Band) -> f64 {
        if channels.is_empty() {
            return 0.0;
        }
        channels.iter().map(|c| self.band_power(c, band)).sum::<f64>() / channels.len() as f64
    }
}

/// Streams frames in and emits `(window_end_t, band_power)` every hop once a
/// full window is buffered.
pub struct BandPowerStream {
    cfg: DspConfig,
    estimator: WelchEstimator,
    buffers: Vec<VecDeque<f64>>,
    start_t: Option<f64>,
    consumed: usize,
    next_emit: usize,
}

impl BandPowerStream {
    pub fn new(cfg: DspConfig) -> Result<Self, DspError> {
        cfg.validate()?;
        Ok(Self {
            estimator: WelchEstimator::new(cfg.window_len(), cfg.sample_rate_hz),
            buffers: vec![VecDeque::new(); cfg.channel_count],
            start_t: None,
            consumed: 0,
            next_emit: cfg.window_len(),
            cfg,
        })
    }

    pub fn config(&self) -> &DspConfig {
        &self.cfg
    }

    pub fn push(&mut self, frame: &EegFrame) -> Result<Vec<(f64, f64)>, DspError> {
        if frame.channel_count() != self.cfg.channel_count {
            return Err(DspError::ChannelMismatch {
                expected: self.cfg.channel_count,
                got: frame.channel_count(),
            });
        }
        if !frame.is_finite() {
            return Err(DspError::NonFinite);
        }
        let block = frame.block_len();
        if frame.samples.iter().any(|c| c.len() != block) {
            return Err(DspError::Config("ragged frame".into()));
        }
        let start_t = *self.start_t.get_or_insert(frame.t);
        let window = self.cfg.window_len();
        let hop = self.cfg.hop_len();
        let mut out = Vec::new();
        for i in 0..block {
            for (buf, ch) in self.buffers.iter_mut().zip(&frame.samples) {
                buf.push_back(ch[i]);
                if buf.len() > window {
                    buf.pop_front();
                }
            }
            self.consumed += 1;
            if self.consumed == self.next_emit {
                let chans: Vec<Vec<f64>> = self.buffers.iter().map(|b| b.iter().copied().collect()).collect();
                let refs: Vec<&[f64]> = chans.iter().map(Vec::as_slice).collect();
                let p = self.estimator.mean_band_power(&refs, self.cfg.mu_band);
                let t = start_t + self.consumed as f64 / self.cfg.sample_rate_hz;
                out.push((t, p));
                self.next_emit += hop;
            }
        }
        Ok(out)
    }
}

/// Averages band power over a resting segment to obtain the index reference.
#[derive(Debug, Clone, Default)]
pub struct ReferenceRecorder {
    sum: f64,
    count: usize,
}

impl ReferenceRecorder {
    pub fn add(&mut self, power: f64) {
        self.sum += power;
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn reference(&self) -> Option<f64> {
        (self.count > 0 && self.sum > 0.0).then(|| self.sum / self.count as f64)
    }
}

/// Turns band powers into index samples against a fixed reference power.
pub struct IndexEstimator {
    stream: BandPowerStream,
    reference: f64,
}

impl IndexEstimator {
    pub fn new(cfg: DspConfig, reference: f64) -> Result<Self, DspError> {
        if reference <= 0.0 || !reference.is_finite() {
            return Err(DspError::CalibrationRequired(reference));
        }
        Ok(Self {
            stream: BandPowerStream::new(cfg)?,
            reference,
        })
    }

    pub fn from_stream(stream: BandPowerStream, reference: f64) -> Result<Self, DspError> {
        if reference <= 0.0 || !reference.is_finite() {
            return Err(DspError::CalibrationRequired(reference));
        }
        Ok(Self { stream, reference })
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn push(&mut self, frame: &EegFrame) -> Result<Vec<AttentionSample>, DspError> {
        let cfg = *self.stream.config();
        self.stream
            .push(frame)?
            .into_iter()
            .map(|(t, p)| Ok(AttentionSample::new(t, attention_index(p, self.reference, &cfg)?)))
            .collect()
    }
}

//! Synthetic EEG driven by a latent attention process.
//!
//! Each channel is pink noise plus a mu-band sinusoid whose amplitude is
//! `mu_amplitude_uv * (1 - latent)`. Higher latent attention means stronger
//! mu suppression and therefore a higher index downstream.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{DspConfig, DspError, EegFrame};

/// Time constant for the decay of feedback-driven attention boosts.
const BOOST_DECAY_S: f64 = 10.0;
const PINK_BURN_IN: usize = 4096;
const PRESET_CALIBRATION_LATENT: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuParams {
    pub mean: f64,
    pub reversion_rate: f64,
    pub volatility: f64,
    /// Optional `(t, mean)` breakpoints; when present the long-run mean
    /// follows them instead of `mean`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mean_schedule: Vec<(f64, f64)>,
}

impl OuParams {
    pub fn mean_at(&self, t: f64) -> f64 {
        if self.mean_schedule.is_empty() {
            self.mean
        } else {
            interpolate(&self.mean_schedule, t)
        }
    }
}

/// How the latent attention evolves over session time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatentModel {
    /// Piecewise-linear through `(t, latent)` breakpoints, held flat outside.
    Scripted {
        points: Vec<(f64, f64)>,
    },
    OrnsteinUhlenbeck(OuParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionProfile {
    pub model: LatentModel,
    pub seed: u64,
    /// Latent boost added per rewarding feedback event.
    #[serde(default)]
    pub feedback_coupling: f64,
    /// Before this time the simulated child is at rest (latent 0).
    #[serde(default)]
    pub onset_s: f64,
}

impl AttentionProfile {
    pub fn constant(latent: f64, seed: u64) -> Self {
        Self {
            model: LatentModel::Scripted {
                points: vec![(0.0, latent)],
            },
            seed,
            feedback_coupling: 0.0,
            onset_s: 0.0,
        }
    }

    pub fn scripted(points: Vec<(f64, f64)>, seed: u64) -> Self {
        Self {
            model: LatentModel::Scripted { points },
            seed,
            feedback_coupling: 0.0,
            onset_s: 0.0,
        }
    }

    /// Named profiles used by the CLI: an OU process whose mean sits at the
    /// calibration level and, for `high`/`low`, moves once training starts.
    /// `onset_s` is where the calibration video starts.
    pub fn preset(name: &str, seed: u64, onset_s: f64, training_start_s: f64) -> Option<Self> {
        let ramp_end = training_start_s + 5.0;
        let target = match name {
            "medium" => PRESET_CALIBRATION_LATENT,
            "high" => 0.55,
            "low" => 0.15,
            _ => return None,
        };
        Some(Self {
            model: LatentModel::OrnsteinUhlenbeck(OuParams {
                mean: PRESET_CALIBRATION_LATENT,
                reversion_rate: 0.3,
                volatility: 0.045,
                mean_schedule: vec![(training_start_s, PRESET_CALIBRATION_LATENT), (ramp_end, target)],
            }),
            seed,
            feedback_coupling: 0.0,
            onset_s,
        })
    }

    pub const PRESETS: [&'static str; 3] = ["low", "medium", "high"];

    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |m: &str| Err(DspError::Config(m.to_string()));
        if !self.feedback_coupling.is_finite() || self.feedback_coupling < 0.0 {
            return bad("feedback_coupling must be finite and >= 0");
        }
        if !self.onset_s.is_finite() {
            return bad("onset_s must be finite");
        }
        match &self.model {
            LatentModel::Scripted { points } => {
                if points.is_empty() {
                    return bad("scripted profile needs at least one point");
                }
                if points.iter().any(|(t, a)| !t.is_finite() || !a.is_finite()) {
                    return bad("scripted points must be finite");
                }
                if points.windows(2).any(|w| w[1].0 < w[0].0) {
                    return bad("scripted points must be sorted by time");
                }
            }
            LatentModel::OrnsteinUhlenbeck(p) => {
                if ![p.mean, p.reversion_rate, p.volatility]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return bad("OU parameters must be finite");
                }
                if p.reversion_rate < 0.0 || p.volatility < 0.0 {
                    return bad("OU rate and volatility must be >= 0");
                }
                let sched = &p.mean_schedule;
                if sched.iter().any(|(t, m)| !t.is_finite() || !m.is_finite()) {
                    return bad("OU mean schedule must be finite");
                }
                if sched.windows(2).any(|w| w[1].0 < w[0].0) {
                    return bad("OU mean schedule must be sorted by time");
                }
            }
        }
        Ok(())
    }
}

fn interpolate(points: &[(f64, f64)], t: f64) -> f64 {
    let first = points[0];
    if t <= first.0 {
        return first.1;
    }
    for w in points.windows(2) {
        let (t0, a0) = w[0];
        let (t1, a1) = w[1];
        if t <= t1 {
            if t1 == t0 {
                return a1;
            }
            return a0 + (a1 - a0) * (t - t0) / (t1 - t0);
        }
    }
    points[points.len() - 1].1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    pub mu_freq_hz: f64,
    /// Mu sinusoid amplitude at zero attention (µV).
    pub mu_amplitude_uv: f64,
    /// Scale of the pink noise generator output (µV per unit).
    pub noise_uv: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            mu_freq_hz: 10.0,
            mu_amplitude_uv: 10.0,
            noise_uv: 2.5,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if ![self.mu_freq_hz, self.mu_amplitude_uv, self.noise_uv]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(DspError::Config("simulator parameters must be finite".into()));
        }
        if self.mu_amplitude_uv < 0.0 || self.noise_uv < 0.0 || self.mu_freq_hz <= 0.0 {
            return Err(DspError::Config("simulator amplitudes must be >= 0".into()));
        }
        Ok(())
    }
}

/// Pink noise via Paul Kellet's refined filter bank over white Gaussian input.
#[derive(Debug, Clone, Default)]
struct PinkFilter {
    b: [f64; 7],
}

impl PinkFilter {
    fn next(&mut self, white: f64) -> f64 {
        let b = &mut self.b;
        b[0] = 0.99886 * b[0] + white * 0.0555179;
        b[1] = 0.99332 * b[1] + white * 0.0750759;
        b[2] = 0.96900 * b[2] + white * 0.1538520;
        b[3] = 0.86650 * b[3] + white * 0.3104856;
        b[4] = 0.55000 * b[4] + white * 0.5329522;
        b[5] = -0.7616 * b[5] - white * 0.0168980;
        let out = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + white * 0.5362;
        b[6] = white * 0.115926;
        out * 0.11
    }
}

/// Deterministic frame stream; one frame per hop.
pub struct FrameGenerator {
    profile: AttentionProfile,
    sim: SimulatorConfig,
    cfg: DspConfig,
    noise_rng: ChaCha8Rng,
    ou_rng: ChaCha8Rng,
    normal: Normal<f64>,
    pink: Vec<PinkFilter>,
    phases: Vec<f64>,
    ou_state: f64,
    boost: f64,
    block: usize,
    blocks_total: usize,
}

impl FrameGenerator {
    pub fn new(
        profile: AttentionProfile,
        sim: SimulatorConfig,
        cfg: DspConfig,
        duration_s: f64,
    ) -> Result<Self, DspError> {
        cfg.validate()?;
        sim.validate()?;
        profile.validate()?;
        if duration_s <= 0.0 || !duration_s.is_finite() {
            return Err(DspError::Config("duration must be positive".into()));
        }
        let mut noise_rng = ChaCha8Rng::seed_from_u64(profile.seed);
        let mut ou_rng = ChaCha8Rng::seed_from_u64(profile.seed);
        ou_rng.set_stream(1);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let phases = (0..cfg.channel_count)
            .map(|_| noise_rng.random::<f64>() * 2.0 * PI)
            .collect();
        let mut pink = vec![PinkFilter::default(); cfg.channel_count];
        for f in pink.iter_mut() {
            for _ in 0..PINK_BURN_IN {
                f.next(normal.sample(&mut noise_rng));
            }
        }
        let ou_state = match &profile.model {
            LatentModel::OrnsteinUhlenbeck(p) => p.mean_at(0.0).clamp(0.0, 1.0),
            LatentModel::Scripted { .. } => 0.0,
        };
        let blocks_total = (duration_s / cfg.hop_s).ceil() as usize;
        Ok(Self {
            profile,
            sim,
            cfg,
            noise_rng,
            ou_rng,
            normal,
            pink,
            phases,
            ou_state,
            boost: 0.0,
            block: 0,
            blocks_total,
        })
    }

    /// Register rewarding feedback; raises latent attention by the profile's
    /// coupling per event.
    pub fn reinforce(&mut self, events: usize) {
        self.boost += self.profile.feedback_coupling * events as f64;
    }

    fn base_latent(&self, t: f64) -> f64 {
        match &self.profile.model {
            LatentModel::Scripted { points } => interpolate(points, t),
            LatentModel::OrnsteinUhlenbeck(_) => self.ou_state,
        }
    }

    /// Latent attention in [0, 1] at time `t` given current process state.
    pub fn latent_at(&self, t: f64) -> f64 {
        if t < self.profile.onset_s {
            return 0.0;
        }
        (self.base_latent(t) + self.boost).clamp(0.0, 1.0)
    }

    fn advance_processes(&mut self) {
        let dt = self.cfg.hop_s;
        if let LatentModel::OrnsteinUhlenbeck(p) = &self.profile.model {
            let mean = p.mean_at(self.block as f64 * dt);
            let z = self.normal.sample(&mut self.ou_rng);
            let x =
                self.ou_state + p.reversion_rate * (mean - self.ou_state) * dt + p.volatility * dt.sqrt() * z;
            self.ou_state = x.clamp(0.0, 1.0);
        }
        self.boost *= (-dt / BOOST_DECAY_S).exp();
    }
}

impl Iterator for FrameGenerator {
    type Item = EegFrame;

    fn next(&mut self) -> Option<EegFrame> {
        if self.block >= self.blocks_total {
            return None;
        }
        let hop = self.cfg.hop_len();
        let fs = self.cfg.sample_rate_hz;
        let start = self.block * hop;
        let t0 = start as f64 / fs;
        let mut samples = vec![Vec::with_capacity(hop); self.cfg.channel_count];
        for i in 0..hop {
            let n = start + i;
            let t = n as f64 / fs;
            let amp = self.sim.mu_amplitude_uv * (1.0 - self.latent_at(t));
            for (ch, out) in samples.iter_mut().enumerate() {
                let white = self.normal.sample(&mut self.noise_rng);
                let noise = self.sim.noise_uv * self.pink[ch].next(white);
                let mu = amp * (2.0 * PI * self.sim.mu_freq_hz * t + self.phases[ch]).sin();
                out.push(mu + noise);
            }
        }
        self.block += 1;
        self.advance_processes();
        Some(EegFrame { t: t0, samples })
    }
}

/// Convenience wrapper returning the whole stream.
pub fn generate_frames(
    profile: AttentionProfile,
    sim: SimulatorConfig,
    cfg: DspConfig,
    duration_s: f64,
) -> Result<FrameGenerator, DspError> {
    FrameGenerator::new(profile, sim, cfg, duration_s)
}

use std::f64::consts::PI;

use nfb_core::dsp::{
    attention_index, band_power, Band, BandPowerStream, DspConfig, EegFrame, WelchEstimator,
};
use nfb_core::sim::{AttentionProfile, FrameGenerator, SimulatorConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 256.0;
const N: usize = 512;

fn tone(freq: f64, amp: f64, phase: f64) -> Vec<f64> {
    (0..N)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / FS + phase).sin())
        .collect()
}

/// Textbook Welch by direct DFT summation: 1 s periodic-Hann segments, half
/// overlap, mean removed per segment, one-sided density, rectangle-rule band
/// integral over the bins that fall inside the band.
fn oracle_band_power(x: &[f64], band: Band) -> f64 {
    let seg = FS as usize;
    let w: Vec<f64> = (0..seg)
        .map(|n| (PI * n as f64 / seg as f64).sin().powi(2))
        .collect();
    let u: f64 = w.iter().map(|v| v * v).sum();
    let df = FS / seg as f64;
    let mut total = 0.0;
    let mut count = 0;
    for start in (0..).map(|k| k * seg / 2).take_while(|s| s + seg <= x.len()) {
        let s = &x[start..start + seg];
        let mean = s.iter().sum::<f64>() / seg as f64;
        for k in 0..=seg / 2 {
            let f = k as f64 * df;
            if f < band.low_hz || f > band.high_hz {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in s.iter().enumerate() {
                let arg = -2.0 * PI * (k * n % seg) as f64 / seg as f64;
                re += (v - mean) * w[n] * arg.cos();
                im += (v - mean) * w[n] * arg.sin();
            }
            let edge = k == 0 || k == seg / 2;
            total += (re * re + im * im) / (FS * u) * if edge { 1.0 } else { 2.0 } * df;
        }
        count += 1;
    }
    total / count as f64
}

fn welch() -> WelchEstimator {
    WelchEstimator::new(N, FS)
}

#[test]
fn pure_mu_tone_power_matches_half_amplitude_squared() {
    for amp in [0.5, 1.0, 7.0, 20.0] {
        let x = tone(10.0, amp, 0.3);
        let expected = amp * amp / 2.0;
        let got = welch().band_power(&x, Band::MU);
        let oracle = oracle_band_power(&x, Band::MU);
        assert!(
            (got - expected).abs() <= 0.05 * expected,
            "A={amp}: {got} vs {expected}"
        );
        assert!(
            (oracle - expected).abs() <= 0.05 * expected,
            "oracle A={amp}: {oracle}"
        );
        assert!(
            (got - oracle).abs() <= 1e-9 * expected,
            "A={amp}: {got} vs oracle {oracle}"
        );
    }
}

#[test]
fn out_of_band_tone_leaks_at_most_two_percent() {
    let amp = 10.0;
    let ref_power = amp * amp / 2.0;
    let leak = welch().band_power(&tone(20.0, amp, 1.1), Band::MU);
    assert!(leak <= 0.02 * ref_power, "leak {leak}");
    let both: Vec<f64> = tone(10.0, amp, 0.0)
        .iter()
        .zip(tone(20.0, amp, 1.1))
        .map(|(a, b)| a + b)
        .collect();
    let alone = welch().band_power(&tone(10.0, amp, 0.0), Band::MU);
    let mixed = welch().band_power(&both, Band::MU);
    assert!((mixed - alone).abs() <= 0.02 * alone, "{mixed} vs {alone}");
}

#[test]
fn frame_band_power_averages_channels() {
    let cfg = DspConfig::default();
    let amps = [1.0, 2.0, 3.0, 4.0, 5.0];
    let frames: Vec<EegFrame> = (0..2)
        .map(|b| EegFrame {
            t: b as f64,
            samples: amps
                .iter()
                .map(|a| tone(10.0, *a, 0.0)[b * 256..(b + 1) * 256].to_vec())
                .collect(),
        })
        .collect();
    let got = band_power(&frames, Band::MU, &cfg).unwrap();
    let expected = amps.iter().map(|a| a * a / 2.0).sum::<f64>() / amps.len() as f64;
    assert!((got - expected).abs() <= 0.05 * expected);
}

#[test]
fn index_endpoints_are_exact() {
    let cfg = DspConfig::default();
    for p_ref in [1e-6, 0.37, 1.0, 50.0, 1234.5] {
        assert_eq!(attention_index(p_ref, p_ref, &cfg).unwrap(), 0.0);
        assert_eq!(attention_index(p_ref / 4.0, p_ref, &cfg).unwrap(), 100.0);
        assert_eq!(attention_index(p_ref * 3.0, p_ref, &cfg).unwrap(), 0.0);
        assert_eq!(attention_index(p_ref / 40.0, p_ref, &cfg).unwrap(), 100.0);
        assert_eq!(attention_index(0.0, p_ref, &cfg).unwrap(), 100.0);
    }
    let mid = attention_index(0.5, 1.0, &cfg).unwrap();
    assert!((mid - 50.0).abs() < 1e-12);
    assert!(attention_index(1.0, 0.0, &cfg).is_err());
}

proptest! {
    #[test]
    fn off_bin_mu_tones_stay_within_tolerance(
        freq in 9.0f64..12.0,
        amp in 0.5f64..50.0,
        phase in 0.0f64..(2.0 * PI),
    ) {
        let x = tone(freq, amp, phase);
        let expected = amp * amp / 2.0;
        let got = welch().band_power(&x, Band::MU);
        prop_assert!((got - expected).abs() <= 0.05 * expected, "{} Hz: {} vs {}", freq, got, expected);
    }

    #[test]
    fn estimator_matches_oracle_on_noise(seed in any::<u64>(), lo in 1.0f64..40.0, width in 1.0f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..N).map(|_| rng.random_range(-30.0..30.0)).collect();
        let band = Band::new(lo, lo + width);
        let got = welch().band_power(&x, band);
        let oracle = oracle_band_power(&x, band);
        prop_assert!((got - oracle).abs() <= 1e-9 * oracle.max(1e-12), "{} vs {}", got, oracle);
    }

    #[test]
    fn index_is_bounded_monotone_and_scale_free(
        p in 1e-9f64..1e6,
        q in 1e-9f64..1e6,
        p_ref in 1e-6f64..1e6,
        c in 1e-3f64..1e3,
    ) {
        let cfg = DspConfig::default();
        let a = attention_index(p, p_ref, &cfg).unwrap();
        let b = attention_index(q, p_ref, &cfg).unwrap();
        prop_assert!((0.0..=100.0).contains(&a));
        if p <= q {
            prop_assert!(a >= b);
        }
        let scaled = attention_index(p * c, p_ref * c, &cfg).unwrap();
        prop_assert!((scaled - a).abs() <= 1e-9 * 100.0);
    }
}

fn simulated_indices(latent: f64, seed: u64, p_ref: f64) -> Vec<f64> {
    let cfg = DspConfig::default();
    let gen = FrameGenerator::new(
        AttentionProfile::constant(latent, seed),
        SimulatorConfig::default(),
        cfg,
        30.0,
    )
    .unwrap();
    let mut stream = BandPowerStream::new(cfg).unwrap();
    gen.flat_map(|f| stream.push(&f).unwrap())
        .map(|(_, p)| attention_index(p, p_ref, &cfg).unwrap())
        .collect()
}

fn rest_reference(seed: u64) -> f64 {
    let cfg = DspConfig::default();
    let gen = FrameGenerator::new(
        AttentionProfile::constant(0.0, seed),
        SimulatorConfig::default(),
        cfg,
        10.0,
    )
    .unwrap();
    let mut stream = BandPowerStream::new(cfg).unwrap();
    let powers: Vec<f64> = gen
        .flat_map(|f| stream.push(&f).unwrap())
        .map(|(_, p)| p)
        .collect();
    powers.iter().sum::<f64>() / powers.len() as f64
}

#[test]
fn simulated_index_is_bounded_and_tracks_latent_attention() {
    let mut above = 0;
    for seed in 0..20 {
        let p_ref = rest_reference(seed + 1000);
        let focused = simulated_indices(0.9, seed, p_ref);
        let drifting = simulated_indices(0.1, seed, p_ref);
        for x in focused.iter().chain(&drifting) {
            assert!((0.0..=100.0).contains(x));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        if mean(&focused) > mean(&drifting) {
            above += 1;
        }
    }
    assert_eq!(above, 20);
}

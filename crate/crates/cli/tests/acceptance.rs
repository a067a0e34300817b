//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Tolerances are fixed below.

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nfb_core::analytics::{compute_metrics, live_metrics};
use nfb_core::calibration::{compute_thresholds, set_manual_thresholds, CalibrationConfig, ThresholdSource};
use nfb_core::dsp::{attention_index, Band, DspConfig, WelchEstimator};
use nfb_core::engine::feedback::EXTREME_HAPPY_AFTER_S;
use nfb_core::engine::reinforcers::ReinforcerTimers;
use nfb_core::engine::{
    face_for, Animation, Effect, EggColor, Face, FeedbackEvent, FeedbackKind, FeedbackLevel, Modality, Pace,
    PerformanceStage, SessionReport, Tempo,
};
use nfb_core::protocol::{
    decode, encode, round_sig, Ack, AttentionSampleBody, Body, CalibrateBegin, CalibrateResult, DeviceKind,
    EegFrameBody, ErrorBody, FeedbackEventBody, GameProgress, Hello, Message, MessageType, Role,
    SessionControl, ThresholdSet,
};
use nfb_core::runner::{run_simulated, SimulationConfig, SimulationOutcome};
use nfb_core::session::{SessionPhase, StateSnapshot};
use nfb_core::sim::AttentionProfile;
use nfb_server::client::{run_headband_until, HeadbandOptions, TcpClient};
use nfb_server::BackendConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LB: f64 = 10.0;
const UB: f64 = 85.0;
const ALPHA: f64 = 0.8;
const BETA: f64 = 1.3;
const BASELINES: [f64; 7] = [0.0, 5.0, 12.5, 50.0, 65.38, 70.0, 100.0];
const SWEEP_STEP: f64 = 0.01;
const SWEEP_BUDGET_S: f64 = 1.0;

const MEDIUM_DURATION_S: (f64, f64) = (240.0, 300.0);
const PAIRED_SEEDS: u64 = 5;
const WALL_BUDGET_S: f64 = 10.0;

const TONE_REL_TOL: f64 = 0.05;
const LEAK_MAX: f64 = 0.02;
const ORACLE_REL_TOL: f64 = 1e-9;

const REINFORCER_TRACES: u64 = 1000;
const WINDOW_S: f64 = 3.0;

const SYNTHETIC_LOGS: u64 = 100;
const MOMENT_TOL: f64 = 1e-9;

const FUZZ_LINES: usize = 100_000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// threshold formula

fn threshold_formula() -> Outcome {
    let cfg = CalibrationConfig::default();
    let expect = |b: f64| {
        let t1 = LB.max(ALPHA * b);
        let t2 = UB.min(BETA * b);
        if t2 > t1 {
            (t1, t2)
        } else {
            (t1, UB.min(t1 + 10.0))
        }
    };
    for b in BASELINES {
        let th = compute_thresholds(b, &cfg).map_err(|e| e.to_string())?;
        check((th.t1, th.t2) == expect(b), || {
            format!("b={b}: got ({}, {})", th.t1, th.t2)
        })?;
    }
    let start = Instant::now();
    let steps = (100.0 / SWEEP_STEP).round() as usize;
    for i in 0..=steps {
        let b = i as f64 * SWEEP_STEP;
        let th = compute_thresholds(b, &cfg).map_err(|e| e.to_string())?;
        check(LB <= th.t1 && th.t1 < th.t2 && th.t2 <= UB, || {
            format!("b={b}: {th:?}")
        })?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(elapsed < SWEEP_BUDGET_S, || format!("sweep took {elapsed:.3}s"))?;
    Ok(format!(
        "{} listed b, {} sweep points in {:.1} ms",
        BASELINES.len(),
        steps + 1,
        elapsed * 1e3
    ))
}

// session duration

fn preset(name: &str, seed: u64) -> SimulationConfig {
    let base = SimulationConfig::new(AttentionProfile::constant(0.0, seed));
    let profile = AttentionProfile::preset(name, seed, base.rest_s, base.training_start_s()).unwrap();
    SimulationConfig { profile, ..base }
}

fn report_of(out: &SimulationOutcome) -> Result<SessionReport, String> {
    out.session
        .report()
        .copied()
        .ok_or_else(|| "no session report".to_string())
}

fn session_duration() -> Outcome {
    let base = SimulationConfig::new(AttentionProfile::constant(0.0, 0));
    let mut profile = AttentionProfile::scripted(vec![(0.0, 0.35)], 0);
    profile.onset_s = base.rest_s;
    let cfg = SimulationConfig { profile, ..base };
    let start = Instant::now();
    let out = run_simulated(&cfg).map_err(|e| e.to_string())?;
    let wall = start.elapsed().as_secs_f64();
    let r = report_of(&out)?;
    let medium = out.session.engine().unwrap().record().accounting().pct_medium;
    check(r.completed, || "scripted session did not complete".into())?;
    check(medium > 0.5, || format!("only {:.0}% Medium", medium * 100.0))?;
    check(
        (MEDIUM_DURATION_S.0..=MEDIUM_DURATION_S.1).contains(&r.duration_s),
        || format!("medium session took {} s", r.duration_s),
    )?;
    check(wall < WALL_BUDGET_S, || format!("wall clock {wall:.2}s"))?;
    let mut pairs = Vec::new();
    for seed in 0..PAIRED_SEEDS {
        let high = report_of(&run_simulated(&preset("high", seed)).map_err(|e| e.to_string())?)?;
        let low = report_of(&run_simulated(&preset("low", seed)).map_err(|e| e.to_string())?)?;
        check(high.completed && low.completed, || {
            format!("seed {seed}: incomplete")
        })?;
        check(high.duration_s < low.duration_s, || {
            format!(
                "seed {seed}: high {} s vs low {} s",
                high.duration_s, low.duration_s
            )
        })?;
        pairs.push(format!("{:.0}<{:.0}", high.duration_s, low.duration_s));
    }
    Ok(format!(
        "medium {:.0} s ({:.0}% Medium, wall {:.2} s); high<low {}",
        r.duration_s,
        medium * 100.0,
        wall,
        pairs.join(" ")
    ))
}

// DSP oracle

const FS: f64 = 256.0;
const N: usize = 512;

fn tone(freq: f64, amp: f64) -> Vec<f64> {
    (0..N)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / FS + 0.4).sin())
        .collect()
}

fn dft_band_power(x: &[f64], band: Band) -> f64 {
    let seg = FS as usize;
    let w: Vec<f64> = (0..seg)
        .map(|n| (PI * n as f64 / seg as f64).sin().powi(2))
        .collect();
    let u: f64 = w.iter().map(|v| v * v).sum();
    let mut total = 0.0;
    let mut count = 0;
    let mut start = 0;
    while start + seg <= x.len() {
        let s = &x[start..start + seg];
        let mean = s.iter().sum::<f64>() / seg as f64;
        for k in 1..seg / 2 {
            let f = k as f64;
            if f < band.low_hz || f > band.high_hz {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in s.iter().enumerate() {
                let arg = -2.0 * PI * (k * n % seg) as f64 / seg as f64;
                re += (v - mean) * w[n] * arg.cos();
                im += (v - mean) * w[n] * arg.sin();
            }
            total += 2.0 * (re * re + im * im) / (FS * u);
        }
        count += 1;
        start += seg / 2;
    }
    total / count as f64
}

fn dsp_oracle() -> Outcome {
    let welch = WelchEstimator::new(N, FS);
    let mut worst: f64 = 0.0;
    for amp in [1.0, 5.0, 20.0] {
        let x = tone(10.0, amp);
        let want = amp * amp / 2.0;
        let got = welch.band_power(&x, Band::MU);
        let oracle = dft_band_power(&x, Band::MU);
        let rel = (got - want).abs() / want;
        worst = worst.max(rel);
        check(rel <= TONE_REL_TOL, || format!("A={amp}: {got} vs A^2/2 {want}"))?;
        check((got - oracle).abs() <= ORACLE_REL_TOL * want, || {
            format!("A={amp}: {got} vs DFT {oracle}")
        })?;
    }
    let amp = 10.0;
    let leak = welch.band_power(&tone(20.0, amp), Band::MU) / (amp * amp / 2.0);
    check(leak <= LEAK_MAX, || format!("20 Hz leakage {:.3}%", leak * 100.0))?;
    let cfg = DspConfig::default();
    for p_ref in [0.01, 1.0, 42.0, 1e4] {
        let zero = attention_index(p_ref, p_ref, &cfg).map_err(|e| e.to_string())?;
        let hundred = attention_index(p_ref / 4.0, p_ref, &cfg).map_err(|e| e.to_string())?;
        check(zero == 0.0 && hundred == 100.0, || {
            format!("p_ref {p_ref}: {zero}, {hundred}")
        })?;
    }
    Ok(format!(
        "tone error {:.3}% (tol {}%), leakage {:.4}% (max {}%), endpoints exact",
        worst * 100.0,
        TONE_REL_TOL * 100.0,
        leak * 100.0,
        LEAK_MAX * 100.0
    ))
}

// feedback tables

fn feedback_tables() -> Outcome {
    use FeedbackLevel::*;
    use Modality::*;
    let cells: [(&str, FeedbackLevel, Modality); 19] = [
        ("bird_height", Immediate, Visual),
        ("movement_speed", Storytelling, Visual),
        ("lay_rate", Storytelling, Visual),
        ("facial_expression", Storytelling, Visual),
        ("heart_bubbles", Storytelling, Visual),
        ("music_tempo", Storytelling, Auditory),
        ("egg_stored", Progress, Visual),
        ("row_halo", Progress, Visual),
        ("tray_stars", Progress, Visual),
        ("stars_awarded", Progress, Visual),
        ("woohoo", Progress, Auditory),
        ("ohyea", Progress, Auditory),
        ("victory", Progress, Auditory),
        ("colored_egg", Reinforcing, Visual),
        ("golden_egg", Reinforcing, Visual),
        ("bubbles", Reinforcing, Visual),
        ("emoji", Reinforcing, Visual),
        ("bubble_sound", Reinforcing, Auditory),
        ("coin_sound", Reinforcing, Auditory),
    ];
    check(FeedbackKind::ALL.len() == cells.len(), || {
        "kind count differs".into()
    })?;
    for kind in FeedbackKind::ALL {
        let row = cells
            .iter()
            .find(|c| c.0 == kind.as_str())
            .ok_or_else(|| format!("{kind:?} not tabulated"))?;
        check(kind.cell() == (row.1, row.2), || {
            format!("{kind:?}: {:?}", kind.cell())
        })?;
    }
    use Animation::*;
    use Face::*;
    let faces = [
        (BoyHeadUp, [Expecting, Expecting, Expecting, Expecting]),
        (BoyCatching, [Neutral, Happy, Happy, Happy]),
        (BoyTurningWithEggs, [Neutral, Happy, Happy, Happy]),
        (BoyHandingOver, [Neutral, Happy, Happy, Happy]),
        (BoyTurningBack, [Neutral, Neutral, Neutral, Neutral]),
        (GirlReceiving, [Neutral, Smiling, Happy, ExtremelyHappy]),
        (GirlTurningWithEggs, [Neutral, Smiling, Happy, ExtremelyHappy]),
        (GirlPuttingDown, [Neutral, Neutral, Neutral, Neutral]),
        (GirlTurningBack, [Neutral, Neutral, Neutral, Neutral]),
    ];
    check(Animation::ALL.len() == faces.len(), || {
        "animation count differs".into()
    })?;
    let mut pairs = 0;
    for (anim, row) in faces {
        let got = [
            face_for(anim, PerformanceStage::Low, 0.0),
            face_for(anim, PerformanceStage::Medium, 0.0),
            face_for(anim, PerformanceStage::High, 0.0),
            face_for(anim, PerformanceStage::High, EXTREME_HAPPY_AFTER_S + 0.5),
        ];
        check(got == row, || format!("{anim:?}: {got:?}"))?;
        pairs += 3;
    }
    Ok(format!(
        "{} kinds, {} (animation, stage) pairs",
        cells.len(),
        pairs
    ))
}

// reinforcer timing

fn reinforcer_timing() -> Outcome {
    let th = set_manual_thresholds(30.0, 60.0).unwrap();
    let mut mismatches = 0;
    let mut checked = 0;
    let mut fired = [0usize; 2];
    for seed in 0..REINFORCER_TRACES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.random_range(1..120);
        let mut x: f64 = rng.random_range(0.0..100.0);
        let mut idx = Vec::with_capacity(len);
        for _ in 0..len {
            x = match rng.random_range(0..4) {
                0 => x,
                1 => rng.random_range(0.0..100.0),
                _ => (x + rng.random_range(-8.0..12.0)).clamp(0.0, 100.0),
            };
            idx.push(x.round());
        }
        let high: Vec<bool> = idx.iter().map(|v| *v >= th.t2).collect();
        let span = WINDOW_S as usize;
        let pred = |i: usize| -> [bool; 2] {
            if i < span {
                return [false, false];
            }
            [
                (i + 1 - span..=i).all(|j| idx[j] >= idx[j - 1]),
                (i - span..=i).all(|j| high[j]),
            ]
        };
        let mut timers = ReinforcerTimers::new(WINDOW_S);
        for i in 0..len {
            let stage = if high[i] {
                PerformanceStage::High
            } else if idx[i] >= th.t1 {
                PerformanceStage::Medium
            } else {
                PerformanceStage::Low
            };
            let got = timers.update(i as f64, idx[i], stage);
            let (now, before) = (pred(i), if i == 0 { [false; 2] } else { pred(i - 1) });
            let want = [now[0] && !before[0], now[1] && !before[1]];
            if [got.golden_egg, got.heart_bubbles] != want {
                mismatches += 1;
            }
            fired[0] += got.golden_egg as usize;
            fired[1] += got.heart_bubbles as usize;
            checked += 1;
        }
    }
    check(mismatches == 0, || format!("{mismatches} mismatches"))?;
    Ok(format!(
        "{REINFORCER_TRACES} traces, {checked} samples, 0 mismatches ({} golden, {} heart)",
        fired[0], fired[1]
    ))
}

// analytics oracle

fn analytics_oracle() -> Outcome {
    let mut samples_checked = 0;
    for seed in 0..SYNTHETIC_LOGS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11);
        let mut log = Vec::new();
        let mut t = 0.0;
        let mut push = |t: f64, body: Body| {
            let seq = log.len() as u64;
            log.push(Message::new(t, seq, body).normalized().unwrap());
        };
        push(
            t,
            Body::SessionControl(SessionControl::phase(SessionPhase::Calibration, None)),
        );
        for _ in 0..rng.random_range(0..10) {
            t += 1.0;
            push(t, Body::AttentionSample(AttentionSampleBody { index: 50.0 }));
        }
        let mut th = (round_sig(rng.random_range(10.0..45.0)), 0.0);
        th.1 = round_sig(th.0 + rng.random_range(5.0..40.0));
        let set = |th: (f64, f64)| {
            Body::ThresholdSet(ThresholdSet {
                t1: th.0,
                t2: th.1,
                source: ThresholdSource::Adaptive,
            })
        };
        push(t, set(th));
        push(
            t,
            Body::SessionControl(SessionControl::phase(SessionPhase::Training, None)),
        );
        let n = rng.random_range(1..300);
        let mut counts = [0usize; 3];
        let (mut up, mut down) = (0u32, 0u32);
        let mut prev = None;
        let mut values = Vec::new();
        for _ in 0..n {
            t += 1.0;
            if rng.random_bool(0.02) {
                th.0 = round_sig(rng.random_range(10.0..45.0));
                th.1 = round_sig(th.0 + rng.random_range(5.0..40.0));
                push(t, set(th));
            }
            let index = round_sig(rng.random_range(0.0..100.0));
            push(t, Body::AttentionSample(AttentionSampleBody { index }));
            let r = (index >= th.0) as usize + (index >= th.1) as usize;
            counts[r] += 1;
            if let Some(p) = prev {
                up += (r > p) as u32;
                down += (r < p) as u32;
            }
            prev = Some(r);
            values.push(index);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let m = compute_metrics(&log).map_err(|e| e.to_string())?;
        let got_counts = [m.pct_low, m.pct_medium, m.pct_high].map(|p| (p * n as f64).round() as usize);
        check(got_counts == counts, || {
            format!("log {seed}: stages {got_counts:?} vs {counts:?}")
        })?;
        check((m.up_switches, m.down_switches) == (up, down), || {
            format!(
                "log {seed}: switches ({}, {}) vs ({up}, {down})",
                m.up_switches, m.down_switches
            )
        })?;
        check(
            (m.mean_index - mean).abs() <= MOMENT_TOL && (m.sd_index - sd).abs() <= MOMENT_TOL,
            || {
                format!(
                    "log {seed}: moments ({}, {}) vs ({mean}, {sd})",
                    m.mean_index, m.sd_index
                )
            },
        )?;
        samples_checked += n;
    }
    for (name, seed) in [("medium", 31), ("high", 32), ("low", 33)] {
        let out = run_simulated(&preset(name, seed)).map_err(|e| e.to_string())?;
        let live = live_metrics(&out.session).ok_or("no live metrics")?;
        let canonical: Vec<Message> = out
            .session
            .log()
            .iter()
            .map(|m| m.normalized().unwrap())
            .collect();
        let bytes: Vec<u8> = canonical.iter().flat_map(|m| encode(m).unwrap()).collect();
        let parsed = nfb_core::session::parse_log(&bytes[..]).map_err(|e| e.to_string())?;
        let replayed = compute_metrics(&parsed).map_err(|e| e.to_string())?;
        check(replayed == live, || {
            format!("{name}: replay differs from live accounting")
        })?;
    }
    Ok(format!(
        "{SYNTHETIC_LOGS} synthetic logs ({samples_checked} samples), 3 engine logs replayed"
    ))
}

// protocol

fn one_of<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

fn w(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    round_sig(rng.random_range(lo..hi))
}

fn effect(rng: &mut ChaCha8Rng, kind: FeedbackKind) -> Effect {
    let n = rng.random_range(0..60);
    let stage = one_of(rng, &PerformanceStage::ALL);
    let from = rng.random_bool(0.5).then(|| one_of(rng, &PerformanceStage::ALL));
    match kind {
        FeedbackKind::BirdHeight => Effect::BirdHeight {
            height: w(rng, 0.0, 1.0),
        },
        FeedbackKind::MovementSpeed => Effect::MovementSpeed {
            speed: one_of(rng, &[Pace::Slow, Pace::Normal, Pace::Fast]),
            from,
            to: stage,
        },
        FeedbackKind::LayRate => Effect::LayRate {
            interval_s: w(rng, 1.0, 8.0),
            from,
            to: stage,
        },
        FeedbackKind::FacialExpression => {
            let animation = one_of(rng, &Animation::ALL);
            Effect::FacialExpression {
                character: animation.character(),
                animation,
                face: face_for(animation, stage, 0.0),
            }
        }
        FeedbackKind::HeartBubbles => Effect::HeartBubbles {},
        FeedbackKind::MusicTempo => Effect::MusicTempo {
            tempo: one_of(rng, &[Tempo::Low, Tempo::Medium, Tempo::High]),
            from,
            to: stage,
        },
        FeedbackKind::EggStored => Effect::EggStored {
            eggs_stored: n,
            carts_filled: n / 30,
        },
        FeedbackKind::RowHalo => Effect::RowHalo { row: n },
        FeedbackKind::TrayStars => Effect::TrayStars { tray: n },
        FeedbackKind::StarsAwarded => Effect::StarsAwarded {
            stars: rng.random_range(1..=3),
            score: rng.random_range(0..=100),
        },
        FeedbackKind::Woohoo => Effect::Woohoo { row: n },
        FeedbackKind::Ohyea => Effect::Ohyea { tray: n },
        FeedbackKind::Victory => Effect::Victory {},
        FeedbackKind::ColoredEgg => Effect::ColoredEgg {
            egg: n,
            color: one_of(rng, &EggColor::PALETTE),
        },
        FeedbackKind::GoldenEgg => Effect::GoldenEgg { egg: n },
        FeedbackKind::Bubbles => Effect::Bubbles { egg: n },
        FeedbackKind::Emoji => Effect::Emoji { egg: n },
        FeedbackKind::BubbleSound => Effect::BubbleSound { egg: n },
        FeedbackKind::CoinSound => Effect::CoinSound { egg: n },
    }
}

fn body(rng: &mut ChaCha8Rng, ty: MessageType, kind: FeedbackKind) -> Body {
    let phase = one_of(
        rng,
        &[
            SessionPhase::Customization,
            SessionPhase::Calibration,
            SessionPhase::Training,
            SessionPhase::Conclusion,
        ],
    );
    let (t1, t2) = (w(rng, 0.0, 50.0), w(rng, 50.5, 100.0));
    match ty {
        MessageType::Hello => Body::Hello(Hello {
            device: rng.random_bool(0.5).then_some(DeviceKind::Simulator),
            session_id: Some(format!("s{}", rng.random::<u16>())),
            phase: Some(phase),
            ..Hello::new(one_of(
                rng,
                &[Role::Headband, Role::Observer, Role::Console, Role::Backend],
            ))
        }),
        MessageType::EegFrame => Body::EegFrame(EegFrameBody {
            sample_rate_hz: 256.0,
            samples: (0..5)
                .map(|_| (0..8).map(|_| w(rng, -100.0, 100.0)).collect())
                .collect(),
        }),
        MessageType::AttentionSample => Body::AttentionSample(AttentionSampleBody {
            index: w(rng, 0.0, 100.0),
        }),
        MessageType::CalibrateBegin => Body::CalibrateBegin(CalibrateBegin {
            duration_s: 60.0,
            reference_power: Some(w(rng, 0.1, 500.0)),
        }),
        MessageType::CalibrateResult => Body::CalibrateResult(CalibrateResult {
            baseline: w(rng, 0.0, 100.0),
            t1,
            t2,
            samples: rng.random_range(30..100),
        }),
        MessageType::ThresholdSet => Body::ThresholdSet(ThresholdSet {
            t1,
            t2,
            source: ThresholdSource::Manual,
        }),
        MessageType::SessionControl => Body::SessionControl(SessionControl {
            reason: Some("r".into()),
            ..SessionControl::phase(phase, None)
        }),
        MessageType::FeedbackEvent => {
            let ev = FeedbackEvent::new(0.0, effect(rng, kind));
            Body::FeedbackEvent(FeedbackEventBody::from(&ev))
        }
        MessageType::GameProgress => Body::GameProgress(GameProgress {
            eggs_stored: rng.random_range(0..60),
            eggs_in_flight: rng.random_range(0..3),
            carts_filled: rng.random_range(0..2),
            bird_height: w(rng, 0.0, 1.0),
            lay_interval_s: 4.5,
            music_tempo: Tempo::Medium,
            boy_face: Face::Happy,
            girl_face: Face::Smiling,
            stage: Some(PerformanceStage::Medium),
            filtered_index: Some(w(rng, 0.0, 100.0)),
        }),
        MessageType::SessionReport => Body::SessionReport(SessionReport {
            score: rng.random_range(0..=100),
            stars: rng.random_range(1..=3),
            duration_s: w(rng, 0.0, 600.0),
            eggs_stored: rng.random_range(0..=60),
            t1,
            t2,
            source: ThresholdSource::Adaptive,
            completed: rng.random_bool(0.5),
        }),
        MessageType::Ack => Body::Ack(Ack {
            ref_seq: rng.random(),
            ref_type: one_of(rng, &MessageType::ALL),
        }),
        MessageType::Error => Body::Error(ErrorBody {
            reason: "bad \"input\"\n".into(),
            ref_seq: Some(rng.random()),
        }),
    }
}

fn late_join_hash() -> Result<(String, String), String> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    rt.block_on(async {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = BackendConfig {
            listen: "127.0.0.1:0".into(),
            ws_listen: None,
            log_dir: dir.path().to_path_buf(),
            ..BackendConfig::default()
        };
        let server = nfb_server::start(cfg).await.map_err(|e| e.to_string())?;
        let profile = AttentionProfile::preset("medium", 3, 10.0, 70.0).unwrap();
        let opts = HeadbandOptions::new(DeviceKind::Simulator, profile, 900.0);
        run_headband_until(server.tcp_addr(), opts, 140.0)
            .await
            .map_err(|e| e.to_string())?;
        let status = server.status().await.map_err(|e| e.to_string())?;
        let mut late = TcpClient::observer(server.tcp_addr())
            .await
            .map_err(|e| e.to_string())?;
        let mut got = Vec::new();
        while got.len() < 3 {
            match late.rx.recv_timeout(Duration::from_secs(10)).await {
                Ok(Some(m)) => got.push(m),
                other => return Err(format!("snapshot incomplete: {other:?}")),
            }
        }
        let snap = StateSnapshot::observe(&got).ok_or("no snapshot in first messages")?;
        server.shutdown().await.map_err(|e| e.to_string())?;
        Ok((snap.hash(), status.state_hash))
    })
}

fn protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e7);
    let mut lines = Vec::new();
    let mut round_trips = 0;
    for (i, kind) in FeedbackKind::ALL.iter().cycle().take(19 * 20).enumerate() {
        for ty in MessageType::ALL {
            let m = Message::new(w(&mut rng, 0.0, 3600.0), i as u64, body(&mut rng, ty, *kind));
            let bytes = encode(&m).map_err(|e| format!("{ty:?}: {e}"))?;
            let back = decode(&bytes).map_err(|e| format!("{ty:?}: {e}"))?;
            check(back == m, || format!("{ty:?} did not round-trip"))?;
            round_trips += 1;
            lines.push(bytes);
        }
    }
    let start = Instant::now();
    let mut accepted = 0;
    for _ in 0..FUZZ_LINES {
        let mut line = lines[rng.random_range(0..lines.len())].clone();
        match rng.random_range(0..4) {
            0 => line = (0..rng.random_range(0..80)).map(|_| rng.random()).collect(),
            1 => {
                for _ in 0..rng.random_range(1..5) {
                    let i = rng.random_range(0..line.len());
                    line[i] = rng.random();
                }
            }
            2 => line.truncate(rng.random_range(0..line.len())),
            _ => {
                let i = rng.random_range(0..line.len());
                line.splice(i..i, *b"\"x\":1e999,");
            }
        }
        let r = std::panic::catch_unwind(|| decode(&line).is_ok());
        match r {
            Ok(ok) => accepted += ok as usize,
            Err(_) => return Err("decoder panicked".into()),
        }
    }
    let fuzz_s = start.elapsed().as_secs_f64();
    let (observed, server) = late_join_hash()?;
    check(observed == server, || {
        format!("late-join hash {observed} vs server {server}")
    })?;
    Ok(format!(
        "{} types, {round_trips} round trips; {FUZZ_LINES} fuzz lines in {fuzz_s:.2} s ({accepted} accepted); \
         late-join hash {}",
        MessageType::ALL.len(),
        &observed[..12]
    ))
}

// determinism

fn determinism() -> Outcome {
    let dirs = [
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    ];
    let mut logs = Vec::new();
    for d in &dirs {
        let out = Command::new(env!("CARGO_BIN_EXE_nfb"))
            .args(["run", "--profile", "medium", "--seed", "42", "--out"])
            .arg(d.path())
            .env_remove("NFB_LOG_DIR")
            .output()
            .map_err(|e| e.to_string())?;
        check(out.status.success(), || {
            String::from_utf8_lossy(&out.stderr).into_owned()
        })?;
        let entry = std::fs::read_dir(d.path())
            .map_err(|e| e.to_string())?
            .next()
            .ok_or("no log written")?
            .map_err(|e| e.to_string())?;
        logs.push(std::fs::read(entry.path()).map_err(|e| e.to_string())?);
    }
    check(logs[0] == logs[1], || "logs differ".into())?;
    Ok(format!("two runs, {} identical bytes", logs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("threshold-formula", threshold_formula),
        ("session-duration", session_duration),
        ("dsp-oracle", dsp_oracle),
        ("feedback-table-closure", feedback_tables),
        ("reinforcer-timing", reinforcer_timing),
        ("analytics-oracle", analytics_oracle),
        ("protocol", protocol),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name:<24} {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name:<24} {why}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

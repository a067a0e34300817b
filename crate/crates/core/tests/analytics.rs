use nfb_core::analytics::{compute_metrics, live_metrics, multi_session_report, TrendDirection};
use nfb_core::calibration::ThresholdSource;
use nfb_core::engine::{Effect, Face, PerformanceStage, Tempo};
use nfb_core::protocol::{
    round_sig, AttentionSampleBody, Body, FeedbackEventBody, GameProgress, Message, SessionControl,
    ThresholdSet,
};
use nfb_core::runner::{run_simulated, SimulationConfig};
use nfb_core::session::{parse_log, write_log, SessionPhase};
use nfb_core::sim::AttentionProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Expected {
    counts: [usize; 3],
    up: u32,
    down: u32,
    in_game_up: u32,
    in_game_down: u32,
    mean: f64,
    sd: f64,
}

fn progress(stage: PerformanceStage) -> GameProgress {
    GameProgress {
        eggs_stored: 0,
        eggs_in_flight: 0,
        carts_filled: 0,
        bird_height: 0.5,
        lay_interval_s: 4.5,
        music_tempo: Tempo::Medium,
        boy_face: Face::Expecting,
        girl_face: Face::Neutral,
        stage: Some(stage),
        filtered_index: None,
    }
}

fn rank(s: PerformanceStage) -> i32 {
    match s {
        PerformanceStage::Low => 0,
        PerformanceStage::Medium => 1,
        PerformanceStage::High => 2,
    }
}

/// Builds a synthetic log and, in the same sequential pass, the expected
/// metrics: stage by direct comparison against the active thresholds,
/// switches by comparing each stage with the previous one, moments two-pass.
fn synthetic(seed: u64) -> (Vec<Message>, Expected) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::new();
    let mut seq = 0;
    let mut t = 0.0;
    let mut push = |log: &mut Vec<Message>, t: f64, body: Body| {
        log.push(Message::new(t, seq, body).normalized().unwrap());
        seq += 1;
    };
    let mut start = SessionControl::action(nfb_core::protocol::ControlAction::Start);
    start.phase = Some(SessionPhase::Customization);
    start.session_id = Some(format!("s{seed}"));
    push(&mut log, t, Body::SessionControl(start));
    push(
        &mut log,
        t,
        Body::SessionControl(SessionControl::phase(SessionPhase::Calibration, None)),
    );
    for _ in 0..rng.random_range(0..20) {
        t += 1.0;
        let index = rng.random_range(0.0..100.0);
        push(&mut log, t, Body::AttentionSample(AttentionSampleBody { index }));
    }
    let mut t1: f64 = rng.random_range(10.0f64..50.0).round();
    let mut t2: f64 = (t1 + rng.random_range(5.0..35.0)).round();
    push(
        &mut log,
        t,
        Body::ThresholdSet(ThresholdSet {
            t1,
            t2,
            source: ThresholdSource::Adaptive,
        }),
    );
    push(
        &mut log,
        t,
        Body::SessionControl(SessionControl::phase(SessionPhase::Training, None)),
    );

    let n = rng.random_range(1..400);
    let mut counts = [0usize; 3];
    let (mut up, mut down, mut ig_up, mut ig_down) = (0, 0, 0, 0);
    let mut prev: Option<i32> = None;
    let mut prev_ig: Option<i32> = None;
    let mut values = Vec::new();
    let mut x: f64 = rng.random_range(0.0..100.0);
    for _ in 0..n {
        t += 1.0;
        if rng.random_bool(0.01) {
            t1 = round_sig(rng.random_range(5.0..45.0));
            t2 = round_sig(t1 + rng.random_range(1.0..40.0));
            push(
                &mut log,
                t,
                Body::ThresholdSet(ThresholdSet {
                    t1,
                    t2,
                    source: ThresholdSource::Manual,
                }),
            );
        }
        x = if rng.random_bool(0.2) {
            rng.random_range(0.0..100.0)
        } else {
            (x + rng.random_range(-10.0..10.0)).clamp(0.0, 100.0)
        };
        let index = if rng.random_bool(0.05) { t1 } else { x };
        let m = Message::new(t, 0, Body::AttentionSample(AttentionSampleBody { index }))
            .normalized()
            .unwrap();
        let Body::AttentionSample(s) = &m.body else {
            unreachable!()
        };
        let index = s.index;
        push(&mut log, t, m.body);
        values.push(index);
        let r = if index < t1 {
            0
        } else if index < t2 {
            1
        } else {
            2
        };
        counts[r as usize] += 1;
        if let Some(p) = prev {
            if r > p {
                up += 1;
            }
            if r < p {
                down += 1;
            }
        }
        prev = Some(r);

        let ig = PerformanceStage::ALL[rng.random_range(0..3)];
        if rng.random_bool(0.7) {
            push(&mut log, t, Body::GameProgress(progress(ig)));
            if let Some(p) = prev_ig {
                if rank(ig) > p {
                    ig_up += 1;
                }
                if rank(ig) < p {
                    ig_down += 1;
                }
            }
            prev_ig = Some(rank(ig));
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
    };
    (
        log,
        Expected {
            counts,
            up,
            down,
            in_game_up: ig_up,
            in_game_down: ig_down,
            mean,
            sd,
        },
    )
}

#[test]
fn metrics_match_sequential_scan_oracle() {
    for seed in 0..100 {
        let (log, want) = synthetic(seed);
        let got = compute_metrics(&log).unwrap();
        let n: usize = want.counts.iter().sum();
        assert_eq!(got.samples, n, "seed {seed}");
        let counts = [got.pct_low, got.pct_medium, got.pct_high].map(|p| (p * n as f64).round() as usize);
        assert_eq!(counts, want.counts, "seed {seed}");
        assert_eq!(got.pct_low, want.counts[0] as f64 / n as f64);
        assert_eq!(
            (got.up_switches, got.down_switches),
            (want.up, want.down),
            "seed {seed}"
        );
        assert_eq!(
            (got.in_game_up_switches, got.in_game_down_switches),
            (want.in_game_up, want.in_game_down),
            "seed {seed}"
        );
        assert!((got.mean_index - want.mean).abs() <= 1e-9, "seed {seed}");
        assert!((got.sd_index - want.sd).abs() <= 1e-9, "seed {seed}");
        assert_eq!(got.session_id, format!("s{seed}"));
    }
}

fn preset(name: &str, seed: u64, cap: Option<f64>) -> SimulationConfig {
    let base = SimulationConfig::new(AttentionProfile::constant(0.0, seed));
    let profile = AttentionProfile::preset(name, seed, base.rest_s, base.training_start_s()).unwrap();
    SimulationConfig {
        profile,
        duration_cap_s: cap,
        ..base
    }
}

#[test]
fn replayed_log_reproduces_live_accounting() {
    let dir = tempfile::tempdir().unwrap();
    for (i, cfg) in [
        preset("medium", 11, None),
        preset("high", 12, None),
        preset("low", 13, Some(200.0)),
    ]
    .iter()
    .enumerate()
    {
        let out = run_simulated(cfg).unwrap();
        let live = live_metrics(&out.session).unwrap();
        let path = dir.path().join(format!("{i}.ndjson"));
        write_log(&path, out.session.log()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let parsed = parse_log(&bytes[..]).unwrap();
        let canonical: Vec<Message> = out
            .session
            .log()
            .iter()
            .map(|m| m.normalized().unwrap())
            .collect();
        assert_eq!(parsed, canonical);
        let replayed = compute_metrics(&parsed).unwrap();
        assert_eq!(replayed, live);

        let acc = out.session.engine().unwrap().record().accounting();
        assert_eq!(replayed.up_switches, acc.up_switches);
        assert_eq!(replayed.down_switches, acc.down_switches);
        assert_eq!(replayed.mean_index, acc.mean_index);
        assert_eq!(replayed.sd_index, acc.sd_index);
    }
}

#[test]
fn in_game_switches_match_stage_change_events() {
    let out = run_simulated(&preset("medium", 21, None)).unwrap();
    let (mut up, mut down) = (0, 0);
    for m in out.session.log() {
        if let Body::FeedbackEvent(FeedbackEventBody {
            effect: Effect::MovementSpeed {
                from: Some(from), to, ..
            },
            ..
        }) = &m.body
        {
            if to > from {
                up += 1;
            } else {
                down += 1;
            }
        }
    }
    let metrics = compute_metrics(out.session.log()).unwrap();
    assert_eq!(
        (metrics.in_game_up_switches, metrics.in_game_down_switches),
        (up, down)
    );
    assert_eq!(out.session.engine().unwrap().in_game_switches(), (up, down));
    assert!(up + down > 0);
}

#[test]
fn drifting_sessions_show_an_upward_trend() {
    let metrics: Vec<_> = (0..8u64)
        .map(|k| {
            let base = SimulationConfig::new(AttentionProfile::constant(0.0, k));
            let mut profile = AttentionProfile::scripted(vec![(0.0, 0.2 + 0.05 * k as f64)], k);
            profile.onset_s = base.rest_s;
            let mut cfg = SimulationConfig { profile, ..base };
            // fixed thresholds so later sessions are measured on the same scale
            cfg.manual_thresholds = Some((30.0, 60.0));
            compute_metrics(run_simulated(&cfg).unwrap().session.log()).unwrap()
        })
        .collect();
    let report = multi_session_report(&metrics, &[2, 3, 3]);
    let trend = report.trend.unwrap();
    assert_eq!(trend.direction, TrendDirection::Up);
    assert!(trend.slope > 0.0);
}

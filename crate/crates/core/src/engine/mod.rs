//! Training-phase engine: stage classification, the egg-collection game
//! model and dispatch of all four feedback levels.
//!
//! The engine is a single-writer state machine fed one attention sample at
//! a time. Each egg runs through a fixed pipeline: laid by the bird, handed
//! over from boy to girl after `handover_delay_s`, stored on the cart after
//! `pipeline_delay_s`.

pub mod feedback;
pub mod reinforcers;

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{ThresholdSource, Thresholds};
use crate::dsp::AttentionSample;
use crate::stats;
pub use feedback::{
    face_for, Animation, Character, Effect, EggColor, Face, FeedbackEvent, FeedbackKind, FeedbackLevel,
    Modality, Pace, PerformanceStage, Tempo,
};
use reinforcers::ReinforcerTimers;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("session already complete")]
    AlreadyComplete,
    #[error("sample index {0} outside [0, 100]")]
    InvalidSample(f64),
    #[error("sample at t={t} precedes previous sample at t={last}")]
    OutOfOrder { t: f64, last: f64 },
    #[error("invalid engine config: {0}")]
    Config(String),
}

/// Opaque character customization (e.g. scanned coloring-sheet references).
pub type CharacterSkins = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayIntervals {
    pub low: f64,
    pub medium: f64,
    pub high: f64,
}

impl LayIntervals {
    pub fn for_stage(&self, stage: PerformanceStage) -> f64 {
        match stage {
            PerformanceStage::Low => self.low,
            PerformanceStage::Medium => self.medium,
            PerformanceStage::High => self.high,
        }
    }
}

impl Default for LayIntervals {
    fn default() -> Self {
        Self {
            low: 6.0,
            medium: 4.5,
            high: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub lay_interval_s: LayIntervals,
    /// Causal median filter length applied before in-game classification.
    pub median_window: usize,
    pub handover_delay_s: f64,
    pub pipeline_delay_s: f64,
    pub egg_goal: u32,
    pub row_size: u32,
    pub tray_size: u32,
    pub reinforcer_window_s: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            lay_interval_s: LayIntervals::default(),
            median_window: 3,
            handover_delay_s: 1.0,
            pipeline_delay_s: 2.0,
            egg_goal: 60,
            row_size: 5,
            tray_size: 30,
            reinforcer_window_s: 3.0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let li = self.lay_interval_s;
        let times = [
            li.low,
            li.medium,
            li.high,
            self.handover_delay_s,
            self.pipeline_delay_s,
            self.reinforcer_window_s,
        ];
        if times.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(EngineError::Config(
                "intervals and delays must be positive".into(),
            ));
        }
        if self.handover_delay_s >= self.pipeline_delay_s {
            return Err(EngineError::Config("hand-over must precede storing".into()));
        }
        if self.median_window == 0 || self.egg_goal == 0 || self.row_size == 0 || self.tray_size == 0 {
            return Err(EngineError::Config("counts must be positive".into()));
        }
        Ok(())
    }
}

/// Half-open stage bands, High inclusive at `t2`.
pub fn classify_stage(index: f64, th: &Thresholds) -> PerformanceStage {
    if index < th.t1 {
        PerformanceStage::Low
    } else if index < th.t2 {
        PerformanceStage::Medium
    } else {
        PerformanceStage::High
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub eggs_stored: u32,
    pub eggs_in_flight: u32,
    pub carts_filled: u32,
    pub bird_height: f64,
    pub lay_interval_s: f64,
    pub music_tempo: Tempo,
    pub boy_face: Face,
    pub girl_face: Face,
    pub stage: Option<PerformanceStage>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub character_skins: CharacterSkins,
}

impl GameState {
    pub fn new(cfg: &EngineConfig) -> Self {
        Self {
            eggs_stored: 0,
            eggs_in_flight: 0,
            carts_filled: 0,
            bird_height: 0.0,
            lay_interval_s: cfg.lay_interval_s.medium,
            music_tempo: Tempo::Medium,
            boy_face: Face::Expecting,
            girl_face: Face::Neutral,
            stage: None,
            character_skins: CharacterSkins::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionReport {
    pub score: u8,
    pub stars: u8,
    pub duration_s: f64,
    pub eggs_stored: u32,
    pub t1: f64,
    pub t2: f64,
    pub source: ThresholdSource,
    pub completed: bool,
}

/// Raw (unfiltered) per-sample record of the training phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingRecord {
    pub samples: Vec<AttentionSample>,
    pub stages: Vec<PerformanceStage>,
}

/// Dwell fractions, switches and moments over a stage sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageAccounting {
    pub pct_low: f64,
    pub pct_medium: f64,
    pub pct_high: f64,
    pub up_switches: u32,
    pub down_switches: u32,
    pub mean_index: f64,
    pub sd_index: f64,
    pub samples: usize,
}

impl TrainingRecord {
    pub fn push(&mut self, sample: AttentionSample, stage: PerformanceStage) {
        self.samples.push(sample);
        self.stages.push(stage);
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn accounting(&self) -> StageAccounting {
        let n = self.stages.len();
        let mut counts = [0usize; 3];
        for s in &self.stages {
            counts[s.rank()] += 1;
        }
        let (up, down) = count_switches(&self.stages);
        let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        let indices: Vec<f64> = self.samples.iter().map(|s| s.index).collect();
        let (mean, sd) = stats::mean_sd(&indices);
        StageAccounting {
            pct_low: frac(counts[0]),
            pct_medium: frac(counts[1]),
            pct_high: frac(counts[2]),
            up_switches: up,
            down_switches: down,
            mean_index: mean,
            sd_index: sd,
            samples: n,
        }
    }
}

pub fn count_switches(stages: &[PerformanceStage]) -> (u32, u32) {
    let mut up = 0;
    let mut down = 0;
    for w in stages.windows(2) {
        if w[1] > w[0] {
            up += 1;
        } else if w[1] < w[0] {
            down += 1;
        }
    }
    (up, down)
}

/// `score = round(mean index)`, `stars = 1 + [M+H >= 50%] + [H >= 20%]`.
pub fn score_and_stars(acc: &StageAccounting) -> (u8, u8) {
    let score = acc.mean_index.round().clamp(0.0, 100.0) as u8;
    let mut stars = 1;
    if acc.pct_medium + acc.pct_high >= 0.5 {
        stars += 1;
    }
    if acc.pct_high >= 0.2 {
        stars += 1;
    }
    (score, stars)
}

/// Builds the conclusion report from the raw training record.
pub fn finalize(
    record: &TrainingRecord,
    thresholds: &Thresholds,
    duration_s: f64,
    eggs_stored: u32,
    completed: bool,
) -> Option<SessionReport> {
    if record.is_empty() {
        return None;
    }
    let (score, stars) = score_and_stars(&record.accounting());
    Some(SessionReport {
        score,
        stars,
        duration_s,
        eggs_stored,
        t1: thresholds.t1,
        t2: thresholds.t2,
        source: thresholds.source,
        completed,
    })
}

/// Milestone feedback for the stored-egg count moving from `before` to
/// `after`. `award` carries (stars, score) for the goal celebration.
pub fn progress_events(
    before: u32,
    after: u32,
    t: f64,
    cfg: &EngineConfig,
    award: Option<(u8, u8)>,
) -> Vec<FeedbackEvent> {
    let mut out = Vec::new();
    for n in before.saturating_add(1)..=after.min(cfg.egg_goal) {
        if n % cfg.row_size == 0 {
            let row = n / cfg.row_size;
            out.push(FeedbackEvent::new(t, Effect::RowHalo { row }));
            out.push(FeedbackEvent::new(t, Effect::Woohoo { row }));
        }
        if n % cfg.tray_size == 0 && n < cfg.egg_goal {
            let tray = n / cfg.tray_size;
            out.push(FeedbackEvent::new(t, Effect::TrayStars { tray }));
            out.push(FeedbackEvent::new(t, Effect::Ohyea { tray }));
        }
        if n == cfg.egg_goal {
            out.push(FeedbackEvent::new(t, Effect::Victory {}));
            if let Some((stars, score)) = award {
                out.push(FeedbackEvent::new(t, Effect::StarsAwarded { stars, score }));
            }
        }
    }
    out
}

/// Causal running median over the last `len` values.
#[derive(Debug, Clone)]
pub struct MedianFilter {
    len: usize,
    values: VecDeque<f64>,
}

impl MedianFilter {
    pub fn new(len: usize) -> Self {
        Self {
            len: len.max(1),
            values: VecDeque::new(),
        }
    }

    pub fn push(&mut self, x: f64) -> f64 {
        self.values.push_back(x);
        if self.values.len() > self.len {
            self.values.pop_front();
        }
        let mut sorted: Vec<f64> = self.values.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        if m % 2 == 1 {
            sorted[m / 2]
        } else {
            (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct InFlightEgg {
    number: u32,
    laid_at: f64,
    handed_over: bool,
}

#[derive(Debug, Clone)]
pub struct Engine {
    cfg: EngineConfig,
    thresholds: Thresholds,
    state: GameState,
    training_start: f64,
    last_t: Option<f64>,
    last_filtered: Option<f64>,
    last_lay: f64,
    eggs_laid: u32,
    in_flight: VecDeque<InFlightEgg>,
    golden_pending: bool,
    high_since: Option<f64>,
    median: MedianFilter,
    timers: ReinforcerTimers,
    rng: ChaCha8Rng,
    record: TrainingRecord,
    in_game_switches: (u32, u32),
    report: Option<SessionReport>,
}

impl Engine {
    pub fn new(
        cfg: EngineConfig,
        thresholds: Thresholds,
        training_start: f64,
        seed: u64,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        Ok(Self {
            state: GameState::new(&cfg),
            thresholds,
            training_start,
            last_t: None,
            last_filtered: None,
            last_lay: training_start,
            eggs_laid: 0,
            in_flight: VecDeque::new(),
            golden_pending: false,
            high_since: None,
            median: MedianFilter::new(cfg.median_window),
            timers: ReinforcerTimers::new(cfg.reinforcer_window_s),
            rng: ChaCha8Rng::seed_from_u64(seed),
            record: TrainingRecord::default(),
            in_game_switches: (0, 0),
            report: None,
            cfg,
        })
    }

    pub fn with_state(mut self, state: GameState) -> Self {
        self.state = state;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn record(&self) -> &TrainingRecord {
        &self.record
    }

    pub fn report(&self) -> Option<&SessionReport> {
        self.report.as_ref()
    }

    pub fn is_complete(&self) -> bool {
        self.report.is_some()
    }

    pub fn training_start(&self) -> f64 {
        self.training_start
    }

    /// Latest median-filtered index driving the in-game stage.
    pub fn filtered_index(&self) -> Option<f64> {
        self.last_filtered
    }

    /// Stage switches on the filtered in-game stream as (up, down).
    pub fn in_game_switches(&self) -> (u32, u32) {
        self.in_game_switches
    }

    /// Takes effect at the next sample.
    pub fn set_thresholds(&mut self, th: Thresholds) {
        self.thresholds = th;
    }

    pub fn step(&mut self, sample: AttentionSample) -> Result<Vec<FeedbackEvent>, EngineError> {
        if self.report.is_some() {
            return Err(EngineError::AlreadyComplete);
        }
        if !sample.index.is_finite() || !(0.0..=100.0).contains(&sample.index) {
            return Err(EngineError::InvalidSample(sample.index));
        }
        if let Some(last) = self.last_t {
            if sample.t < last {
                return Err(EngineError::OutOfOrder { t: sample.t, last });
            }
        }
        let t = sample.t;
        let prev_t = self.last_t.unwrap_or(self.training_start);
        self.record
            .push(sample, classify_stage(sample.index, &self.thresholds));

        let filtered = self.median.push(sample.index);
        self.last_filtered = Some(filtered);
        let stage = classify_stage(filtered, &self.thresholds);

        let mut events = Vec::new();
        self.state.bird_height = sample.index / 100.0;
        events.push(FeedbackEvent::new(
            t,
            Effect::BirdHeight {
                height: self.state.bird_height,
            },
        ));

        if self.state.stage != Some(stage) {
            self.change_stage(t, stage, &mut events);
        }

        let triggers = self.timers.update(t, filtered, stage);
        if triggers.heart_bubbles {
            events.push(FeedbackEvent::new(t, Effect::HeartBubbles {}));
        }
        if triggers.golden_egg {
            self.golden_pending = true;
        }

        self.run_pipeline(t, stage, &mut events);
        if self.report.is_none() {
            self.lay_due_eggs(t, prev_t, stage, &mut events);
        }
        self.last_t = Some(t);
        Ok(events)
    }

    fn change_stage(&mut self, t: f64, to: PerformanceStage, events: &mut Vec<FeedbackEvent>) {
        let from = self.state.stage;
        if let Some(prev) = from {
            if to > prev {
                self.in_game_switches.0 += 1;
            } else {
                self.in_game_switches.1 += 1;
            }
        }
        let interval_s = self.cfg.lay_interval_s.for_stage(to);
        self.state.stage = Some(to);
        self.state.lay_interval_s = interval_s;
        self.state.music_tempo = to.tempo();
        self.high_since = (to == PerformanceStage::High).then_some(t);
        events.push(FeedbackEvent::new(
            t,
            Effect::MovementSpeed {
                speed: to.pace(),
                from,
                to,
            },
        ));
        events.push(FeedbackEvent::new(t, Effect::LayRate { interval_s, from, to }));
        events.push(FeedbackEvent::new(
            t,
            Effect::MusicTempo {
                tempo: to.tempo(),
                from,
                to,
            },
        ));
    }

    fn face_event(&mut self, t: f64, animation: Animation, stage: PerformanceStage) -> FeedbackEvent {
        let dwell = self.high_since.map_or(0.0, |s| t - s);
        let face = face_for(animation, stage, dwell);
        let character = animation.character();
        match character {
            Character::Boy => self.state.boy_face = face,
            Character::Girl => self.state.girl_face = face,
        }
        FeedbackEvent::new(
            t,
            Effect::FacialExpression {
                character,
                animation,
                face,
            },
        )
    }

    fn run_pipeline(&mut self, t: f64, stage: PerformanceStage, events: &mut Vec<FeedbackEvent>) {
        loop {
            // earliest due keyframe across in-flight eggs
            let next = self
                .in_flight
                .iter()
                .enumerate()
                .map(|(i, egg)| {
                    let due = if egg.handed_over {
                        egg.laid_at + self.cfg.pipeline_delay_s
                    } else {
                        egg.laid_at + self.cfg.handover_delay_s
                    };
                    (i, due)
                })
                .filter(|(_, due)| *due <= t + TIME_EPS)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let Some((i, _)) = next else { break };
            let egg = self.in_flight[i];
            if !egg.handed_over {
                self.in_flight[i].handed_over = true;
                self.hand_over(t, egg.number, stage, events);
            } else {
                self.in_flight.remove(i);
                self.store(t, stage, events);
                if self.report.is_some() {
                    break;
                }
            }
        }
        self.state.eggs_in_flight = self.in_flight.len() as u32;
    }

    fn hand_over(&mut self, t: f64, egg: u32, stage: PerformanceStage, events: &mut Vec<FeedbackEvent>) {
        let ev = self.face_event(t, Animation::BoyHandingOver, stage);
        events.push(ev);
        events.push(FeedbackEvent::new(t, Effect::Bubbles { egg }));
        events.push(FeedbackEvent::new(t, Effect::BubbleSound { egg }));
        let ev = self.face_event(t, Animation::GirlReceiving, stage);
        events.push(ev);
        // the two characters now face each other
        events.push(FeedbackEvent::new(t, Effect::Emoji { egg }));
        events.push(FeedbackEvent::new(t, Effect::CoinSound { egg }));
        let ev = self.face_event(t, Animation::BoyTurningBack, stage);
        events.push(ev);
        let ev = self.face_event(t, Animation::BoyHeadUp, stage);
        events.push(ev);
    }

    fn store(&mut self, t: f64, stage: PerformanceStage, events: &mut Vec<FeedbackEvent>) {
        let ev = self.face_event(t, Animation::GirlTurningWithEggs, stage);
        events.push(ev);
        let ev = self.face_event(t, Animation::GirlPuttingDown, stage);
        events.push(ev);
        let before = self.state.eggs_stored;
        self.state.eggs_stored += 1;
        self.state.carts_filled = self.state.eggs_stored / self.cfg.tray_size;
        events.push(FeedbackEvent::new(
            t,
            Effect::EggStored {
                eggs_stored: self.state.eggs_stored,
                carts_filled: self.state.carts_filled,
            },
        ));
        let mut award = None;
        if self.state.eggs_stored >= self.cfg.egg_goal {
            let report = finalize(
                &self.record,
                &self.thresholds,
                t - self.training_start,
                self.state.eggs_stored,
                true,
            )
            .expect("a stored egg implies at least one sample");
            award = Some((report.stars, report.score));
            self.report = Some(report);
        }
        events.extend(progress_events(
            before,
            self.state.eggs_stored,
            t,
            &self.cfg,
            award,
        ));
        let ev = self.face_event(t, Animation::GirlTurningBack, stage);
        events.push(ev);
    }

    fn lay_due_eggs(
        &mut self,
        t: f64,
        prev_t: f64,
        stage: PerformanceStage,
        events: &mut Vec<FeedbackEvent>,
    ) {
        let interval = self.cfg.lay_interval_s.for_stage(stage);
        while self.eggs_laid < self.cfg.egg_goal {
            let due = self.last_lay + interval;
            if due > t + TIME_EPS {
                break;
            }
            // on schedule keep the exact due time; overdue after a stage change lays now
            let laid_at = if due > prev_t { due } else { t };
            self.last_lay = laid_at;
            self.eggs_laid += 1;
            let number = self.eggs_laid;
            self.in_flight.push_back(InFlightEgg {
                number,
                laid_at,
                handed_over: false,
            });
            if std::mem::take(&mut self.golden_pending) {
                events.push(FeedbackEvent::new(t, Effect::GoldenEgg { egg: number }));
            } else {
                let color = EggColor::PALETTE[self.rng.random_range(0..EggColor::PALETTE.len())];
                events.push(FeedbackEvent::new(t, Effect::ColoredEgg { egg: number, color }));
            }
            let ev = self.face_event(t, Animation::BoyCatching, stage);
            events.push(ev);
            let ev = self.face_event(t, Animation::BoyTurningWithEggs, stage);
            events.push(ev);
        }
        self.state.eggs_in_flight = self.in_flight.len() as u32;
    }

    /// Shift all pending timers after a pause of `dt` seconds.
    pub fn resume_after(&mut self, dt: f64) {
        self.last_lay += dt;
        for egg in self.in_flight.iter_mut() {
            egg.laid_at += dt;
        }
        if let Some(h) = self.high_since.as_mut() {
            *h += dt;
        }
        self.timers.reset_history();
    }

    /// Ends training early. Returns `None` when no sample was processed.
    pub fn stop(&mut self, t: f64) -> Option<SessionReport> {
        if let Some(r) = self.report {
            return Some(r);
        }
        let report = finalize(
            &self.record,
            &self.thresholds,
            t - self.training_start,
            self.state.eggs_stored,
            false,
        )?;
        self.report = Some(report);
        Some(report)
    }
}

//! Session-log replay and reporting: smoothed traces, %-time per stage,
//! switch counts, moments and the multi-session table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{ThresholdSource, Thresholds};
use crate::dsp::AttentionSample;
use crate::engine::{classify_stage, count_switches, PerformanceStage, SessionReport};
use crate::protocol::{Body, ControlAction, Message};
use crate::session::{Session, SessionPhase};
use crate::stats;

pub const SMOOTHING_WINDOW_S: f64 = 10.0;
pub const DEFAULT_GROUPING: [usize; 3] = [2, 3, 3];
pub const CSV_HEADER: &str = "session,t1,t2,pct_low,pct_medium,pct_high,up,down,mean,sd,duration_s,completed";

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("no training samples")]
    NoData,
    #[error("corrupt log: {0}")]
    CorruptLog(String),
}

/// Centered moving average spanning `window_s` of time, truncated at the
/// edges. With `w = window_s / dt` samples per window, offsets `|k| < w/2`
/// weigh 1 and, for even `w`, the two endpoints `|k| = w/2` weigh 1/2, so
/// the window is symmetric about each sample and exactly `window_s` long.
pub fn moving_average(
    trace: &[AttentionSample],
    window_s: f64,
) -> Result<Vec<AttentionSample>, AnalyticsError> {
    let n = trace.len();
    if n == 0 {
        return Err(AnalyticsError::NoData);
    }
    let dt = if n > 1 {
        (trace[n - 1].t - trace[0].t) / (n - 1) as f64
    } else {
        1.0
    };
    let w = if dt > 0.0 {
        ((window_s / dt).round() as usize).max(1)
    } else {
        1
    };
    let half = w / 2;
    let edge_weight = if w % 2 == 0 { 0.5 } else { 1.0 };
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let (mut sum, mut weight) = (0.0, 0.0);
            for (j, s) in trace.iter().enumerate().take(hi + 1).skip(lo) {
                let wt = if j.abs_diff(i) == half && half > 0 {
                    edge_weight
                } else {
                    1.0
                };
                sum += wt * s.index;
                weight += wt;
            }
            AttentionSample::new(trace[i].t, sum / weight)
        })
        .collect())
}

/// Which index stream the %-time and switch rows are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageSource {
    #[default]
    Raw,
    Smoothed,
}

/// Training-phase content of one session log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub session_id: String,
    pub training_start: f64,
    pub samples: Vec<AttentionSample>,
    /// Thresholds active when each sample was taken.
    pub thresholds: Vec<Thresholds>,
    /// Threshold changes during training as `(t, thresholds)`.
    pub threshold_changes: Vec<(f64, Thresholds)>,
    /// Median-filtered in-game stage after each sample.
    pub in_game_stages: Vec<PerformanceStage>,
    pub report: Option<SessionReport>,
}

impl TrainingTrace {
    pub fn from_log(log: &[Message]) -> Result<Self, AnalyticsError> {
        let mut session_id = String::new();
        let mut phase = None;
        let mut active: Option<Thresholds> = None;
        let mut training_start = None;
        let mut samples = Vec::new();
        let mut thresholds = Vec::new();
        let mut changes = Vec::new();
        let mut in_game = Vec::new();
        let mut report = None;
        for m in log {
            match &m.body {
                Body::SessionControl(c) => {
                    if let Some(id) = &c.session_id {
                        session_id = id.clone();
                    }
                    if matches!(c.action, ControlAction::Phase | ControlAction::Start) && c.phase.is_some() {
                        phase = c.phase;
                        if phase == Some(SessionPhase::Training) {
                            training_start = Some(m.t);
                        }
                    }
                }
                Body::ThresholdSet(th) => {
                    let th = Thresholds {
                        baseline: None,
                        t1: th.t1,
                        t2: th.t2,
                        source: th.source,
                    };
                    if phase == Some(SessionPhase::Training) {
                        changes.push((m.t, th));
                    }
                    active = Some(th);
                }
                Body::AttentionSample(s) if phase == Some(SessionPhase::Training) => {
                    let th = active.ok_or_else(|| {
                        AnalyticsError::CorruptLog(format!(
                            "training sample seq {} has no threshold record",
                            m.seq
                        ))
                    })?;
                    samples.push(AttentionSample::new(m.t, s.index));
                    thresholds.push(th);
                }
                Body::GameProgress(p) if phase == Some(SessionPhase::Training) => {
                    if let Some(stage) = p.stage {
                        in_game.push(stage);
                    }
                }
                Body::SessionReport(r) => report = Some(*r),
                _ => {}
            }
        }
        if samples.is_empty() {
            return Err(AnalyticsError::NoData);
        }
        Ok(Self {
            session_id,
            training_start: training_start.unwrap_or(samples[0].t),
            samples,
            thresholds,
            threshold_changes: changes,
            in_game_stages: in_game,
            report,
        })
    }

    pub fn stages(&self, source: StageSource) -> Vec<PerformanceStage> {
        let values: Vec<f64> = match source {
            StageSource::Raw => self.samples.iter().map(|s| s.index).collect(),
            StageSource::Smoothed => moving_average(&self.samples, SMOOTHING_WINDOW_S)
                .expect("trace is non-empty")
                .iter()
                .map(|s| s.index)
                .collect(),
        };
        values
            .iter()
            .zip(&self.thresholds)
            .map(|(x, th)| classify_stage(*x, th))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session_id: String,
    pub t1: f64,
    pub t2: f64,
    pub source: ThresholdSource,
    pub stage_source: StageSource,
    pub pct_low: f64,
    pub pct_medium: f64,
    pub pct_high: f64,
    pub up_switches: u32,
    pub down_switches: u32,
    /// Switches on the median-filtered in-game stream.
    pub in_game_up_switches: u32,
    pub in_game_down_switches: u32,
    pub mean_index: f64,
    pub sd_index: f64,
    pub duration_s: f64,
    pub completed: bool,
    pub samples: usize,
    pub score: Option<u8>,
    pub stars: Option<u8>,
}

pub fn compute_metrics(log: &[Message]) -> Result<SessionMetrics, AnalyticsError> {
    compute_metrics_with(log, StageSource::Raw)
}

pub fn compute_metrics_with(log: &[Message], source: StageSource) -> Result<SessionMetrics, AnalyticsError> {
    let trace = TrainingTrace::from_log(log)?;
    Ok(metrics_from_trace(&trace, source))
}

pub fn metrics_from_trace(trace: &TrainingTrace, source: StageSource) -> SessionMetrics {
    let stages = trace.stages(source);
    let n = stages.len();
    let mut counts = [0usize; 3];
    for s in &stages {
        counts[s.rank()] += 1;
    }
    let (up, down) = count_switches(&stages);
    let (ig_up, ig_down) = count_switches(&trace.in_game_stages);
    let indices: Vec<f64> = trace.samples.iter().map(|s| s.index).collect();
    let (mean, sd) = stats::mean_sd(&indices);
    let last_th = trace.thresholds[n - 1];
    let last_t = trace.samples[n - 1].t;
    let duration_s = trace
        .report
        .map_or(last_t - trace.training_start, |r| r.duration_s);
    SessionMetrics {
        session_id: trace.session_id.clone(),
        t1: last_th.t1,
        t2: last_th.t2,
        source: last_th.source,
        stage_source: source,
        pct_low: counts[0] as f64 / n as f64,
        pct_medium: counts[1] as f64 / n as f64,
        pct_high: counts[2] as f64 / n as f64,
        up_switches: up,
        down_switches: down,
        in_game_up_switches: ig_up,
        in_game_down_switches: ig_down,
        mean_index: mean,
        sd_index: sd,
        duration_s,
        completed: trace.report.is_some_and(|r| r.completed),
        samples: n,
        score: trace.report.map(|r| r.score),
        stars: trace.report.map(|r| r.stars),
    }
}

/// Metrics from the engine's own live accounting, without going through
/// the log. `None` before training has processed a sample.
pub fn live_metrics(session: &Session) -> Option<SessionMetrics> {
    let engine = session.engine()?;
    let record = engine.record();
    let last = record.samples.last()?;
    let acc = record.accounting();
    let th = engine.thresholds();
    let report = session.report().copied();
    let (ig_up, ig_down) = engine.in_game_switches();
    Some(SessionMetrics {
        session_id: session.id().to_string(),
        t1: th.t1,
        t2: th.t2,
        source: th.source,
        stage_source: StageSource::Raw,
        pct_low: acc.pct_low,
        pct_medium: acc.pct_medium,
        pct_high: acc.pct_high,
        up_switches: acc.up_switches,
        down_switches: acc.down_switches,
        in_game_up_switches: ig_up,
        in_game_down_switches: ig_down,
        mean_index: acc.mean_index,
        sd_index: acc.sd_index,
        duration_s: report.map_or(last.t - engine.training_start(), |r| r.duration_s),
        completed: report.is_some_and(|r| r.completed),
        samples: acc.samples,
        score: report.map(|r| r.score),
        stars: report.map(|r| r.stars),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendDirection {
    Up,
    Down,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    /// Least-squares slope of the mean index per session.
    pub slope: f64,
    pub direction: TrendDirection,
}

pub fn trend(means: &[f64]) -> Option<Trend> {
    let slope = stats::ols_slope(means)?;
    let scale = 1.0 + means.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let direction = if slope.abs() <= 1e-9 * scale {
        TrendDirection::Flat
    } else if slope > 0.0 {
        TrendDirection::Up
    } else {
        TrendDirection::Down
    };
    Some(Trend { slope, direction })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionColumn {
    pub label: String,
    pub group: usize,
    pub metrics: SessionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSessionReport {
    pub columns: Vec<SessionColumn>,
    pub trend: Option<Trend>,
}

/// Groups sessions into weeks by `grouping` sizes (sessions beyond the sum
/// continue in groups of the last size) and fits the trend of the means.
pub fn multi_session_report(metrics: &[SessionMetrics], grouping: &[usize]) -> MultiSessionReport {
    let sizes: Vec<usize> = grouping.iter().copied().filter(|&g| g > 0).collect();
    let last = sizes.last().copied().unwrap_or(metrics.len().max(1));
    let mut columns = Vec::with_capacity(metrics.len());
    let (mut group, mut left) = (0usize, sizes.first().copied().unwrap_or(last));
    for (i, m) in metrics.iter().enumerate() {
        if left == 0 {
            group += 1;
            left = sizes.get(group).copied().unwrap_or(last);
        }
        left -= 1;
        columns.push(SessionColumn {
            label: format!("S{}", i + 1),
            group: group + 1,
            metrics: m.clone(),
        });
    }
    let means: Vec<f64> = metrics.iter().map(|m| m.mean_index).collect();
    MultiSessionReport {
        trend: trend(&means),
        columns,
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:.2}")
}

impl MultiSessionReport {
    pub fn to_table(&self) -> String {
        let label_w = 16;
        let col_w = 16;
        let mut rows: Vec<(String, Vec<String>)> = Vec::new();
        let cols = &self.columns;
        let row = |name: &str, f: &dyn Fn(&SessionColumn) -> String| {
            (name.to_string(), cols.iter().map(f).collect::<Vec<_>>())
        };
        rows.push(row("Week", &|c| c.group.to_string()));
        rows.push(row("Session", &|c| c.label.clone()));
        rows.push(row("Thresholds", &|c| {
            format!("[{}, {}]", fmt_num(c.metrics.t1), fmt_num(c.metrics.t2))
        }));
        rows.push(row("Low (% time)", &|c| fmt_num(100.0 * c.metrics.pct_low)));
        rows.push(row("Medium (% time)", &|c| fmt_num(100.0 * c.metrics.pct_medium)));
        rows.push(row("High (% time)", &|c| fmt_num(100.0 * c.metrics.pct_high)));
        rows.push(row("Up switches", &|c| c.metrics.up_switches.to_string()));
        rows.push(row("Down switches", &|c| c.metrics.down_switches.to_string()));
        rows.push(row("In-game up/down", &|c| {
            format!(
                "{}/{}",
                c.metrics.in_game_up_switches, c.metrics.in_game_down_switches
            )
        }));
        rows.push(row("Mean", &|c| fmt_num(c.metrics.mean_index)));
        rows.push(row("SD", &|c| fmt_num(c.metrics.sd_index)));
        rows.push(row("Duration (s)", &|c| fmt_num(c.metrics.duration_s)));
        rows.push(row("Completed", &|c| {
            if c.metrics.completed { "yes" } else { "no" }.into()
        }));
        rows.push(row("Score", &|c| {
            c.metrics.score.map_or("-".into(), |s| s.to_string())
        }));
        rows.push(row("Stars", &|c| {
            c.metrics.stars.map_or("-".into(), |s| s.to_string())
        }));

        let mut out = String::new();
        for (name, values) in rows {
            let _ = write!(out, "{name:<label_w$}");
            for v in values {
                let _ = write!(out, "{v:>col_w$}");
            }
            out.push('\n');
        }
        match self.trend {
            Some(t) => {
                let dir = match t.direction {
                    TrendDirection::Up => "up",
                    TrendDirection::Down => "down",
                    TrendDirection::Flat => "flat",
                };
                let _ = writeln!(out, "Trend: {dir} (slope {:+.4} per session)", t.slope);
            }
            None => out.push_str("Trend: n/a (single session)\n"),
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for c in &self.columns {
            let m = &c.metrics;
            let id = if m.session_id.is_empty() {
                &c.label
            } else {
                &m.session_id
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                id,
                m.t1,
                m.t2,
                m.pct_low,
                m.pct_medium,
                m.pct_high,
                m.up_switches,
                m.down_switches,
                m.mean_index,
                m.sd_index,
                m.duration_s,
                m.completed
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub index: f64,
    pub smoothed: f64,
    pub stage: PerformanceStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpan {
    pub from_t: f64,
    pub t1: f64,
    pub t2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBand {
    pub stage: PerformanceStage,
    pub from_t: f64,
    pub to_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlot {
    pub session_id: String,
    pub trace: Vec<TracePoint>,
    pub thresholds: Vec<ThresholdSpan>,
    pub stage_bands: Vec<StageBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub sessions: Vec<SessionPlot>,
    pub report: MultiSessionReport,
}

pub fn plot_data(trace: &TrainingTrace, source: StageSource) -> SessionPlot {
    let smoothed = moving_average(&trace.samples, SMOOTHING_WINDOW_S).expect("trace is non-empty");
    let stages = trace.stages(source);
    let points: Vec<TracePoint> = trace
        .samples
        .iter()
        .zip(&smoothed)
        .zip(&stages)
        .map(|((s, m), st)| TracePoint {
            t: s.t,
            index: s.index,
            smoothed: m.index,
            stage: *st,
        })
        .collect();
    let mut thresholds = vec![ThresholdSpan {
        from_t: trace.training_start,
        t1: trace.thresholds[0].t1,
        t2: trace.thresholds[0].t2,
    }];
    for (t, th) in &trace.threshold_changes {
        if *t > trace.training_start {
            thresholds.push(ThresholdSpan {
                from_t: *t,
                t1: th.t1,
                t2: th.t2,
            });
        }
    }
    let mut bands: Vec<StageBand> = Vec::new();
    for p in &points {
        match bands.last_mut() {
            Some(b) if b.stage == p.stage => b.to_t = p.t,
            _ => bands.push(StageBand {
                stage: p.stage,
                from_t: p.t,
                to_t: p.t,
            }),
        }
    }
    SessionPlot {
        session_id: trace.session_id.clone(),
        trace: points,
        thresholds,
        stage_bands: bands,
    }
}

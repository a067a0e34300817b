//! Timer-based reinforcers over a trailing window of samples.
//!
//! - golden egg: the index never decreased across the trailing window
//! - heart bubbles: every sample in the trailing window was High
//!
//! A trigger fires once, then stays disarmed until its predicate has been
//! false for at least one sample.

use std::collections::VecDeque;

use super::feedback::PerformanceStage;

const TIME_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSample {
    pub t: f64,
    pub index: f64,
    pub stage: PerformanceStage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Triggers {
    pub golden_egg: bool,
    pub heart_bubbles: bool,
}

/// Predicates over a window already trimmed to the trailing span. `None`
/// when the window does not yet cover `window_s`.
pub fn window_predicates(window: &[WindowSample], window_s: f64) -> Option<(bool, bool)> {
    let (first, last) = (window.first()?, window.last()?);
    if last.t - first.t + TIME_EPS < window_s {
        return None;
    }
    let non_decreasing = window.windows(2).all(|w| w[1].index >= w[0].index);
    let all_high = window.iter().all(|s| s.stage == PerformanceStage::High);
    Some((non_decreasing, all_high))
}

#[derive(Debug, Clone)]
pub struct ReinforcerTimers {
    window_s: f64,
    history: VecDeque<WindowSample>,
    golden_armed: bool,
    heart_armed: bool,
}

impl ReinforcerTimers {
    pub fn new(window_s: f64) -> Self {
        Self {
            window_s,
            history: VecDeque::new(),
            golden_armed: true,
            heart_armed: true,
        }
    }

    pub fn update(&mut self, t: f64, index: f64, stage: PerformanceStage) -> Triggers {
        self.history.push_back(WindowSample { t, index, stage });
        while let Some(front) = self.history.front() {
            if front.t < t - self.window_s - TIME_EPS {
                self.history.pop_front();
            } else {
                break;
            }
        }
        let window = self.history.make_contiguous();
        let (golden, heart) = window_predicates(window, self.window_s).unwrap_or((false, false));
        Triggers {
            golden_egg: Self::edge(&mut self.golden_armed, golden),
            heart_bubbles: Self::edge(&mut self.heart_armed, heart),
        }
    }

    fn edge(armed: &mut bool, predicate: bool) -> bool {
        if !predicate {
            *armed = true;
            return false;
        }
        let fire = *armed;
        *armed = false;
        fire
    }

    /// Forget history after a gap in the stream (pause/resume).
    pub fn reset_history(&mut self) {
        self.history.clear();
    }
}

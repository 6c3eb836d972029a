//! Code-reuse detection from consecutive indirect branches and short basic
//! blocks.
//!
//! The detector tracks runs of blocks that end in an indirect branch. Within
//! a run it keeps the lengths of the last `window` blocks and, once the run
//! has lasted at least `warmup` blocks, evaluates the windowed average block
//! length against two count-banded thresholds plus a hard cap on the run
//! length itself. All average comparisons are exact cross-multiplications —
//! no floating point in the decision path.

use std::collections::VecDeque;

use crate::ratio::Ratio;
use crate::trace::{BlockExec, TraceEvent};

/// Detection thresholds. Defaults: window 10, warmup 15, band 1 up to 35
/// consecutive indirect branches at average ≤ 2.25, band 2 up to 50 at
/// average ≤ 4, hard cap 50.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AntiCraConfig {
    /// Sliding-window size in blocks.
    pub window: u64,
    /// Run length before averages are evaluated.
    pub warmup: u64,
    pub band1_max_count: u64,
    pub band1_max_avg: Ratio,
    pub band2_max_count: u64,
    pub band2_max_avg: Ratio,
    pub hard_cap: u64,
}

impl Default for AntiCraConfig {
    fn default() -> AntiCraConfig {
        AntiCraConfig {
            window: 10,
            warmup: 15,
            band1_max_count: 35,
            band1_max_avg: Ratio::new(9, 4),
            band2_max_count: 50,
            band2_max_avg: Ratio::new(4, 1),
            hard_cap: 50,
        }
    }
}

impl AntiCraConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.window == 0 {
            return Err("anticra.window must be positive".to_string());
        }
        if self.warmup < self.window {
            return Err(format!(
                "anticra.warmup ({}) must be ≥ anticra.window ({})",
                self.warmup, self.window
            ));
        }
        if self.band1_max_count >= self.band2_max_count {
            return Err(format!(
                "anticra.band1_max_count ({}) must be < anticra.band2_max_count ({})",
                self.band1_max_count, self.band2_max_count
            ));
        }
        if self.band2_max_count > self.hard_cap {
            return Err(format!(
                "anticra.band2_max_count ({}) must be ≤ anticra.hard_cap ({})",
                self.band2_max_count, self.hard_cap
            ));
        }
        if self.band1_max_avg > self.band2_max_avg {
            return Err(format!(
                "anticra.band1_max_avg ({}) must be ≤ anticra.band2_max_avg ({})",
                self.band1_max_avg, self.band2_max_avg
            ));
        }
        Ok(())
    }
}

/// Which bound fired. On simultaneous satisfaction the reported rule follows
/// the precedence `HardCap > Band1 > Band2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AntiCraRule {
    HardCap,
    Band1,
    Band2,
}

impl AntiCraRule {
    pub fn as_str(self) -> &'static str {
        match self {
            AntiCraRule::HardCap => "HardCap",
            AntiCraRule::Band1 => "Band1",
            AntiCraRule::Band2 => "Band2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AntiCraEvidence {
    /// Length of the current indirect-branch run, including this block.
    pub consecutive: u64,
    /// Window average at this block; absent below warmup.
    pub window_avg: Option<Ratio>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Clean,
    Alarm {
        rule: AntiCraRule,
        evidence: AntiCraEvidence,
    },
}

impl Verdict {
    pub fn is_alarm(&self) -> bool {
        matches!(self, Verdict::Alarm { .. })
    }
}

/// Live counters for the current indirect-branch run. The ring buffer holds
/// the lengths of the last `window` blocks of the run and is cleared whenever
/// the run ends.
#[derive(Debug, Clone, Default)]
pub struct RunState {
    consecutive: u64,
    lengths: VecDeque<u64>,
    window_sum: u64,
}

impl RunState {
    pub fn new() -> RunState {
        RunState::default()
    }

    pub fn consecutive(&self) -> u64 {
        self.consecutive
    }

    /// Entries currently buffered; at most `window`, for state accounting.
    pub fn buffered_lengths(&self) -> usize {
        self.lengths.len()
    }

    fn reset(&mut self) {
        self.consecutive = 0;
        self.lengths.clear();
        self.window_sum = 0;
    }

    fn window_avg(&self) -> Option<Ratio> {
        if self.lengths.is_empty() {
            None
        } else {
            Some(Ratio::new(self.window_sum, self.lengths.len() as u64))
        }
    }

    /// Feeds the next executed block and returns the verdict for it.
    pub fn observe_block(&mut self, cfg: &AntiCraConfig, ev: &BlockExec) -> Verdict {
        if !ev.terminator.is_indirect() {
            self.reset();
            return Verdict::Clean;
        }
        self.consecutive += 1;
        self.lengths.push_back(ev.instr_count);
        self.window_sum += ev.instr_count;
        if self.lengths.len() as u64 > cfg.window {
            let evicted = self.lengths.pop_front().expect("non-empty window");
            self.window_sum -= evicted;
        }

        let c = self.consecutive;
        let count = self.lengths.len() as u64;
        // The guard against small-sample false alarms: averages exist only
        // once the run has produced `warmup` samples.
        let avg_evaluated = c >= cfg.warmup;
        let avg_le = |thr: &Ratio| avg_evaluated && thr.ge_mean(self.window_sum, count);

        let rule = if c > cfg.hard_cap {
            Some(AntiCraRule::HardCap)
        } else if cfg.warmup <= c && c <= cfg.band1_max_count && avg_le(&cfg.band1_max_avg) {
            Some(AntiCraRule::Band1)
        } else if cfg.band1_max_count < c && c <= cfg.band2_max_count && avg_le(&cfg.band2_max_avg)
        {
            Some(AntiCraRule::Band2)
        } else {
            None
        };
        match rule {
            Some(rule) => Verdict::Alarm {
                rule,
                evidence: AntiCraEvidence {
                    consecutive: c,
                    window_avg: if avg_evaluated {
                        self.window_avg()
                    } else {
                        None
                    },
                },
            },
            None => Verdict::Clean,
        }
    }
}

/// Per-trace summary: the longest indirect-branch run and the lowest window
/// average that was ever evaluated (none if no run reached warmup).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunFeatures {
    pub max_consecutive: u64,
    pub lowest_window_avg: Option<Ratio>,
}

impl Default for RunFeatures {
    fn default() -> RunFeatures {
        RunFeatures::empty()
    }
}

impl RunFeatures {
    pub fn empty() -> RunFeatures {
        RunFeatures {
            max_consecutive: 0,
            lowest_window_avg: None,
        }
    }

    pub fn merge(self, other: RunFeatures) -> RunFeatures {
        RunFeatures {
            max_consecutive: self.max_consecutive.max(other.max_consecutive),
            lowest_window_avg: match (self.lowest_window_avg, other.lowest_window_avg) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            },
        }
    }
}

/// Incremental feature extraction; drives a [`RunState`] and keeps the
/// extrema.
#[derive(Debug, Default)]
pub struct FeatureBuilder {
    state: RunState,
    features: RunFeatures,
}

impl FeatureBuilder {
    pub fn new() -> FeatureBuilder {
        FeatureBuilder::default()
    }

    pub fn push(&mut self, cfg: &AntiCraConfig, ev: &TraceEvent) {
        let block = match ev.as_block() {
            Some(b) => b,
            None => return,
        };
        if !block.terminator.is_indirect() {
            self.state.reset();
            return;
        }
        self.state.observe_block(cfg, block);
        self.features.max_consecutive = self.features.max_consecutive.max(self.state.consecutive());
        if self.state.consecutive() >= cfg.warmup {
            let avg = self
                .state
                .window_avg()
                .expect("window non-empty past warmup");
            self.features.lowest_window_avg = Some(match self.features.lowest_window_avg {
                Some(cur) => cur.min(avg),
                None => avg,
            });
        }
    }

    pub fn finish(self) -> RunFeatures {
        self.features
    }
}

/// Extracts the feature pair used for evaluation and learning. Non-block
/// events leave the run state untouched.
pub fn extract_features<'a, I>(events: I, cfg: &AntiCraConfig) -> RunFeatures
where
    I: IntoIterator<Item = &'a TraceEvent>,
{
    let mut builder = FeatureBuilder::new();
    for ev in events {
        builder.push(cfg, ev);
    }
    builder.finish()
}

/// Streaming variant over a fallible event source (a trace decoder).
pub fn try_extract_features<I, E>(events: I, cfg: &AntiCraConfig) -> Result<RunFeatures, E>
where
    I: IntoIterator<Item = Result<TraceEvent, E>>,
{
    let mut builder = FeatureBuilder::new();
    for ev in events {
        builder.push(cfg, &ev?);
    }
    Ok(builder.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Malicious,
    Benign,
}

impl Class {
    pub fn as_str(self) -> &'static str {
        match self {
            Class::Malicious => "Malicious",
            Class::Benign => "Benign",
        }
    }
}

/// Applies the rule table to a summary pair, for corpora where only
/// `(count, lowest average)` survives rather than a full trace.
pub fn classify_feature_point(count: u64, avg: Option<Ratio>, cfg: &AntiCraConfig) -> Class {
    let avg_le = |thr: &Ratio| avg.is_some_and(|a| a <= *thr);
    let malicious = count > cfg.hard_cap
        || (cfg.warmup <= count && count <= cfg.band1_max_count && avg_le(&cfg.band1_max_avg))
        || (cfg.band1_max_count < count
            && count <= cfg.band2_max_count
            && avg_le(&cfg.band2_max_avg));
    if malicious {
        Class::Malicious
    } else {
        Class::Benign
    }
}

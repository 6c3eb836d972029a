//! Single-pass trace analysis feeding both detectors, plus the JSON report.
//!
//! The trace is consumed exactly once no matter which detectors are enabled.
//! An alarm does not stop the pass by default, so a trace's full alarm set is
//! reportable; fail-fast mode stops at the first alarm (the behaviour a
//! protective deployment would use).

use serde::Serialize;
use thiserror::Error;

use crate::anticra::{AntiCraEvidence, AntiCraRule, RunState, Verdict};
use crate::config::DetectorConfig;
use crate::depplus::{DepError, DepMode, DepVerdict, ImageMap};
use crate::trace::{TraceError, TraceEvent};

pub const REPORT_SCHEMA: &str = "ropocop-report";
pub const REPORT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    AntiCra,
    DepPlus,
}

impl Detector {
    pub fn as_str(self) -> &'static str {
        match self {
            Detector::AntiCra => "anticra",
            Detector::DepPlus => "depplus",
        }
    }
}

/// One detector hit, tied to the index of the event that caused it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Alarm {
    AntiCra {
        event_index: u64,
        rule: AntiCraRule,
        evidence: AntiCraEvidence,
    },
    DepPlus {
        event_index: u64,
        verdict: DepVerdict,
    },
}

impl Alarm {
    pub fn detector(&self) -> Detector {
        match self {
            Alarm::AntiCra { .. } => Detector::AntiCra,
            Alarm::DepPlus { .. } => Detector::DepPlus,
        }
    }

    pub fn event_index(&self) -> u64 {
        match self {
            Alarm::AntiCra { event_index, .. } | Alarm::DepPlus { event_index, .. } => *event_index,
        }
    }

    pub fn rule_name(&self) -> &'static str {
        match self {
            Alarm::AntiCra { rule, .. } => rule.as_str(),
            Alarm::DepPlus { .. } => "NonImageTarget",
        }
    }
}

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("event {event_index}: {source}")]
    Map { event_index: u64, source: DepError },
}

/// Which detectors run and how.
#[derive(Debug, Clone, Copy)]
pub struct AnalyzeOptions {
    pub anticra: bool,
    pub depplus: bool,
    pub depplus_mode: DepMode,
    pub fail_fast: bool,
}

impl AnalyzeOptions {
    pub fn from_config(cfg: &DetectorConfig) -> AnalyzeOptions {
        AnalyzeOptions {
            anticra: true,
            depplus: true,
            depplus_mode: cfg.depplus.mode,
            fail_fast: false,
        }
    }
}

/// Incremental analyzer: feed events in trace order, collect alarms.
pub struct Analyzer {
    cfg: DetectorConfig,
    opts: AnalyzeOptions,
    run_state: Option<RunState>,
    image_map: Option<ImageMap>,
    next_index: u64,
    events: u64,
    blocks: u64,
}

impl Analyzer {
    pub fn new(cfg: &DetectorConfig, opts: AnalyzeOptions) -> Analyzer {
        Analyzer {
            run_state: opts.anticra.then(RunState::new),
            image_map: opts.depplus.then(|| ImageMap::new(&cfg.depplus)),
            cfg: cfg.clone(),
            opts,
            next_index: 0,
            events: 0,
            blocks: 0,
        }
    }

    pub fn events_seen(&self) -> u64 {
        self.events
    }

    pub fn blocks_seen(&self) -> u64 {
        self.blocks
    }

    /// Buffered entries across detector states; bounded by
    /// `window + loaded images`, independent of trace length.
    pub fn state_cells(&self) -> usize {
        let anticra = self
            .run_state
            .as_ref()
            .map_or(0, RunState::buffered_lengths);
        let depplus = self.image_map.as_ref().map_or(0, |m| m.regions().len());
        anticra + depplus
    }

    /// Feeds the next event; returns the alarms it raised (at most one per
    /// detector).
    pub fn observe(&mut self, ev: &TraceEvent) -> Result<Vec<Alarm>, AnalyzeError> {
        let event_index = self.next_index;
        self.next_index += 1;
        self.events += 1;
        let mut alarms = Vec::new();

        if let Some(state) = self.run_state.as_mut() {
            if let Some(block) = ev.as_block() {
                if let Verdict::Alarm { rule, evidence } =
                    state.observe_block(&self.cfg.anticra, block)
                {
                    alarms.push(Alarm::AntiCra {
                        event_index,
                        rule,
                        evidence,
                    });
                }
            }
        }

        if let Some(map) = self.image_map.as_mut() {
            let map_err = |source| AnalyzeError::Map {
                event_index,
                source,
            };
            match ev {
                TraceEvent::ImageLoad { name, start, end } => {
                    map.image_load(name, *start, *end).map_err(map_err)?;
                }
                TraceEvent::ImageUnload { start, .. } => {
                    map.image_unload(*start).map_err(map_err)?;
                }
                TraceEvent::AllocCall | TraceEvent::UsageReport { .. } => {
                    map.on_alloc_event(ev);
                }
                TraceEvent::Block(block) if block.terminator.is_indirect() => {
                    let verdict = map.check_target(block.target, self.opts.depplus_mode);
                    if verdict.is_alarm() {
                        alarms.push(Alarm::DepPlus {
                            event_index,
                            verdict,
                        });
                    }
                }
                TraceEvent::Block(_) => {}
            }
        }

        if ev.as_block().is_some() {
            self.blocks += 1;
        }
        Ok(alarms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisOutcome {
    pub alarms: Vec<Alarm>,
    pub events: u64,
    pub blocks: u64,
    /// True when fail-fast stopped the pass before end of trace.
    pub truncated: bool,
}

impl AnalysisOutcome {
    pub fn first_alarm_index(&self) -> Option<u64> {
        self.alarms.first().map(Alarm::event_index)
    }

    pub fn alarm_count_for(&self, detector: Detector) -> usize {
        self.alarms
            .iter()
            .filter(|a| a.detector() == detector)
            .count()
    }
}

/// Runs the configured detectors over a fallible event stream in one pass.
pub fn analyze_events<I>(
    events: I,
    cfg: &DetectorConfig,
    opts: AnalyzeOptions,
) -> Result<AnalysisOutcome, AnalyzeError>
where
    I: IntoIterator<Item = Result<TraceEvent, TraceError>>,
{
    let mut analyzer = Analyzer::new(cfg, opts);
    let mut alarms = Vec::new();
    let mut truncated = false;
    for ev in events {
        let ev = ev?;
        alarms.extend(analyzer.observe(&ev)?);
        if opts.fail_fast && !alarms.is_empty() {
            truncated = true;
            break;
        }
    }
    Ok(AnalysisOutcome {
        alarms,
        events: analyzer.events_seen(),
        blocks: analyzer.blocks_seen(),
        truncated,
    })
}

// --- JSON report -----------------------------------------------------------

#[derive(Debug, Serialize)]
struct AlarmDto {
    detector: &'static str,
    event_index: u64,
    rule: &'static str,
    evidence: EvidenceDto,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum EvidenceDto {
    AntiCra {
        consecutive: u64,
        window_avg: Option<String>,
    },
    DepPlus {
        target: String,
        mode: &'static str,
        scanned_regions: usize,
    },
}

#[derive(Debug, Serialize)]
struct SummaryDto {
    alarms: usize,
    first_alarm_index: Option<u64>,
    anticra_alarms: usize,
    depplus_alarms: usize,
    truncated: bool,
}

/// The machine-readable analysis report written by the CLI.
#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    schema: &'static str,
    version: u64,
    trace: String,
    detectors: Vec<&'static str>,
    depplus_mode: &'static str,
    events: u64,
    blocks: u64,
    alarms: Vec<AlarmDto>,
    summary: SummaryDto,
}

impl AnalysisReport {
    pub fn new(trace: &str, opts: &AnalyzeOptions, outcome: &AnalysisOutcome) -> AnalysisReport {
        let mut detectors = Vec::new();
        if opts.anticra {
            detectors.push(Detector::AntiCra.as_str());
        }
        if opts.depplus {
            detectors.push(Detector::DepPlus.as_str());
        }
        let alarms: Vec<AlarmDto> = outcome
            .alarms
            .iter()
            .map(|a| AlarmDto {
                detector: a.detector().as_str(),
                event_index: a.event_index(),
                rule: a.rule_name(),
                evidence: match a {
                    Alarm::AntiCra { evidence, .. } => EvidenceDto::AntiCra {
                        consecutive: evidence.consecutive,
                        window_avg: evidence.window_avg.map(|r| r.to_display_string()),
                    },
                    Alarm::DepPlus { verdict, .. } => EvidenceDto::DepPlus {
                        target: verdict.target.to_string(),
                        mode: verdict.mode.as_str(),
                        scanned_regions: verdict.scanned_regions,
                    },
                },
            })
            .collect();
        AnalysisReport {
            schema: REPORT_SCHEMA,
            version: REPORT_VERSION,
            trace: trace.to_string(),
            detectors,
            depplus_mode: opts.depplus_mode.as_str(),
            events: outcome.events,
            blocks: outcome.blocks,
            summary: SummaryDto {
                alarms: alarms.len(),
                first_alarm_index: outcome.first_alarm_index(),
                anticra_alarms: outcome.alarm_count_for(Detector::AntiCra),
                depplus_alarms: outcome.alarm_count_for(Detector::DepPlus),
                truncated: outcome.truncated,
            },
            alarms,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, GenKind, GenSpec, TwoStagedParams};

    fn analyze_kind(kind: GenKind, opts: AnalyzeOptions) -> AnalysisOutcome {
        let events = synth::generate(&GenSpec { seed: 11, kind }).unwrap();
        analyze_events(events.into_iter().map(Ok), &DetectorConfig::default(), opts).unwrap()
    }

    fn both() -> AnalyzeOptions {
        AnalyzeOptions::from_config(&DetectorConfig::default())
    }

    #[test]
    fn two_staged_split_verdict() {
        let outcome = analyze_kind(GenKind::TwoStaged(TwoStagedParams::default()), both());
        assert_eq!(outcome.alarm_count_for(Detector::AntiCra), 0);
        assert_eq!(outcome.alarm_count_for(Detector::DepPlus), 1);
    }

    #[test]
    fn fail_fast_truncates_at_first_alarm() {
        let kind = GenKind::PureRop(synth::ChainParams::default());
        let mut opts = both();
        opts.fail_fast = true;
        let outcome = analyze_kind(kind.clone(), opts);
        assert!(outcome.truncated);
        assert_eq!(outcome.alarms.len(), 1);
        let full = analyze_kind(kind, both());
        assert!(!full.truncated);
        assert!(full.alarms.len() > 1);
        assert_eq!(outcome.first_alarm_index(), full.first_alarm_index());
    }

    #[test]
    fn disabled_detector_raises_nothing() {
        let kind = GenKind::TwoStaged(TwoStagedParams::default());
        let mut opts = both();
        opts.depplus = false;
        let outcome = analyze_kind(kind.clone(), opts);
        assert!(outcome.alarms.is_empty());
        let mut opts = both();
        opts.anticra = false;
        let outcome = analyze_kind(kind, opts);
        assert_eq!(outcome.alarms.len(), 1);
    }

    #[test]
    fn overlapping_image_surfaces_as_input_error() {
        use crate::trace::{Address, TraceEvent};
        let events = vec![
            Ok(TraceEvent::ImageLoad {
                name: "a".into(),
                start: Address(0x60000000),
                end: Address(0x60100000),
            }),
            Ok(TraceEvent::ImageLoad {
                name: "b".into(),
                start: Address(0x60080000),
                end: Address(0x60200000),
            }),
        ];
        let err = analyze_events(events, &DetectorConfig::default(), both()).unwrap_err();
        match err {
            AnalyzeError::Map { event_index, .. } => assert_eq!(event_index, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn report_serializes_with_fixed_schema() {
        let outcome = analyze_kind(GenKind::TwoStaged(TwoStagedParams::default()), both());
        let report = AnalysisReport::new("t.rtrc", &both(), &outcome);
        let json = report.to_json_pretty();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["schema"], "ropocop-report");
        assert_eq!(v["version"], 1);
        assert_eq!(v["summary"]["depplus_alarms"], 1);
        assert_eq!(v["alarms"][0]["rule"], "NonImageTarget");
        assert!(v["alarms"][0]["evidence"]["target"].is_string());
    }
}

//! Ahead-of-time threshold learning from benign traces.
//!
//! Observing a program's own runs yields its extrema (longest indirect-branch
//! run, lowest evaluated window average); recommendations back off from those
//! extrema by configurable margins so a profile never alarms on its own
//! training data. The band-2 and hard-cap bounds keep the same gaps the
//! default configuration uses (15 branches, 1.75 instructions).

use thiserror::Error;

use crate::anticra::{AntiCraConfig, RunFeatures};
use crate::ratio::Ratio;

/// Gap between band 1 and band 2 / hard cap, mirroring the 35 → 50 defaults.
const BAND_COUNT_GAP: u64 = 15;

fn band_avg_gap() -> Ratio {
    // 2.25 → 4 in the defaults.
    Ratio::new(7, 4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Margins {
    /// Added to the observed maximum run length.
    pub count_margin: u64,
    /// Subtracted from the observed minimum window average; must be positive
    /// so replaying the training data can never reach the threshold.
    pub avg_margin: Ratio,
}

impl Default for Margins {
    fn default() -> Margins {
        Margins {
            count_margin: 3,
            avg_margin: Ratio::new(1, 4),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LearnError {
    #[error("no training traces supplied")]
    EmptyCorpus,
    #[error("avg_margin must be positive")]
    ZeroAvgMargin,
    #[error("cannot merge profiles for different programs (`{0}` vs `{1}`)")]
    ProgramMismatch(String, String),
    #[error("cannot merge profiles learned with different margins")]
    MarginMismatch,
}

/// Learning-mode output: observed extrema plus the derived recommendation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramProfile {
    pub program: String,
    pub traces_seen: u64,
    pub observed_max_consecutive: u64,
    pub observed_min_window_avg: Option<Ratio>,
    pub margins: Margins,
    pub recommended: AntiCraConfig,
}

fn recommend(observed: &RunFeatures, margins: &Margins) -> AntiCraConfig {
    let defaults = AntiCraConfig::default();
    let band1_max_count = observed.max_consecutive + margins.count_margin;
    let band1_max_avg = match observed.lowest_window_avg {
        Some(avg) => avg.saturating_sub(margins.avg_margin),
        None => defaults.band1_max_avg,
    };
    let band2_max_avg = band1_max_avg
        .checked_add(band_avg_gap())
        .expect("threshold within range");
    AntiCraConfig {
        window: defaults.window,
        warmup: defaults.warmup,
        band1_max_count,
        band1_max_avg,
        band2_max_count: band1_max_count + BAND_COUNT_GAP,
        band2_max_avg,
        hard_cap: band1_max_count + BAND_COUNT_GAP,
    }
}

/// Folds per-trace features into a profile for `program`.
pub fn build_profile(
    program: &str,
    trace_features: &[RunFeatures],
    margins: Margins,
) -> Result<ProgramProfile, LearnError> {
    if trace_features.is_empty() {
        return Err(LearnError::EmptyCorpus);
    }
    if margins.avg_margin == Ratio::ZERO {
        return Err(LearnError::ZeroAvgMargin);
    }
    let observed = trace_features
        .iter()
        .fold(RunFeatures::empty(), |acc, f| acc.merge(*f));
    Ok(ProgramProfile {
        program: program.to_string(),
        traces_seen: trace_features.len() as u64,
        observed_max_consecutive: observed.max_consecutive,
        observed_min_window_avg: observed.lowest_window_avg,
        margins,
        recommended: recommend(&observed, &margins),
    })
}

/// Combines two profiles of the same program: extrema are element-wise
/// max/min and the recommendation is recomputed with the shared margins.
/// `traces_seen` joins as a maximum so the merge is idempotent.
pub fn merge_profiles(
    a: &ProgramProfile,
    b: &ProgramProfile,
) -> Result<ProgramProfile, LearnError> {
    if a.program != b.program {
        return Err(LearnError::ProgramMismatch(
            a.program.clone(),
            b.program.clone(),
        ));
    }
    if a.margins != b.margins {
        return Err(LearnError::MarginMismatch);
    }
    let observed = RunFeatures {
        max_consecutive: a.observed_max_consecutive,
        lowest_window_avg: a.observed_min_window_avg,
    }
    .merge(RunFeatures {
        max_consecutive: b.observed_max_consecutive,
        lowest_window_avg: b.observed_min_window_avg,
    });
    Ok(ProgramProfile {
        program: a.program.clone(),
        traces_seen: a.traces_seen.max(b.traces_seen),
        observed_max_consecutive: observed.max_consecutive,
        observed_min_window_avg: observed.lowest_window_avg,
        margins: a.margins,
        recommended: recommend(&observed, &a.margins),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(max: u64, avg: Option<Ratio>) -> RunFeatures {
        RunFeatures {
            max_consecutive: max,
            lowest_window_avg: avg,
        }
    }

    #[test]
    fn word_like_extrema_produce_documented_thresholds() {
        let p = build_profile(
            "word",
            &[features(47, Some(Ratio::new(207, 50)))], // 4.14
            Margins::default(),
        )
        .unwrap();
        assert_eq!(p.recommended.band1_max_count, 50);
        assert_eq!(p.recommended.hard_cap, 65);
        assert_eq!(p.recommended.band2_max_count, 65);
        assert_eq!(p.recommended.band1_max_avg, Ratio::new(389, 100)); // 3.89
        p.recommended.validate().unwrap();
    }

    #[test]
    fn absent_average_falls_back_to_default_band1_avg() {
        let p = build_profile("tiny", &[features(8, None)], Margins::default()).unwrap();
        assert_eq!(p.observed_min_window_avg, None);
        assert_eq!(p.recommended.band1_max_avg, Ratio::new(9, 4));
        assert_eq!(p.recommended.band1_max_count, 11);
        p.recommended.validate().unwrap();
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert_eq!(
            build_profile("x", &[], Margins::default()),
            Err(LearnError::EmptyCorpus)
        );
    }

    #[test]
    fn zero_avg_margin_is_rejected() {
        let margins = Margins {
            count_margin: 3,
            avg_margin: Ratio::ZERO,
        };
        assert_eq!(
            build_profile("x", &[features(5, None)], margins),
            Err(LearnError::ZeroAvgMargin)
        );
    }

    #[test]
    fn merge_takes_the_max_run() {
        let a = build_profile(
            "p",
            &[features(20, Some(Ratio::new(3, 1)))],
            Margins::default(),
        )
        .unwrap();
        let b = build_profile(
            "p",
            &[features(47, Some(Ratio::new(5, 1)))],
            Margins::default(),
        )
        .unwrap();
        let m = merge_profiles(&a, &b).unwrap();
        assert_eq!(m.observed_max_consecutive, 47);
        assert_eq!(m.observed_min_window_avg, Some(Ratio::new(3, 1)));
    }

    #[test]
    fn merge_is_idempotent_and_commutative() {
        let a = build_profile(
            "p",
            &[features(20, Some(Ratio::new(3, 1)))],
            Margins::default(),
        )
        .unwrap();
        let b = build_profile("p", &[features(47, None)], Margins::default()).unwrap();
        assert_eq!(merge_profiles(&a, &a).unwrap(), a);
        assert_eq!(
            merge_profiles(&a, &b).unwrap(),
            merge_profiles(&b, &a).unwrap()
        );
    }

    #[test]
    fn merge_rejects_program_mismatch() {
        let a = build_profile("p", &[features(1, None)], Margins::default()).unwrap();
        let b = build_profile("q", &[features(1, None)], Margins::default()).unwrap();
        assert!(matches!(
            merge_profiles(&a, &b),
            Err(LearnError::ProgramMismatch(..))
        ));
    }
}

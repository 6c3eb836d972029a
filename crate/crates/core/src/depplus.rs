//! Non-executable-data enforcement over an image map.
//!
//! Every indirect branch target must land inside a loaded image; everything
//! else is treated as data. Two check modes exist: `FullScan` searches the
//! whole region set and is exact, `Watermark` keeps an estimate of the top of
//! the data space (latest probed usage × safety factor) and skips scanning
//! for targets above it. The watermark trades soundness for scan cost — it is
//! a fast path over the observation that stacks and heaps sit below most
//! images.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratio::Ratio;
use crate::trace::{Address, TraceEvent, ADDRESS_LIMIT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRegion {
    pub name: String,
    pub start: Address,
    /// Exclusive upper bound.
    pub end: Address,
}

impl ImageRegion {
    fn contains(&self, target: Address) -> bool {
        self.start <= target && target < self.end
    }

    fn overlaps(&self, start: Address, end: Address) -> bool {
        self.start.0 < end.0 && start.0 < self.end.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepMode {
    #[serde(rename = "full")]
    FullScan,
    Watermark,
}

impl DepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DepMode::FullScan => "full",
            DepMode::Watermark => "watermark",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepPlusConfig {
    pub mode: DepMode,
    /// Usage is probed every `probe_period`-th alloc/dealloc call.
    pub probe_period: u64,
    /// Watermark = probed usage × this factor.
    pub safety_factor: Ratio,
}

impl Default for DepPlusConfig {
    fn default() -> DepPlusConfig {
        DepPlusConfig {
            mode: DepMode::FullScan,
            probe_period: 10,
            safety_factor: Ratio::new(13, 10),
        }
    }
}

impl DepPlusConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.probe_period == 0 {
            return Err("depplus.probe_period must be positive".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepOutcome {
    Allowed,
    Alarm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepVerdict {
    pub outcome: DepOutcome,
    pub target: Address,
    pub mode: DepMode,
    /// Regions actually examined while deciding.
    pub scanned_regions: usize,
}

impl DepVerdict {
    pub fn is_alarm(&self) -> bool {
        self.outcome == DepOutcome::Alarm
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DepError {
    #[error("image `{new_name}` [{new_start}, {new_end}) overlaps loaded image `{old_name}` [{old_start}, {old_end})")]
    OverlappingImages {
        new_name: String,
        new_start: Address,
        new_end: Address,
        old_name: String,
        old_start: Address,
        old_end: Address,
    },
    #[error("unload of unknown image at {start}")]
    UnknownImage { start: Address },
}

/// Ordered set of loaded image ranges plus the data-space watermark.
#[derive(Debug, Clone)]
pub struct ImageMap {
    /// Sorted by start, pairwise disjoint.
    regions: Vec<ImageRegion>,
    watermark: Address,
    alloc_event_counter: u64,
    /// Set when a probe is due; the next usage report is then consumed.
    probe_armed: bool,
    probe_period: u64,
    safety_factor: Ratio,
}

impl ImageMap {
    pub fn new(cfg: &DepPlusConfig) -> ImageMap {
        ImageMap {
            regions: Vec::new(),
            watermark: Address(0),
            alloc_event_counter: 0,
            probe_armed: false,
            probe_period: cfg.probe_period,
            safety_factor: cfg.safety_factor,
        }
    }

    pub fn regions(&self) -> &[ImageRegion] {
        &self.regions
    }

    pub fn watermark(&self) -> Address {
        self.watermark
    }

    pub fn alloc_event_counter(&self) -> u64 {
        self.alloc_event_counter
    }

    pub fn image_load(&mut self, name: &str, start: Address, end: Address) -> Result<(), DepError> {
        debug_assert!(start < end);
        let idx = self.regions.partition_point(|r| r.start < start);
        // Only the neighbours can overlap a candidate in a sorted disjoint set.
        for neighbour in [idx.checked_sub(1), Some(idx)].into_iter().flatten() {
            if let Some(r) = self.regions.get(neighbour) {
                if r.overlaps(start, end) {
                    return Err(DepError::OverlappingImages {
                        new_name: name.to_string(),
                        new_start: start,
                        new_end: end,
                        old_name: r.name.clone(),
                        old_start: r.start,
                        old_end: r.end,
                    });
                }
            }
        }
        self.regions.insert(
            idx,
            ImageRegion {
                name: name.to_string(),
                start,
                end,
            },
        );
        Ok(())
    }

    pub fn image_unload(&mut self, start: Address) -> Result<(), DepError> {
        match self.regions.binary_search_by(|r| r.start.cmp(&start)) {
            Ok(idx) => {
                self.regions.remove(idx);
                Ok(())
            }
            Err(_) => Err(DepError::UnknownImage { start }),
        }
    }

    pub fn on_alloc_call(&mut self) {
        self.alloc_event_counter += 1;
        if self.alloc_event_counter.is_multiple_of(self.probe_period) {
            self.probe_armed = true;
        }
    }

    /// Consumes the report into the watermark only when a probe is due;
    /// off-cadence reports are ignored.
    pub fn on_usage_report(&mut self, top: Address) {
        if !self.probe_armed {
            return;
        }
        self.probe_armed = false;
        // Exact integer arithmetic, saturating at the top of the 32-bit space.
        let scaled = (top.0 as u128) * (self.safety_factor.numer() as u128)
            / (self.safety_factor.denom() as u128);
        self.watermark = Address(scaled.min((ADDRESS_LIMIT - 1) as u128) as u64);
    }

    /// Routes the memory-management events; all others are ignored.
    pub fn on_alloc_event(&mut self, ev: &TraceEvent) {
        match ev {
            TraceEvent::AllocCall => self.on_alloc_call(),
            TraceEvent::UsageReport { top } => self.on_usage_report(*top),
            _ => {}
        }
    }

    pub fn check_target(&self, target: Address, mode: DepMode) -> DepVerdict {
        let (outcome, scanned_regions) = match mode {
            DepMode::FullScan => self.check_full(target),
            DepMode::Watermark => self.check_watermark(target),
        };
        DepVerdict {
            outcome,
            target,
            mode,
            scanned_regions,
        }
    }

    fn check_full(&self, target: Address) -> (DepOutcome, usize) {
        let mut lo = 0usize;
        let mut hi = self.regions.len();
        let mut scanned = 0usize;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let r = &self.regions[mid];
            scanned += 1;
            if target < r.start {
                hi = mid;
            } else if target >= r.end {
                lo = mid + 1;
            } else {
                return (DepOutcome::Allowed, scanned);
            }
        }
        (DepOutcome::Alarm, scanned)
    }

    fn check_watermark(&self, target: Address) -> (DepOutcome, usize) {
        if target > self.watermark {
            return (DepOutcome::Allowed, 0);
        }
        let mut scanned = 0usize;
        for r in &self.regions {
            if r.start > self.watermark {
                break;
            }
            scanned += 1;
            if r.contains(target) {
                return (DepOutcome::Allowed, scanned);
            }
        }
        (DepOutcome::Alarm, scanned)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> ImageMap {
        ImageMap::new(&DepPlusConfig::default())
    }

    #[test]
    fn load_into_empty_map() {
        let mut m = map();
        m.image_load("kernel32", Address(0x76000000), Address(0x76100000))
            .unwrap();
        assert_eq!(m.regions().len(), 1);
    }

    #[test]
    fn loads_keep_sort_order() {
        let mut m = map();
        m.image_load("b", Address(0x76000000), Address(0x76100000))
            .unwrap();
        m.image_load("a", Address(0x60000000), Address(0x60100000))
            .unwrap();
        let starts: Vec<u64> = m.regions().iter().map(|r| r.start.0).collect();
        assert_eq!(starts, vec![0x60000000, 0x76000000]);
    }

    #[test]
    fn overlapping_load_names_both_regions() {
        let mut m = map();
        m.image_load("kernel32", Address(0x76000000), Address(0x76100000))
            .unwrap();
        let err = m
            .image_load("evil", Address(0x76080000), Address(0x76200000))
            .unwrap_err();
        let text = err.to_string();
        assert!(text.contains("evil") && text.contains("kernel32"), "{text}");
    }

    #[test]
    fn unload_the_only_region() {
        let mut m = map();
        m.image_load("a", Address(0x60000000), Address(0x60100000))
            .unwrap();
        m.image_unload(Address(0x60000000)).unwrap();
        assert!(m.regions().is_empty());
    }

    #[test]
    fn unload_with_wrong_start_errors() {
        let mut m = map();
        m.image_load("a", Address(0x60000000), Address(0x60100000))
            .unwrap();
        assert_eq!(
            m.image_unload(Address(0x60000001)),
            Err(DepError::UnknownImage {
                start: Address(0x60000001)
            })
        );
    }

    #[test]
    fn unload_removes_exactly_the_named_region() {
        let mut m = map();
        m.image_load("a", Address(0x60000000), Address(0x60100000))
            .unwrap();
        m.image_load("b", Address(0x76000000), Address(0x76100000))
            .unwrap();
        m.image_unload(Address(0x60000000)).unwrap();
        assert_eq!(m.regions().len(), 1);
        assert_eq!(m.regions()[0].name, "b");
    }

    #[test]
    fn probe_cadence_consumes_every_tenth() {
        let mut m = map();
        for _ in 0..9 {
            m.on_alloc_call();
        }
        // Off-cadence report: ignored.
        m.on_usage_report(Address(0x00500000));
        assert_eq!(m.watermark(), Address(0));
        m.on_alloc_call();
        assert_eq!(m.alloc_event_counter(), 10);
        m.on_usage_report(Address(0x00A00000));
        assert_eq!(m.watermark(), Address(0x00D00000)); // 0xa00000 × 13/10
                                                        // Armed flag is one-shot.
        m.on_usage_report(Address(0x00100000));
        assert_eq!(m.watermark(), Address(0x00D00000));
    }

    #[test]
    fn zero_report_gives_zero_watermark() {
        let mut m = map();
        for _ in 0..10 {
            m.on_alloc_call();
        }
        m.on_usage_report(Address(0));
        assert_eq!(m.watermark(), Address(0));
    }

    #[test]
    fn watermark_saturates_at_address_limit() {
        let mut m = map();
        for _ in 0..10 {
            m.on_alloc_call();
        }
        m.on_usage_report(Address(0xFFFF0000));
        assert_eq!(m.watermark(), Address(ADDRESS_LIMIT - 1));
    }

    #[test]
    fn full_scan_containment() {
        let mut m = map();
        m.image_load("kernel32", Address(0x76000000), Address(0x76100000))
            .unwrap();
        let v = m.check_target(Address(0x76000500), DepMode::FullScan);
        assert_eq!(v.outcome, DepOutcome::Allowed);
    }

    #[test]
    fn stack_target_alarms_in_full_scan() {
        let mut m = map();
        m.image_load("kernel32", Address(0x76000000), Address(0x76100000))
            .unwrap();
        let v = m.check_target(Address(0x0012FF00), DepMode::FullScan);
        assert_eq!(v.outcome, DepOutcome::Alarm);
    }

    #[test]
    fn watermark_fast_path_skips_scanning() {
        let mut m = map();
        m.image_load("kernel32", Address(0x76000000), Address(0x76100000))
            .unwrap();
        for _ in 0..10 {
            m.on_alloc_call();
        }
        m.on_usage_report(Address(0x00A00000)); // watermark 0xd00000
        let v = m.check_target(Address(0x76000500), DepMode::Watermark);
        assert_eq!(v.outcome, DepOutcome::Allowed);
        assert_eq!(v.scanned_regions, 0);
        let full = m.check_target(Address(0x76000500), DepMode::FullScan);
        assert_eq!(v.outcome, full.outcome);
    }

    #[test]
    fn watermark_checks_low_targets_against_low_regions() {
        let mut m = map();
        m.image_load("low", Address(0x00400000), Address(0x00500000))
            .unwrap();
        m.image_load("high", Address(0x76000000), Address(0x76100000))
            .unwrap();
        for _ in 0..10 {
            m.on_alloc_call();
        }
        m.on_usage_report(Address(0x00A00000)); // watermark 0xd00000
                                                // Inside the low image: allowed after scanning only low regions.
        let v = m.check_target(Address(0x00400010), DepMode::Watermark);
        assert_eq!(v.outcome, DepOutcome::Allowed);
        assert_eq!(v.scanned_regions, 1);
        // Below the watermark but in no image: alarm.
        let v = m.check_target(Address(0x0012FF00), DepMode::Watermark);
        assert_eq!(v.outcome, DepOutcome::Alarm);
        assert!(v.scanned_regions <= 1);
    }
}

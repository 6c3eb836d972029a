//! Shared test support: independent oracles and randomized inputs.
//!
//! The oracles here deliberately re-derive results from first principles
//! (big rationals, linear scans, full recomputation per block) so they share
//! no code path with the streaming implementations they check.

use num::rational::BigRational;
use num::BigInt;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ropocop::anticra::AntiCraConfig;
use ropocop::ratio::Ratio;
use ropocop::trace::{Address, BlockExec, TerminatorKind, TraceEvent};

pub fn big(n: u64, d: u64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn big_ratio(r: Ratio) -> BigRational {
    big(r.numer(), r.denom())
}

/// Naive re-evaluation of the alarm rules over a full event list, one block
/// at a time, recomputing every window sum from scratch and comparing exact
/// big rationals. Returns the 0-based event index of the first alarm.
pub fn naive_first_alarm(events: &[TraceEvent], cfg: &AntiCraConfig) -> Option<usize> {
    let mut run: Vec<u64> = Vec::new();
    for (index, ev) in events.iter().enumerate() {
        let block = match ev {
            TraceEvent::Block(b) => b,
            _ => continue,
        };
        if !block.terminator.is_indirect() {
            run.clear();
            continue;
        }
        run.push(block.instr_count);
        let c = run.len() as u64;
        let window: Vec<u64> = run
            .iter()
            .rev()
            .take(cfg.window as usize)
            .copied()
            .collect();
        let avg = if c >= cfg.warmup {
            let sum: u64 = window.iter().sum();
            Some(big(sum, window.len() as u64))
        } else {
            None
        };
        let le = |thr: Ratio| avg.as_ref().is_some_and(|a| *a <= big_ratio(thr));
        let alarm = c > cfg.hard_cap
            || (cfg.warmup <= c && c <= cfg.band1_max_count && le(cfg.band1_max_avg))
            || (cfg.band1_max_count < c && c <= cfg.band2_max_count && le(cfg.band2_max_avg));
        if alarm {
            return Some(index);
        }
    }
    None
}

/// Brute-force feature extraction: longest indirect run and the minimum over
/// all evaluated window averages, recomputed per block in O(n · window).
pub fn naive_features(events: &[TraceEvent], cfg: &AntiCraConfig) -> (u64, Option<BigRational>) {
    let mut run: Vec<u64> = Vec::new();
    let mut max_run = 0u64;
    let mut min_avg: Option<BigRational> = None;
    for ev in events {
        let block = match ev {
            TraceEvent::Block(b) => b,
            _ => continue,
        };
        if !block.terminator.is_indirect() {
            run.clear();
            continue;
        }
        run.push(block.instr_count);
        max_run = max_run.max(run.len() as u64);
        if run.len() as u64 >= cfg.warmup {
            let window: Vec<u64> = run
                .iter()
                .rev()
                .take(cfg.window as usize)
                .copied()
                .collect();
            let sum: u64 = window.iter().sum();
            let avg = big(sum, window.len() as u64);
            min_avg = Some(match min_avg.take() {
                Some(cur) if cur <= avg => cur,
                _ => avg,
            });
        }
    }
    (max_run, min_avg)
}

pub const TERMINATORS: [TerminatorKind; 6] = [
    TerminatorKind::Return,
    TerminatorKind::IndirectCall,
    TerminatorKind::IndirectJump,
    TerminatorKind::DirectBranch,
    TerminatorKind::DirectCall,
    TerminatorKind::FallThrough,
];

/// Arbitrary valid event sequence, exercising every event kind, odd strings,
/// and boundary addresses.
pub fn random_events(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<TraceEvent> {
    let len = rng.gen_range(0..=max_len);
    let mut events = Vec::with_capacity(len);
    let mut loaded: Vec<(String, u64)> = Vec::new();
    for _ in 0..len {
        match rng.gen_range(0..10) {
            0 => {
                // Disjoint by construction: images live on a fixed grid.
                let slot = rng.gen_range(0..64u64);
                let start = 0x4000_0000 + slot * 0x0200_0000;
                if loaded.iter().all(|(_, s)| *s != start) {
                    let name = match rng.gen_range(0..4) {
                        0 => format!("img{slot}"),
                        1 => format!("sp ace{slot}"),
                        2 => format!("q\"uote{slot}"),
                        _ => String::new(),
                    };
                    events.push(TraceEvent::ImageLoad {
                        name: name.clone(),
                        start: Address(start),
                        end: Address(start + rng.gen_range(1..=0x0100_0000)),
                    });
                    loaded.push((name, start));
                }
            }
            1 if !loaded.is_empty() => {
                let i = rng.gen_range(0..loaded.len());
                let (name, start) = loaded.remove(i);
                events.push(TraceEvent::ImageUnload {
                    name,
                    start: Address(start),
                });
            }
            2 => events.push(TraceEvent::AllocCall),
            3 => events.push(TraceEvent::UsageReport {
                top: Address(rng.gen_range(0..=0xFFFF_FFFF)),
            }),
            _ => {
                events.push(TraceEvent::Block(BlockExec {
                    start: Address(rng.gen_range(0..=0xFFFF_FFFF)),
                    instr_count: rng.gen_range(1..=40),
                    terminator: TERMINATORS[rng.gen_range(0..TERMINATORS.len())],
                    target: Address(rng.gen_range(0..=0xFFFF_FFFF)),
                }));
            }
        }
    }
    events
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

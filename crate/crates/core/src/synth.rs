//! Seeded trace synthesis for detector evaluation.
//!
//! Generates benign workloads and the attack shapes the detectors are meant
//! to catch: pure return/jump-oriented chains, two-staged payloads that
//! re-enable injected code, plain code injection, and the long-NOP-gadget
//! evasion variant. Generation is a pure function of the [`GenSpec`] —
//! identical spec, identical trace bytes.
//!
//! Default address layout mirrors a 32-bit Windows process: images at
//! `0x60000000` and above, the stack near `0x0012f000`, the heap growing up
//! from `0x00100000`. All constants are overridable through the params.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::anticra::Class;
use crate::ratio::Ratio;
use crate::trace::{Address, BlockExec, TerminatorKind, TraceEvent};

pub const DEFAULT_IMAGE_BASE: u64 = 0x6000_0000;
pub const DEFAULT_STACK_ADDR: u64 = 0x0012_F000;
pub const DEFAULT_HEAP_BASE: u64 = 0x0010_0000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenError {
    #[error("contradictory generator targets: {0}")]
    ContradictoryTargets(String),
    #[error("invalid generator params: {0}")]
    InvalidParams(String),
}

/// Where images get mapped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageLayout {
    pub base: u64,
    pub image_size: u64,
    pub image_count: u32,
    pub gap: u64,
}

impl Default for ImageLayout {
    fn default() -> ImageLayout {
        ImageLayout {
            base: DEFAULT_IMAGE_BASE,
            image_size: 0x0010_0000,
            image_count: 4,
            gap: 0x0010_0000,
        }
    }
}

impl ImageLayout {
    fn validate(&self) -> Result<(), GenError> {
        if self.image_count == 0 {
            return Err(GenError::InvalidParams("image_count must be ≥ 1".into()));
        }
        if self.image_size == 0 {
            return Err(GenError::InvalidParams("image_size must be ≥ 1".into()));
        }
        let top = self
            .image_size
            .checked_add(self.gap)
            .and_then(|slot| slot.checked_mul(self.image_count as u64))
            .and_then(|span| self.base.checked_add(span));
        if top.is_none_or(|top| top > crate::trace::ADDRESS_LIMIT) {
            return Err(GenError::InvalidParams(
                "image layout exceeds the 32-bit address space".into(),
            ));
        }
        Ok(())
    }
}

/// Basic-block length distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LenDist {
    Constant(u64),
    Uniform {
        min: u64,
        max: u64,
    },
    /// Deterministic cycle, indexed by position in the run.
    Cycle(Vec<u64>),
}

impl LenDist {
    fn validate(&self) -> Result<(), GenError> {
        let bad = |msg: &str| Err(GenError::InvalidParams(msg.into()));
        match self {
            LenDist::Constant(0) => bad("block length must be ≥ 1"),
            LenDist::Uniform { min, max } => {
                if *min == 0 {
                    bad("block length must be ≥ 1")
                } else if min > max {
                    bad("uniform length distribution has min > max")
                } else {
                    Ok(())
                }
            }
            LenDist::Cycle(c) if c.is_empty() => bad("length cycle must not be empty"),
            LenDist::Cycle(c) if c.contains(&0) => bad("block length must be ≥ 1"),
            _ => Ok(()),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, position: usize) -> u64 {
        match self {
            LenDist::Constant(n) => *n,
            LenDist::Uniform { min, max } => rng.gen_range(*min..=*max),
            LenDist::Cycle(c) => c[position % c.len()],
        }
    }
}

/// Builds a period-`window` length cycle whose every full window averages
/// exactly `avg`. Returns `None` when `avg × window` is not an integer or is
/// below `window` (blocks cannot be shorter than one instruction).
pub fn cycle_for_window_avg(avg: Ratio, window: u64) -> Option<Vec<u64>> {
    let total = (avg.numer() as u128) * (window as u128);
    if !total.is_multiple_of(avg.denom() as u128) {
        return None;
    }
    let sum = (total / (avg.denom() as u128)) as u64;
    if sum < window {
        return None;
    }
    let base = sum / window;
    let remainder = (sum % window) as usize;
    let mut cycle = vec![base; window as usize];
    for slot in cycle.iter_mut().rev().take(remainder) {
        *slot += 1;
    }
    Some(cycle)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenignParams {
    /// Total basic blocks to emit.
    pub blocks: u64,
    /// Longest indirect-branch run the trace may contain; the generator
    /// always realizes one run of exactly this length.
    pub max_run: u64,
    /// Lower bound every windowed average must respect, when set.
    pub min_avg: Option<Ratio>,
    pub block_len: LenDist,
    pub layout: ImageLayout,
    /// Emit an alloc/usage pair every this many blocks.
    pub alloc_period: u64,
}

impl Default for BenignParams {
    fn default() -> BenignParams {
        BenignParams {
            blocks: 400,
            max_run: 8,
            min_avg: None,
            block_len: LenDist::Uniform { min: 2, max: 12 },
            layout: ImageLayout::default(),
            alloc_period: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainParams {
    pub gadget_count: u64,
    pub gadget_len: LenDist,
    pub layout: ImageLayout,
}

impl Default for ChainParams {
    fn default() -> ChainParams {
        // The canonical repeated-return payload.
        ChainParams {
            gadget_count: 9344,
            gadget_len: LenDist::Constant(1),
            layout: ImageLayout::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoStagedParams {
    /// Gadgets that prepare the protection-disabling call.
    pub prelude_gadgets: u64,
    pub gadget_len: LenDist,
    /// Blocks executed from the injected payload after the stage switch.
    pub shellcode_blocks: u64,
    /// When set, the payload lands in memory allocated after the last
    /// consumed usage probe (a > 30% allocation jump), i.e. above the stale
    /// watermark. The full scan still alarms; the watermark fast path does
    /// not.
    pub alloc_jump: bool,
    pub layout: ImageLayout,
}

impl Default for TwoStagedParams {
    fn default() -> TwoStagedParams {
        TwoStagedParams {
            prelude_gadgets: 13,
            // Period-10 cycle summing to 22: every full window averages 2.2.
            gadget_len: LenDist::Cycle(vec![2, 2, 3, 2, 2, 2, 2, 2, 2, 3]),
            shellcode_blocks: 4,
            alloc_jump: false,
            layout: ImageLayout::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeInjectionParams {
    /// Address of the overflowed stack buffer the return lands in.
    pub buffer_addr: u64,
    pub shellcode_blocks: u64,
    pub layout: ImageLayout,
}

impl Default for CodeInjectionParams {
    fn default() -> CodeInjectionParams {
        CodeInjectionParams {
            buffer_addr: 0x0012_FF00,
            shellcode_blocks: 3,
            layout: ImageLayout::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NopEvasionParams {
    /// Useful (short) gadgets in the chain.
    pub gadget_count: u64,
    pub gadget_len: LenDist,
    /// A long padding gadget is inserted after every `pad_every` short ones.
    pub pad_every: u64,
    pub padding_gadget_len: u64,
    pub layout: ImageLayout,
}

impl Default for NopEvasionParams {
    fn default() -> NopEvasionParams {
        NopEvasionParams {
            gadget_count: 30,
            gadget_len: LenDist::Constant(1),
            pad_every: 2,
            padding_gadget_len: 30,
            layout: ImageLayout::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenKind {
    Benign(BenignParams),
    PureRop(ChainParams),
    PureJop(ChainParams),
    TwoStaged(TwoStagedParams),
    CodeInjection(CodeInjectionParams),
    NopGadgetEvasion(NopEvasionParams),
}

impl GenKind {
    pub fn name(&self) -> &'static str {
        match self {
            GenKind::Benign(_) => "benign",
            GenKind::PureRop(_) => "pure-rop",
            GenKind::PureJop(_) => "pure-jop",
            GenKind::TwoStaged(_) => "two-staged",
            GenKind::CodeInjection(_) => "code-injection",
            GenKind::NopGadgetEvasion(_) => "nop-evasion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenSpec {
    pub seed: u64,
    pub kind: GenKind,
}

struct Builder {
    rng: ChaCha8Rng,
    events: Vec<TraceEvent>,
    images: Vec<(u64, u64)>,
    heap_top: u64,
    allocs: u64,
}

impl Builder {
    fn new(seed: u64) -> Builder {
        Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            events: Vec::new(),
            images: Vec::new(),
            heap_top: DEFAULT_HEAP_BASE,
            allocs: 0,
        }
    }

    fn load_images(&mut self, layout: &ImageLayout) {
        for i in 0..layout.image_count as u64 {
            let start = layout.base + i * (layout.image_size + layout.gap);
            let end = start + layout.image_size;
            self.events.push(TraceEvent::ImageLoad {
                name: format!("img{i}"),
                start: Address(start),
                end: Address(end),
            });
            self.images.push((start, end));
        }
    }

    fn code_addr(&mut self) -> u64 {
        let (start, end) = self.images[self.rng.gen_range(0..self.images.len())];
        self.rng.gen_range(start..end)
    }

    fn block(&mut self, len: u64, terminator: TerminatorKind, target: u64) {
        let start = self.code_addr();
        self.events.push(TraceEvent::Block(BlockExec {
            start: Address(start),
            instr_count: len,
            terminator,
            target: Address(target),
        }));
    }

    fn code_block(&mut self, len: u64, terminator: TerminatorKind) {
        let target = self.code_addr();
        self.block(len, terminator, target);
    }

    fn block_len_draw(&mut self, dist: &LenDist, position: usize) -> u64 {
        dist.draw(&mut self.rng, position)
    }

    /// One alloc call plus the usage report the tracer emits after it.
    /// Growth is capped at 2% so usage can never outrun a 1.3× watermark
    /// within one probe period of ten.
    fn alloc_pair(&mut self) {
        self.allocs += 1;
        let cap = (self.heap_top / 50).max(0x800);
        self.heap_top += self.rng.gen_range(0..=cap);
        self.events.push(TraceEvent::AllocCall);
        self.events.push(TraceEvent::UsageReport {
            top: Address(self.heap_top),
        });
    }

    /// Direct-terminated warm-up blocks with enough alloc traffic to get the
    /// watermark established above the current data space.
    fn warmup_with_allocs(&mut self, blocks: u64, probe_period: u64) {
        for i in 0..blocks.max(probe_period) {
            if i < blocks {
                let len = self.rng.gen_range(4..=12);
                let term = if i % 3 == 0 {
                    TerminatorKind::DirectCall
                } else {
                    TerminatorKind::DirectBranch
                };
                self.code_block(len, term);
            }
            self.alloc_pair();
        }
    }
}

/// Generates the event sequence for `spec`. Pure: identical specs produce
/// identical traces.
pub fn generate(spec: &GenSpec) -> Result<Vec<TraceEvent>, GenError> {
    match &spec.kind {
        GenKind::Benign(p) => gen_benign(spec.seed, p),
        GenKind::PureRop(p) => gen_chain(spec.seed, p, TerminatorKind::Return),
        GenKind::PureJop(p) => gen_chain(spec.seed, p, TerminatorKind::IndirectJump),
        GenKind::TwoStaged(p) => gen_two_staged(spec.seed, p),
        GenKind::CodeInjection(p) => gen_code_injection(spec.seed, p),
        GenKind::NopGadgetEvasion(p) => gen_nop_evasion(spec.seed, p),
    }
}

fn gen_benign(seed: u64, p: &BenignParams) -> Result<Vec<TraceEvent>, GenError> {
    p.layout.validate()?;
    p.block_len.validate()?;
    if let Some(min_avg) = p.min_avg {
        if min_avg < Ratio::from_int(1) {
            return Err(GenError::ContradictoryTargets(
                "minimum window average below 1 (blocks have at least one instruction)".into(),
            ));
        }
    }
    if p.alloc_period == 0 {
        return Err(GenError::InvalidParams("alloc_period must be ≥ 1".into()));
    }

    // Respect a minimum-average target by flooring every drawn length at
    // ceil(min_avg); any window of such lengths averages at least min_avg.
    let floor = p.min_avg.map_or(1, |avg| avg.numer().div_ceil(avg.denom()));
    let mut b = Builder::new(seed);
    b.load_images(&p.layout);

    let mut emitted = 0u64;
    let mut first_run = true;
    let mut since_alloc = 0u64;
    while emitted < p.blocks {
        let run = if first_run {
            p.max_run
        } else if p.max_run == 0 {
            0
        } else {
            b.rng.gen_range(0..=p.max_run)
        };
        first_run = false;
        for i in 0..run {
            let len = b.block_len_draw(&p.block_len, i as usize).max(floor);
            let term = match b.rng.gen_range(0..3) {
                0 => TerminatorKind::IndirectCall,
                1 => TerminatorKind::IndirectJump,
                _ => TerminatorKind::Return,
            };
            b.code_block(len, term);
            emitted += 1;
            since_alloc += 1;
        }
        // Separate runs with direct control flow.
        let gap = b.rng.gen_range(1..=3);
        for i in 0..gap {
            let len = b.block_len_draw(&p.block_len, i as usize).max(floor);
            let term = match b.rng.gen_range(0..3) {
                0 => TerminatorKind::DirectCall,
                1 => TerminatorKind::FallThrough,
                _ => TerminatorKind::DirectBranch,
            };
            b.code_block(len, term);
            emitted += 1;
            since_alloc += 1;
        }
        if since_alloc >= p.alloc_period {
            since_alloc = 0;
            b.alloc_pair();
        }
    }
    Ok(b.events)
}

fn gen_chain(
    seed: u64,
    p: &ChainParams,
    terminator: TerminatorKind,
) -> Result<Vec<TraceEvent>, GenError> {
    p.layout.validate()?;
    p.gadget_len.validate()?;
    let mut b = Builder::new(seed);
    b.load_images(&p.layout);
    // A short direct-flow prologue before the chain takes over.
    for _ in 0..4 {
        let len = b.rng.gen_range(5..=12);
        b.code_block(len, TerminatorKind::DirectBranch);
    }
    for i in 0..p.gadget_count {
        let len = b.block_len_draw(&p.gadget_len, i as usize);
        // Every gadget lives in an image and transfers to the next one.
        b.code_block(len, terminator);
    }
    Ok(b.events)
}

fn gen_two_staged(seed: u64, p: &TwoStagedParams) -> Result<Vec<TraceEvent>, GenError> {
    p.layout.validate()?;
    p.gadget_len.validate()?;
    let mut b = Builder::new(seed);
    b.load_images(&p.layout);
    b.warmup_with_allocs(8, 10);
    let watermark_top = b.heap_top;

    let payload_addr = if p.alloc_jump {
        // Allocation jump between probes: usage more than doubles without a
        // consumed probe, and the payload lands in the fresh memory above
        // the stale watermark estimate.
        let jump_top = watermark_top * 5 / 2;
        for step in 1..=3u64 {
            b.allocs += 1;
            b.heap_top = watermark_top + (jump_top - watermark_top) * step / 3;
            b.events.push(TraceEvent::AllocCall);
            b.events.push(TraceEvent::UsageReport {
                top: Address(b.heap_top),
            });
        }
        // Above 1.3 × the probed usage, below the real top.
        watermark_top * 15 / 10
    } else {
        // Payload in long-lived heap memory, safely under the watermark.
        DEFAULT_HEAP_BASE + (watermark_top - DEFAULT_HEAP_BASE) * 3 / 4
    };

    // The overflowed function's return enters the chain; each gadget returns
    // into the next. All of this is reused image code.
    for i in 0..p.prelude_gadgets {
        let len = b.block_len_draw(&p.gadget_len, i as usize);
        b.code_block(len, TerminatorKind::Return);
    }
    // The protection-disabling API call: ordinary long blocks, then its
    // return transfers into the injected payload.
    b.code_block(14, TerminatorKind::FallThrough);
    b.code_block(11, TerminatorKind::DirectBranch);
    b.block(9, TerminatorKind::Return, payload_addr);
    // Stage two runs from data memory with plain control flow.
    for i in 0..p.shellcode_blocks {
        let start = payload_addr + i * 0x20;
        let term = if i + 1 == p.shellcode_blocks {
            TerminatorKind::DirectBranch
        } else {
            TerminatorKind::FallThrough
        };
        b.events.push(TraceEvent::Block(BlockExec {
            start: Address(start),
            instr_count: 6,
            terminator: term,
            target: Address(start + 0x20),
        }));
    }
    Ok(b.events)
}

fn gen_code_injection(seed: u64, p: &CodeInjectionParams) -> Result<Vec<TraceEvent>, GenError> {
    p.layout.validate()?;
    if p.buffer_addr >= p.layout.base {
        return Err(GenError::InvalidParams(
            "buffer_addr must lie below the image space".into(),
        ));
    }
    let mut b = Builder::new(seed);
    b.load_images(&p.layout);
    // The vulnerable program parses attacker input: straight-line flow and
    // allocation traffic, no indirect branches until the smashed return.
    b.warmup_with_allocs(10, 10);
    b.block(5, TerminatorKind::Return, p.buffer_addr);
    for i in 0..p.shellcode_blocks {
        let start = p.buffer_addr + i * 0x10;
        b.events.push(TraceEvent::Block(BlockExec {
            start: Address(start),
            instr_count: 4,
            terminator: TerminatorKind::FallThrough,
            target: Address(start + 0x10),
        }));
    }
    Ok(b.events)
}

fn gen_nop_evasion(seed: u64, p: &NopEvasionParams) -> Result<Vec<TraceEvent>, GenError> {
    p.layout.validate()?;
    p.gadget_len.validate()?;
    if p.pad_every == 0 {
        return Err(GenError::InvalidParams("pad_every must be ≥ 1".into()));
    }
    if p.padding_gadget_len == 0 {
        return Err(GenError::InvalidParams("block length must be ≥ 1".into()));
    }
    let mut b = Builder::new(seed);
    b.load_images(&p.layout);
    for _ in 0..4 {
        let len = b.rng.gen_range(5..=12);
        b.code_block(len, TerminatorKind::DirectBranch);
    }
    // Short useful gadgets diluted with long side-effect-free ones to drag
    // the window average back up. The padding still spends chain slots.
    for i in 0..p.gadget_count {
        let len = b.block_len_draw(&p.gadget_len, i as usize);
        b.code_block(len, TerminatorKind::Return);
        if (i + 1) % p.pad_every == 0 {
            b.code_block(p.padding_gadget_len, TerminatorKind::Return);
        }
    }
    Ok(b.events)
}

/// One feature point from the evaluation corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusPoint {
    pub series: Series,
    pub count: u64,
    /// Lowest windowed average; absent for runs too short to evaluate one.
    pub avg: Option<Ratio>,
    pub expected: Class,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    Exploit,
    Spec,
    Application,
}

impl Series {
    pub fn as_str(self) -> &'static str {
        match self {
            Series::Exploit => "exploit",
            Series::Spec => "spec",
            Series::Application => "application",
        }
    }
}

/// The embedded 45-point evaluation corpus: 11 real-world exploits, 18 SPEC
/// benchmarks, 16 desktop applications. Expected classes under the default
/// thresholds: every exploit malicious except the 13-gadget two-staged one,
/// every benign program benign.
pub fn figure1_corpus() -> Vec<CorpusPoint> {
    fn point(series: Series, count: u64, avg: Option<(u64, u64)>, expected: Class) -> CorpusPoint {
        CorpusPoint {
            series,
            count,
            avg: avg.map(|(n, d)| Ratio::new(n, d)),
            expected,
        }
    }
    use Class::{Benign, Malicious};
    use Series::{Application, Exploit, Spec};
    vec![
        point(Exploit, 50, Some((25, 10)), Malicious),
        point(Exploit, 20, Some((19, 10)), Malicious),
        point(Exploit, 16, Some((2, 1)), Malicious),
        point(Exploit, 17, Some((2, 1)), Malicious),
        point(Exploit, 13, Some((22, 10)), Benign),
        point(Exploit, 43, Some((2, 1)), Malicious),
        point(Exploit, 49, Some((25, 10)), Malicious),
        point(Exploit, 46, Some((25, 10)), Malicious),
        point(Exploit, 48, Some((25, 10)), Malicious),
        point(Exploit, 50, Some((2, 1)), Malicious),
        point(Exploit, 50, Some((15, 10)), Malicious),
        point(Spec, 4, None, Benign),
        point(Spec, 3, None, Benign),
        point(Spec, 6, None, Benign),
        point(Spec, 3, None, Benign),
        point(Spec, 3, None, Benign),
        point(Spec, 4, None, Benign),
        point(Spec, 5, None, Benign),
        point(Spec, 7, None, Benign),
        point(Spec, 8, None, Benign),
        point(Spec, 6, None, Benign),
        point(Spec, 3, None, Benign),
        point(Spec, 3, None, Benign),
        point(Spec, 31, Some((4, 1)), Benign),
        point(Spec, 4, None, Benign),
        point(Spec, 15, Some((391, 100)), Benign),
        point(Spec, 3, None, Benign),
        point(Spec, 9, None, Benign),
        point(Spec, 17, Some((4, 1)), Benign),
        point(Application, 14, None, Benign),
        point(Application, 14, None, Benign),
        point(Application, 29, Some((233, 100)), Benign),
        point(Application, 8, None, Benign),
        point(Application, 9, None, Benign),
        point(Application, 40, Some((497, 100)), Benign),
        point(Application, 13, None, Benign),
        point(Application, 47, Some((414, 100)), Benign),
        point(Application, 28, Some((41, 10)), Benign),
        point(Application, 25, Some((414, 100)), Benign),
        point(Application, 7, None, Benign),
        point(Application, 7, None, Benign),
        point(Application, 7, None, Benign),
        point(Application, 11, None, Benign),
        point(Application, 5, None, Benign),
        point(Application, 10, None, Benign),
    ]
}

/// Builds a generator spec that realizes a corpus point as a full trace:
/// exploit points become chains matching the point's length profile (the
/// short two-staged one keeps its staged shape), benign points become
/// workloads bounded by the point's extrema.
pub fn spec_for_point(point: &CorpusPoint, seed: u64) -> GenSpec {
    let kind = match point.series {
        Series::Exploit => {
            let warmup = crate::anticra::AntiCraConfig::default().warmup;
            if point.count < warmup {
                GenKind::TwoStaged(TwoStagedParams {
                    prelude_gadgets: point.count,
                    ..TwoStagedParams::default()
                })
            } else {
                let gadget_len = point
                    .avg
                    .and_then(|avg| cycle_for_window_avg(avg, 10))
                    .map(LenDist::Cycle)
                    .unwrap_or(LenDist::Constant(1));
                GenKind::PureRop(ChainParams {
                    gadget_count: point.count,
                    gadget_len,
                    layout: ImageLayout::default(),
                })
            }
        }
        Series::Spec | Series::Application => GenKind::Benign(BenignParams {
            blocks: (point.count * 4).max(120),
            max_run: point.count,
            min_avg: point.avg,
            ..BenignParams::default()
        }),
    };
    GenSpec { seed, kind }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anticra::{extract_features, AntiCraConfig};
    use crate::trace::encode_trace;

    #[test]
    fn generation_is_deterministic() {
        let spec = GenSpec {
            seed: 7,
            kind: GenKind::Benign(BenignParams::default()),
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(encode_trace(&a).unwrap(), encode_trace(&b).unwrap());
        let c = generate(&GenSpec {
            seed: 8,
            kind: spec.kind.clone(),
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pure_rop_features_match_the_spec() {
        let spec = GenSpec {
            seed: 1,
            kind: GenKind::PureRop(ChainParams {
                gadget_count: 9344,
                gadget_len: LenDist::Constant(1),
                layout: ImageLayout::default(),
            }),
        };
        let events = generate(&spec).unwrap();
        let f = extract_features(&events, &AntiCraConfig::default());
        assert_eq!(f.max_consecutive, 9344);
        assert_eq!(f.lowest_window_avg, Some(Ratio::new(1, 1)));
    }

    #[test]
    fn benign_traces_stay_inside_images() {
        for seed in 0..20 {
            let spec = GenSpec {
                seed,
                kind: GenKind::Benign(BenignParams::default()),
            };
            let events = generate(&spec).unwrap();
            let images: Vec<(u64, u64)> = events
                .iter()
                .filter_map(|e| match e {
                    TraceEvent::ImageLoad { start, end, .. } => Some((start.0, end.0)),
                    _ => None,
                })
                .collect();
            for ev in &events {
                if let Some(b) = ev.as_block() {
                    if b.terminator.is_indirect() {
                        assert!(
                            images
                                .iter()
                                .any(|(s, e)| *s <= b.target.0 && b.target.0 < *e),
                            "seed {seed}: indirect target {} outside images",
                            b.target
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn benign_realizes_the_requested_max_run() {
        let spec = GenSpec {
            seed: 3,
            kind: GenKind::Benign(BenignParams {
                max_run: 47,
                min_avg: Some(Ratio::new(414, 100)),
                blocks: 300,
                ..BenignParams::default()
            }),
        };
        let events = generate(&spec).unwrap();
        let f = extract_features(&events, &AntiCraConfig::default());
        assert_eq!(f.max_consecutive, 47);
        if let Some(avg) = f.lowest_window_avg {
            assert!(avg >= Ratio::new(414, 100), "avg {avg} under target");
        }
    }

    #[test]
    fn benign_rejects_sub_one_average_targets() {
        let spec = GenSpec {
            seed: 0,
            kind: GenKind::Benign(BenignParams {
                min_avg: Some(Ratio::new(1, 2)),
                ..BenignParams::default()
            }),
        };
        assert!(matches!(
            generate(&spec),
            Err(GenError::ContradictoryTargets(_))
        ));
    }

    #[test]
    fn two_staged_prelude_is_the_longest_run() {
        let spec = GenSpec {
            seed: 5,
            kind: GenKind::TwoStaged(TwoStagedParams::default()),
        };
        let events = generate(&spec).unwrap();
        let f = extract_features(&events, &AntiCraConfig::default());
        assert_eq!(f.max_consecutive, 13);
        assert_eq!(f.lowest_window_avg, None);
    }

    #[test]
    fn cycle_builder_hits_exact_window_sums() {
        let cycle = cycle_for_window_avg(Ratio::new(22, 10), 10).unwrap();
        assert_eq!(cycle.iter().sum::<u64>(), 22);
        assert_eq!(cycle.len(), 10);
        let cycle = cycle_for_window_avg(Ratio::new(19, 10), 10).unwrap();
        assert_eq!(cycle.iter().sum::<u64>(), 19);
        assert!(cycle.iter().all(|&l| l >= 1));
        assert_eq!(cycle_for_window_avg(Ratio::new(233, 100), 10), None);
        assert_eq!(cycle_for_window_avg(Ratio::new(1, 2), 10), None);
    }

    #[test]
    fn corpus_has_45_points_in_three_series() {
        let corpus = figure1_corpus();
        assert_eq!(corpus.len(), 45);
        let count = |s: Series| corpus.iter().filter(|p| p.series == s).count();
        assert_eq!(count(Series::Exploit), 11);
        assert_eq!(count(Series::Spec), 18);
        assert_eq!(count(Series::Application), 16);
        let expected_malicious = corpus
            .iter()
            .filter(|p| p.expected == Class::Malicious)
            .count();
        assert_eq!(expected_malicious, 10);
    }

    #[test]
    fn corpus_pins_the_documented_rows() {
        let corpus = figure1_corpus();
        let first = &corpus[0];
        assert_eq!(
            (first.series, first.count, first.avg, first.expected),
            (
                Series::Exploit,
                50,
                Some(Ratio::new(5, 2)),
                Class::Malicious
            )
        );
        let missed = corpus
            .iter()
            .find(|p| p.series == Series::Exploit && p.expected == Class::Benign)
            .unwrap();
        assert_eq!((missed.count, missed.avg), (13, Some(Ratio::new(11, 5))));
        assert!(corpus.iter().any(|p| p.series == Series::Application
            && p.count == 47
            && p.avg == Some(Ratio::new(207, 50))));
    }
}

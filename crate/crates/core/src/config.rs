//! Config and profile files.
//!
//! One TOML document carries everything: `[anticra]` and `[depplus]` tune the
//! detectors, `[profile]` records learning-mode extrema, `[gen]` describes a
//! synthesizer run. Every section and key is optional except where noted;
//! omitted keys keep their defaults. Rational-valued keys are decimal strings
//! (`"2.25"`) or fractions (`"9/4"`) and are parsed exactly.
//!
//! A learned profile file is itself a valid config: its `[anticra]` section
//! holds the recommended thresholds, so it can be passed straight back as
//! `--config`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anticra::AntiCraConfig;
use crate::depplus::{DepMode, DepPlusConfig};
use crate::learning::{Margins, ProgramProfile};
use crate::ratio::Ratio;
use crate::synth::{
    BenignParams, ChainParams, CodeInjectionParams, GenKind, GenSpec, ImageLayout,
    NopEvasionParams, TwoStagedParams,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Detector tuning for one analysis run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DetectorConfig {
    pub anticra: AntiCraConfig,
    pub depplus: DepPlusConfig,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.anticra.validate().map_err(ConfigError::Invalid)?;
        self.depplus.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AntiCraSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    window: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    warmup: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band1_max_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band1_max_avg: Option<Ratio>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band2_max_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band2_max_avg: Option<Ratio>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hard_cap: Option<u64>,
}

impl AntiCraSection {
    fn apply(&self, cfg: &mut AntiCraConfig) {
        let s = self.clone();
        if let Some(v) = s.window {
            cfg.window = v;
        }
        if let Some(v) = s.warmup {
            cfg.warmup = v;
        }
        if let Some(v) = s.band1_max_count {
            cfg.band1_max_count = v;
        }
        if let Some(v) = s.band1_max_avg {
            cfg.band1_max_avg = v;
        }
        if let Some(v) = s.band2_max_count {
            cfg.band2_max_count = v;
        }
        if let Some(v) = s.band2_max_avg {
            cfg.band2_max_avg = v;
        }
        if let Some(v) = s.hard_cap {
            cfg.hard_cap = v;
        }
    }

    fn full(cfg: &AntiCraConfig) -> AntiCraSection {
        AntiCraSection {
            window: Some(cfg.window),
            warmup: Some(cfg.warmup),
            band1_max_count: Some(cfg.band1_max_count),
            band1_max_avg: Some(cfg.band1_max_avg),
            band2_max_count: Some(cfg.band2_max_count),
            band2_max_avg: Some(cfg.band2_max_avg),
            hard_cap: Some(cfg.hard_cap),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DepPlusSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<DepMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probe_period: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    safety_factor: Option<Ratio>,
}

impl DepPlusSection {
    fn apply(&self, cfg: &mut DepPlusConfig) {
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.probe_period {
            cfg.probe_period = v;
        }
        if let Some(v) = self.safety_factor {
            cfg.safety_factor = v;
        }
    }

    fn full(cfg: &DepPlusConfig) -> DepPlusSection {
        DepPlusSection {
            mode: Some(cfg.mode),
            probe_period: Some(cfg.probe_period),
            safety_factor: Some(cfg.safety_factor),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileSection {
    program: String,
    traces_seen: u64,
    observed_max_consecutive: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    observed_min_window_avg: Option<Ratio>,
    count_margin: u64,
    avg_margin: Ratio,
}

/// `[gen]` section: a synthesizer spec in config form. The CLI exposes the
/// same knobs as flags; flags win over the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gadget_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gadget_len: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gadget_len_cycle: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prelude_gadgets: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub padding_gadget_len: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pad_every: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_run: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_avg: Option<Ratio>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alloc_jump: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shellcode_blocks: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub buffer_addr: Option<String>,
}

impl GenSection {
    /// Field-wise overlay: values in `self` win, `base` fills the gaps.
    pub fn over(self, base: GenSection) -> GenSection {
        GenSection {
            kind: self.kind.or(base.kind),
            seed: self.seed.or(base.seed),
            gadget_count: self.gadget_count.or(base.gadget_count),
            gadget_len: self.gadget_len.or(base.gadget_len),
            gadget_len_cycle: self.gadget_len_cycle.or(base.gadget_len_cycle),
            prelude_gadgets: self.prelude_gadgets.or(base.prelude_gadgets),
            padding_gadget_len: self.padding_gadget_len.or(base.padding_gadget_len),
            pad_every: self.pad_every.or(base.pad_every),
            blocks: self.blocks.or(base.blocks),
            max_run: self.max_run.or(base.max_run),
            min_avg: self.min_avg.or(base.min_avg),
            alloc_jump: self.alloc_jump.or(base.alloc_jump),
            images: self.images.or(base.images),
            shellcode_blocks: self.shellcode_blocks.or(base.shellcode_blocks),
            buffer_addr: self.buffer_addr.or(base.buffer_addr),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    anticra: Option<AntiCraSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    depplus: Option<DepPlusSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    profile: Option<ProfileSection>,
    #[serde(skip_serializing_if = "Option::is_none", rename = "gen")]
    gen: Option<GenSection>,
}

/// Everything a config file can carry.
#[derive(Debug)]
pub struct ConfigDoc {
    pub detector: DetectorConfig,
    pub profile: Option<ProgramProfile>,
    pub gen: Option<GenSection>,
}

pub fn parse_config(text: &str) -> Result<ConfigDoc, ConfigError> {
    let file: ConfigFile = toml::from_str(text)?;
    let mut detector = DetectorConfig::default();
    if let Some(s) = &file.anticra {
        s.apply(&mut detector.anticra);
    }
    if let Some(s) = &file.depplus {
        s.apply(&mut detector.depplus);
    }
    detector.validate()?;
    let profile = match file.profile {
        Some(p) => {
            if p.avg_margin == Ratio::ZERO {
                return Err(ConfigError::Invalid(
                    "profile.avg_margin must be positive".to_string(),
                ));
            }
            Some(ProgramProfile {
                program: p.program,
                traces_seen: p.traces_seen,
                observed_max_consecutive: p.observed_max_consecutive,
                observed_min_window_avg: p.observed_min_window_avg,
                margins: Margins {
                    count_margin: p.count_margin,
                    avg_margin: p.avg_margin,
                },
                recommended: detector.anticra.clone(),
            })
        }
        None => None,
    };
    Ok(ConfigDoc {
        detector,
        profile,
        gen: file.gen,
    })
}

/// Renders a detector config with every key spelled out.
pub fn detector_config_toml(cfg: &DetectorConfig) -> String {
    let file = ConfigFile {
        anticra: Some(AntiCraSection::full(&cfg.anticra)),
        depplus: Some(DepPlusSection::full(&cfg.depplus)),
        profile: None,
        gen: None,
    };
    toml::to_string(&file).expect("config serialization")
}

/// Renders a learned profile as a config-compatible file: the recommended
/// thresholds as `[anticra]`, plus the extrema that produced them.
pub fn profile_toml(profile: &ProgramProfile, depplus: &DepPlusConfig) -> String {
    let file = ConfigFile {
        anticra: Some(AntiCraSection::full(&profile.recommended)),
        depplus: Some(DepPlusSection::full(depplus)),
        profile: Some(ProfileSection {
            program: profile.program.clone(),
            traces_seen: profile.traces_seen,
            observed_max_consecutive: profile.observed_max_consecutive,
            observed_min_window_avg: profile.observed_min_window_avg,
            count_margin: profile.margins.count_margin,
            avg_margin: profile.margins.avg_margin,
        }),
        gen: None,
    };
    toml::to_string(&file).expect("profile serialization")
}

fn parse_hex_addr(s: &str) -> Result<u64, ConfigError> {
    let hex = s.strip_prefix("0x").ok_or_else(|| {
        ConfigError::Invalid(format!("gen.buffer_addr `{s}` must be 0x-prefixed hex"))
    })?;
    u64::from_str_radix(hex, 16)
        .map_err(|_| ConfigError::Invalid(format!("gen.buffer_addr `{s}` is not valid hex")))
}

/// Builds a synthesizer spec from a (possibly merged) `[gen]` section.
/// `kind` and `seed` are required; everything else falls back to the kind's
/// defaults.
pub fn build_gen_spec(section: &GenSection) -> Result<GenSpec, ConfigError> {
    use crate::synth::LenDist;

    let kind_name = section
        .kind
        .as_deref()
        .ok_or_else(|| ConfigError::Invalid("gen.kind is required".to_string()))?;
    let seed = section
        .seed
        .ok_or_else(|| ConfigError::Invalid("gen.seed is required".to_string()))?;

    let mut layout = ImageLayout::default();
    if let Some(n) = section.images {
        layout.image_count = n;
    }
    let len_dist = |default: LenDist| -> LenDist {
        if let Some(cycle) = &section.gadget_len_cycle {
            LenDist::Cycle(cycle.clone())
        } else if let Some(n) = section.gadget_len {
            LenDist::Constant(n)
        } else {
            default
        }
    };

    let kind = match kind_name {
        "benign" => {
            let d = BenignParams::default();
            GenKind::Benign(BenignParams {
                blocks: section.blocks.unwrap_or(d.blocks),
                max_run: section.max_run.unwrap_or(d.max_run),
                min_avg: section.min_avg.or(d.min_avg),
                block_len: len_dist(d.block_len),
                layout,
                alloc_period: d.alloc_period,
            })
        }
        "pure-rop" | "pure-jop" => {
            let d = ChainParams::default();
            let params = ChainParams {
                gadget_count: section.gadget_count.unwrap_or(d.gadget_count),
                gadget_len: len_dist(d.gadget_len),
                layout,
            };
            if kind_name == "pure-rop" {
                GenKind::PureRop(params)
            } else {
                GenKind::PureJop(params)
            }
        }
        "two-staged" => {
            let d = TwoStagedParams::default();
            GenKind::TwoStaged(TwoStagedParams {
                prelude_gadgets: section.prelude_gadgets.unwrap_or(d.prelude_gadgets),
                gadget_len: len_dist(d.gadget_len),
                shellcode_blocks: section.shellcode_blocks.unwrap_or(d.shellcode_blocks),
                alloc_jump: section.alloc_jump.unwrap_or(d.alloc_jump),
                layout,
            })
        }
        "code-injection" => {
            let d = CodeInjectionParams::default();
            GenKind::CodeInjection(CodeInjectionParams {
                buffer_addr: match &section.buffer_addr {
                    Some(s) => parse_hex_addr(s)?,
                    None => d.buffer_addr,
                },
                shellcode_blocks: section.shellcode_blocks.unwrap_or(d.shellcode_blocks),
                layout,
            })
        }
        "nop-evasion" => {
            let d = NopEvasionParams::default();
            GenKind::NopGadgetEvasion(NopEvasionParams {
                gadget_count: section.gadget_count.unwrap_or(d.gadget_count),
                gadget_len: len_dist(d.gadget_len),
                pad_every: section.pad_every.unwrap_or(d.pad_every),
                padding_gadget_len: section.padding_gadget_len.unwrap_or(d.padding_gadget_len),
                layout,
            })
        }
        other => {
            return Err(ConfigError::Invalid(format!(
                "gen.kind `{other}` is not one of benign, pure-rop, pure-jop, two-staged, code-injection, nop-evasion"
            )))
        }
    };
    Ok(GenSpec { seed, kind })
}

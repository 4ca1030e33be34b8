//! Run configuration: built-in defaults, then the config file, then flags.
//!
//! The config file is a JSON document whose fields mirror the flag names;
//! any subset may be present. `QDSIM_SEED` is consulted only when neither a
//! flag nor the file sets the seed.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use qdsim::adversary::{AttackKind, SubstitutionPolicy, TargetPolicy};
use qdsim::logical::Encoding;
use qdsim::noise::{NoiseKind, ParamLaw};
use qdsim::protocol::ProtocolConfig;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Everything a run needs, fully resolved. Serialized verbatim into every
/// JSON payload so outputs are self-describing.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub protocol: ProtocolConfig,
    /// `None` runs the honest channel.
    pub attack: Option<AttackKind>,
    pub trials: u32,
    pub format: OutputFormat,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Encoding as explicitly given, before defaulting; `verify` uses this
    /// to decide whether to filter to one code.
    #[serde(skip)]
    pub encoding_filter: Option<Encoding>,
    #[serde(skip)]
    pub format_given: bool,
}

/// The config file schema. Flags override any field set here.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub encoding: Option<Encoding>,
    pub n: Option<usize>,
    pub delta1: Option<usize>,
    pub decoy_count: Option<usize>,
    pub theta_key: Option<f64>,
    pub noise: Option<NoiseKind>,
    pub noise_law: Option<ParamLaw>,
    pub attack: Option<AttackFile>,
    pub trials: Option<u32>,
    pub seed: Option<u64>,
    pub encryption_enabled: Option<bool>,
    pub introspect: Option<bool>,
    pub format: Option<OutputFormat>,
    pub out: Option<PathBuf>,
}

/// Attack selection as written in a config file.
#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackFile {
    None,
    InterceptResendLogical,
    InterceptResendPhysical,
    CaptureSc {
        #[serde(default)]
        policy: Option<SubstitutionPolicy>,
    },
    EntangleAncilla {
        #[serde(default)]
        target: Option<TargetPolicy>,
    },
}

impl AttackFile {
    fn resolve(&self) -> Option<AttackKind> {
        match self {
            AttackFile::None => None,
            AttackFile::InterceptResendLogical => Some(AttackKind::InterceptResendLogical),
            AttackFile::InterceptResendPhysical => Some(AttackKind::InterceptResendPhysical),
            AttackFile::CaptureSc { policy } => Some(AttackKind::CaptureSc {
                policy: policy.unwrap_or(SubstitutionPolicy::RandomLogical),
            }),
            AttackFile::EntangleAncilla { target } => Some(AttackKind::EntangleAncilla {
                target: target.unwrap_or(TargetPolicy::AllTraveling),
            }),
        }
    }
}

/// Values collected from the command line, all optional.
#[derive(Clone, Debug, Default)]
pub struct Flags {
    pub config: Option<PathBuf>,
    pub encoding: Option<Encoding>,
    pub n: Option<usize>,
    pub delta1: Option<usize>,
    pub decoys: Option<usize>,
    pub theta_key: Option<f64>,
    pub noise: Option<NoiseKind>,
    pub noise_law: Option<ParamLaw>,
    pub attack: Option<String>,
    pub policy: Option<SubstitutionPolicy>,
    pub target: Option<TargetPolicy>,
    pub trials: Option<u32>,
    pub seed: Option<u64>,
    pub format: Option<OutputFormat>,
    pub out: Option<PathBuf>,
    pub introspect: bool,
}

pub fn parse_encoding(s: &str) -> Result<Encoding, String> {
    match s {
        "dp" => Ok(Encoding::Dp),
        "r" => Ok(Encoding::R),
        _ => Err(format!("unknown encoding '{s}' (expected dp or r)")),
    }
}

pub fn parse_noise(s: &str) -> Result<NoiseKind, String> {
    match s {
        "dephasing" => Ok(NoiseKind::Dephasing),
        "rotation" => Ok(NoiseKind::Rotation),
        "ideal" => Ok(NoiseKind::Ideal),
        _ => Err(format!("unknown noise kind '{s}' (expected dephasing, rotation or ideal)")),
    }
}

pub fn parse_noise_law(s: &str) -> Result<ParamLaw, String> {
    if s == "uniform" {
        return Ok(ParamLaw::Uniform);
    }
    if let Some(rest) = s.strip_prefix("fixed:") {
        return rest
            .parse::<f64>()
            .map(ParamLaw::Fixed)
            .map_err(|e| format!("bad fixed angle '{rest}': {e}"));
    }
    Err(format!("unknown noise law '{s}' (expected uniform or fixed:<rad>)"))
}

pub fn parse_policy(s: &str) -> Result<SubstitutionPolicy, String> {
    match s {
        "random_logical" => Ok(SubstitutionPolicy::RandomLogical),
        "bell_substitute" => Ok(SubstitutionPolicy::BellSubstitute),
        "block" => Ok(SubstitutionPolicy::Block),
        _ => Err(format!(
            "unknown policy '{s}' (expected random_logical, bell_substitute or block)"
        )),
    }
}

pub fn parse_target(s: &str) -> Result<TargetPolicy, String> {
    match s {
        "all_traveling" => Ok(TargetPolicy::AllTraveling),
        "message_only" => Ok(TargetPolicy::MessageOnly),
        _ => Err(format!("unknown target '{s}' (expected all_traveling or message_only)")),
    }
}

pub fn parse_format(s: &str) -> Result<OutputFormat, String> {
    match s {
        "json" => Ok(OutputFormat::Json),
        "csv" => Ok(OutputFormat::Csv),
        _ => Err(format!("unknown format '{s}' (expected json or csv)")),
    }
}

fn attack_from_flag(
    name: &str,
    policy: Option<SubstitutionPolicy>,
    target: Option<TargetPolicy>,
) -> Result<Option<AttackKind>, CliError> {
    match name {
        "none" => Ok(None),
        "intercept_resend_logical" => Ok(Some(AttackKind::InterceptResendLogical)),
        "intercept_resend_physical" => Ok(Some(AttackKind::InterceptResendPhysical)),
        "capture_sc" => Ok(Some(AttackKind::CaptureSc {
            policy: policy.unwrap_or(SubstitutionPolicy::RandomLogical),
        })),
        "entangle_ancilla" => Ok(Some(AttackKind::EntangleAncilla {
            target: target.unwrap_or(TargetPolicy::AllTraveling),
        })),
        _ => Err(CliError::Config(format!(
            "unknown attack '{name}' (expected none, intercept_resend_logical, \
             intercept_resend_physical, capture_sc or entangle_ancilla)"
        ))),
    }
}

fn seed_from_env() -> Result<Option<u64>, CliError> {
    match std::env::var("QDSIM_SEED") {
        Ok(text) => text
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::Config(format!("QDSIM_SEED must be a u64, got '{text}'"))),
        Err(_) => Ok(None),
    }
}

/// Builds the final configuration. Precedence per field: flag, then config
/// file, then default; the seed additionally falls back to `QDSIM_SEED`.
pub fn resolve(flags: &Flags) -> Result<RunConfig, CliError> {
    let file = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config file {}: {e}", path.display()))
            })?;
            serde_json::from_str::<FileConfig>(&text).map_err(|e| {
                CliError::Config(format!("bad config file {}: {e}", path.display()))
            })?
        }
        None => FileConfig::default(),
    };

    let encoding_filter = flags.encoding.or(file.encoding);
    let encoding = encoding_filter.unwrap_or(Encoding::Dp);
    let n = flags.n.or(file.n).unwrap_or(64);
    let mut protocol = ProtocolConfig::new(encoding, n);
    if let Some(d) = flags.delta1.or(file.delta1) {
        protocol.delta1 = d;
    }
    if let Some(d) = flags.decoys.or(file.decoy_count) {
        protocol.decoy_count = d;
    }
    if let Some(t) = flags.theta_key.or(file.theta_key) {
        protocol.theta_key = t;
    }
    if let Some(kind) = flags.noise.or(file.noise) {
        protocol.noise.kind = kind;
    }
    if let Some(law) = flags.noise_law.clone().or(file.noise_law.clone()) {
        protocol.noise.law = law;
    }
    protocol.seed = match flags.seed.or(file.seed) {
        Some(s) => s,
        None => seed_from_env()?.unwrap_or(0),
    };
    if let Some(enabled) = file.encryption_enabled {
        protocol.encryption_enabled = enabled;
    }
    protocol.introspect = flags.introspect || file.introspect.unwrap_or(false);
    protocol.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let mut attack = file.attack.as_ref().and_then(AttackFile::resolve);
    if let Some(name) = &flags.attack {
        attack = attack_from_flag(name, flags.policy, flags.target)?;
    } else {
        // flags refine a file-selected attack's parameters
        if let (Some(p), Some(AttackKind::CaptureSc { policy })) = (flags.policy, attack.as_mut())
        {
            *policy = p;
        }
        if let (Some(t), Some(AttackKind::EntangleAncilla { target })) =
            (flags.target, attack.as_mut())
        {
            *target = t;
        }
    }

    let trials = flags.trials.or(file.trials).unwrap_or(1);
    if trials < 1 {
        return Err(CliError::Config("trials must be at least 1".into()));
    }
    let format_flag = flags.format.or(file.format);

    Ok(RunConfig {
        protocol,
        attack,
        trials,
        format: format_flag.unwrap_or(OutputFormat::Json),
        out: flags.out.clone().or(file.out),
        encoding_filter,
        format_given: format_flag.is_some(),
    })
}

//! Plain-text run configuration: one `key = value` per line, `#` starts a
//! comment. Keys given as overrides replace the file's value for the same
//! key. Every key has a default, so an empty file is a valid configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use saac_core::adversary::Variant;
use saac_core::envs::{ConstraintMode, EnvConfig, EnvKind};
use saac_core::trainer::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("`{key}`: {reason}")]
    Constraint { key: String, reason: String },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Every accepted key, in the order `render` writes them.
pub const KEYS: &[&str] = &[
    "env",
    "horizon",
    "gamma",
    "constraint_mode",
    "adversary",
    "seed",
    "total_steps",
    "warmup_steps",
    "batch_size",
    "updates_per_step",
    "update_every",
    "tau",
    "lr_q",
    "lr_pi",
    "lr_alpha",
    "lr_beta",
    "init_alpha",
    "init_beta",
    "target_entropy",
    "adversary_target",
    "beta_fixed",
    "hidden",
    "n_quantiles",
    "huber_kappa",
    "lambda_msd",
    "lambda_cvar",
    "risk_seeking_sign",
    "buffer_capacity",
    "eval_interval",
    "eval_episodes",
    "max_states_per_eval",
    "adversary_first",
    "hazard.start",
    "hazard.start_jitter",
    "hazard.goal",
    "hazard.goal_radius",
    "hazard.goal_bonus",
    "hazard.center",
    "hazard.radius",
    "hazard.distance_cost",
    "hazard.speed_limit",
    "hazard.max_speed",
    "hazard.max_accel",
    "hazard.dt",
    "hazard.arena",
    "pendulum.omega_max",
    "pendulum.max_torque",
    "pendulum.max_speed",
    "pendulum.dt",
    "pendulum.gravity",
    "pendulum.mass",
    "pendulum.length",
    "chain.slip_prob",
    "chain.goal_reward",
];

/// Splits `text` into key/value pairs, rejecting malformed lines and
/// unknown keys. Later lines win over earlier ones.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            });
        }
        insert_known(&mut out, key, value)?;
    }
    Ok(out)
}

fn insert_known(map: &mut BTreeMap<String, String>, key: &str, value: &str) -> Result<(), ConfigError> {
    if !KEYS.contains(&key) {
        return Err(ConfigError::UnknownKey(key.to_string()));
    }
    map.insert(key.to_string(), value.to_string());
    Ok(())
}

/// Parses a `KEY=VALUE` override.
pub fn parse_override(text: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = text.split_once('=').ok_or_else(|| ConfigError::Syntax {
        line: 0,
        text: text.to_string(),
    })?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn invalid(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| invalid(key, value, e))
}

fn real(key: &str, value: &str) -> Result<f64, ConfigError> {
    let x: f64 = scalar(key, value)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(invalid(key, value, "must be finite"))
    }
}

fn pair(key: &str, value: &str) -> Result<[f64; 2], ConfigError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([real(key, a)?, real(key, b)?]),
        _ => Err(invalid(key, value, "expected two comma-separated numbers")),
    }
}

fn optional(key: &str, value: &str, none: &str) -> Result<Option<f64>, ConfigError> {
    if value == none {
        Ok(None)
    } else {
        real(key, value).map(Some)
    }
}

fn boolean(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(key, value, "expected true or false")),
    }
}

fn apply(c: &mut TrainConfig, key: &str, v: &str) -> Result<(), ConfigError> {
    let h = &mut c.env.hazard;
    let p = &mut c.env.pendulum;
    match key {
        "env" => {}
        "horizon" => c.env.horizon = scalar(key, v)?,
        "gamma" => c.env.gamma = real(key, v)?,
        "constraint_mode" => c.env.constraint_mode = ConstraintMode::from_str(v).map_err(|e| invalid(key, v, e))?,
        "adversary" => c.variant = Variant::from_str(v).map_err(|e| invalid(key, v, e))?,
        "seed" => c.seed = scalar(key, v)?,
        "total_steps" => c.total_steps = scalar(key, v)?,
        "warmup_steps" => c.warmup_steps = scalar(key, v)?,
        "batch_size" => c.batch_size = scalar(key, v)?,
        "updates_per_step" => c.updates_per_step = scalar(key, v)?,
        "update_every" => c.update_every = scalar(key, v)?,
        "tau" => c.tau = real(key, v)?,
        "lr_q" => c.lr_q = real(key, v)?,
        "lr_pi" => c.lr_pi = real(key, v)?,
        "lr_alpha" => c.lr_alpha = real(key, v)?,
        "lr_beta" => c.lr_beta = real(key, v)?,
        "init_alpha" => c.init_alpha = real(key, v)?,
        "init_beta" => c.init_beta = real(key, v)?,
        "target_entropy" => c.target_entropy = optional(key, v, "auto")?,
        "adversary_target" => c.adversary_target = optional(key, v, "auto")?,
        "beta_fixed" => c.beta_fixed = optional(key, v, "off")?,
        "hidden" => {
            c.hidden = if v.is_empty() {
                Vec::new()
            } else {
                v.split(',').map(|s| scalar(key, s.trim())).collect::<Result<_, _>>()?
            }
        }
        "n_quantiles" => c.n_quantiles = scalar(key, v)?,
        "huber_kappa" => c.huber_kappa = real(key, v)?,
        "lambda_msd" => c.lambda_msd = real(key, v)?,
        "lambda_cvar" => c.lambda_cvar = real(key, v)?,
        "risk_seeking_sign" => c.risk_seeking_sign = real(key, v)?,
        "buffer_capacity" => c.buffer_capacity = scalar(key, v)?,
        "eval_interval" => c.eval_interval = scalar(key, v)?,
        "eval_episodes" => c.eval_episodes = scalar(key, v)?,
        "max_states_per_eval" => c.max_states_per_eval = scalar(key, v)?,
        "adversary_first" => c.adversary_first = boolean(key, v)?,
        "hazard.start" => h.start = pair(key, v)?,
        "hazard.start_jitter" => h.start_jitter = real(key, v)?,
        "hazard.goal" => h.goal = pair(key, v)?,
        "hazard.goal_radius" => h.goal_radius = real(key, v)?,
        "hazard.goal_bonus" => h.goal_bonus = real(key, v)?,
        "hazard.center" => h.hazard_center = pair(key, v)?,
        "hazard.radius" => h.hazard_radius = real(key, v)?,
        "hazard.distance_cost" => h.distance_cost = real(key, v)?,
        "hazard.speed_limit" => h.speed_limit = real(key, v)?,
        "hazard.max_speed" => h.max_speed = real(key, v)?,
        "hazard.max_accel" => h.max_accel = real(key, v)?,
        "hazard.dt" => h.dt = real(key, v)?,
        "hazard.arena" => h.arena = real(key, v)?,
        "pendulum.omega_max" => p.omega_max = real(key, v)?,
        "pendulum.max_torque" => p.max_torque = real(key, v)?,
        "pendulum.max_speed" => p.max_speed = real(key, v)?,
        "pendulum.dt" => p.dt = real(key, v)?,
        "pendulum.gravity" => p.gravity = real(key, v)?,
        "pendulum.mass" => p.mass = real(key, v)?,
        "pendulum.length" => p.length = real(key, v)?,
        "chain.slip_prob" => c.env.chain.slip_prob = real(key, v)?,
        "chain.goal_reward" => c.env.chain.goal_reward = real(key, v)?,
        _ => return Err(ConfigError::UnknownKey(key.to_string())),
    }
    Ok(())
}

/// Names the key a validation message is about: the first word that is a
/// key, or else the first that ends a dotted key.
fn blame(message: &str) -> String {
    let words: Vec<&str> = message
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '.'))
        .collect();
    let exact = words.iter().find_map(|w| KEYS.iter().find(|k| *k == w));
    let tail = || words.iter().find_map(|w| KEYS.iter().find(|k| k.rsplit_once('.').is_some_and(|(_, t)| t == *w)));
    exact.or_else(tail).map_or_else(|| "config".to_string(), |k| k.to_string())
}

/// Builds a validated configuration from key/value pairs on top of the
/// defaults. `env` is applied first so environment-dependent defaults such
/// as the horizon follow it.
pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<TrainConfig, ConfigError> {
    let mut config = TrainConfig::default();
    if let Some(v) = pairs.get("env") {
        let kind = EnvKind::from_str(v).map_err(|e| invalid("env", v, e))?;
        config.env = EnvConfig::new(kind);
    }
    for (k, v) in pairs {
        apply(&mut config, k, v)?;
    }
    config.validate().map_err(|e| {
        let reason = e.to_string();
        ConfigError::Constraint { key: blame(&reason), reason }
    })?;
    Ok(config)
}

/// Parses `text` and then applies `overrides`, which take precedence.
pub fn parse_config_str(text: &str, overrides: &[(String, String)]) -> Result<TrainConfig, ConfigError> {
    let mut pairs = parse_pairs(text)?;
    for (k, v) in overrides {
        insert_known(&mut pairs, k, v)?;
    }
    from_pairs(&pairs)
}

/// Reads a configuration file (or starts from defaults when `path` is
/// `None`) and applies `overrides`.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
            path: p.display().to_string(),
            source,
        })?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}

fn opt(x: Option<f64>, none: &str) -> String {
    x.map_or_else(|| none.to_string(), |v| v.to_string())
}

fn two(x: [f64; 2]) -> String {
    format!("{},{}", x[0], x[1])
}

/// Writes every key with its resolved value; parsing the result gives back
/// the same configuration.
pub fn render(c: &TrainConfig) -> String {
    let h = &c.env.hazard;
    let p = &c.env.pendulum;
    let hidden: Vec<String> = c.hidden.iter().map(|x| x.to_string()).collect();
    let values: Vec<String> = vec![
        c.env.kind.to_string(),
        c.env.horizon.to_string(),
        c.env.gamma.to_string(),
        c.env.constraint_mode.to_string(),
        c.variant.to_string(),
        c.seed.to_string(),
        c.total_steps.to_string(),
        c.warmup_steps.to_string(),
        c.batch_size.to_string(),
        c.updates_per_step.to_string(),
        c.update_every.to_string(),
        c.tau.to_string(),
        c.lr_q.to_string(),
        c.lr_pi.to_string(),
        c.lr_alpha.to_string(),
        c.lr_beta.to_string(),
        c.init_alpha.to_string(),
        c.init_beta.to_string(),
        opt(c.target_entropy, "auto"),
        opt(c.adversary_target, "auto"),
        opt(c.beta_fixed, "off"),
        hidden.join(","),
        c.n_quantiles.to_string(),
        c.huber_kappa.to_string(),
        c.lambda_msd.to_string(),
        c.lambda_cvar.to_string(),
        c.risk_seeking_sign.to_string(),
        c.buffer_capacity.to_string(),
        c.eval_interval.to_string(),
        c.eval_episodes.to_string(),
        c.max_states_per_eval.to_string(),
        c.adversary_first.to_string(),
        two(h.start),
        h.start_jitter.to_string(),
        two(h.goal),
        h.goal_radius.to_string(),
        h.goal_bonus.to_string(),
        two(h.hazard_center),
        h.hazard_radius.to_string(),
        h.distance_cost.to_string(),
        h.speed_limit.to_string(),
        h.max_speed.to_string(),
        h.max_accel.to_string(),
        h.dt.to_string(),
        h.arena.to_string(),
        p.omega_max.to_string(),
        p.max_torque.to_string(),
        p.max_speed.to_string(),
        p.dt.to_string(),
        p.gravity.to_string(),
        p.mass.to_string(),
        p.length.to_string(),
        c.env.chain.slip_prob.to_string(),
        c.env.chain.goal_reward.to_string(),
    ];
    debug_assert_eq!(values.len(), KEYS.len());
    let mut out = String::new();
    for (k, v) in KEYS.iter().zip(values) {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config_str("", &[]).unwrap();
        assert_eq!(c, TrainConfig::default());
        let c = parse_config_str("# nothing here\n\n   \n", &[]).unwrap();
        assert_eq!(c, TrainConfig::default());
    }

    #[test]
    fn out_of_range_gamma_names_the_key() {
        let err = parse_config_str("gamma = 1.5", &[]).unwrap_err();
        match &err {
            ConfigError::Constraint { key, .. } => assert_eq!(key, "gamma"),
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("gamma"));
    }

    #[test]
    fn overrides_beat_the_file() {
        let c = parse_config_str("adversary = cons\n", &[ov("adversary", "cvar")]).unwrap();
        assert_eq!(c.variant, Variant::Cvar);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(parse_config_str("alpah = 1", &[]), Err(ConfigError::UnknownKey(k)) if k == "alpah"));
        assert!(matches!(parse_config_str("", &[ov("nope", "1")]), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(parse_config_str("batch_size = many", &[]), Err(ConfigError::Invalid { key, .. }) if key == "batch_size"));
        assert!(matches!(parse_config_str("just words", &[]), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_config_str("tau = nan", &[]), Err(ConfigError::Invalid { .. })));
        assert!(matches!(parse_config_str("hazard.center = 1", &[]), Err(ConfigError::Invalid { .. })));
        assert!(matches!(parse_config_str("adversary = tqc", &[]), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn env_sets_its_own_defaults() {
        let c = parse_config_str("env = risky_chain", &[]).unwrap();
        assert_eq!(c.env.kind, EnvKind::RiskyChain);
        assert_eq!(c.env.horizon, 20);
        let c = parse_config_str("horizon = 7\nenv = risky_chain", &[]).unwrap();
        assert_eq!(c.env.horizon, 7);
    }

    #[test]
    fn comments_and_spacing() {
        let c = parse_config_str("  seed=4 # trailing\nhidden = 16, 8\nbeta_fixed = 0\n", &[]).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.hidden, vec![16, 8]);
        assert_eq!(c.beta_fixed, Some(0.0));
    }

    #[test]
    fn render_round_trips() {
        let mut c = TrainConfig::default();
        c.tau = 0.1 + 0.2;
        c.target_entropy = Some(-1.25);
        c.env.hazard.hazard_center = [0.9, -0.123456789012345];
        c.variant = Variant::Msd;
        let text = render(&c);
        assert_eq!(parse_config_str(&text, &[]).unwrap(), c);
        assert_eq!(text.lines().count(), KEYS.len());
        for env in ["constrained_pendulum", "risky_chain"] {
            let c = parse_config_str(&format!("env = {env}"), &[]).unwrap();
            assert_eq!(parse_config_str(&render(&c), &[]).unwrap(), c);
        }
    }
}

//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key has a default, so
//! an empty document is valid. Unknown or repeated keys are rejected with the
//! offending line number.

use std::fmt;
use std::str::FromStr;

use finitekey::{ChannelConfig, OptimizationSpec, ProtocolConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line, `None` for whole-document validation failures.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn global(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub channel: ChannelConfig,
    pub protocol: ProtocolConfig,
    pub optimization: OptimizationSpec,
}

type Getter = fn(&RunConfig) -> String;
type Setter = fn(&mut RunConfig, &str) -> Result<(), String>;

struct Field {
    key: &'static str,
    doc: &'static str,
    get: Getter,
    set: Setter,
}

fn parse<V: FromStr>(s: &str) -> Result<V, String>
where
    V::Err: fmt::Display,
{
    s.parse::<V>().map_err(|e| format!("cannot parse `{s}`: {e}"))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [lo, hi] => Ok((parse(lo)?, parse(hi)?)),
        _ => Err(format!("expected `low, high`, got `{s}`")),
    }
}

fn parse_points(s: &str) -> Result<Vec<[f64; 5]>, String> {
    s.split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let xs = p.split(',').map(|x| parse::<f64>(x.trim())).collect::<Result<Vec<_>, _>>()?;
            <[f64; 5]>::try_from(xs).map_err(|v| format!("start point needs 5 values, got {}", v.len()))
        })
        .collect()
}

fn show_points(points: &[[f64; 5]]) -> String {
    points
        .iter()
        .map(|p| p.map(|x| format!("{x:?}")).join(", "))
        .collect::<Vec<_>>()
        .join("; ")
}

macro_rules! field {
    ($key:literal, $doc:literal, |$c:ident| $place:expr, $ty:ty) => {
        Field {
            key: $key,
            doc: $doc,
            get: |$c: &RunConfig| format!("{:?}", $place),
            set: |$c: &mut RunConfig, s: &str| {
                $place = parse::<$ty>(s)?;
                Ok(())
            },
        }
    };
}

macro_rules! range_field {
    ($key:literal, $doc:literal, $i:expr) => {
        Field {
            key: $key,
            doc: $doc,
            get: |c: &RunConfig| {
                let (lo, hi) = c.optimization.bounds[$i];
                format!("{lo:?}, {hi:?}")
            },
            set: |c: &mut RunConfig, s: &str| {
                c.optimization.bounds[$i] = parse_range(s)?;
                Ok(())
            },
        }
    };
}

const FIELDS: &[Field] = &[
    field!("fiber_length_km", "fiber length", |c| c.channel.fiber_length_km, f64),
    field!("attenuation_db_per_km", "fiber loss", |c| c.channel.attenuation_db_per_km, f64),
    field!("detector_efficiency", "detector efficiency", |c| c.channel.detector_efficiency, f64),
    field!("dark_count_prob", "dark count probability per gate and detector", |c| c.channel.dark_count_prob, f64),
    field!("afterpulse_prob", "afterpulse probability", |c| c.channel.afterpulse_prob, f64),
    field!("receiver_loss_db", "receiver loss", |c| c.channel.receiver_loss_db, f64),
    field!("misalignment_error", "optical error probability", |c| c.channel.misalignment_error, f64),
    field!("num_detectors", "detectors", |c| c.channel.num_detectors, u32),
    field!("clock_rate_hz", "source repetition rate", |c| c.protocol.clock_rate_hz, f64),
    field!("acquisition_time_s", "acquisition time", |c| c.protocol.acquisition_time_s, f64),
    Field {
        key: "p_x",
        doc: "X basis probability",
        get: |c| format!("{:?}", c.protocol.p_x()),
        set: |c, s| {
            c.protocol.p_z = 1.0 - parse::<f64>(s)?;
            Ok(())
        },
    },
    field!("p_u", "signal class probability", |c| c.protocol.class_probs[0], f64),
    field!("p_v", "decoy class probability", |c| c.protocol.class_probs[1], f64),
    field!("p_w", "vacuum class probability", |c| c.protocol.class_probs[2], f64),
    field!("u", "signal intensity", |c| c.protocol.intensities[0], f64),
    field!("v", "decoy intensity", |c| c.protocol.intensities[1], f64),
    field!("w", "vacuum intensity", |c| c.protocol.intensities[2], f64),
    field!("gamma", "basis quality factor", |c| c.protocol.gamma, f64),
    field!("eps_sec", "secrecy parameter", |c| c.protocol.eps_sec, f64),
    field!("eps_ver", "verification failure probability", |c| c.protocol.eps_ver, f64),
    field!("q_tol_cap", "upper limit on the tolerated phase error", |c| c.protocol.q_tol_cap, f64),
    field!("photon_cutoff", "highest photon number kept in the decoy program", |c| c.protocol.photon_cutoff, usize),
    field!("ec_efficiency", "error correction inefficiency", |c| c.protocol.ec_efficiency, f64),
    field!("z1_dominance_ratio", "required n_Z1 / n_X1 ratio", |c| c.protocol.z1_dominance_ratio, f64),
    field!("seed", "optimizer and Monte Carlo seed", |c| c.optimization.seed, u64),
    field!("opt_starts", "optimizer start points", |c| c.optimization.starts, usize),
    field!("opt_max_evals", "optimizer evaluation budget", |c| c.optimization.max_evals, usize),
    field!("opt_sweeps", "coordinate sweeps per start", |c| c.optimization.sweeps, usize),
    field!("opt_line_evals", "evaluations per line search", |c| c.optimization.line_evals, usize),
    range_field!("opt_p_x_range", "search box for p_x", 0),
    range_field!("opt_p_u_range", "search box for p_u", 1),
    range_field!("opt_p_v_range", "search box for p_v", 2),
    range_field!("opt_u_range", "search box for u", 3),
    range_field!("opt_v_range", "search box for v", 4),
    Field {
        key: "opt_extra_starts",
        doc: "fixed start points p_x, p_u, p_v, u, v separated by `;`",
        get: |c| show_points(&c.optimization.extra_starts),
        set: |c, s| {
            c.optimization.extra_starts = parse_points(s)?;
            Ok(())
        },
    },
];

impl RunConfig {
    /// Every recognized key, in document order.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        FIELDS.iter().map(|f| f.key)
    }

    /// Set one key from its textual value, without whole-document validation.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let field = FIELDS
            .iter()
            .find(|f| f.key == key)
            .ok_or_else(|| format!("unknown key `{key}`"))?;
        (field.set)(self, value)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        FIELDS.iter().find(|f| f.key == key).map(|f| (f.get)(self))
    }

    /// Parse a document on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<(&'static str, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line, format!("expected `key = value`, got `{body}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let field = FIELDS
                .iter()
                .find(|f| f.key == key)
                .ok_or_else(|| ConfigError::at(line, format!("unknown key `{key}`")))?;
            if let Some(&(_, first)) = seen.iter().find(|(k, _)| *k == field.key) {
                return Err(ConfigError::at(line, format!("`{key}` already set on line {first}")));
            }
            seen.push((field.key, line));
            (field.set)(&mut cfg, value).map_err(|m| ConfigError::at(line, format!("`{key}`: {m}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.channel
            .validate()
            .and_then(|_| self.protocol.validate())
            .and_then(|_| self.optimization.validate())
            .map_err(|e| ConfigError::global(e.to_string()))
    }

    /// The full document, every key present, readable by [`RunConfig::parse`].
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        for f in FIELDS {
            out.push_str(&format!("# {}\n{} = {}\n", f.doc, f.key, (f.get)(self)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# nothing\n\n   \n").unwrap(), RunConfig::default());
    }

    #[test]
    fn document_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.channel.fiber_length_km = 73.25;
        cfg.channel.misalignment_error = 0.1 + 0.2;
        cfg.protocol.p_z = 0.9;
        cfg.protocol.class_probs = [0.7, 0.2, 0.1];
        cfg.optimization.seed = 99;
        cfg.optimization.bounds[3] = (0.123, 0.876);
        cfg.optimization.extra_starts = vec![[0.1, 0.6, 0.2, 0.5, 0.05]];
        let doc = cfg.to_document();
        assert_eq!(RunConfig::parse(&doc).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_document()).unwrap(), RunConfig::default());
    }

    #[test]
    fn every_key_is_emitted_once() {
        let doc = RunConfig::default().to_document();
        for k in RunConfig::keys() {
            let n = doc.lines().filter(|l| l.starts_with(&format!("{k} = "))).count();
            assert_eq!(n, 1, "{k}");
        }
    }

    #[test]
    fn inline_comments_and_spacing() {
        let cfg = RunConfig::parse("fiber_length_km=80 # long link\n  seed   =  3\n").unwrap();
        assert_eq!(cfg.channel.fiber_length_km, 80.0);
        assert_eq!(cfg.optimization.seed, 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = RunConfig::parse("seed = 1\n\nbogus = 2\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.message.contains("bogus"));

        let e = RunConfig::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.to_string().starts_with("line 2:"));

        let e = RunConfig::parse("# c\nu = abc\n").unwrap_err();
        assert_eq!(e.line, Some(2));

        let e = RunConfig::parse("just words\n").unwrap_err();
        assert_eq!(e.line, Some(1));

        let e = RunConfig::parse("opt_u_range = 0.1\n").unwrap_err();
        assert_eq!(e.line, Some(1));
    }

    #[test]
    fn invalid_combination_is_rejected_whole() {
        // class probabilities no longer sum to one
        let e = RunConfig::parse("p_u = 0.5\n").unwrap_err();
        assert_eq!(e.line, None);
        let e = RunConfig::parse("detector_efficiency = 1.5\n").unwrap_err();
        assert_eq!(e.line, None);
    }

    #[test]
    fn set_and_get() {
        let mut cfg = RunConfig::default();
        cfg.set("p_x", "0.25").unwrap();
        assert_eq!(cfg.get("p_x").unwrap(), "0.25");
        assert_eq!(cfg.get("eps_ver").unwrap(), "1e-15");
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.get("nope").is_none());
    }
}

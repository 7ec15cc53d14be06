//! Run configuration: defaults per subcommand, then a flat `key = value`
//! config file (or the `config` object of an earlier JSON report), then flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {msg}")]
    File { path: String, msg: String },
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    Value { key: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Curvature,
    Certify,
    DimensionTable,
    VerifyLemmas,
    VariationCheck,
    SlicingDemo,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Curvature => "curvature",
            Subcommand::Certify => "certify",
            Subcommand::DimensionTable => "dimension-table",
            Subcommand::VerifyLemmas => "verify-lemmas",
            Subcommand::VariationCheck => "variation-check",
            Subcommand::SlicingDemo => "slicing-demo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Pretty,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameChoice {
    /// Gram-Schmidt of the coordinate axes in chart order.
    Axes,
    /// Axes of flat-torus factors first, then the rest.
    TorusFirst,
    /// Haar-random frame from the run seed.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteChoice {
    Oracle,
    Analytic,
    Fd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expect {
    Positive,
    Nonnegative,
    Indefinite,
}

macro_rules! keyword_enum {
    ($ty:ty, $($text:literal => $val:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($val),)+
                    _ => Err(format!("expected one of: {}", [$($text),+].join(", "))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self { $(v if *v == $val => $text,)+ _ => unreachable!() };
                f.write_str(s)
            }
        }
    };
}

keyword_enum!(Format, "pretty" => Format::Pretty, "json" => Format::Json, "csv" => Format::Csv);
keyword_enum!(FrameChoice, "axes" => FrameChoice::Axes, "torus-first" => FrameChoice::TorusFirst, "random" => FrameChoice::Random);
keyword_enum!(RouteChoice, "oracle" => RouteChoice::Oracle, "analytic" => RouteChoice::Analytic, "fd" => RouteChoice::Fd);
keyword_enum!(Expect, "positive" => Expect::Positive, "nonnegative" => Expect::Nonnegative, "indefinite" => Expect::Indefinite);

/// Fully resolved configuration; echoed in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub model: String,
    pub m: usize,
    /// Ambient dimension for `verify-lemmas`.
    pub n: usize,
    pub n_max: usize,
    pub seed: u64,
    pub resolution: usize,
    pub restarts: usize,
    pub trials: usize,
    pub points: usize,
    pub tolerance_scale: f64,
    pub route: RouteChoice,
    pub frame: FrameChoice,
    pub amplitude: f64,
    pub refine: bool,
    pub expect: Option<Expect>,
    pub force_coefficient: bool,
    pub dump_dir: Option<String>,
    pub format: Format,
    pub output: Option<String>,
}

impl RunConfig {
    pub fn defaults(sub: Subcommand) -> Self {
        let (model, m) = match sub {
            Subcommand::Certify => ("product(sphere(2,1.0),torus(2))", 3),
            Subcommand::VerifyLemmas => ("", 3),
            Subcommand::SlicingDemo => ("", 2),
            _ => ("sphere(4,1.0)", 2),
        };
        RunConfig {
            subcommand: sub,
            model: model.to_string(),
            m,
            n: 7,
            n_max: 12,
            seed: 0,
            resolution: if sub == Subcommand::SlicingDemo { 32 } else { 64 },
            restarts: 32,
            trials: match sub {
                Subcommand::VerifyLemmas => 10_000,
                _ => 4,
            },
            points: match sub {
                Subcommand::Certify => 8,
                // positivity-certificate grid of the theorem gate
                Subcommand::SlicingDemo => 512,
                _ => 1,
            },
            tolerance_scale: 1.0,
            route: RouteChoice::Oracle,
            frame: FrameChoice::Axes,
            amplitude: 0.05,
            refine: false,
            expect: None,
            force_coefficient: false,
            dump_dir: None,
            format: Format::Pretty,
            output: None,
        }
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::Value { key: key.into(), msg: e.to_string() })
        }
        let opt = |v: &str| (!v.is_empty() && v != "none" && v != "null").then(|| v.to_string());
        match key.replace('-', "_").as_str() {
            "subcommand" => {}
            "model" => self.model = value.to_string(),
            "m" => self.m = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "n_max" => self.n_max = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "resolution" => self.resolution = parse(key, value)?,
            "restarts" => self.restarts = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "points" => self.points = parse(key, value)?,
            "tolerance_scale" => self.tolerance_scale = parse(key, value)?,
            "route" => self.route = parse(key, value)?,
            "frame" => self.frame = parse(key, value)?,
            "amplitude" => self.amplitude = parse(key, value)?,
            "refine" => self.refine = parse(key, value)?,
            "expect" => self.expect = opt(value).map(|v| parse(key, &v)).transpose()?,
            "force_coefficient" => self.force_coefficient = parse(key, value)?,
            "dump_dir" => self.dump_dir = opt(value),
            "format" => self.format = parse(key, value)?,
            "output" => self.output = opt(value),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| Err(ConfigError::Value { key: key.into(), msg: msg.into() });
        if !(self.tolerance_scale > 0.0 && self.tolerance_scale.is_finite()) {
            return bad("tolerance_scale", "must be positive");
        }
        if self.resolution < 8 {
            return bad("resolution", "must be at least 8");
        }
        if self.trials == 0 || self.points == 0 || self.restarts == 0 {
            return bad("trials/points/restarts", "must be positive");
        }
        if !self.amplitude.is_finite() || self.amplitude.abs() > 0.5 {
            return bad("amplitude", "must lie in [-0.5, 0.5]");
        }
        Ok(())
    }
}

/// Key/value pairs from a config file. JSON input is read as a report and its
/// `config` object is used, so a report can be re-run directly.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let file_err = |msg: String| ConfigError::File { path: path.display().to_string(), msg };
    let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        return json_pairs(v.get("config").unwrap_or(&v)).ok_or_else(|| file_err("expected a JSON object".into()));
    }
    parse_flat(&text)
}

fn json_pairs(v: &serde_json::Value) -> Option<BTreeMap<String, String>> {
    let obj = v.as_object()?;
    Some(
        obj.iter()
            .map(|(k, v)| {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Null => String::new(),
                    other => other.to_string(),
                };
                (k.clone(), s)
            })
            .collect(),
    )
}

pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, msg: "expected `key = value`".into() })?;
        let v = v.trim();
        let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
        out.insert(k.trim().to_string(), v.to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_file_round_trip() {
        let kv = parse_flat("# run\nmodel = \"torus(4)\"\nm = 2  # order\nformat=json\n").unwrap();
        let mut cfg = RunConfig::defaults(Subcommand::Curvature);
        for (k, v) in &kv {
            cfg.set(k, v).unwrap();
        }
        assert_eq!(cfg.model, "torus(4)");
        assert_eq!(cfg.format, Format::Json);
    }

    #[test]
    fn json_echo_reapplies() {
        let mut cfg = RunConfig::defaults(Subcommand::SlicingDemo);
        cfg.seed = 9;
        cfg.expect = Some(Expect::Positive);
        let v = serde_json::to_value(&cfg).unwrap();
        let mut back = RunConfig::defaults(Subcommand::SlicingDemo);
        for (k, s) in json_pairs(&v).unwrap() {
            back.set(&k, &s).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut cfg = RunConfig::defaults(Subcommand::Certify);
        assert!(matches!(cfg.set("colour", "red"), Err(ConfigError::UnknownKey(_))));
        assert!(cfg.set("m", "two").is_err());
        assert!(cfg.set("format", "xml").is_err());
    }
}

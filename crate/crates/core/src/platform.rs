//! Platform budgets, per-operation cost tables and the TOML/JSON config file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::ConfigError;
use crate::ir::OpKind;

/// One value per arithmetic op kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpTable {
    pub add: u64,
    pub sub: u64,
    pub mul: u64,
    pub div: u64,
}

impl OpTable {
    pub fn get(&self, op: OpKind) -> u64 {
        match op {
            OpKind::Add => self.add,
            OpKind::Sub => self.sub,
            OpKind::Mul => self.mul,
            OpKind::Div => self.div,
        }
    }

    fn merge(&mut self, raw: &RawOpTable) {
        self.add = raw.add.unwrap_or(self.add);
        self.sub = raw.sub.unwrap_or(self.sub);
        self.mul = raw.mul.unwrap_or(self.mul);
        self.div = raw.div.unwrap_or(self.div);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub dsp_available: u64,
    pub mem_bytes: u64,
    pub max_part: u64,
    pub il_par: OpTable,
    pub il_red: OpTable,
    pub dsp_cost: OpTable,
    pub reuse_opt: bool,
    pub tree_reduction: bool,
    pub burst_cap_bits: u32,
    pub clock_mhz: f64,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            dsp_available: 6840,
            mem_bytes: 7_200_000,
            max_part: 1024,
            il_par: OpTable { add: 4, sub: 4, mul: 3, div: 15 },
            il_red: OpTable { add: 4, sub: 4, mul: 3, div: 15 },
            dsp_cost: OpTable { add: 2, sub: 2, mul: 3, div: 0 },
            reuse_opt: true,
            tree_reduction: false,
            burst_cap_bits: 512,
            clock_mhz: 250.0,
        }
    }
}

impl PlatformConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.max_part < 1 {
            return bad("max_part must be at least 1");
        }
        if self.burst_cap_bits != 512 {
            return bad("burst_cap_bits must be 512");
        }
        if !(self.clock_mhz > 0.0 && self.clock_mhz.is_finite()) {
            return bad("clock_mhz must be positive");
        }
        for op in OpKind::ALL {
            if self.il_par.get(op) == 0 || self.il_red.get(op) == 0 {
                return bad(&format!("latency of `{op}` must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub budget_seconds: Option<f64>,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub platform: PlatformConfig,
    pub solver: SolverConfig,
    /// Variable path to value, in file order of keys (sorted).
    pub pins: BTreeMap<String, String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOpTable {
    add: Option<u64>,
    sub: Option<u64>,
    mul: Option<u64>,
    div: Option<u64>,
}

fn number<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum N {
        I(u64),
        F(f64),
    }
    Ok(match Option::<N>::deserialize(d)? {
        None => None,
        Some(N::I(v)) => Some(v),
        Some(N::F(f)) if f >= 0.0 && f.fract() == 0.0 && f < 1e18 => Some(f as u64),
        Some(N::F(f)) => return Err(serde::de::Error::custom(format!("expected a non-negative whole number, found {f}"))),
    })
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPlatform {
    #[serde(default, deserialize_with = "number")]
    dsp_available: Option<u64>,
    #[serde(default, deserialize_with = "number")]
    mem_bytes: Option<u64>,
    #[serde(default, deserialize_with = "number")]
    max_part: Option<u64>,
    il_par: Option<RawOpTable>,
    il_red: Option<RawOpTable>,
    dsp_cost: Option<RawOpTable>,
    reuse_opt: Option<bool>,
    tree_reduction: Option<bool>,
    burst_cap_bits: Option<u32>,
    clock_mhz: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOps {
    latency: Option<RawOpTable>,
    reduction_latency: Option<RawOpTable>,
    dsp: Option<RawOpTable>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    platform: Option<RawPlatform>,
    ops: Option<RawOps>,
    solver: Option<SolverConfig>,
    pins: Option<BTreeMap<String, serde_json::Value>>,
}

fn pin_value(v: &serde_json::Value) -> Result<String, ConfigError> {
    Ok(match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Bool(b) => b.to_string(),
        serde_json::Value::Number(n) => n.to_string(),
        serde_json::Value::Array(items) => items.iter().map(pin_value).collect::<Result<Vec<_>, _>>()?.join(","),
        other => return Err(ConfigError::Invalid(format!("unsupported pin value {other}"))),
    })
}

fn from_raw(raw: RawConfig) -> Result<Config, ConfigError> {
    let mut p = PlatformConfig::default();
    if let Some(rp) = raw.platform {
        p.dsp_available = rp.dsp_available.unwrap_or(p.dsp_available);
        p.mem_bytes = rp.mem_bytes.unwrap_or(p.mem_bytes);
        p.max_part = rp.max_part.unwrap_or(p.max_part);
        p.reuse_opt = rp.reuse_opt.unwrap_or(p.reuse_opt);
        p.tree_reduction = rp.tree_reduction.unwrap_or(p.tree_reduction);
        p.burst_cap_bits = rp.burst_cap_bits.unwrap_or(p.burst_cap_bits);
        p.clock_mhz = rp.clock_mhz.unwrap_or(p.clock_mhz);
        if let Some(t) = &rp.il_par {
            p.il_par.merge(t);
        }
        if let Some(t) = &rp.il_red {
            p.il_red.merge(t);
        }
        if let Some(t) = &rp.dsp_cost {
            p.dsp_cost.merge(t);
        }
    }
    if let Some(ops) = raw.ops {
        if let Some(t) = &ops.latency {
            p.il_par.merge(t);
        }
        if let Some(t) = &ops.reduction_latency {
            p.il_red.merge(t);
        }
        if let Some(t) = &ops.dsp {
            p.dsp_cost.merge(t);
        }
    }
    p.validate()?;
    let solver = raw.solver.unwrap_or_default();
    if let Some(b) = solver.budget_seconds {
        if !(b > 0.0) {
            return Err(ConfigError::Invalid("solver.budget_seconds must be positive".into()));
        }
    }
    let mut pins = BTreeMap::new();
    for (k, v) in raw.pins.unwrap_or_default() {
        pins.insert(k, pin_value(&v)?);
    }
    Ok(Config { platform: p, solver, pins })
}

/// Parses TOML config text.
pub fn parse_toml(text: &str) -> Result<Config, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    from_raw(raw)
}

/// Parses JSON config text: either the sectioned layout or a flat platform object.
pub fn parse_json(text: &str) -> Result<Config, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let sectioned = value
        .as_object()
        .is_some_and(|o| o.keys().all(|k| matches!(k.as_str(), "platform" | "ops" | "solver" | "pins")));
    let raw = if sectioned {
        serde_json::from_value(value)
    } else {
        serde_json::from_value::<RawPlatform>(value).map(|p| RawConfig { platform: Some(p), ..Default::default() })
    }
    .map_err(|e| ConfigError::Parse(e.to_string()))?;
    from_raw(raw)
}

/// Loads a config file; `.json` files are read as JSON, anything else as TOML.
pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    if !path.exists() {
        return Err(ConfigError::NotFound(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        parse_json(&text)
    } else {
        parse_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_matches_defaults() {
        let text = include_str!("../configs/u200.toml");
        let cfg = parse_toml(text).unwrap();
        assert_eq!(cfg.platform, PlatformConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = parse_toml(
            "[platform]\ndsp_available = 2000\nmem_bytes = 3.2e5\n[ops.dsp]\nadd = 1\n[solver]\nbudget_seconds = 5\n[pins]\n\"S1.perm\" = \"k,j,i\"\n\"S1.i.tc\" = [4, 50, 1]\n",
        )
        .unwrap();
        assert_eq!(cfg.platform.dsp_available, 2000);
        assert_eq!(cfg.platform.mem_bytes, 320_000);
        assert_eq!(cfg.platform.dsp_cost.add, 1);
        assert_eq!(cfg.platform.dsp_cost.mul, 3);
        assert_eq!(cfg.solver.budget_seconds, Some(5.0));
        assert_eq!(cfg.pins["S1.i.tc"], "4,50,1");
    }

    #[test]
    fn flat_json_is_accepted() {
        let cfg = parse_json(r#"{"dsp_available": 64, "mem_bytes": 4096, "il_par": {"mul": 5}}"#).unwrap();
        assert_eq!(cfg.platform.dsp_available, 64);
        assert_eq!(cfg.platform.il_par.mul, 5);
        assert_eq!(cfg.platform.il_par.add, 4);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(parse_toml("[platform]\nmax_part = 0\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(parse_toml("[platform]\nburst_cap_bits = 256\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(parse_toml("[platfrom]\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(load_config(Path::new("/nonexistent/x.toml")), Err(ConfigError::NotFound(_))));
    }
}

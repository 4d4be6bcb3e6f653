//! Flat JSON config holding tracking-problem and solver fields side by side.

use std::path::Path;

use anyhow::{bail, Context, Result};
use lingp_mpc::scp::{ScpConfig, TrackingMpcSpec};
use serde_json::{Map, Value};

pub struct MpcConfig {
    pub spec: TrackingMpcSpec,
    pub scp: ScpConfig,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            spec: TrackingMpcSpec::default(),
            scp: ScpConfig::default(),
        }
    }
}

fn field_names(value: serde_json::Result<Value>) -> Vec<String> {
    match value {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

impl MpcConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let Value::Object(all) = serde_json::from_str(text)? else {
            bail!("config must be a JSON object");
        };
        let spec_keys = field_names(serde_json::to_value(TrackingMpcSpec::default()));
        let scp_keys = field_names(serde_json::to_value(ScpConfig::default()));
        let (mut spec, mut scp) = (Map::new(), Map::new());
        for (k, v) in all {
            if spec_keys.contains(&k) {
                spec.insert(k, v);
            } else if scp_keys.contains(&k) {
                scp.insert(k, v);
            } else {
                bail!("unknown config field '{k}'");
            }
        }
        let config = Self {
            spec: serde_json::from_value(Value::Object(spec)).context("tracking fields")?,
            scp: serde_json::from_value(Value::Object(scp)).context("solver fields")?,
        };
        config.spec.validate()?;
        config.scp.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Self::from_json(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

/// `a:b:c` (start, stop inclusive, step) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<usize>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}"));
    match parts.as_slice() {
        [one] => one.split(',').map(num).collect(),
        [a, b, c] => {
            let (a, b, c) = (num(a)?, num(b)?, num(c)?);
            if c == 0 || a > b {
                return Err("grid needs start ≤ stop and a positive step".into());
            }
            Ok((a..=b).step_by(c).collect())
        }
        _ => Err("expected start:stop:step or a comma list".into()),
    }
}

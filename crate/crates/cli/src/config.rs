//! Flat key = value configuration with one level of [section] headers.
//! Unknown sections or keys are rejected before any computation runs.

use rp4bp::{Error, Result};
use std::collections::BTreeMap;

/// Accepted sections and keys. Anything else is a configuration error.
const SCHEMA: &[(&str, &[&str])] = &[
    ("global", &["mu", "out", "tol_rel", "tol_abs", "threads"]),
    ("family", &["point", "j_target", "max_orbits"]),
    ("manifold", &["point", "kind", "side", "j", "d0", "t_max", "n_phases"]),
    ("heteroclinic", &["j", "d0", "t_max", "n_phases", "angle_floor"]),
    ("hill", &["j"]),
    ("planet", &["m", "k", "e_target"]),
    (
        "fourbody",
        &["delta", "c", "h_offset", "h_window", "n_nu", "delta_squared"],
    ),
    ("gtl", &["h0_offset", "h_plus_offset", "sigma", "beta0", "nu_max", "dnu", "n_nu"]),
    (
        "diffuse",
        &["h0_offset", "budget", "hysteresis", "tube_radius", "refresh_tol", "substeps"],
    ),
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::from("global");
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Domain(format!(
                    "config line {}: expected key = value, got {line:?}",
                    lineno + 1
                )));
            };
            sections
                .entry(current.clone())
                .or_default()
                .insert(k.trim().to_string(), v.trim().to_string());
        }
        let cfg = Self { sections };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        for (sec, keys) in &self.sections {
            let Some((_, allowed)) = SCHEMA.iter().find(|(s, _)| s == sec) else {
                return Err(Error::Domain(format!("unknown config section [{sec}]")));
            };
            for k in keys.keys() {
                if !allowed.contains(&k.as_str()) {
                    return Err(Error::Domain(format!(
                        "unknown config key {k:?} in section [{sec}]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Apply a `section.key=value` override (the --set flag).
    pub fn set(&mut self, spec: &str) -> Result<()> {
        let Some((path, value)) = spec.split_once('=') else {
            return Err(Error::Domain(format!("--set expects section.key=value, got {spec:?}")));
        };
        let Some((sec, key)) = path.trim().split_once('.') else {
            return Err(Error::Domain(format!("--set expects section.key=value, got {spec:?}")));
        };
        self.sections
            .entry(sec.trim().to_string())
            .or_default()
            .insert(key.trim().to_string(), value.trim().to_string());
        self.validate()
    }

    pub fn get(&self, sec: &str, key: &str) -> Option<&str> {
        self.sections.get(sec).and_then(|m| m.get(key)).map(String::as_str)
    }

    pub fn f64(&self, sec: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(sec, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Domain(format!("config [{sec}] {key} = {v:?} is not a number"))
            }),
        }
    }

    pub fn require_f64(&self, sec: &str, key: &str) -> Result<f64> {
        self.get(sec, key)
            .ok_or_else(|| Error::Domain(format!("config [{sec}] is missing required key {key}")))?
            .parse()
            .map_err(|_| Error::Domain(format!("config [{sec}] {key} is not a number")))
    }

    pub fn u64(&self, sec: &str, key: &str, default: u64) -> Result<u64> {
        match self.get(sec, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Domain(format!("config [{sec}] {key} = {v:?} is not an integer"))
            }),
        }
    }

    pub fn bool(&self, sec: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(sec, key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(v) => {
                Err(Error::Domain(format!("config [{sec}] {key} = {v:?} is not a boolean")))
            }
        }
    }

    pub fn str(&self, sec: &str, key: &str, default: &str) -> String {
        self.get(sec, key).unwrap_or(default).to_string()
    }

    /// Canonical text of the whole config: sorted sections and keys, one
    /// key = value per line. Fingerprints are derived from subsets of this.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (sec, keys) in &self.sections {
            for (k, v) in keys {
                out.push_str(&format!("{sec}.{k}={v}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_rejects_unknown_keys() {
        let cfg = RunConfig::parse("mu = 0.01\n[family]\nj_target = 3.03 # inline\n").unwrap();
        assert_eq!(cfg.require_f64("global", "mu").unwrap(), 0.01);
        assert_eq!(cfg.require_f64("family", "j_target").unwrap(), 3.03);
        assert!(RunConfig::parse("[family]\nbogus = 1\n").is_err());
        assert!(RunConfig::parse("[nosuch]\nj = 1\n").is_err());
        assert!(RunConfig::parse("not a pair\n").is_err());
    }

    #[test]
    fn overrides_follow_the_schema() {
        let mut cfg = RunConfig::parse("mu = 0.01\n").unwrap();
        cfg.set("family.j_target=3.05").unwrap();
        assert_eq!(cfg.require_f64("family", "j_target").unwrap(), 3.05);
        assert!(cfg.set("family.bogus=1").is_err());
        assert!(cfg.set("badly formed").is_err());
    }

    #[test]
    fn canonical_text_is_sorted_and_stable() {
        let a = RunConfig::parse("[planet]\nm = 63\nk = 1\n[global]\nmu = 0.01\n").unwrap();
        let b = RunConfig::parse("mu = 0.01\n[planet]\nk = 1\nm = 63\n").unwrap();
        assert_eq!(a.canonical(), b.canonical());
    }
}

//! Plain-text key=value configuration with precedence CLI > file > defaults.
//! Unknown keys are rejected up front so typos cannot silently no-op.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::{Error, Result};

/// Merged settings for one command run.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn parse_kv_line(line: &str, lineno: usize) -> Result<Option<(String, String)>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("config line {lineno}: expected key=value")))?;
    let key = k.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("config line {lineno}: empty key")));
    }
    Ok(Some((key.to_string(), v.trim().to_string())))
}

impl RunConfig {
    /// Parses a config file body.
    pub fn from_file_text(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if let Some((k, v)) = parse_kv_line(line, i + 1)? {
                values.insert(k, v);
            }
        }
        Ok(Self { values })
    }

    /// Applies command-line flags on top; `--some-key value` or
    /// `--some-key=value` both set `some_key`.
    pub fn apply_cli(&mut self, args: &[String]) -> Result<()> {
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let flag = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected a --flag, got {arg:?}")))?;
            let (key, value) = if let Some((k, v)) = flag.split_once('=') {
                (k.to_string(), v.to_string())
            } else {
                i += 1;
                let v = args
                    .get(i)
                    .ok_or_else(|| Error::Config(format!("flag --{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            };
            if key.is_empty() {
                return Err(Error::Config("empty flag name".into()));
            }
            self.values.insert(key.replace('-', "_"), value);
            i += 1;
        }
        Ok(())
    }

    /// Rejects any key outside the command's vocabulary.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.values.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        self.values.get(key).cloned().unwrap_or_else(|| default.to_string())
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.values
            .get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse()
            .map_err(|_| Error::Config(format!("key {key:?}: cannot parse value {raw:?}")))
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => self.parse(key, raw),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => self.parse(key, raw),
        }
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => self.parse(key, raw),
        }
    }

    /// Comma-separated list of numbers.
    pub fn get_usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw.split(',').map(|s| self.parse(key, s.trim())).collect(),
        }
    }
}

/// Builds the merged config for one command: defaults are supplied by the
/// getters, the optional `--config PATH` file sits in the middle, remaining
/// flags override.
pub fn load_config(args: &[String]) -> Result<RunConfig> {
    // pull --config out first; its position among the flags is irrelevant
    let mut rest = Vec::new();
    let mut file: Option<PathBuf> = None;
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--config" {
            i += 1;
            let v = args
                .get(i)
                .ok_or_else(|| Error::Config("--config needs a path".into()))?;
            file = Some(PathBuf::from(v));
        } else if let Some(v) = args[i].strip_prefix("--config=") {
            file = Some(PathBuf::from(v));
        } else {
            rest.push(args[i].clone());
        }
        i += 1;
    }
    let mut cfg = match file {
        None => RunConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            RunConfig::from_file_text(&text)?
        }
    };
    cfg.apply_cli(&rest)?;
    Ok(cfg)
}

/// Worker pool size: `DENSEREG_THREADS` beats the config key, which beats the
/// machine's core count.
pub fn thread_count(cfg: &RunConfig) -> Result<usize> {
    if let Ok(raw) = std::env::var("DENSEREG_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| Error::Config(format!("DENSEREG_THREADS: bad value {raw:?}")))?;
        if n == 0 {
            return Err(Error::Config("DENSEREG_THREADS must be positive".into()));
        }
        return Ok(n);
    }
    let default = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let n = cfg.get_usize("threads", default)?;
    if n == 0 {
        return Err(Error::Config("threads must be positive".into()));
    }
    Ok(n)
}

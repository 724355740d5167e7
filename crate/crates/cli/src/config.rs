//! `key = value` configuration files. Command-line flags override file
//! values; endpoint settings may also come from `MPR_ENDPOINT_*` variables.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

pub const ENV_URL: &str = "MPR_ENDPOINT_URL";
pub const ENV_TOKEN: &str = "MPR_ENDPOINT_TOKEN";
pub const ENV_MODEL: &str = "MPR_ENDPOINT_MODEL";
pub const ENV_ATTEMPTS: &str = "MPR_ENDPOINT_ATTEMPTS";

const KNOWN_KEYS: [&str; 16] = [
    "probes",
    "gallery",
    "truth",
    "k",
    "out",
    "reference",
    "catalog",
    "endpoint_url",
    "endpoint_token",
    "endpoint_model",
    "endpoint_attempts",
    "endpoint_backoff_ms",
    "endpoint_timeout_s",
    "token_budget",
    "workers",
    "vocab",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Blank lines and `#` comments are skipped; keys are case-insensitive
    /// and `-` is read as `_`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key=value", n + 1);
            };
            let key = key.trim().to_lowercase().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key {key:?}", n + 1);
            }
            let value = value.trim().trim_matches('"').to_owned();
            values.insert(key, value);
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow::anyhow!("config key {key}: {e}")))
            .transpose()
    }
}

/// Flag, then environment, then config file.
pub fn pick<T>(flag: Option<T>, env: Option<&str>, file: Option<T>) -> Result<Option<T>>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    if let Some(var) = env {
        if let Ok(v) = std::env::var(var) {
            if !v.is_empty() {
                return v
                    .parse()
                    .map(Some)
                    .map_err(|e| anyhow::anyhow!("environment variable {var}: {e}"));
            }
        }
    }
    Ok(file)
}

/// Parses `1,3,5`.
pub fn parse_k_list(s: &str) -> Result<Vec<usize>> {
    let mut ks = s
        .split(',')
        .map(|p| {
            let k: usize = p.trim().parse().with_context(|| format!("invalid K {p:?}"))?;
            if k == 0 {
                bail!("K must be positive");
            }
            Ok(k)
        })
        .collect::<Result<Vec<_>>>()?;
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        bail!("empty K list");
    }
    Ok(ks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_config() {
        let c = ConfigFile::parse("# comment\nk = 1,5\nEndpoint-URL=\"http://x/v1\"\n\nworkers=2\n").unwrap();
        assert_eq!(c.get("k"), Some("1,5"));
        assert_eq!(c.get("endpoint_url"), Some("http://x/v1"));
        assert_eq!(c.parsed::<usize>("workers").unwrap(), Some(2));
        assert!(c.parsed::<usize>("k").is_err());
        assert!(ConfigFile::parse("nonsense").is_err());
        assert!(ConfigFile::parse("colour=red").is_err());
    }

    #[test]
    fn precedence() {
        assert_eq!(pick(Some(1usize), None, Some(2)).unwrap(), Some(1));
        assert_eq!(pick(None::<usize>, None, Some(2)).unwrap(), Some(2));
        assert_eq!(pick(None::<usize>, Some("MPR_TEST_UNSET_VARIABLE"), None).unwrap(), None);
    }

    #[test]
    fn k_lists() {
        assert_eq!(parse_k_list("5, 1,3,1").unwrap(), [1, 3, 5]);
        assert!(parse_k_list("0").is_err());
        assert!(parse_k_list("a").is_err());
    }
}

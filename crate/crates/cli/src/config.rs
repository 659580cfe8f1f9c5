//! Effective configuration, layered from command-line flags, environment
//! variables and an optional `key = value` file, in that order of precedence.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use millstone_core::ann::HnswParams;
use millstone_core::encoder::{Backend, EncoderConfig};
use thiserror::Error;

pub const ENV_ADDR: &str = "MILLSTONE_ADDR";
pub const ENV_SIGNING_KEY: &str = "MILLSTONE_SIGNING_KEY";
pub const ENV_STORE_ROOT: &str = "MILLSTONE_STORE_ROOT";
pub const ENV_ENCODER_URL: &str = "MILLSTONE_ENCODER_URL";

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_STORE_ROOT: &str = "millstone-data";
pub const DEFAULT_ENCODER_TIMEOUT_MS: u64 = 5_000;

/// Keys accepted in a config file.
pub const FILE_KEYS: [&str; 10] = [
    "store_root",
    "addr",
    "signing_key",
    "encoder_url",
    "encoder_timeout_ms",
    "encoder_dim",
    "hnsw_m",
    "hnsw_ef_construction",
    "hnsw_ef_search",
    "workers",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Unreadable { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Syntax { path: PathBuf, line: usize, message: String },
    #[error("invalid value {value:?} for {key} ({origin}): {message}")]
    Invalid {
        key: &'static str,
        value: String,
        origin: Origin,
        message: String,
    },
}

/// Where a setting came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Flag,
    Env,
    File,
    Default,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Flag => "flag",
            Self::Env => "env",
            Self::File => "file",
            Self::Default => "default",
        })
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub store_root: Option<String>,
    pub addr: Option<String>,
    pub signing_key: Option<String>,
    pub encoder_url: Option<String>,
    pub encoder_timeout_ms: Option<String>,
    pub encoder_dim: Option<String>,
    pub hnsw_m: Option<String>,
    pub hnsw_ef_construction: Option<String>,
    pub hnsw_ef_search: Option<String>,
    pub workers: Option<String>,
}

impl Overrides {
    fn get(&self, key: &str) -> Option<&String> {
        match key {
            "store_root" => self.store_root.as_ref(),
            "addr" => self.addr.as_ref(),
            "signing_key" => self.signing_key.as_ref(),
            "encoder_url" => self.encoder_url.as_ref(),
            "encoder_timeout_ms" => self.encoder_timeout_ms.as_ref(),
            "encoder_dim" => self.encoder_dim.as_ref(),
            "hnsw_m" => self.hnsw_m.as_ref(),
            "hnsw_ef_construction" => self.hnsw_ef_construction.as_ref(),
            "hnsw_ef_search" => self.hnsw_ef_search.as_ref(),
            "workers" => self.workers.as_ref(),
            _ => None,
        }
    }
}

fn env_name(key: &str) -> Option<&'static str> {
    match key {
        "store_root" => Some(ENV_STORE_ROOT),
        "addr" => Some(ENV_ADDR),
        "signing_key" => Some(ENV_SIGNING_KEY),
        "encoder_url" => Some(ENV_ENCODER_URL),
        _ => None,
    }
}

/// Parses `key = value` lines; `#` starts a comment, values may be quoted.
pub fn parse_config_file(path: &Path, text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let syntax = |message: String| ConfigError::Syntax {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax("expected key = value".into()))?;
        let key = key.trim();
        if !FILE_KEYS.contains(&key) {
            return Err(syntax(format!("unknown key {key:?}")));
        }
        let mut value = value.trim();
        if let Some(unquoted) = value.strip_prefix('"').and_then(|v| v.strip_suffix('"')) {
            value = unquoted;
        } else if let Some((before, _)) = value.split_once(" #") {
            value = before.trim_end();
        }
        out.insert(key.to_owned(), value.to_owned());
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
        path: path.to_owned(),
        source,
    })?;
    parse_config_file(path, &text)
}

#[derive(Clone, PartialEq)]
pub struct CliConfig {
    pub store_root: PathBuf,
    pub addr: String,
    pub signing_key: Option<String>,
    pub encoder: EncoderConfig,
    pub hnsw: HnswParams,
    /// Worker threads for ingestion; 0 means one per CPU.
    pub workers: usize,
    pub origins: BTreeMap<&'static str, Origin>,
}

impl fmt::Debug for CliConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for CliConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let origin = |k: &str| self.origins.get(k).copied().unwrap_or(Origin::Default);
        let key = match &self.signing_key {
            Some(k) => format!("<{} bytes>", k.len()),
            None => "<unset>".into(),
        };
        let (encoder, timeout) = match &self.encoder.backend {
            Backend::Hashing => ("hashing".to_owned(), String::from("-")),
            Backend::Remote { url, timeout_ms } => (format!("remote {url}"), timeout_ms.to_string()),
        };
        let rows = [
            ("store_root", self.store_root.display().to_string()),
            ("addr", self.addr.clone()),
            ("signing_key", key),
            ("encoder_url", encoder),
            ("encoder_timeout_ms", timeout),
            ("encoder_dim", self.encoder.dim.to_string()),
            ("hnsw_m", self.hnsw.m.to_string()),
            ("hnsw_ef_construction", self.hnsw.ef_construction.to_string()),
            ("hnsw_ef_search", self.hnsw.ef_search.to_string()),
            ("workers", self.workers.to_string()),
        ];
        writeln!(f, "effective configuration:")?;
        for (k, v) in rows {
            writeln!(f, "  {k:<22} {v}  ({})", origin(k))?;
        }
        Ok(())
    }
}

impl CliConfig {
    /// Merges the three layers. `env` looks up an environment variable.
    pub fn resolve(
        flags: &Overrides,
        env: &dyn Fn(&str) -> Option<String>,
        file: &BTreeMap<String, String>,
    ) -> Result<Self, ConfigError> {
        let mut origins = BTreeMap::new();
        let mut pick = |key: &'static str| -> Option<(String, Origin)> {
            let found = flags
                .get(key)
                .map(|v| (v.clone(), Origin::Flag))
                .or_else(|| {
                    env_name(key)
                        .and_then(env)
                        .filter(|v| !v.is_empty())
                        .map(|v| (v, Origin::Env))
                })
                .or_else(|| file.get(key).map(|v| (v.clone(), Origin::File)));
            if let Some((_, o)) = &found {
                origins.insert(key, *o);
            }
            found
        };
        fn number<T: std::str::FromStr>(key: &'static str, found: Option<(String, Origin)>, default: T) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            match found {
                None => Ok(default),
                Some((v, origin)) => v.trim().parse().map_err(|e: T::Err| ConfigError::Invalid {
                    key,
                    value: v.clone(),
                    origin,
                    message: e.to_string(),
                }),
            }
        }

        let store_root = pick("store_root").map_or_else(|| PathBuf::from(DEFAULT_STORE_ROOT), |(v, _)| PathBuf::from(v));
        let addr = pick("addr").map_or_else(|| DEFAULT_ADDR.to_owned(), |(v, _)| v);
        let signing_key = pick("signing_key").map(|(v, _)| v);

        let mut encoder = EncoderConfig::default();
        let dim = pick("encoder_dim");
        let dim_origin = dim.as_ref().map_or(Origin::Default, |(_, o)| *o);
        encoder.dim = number("encoder_dim", dim, encoder.dim)?;
        let timeout_ms = number("encoder_timeout_ms", pick("encoder_timeout_ms"), DEFAULT_ENCODER_TIMEOUT_MS)?;
        if let Some((url, origin)) = pick("encoder_url") {
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                return Err(ConfigError::Invalid {
                    key: "encoder_url",
                    value: url,
                    origin,
                    message: "expected an http:// or https:// URL".into(),
                });
            }
            encoder.backend = Backend::Remote { url, timeout_ms };
        }
        encoder.validate().map_err(|e| ConfigError::Invalid {
            key: "encoder_dim",
            value: encoder.dim.to_string(),
            origin: dim_origin,
            message: e.to_string(),
        })?;

        let defaults = HnswParams::default();
        let m = pick("hnsw_m");
        let m_origin = m.as_ref().map_or(Origin::Default, |(_, o)| *o);
        let m = number("hnsw_m", m, defaults.m)?;
        let mut hnsw = if m >= 2 { HnswParams::with_m(m) } else { HnswParams { m, ..defaults } };
        hnsw.ef_construction = number("hnsw_ef_construction", pick("hnsw_ef_construction"), hnsw.ef_construction)?;
        hnsw.ef_search = number("hnsw_ef_search", pick("hnsw_ef_search"), hnsw.ef_search)?;
        hnsw.validate().map_err(|e| ConfigError::Invalid {
            key: "hnsw_m",
            value: format!("m={} ef_construction={} ef_search={}", hnsw.m, hnsw.ef_construction, hnsw.ef_search),
            origin: m_origin,
            message: e.to_string(),
        })?;

        let workers = number("workers", pick("workers"), 0usize)?;
        Ok(Self {
            store_root,
            addr,
            signing_key,
            encoder,
            hnsw,
            workers,
            origins,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults() {
        let c = CliConfig::resolve(&Overrides::default(), &no_env, &BTreeMap::new()).unwrap();
        assert_eq!(c.addr, DEFAULT_ADDR);
        assert_eq!(c.encoder, EncoderConfig::default());
        assert_eq!(c.hnsw, HnswParams::default());
        assert!(c.signing_key.is_none());
        assert!(c.origins.is_empty());
    }

    #[test]
    fn flags_beat_env_beat_file() {
        let file = parse_config_file(
            Path::new("test.conf"),
            "# comment\naddr = 0.0.0.0:1\nstore_root = \"/from/file\"\nsigning_key = file-key-0123456789\nhnsw_ef_search = 50 # trailing\n",
        )
        .unwrap();
        let env = |name: &str| match name {
            ENV_ADDR => Some("0.0.0.0:2".to_owned()),
            ENV_STORE_ROOT => Some("/from/env".to_owned()),
            _ => None,
        };
        let flags = Overrides {
            addr: Some("0.0.0.0:3".into()),
            ..Overrides::default()
        };
        let c = CliConfig::resolve(&flags, &env, &file).unwrap();
        assert_eq!(c.addr, "0.0.0.0:3");
        assert_eq!(c.store_root, PathBuf::from("/from/env"));
        assert_eq!(c.signing_key.as_deref(), Some("file-key-0123456789"));
        assert_eq!(c.hnsw.ef_search, 50);
        assert_eq!(c.origins["addr"], Origin::Flag);
        assert_eq!(c.origins["store_root"], Origin::Env);
        assert_eq!(c.origins["signing_key"], Origin::File);
    }

    #[test]
    fn encoder_url_switches_backend() {
        let env = |name: &str| (name == ENV_ENCODER_URL).then(|| "http://127.0.0.1:9/encode".to_owned());
        let c = CliConfig::resolve(&Overrides::default(), &env, &BTreeMap::new()).unwrap();
        assert_eq!(
            c.encoder.backend,
            Backend::Remote {
                url: "http://127.0.0.1:9/encode".into(),
                timeout_ms: DEFAULT_ENCODER_TIMEOUT_MS
            }
        );
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad = |o: Overrides| CliConfig::resolve(&o, &no_env, &BTreeMap::new()).unwrap_err();
        assert!(matches!(
            bad(Overrides { hnsw_m: Some("x".into()), ..Default::default() }),
            ConfigError::Invalid { key: "hnsw_m", .. }
        ));
        assert!(matches!(
            bad(Overrides { hnsw_m: Some("1".into()), ..Default::default() }),
            ConfigError::Invalid { key: "hnsw_m", .. }
        ));
        assert!(matches!(
            bad(Overrides { encoder_dim: Some("0".into()), ..Default::default() }),
            ConfigError::Invalid { key: "encoder_dim", .. }
        ));
        assert!(matches!(
            bad(Overrides { encoder_url: Some("ftp://x".into()), ..Default::default() }),
            ConfigError::Invalid { key: "encoder_url", origin: Origin::Flag, .. }
        ));
    }

    #[test]
    fn file_syntax_errors() {
        let p = Path::new("x.conf");
        assert!(matches!(parse_config_file(p, "addr"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_config_file(p, "\nport = 1"), Err(ConfigError::Syntax { line: 2, .. })));
    }

    #[test]
    fn display_redacts_the_key() {
        let flags = Overrides {
            signing_key: Some("super-secret-value-123".into()),
            ..Default::default()
        };
        let c = CliConfig::resolve(&flags, &no_env, &BTreeMap::new()).unwrap();
        let text = c.to_string();
        assert!(!text.contains("super-secret"));
        assert!(text.contains("<22 bytes>  (flag)"));
    }
}

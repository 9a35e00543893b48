use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

pub enum Failure {
    /// Bad invocation or configuration; nothing was run.
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Runtime(e) => write!(f, "runtime: {e:#}"),
        }
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parse a config document, naming the offending path on failure.
pub fn parse<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, Failure> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        usage(format!("{origin}: invalid config at `{path}`: {}", e.inner()))
    })
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))
}

/// The config file, or the default when `--config` is absent.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        Some(p) => parse(&read(p)?, &p.display().to_string()),
        None => Ok(T::default()),
    }
}

pub fn load_required<T: DeserializeOwned>(path: Option<&Path>, command: &str) -> Result<T, Failure> {
    let p = path.ok_or_else(|| usage(format!("{command} needs --config PATH")))?;
    parse(&read(p)?, &p.display().to_string())
}

/// Paths inside a config are relative to the config file's directory.
pub fn resolve(config: Option<&Path>, path: &Path) -> PathBuf {
    match config.and_then(Path::parent) {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

/// Honour `CONDGAP_THREADS` by sizing the global rayon pool.
pub fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("CONDGAP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("CONDGAP_THREADS must be a positive integer, got {v:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

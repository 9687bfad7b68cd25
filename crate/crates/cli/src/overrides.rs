//! Layered configuration: built-in defaults, then `CFMDP_*` environment
//! variables, then a config file, then command-line overrides.
//!
//! Every layer is applied to the JSON form of the config and round-tripped
//! through the typed struct, so defaults are filled in and unknown keys are
//! rejected with their dotted path.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use cfmdp::error::{Error, Result};

pub const ENV_PREFIX: &str = "CFMDP_";

/// Rewrites `--a.b v` and `--a.b=v` into `--set a.b=v`, so that dotted
/// keys never reach clap as unknown flags.
pub fn expand_dotted_flags(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            out.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !key.contains('.') {
            out.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => match it.peek() {
                Some(next) if !next.starts_with("--") => it.next().unwrap_or_default(),
                _ => "true".to_string(),
            },
        };
        out.push("--set".into());
        out.push(format!("{key}={value}"));
    }
    out
}

/// Interprets an override value as JSON when it parses, else as a string.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `dotted` inside `doc`. Every path segment must already exist.
pub fn set_path(doc: &mut Value, dotted: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "unknown key '{dotted}': '{}' is not a table",
                parts[..i].join(".")
            ))
        })?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown key '{dotted}'")))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    Ok(())
}

/// Deep merge of `layer` into `base`: objects merge key by key, anything
/// else replaces. A tagged enum whose tag changes is replaced wholesale.
pub fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            let retag = ["source", "kind", "family", "method"]
                .iter()
                .any(|t| matches!((b.get(*t), l.get(*t)), (Some(x), Some(y)) if x != y));
            if retag {
                *b = l;
                return;
            }
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, l) => *b = l,
    }
}

/// Round-trips `doc` through `T`, filling defaults and rejecting unknown keys.
pub fn normalize<T: Serialize + DeserializeOwned>(doc: Value) -> Result<(T, Value)> {
    let typed: T = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
    let doc = serde_json::to_value(&typed)?;
    Ok((typed, doc))
}

/// `CFMDP_AGENT__ALPHA_INIT=0.1` becomes `("agent.alpha_init", 0.1)`.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, Value)> {
    let mut out: Vec<(String, Value)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            Some((
                rest.to_ascii_lowercase().replace("__", "."),
                parse_value(&v),
            ))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

pub fn split_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
    Ok((k.trim().to_string(), parse_value(v)))
}

/// Builder for one resolved config document.
pub struct Layers<T> {
    typed: T,
    doc: Value,
}

impl<T: Serialize + DeserializeOwned + Default> Layers<T> {
    pub fn new() -> Result<Self> {
        let typed = T::default();
        let doc = serde_json::to_value(&typed)?;
        Ok(Self { typed, doc })
    }
}

impl<T: Serialize + DeserializeOwned> Layers<T> {
    pub fn from_value(typed: T) -> Result<Self> {
        let doc = serde_json::to_value(&typed)?;
        Ok(Self { typed, doc })
    }

    /// Environment variables whose path does not exist in this config are
    /// ignored, since one environment serves every subcommand.
    pub fn env(mut self, vars: &[(String, Value)]) -> Result<Self> {
        for (k, v) in vars {
            let mut trial = self.doc.clone();
            if set_path(&mut trial, k, v.clone()).is_ok() {
                self.doc = trial;
            }
        }
        self.renormalize()
    }

    pub fn file(mut self, path: Option<&Path>) -> Result<Self> {
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            let layer: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?;
            merge(&mut self.doc, layer);
        }
        self.renormalize()
    }

    /// Replaces the whole document, e.g. to switch an enum variant.
    pub fn root(mut self, value: Value) -> Result<Self> {
        self.doc = value;
        self.renormalize()
    }

    /// Replaces the value at `dotted` and re-fills defaults below it.
    pub fn replace(mut self, dotted: &str, value: Value) -> Result<Self> {
        set_path(&mut self.doc, dotted, value)?;
        self.renormalize()
    }

    pub fn sets(mut self, sets: &[(String, Value)]) -> Result<Self> {
        for (k, v) in sets {
            set_path(&mut self.doc, k, v.clone())?;
            self = self.renormalize()?;
        }
        Ok(self)
    }

    fn renormalize(self) -> Result<Self> {
        let (typed, doc) = normalize::<T>(self.doc)?;
        Ok(Self { typed, doc })
    }

    pub fn finish(self) -> T {
        self.typed
    }

    pub fn typed(&self) -> &T {
        &self.typed
    }
}

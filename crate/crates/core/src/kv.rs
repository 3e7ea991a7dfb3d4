//! Flat `key = value` configuration text.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! List values use the bracketed tuple syntax `[(0.5, 0.2), (0.3, 0.1)]`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A parsed key-value file. Each value remembers its source line.
#[derive(Debug, Clone, Default)]
pub struct KvFile {
    entries: BTreeMap<String, (String, usize)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            entries.insert(key, (value.trim().to_string(), i + 1));
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                line: *line,
                msg: format!("`{key}` is not a number: `{v}`"),
            }),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<usize>().map(Some).map_err(|_| Error::Parse {
                line: *line,
                msg: format!("`{key}` is not a nonnegative integer: `{v}`"),
            }),
        }
    }

    /// A list of numeric tuples, each of exactly `arity` entries.
    pub fn get_tuples(&self, key: &str, arity: usize) -> Result<Option<Vec<Vec<f64>>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => parse_tuple_list(v, arity)
                .map(Some)
                .map_err(|msg| Error::Parse { line: *line, msg: format!("`{key}`: {msg}") }),
        }
    }
}

/// Parse `[(a, b), (c, d)]` (or a single bare tuple `(a, b)`).
pub fn parse_tuple_list(text: &str, arity: usize) -> std::result::Result<Vec<Vec<f64>>, String> {
    let mut body = text.trim();
    if let Some(inner) = body.strip_prefix('[') {
        body = inner
            .strip_suffix(']')
            .ok_or_else(|| "unterminated list".to_string())?
            .trim();
    }
    let mut out = Vec::new();
    let mut rest = body;
    while !rest.is_empty() {
        let open = rest
            .strip_prefix('(')
            .ok_or_else(|| format!("expected `(` at `{rest}`"))?;
        let close = open.find(')').ok_or_else(|| "unterminated tuple".to_string())?;
        let tuple: Vec<f64> = open[..close]
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| format!("bad number `{}`", s.trim())))
            .collect::<std::result::Result<_, _>>()?;
        if tuple.len() != arity {
            return Err(format!("expected {arity} entries per tuple, found {}", tuple.len()));
        }
        out.push(tuple);
        rest = open[close + 1..].trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }
    Ok(out)
}

//! JSON experiment configuration and `key=value` overrides.
//!
//! Override keys are dotted paths into the effective configuration
//! (`lattice.beta`, `tau_list.0`, `tolerances.z_max`). A bare leaf name such as
//! `beta` is accepted when exactly one path ends in it. Keys that do not name
//! an existing entry are rejected.

use serde_json::Value;

use crate::mc::ExperimentConfig;
use crate::{Error, Result};

/// Parses a configuration document; absent fields take their defaults.
/// The document must be a JSON object.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let tree: Value = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
    if !tree.is_object() {
        return Err(Error::InvalidConfig("config: the document must be a JSON object".into()));
    }
    serde_json::from_value(tree).map_err(|e| Error::InvalidConfig(format!("config: {e}")))
}

/// Applies one `key=value` assignment. The value is read as JSON when it
/// parses as JSON, and as a plain string otherwise.
pub fn apply_override(config: &ExperimentConfig, assignment: &str) -> Result<ExperimentConfig> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::InvalidConfig(format!("override `{assignment}` has an empty key")));
    }
    let mut tree = serde_json::to_value(config).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let path = resolve_path(&tree, key)?;
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_string()));
    let slot = path.iter().try_fold(&mut tree, |node, seg| match node {
        Value::Object(map) => map.get_mut(seg.as_str()),
        Value::Array(items) => seg.parse::<usize>().ok().and_then(move |i| items.get_mut(i)),
        _ => None,
    });
    *slot.ok_or_else(|| Error::InvalidConfig(format!("unknown override key `{key}`")))? = value;
    serde_json::from_value(tree).map_err(|e| Error::InvalidConfig(format!("override `{key}`: {e}")))
}

/// Applies assignments in order.
pub fn apply_overrides<S: AsRef<str>>(config: &ExperimentConfig, assignments: &[S]) -> Result<ExperimentConfig> {
    assignments.iter().try_fold(config.clone(), |cfg, a| apply_override(&cfg, a.as_ref()))
}

fn lookup<'v>(tree: &'v Value, path: &[String]) -> Option<&'v Value> {
    path.iter().try_fold(tree, |node, seg| match node {
        Value::Object(map) => map.get(seg.as_str()),
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
        _ => None,
    })
}

/// Every path from the root to an entry, depth first.
fn all_paths(node: &Value, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    if let Value::Object(map) = node {
        for (k, v) in map {
            prefix.push(k.clone());
            out.push(prefix.clone());
            all_paths(v, prefix, out);
            prefix.pop();
        }
    }
}

/// Resolves an override key against a JSON tree: a dotted path that exists,
/// or a bare name that ends exactly one path.
pub fn resolve_path(tree: &Value, key: &str) -> Result<Vec<String>> {
    let dotted: Vec<String> = key.split('.').map(str::to_string).collect();
    if lookup(tree, &dotted).is_some() {
        return Ok(dotted);
    }
    if dotted.len() == 1 {
        let mut paths = Vec::new();
        all_paths(tree, &mut Vec::new(), &mut paths);
        let hits: Vec<Vec<String>> = paths.into_iter().filter(|p| p.last().map(String::as_str) == Some(key)).collect();
        match hits.len() {
            1 => return Ok(hits.into_iter().next().expect("one hit")),
            0 => {}
            _ => {
                let names: Vec<String> = hits.iter().map(|p| p.join(".")).collect();
                return Err(Error::InvalidConfig(format!("override key `{key}` is ambiguous: {}", names.join(", "))));
            }
        }
    }
    Err(Error::InvalidConfig(format!("unknown override key `{key}`")))
}

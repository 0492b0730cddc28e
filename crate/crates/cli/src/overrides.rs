//! Dotted-path `key=value` overrides applied to the parsed TOML document
//! before strict deserialization, so unknown keys and type errors surface
//! through the normal config validation path.

use anyhow::{bail, Context, Result};
use toml::Value;

/// Apply `key.path=value` assignments in order. Values parse as TOML
/// (numbers, booleans, arrays, inline tables); anything unparsable is taken
/// as a string.
pub fn apply(doc: &mut Value, overrides: &[String]) -> Result<()> {
    for entry in overrides {
        let (path, raw) = entry
            .split_once('=')
            .with_context(|| format!("override '{entry}' is not KEY=VALUE"))?;
        let value = parse_value(raw.trim());
        set_path(doc, path.trim(), value).with_context(|| format!("cannot apply override '{entry}'"))?;
    }
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    let wrapped = format!("x = {raw}");
    match wrapped.parse::<Value>() {
        Ok(Value::Table(mut t)) => t.remove("x").unwrap(),
        _ => Value::String(raw.to_string()),
    }
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        bail!("empty path segment in '{path}'");
    }
    let mut node = doc;
    for seg in &segments[..segments.len() - 1] {
        let table = node
            .as_table_mut()
            .with_context(|| format!("'{seg}' is not a table"))?;
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| Value::Table(toml::map::Map::new()));
    }
    let leaf = segments.last().unwrap();
    let table = node
        .as_table_mut()
        .with_context(|| format!("parent of '{leaf}' is not a table"))?;
    table.insert(leaf.to_string(), value);
    Ok(())
}

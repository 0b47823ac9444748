//! Output writers. Every artifact embeds the library version, the
//! config hash, and the historical data window: CSV files as leading
//! `#` comment lines, JSON documents under a `meta` object.

use std::path::Path;

use scenscore::error::{Error, Result};
use scenscore::marketdata::IsoDate;

#[derive(Debug, Clone)]
pub struct OutputMeta {
    pub config_hash: String,
    pub window: Option<(IsoDate, IsoDate)>,
    pub extra: Vec<(String, String)>,
}

impl OutputMeta {
    pub fn new(config_hash: &str, window: Option<(IsoDate, IsoDate)>) -> Self {
        OutputMeta {
            config_hash: config_hash.to_string(),
            window,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    pub fn comment_lines(&self) -> String {
        let mut out = format!(
            "# generated-by: scenscore v{}\n# config-hash: {}\n",
            env!("CARGO_PKG_VERSION"),
            self.config_hash
        );
        if let Some((start, end)) = self.window {
            out.push_str(&format!("# window: {start}..{end}\n"));
        }
        for (k, v) in &self.extra {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out
    }

    pub fn json_value(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert(
            "generated_by".to_string(),
            serde_json::Value::String(format!("scenscore v{}", env!("CARGO_PKG_VERSION"))),
        );
        map.insert(
            "config_hash".to_string(),
            serde_json::Value::String(self.config_hash.clone()),
        );
        if let Some((start, end)) = self.window {
            map.insert(
                "window".to_string(),
                serde_json::json!({ "start": start.to_string(), "end": end.to_string() }),
            );
        }
        for (k, v) in &self.extra {
            map.insert(k.clone(), serde_json::Value::String(v.clone()));
        }
        serde_json::Value::Object(map)
    }
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_csv(path: &Path, meta: &OutputMeta, header: &str, rows: &[String]) -> Result<()> {
    let mut content = meta.comment_lines();
    content.push_str(header);
    content.push('\n');
    for r in rows {
        content.push_str(r);
        content.push('\n');
    }
    write_text(path, &content)
}

/// Wraps a JSON value as `{ "meta": ..., "data": ... }` and writes it
/// pretty-printed.
pub fn write_json(path: &Path, meta: &OutputMeta, data: serde_json::Value) -> Result<()> {
    let doc = serde_json::json!({ "meta": meta.json_value(), "data": data });
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::data(format!("json serialization: {e}")))?;
    write_text(path, &text)
}

/// Sanitizes a portfolio name into a file-system friendly token.
pub fn sanitize_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

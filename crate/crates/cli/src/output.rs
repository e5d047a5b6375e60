//! Table and record output. CSV files start with a `#` line holding the
//! command and every resolved setting, in config-file syntax.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Format as ValueEnum>::from_str(s, true)
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

pub struct Emitter {
    pub command: String,
    pub settings: Vec<(String, String)>,
    pub format: Format,
    pub out: Option<PathBuf>,
}

impl Emitter {
    pub fn header_line(&self) -> String {
        let mut line = format!("# dflab {}", self.command);
        for (k, v) in &self.settings {
            line.push_str(&format!(" {k}={v}"));
        }
        line
    }

    fn config_json(&self) -> Value {
        let map: Map<String, Value> = self
            .settings
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        Value::Object(map)
    }

    /// Rows as CSV, or as `{"command", "config", "rows"}` JSON.
    pub fn rows<T: Serialize>(&self, rows: &[T]) -> Result<()> {
        match self.format {
            Format::Csv => {
                let mut buf = Vec::new();
                writeln!(buf, "{}", self.header_line()).expect("writing to memory");
                let mut w = csv::Writer::from_writer(buf);
                for r in rows {
                    w.serialize(r).map_err(|e| CliError::io("serializing csv", e.into()))?;
                }
                let buf = w
                    .into_inner()
                    .map_err(|e| CliError::io("serializing csv", e.into_error()))?;
                self.write(&buf)
            }
            Format::Json => self.json(json!({ "rows": rows })),
        }
    }

    /// A JSON document with the command and config merged in.
    pub fn json(&self, body: Value) -> Result<()> {
        let mut doc = Map::new();
        doc.insert("command".into(), Value::String(self.command.clone()));
        doc.insert("config".into(), self.config_json());
        if let Value::Object(fields) = body {
            doc.extend(fields);
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(doc)).expect("plain json");
        text.push('\n');
        self.write(text.as_bytes())
    }

    fn write(&self, bytes: &[u8]) -> Result<()> {
        match &self.out {
            Some(path) => {
                std::fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
            }
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(bytes)
                    .and_then(|_| out.flush())
                    .map_err(|e| CliError::io("writing stdout", e))
            }
        }
    }
}

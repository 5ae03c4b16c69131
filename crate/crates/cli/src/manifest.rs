use std::path::{Path, PathBuf};

use serde_json::{json, Value};

/// What produced a report: enough to rerun it.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub input: PathBuf,
    pub subcommand: &'static str,
    pub options: Vec<(String, String)>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(input: &Path, subcommand: &'static str) -> Self {
        RunManifest {
            input: input.to_path_buf(),
            subcommand,
            options: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn option(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.options.push((key.to_string(), value.to_string()));
        self
    }

    pub fn records(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("subcommand".to_string(), self.subcommand.to_string()),
            ("input".to_string(), self.input.display().to_string()),
        ];
        out.extend(self.options.iter().map(|(k, v)| (format!("option.{k}"), v.clone())));
        out.extend(self.outputs.iter().map(|p| ("output".to_string(), p.display().to_string())));
        out
    }

    pub fn to_json(&self) -> Value {
        let options: serde_json::Map<String, Value> =
            self.options.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        json!({
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand,
            "input": self.input.display().to_string(),
            "options": options,
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        })
    }
}

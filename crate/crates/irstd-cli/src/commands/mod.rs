//! Subcommand implementations.

pub mod eval;
pub mod gradcheck;
pub mod roc;
pub mod rpca;
pub mod spectrum;
pub mod synth_gen;
pub mod train;

use serde::Serialize;

/// Provenance line: every run prints its resolved configuration as JSON.
pub fn echo_config<T: Serialize>(command: &str, cfg: &T) {
    let mut value = serde_json::to_value(cfg).expect("config serializes");
    if let serde_json::Value::Object(map) = &mut value {
        map.insert(
            "command".to_string(),
            serde_json::Value::String(command.to_string()),
        );
    }
    println!("{}", serde_json::to_string(&value).expect("config serializes"));
}

/// Load a JSON config file into a serde type.
pub fn load_json<T: serde::de::DeserializeOwned>(
    path: &std::path::Path,
) -> anyhow::Result<T> {
    use anyhow::Context;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

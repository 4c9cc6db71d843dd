use std::path::{Path, PathBuf};

use metaproj::experiment::ExperimentConfig;
use metaproj::{Error, Result};
use serde_json::{Map, Value};

use crate::ConfigArgs;

const SECTIONS: [&str; 7] = ["synth", "split", "net", "loss", "train", "backend", "eval"];

/// Parses a config document. A document whose keys are all section names
/// is the full tree; anything else is taken as the `section` block alone.
pub fn parse(text: &str, section: &str) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(Error::Config("config must be a JSON object".into()));
    };
    let is_tree = obj.keys().all(|k| SECTIONS.contains(&k.as_str()));
    let tree = if is_tree {
        Value::Object(obj)
    } else {
        let mut m = Map::new();
        m.insert(section.to_string(), Value::Object(obj));
        Value::Object(m)
    };
    serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))
}

/// Loads the config (defaults when absent) and applies `--seed`.
pub fn load(args: &ConfigArgs, section: &str) -> Result<ExperimentConfig> {
    let cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            parse(&text, section)?
        }
        None => ExperimentConfig::default(),
    };
    Ok(match args.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

pub fn resolved_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".config.json");
    out.with_file_name(name)
}

/// Writes the fully expanded config next to `out`.
pub fn write_resolved(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let path = resolved_path(out);
    std::fs::write(&path, cfg.to_json() + "\n").map_err(|e| Error::Io { path, source: e })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_section_and_tree() {
        let a = parse(r#"{"n_speakers": 7}"#, "synth").unwrap();
        assert_eq!(a.synth.n_speakers, 7);
        let b = parse(r#"{"synth": {"n_speakers": 7}}"#, "train").unwrap();
        assert_eq!(a, b);
        assert!(parse(r#"{"n_speakerz": 7}"#, "synth").is_err());
        assert!(parse("[1]", "synth").is_err());
        assert_eq!(parse("{}", "synth").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn resolved_name() {
        assert_eq!(
            resolved_path(Path::new("a/b.csv")),
            PathBuf::from("a/b.csv.config.json")
        );
    }
}

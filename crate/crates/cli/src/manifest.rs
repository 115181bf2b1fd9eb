//! Sweep manifests.
//!
//! ```text
//! corpus = data/copy.tsv
//! valid = data/copy.tsv
//! out = runs/scoring
//! epochs = 10
//!
//! [dot]
//! attention_kind = dot
//!
//! [general]
//! attention_kind = general
//! ```
//!
//! Settings before the first `[name]` header apply to every variant; the
//! keys `corpus`, `valid` and `out` are paths relative to the manifest,
//! anything else is a training config key.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use seqforge::train::{TrainingConfig, CONFIG_KEYS};

const PATH_KEYS: [&str; 3] = ["corpus", "valid", "out"];

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub corpus: PathBuf,
    pub valid: Option<PathBuf>,
    pub out: PathBuf,
    pub variants: Vec<Variant>,
}

type Settings = Vec<(usize, String, String)>;

impl ExperimentManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("manifest {}", path.display()))
    }

    /// Parses manifest text, resolving relative paths against `base_dir`
    /// and checking that the input files exist.
    pub fn parse(text: &str, base_dir: &Path) -> anyhow::Result<Self> {
        let mut shared: Settings = Vec::new();
        let mut sections: Vec<(String, Settings)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if name.is_empty() {
                    bail!("line {}: empty variant name", n + 1);
                }
                sections.push((name.to_string(), Vec::new()));
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected `key = value` or `[variant]`", n + 1);
            };
            let entry = (n + 1, k.trim().to_string(), v.trim().to_string());
            match sections.last_mut() {
                Some((_, s)) => s.push(entry),
                None => shared.push(entry),
            }
        }

        let mut seen = HashSet::new();
        for (name, _) in &sections {
            if !seen.insert(name.as_str()) {
                bail!("variant `{name}` is defined twice");
            }
        }
        if sections.is_empty() {
            bail!("no variants defined");
        }

        let path_of = |key: &str| {
            shared
                .iter()
                .rev()
                .find(|(_, k, _)| k == key)
                .map(|(_, _, v)| base_dir.join(v))
        };
        let corpus = path_of("corpus").context("missing `corpus` setting")?;
        let valid = path_of("valid");
        let out = path_of("out").unwrap_or_else(|| base_dir.join("sweep"));
        for p in std::iter::once(&corpus).chain(valid.as_ref()) {
            if !p.is_file() {
                bail!("input file {} does not exist", p.display());
            }
        }

        let mut base = TrainingConfig::default();
        apply(&mut base, shared.iter().filter(|(_, k, _)| !PATH_KEYS.contains(&k.as_str())))?;
        let variants = sections
            .into_iter()
            .map(|(name, settings)| {
                let mut config = base.clone();
                if let Some((line, k, _)) = settings.iter().find(|(_, k, _)| PATH_KEYS.contains(&k.as_str())) {
                    bail!("line {line}: `{k}` is shared and cannot be set per variant");
                }
                apply(&mut config, settings.iter()).with_context(|| format!("variant `{name}`"))?;
                config.validate().with_context(|| format!("variant `{name}`"))?;
                Ok(Variant { name, config })
            })
            .collect::<anyhow::Result<_>>()?;
        Ok(ExperimentManifest {
            corpus,
            valid,
            out,
            variants,
        })
    }
}

fn apply<'a>(config: &mut TrainingConfig, settings: impl Iterator<Item = &'a (usize, String, String)>) -> anyhow::Result<()> {
    let settings: Vec<_> = settings.collect();
    let unknown: Vec<&str> = settings
        .iter()
        .filter(|(_, k, _)| !CONFIG_KEYS.contains(&k.as_str()))
        .map(|(_, k, _)| k.as_str())
        .collect();
    if !unknown.is_empty() {
        bail!("unknown config key(s): {}", unknown.join(", "));
    }
    for (line, k, v) in settings {
        config.set(k, v).with_context(|| format!("line {line}"))?;
    }
    Ok(())
}

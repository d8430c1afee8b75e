//! Run configuration: one TOML file, with dotted `key=value` overrides on
//! top. Precedence is overrides, then file, then defaults.
//!
//! ```
//! use owl_tal::config::RunConfig;
//!
//! let cfg = RunConfig::from_toml_str(
//!     "seed = 3\n[owl]\nwindow = 8\n",
//!     &["owl.window=\"full\"".to_string(), "tem.epochs=2".to_string()],
//! )
//! .unwrap();
//! assert_eq!(cfg.seed, 3);
//! assert_eq!(cfg.owl.window.to_string(), "full");
//! assert_eq!(cfg.tem.epochs, 2);
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaltal::EvalConfig;
use crate::featstore::SynthSpec;
use crate::fusion::FusionConfig;
use crate::owl::{AttentionWindow, OwlConfig};
use crate::proposals::{ProposalConfig, TemConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Root of every artifact.
    pub out: PathBuf,
    /// Where `gen-data` writes and every later stage reads the corpus;
    /// `<out>/corpus` when unset.
    pub corpus: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            corpus: None,
        }
    }
}

impl Paths {
    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| self.out.join("corpus"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Owl,
    Fusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub windows: Vec<AttentionWindow>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            windows: vec![
                AttentionWindow::Band(0),
                AttentionWindow::Band(2),
                AttentionWindow::Band(4),
                AttentionWindow::Band(8),
                AttentionWindow::Full,
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed. Data splits and every model initialization derive from it.
    pub seed: u64,
    pub paths: Paths,
    /// Training split; `val_videos` more are drawn for evaluation.
    pub synth: SynthSpec,
    pub val_videos: usize,
    pub tem: TemConfig,
    pub proposals: ProposalConfig,
    pub classifier: ClassifierKind,
    pub owl: OwlConfig,
    pub fusion: FusionConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            synth: SynthSpec::default(),
            val_videos: 10,
            tem: TemConfig::default(),
            proposals: ProposalConfig::default(),
            classifier: ClassifierKind::Owl,
            owl: OwlConfig::default(),
            fusion: FusionConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets dotted `key=value` pairs inside `table`. Values are TOML literals;
/// anything that does not parse as one is taken as a bare string.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("override key {key:?} is malformed")));
        }
        let mut node = &mut *table;
        for part in &path[..path.len() - 1] {
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override {key:?}: {part} is not a table")))?;
        }
        node.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        apply_overrides(&mut table, overrides)?;
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (defaults only when `None`) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::Dependency(p.to_path_buf()));
                }
                fs::read_to_string(p).map_err(|e| Error::io(p, e))?
            }
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.eval.validate()?;
        self.fusion.validate()?;
        if self.val_videos == 0 {
            return Err(Error::Config("val_videos must be at least 1".into()));
        }
        if self.tem.epochs == 0 || self.tem.window == 0 || self.tem.stride == 0 {
            return Err(Error::Config("tem epochs, window and stride must be positive".into()));
        }
        if self.proposals.max_duration_snippets > self.tem.window {
            return Err(Error::Config(format!(
                "proposals.max_duration_snippets {} exceeds tem.window {}",
                self.proposals.max_duration_snippets, self.tem.window
            )));
        }
        if let AttentionWindow::Band(w) = self.owl.window {
            AttentionWindow::band(w)?;
        }
        Ok(())
    }

    /// A copy whose model seeds all equal the root seed.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.tem.seed = c.seed;
        c.owl.train.seed = c.seed;
        c.fusion.train.seed = c.seed;
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }.seeded()
    }

    /// Hex SHA-256 of the canonical JSON form, excluding the paths so that
    /// relocating a run does not change its identity.
    pub fn config_hash(&self) -> String {
        let mut c = self.seeded();
        c.paths = Paths::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn provenance(&self) -> crate::checkpoint::Provenance {
        crate::checkpoint::Provenance::new(self.config_hash(), self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text, &[]).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml_str("", &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_beat_file_values() {
        let cfg = RunConfig::from_toml_str(
            "[synth]\nn_videos = 4\n",
            &[
                "synth.n_videos=6".into(),
                "classifier=fusion".into(),
                "fusion.strategy=late_self_gate".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.synth.n_videos, 6);
        assert_eq!(cfg.classifier, ClassifierKind::Fusion);
        assert_eq!(cfg.fusion.strategy, crate::fusion::FusionStrategy::LateSelfGate);
    }

    #[test]
    fn bad_input_is_config_error() {
        for (text, ov) in [
            ("nonsense = 1\n", vec![]),
            ("", vec!["owl.window=3".to_string()]),
            ("", vec!["novalue".to_string()]),
            ("", vec!["seed.x=1".to_string()]),
            ("", vec!["proposals.max_duration_snippets=500".to_string()]),
        ] {
            assert!(
                matches!(RunConfig::from_toml_str(text, &ov), Err(Error::Config(_))),
                "{text:?} {ov:?}"
            );
        }
        assert!(matches!(
            RunConfig::from_toml_str("[synth]\nn_videos = 0\n", &[]),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn hash_tracks_content_not_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.out = PathBuf::from("/elsewhere");
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        assert_ne!(a.config_hash(), a.with_seed(1).config_hash());
        let mut c = a.clone();
        c.owl.d_model = 32;
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn missing_file_is_dependency_error() {
        assert!(matches!(
            RunConfig::load(Some(Path::new("/no/such/run.toml")), &[]),
            Err(Error::Dependency(_))
        ));
    }
}

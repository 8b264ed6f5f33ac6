//! Experiment configuration: TOML schema, defaults and validation.
//!
//! A minimal standard-mode file:
//!
//! ```toml
//! output_dir = "out/run1"
//! seeds = [1, 2, 3]
//! strategies = ["tgt-only", "src-only", "tada"]
//!
//! [target]
//! pipeline = "sharpen-s"
//! quality = 85
//! ```
//!
//! Cross mode replaces the strategy list with a pipeline grid:
//!
//! ```toml
//! mode = "cross"
//! [cross]
//! pipelines = ["sharpen-s", "half-sharpen-s"]
//! ```

use serde::{Deserialize, Serialize};

use crate::HarnessError;

fn default_mode() -> String {
    "standard".into()
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_strategies() -> Vec<String> {
    vec!["tgt-only".into(), "src-only".into(), "tada".into()]
}

fn default_schema() -> String {
    "dctr-lite".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_mode")]
    pub mode: String,
    pub output_dir: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    #[serde(default = "default_schema")]
    pub feature_schema: String,
    #[serde(default)]
    pub overwrite: bool,
    /// Write wall-clock timings into the main report rows. Off by default
    /// so identical runs produce byte-identical reports; timings always go
    /// to the `timings.csv` sidecar.
    #[serde(default)]
    pub timings_in_report: bool,
    #[serde(default)]
    pub raw: RawConfig,
    #[serde(default)]
    pub sets: SetsConfig,
    pub target: TargetConfig,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub operational: OperationalConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfigToml,
    #[serde(default)]
    pub emulator: EmulatorConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub catalog: CatalogConfig,
    #[serde(default)]
    pub cross: CrossConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    /// Final crop size; raws are synthesized `gen_margin` larger so the
    /// crop selector has candidates.
    pub size: usize,
    pub gen_margin: usize,
    pub noise_alpha: f64,
    pub noise_beta: f64,
    pub smoothness: f64,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            size: 256,
            gen_margin: 64,
            noise_alpha: 0.1,
            noise_beta: 2.0,
            smoothness: 1.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetsConfig {
    /// Cover/stego pairs for source-side detector training.
    pub train_pairs: usize,
    /// Cover/stego pairs for evaluation.
    pub eval_pairs: usize,
    /// Labeled target pairs for the TgtOnly reference detector.
    pub tgt_train_pairs: usize,
    /// Uniform-crop raws for kernel learning.
    pub tada_pool: usize,
}

impl Default for SetsConfig {
    fn default() -> Self {
        SetsConfig {
            train_pairs: 120,
            eval_pairs: 100,
            tgt_train_pairs: 120,
            tada_pool: 48,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// Pipeline id from the builtin catalog or the external catalog file.
    pub pipeline: String,
    pub quality: u8,
    /// Optional external catalog file providing the pipeline definitions.
    #[serde(default)]
    pub catalog_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Development applied to the analyst's raw material for SrcOnly.
    pub pipeline: String,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            pipeline: "identity".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationalConfig {
    /// One or more of "full-cover", "mix", "full-stego".
    pub balances: Vec<String>,
    pub size: usize,
}

impl Default for OperationalConfig {
    fn default() -> Self {
        OperationalConfig {
            balances: vec!["full-cover".into()],
            size: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfigToml {
    pub scheme: String,
    pub payload_bpnzac: f64,
}

impl Default for EmbeddingConfigToml {
    fn default() -> Self {
        EmbeddingConfigToml {
            scheme: "uerd".into(),
            payload_bpnzac: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmulatorConfig {
    pub kernel_size: usize,
    pub constraints: String,
    pub init_sigma: f64,
    pub filters: Vec<String>,
    pub patch_h: usize,
    pub patch_w: usize,
    pub q_low: f64,
    pub q_high: f64,
    pub loss_terms: Vec<String>,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub fd_step: f64,
    pub wass_subsample: usize,
    pub eval_subsample: usize,
    /// Stop early once the checkpoint metric falls below this fraction of
    /// its initial value (0 disables the cutoff).
    pub eval_target_fraction: f64,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        EmulatorConfig {
            kernel_size: 3,
            constraints: "both".into(),
            init_sigma: 0.01,
            filters: vec!["kb".into(), "l4".into()],
            patch_h: 8,
            patch_w: 16,
            q_low: 0.3,
            q_high: 0.6,
            loss_terms: vec!["cov".into(), "corr".into()],
            lr: 0.01,
            batch_size: 256,
            max_epochs: 150,
            lr_patience: 100,
            early_stop_patience: 200,
            fd_step: 1e-3,
            wass_subsample: 192,
            eval_subsample: 256,
            eval_target_fraction: 0.07,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// L2 regularization; 0 means 1/n_train.
    pub reg: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { reg: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogConfig {
    /// Cover/stego pairs developed per catalog source.
    pub pairs_per_source: usize,
    /// Optional external catalog file; the builtin eight-pipeline catalog
    /// is used otherwise.
    #[serde(default)]
    pub file: Option<String>,
    /// Fixed dimension for the subspace-alignment strategy.
    pub subspace_d: usize,
    /// Dimension grid for the oracle-tuned subspace row.
    pub subspace_grid: Vec<usize>,
    /// CORAL ridge parameter.
    pub coral_eta: f64,
    /// Principal directions for the NSCD selector.
    pub nscd_k: usize,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            pairs_per_source: 48,
            file: None,
            subspace_d: 10,
            subspace_grid: vec![2, 5, 10, 20],
            coral_eta: 1.0,
            nscd_k: 10,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossConfig {
    pub pipelines: Vec<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Config(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        match self.mode.as_str() {
            "standard" => {
                if self.strategies.is_empty() {
                    return fail("standard mode needs at least one strategy".into());
                }
            }
            "cross" => {
                if self.cross.pipelines.len() < 2 {
                    return fail("cross mode needs at least two pipelines".into());
                }
            }
            other => return fail(format!("unknown mode `{other}`")),
        }
        if self.seeds.is_empty() {
            return fail("at least one seed required".into());
        }
        if self.raw.size == 0 || self.raw.size % 8 != 0 {
            return fail(format!("raw size {} must be a multiple of 8", self.raw.size));
        }
        if self.raw.gen_margin % 8 != 0 {
            return fail("raw gen_margin must be a multiple of 8".into());
        }
        for b in &self.operational.balances {
            if !matches!(b.as_str(), "full-cover" | "mix" | "full-stego") {
                return fail(format!("unknown operational balance `{b}`"));
            }
        }
        if self.operational.size == 0 {
            return fail("operational size must be positive".into());
        }
        if !(self.embedding.payload_bpnzac > 0.0 && self.embedding.payload_bpnzac <= 1.5) {
            return fail("payload must lie in (0, 1.5]".into());
        }
        if self.embedding.scheme != "uerd" && self.embedding.scheme != "uniform-cost" {
            return fail(format!("unknown embedding scheme `{}`", self.embedding.scheme));
        }
        if self.sets.train_pairs < 2 || self.sets.eval_pairs < 1 {
            return fail("set sizes too small".into());
        }
        for s in &self.strategies {
            crate::experiment::Strategy::parse(s)?;
        }
        tada_core::steganalysis::DctrSchema::by_name(&self.feature_schema)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let text = r#"
            output_dir = "out/x"
            [target]
            pipeline = "sharpen-s"
            quality = 85
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.mode, "standard");
        assert_eq!(cfg.seeds, vec![1]);
        assert_eq!(cfg.raw.size, 256);
        assert_eq!(cfg.emulator.kernel_size, 3);
    }

    #[test]
    fn round_trip_preserves_fields() {
        let text = r#"
            output_dir = "out/x"
            seeds = [5, 6]
            strategies = ["src-only"]
            [target]
            pipeline = "blur-r0.7"
            quality = 90
            [operational]
            balances = ["mix", "full-stego"]
            size = 32
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back.seeds, cfg.seeds);
        assert_eq!(back.operational.balances, cfg.operational.balances);
        assert_eq!(back.target.quality, cfg.target.quality);
    }

    #[test]
    fn bad_configs_rejected() {
        let no_target = "output_dir = \"x\"";
        assert!(ExperimentConfig::from_toml(no_target).is_err());

        let bad_balance = r#"
            output_dir = "x"
            [target]
            pipeline = "identity"
            quality = 85
            [operational]
            balances = ["sideways"]
            size = 8
        "#;
        assert!(ExperimentConfig::from_toml(bad_balance).is_err());

        let bad_strategy = r#"
            output_dir = "x"
            strategies = ["telepathy"]
            [target]
            pipeline = "identity"
            quality = 85
        "#;
        assert!(ExperimentConfig::from_toml(bad_strategy).is_err());

        let unknown_field = r#"
            output_dir = "x"
            frobnicate = 1
            [target]
            pipeline = "identity"
            quality = 85
        "#;
        assert!(ExperimentConfig::from_toml(unknown_field).is_err());
    }
}

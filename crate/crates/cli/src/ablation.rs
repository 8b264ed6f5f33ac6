//! Ablation sweeps: rerun the experiment changing exactly one axis.

use std::path::PathBuf;

use crate::config::ExperimentConfig;
use crate::experiment::run_experiment;
use crate::report::ReportRow;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    PatchSize,
    KernelSize,
    OperationalSize,
    LossCombo,
    ResidualExtractor,
    Constraints,
    PatchSelection,
}

impl AblationAxis {
    pub fn parse(name: &str) -> Result<Self, HarnessError> {
        match name {
            "patch-size" => Ok(AblationAxis::PatchSize),
            "kernel-size" => Ok(AblationAxis::KernelSize),
            "operational-size" => Ok(AblationAxis::OperationalSize),
            "loss-combo" => Ok(AblationAxis::LossCombo),
            "residual-extractor" => Ok(AblationAxis::ResidualExtractor),
            "constraints" => Ok(AblationAxis::Constraints),
            "patch-selection" => Ok(AblationAxis::PatchSelection),
            other => Err(HarnessError::Config(format!("unknown ablation axis `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::PatchSize => "patch-size",
            AblationAxis::KernelSize => "kernel-size",
            AblationAxis::OperationalSize => "operational-size",
            AblationAxis::LossCombo => "loss-combo",
            AblationAxis::ResidualExtractor => "residual-extractor",
            AblationAxis::Constraints => "constraints",
            AblationAxis::PatchSelection => "patch-selection",
        }
    }
}

/// Applies one axis value to a copy of the base configuration.
pub fn apply_axis(
    base: &ExperimentConfig,
    axis: AblationAxis,
    value: &str,
) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = base.clone();
    let bad = |msg: String| HarnessError::Config(msg);
    match axis {
        AblationAxis::PatchSize => {
            let (h, w) = value
                .split_once('x')
                .ok_or_else(|| bad(format!("patch size `{value}` is not HxW")))?;
            cfg.emulator.patch_h = h
                .parse()
                .map_err(|_| bad(format!("bad patch height `{h}`")))?;
            cfg.emulator.patch_w = w
                .parse()
                .map_err(|_| bad(format!("bad patch width `{w}`")))?;
            if cfg.emulator.patch_h % 8 != 0 || cfg.emulator.patch_w % 8 != 0 {
                return Err(bad(format!("patch size `{value}` must be multiples of 8")));
            }
        }
        AblationAxis::KernelSize => {
            let k: usize = value
                .parse()
                .map_err(|_| bad(format!("bad kernel size `{value}`")))?;
            if k % 2 == 0 || !(3..=11).contains(&k) {
                return Err(bad(format!("kernel size `{value}` must be odd in 3..=11")));
            }
            cfg.emulator.kernel_size = k;
        }
        AblationAxis::OperationalSize => {
            let n: usize = value
                .parse()
                .map_err(|_| bad(format!("bad operational size `{value}`")))?;
            if n == 0 {
                return Err(bad("operational size must be positive".into()));
            }
            cfg.operational.size = n;
        }
        AblationAxis::LossCombo => {
            let terms: Vec<String> = value.split('+').map(|s| s.trim().to_string()).collect();
            for t in &terms {
                if !matches!(t.as_str(), "cov" | "wass" | "corr") {
                    return Err(bad(format!("unknown loss term `{t}`")));
                }
            }
            if terms.is_empty() {
                return Err(bad("loss combo needs at least one term".into()));
            }
            cfg.emulator.loss_terms = terms;
        }
        AblationAxis::ResidualExtractor => {
            let filters: Vec<String> = value.split('+').map(|s| s.trim().to_string()).collect();
            for f in &filters {
                if !matches!(f.as_str(), "kb" | "l4") {
                    return Err(bad(format!("unknown residual filter `{f}`")));
                }
            }
            cfg.emulator.filters = filters;
        }
        AblationAxis::Constraints => {
            tada_core::emulator::ConstraintSet::by_name(value)
                .map_err(|e| bad(e.to_string()))?;
            cfg.emulator.constraints = value.to_string();
        }
        AblationAxis::PatchSelection => match value {
            "on" => {
                cfg.emulator.q_low = 0.3;
                cfg.emulator.q_high = 0.6;
            }
            "off" => {
                cfg.emulator.q_low = 0.0;
                cfg.emulator.q_high = 1.0;
            }
            other => return Err(bad(format!("patch-selection value `{other}` not on/off"))),
        },
    }
    Ok(cfg)
}

/// Runs one experiment per axis value and writes a consolidated comparison
/// table alongside the per-value output directories.
pub fn run_ablation(
    base: &ExperimentConfig,
    axis: AblationAxis,
    values: &[String],
) -> Result<Vec<(String, Vec<ReportRow>)>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("ablation needs at least one value".into()));
    }
    let root = PathBuf::from(&base.output_dir);
    std::fs::create_dir_all(&root).map_err(|e| HarnessError::Io(root.clone(), e))?;

    let mut all = Vec::new();
    for value in values {
        let mut cfg = apply_axis(base, axis, value)?;
        cfg.output_dir = root
            .join(format!("ablation-{}-{}", axis.name(), value.replace('x', "_")))
            .to_string_lossy()
            .into_owned();
        let rows = run_experiment(&cfg)?;
        all.push((value.clone(), rows));
    }

    let mut table = String::from("axis,value,strategy,target,balance,seed,accuracy\n");
    for (value, rows) in &all {
        for r in rows {
            let acc = r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            table.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                axis.name(),
                value,
                r.strategy,
                r.target,
                r.balance,
                r.seed,
                acc
            ));
        }
    }
    let path = root.join(format!("ablation-{}.csv", axis.name()));
    std::fs::write(&path, table).map_err(|e| HarnessError::Io(path, e))?;
    Ok(all)
}

//! Checkpoint and training-log serialization.
//!
//! The checkpoint is a versioned text record of the learned parameters and
//! the checkpoint-metric history; the training log is a per-epoch CSV.

use crate::error::{Error, Result};

use super::{ConstraintSet, KernelParams, TrainingState};

/// Parsed checkpoint contents.
#[derive(Debug, Clone)]
pub struct CheckpointData {
    pub kernel: KernelParams,
    pub quant_id: String,
    pub epoch: usize,
    pub best_eval: f64,
    /// (epoch, l_eval, best) per recorded epoch.
    pub history: Vec<(usize, f64, bool)>,
}

/// Serializes the best checkpoint of a training run.
pub fn write_checkpoint(state: &TrainingState, quant_id: &str) -> String {
    let mut out = String::from("tada-checkpoint v1\n");
    out.push_str(&format!("size = {}\n", state.best_kernel.size()));
    out.push_str(&format!(
        "constraints = {}\n",
        state.best_kernel.constraints().name()
    ));
    let orbits: Vec<String> = state
        .best_kernel
        .params()
        .iter()
        .map(|v| format!("{v:e}"))
        .collect();
    out.push_str(&format!("orbit_values = {}\n", orbits.join(",")));
    out.push_str(&format!("quant = {quant_id}\n"));
    out.push_str(&format!("epoch = {}\n", state.epoch));
    out.push_str(&format!("best_eval = {:e}\n", state.best_eval));
    out.push_str(&format!("init_eval = {:e}\n", state.init_eval));
    out.push_str("history = epoch,l_eval,best\n");
    for rec in &state.history {
        out.push_str(&format!(
            "{},{:e},{}\n",
            rec.epoch,
            rec.l_eval,
            if rec.best { 1 } else { 0 }
        ));
    }
    out
}

/// Parses a checkpoint produced by [`write_checkpoint`].
pub fn parse_checkpoint(text: &str) -> Result<CheckpointData> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != "tada-checkpoint v1" {
        return Err(Error::Parse(format!("bad checkpoint header `{header}`")));
    }
    let mut size = None;
    let mut constraints = None;
    let mut orbit_values: Option<Vec<f64>> = None;
    let mut quant_id = None;
    let mut epoch = None;
    let mut best_eval = None;
    let mut history = Vec::new();
    let mut in_history = false;
    for line in lines {
        if in_history {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                continue;
            }
            let e: usize = parts[0]
                .trim()
                .parse()
                .map_err(|_| Error::Parse("history epoch".into()))?;
            let v: f64 = parts[1]
                .trim()
                .parse()
                .map_err(|_| Error::Parse("history value".into()))?;
            history.push((e, v, parts[2].trim() == "1"));
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "size" => size = Some(value.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?),
            "constraints" => constraints = Some(ConstraintSet::by_name(value)?),
            "orbit_values" => {
                orbit_values = Some(
                    value
                        .split(',')
                        .map(|t| {
                            t.trim()
                                .parse::<f64>()
                                .map_err(|e| Error::Parse(format!("orbit value: {e}")))
                        })
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            "quant" => quant_id = Some(value.to_string()),
            "epoch" => epoch = Some(value.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?),
            "best_eval" => {
                best_eval = Some(value.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?)
            }
            "history" => in_history = true,
            _ => {}
        }
    }
    let size = size.ok_or_else(|| Error::Parse("missing size".into()))?;
    let constraints = constraints.ok_or_else(|| Error::Parse("missing constraints".into()))?;
    let params = orbit_values.ok_or_else(|| Error::Parse("missing orbit_values".into()))?;
    let template = KernelParams::new(size, vec![0.0; size * size], constraints)?;
    let kernel = template.with_params(&params)?;
    Ok(CheckpointData {
        kernel,
        quant_id: quant_id.ok_or_else(|| Error::Parse("missing quant id".into()))?,
        epoch: epoch.ok_or_else(|| Error::Parse("missing epoch".into()))?,
        best_eval: best_eval.ok_or_else(|| Error::Parse("missing best_eval".into()))?,
        history,
    })
}

/// Per-epoch training log as CSV with a fixed header and float precision.
pub fn training_log_csv(state: &TrainingState) -> String {
    let mut out = String::from(
        "epoch,lr,raw_cov,raw_wass,raw_corr,norm_cov,norm_wass,norm_corr,total,l_eval,best,descent_fraction\n",
    );
    for r in &state.history {
        out.push_str(&format!(
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{},{:.4}\n",
            r.epoch,
            r.lr,
            r.raw.cov,
            r.raw.wass,
            r.raw.corr,
            r.normalized.cov,
            r.normalized.wass,
            r.normalized.corr,
            r.total,
            r.l_eval,
            if r.best { 1 } else { 0 },
            r.descent_fraction
        ));
    }
    out
}

//! Pipeline catalog: named development pipelines loadable from a TOML file.
//!
//! Schema (one `[[pipeline]]` table per entry):
//!
//! ```toml
//! [[pipeline]]
//! id = "sharpen-s"
//! quality = 85                      # Annex-K luminance table at this quality
//! ops = [ { kind = "convolve", kernel = "sharpen-s" } ]
//!
//! [[pipeline]]
//! id = "custom"
//! quality = 85
//! ops = [
//!   { kind = "convolve", rows = [[0.0, -0.25, 0.0], [-0.25, 2.0, -0.25], [0.0, -0.25, 0.0]] },
//!   { kind = "unsharp", radius = 1.0, amount = 0.5 },
//!   { kind = "blur", radius = 0.7 },
//! ]
//! ```
//!
//! `kernel` names a builtin (`identity`, `sharpen-s`, `half-sharpen-s`);
//! `rows` gives an explicit odd square kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{DevOp, Kernel, PipelineConfig};
use crate::jpegcodec::QuantTable;

/// Center-2, four-neighbor -1/4 sharpening kernel; sums to 1.
const SHARPEN_S: [f64; 9] = [0.0, -0.25, 0.0, -0.25, 2.0, -0.25, 0.0, -0.25, 0.0];

/// Builtin kernels addressable by name in catalog files.
pub fn builtin_kernel(name: &str) -> Result<Kernel> {
    match name {
        "identity" => Kernel::identity(3),
        "sharpen-s" => Kernel::new(3, SHARPEN_S.to_vec()),
        "half-sharpen-s" => Ok(Kernel::new(3, SHARPEN_S.to_vec())?.scale(0.5)),
        other => Err(Error::invalid(format!("unknown builtin kernel `{other}`"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogFile {
    #[serde(rename = "pipeline")]
    pipelines: Vec<CatalogEntrySer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogEntrySer {
    id: String,
    quality: u8,
    ops: Vec<OpSer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OpSer {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rows: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    amount: Option<f64>,
}

/// A parsed catalog entry.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub pipeline: PipelineConfig,
    pub quality: u8,
}

/// Parses a TOML pipeline catalog.
pub fn parse_catalog(text: &str) -> Result<Vec<CatalogEntry>> {
    let file: CatalogFile =
        toml::from_str(text).map_err(|e| Error::Parse(format!("catalog: {e}")))?;
    if file.pipelines.is_empty() {
        return Err(Error::Parse("catalog has no pipelines".into()));
    }
    file.pipelines
        .into_iter()
        .map(|entry| {
            let quant = QuantTable::from_quality(entry.quality)?;
            let ops = entry
                .ops
                .iter()
                .map(|op| parse_op(&entry.id, op))
                .collect::<Result<Vec<_>>>()?;
            Ok(CatalogEntry {
                pipeline: PipelineConfig::new(entry.id, ops, quant.steps())?,
                quality: entry.quality,
            })
        })
        .collect()
}

fn parse_op(id: &str, op: &OpSer) -> Result<DevOp> {
    match op.kind.as_str() {
        "convolve" => {
            let kernel = match (&op.kernel, &op.rows) {
                (Some(name), None) => builtin_kernel(name)?,
                (None, Some(rows)) => {
                    let size = rows.len();
                    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                    if rows.iter().any(|r| r.len() != size) {
                        return Err(Error::Parse(format!(
                            "pipeline `{id}`: kernel rows must form a square"
                        )));
                    }
                    Kernel::new(size, flat)?
                }
                _ => {
                    return Err(Error::Parse(format!(
                        "pipeline `{id}`: convolve needs exactly one of `kernel` or `rows`"
                    )))
                }
            };
            Ok(DevOp::Convolve(kernel))
        }
        "unsharp" => Ok(DevOp::UnsharpMask {
            radius: op.radius.ok_or_else(|| {
                Error::Parse(format!("pipeline `{id}`: unsharp needs `radius`"))
            })?,
            amount: op.amount.ok_or_else(|| {
                Error::Parse(format!("pipeline `{id}`: unsharp needs `amount`"))
            })?,
        }),
        "blur" => Ok(DevOp::Blur {
            radius: op
                .radius
                .ok_or_else(|| Error::Parse(format!("pipeline `{id}`: blur needs `radius`")))?,
        }),
        other => Err(Error::Parse(format!(
            "pipeline `{id}`: unknown op kind `{other}`"
        ))),
    }
}

/// Serializes entries back to the catalog TOML schema.
pub fn write_catalog(entries: &[CatalogEntry]) -> Result<String> {
    let pipelines = entries
        .iter()
        .map(|e| CatalogEntrySer {
            id: e.pipeline.identifier.clone(),
            quality: e.quality,
            ops: e.pipeline.ops.iter().map(serialize_op).collect(),
        })
        .collect();
    toml::to_string(&CatalogFile { pipelines })
        .map_err(|e| Error::Parse(format!("catalog serialize: {e}")))
}

fn serialize_op(op: &DevOp) -> OpSer {
    match op {
        DevOp::Convolve(k) => OpSer {
            kind: "convolve".into(),
            kernel: None,
            rows: Some(
                (0..k.size())
                    .map(|r| k.row(r).to_vec())
                    .collect::<Vec<_>>(),
            ),
            radius: None,
            amount: None,
        },
        DevOp::UnsharpMask { radius, amount } => OpSer {
            kind: "unsharp".into(),
            kernel: None,
            rows: None,
            radius: Some(*radius),
            amount: Some(*amount),
        },
        DevOp::Blur { radius } => OpSer {
            kind: "blur".into(),
            kernel: None,
            rows: None,
            radius: Some(*radius),
            amount: None,
        },
    }
}

/// The default source catalog: identity, the two sharpen variants, an
/// unsharp-mask strength grid and a blur grid, all at the given quality.
pub fn default_catalog(quality: u8) -> Result<Vec<CatalogEntry>> {
    let quant = QuantTable::from_quality(quality)?;
    let steps = quant.steps();
    let mk = |id: &str, ops: Vec<DevOp>| -> Result<CatalogEntry> {
        Ok(CatalogEntry {
            pipeline: PipelineConfig::new(id, ops, steps)?,
            quality,
        })
    };
    Ok(vec![
        mk("identity", vec![])?,
        mk("sharpen-s", vec![DevOp::Convolve(builtin_kernel("sharpen-s")?)])?,
        mk(
            "half-sharpen-s",
            vec![DevOp::Convolve(builtin_kernel("half-sharpen-s")?)],
        )?,
        mk(
            "unsharp-r1.0-a0.5",
            vec![DevOp::UnsharpMask {
                radius: 1.0,
                amount: 0.5,
            }],
        )?,
        mk(
            "unsharp-r1.0-a1.5",
            vec![DevOp::UnsharpMask {
                radius: 1.0,
                amount: 1.5,
            }],
        )?,
        mk(
            "unsharp-r2.0-a1.0",
            vec![DevOp::UnsharpMask {
                radius: 2.0,
                amount: 1.0,
            }],
        )?,
        mk("blur-r0.7", vec![DevOp::Blur { radius: 0.7 }])?,
        mk("blur-r1.4", vec![DevOp::Blur { radius: 1.4 }])?,
    ])
}

//! Cost-based simulated JPEG-domain embedding: UERD modification costs,
//! payload-limited lambda search and independent ternary change simulation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::jpegcodec::{count_nzac, JpegCoeffs};

/// Coefficients whose magnitude would leave the baseline-encodable range
/// after a +-1 change are never touched.
const SATURATION_LIMIT: i32 = 1022;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingScheme {
    Uerd,
    UniformCost,
}

#[derive(Debug, Clone, Copy)]
pub struct EmbeddingConfig {
    pub scheme: EmbeddingScheme,
    pub payload_bpnzac: f64,
    pub seed: u64,
}

impl EmbeddingConfig {
    pub fn new(scheme: EmbeddingScheme, payload_bpnzac: f64, seed: u64) -> Result<Self> {
        if !(payload_bpnzac > 0.0 && payload_bpnzac <= 1.5) {
            return Err(Error::invalid(format!(
                "payload {payload_bpnzac} bpnzac outside (0, 1.5]"
            )));
        }
        Ok(EmbeddingConfig {
            scheme,
            payload_bpnzac,
            seed,
        })
    }
}

/// Per-coefficient modification costs aligned with a coefficient grid.
/// Wet entries carry infinite cost and are never modified.
#[derive(Debug, Clone)]
pub struct CostMap {
    rho: Vec<f64>,
    wet: Vec<bool>,
}

impl CostMap {
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn wet(&self) -> &[bool] {
        &self.wet
    }

    pub fn dry_count(&self) -> usize {
        self.wet.iter().filter(|&&w| !w).count()
    }
}

/// UERD modification costs.
///
/// Per-block energy is the quant-weighted sum of AC magnitudes; each AC
/// coefficient costs its mode's quantization step divided by the block
/// energy plus a quarter of the 8-neighborhood energies. DC coefficients,
/// saturated magnitudes and zero-energy neighborhoods are wet.
pub fn uerd_costs(coeffs: &JpegCoeffs) -> Result<CostMap> {
    let bh = coeffs.blocks_h();
    let bw = coeffs.blocks_w();
    let quant = coeffs.quant().clone();

    let mut energy = vec![0.0f64; bh * bw];
    for b in 0..bh * bw {
        let block = &coeffs.coeffs()[b * 64..(b + 1) * 64];
        let mut e = 0.0;
        for k in 0..8 {
            for l in 0..8 {
                if k == 0 && l == 0 {
                    continue;
                }
                e += (block[k * 8 + l].abs() as f64) * quant.step(k, l) as f64;
            }
        }
        energy[b] = e;
    }

    let mut rho = vec![f64::INFINITY; bh * bw * 64];
    let mut wet = vec![true; bh * bw * 64];
    let mut any_dry = false;
    for br in 0..bh {
        for bc in 0..bw {
            let b = br * bw + bc;
            let mut neighborhood = energy[b];
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let nr = br as i64 + dr;
                    let nc = bc as i64 + dc;
                    if nr >= 0 && nr < bh as i64 && nc >= 0 && nc < bw as i64 {
                        neighborhood += 0.25 * energy[nr as usize * bw + nc as usize];
                    }
                }
            }
            if neighborhood <= 0.0 {
                continue; // whole block stays wet
            }
            let block = &coeffs.coeffs()[b * 64..(b + 1) * 64];
            for k in 0..8 {
                for l in 0..8 {
                    if k == 0 && l == 0 {
                        continue;
                    }
                    let idx = b * 64 + k * 8 + l;
                    if block[k * 8 + l].abs() >= SATURATION_LIMIT {
                        continue;
                    }
                    rho[idx] = quant.step(k, l) as f64 / neighborhood;
                    wet[idx] = false;
                    any_dry = true;
                }
            }
        }
    }
    if !any_dry {
        return Err(Error::InfeasiblePayload(
            "no embeddable coefficient: image has no AC energy anywhere".into(),
        ));
    }
    Ok(CostMap { rho, wet })
}

/// Uniform fallback costs: 1 for every non-wet coefficient (DC and
/// saturated entries stay wet).
pub fn uniform_costs(coeffs: &JpegCoeffs) -> Result<CostMap> {
    let blocks = coeffs.blocks_h() * coeffs.blocks_w();
    let mut rho = vec![f64::INFINITY; blocks * 64];
    let mut wet = vec![true; blocks * 64];
    for b in 0..blocks {
        let block = &coeffs.coeffs()[b * 64..(b + 1) * 64];
        for m in 1..64 {
            if block[m].abs() >= SATURATION_LIMIT {
                continue;
            }
            rho[b * 64 + m] = 1.0;
            wet[b * 64 + m] = false;
        }
    }
    if rho.iter().all(|r| r.is_infinite()) {
        return Err(Error::InfeasiblePayload("no embeddable coefficient".into()));
    }
    Ok(CostMap { rho, wet })
}

pub fn costs_for(coeffs: &JpegCoeffs, scheme: EmbeddingScheme) -> Result<CostMap> {
    match scheme {
        EmbeddingScheme::Uerd => uerd_costs(coeffs),
        EmbeddingScheme::UniformCost => uniform_costs(coeffs),
    }
}

/// Per-sign change probability under the Gibbs distribution at `lambda`:
/// `p = exp(-lambda rho) / (1 + 2 exp(-lambda rho))`.
pub fn change_probability(rho: f64, lambda: f64) -> f64 {
    if rho.is_infinite() {
        return 0.0;
    }
    let x = (-lambda * rho).exp();
    x / (1.0 + 2.0 * x)
}

/// Ternary entropy (bits) of a change distribution with per-sign
/// probability `p`.
pub fn ternary_entropy(p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    let p0 = 1.0 - 2.0 * p;
    let mut h = -2.0 * p * p.log2();
    if p0 > 0.0 {
        h -= p0 * p0.log2();
    }
    h
}

/// Total payload (bits) the cost map carries at `lambda`.
pub fn total_entropy(costs: &CostMap, lambda: f64) -> f64 {
    costs
        .rho
        .iter()
        .map(|&r| ternary_entropy(change_probability(r, lambda)))
        .sum()
}

/// Finds `lambda` such that the total ternary entropy equals `target_bits`
/// within the relative tolerance `tol`. The entropy is strictly decreasing
/// in `lambda`, so bisection applies.
pub fn payload_lambda_search(costs: &CostMap, target_bits: f64, tol: f64) -> Result<f64> {
    if target_bits <= 0.0 {
        return Err(Error::invalid("target payload must be positive"));
    }
    let capacity = costs.dry_count() as f64 * 3f64.log2();
    if target_bits > capacity * (1.0 + 1e-12) {
        return Err(Error::InfeasiblePayload(format!(
            "target {target_bits:.1} bits exceeds ternary capacity {capacity:.1}"
        )));
    }
    if (target_bits - capacity).abs() <= tol * target_bits {
        return Ok(0.0);
    }

    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut hi_entropy = total_entropy(costs, hi);
    let mut guard = 0;
    while hi_entropy > target_bits {
        lo = hi;
        hi *= 2.0;
        hi_entropy = total_entropy(costs, hi);
        guard += 1;
        if guard > 200 {
            return Err(Error::InfeasiblePayload(
                "payload too small to bracket lambda".into(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let h = total_entropy(costs, mid);
        if (h - target_bits).abs() <= tol * target_bits {
            return Ok(mid);
        }
        if h > target_bits {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Change probabilities, lambda and target bits for a cover; exposed so the
/// harness can cross-check realized payloads.
pub fn embedding_probabilities(
    coeffs: &JpegCoeffs,
    cfg: &EmbeddingConfig,
) -> Result<(Vec<f64>, f64, f64)> {
    let costs = costs_for(coeffs, cfg.scheme)?;
    let target_bits = cfg.payload_bpnzac * count_nzac(coeffs) as f64;
    if target_bits <= 0.0 {
        return Err(Error::InfeasiblePayload(
            "cover has no nonzero AC coefficient".into(),
        ));
    }
    let lambda = payload_lambda_search(&costs, target_bits, 1e-6)?;
    let probs = costs
        .rho
        .iter()
        .map(|&r| change_probability(r, lambda))
        .collect();
    Ok((probs, lambda, target_bits))
}

/// Payload-exact simulated ternary embedding. Each coefficient is changed
/// by +-1 independently with its Gibbs probability; deterministic given the
/// configuration seed.
pub fn simulate_embedding(coeffs: &JpegCoeffs, cfg: &EmbeddingConfig) -> Result<JpegCoeffs> {
    let (probs, _, _) = embedding_probabilities(coeffs, cfg)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut out = coeffs.clone();
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let u = rng.random::<f64>();
        if u < p {
            out.coeffs_mut()[i] += 1;
        } else if u < 2.0 * p {
            out.coeffs_mut()[i] -= 1;
        }
    }
    Ok(out)
}

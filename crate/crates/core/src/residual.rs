//! High-pass residual extraction, JPEG-grid-aligned patching and
//! variance-quantile patch selection.

use crate::error::{Error, Result};
use crate::imagery::{sample_variance, GrayImage, Kernel};
use crate::linalg::Matrix;

/// A zero-sum high-pass filter used to expose pipeline noise fingerprints.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFilter {
    id: String,
    kernel: Kernel,
}

impl ResidualFilter {
    /// The KB filter.
    pub fn kb() -> Self {
        let kernel = Kernel::new(
            3,
            vec![-0.25, 0.5, -0.25, 0.5, -1.0, 0.5, -0.25, 0.5, -0.25],
        )
        .expect("kb kernel");
        ResidualFilter {
            id: "kb".into(),
            kernel,
        }
    }

    /// Four-neighbor Laplacian, unnormalized.
    pub fn l4() -> Self {
        let kernel = Kernel::new(3, vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0])
            .expect("l4 kernel");
        ResidualFilter {
            id: "l4".into(),
            kernel,
        }
    }

    /// Custom filter; the kernel must sum to zero so constants are killed.
    pub fn custom(id: impl Into<String>, kernel: Kernel) -> Result<Self> {
        if kernel.sum().abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "residual filter kernel sums to {}, expected 0",
                kernel.sum()
            )));
        }
        Ok(ResidualFilter {
            id: id.into(),
            kernel,
        })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "kb" => Ok(ResidualFilter::kb()),
            "l4" => Ok(ResidualFilter::l4()),
            other => Err(Error::invalid(format!("unknown residual filter `{other}`"))),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn margin(&self) -> usize {
        self.kernel.margin()
    }
}

/// Flattened residual patches with their selection mask.
#[derive(Debug, Clone)]
pub struct ResidualPatchSet {
    patches: Matrix,
    patch_h: usize,
    patch_w: usize,
    filter_id: String,
    selected: Vec<bool>,
}

impl ResidualPatchSet {
    pub fn patch_h(&self) -> usize {
        self.patch_h
    }

    pub fn patch_w(&self) -> usize {
        self.patch_w
    }

    pub fn dim(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn len(&self) -> usize {
        self.patches.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.rows() == 0
    }

    pub fn filter_id(&self) -> &str {
        &self.filter_id
    }

    pub fn patches(&self) -> &Matrix {
        &self.patches
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    /// Rows of the patch matrix with `selected = true`.
    pub fn selected_matrix(&self) -> Matrix {
        let d = self.dim();
        let count = self.selected_count();
        let mut data = Vec::with_capacity(count * d);
        for (i, &keep) in self.selected.iter().enumerate() {
            if keep {
                data.extend_from_slice(self.patches.row(i));
            }
        }
        Matrix::from_vec(count, d, data)
    }

    /// Per-patch sample variance.
    pub fn variances(&self) -> Vec<f64> {
        (0..self.patches.rows())
            .map(|i| sample_variance(self.patches.row(i)))
            .collect()
    }

    /// Merges several patch sets (same geometry and filter) into one.
    pub fn concat(sets: &[ResidualPatchSet]) -> Result<ResidualPatchSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::invalid("cannot concat zero patch sets"))?;
        let d = first.dim();
        let mut data = Vec::new();
        let mut selected = Vec::new();
        for s in sets {
            if s.patch_h != first.patch_h || s.patch_w != first.patch_w || s.filter_id != first.filter_id
            {
                return Err(Error::dims("patch sets disagree on geometry or filter"));
            }
            data.extend_from_slice(s.patches.data());
            selected.extend_from_slice(&s.selected);
        }
        let rows = selected.len();
        Ok(ResidualPatchSet {
            patches: Matrix::from_vec(rows, d, data),
            patch_h: first.patch_h,
            patch_w: first.patch_w,
            filter_id: first.filter_id.clone(),
            selected,
        })
    }

    /// Keeps only the masked rows, producing a set with all patches selected.
    pub fn compact(&self) -> ResidualPatchSet {
        ResidualPatchSet {
            patches: self.selected_matrix(),
            patch_h: self.patch_h,
            patch_w: self.patch_w,
            filter_id: self.filter_id.clone(),
            selected: vec![true; self.selected_count()],
        }
    }

    /// Debug CSV: one row per patch, selection flag first.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("selected");
        for j in 0..self.dim() {
            out.push_str(&format!(",v{j}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(if self.selected[i] { "1" } else { "0" });
            for v in self.patches.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Valid-region application of a residual filter.
pub fn apply_filter(image: &GrayImage, filter: &ResidualFilter) -> Result<GrayImage> {
    image.convolve_valid(filter.kernel())
}

/// Cuts the residual into non-overlapping `patch_h` x `patch_w` tiles whose
/// top-left corners land on the 8-aligned JPEG grid of the pre-filter frame.
///
/// `origin_offset` gives the coordinates of the residual's (0, 0) pixel in
/// that frame (the filter margin), so grid alignment refers to the original
/// image, not the shrunken residual.
pub fn extract_patches(
    residual: &GrayImage,
    patch_h: usize,
    patch_w: usize,
    origin_offset: (usize, usize),
) -> Result<ResidualPatchSet> {
    if patch_h == 0 || patch_w == 0 || patch_h % 8 != 0 || patch_w % 8 != 0 {
        return Err(Error::invalid(format!(
            "patch dimensions {patch_h}x{patch_w} must be positive multiples of 8"
        )));
    }
    let r0 = (8 - origin_offset.0 % 8) % 8;
    let c0 = (8 - origin_offset.1 % 8) % 8;
    if r0 + patch_h > residual.height() || c0 + patch_w > residual.width() {
        return Err(Error::dims(format!(
            "no complete {patch_h}x{patch_w} patch fits a {}x{} residual at offset ({r0},{c0})",
            residual.height(),
            residual.width()
        )));
    }
    let n_rows = (residual.height() - r0) / patch_h;
    let n_cols = (residual.width() - c0) / patch_w;
    let d = patch_h * patch_w;
    let mut data = Vec::with_capacity(n_rows * n_cols * d);
    for pr in 0..n_rows {
        for pc in 0..n_cols {
            let top = r0 + pr * patch_h;
            let left = c0 + pc * patch_w;
            for u in 0..patch_h {
                data.extend_from_slice(&residual.row(top + u)[left..left + patch_w]);
            }
        }
    }
    let n = n_rows * n_cols;
    Ok(ResidualPatchSet {
        patches: Matrix::from_vec(n, d, data),
        patch_h,
        patch_w,
        filter_id: String::new(),
        selected: vec![true; n],
    })
}

/// Same as [`extract_patches`] but records the filter identity on the set.
pub fn extract_patches_for(
    residual: &GrayImage,
    patch_h: usize,
    patch_w: usize,
    filter: &ResidualFilter,
) -> Result<ResidualPatchSet> {
    let m = filter.margin();
    let mut set = extract_patches(residual, patch_h, patch_w, (m, m))?;
    set.filter_id = filter.id.clone();
    Ok(set)
}

/// Interpolated quantile of already-sorted values at fraction `q`.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n as f64 - 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Marks as selected the patches whose sample variance lies inside the
/// closed interval of the set's own variance quantiles.
pub fn select_by_variance(
    set: &ResidualPatchSet,
    q_low: f64,
    q_high: f64,
) -> Result<ResidualPatchSet> {
    if !(0.0..=1.0).contains(&q_low) || !(0.0..=1.0).contains(&q_high) || q_low >= q_high {
        return Err(Error::invalid(format!(
            "quantile bounds ({q_low}, {q_high}) must satisfy 0 <= low < high <= 1"
        )));
    }
    if set.len() < 2 {
        return Err(Error::invalid("variance selection needs at least 2 patches"));
    }
    let variances = set.variances();
    let mut sorted = variances.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = quantile_sorted(&sorted, q_low);
    let hi = quantile_sorted(&sorted, q_high);
    let selected: Vec<bool> = variances.iter().map(|&v| v >= lo && v <= hi).collect();
    if !selected.iter().any(|&s| s) {
        return Err(Error::EmptySelection(format!(
            "no patch variance falls in [{lo:.6e}, {hi:.6e}]"
        )));
    }
    Ok(ResidualPatchSet {
        patches: set.patches.clone(),
        patch_h: set.patch_h,
        patch_w: set.patch_w,
        filter_id: set.filter_id.clone(),
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_image(h: usize, w: usize) -> GrayImage {
        let mut img = GrayImage::constant(h, w, 0.0);
        for r in 0..h {
            for c in 0..w {
                img.set(r, c, 3.0 * r as f64 + 2.0 * c as f64);
            }
        }
        img
    }

    #[test]
    fn constant_image_gives_zero_residual() {
        let img = GrayImage::constant(16, 16, 123.0);
        for f in [ResidualFilter::kb(), ResidualFilter::l4()] {
            let res = apply_filter(&img, &f).unwrap();
            assert!(res.pixels().iter().all(|&v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn laplacian_annihilates_ramps() {
        let img = ramp_image(16, 16);
        let res = apply_filter(&img, &ResidualFilter::l4()).unwrap();
        assert!(res.pixels().iter().all(|&v| v.abs() < 1e-10));
    }

    #[test]
    fn filter_is_linear() {
        let a = ramp_image(12, 12);
        let mut b = GrayImage::constant(12, 12, 0.0);
        for r in 0..12 {
            for c in 0..12 {
                b.set(r, c, ((r * r + c) % 9) as f64);
            }
        }
        let f = ResidualFilter::kb();
        let combo_pixels: Vec<f64> = a
            .pixels()
            .iter()
            .zip(b.pixels())
            .map(|(x, y)| 2.0 * x - 3.0 * y)
            .collect();
        let combo = GrayImage::new(12, 12, combo_pixels).unwrap();
        let lhs = apply_filter(&combo, &f).unwrap();
        let ra = apply_filter(&a, &f).unwrap();
        let rb = apply_filter(&b, &f).unwrap();
        for ((l, x), y) in lhs.pixels().iter().zip(ra.pixels()).zip(rb.pixels()) {
            assert!((l - (2.0 * x - 3.0 * y)).abs() < 1e-9);
        }
    }

    #[test]
    fn patch_counts_on_grid_aligned_residual() {
        let img = GrayImage::constant(64, 64, 1.0);
        let set = extract_patches(&img, 8, 16, (0, 0)).unwrap();
        assert_eq!(set.len(), 32);
        assert_eq!(set.dim(), 128);
        let set16 = extract_patches(&img, 16, 16, (0, 0)).unwrap();
        assert_eq!(set16.len(), 16);
        assert_eq!(set16.dim(), 256);
    }

    #[test]
    fn single_patch_preserves_values() {
        let img = ramp_image(8, 16);
        let set = extract_patches(&img, 8, 16, (0, 0)).unwrap();
        assert_eq!(set.len(), 1);
        let flat: Vec<f64> = (0..8).flat_map(|r| img.row(r).to_vec()).collect();
        assert_eq!(set.patches().row(0), flat.as_slice());
    }

    #[test]
    fn margin_offset_compensation() {
        // A 3x3 filter on a 64x64 image leaves a 62x62 residual whose (0,0)
        // sits at (1,1) of the original: the first aligned start is (7,7).
        let img = GrayImage::constant(64, 64, 9.0);
        let f = ResidualFilter::kb();
        let res = apply_filter(&img, &f).unwrap();
        assert_eq!((res.height(), res.width()), (62, 62));
        let set = extract_patches(&res, 8, 16, (f.margin(), f.margin())).unwrap();
        // Rows: (62-7)/8 = 6, cols: (62-7)/16 = 3.
        assert_eq!(set.len(), 18);
    }

    #[test]
    fn patches_partition_covered_region() {
        let mut img = GrayImage::constant(32, 32, 0.0);
        for r in 0..32 {
            for c in 0..32 {
                img.set(r, c, (r * 32 + c) as f64);
            }
        }
        let set = extract_patches(&img, 8, 16, (0, 0)).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..set.len() {
            for &v in set.patches().row(i) {
                assert!(seen.insert(v as u64), "pixel {v} appeared twice");
            }
        }
        assert_eq!(seen.len(), set.len() * set.dim());
    }

    #[test]
    fn variance_selection_matches_bruteforce_quantiles() {
        // 10 patches with variances 1..10: values (-v, v) have variance 2v^2...
        // instead build patches with exact variance k via {0, sqrt(2k)} pairs
        // spread over D=64 entries: simplest is to craft rows directly.
        let d = 64;
        let mut rows = Vec::new();
        for k in 1..=10 {
            // Patch with sample variance exactly k: first entry sqrt(k*d), rest 0
            // has variance k*d/ (d-1)... use two-point rows instead:
            // row = [a, -a, 0...0] with a chosen so variance = k.
            let a = ((k as f64) * (d as f64 - 1.0) / 2.0).sqrt();
            let mut row = vec![0.0; d];
            row[0] = a;
            row[1] = -a;
            rows.push(row);
        }
        let set = ResidualPatchSet {
            patches: Matrix::from_rows(&rows),
            patch_h: 8,
            patch_w: 8,
            filter_id: "test".into(),
            selected: vec![true; 10],
        };
        let vars = set.variances();
        for (i, v) in vars.iter().enumerate() {
            assert!((v - (i as f64 + 1.0)).abs() < 1e-9);
        }
        let out = select_by_variance(&set, 0.3, 0.6).unwrap();
        // Interpolated bounds 3.7 and 6.4 keep variances {4, 5, 6}.
        let kept: Vec<usize> = out
            .selected()
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i + 1))
            .collect();
        assert_eq!(kept, vec![4, 5, 6]);

        // Idempotence with the same bounds.
        let again = select_by_variance(&out, 0.3, 0.6).unwrap();
        assert_eq!(again.selected(), out.selected());
    }

    #[test]
    fn full_range_and_ties_select_everything() {
        let rows: Vec<Vec<f64>> = (0..5).map(|_| vec![1.0, 2.0, 3.0, 4.0]).collect();
        let set = ResidualPatchSet {
            patches: Matrix::from_rows(&rows),
            patch_h: 8,
            patch_w: 8,
            filter_id: "test".into(),
            selected: vec![true; 5],
        };
        let all = select_by_variance(&set, 0.0, 1.0).unwrap();
        assert_eq!(all.selected_count(), 5);
        // Equal variances collapse the quantiles; inclusive bounds keep all.
        let mid = select_by_variance(&set, 0.3, 0.6).unwrap();
        assert_eq!(mid.selected_count(), 5);
    }

    #[test]
    fn no_fitting_patch_is_error() {
        let img = GrayImage::constant(10, 10, 0.0);
        assert!(extract_patches(&img, 16, 16, (0, 0)).is_err());
    }
}

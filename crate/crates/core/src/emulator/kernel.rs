//! Learnable constrained convolution kernel, parameterized by its
//! dihedral-symmetry orbits.
//!
//! Cells of an odd n x n grid fall into orbits of the 8-element dihedral
//! group; a symmetric kernel is determined by one value per orbit. Orbits
//! are ordered by their (min, max) center-distance key, so index 0 is
//! always the center cell. A 3 x 3 kernel has 3 orbits (center, edge
//! neighbors, corners) and a 7 x 7 kernel has 10.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imagery::Kernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSet {
    None,
    SumToOne,
    Symmetry,
    Both,
}

impl ConstraintSet {
    pub fn symmetry(&self) -> bool {
        matches!(self, ConstraintSet::Symmetry | ConstraintSet::Both)
    }

    pub fn sum_to_one(&self) -> bool {
        matches!(self, ConstraintSet::SumToOne | ConstraintSet::Both)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "none" => Ok(ConstraintSet::None),
            "sum-to-1" | "sum" => Ok(ConstraintSet::SumToOne),
            "symmetry" | "sym" => Ok(ConstraintSet::Symmetry),
            "both" => Ok(ConstraintSet::Both),
            other => Err(Error::invalid(format!("unknown constraint set `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConstraintSet::None => "none",
            ConstraintSet::SumToOne => "sum-to-1",
            ConstraintSet::Symmetry => "symmetry",
            ConstraintSet::Both => "both",
        }
    }
}

/// Orbit layout of an odd-sized square grid.
#[derive(Debug, Clone)]
pub struct OrbitLayout {
    size: usize,
    /// Orbit index per cell, row-major.
    cell_orbit: Vec<usize>,
    /// Cell count per orbit.
    orbit_sizes: Vec<usize>,
}

impl OrbitLayout {
    pub fn new(size: usize) -> Result<OrbitLayout> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::invalid(format!("kernel size {size} must be odd")));
        }
        let m = size / 2;
        let mut keys = Vec::new();
        let mut cell_keys = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                let x = r.abs_diff(m);
                let y = c.abs_diff(m);
                let key = (x.min(y), x.max(y));
                cell_keys.push(key);
                if !keys.contains(&key) {
                    keys.push(key);
                }
            }
        }
        keys.sort();
        let cell_orbit: Vec<usize> = cell_keys
            .iter()
            .map(|k| keys.iter().position(|x| x == k).unwrap())
            .collect();
        let mut orbit_sizes = vec![0usize; keys.len()];
        for &o in &cell_orbit {
            orbit_sizes[o] += 1;
        }
        Ok(OrbitLayout {
            size,
            cell_orbit,
            orbit_sizes,
        })
    }

    pub fn orbit_count(&self) -> usize {
        self.orbit_sizes.len()
    }

    pub fn orbit_of(&self, r: usize, c: usize) -> usize {
        self.cell_orbit[r * self.size + c]
    }
}

/// The learnable emulation kernel with its active constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    size: usize,
    values: Vec<f64>,
    constraints: ConstraintSet,
}

impl KernelParams {
    pub fn new(size: usize, values: Vec<f64>, constraints: ConstraintSet) -> Result<Self> {
        if size % 2 == 0 || !(3..=11).contains(&size) {
            return Err(Error::invalid(format!(
                "kernel size {size} must be odd and within 3..=11"
            )));
        }
        if values.len() != size * size {
            return Err(Error::dims(format!(
                "kernel has {} values, expected {}",
                values.len(),
                size * size
            )));
        }
        Ok(KernelParams {
            size,
            values,
            constraints,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn constraints(&self) -> ConstraintSet {
        self.constraints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn center_value(&self) -> f64 {
        let m = self.size / 2;
        self.values[m * self.size + m]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn layout(&self) -> OrbitLayout {
        OrbitLayout::new(self.size).expect("validated size")
    }

    /// The free parameters: one value per orbit under symmetry (orbit
    /// means), otherwise all grid entries.
    pub fn params(&self) -> Vec<f64> {
        if self.constraints.symmetry() {
            let layout = self.layout();
            let mut sums = vec![0.0; layout.orbit_count()];
            for (i, &v) in self.values.iter().enumerate() {
                sums[layout.cell_orbit[i]] += v;
            }
            sums.iter()
                .zip(&layout.orbit_sizes)
                .map(|(s, &n)| s / n as f64)
                .collect()
        } else {
            self.values.clone()
        }
    }

    /// Rebuilds the kernel grid from a parameter vector (inverse of
    /// [`KernelParams::params`]).
    pub fn with_params(&self, params: &[f64]) -> Result<KernelParams> {
        if self.constraints.symmetry() {
            let layout = self.layout();
            if params.len() != layout.orbit_count() {
                return Err(Error::dims(format!(
                    "expected {} orbit values, got {}",
                    layout.orbit_count(),
                    params.len()
                )));
            }
            let values: Vec<f64> = layout.cell_orbit.iter().map(|&o| params[o]).collect();
            KernelParams::new(self.size, values, self.constraints)
        } else {
            if params.len() != self.size * self.size {
                return Err(Error::dims(format!(
                    "expected {} grid values, got {}",
                    self.size * self.size,
                    params.len()
                )));
            }
            KernelParams::new(self.size, params.to_vec(), self.constraints)
        }
    }

    pub fn param_count(&self) -> usize {
        if self.constraints.symmetry() {
            self.layout().orbit_count()
        } else {
            self.size * self.size
        }
    }

    /// The plain convolution kernel this parameterization expands to.
    pub fn expanded(&self) -> Kernel {
        Kernel::new(self.size, self.values.clone()).expect("validated kernel")
    }
}

/// Identity filter plus i.i.d. Gaussian noise, then constraint projection.
pub fn init_kernel(
    size: usize,
    sigma: f64,
    seed: u64,
    constraints: ConstraintSet,
) -> Result<KernelParams> {
    if sigma < 0.0 {
        return Err(Error::invalid("init sigma must be non-negative"));
    }
    let mut values = vec![0.0; size * size];
    let m = size / 2;
    // Constructor validates size; build values first for odd sizes only.
    if size % 2 == 1 {
        values[m * size + m] = 1.0;
    }
    if sigma > 0.0 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("gaussian");
        for v in &mut values {
            *v += normal.sample(&mut rng);
        }
    }
    let kernel = KernelParams::new(size, values, constraints)?;
    Ok(project_constraints(&kernel))
}

/// Euclidean projection onto the active constraints: average each dihedral
/// orbit, then shift uniformly so the entries sum to one. The two steps
/// commute on orbit space, and the projection is idempotent.
pub fn project_constraints(kernel: &KernelParams) -> KernelParams {
    let mut values = kernel.values.clone();
    if kernel.constraints.symmetry() {
        let layout = kernel.layout();
        let mut sums = vec![0.0; layout.orbit_count()];
        for (i, &v) in values.iter().enumerate() {
            sums[layout.cell_orbit[i]] += v;
        }
        for (i, v) in values.iter_mut().enumerate() {
            let o = layout.cell_orbit[i];
            *v = sums[o] / layout.orbit_sizes[o] as f64;
        }
    }
    if kernel.constraints.sum_to_one() {
        let n2 = (kernel.size * kernel.size) as f64;
        let shift = (values.iter().sum::<f64>() - 1.0) / n2;
        for v in &mut values {
            *v -= shift;
        }
    }
    KernelParams {
        size: kernel.size,
        values,
        constraints: kernel.constraints,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orbit_counts_match_closed_form() {
        assert_eq!(OrbitLayout::new(3).unwrap().orbit_count(), 3);
        assert_eq!(OrbitLayout::new(5).unwrap().orbit_count(), 6);
        assert_eq!(OrbitLayout::new(7).unwrap().orbit_count(), 10);
        assert_eq!(OrbitLayout::new(9).unwrap().orbit_count(), 15);
        assert_eq!(OrbitLayout::new(11).unwrap().orbit_count(), 21);
    }

    #[test]
    fn three_by_three_orbit_structure() {
        let layout = OrbitLayout::new(3).unwrap();
        // Center, edges, corners.
        assert_eq!(layout.orbit_of(1, 1), 0);
        assert_eq!(layout.orbit_of(0, 1), 1);
        assert_eq!(layout.orbit_of(1, 0), 1);
        assert_eq!(layout.orbit_of(0, 0), 2);
        assert_eq!(layout.orbit_of(2, 2), 2);
        assert_eq!(layout.orbit_sizes, vec![1, 4, 4]);
    }

    #[test]
    fn zero_sigma_gives_exact_identity() {
        let k = init_kernel(3, 0.0, 7, ConstraintSet::Both).unwrap();
        let p = k.params();
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        assert!((k.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn init_is_deterministic_and_projected() {
        let a = init_kernel(7, 0.01, 42, ConstraintSet::Both).unwrap();
        let b = init_kernel(7, 0.01, 42, ConstraintSet::Both).unwrap();
        assert_eq!(a.values(), b.values());
        let c = init_kernel(7, 0.01, 43, ConstraintSet::Both).unwrap();
        assert_ne!(a.values(), c.values());
        assert!((a.sum() - 1.0).abs() < 1e-12);
        // Deviation from identity stays small at sigma 0.01.
        let center = a.center_value();
        assert!((center - 1.0).abs() < 0.1);
        for (i, v) in a.values().iter().enumerate() {
            if i != 24 {
                assert!(v.abs() < 0.1);
            }
        }
    }

    #[test]
    fn even_size_rejected() {
        assert!(init_kernel(4, 0.0, 0, ConstraintSet::Both).is_err());
        assert!(init_kernel(13, 0.0, 0, ConstraintSet::Both).is_err());
    }

    #[test]
    fn projection_is_idempotent_and_symmetric() {
        let values: Vec<f64> = (0..9).map(|i| i as f64 * 0.3 - 1.0).collect();
        let k = KernelParams::new(3, values, ConstraintSet::Both).unwrap();
        let p1 = project_constraints(&k);
        let p2 = project_constraints(&p1);
        for (a, b) in p1.values().iter().zip(p2.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p1.sum() - 1.0).abs() < 1e-12);
        // Dihedral symmetry: all edges equal, all corners equal.
        let v = p1.values();
        assert_eq!(v[1], v[3]);
        assert_eq!(v[1], v[5]);
        assert_eq!(v[1], v[7]);
        assert_eq!(v[0], v[2]);
        assert_eq!(v[0], v[6]);
        assert_eq!(v[0], v[8]);
    }

    #[test]
    fn sum_constraint_forces_center_to_one_when_others_zero() {
        // Orbits (a, c, b) = (0.5, 0, 0): projection shifts uniformly, then
        // a + 4b + 4c = 1 exactly.
        let k = KernelParams::new(
            3,
            vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0],
            ConstraintSet::Both,
        )
        .unwrap();
        let p = project_constraints(&k);
        let params = p.params();
        let (a, c, b) = (params[0], params[1], params[2]);
        assert!((a + 4.0 * (b + c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn params_round_trip() {
        let k = init_kernel(7, 0.01, 3, ConstraintSet::Both).unwrap();
        let p = k.params();
        assert_eq!(p.len(), 10);
        let k2 = k.with_params(&p).unwrap();
        assert!(k
            .values()
            .iter()
            .zip(k2.values())
            .all(|(a, b)| (a - b).abs() < 1e-15));

        let free = init_kernel(5, 0.01, 3, ConstraintSet::None).unwrap();
        assert_eq!(free.param_count(), 25);
        let p = free.params();
        let f2 = free.with_params(&p).unwrap();
        assert_eq!(free.values(), f2.values());
    }
}

//! The pipeline emulator: a constrained convolution learned so that the
//! noise-residual distribution of developed source images matches a target.

mod io;
mod kernel;
mod train;

pub use io::{parse_checkpoint, training_log_csv, write_checkpoint, CheckpointData};
pub use kernel::{init_kernel, project_constraints, ConstraintSet, KernelParams, OrbitLayout};
pub use train::{
    TargetPatches,
    compute_loss, develop_pool_hard, fd_gradient, forward_develop, gradient, train,
    CompressionMode, GradientContext,
};

use crate::error::{Error, Result};

/// Raw (unnormalized) values of the three alignment terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermValues {
    pub cov: f64,
    pub wass: f64,
    pub corr: f64,
}

impl TermValues {
    pub fn zero() -> Self {
        TermValues {
            cov: 0.0,
            wass: 0.0,
            corr: 0.0,
        }
    }
}

/// Loss composition: term weights, enabled terms and the normalization
/// constants captured at initialization.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub lambda_cov: f64,
    pub mu_wass: f64,
    pub nu_corr: f64,
    pub cov_enabled: bool,
    pub wass_enabled: bool,
    pub corr_enabled: bool,
    /// Per-term normalizers fixed at epoch 0 (1.0 where the initial value
    /// vanishes). `None` until initialization.
    pub init_norms: Option<TermValues>,
    /// Entropic regularization as a fraction of the median target
    /// self-cost (target-only, so the scale is kernel-independent).
    pub wass_epsilon_fraction: f64,
    /// Patches per domain entering the transport term.
    pub wass_subsample: usize,
    pub wass_max_iter: usize,
    pub wass_tol: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_cov: 1.0,
            mu_wass: 1.0,
            nu_corr: 1.0,
            cov_enabled: true,
            wass_enabled: true,
            corr_enabled: true,
            init_norms: None,
            wass_epsilon_fraction: 0.05,
            wass_subsample: 1024,
            wass_max_iter: 300,
            wass_tol: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.cov_enabled && !self.wass_enabled && !self.corr_enabled {
            return Err(Error::invalid("at least one loss term must be enabled"));
        }
        if self.wass_epsilon_fraction <= 0.0 || self.wass_subsample == 0 {
            return Err(Error::invalid("invalid transport-term configuration"));
        }
        Ok(())
    }

    /// Enables exactly the named terms ("cov", "wass", "corr").
    pub fn with_terms(mut self, terms: &[&str]) -> Result<Self> {
        self.cov_enabled = false;
        self.wass_enabled = false;
        self.corr_enabled = false;
        for t in terms {
            match *t {
                "cov" => self.cov_enabled = true,
                "wass" => self.wass_enabled = true,
                "corr" => self.corr_enabled = true,
                other => return Err(Error::invalid(format!("unknown loss term `{other}`"))),
            }
        }
        self.validate()?;
        Ok(self)
    }
}

/// One loss evaluation: raw term values, init-normalized values and the
/// weighted total over enabled terms.
#[derive(Debug, Clone, Copy)]
pub struct AlignmentLoss {
    pub raw: TermValues,
    pub normalized: TermValues,
    pub total: f64,
    pub wass_converged: bool,
}

impl AlignmentLoss {
    /// The unnormalized checkpoint metric: covariance plus transport terms.
    pub fn eval_value(&self) -> f64 {
        self.raw.cov + self.raw.wass
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainHyper {
    pub kernel_size: usize,
    pub constraints: ConstraintSet,
    pub init_sigma: f64,
    pub init_seed: u64,
    /// Residual filter names ("kb", "l4").
    pub filters: Vec<String>,
    pub patch_h: usize,
    pub patch_w: usize,
    pub q_low: f64,
    pub q_high: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before the learning rate halves.
    pub lr_patience: usize,
    /// Epochs without improvement before training stops.
    pub early_stop_patience: usize,
    pub fd_step: f64,
    pub shuffle_seed: u64,
    pub subsample_seed: u64,
    /// Patches per domain for the checkpoint metric's transport term.
    pub eval_subsample: usize,
    /// Optional cutoff: stop once the checkpoint metric falls this low.
    pub eval_target: Option<f64>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            kernel_size: 3,
            constraints: ConstraintSet::Both,
            init_sigma: 0.01,
            init_seed: 1,
            filters: vec!["kb".into(), "l4".into()],
            patch_h: 8,
            patch_w: 16,
            q_low: 0.3,
            q_high: 0.6,
            lr: 0.001,
            batch_size: 256,
            max_epochs: 1000,
            lr_patience: 100,
            early_stop_patience: 200,
            fd_step: 1e-3,
            shuffle_seed: 11,
            subsample_seed: 12,
            eval_subsample: 256,
            eval_target: None,
        }
    }
}

/// Why a training run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    EvalTarget,
    NonFiniteLoss(String),
}

/// Per-epoch training record.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub raw: TermValues,
    pub normalized: TermValues,
    pub total: f64,
    pub l_eval: f64,
    pub best: bool,
    /// Fraction of this epoch's gradient steps that decreased their own
    /// fixed-batch loss.
    pub descent_fraction: f64,
}

/// Final state of a training run, including the best checkpoint.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub epoch: usize,
    pub lr: f64,
    pub best_eval: f64,
    pub best_kernel: KernelParams,
    pub epochs_since_improvement: usize,
    pub history: Vec<EpochRecord>,
    pub init_eval: f64,
    pub init_norms: TermValues,
    pub stop: StopReason,
}

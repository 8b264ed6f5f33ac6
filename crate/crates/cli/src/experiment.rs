//! Full experimental protocol: per-seed set construction, strategy
//! execution at each operational balance and report emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tada_core::baselines::{
    build_all_mixture, coral_operator, multiclassifier_route, select_closest_source,
    subspace_align, CatalogSource, ClosenessMetric, SourceCatalog, TargetBundle,
};
use tada_core::emulator::{
    train, training_log_csv, write_checkpoint, ConstraintSet, KernelParams, LossConfig,
    TrainHyper, TrainingState,
};
use tada_core::imagery::{parse_catalog, CatalogEntry, GrayImage, PipelineConfig};
use tada_core::jpegcodec::{JpegCoeffs, QuantTable};
use tada_core::linalg::Matrix;
use tada_core::steganalysis::{
    evaluate, features_matrix, train_detector, DctrSchema, Detector, FeatureVector,
};

use crate::config::ExperimentConfig;
use crate::report::{emit_report, ReportFormat, ReportRow};
use crate::sets::{
    build_pool, develop_and_compress, develop_with_kernel, mix_seed, paired_set, PairedSet,
    PoolRole,
};
use crate::{stage, HarnessError};

/// A comparison strategy named in the configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    TgtOnly,
    SrcOnly,
    Tada,
    All,
    Multiclassifier,
    Closest(ClosenessKind),
    Subspace,
    SubspaceOracle,
    Coral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosenessKind {
    Nscd,
    CovFrobenius,
    Mmd,
    Wasserstein,
}

impl Strategy {
    pub fn parse(name: &str) -> Result<Strategy, HarnessError> {
        match name {
            "tgt-only" => Ok(Strategy::TgtOnly),
            "src-only" => Ok(Strategy::SrcOnly),
            "tada" => Ok(Strategy::Tada),
            "all" => Ok(Strategy::All),
            "multiclassifier" => Ok(Strategy::Multiclassifier),
            "closest-nscd" => Ok(Strategy::Closest(ClosenessKind::Nscd)),
            "closest-cov" => Ok(Strategy::Closest(ClosenessKind::CovFrobenius)),
            "closest-mmd" => Ok(Strategy::Closest(ClosenessKind::Mmd)),
            "closest-wass" => Ok(Strategy::Closest(ClosenessKind::Wasserstein)),
            "subspace" => Ok(Strategy::Subspace),
            "subspace-oracle" => Ok(Strategy::SubspaceOracle),
            "coral" => Ok(Strategy::Coral),
            other => Err(HarnessError::Config(format!("unknown strategy `{other}`"))),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Strategy::TgtOnly => "tgt-only".into(),
            Strategy::SrcOnly => "src-only".into(),
            Strategy::Tada => "tada".into(),
            Strategy::All => "all".into(),
            Strategy::Multiclassifier => "multiclassifier".into(),
            Strategy::Closest(ClosenessKind::Nscd) => "closest-nscd".into(),
            Strategy::Closest(ClosenessKind::CovFrobenius) => "closest-cov".into(),
            Strategy::Closest(ClosenessKind::Mmd) => "closest-mmd".into(),
            Strategy::Closest(ClosenessKind::Wasserstein) => "closest-wass".into(),
            Strategy::Subspace => "subspace".into(),
            Strategy::SubspaceOracle => "subspace-oracle".into(),
            Strategy::Coral => "coral".into(),
        }
    }

    /// Whether the result depends on the operational set.
    fn uses_operational(&self) -> bool {
        matches!(
            self,
            Strategy::Tada
                | Strategy::Closest(_)
                | Strategy::Subspace
                | Strategy::SubspaceOracle
                | Strategy::Coral
        )
    }
}

/// Resolves a pipeline id against the configured catalog, rebinding its
/// quantization table to the target's.
fn resolve_pipeline(
    cfg: &ExperimentConfig,
    id: &str,
    quant: &QuantTable,
) -> Result<PipelineConfig, HarnessError> {
    let entries = load_catalog_entries(cfg)?;
    let entry = entries
        .iter()
        .find(|e| e.pipeline.identifier == id)
        .ok_or_else(|| HarnessError::Config(format!("pipeline `{id}` not in catalog")))?;
    PipelineConfig::new(
        entry.pipeline.identifier.clone(),
        entry.pipeline.ops.clone(),
        quant.steps(),
    )
    .map_err(|e| stage("catalog", e))
}

fn load_catalog_entries(cfg: &ExperimentConfig) -> Result<Vec<CatalogEntry>, HarnessError> {
    let file = cfg.catalog.file.as_ref().or(cfg.target.catalog_file.as_ref());
    match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Io(PathBuf::from(path), e))?;
            parse_catalog(&text).map_err(|e| stage("catalog", e))
        }
        None => {
            tada_core::imagery::default_catalog(cfg.target.quality).map_err(|e| stage("catalog", e))
        }
    }
}

/// Everything one seed's strategies share.
struct SeedContext<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    schema: DctrSchema,
    target_quant: QuantTable,
    target_id: String,
    eval: PairedSet,
    tgt_train: PairedSet,
    src_raws: Vec<GrayImage>,
    tada_raws: Vec<GrayImage>,
    op_covers: Vec<JpegCoeffs>,
    op_stegos: Vec<JpegCoeffs>,
    src_only: Option<PairedSet>,
    catalog: Option<SourceCatalog>,
    /// Memoized results of balance-independent strategies.
    memo: BTreeMap<String, (f64, String)>,
}

impl<'a> SeedContext<'a> {
    fn build(cfg: &'a ExperimentConfig, seed: u64) -> Result<SeedContext<'a>, HarnessError> {
        let schema = DctrSchema::by_name(&cfg.feature_schema).map_err(|e| stage("features", e))?;
        let target_quant =
            QuantTable::from_quality(cfg.target.quality).map_err(|e| stage("compress", e))?;
        let target_pipeline = resolve_pipeline(cfg, &cfg.target.pipeline, &target_quant)?;

        let eval_raws = build_pool(&cfg.raw, cfg.sets.eval_pairs, seed, PoolRole::Eval)?;
        let eval_covers = develop_and_compress(&eval_raws, &target_pipeline)?;
        let eval = paired_set(
            eval_covers,
            &cfg.embedding,
            mix_seed(seed, 0xa1, 0),
            &schema,
        )?;

        let tgt_raws = build_pool(
            &cfg.raw,
            cfg.sets.tgt_train_pairs,
            seed,
            PoolRole::TargetTrain,
        )?;
        let tgt_covers = develop_and_compress(&tgt_raws, &target_pipeline)?;
        let tgt_train = paired_set(
            tgt_covers,
            &cfg.embedding,
            mix_seed(seed, 0xa2, 0),
            &schema,
        )?;

        let op_raws = build_pool(&cfg.raw, cfg.operational.size, seed, PoolRole::Operational)?;
        let op_covers = develop_and_compress(&op_raws, &target_pipeline)?;
        let op_stegos = crate::sets::embed_covers(&op_covers, &cfg.embedding, mix_seed(seed, 0xa3, 0))?;

        let src_raws = build_pool(&cfg.raw, cfg.sets.train_pairs, seed, PoolRole::SourceTrain)?;
        let tada_raws = build_pool(&cfg.raw, cfg.sets.tada_pool, seed, PoolRole::TadaLearn)?;

        Ok(SeedContext {
            cfg,
            seed,
            schema,
            target_quant,
            target_id: cfg.target.pipeline.clone(),
            eval,
            tgt_train,
            src_raws,
            tada_raws,
            op_covers,
            op_stegos,
            src_only: None,
            catalog: None,
            memo: BTreeMap::new(),
        })
    }

    /// The unlabeled operational bundle at a balance.
    fn operational_bundle(&self, balance: &str) -> Result<TargetBundle, HarnessError> {
        let n = self.op_covers.len();
        let images: Vec<JpegCoeffs> = match balance {
            "full-cover" => self.op_covers.clone(),
            "full-stego" => self.op_stegos.clone(),
            "mix" => self.op_covers[..n / 2]
                .iter()
                .chain(&self.op_stegos[n / 2..])
                .cloned()
                .collect(),
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown operational balance `{other}`"
                )))
            }
        };
        TargetBundle::new(images).map_err(|e| stage("operational", e))
    }

    fn detector_reg(&self, n_train: usize) -> f64 {
        if self.cfg.detector.reg > 0.0 {
            self.cfg.detector.reg
        } else {
            1.0 / n_train.max(1) as f64
        }
    }

    fn train_and_eval(
        &self,
        covers: &[FeatureVector],
        stegos: &[FeatureVector],
    ) -> Result<f64, HarnessError> {
        let reg = self.detector_reg(covers.len() + stegos.len());
        let det = train_detector(covers, stegos, reg, self.seed).map_err(|e| stage("train-detector", e))?;
        evaluate(&det, &self.eval.cover_features, &self.eval.stego_features)
            .map_err(|e| stage("eval", e))
    }

    fn src_only_set(&mut self) -> Result<&PairedSet, HarnessError> {
        if self.src_only.is_none() {
            let pipeline = resolve_pipeline(self.cfg, &self.cfg.source.pipeline, &self.target_quant)?;
            let covers = develop_and_compress(&self.src_raws, &pipeline)?;
            let set = paired_set(
                covers,
                &self.cfg.embedding,
                mix_seed(self.seed, 0xa4, 0),
                &self.schema,
            )?;
            self.src_only = Some(set);
        }
        Ok(self.src_only.as_ref().unwrap())
    }

    fn catalog(&mut self) -> Result<&SourceCatalog, HarnessError> {
        if self.catalog.is_none() {
            let entries = load_catalog_entries(self.cfg)?;
            let pairs = self.cfg.catalog.pairs_per_source.min(self.src_raws.len());
            if pairs < 2 {
                return Err(HarnessError::Config(
                    "catalog needs at least 2 pairs per source".into(),
                ));
            }
            let raws = &self.src_raws[..pairs];
            let mut sources = Vec::with_capacity(entries.len());
            for (i, entry) in entries.iter().enumerate() {
                let pipeline = PipelineConfig::new(
                    entry.pipeline.identifier.clone(),
                    entry.pipeline.ops.clone(),
                    self.target_quant.steps(),
                )
                .map_err(|e| stage("catalog", e))?;
                let covers = develop_and_compress(raws, &pipeline)?;
                let set = paired_set(
                    covers,
                    &self.cfg.embedding,
                    mix_seed(self.seed, 0xa5, i as u64),
                    &self.schema,
                )?;
                let reg = self.detector_reg(set.cover_features.len() + set.stego_features.len());
                let detector =
                    train_detector(&set.cover_features, &set.stego_features, reg, self.seed)
                        .map_err(|e| stage("train-detector", e))?;
                sources.push(CatalogSource {
                    pipeline,
                    covers: set.covers,
                    stegos: set.stegos,
                    cover_features: set.cover_features,
                    stego_features: set.stego_features,
                    detector,
                });
            }
            self.catalog = Some(SourceCatalog::new(sources).map_err(|e| stage("catalog", e))?);
        }
        Ok(self.catalog.as_ref().unwrap())
    }

    fn closeness_metric(&self, kind: ClosenessKind) -> ClosenessMetric {
        match kind {
            ClosenessKind::Nscd => ClosenessMetric::Nscd {
                k: self.cfg.catalog.nscd_k,
            },
            ClosenessKind::CovFrobenius => ClosenessMetric::CovFrobenius,
            ClosenessKind::Mmd => ClosenessMetric::Mmd,
            ClosenessKind::Wasserstein => ClosenessMetric::Wasserstein,
        }
    }
}

/// Learns a TADA kernel against an operational bundle and writes the
/// training artifacts.
pub fn learn_tada_kernel(
    cfg: &ExperimentConfig,
    tada_raws: &[GrayImage],
    op: &TargetBundle,
    seed: u64,
    artifacts: Option<(&Path, &str)>,
) -> Result<(KernelParams, TrainingState), HarnessError> {
    let e = &cfg.emulator;
    let constraints = ConstraintSet::by_name(&e.constraints).map_err(|er| stage("tada-learn", er))?;
    let term_names: Vec<&str> = e.loss_terms.iter().map(|s| s.as_str()).collect();
    let loss_cfg = LossConfig {
        wass_subsample: e.wass_subsample,
        ..LossConfig::default()
    }
    .with_terms(&term_names)
    .map_err(|er| stage("tada-learn", er))?;

    let pool = tada_core::imagery::RawPool::new(tada_raws.to_vec(), seed, "harness")
        .map_err(|er| stage("tada-learn", er))?;

    let mut hyper = TrainHyper {
        kernel_size: e.kernel_size,
        constraints,
        init_sigma: e.init_sigma,
        init_seed: mix_seed(seed, 0xb1, 0),
        filters: e.filters.clone(),
        patch_h: e.patch_h,
        patch_w: e.patch_w,
        q_low: e.q_low,
        q_high: e.q_high,
        lr: e.lr,
        batch_size: e.batch_size,
        max_epochs: e.max_epochs,
        lr_patience: e.lr_patience,
        early_stop_patience: e.early_stop_patience,
        fd_step: e.fd_step,
        shuffle_seed: mix_seed(seed, 0xb2, 0),
        subsample_seed: mix_seed(seed, 0xb3, 0),
        eval_subsample: e.eval_subsample,
        eval_target: None,
    };

    let state = if e.eval_target_fraction > 0.0 {
        // A zero-epoch run yields the initial checkpoint metric; the
        // fractional cutoff becomes an absolute target for the real run.
        let probe_hyper = TrainHyper {
            max_epochs: 0,
            ..hyper.clone()
        };
        let probe = train(&pool, &op.images, &loss_cfg, &probe_hyper)
            .map_err(|er| stage("tada-learn", er))?;
        hyper.eval_target = Some(e.eval_target_fraction * probe.init_eval);
        train(&pool, &op.images, &loss_cfg, &hyper).map_err(|er| stage("tada-learn", er))?
    } else {
        train(&pool, &op.images, &loss_cfg, &hyper).map_err(|er| stage("tada-learn", er))?
    };

    if let Some((dir, tag)) = artifacts {
        let quant_id = format!("qf{}", cfg.target.quality);
        let ckpt = write_checkpoint(&state, &quant_id);
        let log = training_log_csv(&state);
        std::fs::write(dir.join(format!("tada-{tag}.ckpt")), ckpt)
            .map_err(|er| HarnessError::Io(dir.into(), er))?;
        std::fs::write(dir.join(format!("tada-{tag}.log.csv")), log)
            .map_err(|er| HarnessError::Io(dir.into(), er))?;
    }
    Ok((state.best_kernel.clone(), state))
}

fn matrix_of(features: &[FeatureVector]) -> Result<Matrix, HarnessError> {
    let (m, _) = features_matrix(features).map_err(|e| stage("features", e))?;
    Ok(m)
}

fn vectors_from(matrix: &Matrix, schema_id: &str) -> Vec<FeatureVector> {
    (0..matrix.rows())
        .map(|r| FeatureVector {
            values: matrix.row(r).to_vec(),
            schema_id: schema_id.into(),
        })
        .collect()
}

fn run_strategy(
    ctx: &mut SeedContext,
    strategy: Strategy,
    balance: &str,
    out_dir: &Path,
) -> Result<(f64, String), HarnessError> {
    // Balance-independent strategies are computed once per seed.
    let memo_key = strategy.id();
    if !strategy.uses_operational() {
        if let Some(hit) = ctx.memo.get(&memo_key) {
            return Ok(hit.clone());
        }
    }
    let result: (f64, String) = match strategy {
        Strategy::TgtOnly => {
            let acc = ctx.train_and_eval(
                &ctx.tgt_train.cover_features.clone(),
                &ctx.tgt_train.stego_features.clone(),
            )?;
            (acc, format!("n_train={}", ctx.tgt_train.covers.len()))
        }
        Strategy::SrcOnly => {
            let pipeline_id = ctx.cfg.source.pipeline.clone();
            let set = ctx.src_only_set()?;
            let covers = set.cover_features.clone();
            let stegos = set.stego_features.clone();
            let acc = ctx.train_and_eval(&covers, &stegos)?;
            (acc, format!("source={pipeline_id}"))
        }
        Strategy::Tada => {
            let op = ctx.operational_bundle(balance)?;
            let tag = format!("{}-{balance}-s{}", ctx.target_id, ctx.seed);
            let (kernel, state) = learn_tada_kernel(
                ctx.cfg,
                &ctx.tada_raws,
                &op,
                ctx.seed,
                Some((out_dir, &tag)),
            )?;
            let covers = develop_with_kernel(&ctx.src_raws, &kernel, &ctx.target_quant)?;
            let set = paired_set(
                covers,
                &ctx.cfg.embedding,
                mix_seed(ctx.seed, 0xa6, 0),
                &ctx.schema,
            )?;
            let acc = ctx.train_and_eval(&set.cover_features, &set.stego_features)?;
            let diag = format!(
                "init_eval={:.6e};best_eval={:.6e};epochs={};center={:.4}",
                state.init_eval,
                state.best_eval,
                state.epoch,
                kernel.center_value()
            );
            (acc, diag)
        }
        Strategy::All => {
            let pairs_cap = ctx.cfg.catalog.pairs_per_source;
            let train_budget = ctx.cfg.sets.train_pairs;
            ctx.catalog()?;
            let catalog = ctx.catalog.as_ref().unwrap();
            let budget = train_budget.min(catalog.len() * pairs_cap);
            let (covers, stegos) =
                build_all_mixture(catalog, budget).map_err(|e| stage("all-mixture", e))?;
            let acc = ctx.train_and_eval(&covers, &stegos)?;
            (acc, format!("mixture={budget}"))
        }
        Strategy::Multiclassifier => {
            let schema = ctx.schema.clone();
            ctx.catalog()?;
            let catalog = ctx.catalog.as_ref().unwrap();
            let cover_bundle = TargetBundle::new(ctx.eval.covers.clone())
                .map_err(|e| stage("multiclassifier", e))?;
            let stego_bundle = TargetBundle::new(ctx.eval.stegos.clone())
                .map_err(|e| stage("multiclassifier", e))?;
            let route_c = multiclassifier_route(&catalog, &cover_bundle, &schema)
                .map_err(|e| stage("multiclassifier", e))?;
            let route_s = multiclassifier_route(&catalog, &stego_bundle, &schema)
                .map_err(|e| stage("multiclassifier", e))?;
            let mut tnr = 0.0;
            for (f, &det) in ctx.eval.cover_features.iter().zip(&route_c) {
                let score = catalog.entries()[det]
                    .detector
                    .score(f)
                    .map_err(|e| stage("multiclassifier", e))?;
                if score <= 0.0 {
                    tnr += 1.0;
                }
            }
            let mut tpr = 0.0;
            for (f, &det) in ctx.eval.stego_features.iter().zip(&route_s) {
                let score = catalog.entries()[det]
                    .detector
                    .score(f)
                    .map_err(|e| stage("multiclassifier", e))?;
                if score > 0.0 {
                    tpr += 1.0;
                }
            }
            let acc = 0.5 * (tnr / route_c.len() as f64 + tpr / route_s.len() as f64);
            let mut counts = vec![0usize; catalog.len()];
            for &r in route_c.iter().chain(&route_s) {
                counts[r] += 1;
            }
            (acc, format!("routing_counts={counts:?}"))
        }
        Strategy::Closest(kind) => {
            let metric = ctx.closeness_metric(kind);
            let schema = ctx.schema.clone();
            let op = ctx.operational_bundle(balance)?;
            ctx.catalog()?;
            let catalog = ctx.catalog.as_ref().unwrap();
            let (idx, table) = select_closest_source(catalog, &op, metric, &schema)
                .map_err(|e| stage("closest-source", e))?;
            let chosen = catalog.entries()[idx].pipeline.identifier.clone();
            let detector = catalog.entries()[idx].detector.clone();
            let acc = evaluate(&detector, &ctx.eval.cover_features, &ctx.eval.stego_features)
                .map_err(|e| stage("eval", e))?;
            let table_s: Vec<String> = table.iter().map(|v| format!("{v:.4e}")).collect();
            (acc, format!("chosen={chosen};metrics=[{}]", table_s.join(" ")))
        }
        Strategy::Subspace | Strategy::SubspaceOracle => {
            let op = ctx.operational_bundle(balance)?;
            let op_features = op.features(&ctx.schema).map_err(|e| stage("features", e))?;
            let op_m = matrix_of(&op_features)?;
            let set = ctx.src_only_set()?;
            let n_covers = set.cover_features.len();
            let all_features: Vec<FeatureVector> = set
                .cover_features
                .iter()
                .chain(&set.stego_features)
                .cloned()
                .collect();
            let src_m = matrix_of(&all_features)?;
            let eval_c = matrix_of(&ctx.eval.cover_features)?;
            let eval_s = matrix_of(&ctx.eval.stego_features)?;

            let run_d = |d: usize| -> Result<f64, HarnessError> {
                let aligned = subspace_align(&src_m, &op_m, d).map_err(|e| stage("subspace", e))?;
                let schema_id = format!("subspace-d{d}");
                let src_proj = vectors_from(&aligned.source_aligned, &schema_id);
                let covers = &src_proj[..n_covers];
                let stegos = &src_proj[n_covers..];
                let reg = ctx.detector_reg(src_proj.len());
                let det = train_detector(covers, stegos, reg, ctx.seed)
                    .map_err(|e| stage("train-detector", e))?;
                let ec = vectors_from(&aligned.project_target(&eval_c), &schema_id);
                let es = vectors_from(&aligned.project_target(&eval_s), &schema_id);
                evaluate(&det, &ec, &es).map_err(|e| stage("eval", e))
            };

            if strategy == Strategy::Subspace {
                let d = ctx.cfg.catalog.subspace_d;
                let acc = run_d(d)?;
                (acc, format!("d={d}"))
            } else {
                let mut best = (0.0, 0usize);
                let mut table = Vec::new();
                for &d in &ctx.cfg.catalog.subspace_grid {
                    let acc = run_d(d)?;
                    table.push(format!("d{d}={acc:.4}"));
                    if acc > best.0 {
                        best = (acc, d);
                    }
                }
                (best.0, format!("oracle_d={};grid=[{}]", best.1, table.join(" ")))
            }
        }
        Strategy::Coral => {
            let op = ctx.operational_bundle(balance)?;
            let op_features = op.features(&ctx.schema).map_err(|e| stage("features", e))?;
            let op_m = matrix_of(&op_features)?;
            let eta = ctx.cfg.catalog.coral_eta;
            let set = ctx.src_only_set()?;
            let n_covers = set.cover_features.len();
            let schema_id = set.cover_features[0].schema_id.clone();
            let all_features: Vec<FeatureVector> = set
                .cover_features
                .iter()
                .chain(&set.stego_features)
                .cloned()
                .collect();
            let src_m = matrix_of(&all_features)?;
            let op_matrix = coral_operator(&src_m, &op_m, eta).map_err(|e| stage("coral", e))?;
            let transformed = src_m.matmul(&op_matrix);
            let vecs = vectors_from(&transformed, &schema_id);
            let covers = vecs[..n_covers].to_vec();
            let stegos = vecs[n_covers..].to_vec();
            let acc = ctx.train_and_eval(&covers, &stegos)?;
            (acc, format!("eta={eta}"))
        }
    };
    if !strategy.uses_operational() {
        ctx.memo.insert(memo_key, result.clone());
    }
    Ok(result)
}

fn prepare_output_dir(cfg: &ExperimentConfig) -> Result<PathBuf, HarnessError> {
    let dir = PathBuf::from(&cfg.output_dir);
    let report = dir.join("report.csv");
    if report.exists() && !cfg.overwrite {
        return Err(HarnessError::Config(format!(
            "output {} already holds a report; pass overwrite = true to replace it",
            dir.display()
        )));
    }
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::Io(dir.clone(), e))?;
    Ok(dir)
}

/// Runs the full protocol and writes `report.csv`, `report.json`,
/// `timings.csv` and the resolved configuration into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>, HarnessError> {
    cfg.validate()?;
    let dir = prepare_output_dir(cfg)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)
        .map_err(|e| HarnessError::Io(dir.clone(), e))?;

    let mut rows = Vec::new();
    let mut timings: Vec<(String, f64)> = Vec::new();

    if cfg.mode == "cross" {
        run_cross(cfg, &mut rows, &mut timings)?;
    } else {
        let strategies: Vec<Strategy> = cfg
            .strategies
            .iter()
            .map(|s| Strategy::parse(s))
            .collect::<Result<_, _>>()?;
        for &seed in &cfg.seeds {
            let mut ctx = SeedContext::build(cfg, seed)?;
            for balance in &cfg.operational.balances {
                for &strategy in &strategies {
                    let started = Instant::now();
                    let outcome = run_strategy(&mut ctx, strategy, balance, &dir);
                    let elapsed = started.elapsed().as_secs_f64();
                    let key = format!("{}/{}/{}/{}", strategy.id(), ctx.target_id, balance, seed);
                    timings.push((key, elapsed));
                    let row = match outcome {
                        Ok((acc, diag)) => ReportRow {
                            strategy: strategy.id(),
                            target: ctx.target_id.clone(),
                            balance: balance.clone(),
                            seed,
                            accuracy: Some(acc),
                            diagnostics: diag,
                            error: String::new(),
                            runtime_s: cfg.timings_in_report.then_some(elapsed),
                        },
                        Err(e) => ReportRow {
                            strategy: strategy.id(),
                            target: ctx.target_id.clone(),
                            balance: balance.clone(),
                            seed,
                            accuracy: None,
                            diagnostics: String::new(),
                            error: e.to_string(),
                            runtime_s: cfg.timings_in_report.then_some(elapsed),
                        },
                    };
                    rows.push(row);
                }
            }
        }
    }

    emit_report(&rows, ReportFormat::Csv, &dir.join("report.csv"))?;
    emit_report(&rows, ReportFormat::Json, &dir.join("report.json"))?;
    let mut timing_csv = String::from("key,seconds\n");
    for (k, s) in &timings {
        timing_csv.push_str(&format!("{k},{s:.3}\n"));
    }
    std::fs::write(dir.join("timings.csv"), timing_csv)
        .map_err(|e| HarnessError::Io(dir.clone(), e))?;
    Ok(rows)
}

/// Cross mode: every pipeline in the grid acts as both training source and
/// evaluation target; one detector per source, one row per (source, target).
fn run_cross(
    cfg: &ExperimentConfig,
    rows: &mut Vec<ReportRow>,
    timings: &mut Vec<(String, f64)>,
) -> Result<(), HarnessError> {
    let schema = DctrSchema::by_name(&cfg.feature_schema).map_err(|e| stage("features", e))?;
    let quant = QuantTable::from_quality(cfg.target.quality).map_err(|e| stage("compress", e))?;
    for &seed in &cfg.seeds {
        let src_raws = build_pool(&cfg.raw, cfg.sets.train_pairs, seed, PoolRole::SourceTrain)?;
        let eval_raws = build_pool(&cfg.raw, cfg.sets.eval_pairs, seed, PoolRole::Eval)?;

        let mut detectors: Vec<(String, Detector)> = Vec::new();
        let mut eval_sets: Vec<(String, PairedSet)> = Vec::new();
        for (pi, id) in cfg.cross.pipelines.iter().enumerate() {
            let pipeline = resolve_pipeline(cfg, id, &quant)?;
            let started = Instant::now();
            let covers = develop_and_compress(&src_raws, &pipeline)?;
            let train_set = paired_set(
                covers,
                &cfg.embedding,
                mix_seed(seed, 0xc1, pi as u64),
                &schema,
            )?;
            let reg = if cfg.detector.reg > 0.0 {
                cfg.detector.reg
            } else {
                1.0 / (2 * train_set.covers.len()) as f64
            };
            let det = train_detector(
                &train_set.cover_features,
                &train_set.stego_features,
                reg,
                seed,
            )
            .map_err(|e| stage("train-detector", e))?;
            detectors.push((id.clone(), det));

            let eval_covers = develop_and_compress(&eval_raws, &pipeline)?;
            let eval_set = paired_set(
                eval_covers,
                &cfg.embedding,
                mix_seed(seed, 0xc2, pi as u64),
                &schema,
            )?;
            eval_sets.push((id.clone(), eval_set));
            timings.push((format!("cross-build/{id}/{seed}"), started.elapsed().as_secs_f64()));
        }

        for (train_id, det) in &detectors {
            for (eval_id, eval_set) in &eval_sets {
                let acc = evaluate(det, &eval_set.cover_features, &eval_set.stego_features)
                    .map_err(|e| stage("eval", e))?;
                rows.push(ReportRow {
                    strategy: format!("train:{train_id}"),
                    target: eval_id.clone(),
                    balance: "n/a".into(),
                    seed,
                    accuracy: Some(acc),
                    diagnostics: String::new(),
                    error: String::new(),
                    runtime_s: None,
                });
            }
        }
    }
    Ok(())
}

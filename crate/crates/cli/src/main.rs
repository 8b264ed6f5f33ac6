//! Command-line interface for the steganalysis pipeline-emulation stack.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tada_cli::ablation::{run_ablation, AblationAxis};
use tada_cli::config::ExperimentConfig;
use tada_cli::experiment::{learn_tada_kernel, run_experiment};
use tada_cli::report::{emit_report, rows_from_json, ReportFormat};
use tada_cli::sets::{build_pool, mix_seed, PoolRole};
use tada_cli::HarnessError;

use tada_core::baselines::TargetBundle;
use tada_core::imagery::{
    develop, generate_synthetic_raw, parse_catalog, read_pgm, write_pgm, PgmDepth,
};
use tada_core::jpegcodec::{
    compress_hard, parse_jpeg_grayscale, read_container, write_container, write_jpeg_grayscale,
    QuantTable,
};
use tada_core::steganalysis::{
    dctr_features, evaluate, train_detector, DctrSchema, Detector, FeatureVector,
};
use tada_core::stego::{simulate_embedding, EmbeddingConfig, EmbeddingScheme};

#[derive(Parser)]
#[command(
    name = "tada",
    about = "Pipeline-emulation domain adaptation for JPEG steganalysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize RAW-like grayscale images as PGM files.
    Synth {
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_alpha: f64,
        #[arg(long, default_value_t = 2.0)]
        noise_beta: f64,
        #[arg(long, default_value_t = 1.5)]
        smoothness: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// PGM sample depth: 8 or 16.
        #[arg(long, default_value = "16")]
        depth: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Develop PGM images through a catalog pipeline (spatial ops only).
    Develop {
        #[arg(long)]
        pipeline: String,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long, default_value_t = 85)]
        quality: u8,
        #[arg(long)]
        out_dir: PathBuf,
        inputs: Vec<PathBuf>,
    },
    /// JPEG-compress PGM images into coefficient containers.
    Compress {
        #[arg(long, default_value_t = 85)]
        quality: u8,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write a decodable baseline .jpg next to each container.
        #[arg(long)]
        jpeg: bool,
        inputs: Vec<PathBuf>,
    },
    /// Simulate embedding into coefficient containers.
    Embed {
        #[arg(long, default_value_t = 0.5)]
        payload: f64,
        #[arg(long, default_value = "uerd")]
        scheme: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        inputs: Vec<PathBuf>,
    },
    /// Extract detector features from containers or grayscale JPEG files.
    Features {
        #[arg(long, default_value = "dctr-lite")]
        schema: String,
        #[arg(long)]
        out: PathBuf,
        inputs: Vec<PathBuf>,
    },
    /// Train a logistic detector from two feature files.
    TrainDetector {
        #[arg(long)]
        covers: PathBuf,
        #[arg(long)]
        stegos: PathBuf,
        /// 0 picks 1/n_train.
        #[arg(long, default_value_t = 0.0)]
        reg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a detector on cover/stego feature files.
    Eval {
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        covers: PathBuf,
        #[arg(long)]
        stegos: PathBuf,
    },
    /// Learn an emulation kernel against a config file's operational set.
    TadaLearn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "full-cover")]
        balance: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the catalog-based baseline strategies from a config file.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the full experimental protocol from a config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Sweep one configuration axis.
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. "8x8,8x16,16x16".
        #[arg(long)]
        values: String,
    },
    /// Convert a JSON report to CSV or JSON.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(path.into(), e))?;
    ExperimentConfig::from_toml(&text)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io(path.into(), e)
}

fn core_err(stage_name: &'static str) -> impl Fn(tada_core::Error) -> HarnessError {
    move |e| HarnessError::Stage {
        stage: stage_name.into(),
        source: e,
    }
}

fn read_coeffs(path: &Path) -> Result<tada_core::jpegcodec::JpegCoeffs, HarnessError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if path.extension().is_some_and(|e| e == "jpg" || e == "jpeg") {
        parse_jpeg_grayscale(&bytes).map_err(core_err("parse-jpeg"))
    } else {
        read_container(bytes.as_slice()).map_err(core_err("read-container"))
    }
}

fn write_features_csv(path: &Path, features: &[FeatureVector]) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(&format!("# schema: {}\n", features[0].schema_id));
    for f in features {
        let row: Vec<String> = f.values.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

fn read_features_csv(path: &Path) -> Result<Vec<FeatureVector>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Config(format!("{}: empty feature file", path.display())))?;
    let schema_id = header
        .strip_prefix("# schema: ")
        .ok_or_else(|| HarnessError::Config(format!("{}: missing schema header", path.display())))?
        .trim()
        .to_string();
    let mut features = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse()).collect();
        let values = values.map_err(|e| {
            HarnessError::Config(format!("{}: row {}: {e}", path.display(), i + 2))
        })?;
        features.push(FeatureVector {
            values,
            schema_id: schema_id.clone(),
        });
    }
    if features.is_empty() {
        return Err(HarnessError::Config(format!(
            "{}: no feature rows",
            path.display()
        )));
    }
    Ok(features)
}

fn out_file(dir: &Path, input: &Path, ext: &str) -> PathBuf {
    let stem = input.file_stem().unwrap_or_default().to_string_lossy();
    dir.join(format!("{stem}.{ext}"))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Synth {
            count,
            size,
            noise_alpha,
            noise_beta,
            smoothness,
            seed,
            depth,
            out_dir,
        } => {
            let depth = match depth.as_str() {
                "8" => PgmDepth::Eight,
                "16" => PgmDepth::Sixteen,
                other => {
                    return Err(HarnessError::Config(format!(
                        "depth `{other}` must be 8 or 16"
                    )))
                }
            };
            let pool =
                generate_synthetic_raw(count, size, noise_alpha, noise_beta, smoothness, seed)
                    .map_err(core_err("synthesize"))?;
            std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
            for (i, img) in pool.images.iter().enumerate() {
                let path = out_dir.join(format!("raw-{i:04}.pgm"));
                let f = std::fs::File::create(&path).map_err(io_err(&path))?;
                write_pgm(img, depth, f).map_err(core_err("write-pgm"))?;
            }
            println!("wrote {} images to {}", pool.len(), out_dir.display());
        }
        Command::Develop {
            pipeline,
            catalog,
            quality,
            out_dir,
            inputs,
        } => {
            let entries = match catalog {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
                    parse_catalog(&text).map_err(core_err("catalog"))?
                }
                None => {
                    tada_core::imagery::default_catalog(quality).map_err(core_err("catalog"))?
                }
            };
            let entry = entries
                .iter()
                .find(|e| e.pipeline.identifier == pipeline)
                .ok_or_else(|| HarnessError::Config(format!("pipeline `{pipeline}` not found")))?;
            std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
            for input in &inputs {
                let f = std::fs::File::open(input).map_err(io_err(input))?;
                let img = read_pgm(f).map_err(core_err("read-pgm"))?;
                let dev = develop(&img, &entry.pipeline).map_err(core_err("develop"))?;
                let path = out_file(&out_dir, input, "pgm");
                let f = std::fs::File::create(&path).map_err(io_err(&path))?;
                write_pgm(&dev, PgmDepth::Sixteen, f).map_err(core_err("write-pgm"))?;
            }
            println!("developed {} images with `{pipeline}`", inputs.len());
        }
        Command::Compress {
            quality,
            out_dir,
            jpeg,
            inputs,
        } => {
            let quant = QuantTable::from_quality(quality).map_err(core_err("compress"))?;
            std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
            for input in &inputs {
                let f = std::fs::File::open(input).map_err(io_err(input))?;
                let img = read_pgm(f).map_err(core_err("read-pgm"))?;
                let h8 = img.height() / 8 * 8;
                let w8 = img.width() / 8 * 8;
                let cropped = img.crop(0, 0, h8, w8).map_err(core_err("compress"))?;
                let coeffs = compress_hard(&cropped, &quant).map_err(core_err("compress"))?;
                let path = out_file(&out_dir, input, "jcof");
                let f = std::fs::File::create(&path).map_err(io_err(&path))?;
                write_container(&coeffs, f).map_err(core_err("write-container"))?;
                if jpeg {
                    let bytes = write_jpeg_grayscale(&coeffs).map_err(core_err("write-jpeg"))?;
                    std::fs::write(out_file(&out_dir, input, "jpg"), bytes)
                        .map_err(io_err(&out_dir))?;
                }
            }
            println!("compressed {} images at quality {quality}", inputs.len());
        }
        Command::Embed {
            payload,
            scheme,
            seed,
            out_dir,
            inputs,
        } => {
            let scheme = match scheme.as_str() {
                "uerd" => EmbeddingScheme::Uerd,
                "uniform-cost" => EmbeddingScheme::UniformCost,
                other => return Err(HarnessError::Config(format!("unknown scheme `{other}`"))),
            };
            std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
            for (i, input) in inputs.iter().enumerate() {
                let coeffs = read_coeffs(input)?;
                let cfg = EmbeddingConfig::new(scheme, payload, mix_seed(seed, 0xe, i as u64))
                    .map_err(core_err("embed"))?;
                let stego = simulate_embedding(&coeffs, &cfg).map_err(core_err("embed"))?;
                let path = out_file(&out_dir, input, "stego.jcof");
                let f = std::fs::File::create(&path).map_err(io_err(&path))?;
                write_container(&stego, f).map_err(core_err("write-container"))?;
            }
            println!("embedded {} images at {payload} bpnzac", inputs.len());
        }
        Command::Features { schema, out, inputs } => {
            let schema = DctrSchema::by_name(&schema).map_err(core_err("features"))?;
            let mut features = Vec::new();
            for input in &inputs {
                let coeffs = read_coeffs(input)?;
                features.push(dctr_features(&coeffs, &schema).map_err(core_err("features"))?);
            }
            if features.is_empty() {
                return Err(HarnessError::Config("no input images".into()));
            }
            write_features_csv(&out, &features)?;
            println!(
                "wrote {} feature rows ({}) to {}",
                features.len(),
                features[0].schema_id,
                out.display()
            );
        }
        Command::TrainDetector {
            covers,
            stegos,
            reg,
            seed,
            out,
        } => {
            let c = read_features_csv(&covers)?;
            let s = read_features_csv(&stegos)?;
            let reg = if reg > 0.0 {
                reg
            } else {
                1.0 / (c.len() + s.len()) as f64
            };
            let det = train_detector(&c, &s, reg, seed).map_err(core_err("train-detector"))?;
            std::fs::write(&out, det.to_text()).map_err(io_err(&out))?;
            println!("trained detector on {}+{} examples", c.len(), s.len());
        }
        Command::Eval {
            detector,
            covers,
            stegos,
        } => {
            let text = std::fs::read_to_string(&detector).map_err(io_err(&detector))?;
            let det = Detector::from_text(&text).map_err(core_err("eval"))?;
            let c = read_features_csv(&covers)?;
            let s = read_features_csv(&stegos)?;
            let acc = evaluate(&det, &c, &s).map_err(core_err("eval"))?;
            println!("balanced accuracy: {acc:.4}");
        }
        Command::TadaLearn {
            config,
            balance,
            out_dir,
            seed,
        } => {
            let mut cfg = read_config(&config)?;
            if let Some(dir) = out_dir {
                cfg.output_dir = dir.to_string_lossy().into_owned();
            }
            let dir = PathBuf::from(&cfg.output_dir);
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;

            let tada_raws = build_pool(&cfg.raw, cfg.sets.tada_pool, seed, PoolRole::TadaLearn)?;
            let op_raws = build_pool(&cfg.raw, cfg.operational.size, seed, PoolRole::Operational)?;
            let quant =
                QuantTable::from_quality(cfg.target.quality).map_err(core_err("compress"))?;
            let entries = match &cfg.target.catalog_file {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| HarnessError::Io(PathBuf::from(path), e))?;
                    parse_catalog(&text).map_err(core_err("catalog"))?
                }
                None => tada_core::imagery::default_catalog(cfg.target.quality)
                    .map_err(core_err("catalog"))?,
            };
            let entry = entries
                .iter()
                .find(|e| e.pipeline.identifier == cfg.target.pipeline)
                .ok_or_else(|| {
                    HarnessError::Config(format!("pipeline `{}` not found", cfg.target.pipeline))
                })?;
            let target_pipeline = tada_core::imagery::PipelineConfig::new(
                entry.pipeline.identifier.clone(),
                entry.pipeline.ops.clone(),
                quant.steps(),
            )
            .map_err(core_err("catalog"))?;
            let op_covers = tada_cli::sets::develop_and_compress(&op_raws, &target_pipeline)?;
            let op_images = match balance.as_str() {
                "full-cover" => op_covers,
                "full-stego" => tada_cli::sets::embed_covers(
                    &op_covers,
                    &cfg.embedding,
                    mix_seed(seed, 0xa3, 0),
                )?,
                "mix" => {
                    let stegos = tada_cli::sets::embed_covers(
                        &op_covers,
                        &cfg.embedding,
                        mix_seed(seed, 0xa3, 0),
                    )?;
                    let n = op_covers.len();
                    op_covers[..n / 2]
                        .iter()
                        .chain(&stegos[n / 2..])
                        .cloned()
                        .collect()
                }
                other => return Err(HarnessError::Config(format!("unknown balance `{other}`"))),
            };
            let bundle = TargetBundle::new(op_images).map_err(core_err("operational"))?;
            let tag = format!("{}-{balance}-s{seed}", cfg.target.pipeline);
            let (kernel, state) =
                learn_tada_kernel(&cfg, &tada_raws, &bundle, seed, Some((&dir, &tag)))?;
            println!(
                "learned kernel (center {:.4}); init_eval {:.6e} -> best {:.6e} in {} epochs",
                kernel.center_value(),
                state.init_eval,
                state.best_eval,
                state.epoch
            );
        }
        Command::Baseline { config, out_dir } => {
            let mut cfg = read_config(&config)?;
            if let Some(dir) = out_dir {
                cfg.output_dir = dir.to_string_lossy().into_owned();
            }
            cfg.strategies = vec![
                "all".into(),
                "multiclassifier".into(),
                "closest-nscd".into(),
                "closest-cov".into(),
                "closest-mmd".into(),
                "closest-wass".into(),
                "subspace".into(),
                "coral".into(),
            ];
            let rows = run_experiment(&cfg)?;
            println!("ran {} baseline rows into {}", rows.len(), cfg.output_dir);
        }
        Command::Experiment {
            config,
            out_dir,
            overwrite,
        } => {
            let mut cfg = read_config(&config)?;
            if let Some(dir) = out_dir {
                cfg.output_dir = dir.to_string_lossy().into_owned();
            }
            if overwrite {
                cfg.overwrite = true;
            }
            let rows = run_experiment(&cfg)?;
            println!("wrote {} rows to {}/report.csv", rows.len(), cfg.output_dir);
        }
        Command::Ablation {
            config,
            axis,
            values,
        } => {
            let cfg = read_config(&config)?;
            let axis = AblationAxis::parse(&axis)?;
            let values: Vec<String> = values.split(',').map(|s| s.trim().to_string()).collect();
            let all = run_ablation(&cfg, axis, &values)?;
            println!(
                "ablation over {} values wrote {}/ablation-{}.csv",
                all.len(),
                cfg.output_dir,
                axis.name()
            );
        }
        Command::Report { input, format, out } => {
            let format = ReportFormat::parse(&format)?;
            let text = std::fs::read_to_string(&input).map_err(io_err(&input))?;
            let rows = rows_from_json(&text)?;
            emit_report(&rows, format, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `maskgcd` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maskgcd_core::config::RunConfig;
use maskgcd_core::mask_io::{self, InstancePaths};
use maskgcd_core::pipeline::{self, PipelineError, Step, EVAL_REPORT};
use maskgcd_core::slic::{self, SlicParams};
use maskgcd_core::synth::{self, SynthSpec};

#[derive(Parser)]
#[command(
    name = "maskgcd",
    version,
    about = "Mask-level category discovery for semantic segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Worker thread cap; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage from ingest to evaluation.
    Run(Common),
    /// Check the instance and report violations.
    Validate(Common),
    /// Build the neighbor table (knn.cache).
    Knn(Common),
    /// Label propagation (state_propagated.ndjson).
    Propagate(Common),
    /// Structural completion (state_completed.ndjson).
    Complete(Common),
    /// Clustering and small-mask filling (labels.ndjson).
    Cluster(Common),
    /// Segmentation maps from labels.ndjson (maps/).
    Assemble(Common),
    /// Score maps/ against ground truth (eval_report.json).
    Eval(Common),
    /// Write a synthetic instance with ground truth.
    Synth(SynthArgs),
    /// Superpixel masks for one PPM image.
    Slic(SlicArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Config whose `synth` section is used; defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SlicArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    segments: u32,
    #[arg(long, default_value_t = 10.0)]
    compactness: f64,
    #[arg(long, default_value_t = 10)]
    max_iters: u32,
    #[arg(long)]
    seed_perturb: bool,
    #[arg(long, default_value_t = 0)]
    image_id: u64,
    #[arg(long)]
    out_records: PathBuf,
    #[arg(long)]
    out_geometries: PathBuf,
    /// Feature metadata path; defaults to features.meta.json next to the records.
    #[arg(long)]
    out_features_meta: Option<PathBuf>,
    /// Feature blob path; defaults to features.f32 next to the records.
    #[arg(long)]
    out_features_bin: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn data_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 3,
        message: message.into(),
    }
}

fn set_threads(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(config_failure("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_failure(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(config_failure)
}

fn run_step(step: Step, common: &Common) -> Result<(), Failure> {
    set_threads(common.threads)?;
    let cfg = load_config(&common.config)?;
    let written = pipeline::run_step(step, &cfg, &common.out)?;
    if step == Step::Validate {
        println!("instance is valid");
    }
    for f in &written {
        if !f.starts_with(pipeline::MAPS_DIR) {
            println!("wrote {}", common.out.join(f).display());
        }
    }
    let maps = written
        .iter()
        .filter(|f| f.starts_with(pipeline::MAPS_DIR))
        .count();
    if maps > 0 {
        println!(
            "wrote {maps} maps to {}",
            common.out.join(pipeline::MAPS_DIR).display()
        );
    }
    if written.iter().any(|f| f == EVAL_REPORT) {
        print_summary(&common.out.join(EVAL_REPORT));
    }
    Ok(())
}

fn print_summary(report: &Path) {
    let Ok(bytes) = std::fs::read(report) else {
        return;
    };
    let Ok(r) = serde_json::from_slice::<pipeline::RunReport>(&bytes) else {
        return;
    };
    println!(
        "miou_base {:.4}  miou_novel {:.4}  miou_avg {:.4}",
        r.eval.miou_base, r.eval.miou_novel, r.eval.miou_avg
    );
    if let Some(d) = r.discovery {
        println!(
            "novel_accuracy {:.4}  ari {:.4}",
            d.novel_accuracy, d.adjusted_rand_index
        );
    }
}

fn run_synth(args: &SynthArgs) -> Result<(), Failure> {
    set_threads(args.threads)?;
    let mut spec = match &args.config {
        Some(path) => load_config(path)?.synth.unwrap_or_default(),
        None => SynthSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.rng_seed = seed;
    }
    let data = synth::generate(&spec).map_err(config_failure)?;
    synth::write_synth(&data, &args.out).map_err(|e| data_failure(e.to_string()))?;
    println!(
        "wrote {} masks in {} images to {}",
        data.instance.len(),
        data.instance.images.len(),
        args.out.display()
    );
    Ok(())
}

fn run_slic(args: &SlicArgs) -> Result<(), Failure> {
    set_threads(args.threads)?;
    let image = slic::read_ppm(&args.image).map_err(|e| data_failure(e.to_string()))?;
    let params = SlicParams {
        n_segments: args.segments,
        compactness: args.compactness,
        max_iters: args.max_iters,
        seed_perturb: args.seed_perturb,
    };
    let (masks, features) =
        slic::segment_image(&image, args.image_id, 0, &params).map_err(|e| match e {
            slic::SlicError::Param(m) => config_failure(m),
            other => data_failure(other.to_string()),
        })?;
    let dir = args.out_records.parent().unwrap_or(Path::new(""));
    let paths = InstancePaths {
        records: args.out_records.clone(),
        features_meta: args
            .out_features_meta
            .clone()
            .unwrap_or_else(|| dir.join("features.meta.json")),
        features_bin: args
            .out_features_bin
            .clone()
            .unwrap_or_else(|| dir.join("features.f32")),
        geometries: Some(args.out_geometries.clone()),
    };
    let instance = maskgcd_core::model::DiscoveryInstance {
        masks,
        features,
        k_base: 0,
        k_novel: 0,
        images: vec![],
    };
    mask_io::write_instance(&instance, &paths).map_err(|e| data_failure(e.to_string()))?;
    println!(
        "wrote {} superpixels to {}",
        instance.len(),
        args.out_records.display()
    );
    Ok(())
}

fn dispatch(command: &Command) -> Result<(), Failure> {
    match command {
        Command::Run(c) => run_step(Step::Run, c),
        Command::Validate(c) => run_step(Step::Validate, c),
        Command::Knn(c) => run_step(Step::Knn, c),
        Command::Propagate(c) => run_step(Step::Propagate, c),
        Command::Complete(c) => run_step(Step::Complete, c),
        Command::Cluster(c) => run_step(Step::Cluster, c),
        Command::Assemble(c) => run_step(Step::Assemble, c),
        Command::Eval(c) => run_step(Step::Eval, c),
        Command::Synth(a) => run_synth(a),
        Command::Slic(a) => run_slic(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| dispatch(&cli.command)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(4)
        }
    }
}

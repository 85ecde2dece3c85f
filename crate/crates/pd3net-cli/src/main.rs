//! Command-line pipeline: dataset generation, training, fine-tuning,
//! evaluation, threshold sweeping, convolution cost benchmarking and
//! single-frame detection.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
//! failure. `DDD_LOG={error,info,debug}` controls log verbosity.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pd3net::checkpoint::Checkpoint;
use pd3net::codec::{decode_detections, CodecConfig};
use pd3net::cost::{benchmark_pair, ConvConfig};
use pd3net::dataset;
use pd3net::error::Error;
use pd3net::eval::{compute_metrics, match_frame, threshold_grid, threshold_sweep, SweepCurve};
use pd3net::model::NetworkGraph;
use pd3net::rng::Rng;
use pd3net::synth::SceneConfig;
use pd3net::tensor::{Shape, Tensor};
use pd3net::train::{fine_tune, train, EpochLog, TrainConfig};

#[derive(Parser)]
#[command(name = "pd3net", version, about = "Depth-image people detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic depth dataset (frames + manifest).
    GenData(GenDataArgs),
    /// Train a network on a dataset and write the best checkpoint.
    Train(TrainArgs),
    /// Continue training an existing checkpoint with the momentum phase only.
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint on a dataset and print a metrics report (JSON).
    Eval(EvalArgs),
    /// Sweep detection thresholds and write the F1 curve (CSV).
    Sweep(SweepArgs),
    /// Benchmark conventional vs. separable convolutions over a grid (CSV).
    Bench(BenchArgs),
    /// Detect people in a single raw depth frame and print them (JSON).
    Detect(DetectArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Scene configuration file (key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of frames.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Render worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Training configuration file (key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV path (default: `<out>.log.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Channel-width multiplier of the network.
    #[arg(long, default_value_t = 0.25)]
    scale: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to start from.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Detection threshold on the polished likelihood map.
    #[arg(long, default_value_t = 0.54)]
    threshold: f64,
    /// Write a per-frame match CSV for debugging.
    #[arg(long)]
    matches_out: Option<PathBuf>,
    /// Inference worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    t_min: f64,
    #[arg(long, default_value_t = 0.9)]
    t_max: f64,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    /// Curve CSV output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Kernel sizes, comma separated.
    #[arg(long, default_value = "3,5,7")]
    kernels: String,
    /// Input depths, comma separated.
    #[arg(long, default_value = "1,32,64,128,256")]
    in_depths: String,
    /// Output depths, comma separated.
    #[arg(long, default_value = "64,256")]
    out_depths: String,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Wall-clock trials per configuration (median reported).
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Curve CSV output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Raw little-endian u16 depth frame sized to the checkpoint geometry.
    #[arg(long)]
    frame: PathBuf,
    #[arg(long, default_value_t = 0.54)]
    threshold: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("DDD_LOG", "error"),
    )
    .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through this path too.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => 3,
        Error::Param(_) | Error::State(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> pd3net::Result<()> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Finetune(args) => run_finetune(args),
        Command::Eval(args) => run_eval(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Bench(args) => run_bench(args),
        Command::Detect(args) => run_detect(args),
    }
}

fn gen_data(args: GenDataArgs) -> pd3net::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => SceneConfig::from_file(path)?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(h) = args.height {
        cfg.height = h;
    }
    if let Some(w) = args.width {
        cfg.width = w;
    }
    let records = dataset::generate_dataset(&cfg, args.n, &args.out, args.jobs.max(1))?;
    log::info!("wrote {} frames to {}", records.len(), args.out.display());
    println!("{}", args.out.display());
    Ok(())
}

fn load_train_config(path: &Option<PathBuf>, seed: Option<u64>) -> pd3net::Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_log_csv(path: &Path, log: &[EpochLog]) -> pd3net::Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "epoch,stage,train_loss,val_loss,lr")?;
    for row in log {
        writeln!(
            file,
            "{},{},{},{},{}",
            row.epoch, row.stage, row.train_loss, row.val_loss, row.lr
        )?;
    }
    file.flush()?;
    Ok(())
}

fn run_train(args: TrainArgs) -> pd3net::Result<()> {
    let cfg = load_train_config(&args.config, args.seed)?;
    let records = dataset::load_manifest(&args.data)?;
    let (h, w) = (records[0].h, records[0].w);
    let codec = CodecConfig::for_resolution(h, w);
    let samples = dataset::load_samples(&args.data, &codec)?;
    let mut net = NetworkGraph::build(h, w, args.scale, &mut Rng::new(cfg.seed))?;
    let outcome = train(&mut net, &samples, &cfg)?;
    outcome.best.write(&args.out)?;
    let log_path = args.log.unwrap_or_else(|| args.out.with_extension("log.csv"));
    write_log_csv(&log_path, &outcome.log)?;
    println!(
        "best validation loss {} at epoch {}",
        outcome.best.meta.best_val_loss, outcome.best.meta.epoch
    );
    Ok(())
}

fn run_finetune(args: FinetuneArgs) -> pd3net::Result<()> {
    let cfg = load_train_config(&args.config, args.seed)?;
    let ckpt = Checkpoint::read(&args.ckpt)?;
    let codec = CodecConfig::for_resolution(ckpt.height, ckpt.width);
    let samples = dataset::load_samples(&args.data, &codec)?;
    let outcome = fine_tune(&ckpt, &samples, &cfg)?;
    outcome.best.write(&args.out)?;
    let log_path = args.log.unwrap_or_else(|| args.out.with_extension("log.csv"));
    write_log_csv(&log_path, &outcome.log)?;
    println!(
        "best validation loss {} at epoch {}",
        outcome.best.meta.best_val_loss, outcome.best.meta.epoch
    );
    Ok(())
}

struct EvalData {
    maps: Vec<Tensor>,
    annotations: Vec<Vec<pd3net::codec::Annotation>>,
    codec: CodecConfig,
}

fn infer_dataset(ckpt: &Path, data: &Path, jobs: usize) -> pd3net::Result<EvalData> {
    let net = NetworkGraph::load(ckpt)?;
    let frames = dataset::load_eval_frames(data)?;
    let (h, w, _) = net.geometry();
    let codec = CodecConfig::for_resolution(h, w);
    let images: Vec<Tensor> = frames.iter().map(|(img, _)| img.clone()).collect();
    let maps = net.infer_polished_maps(&images, jobs.max(1))?;
    let annotations = frames.into_iter().map(|(_, a)| a).collect();
    Ok(EvalData { maps, annotations, codec })
}

fn run_eval(args: EvalArgs) -> pd3net::Result<()> {
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(Error::Param(format!(
            "threshold must lie in (0, 1), got {}",
            args.threshold
        )));
    }
    let data = infer_dataset(&args.ckpt, &args.data, args.jobs)?;
    let mut tp = 0;
    let mut fp = 0;
    let mut missed = 0;
    let mut matches_csv = args
        .matches_out
        .as_ref()
        .map(|p| File::create(p).map(BufWriter::new))
        .transpose()?;
    if let Some(csv) = matches_csv.as_mut() {
        writeln!(csv, "frame,kind,det_u,det_v,ann_u,ann_v,distance")?;
    }
    for (idx, (map, anns)) in data.maps.iter().zip(&data.annotations).enumerate() {
        let dets = decode_detections(map, args.threshold, data.codec.min_area)?;
        let m = match_frame(&dets, anns, data.codec.gate_px());
        tp += m.true_positives;
        fp += m.false_positives;
        missed += m.false_negatives;
        if let Some(csv) = matches_csv.as_mut() {
            let mut det_used = vec![false; dets.len()];
            let mut ann_used = vec![false; anns.len()];
            for &(di, ai, dist) in &m.pairs {
                det_used[di] = true;
                ann_used[ai] = true;
                writeln!(
                    csv,
                    "{idx},tp,{},{},{},{},{dist}",
                    dets[di].u, dets[di].v, anns[ai].u, anns[ai].v
                )?;
            }
            for (di, used) in det_used.iter().enumerate() {
                if !used {
                    writeln!(csv, "{idx},fp,{},{},,,", dets[di].u, dets[di].v)?;
                }
            }
            for (ai, used) in ann_used.iter().enumerate() {
                if !used {
                    let kind = if anns[ai].occlusion > 0.5 { "ignored" } else { "fn" };
                    writeln!(csv, "{idx},{kind},,,{},{},", anns[ai].u, anns[ai].v)?;
                }
            }
        }
    }
    if let Some(csv) = matches_csv.as_mut() {
        csv.flush()?;
    }
    let report = compute_metrics(tp, fp, missed)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable report"));
    Ok(())
}

fn write_curve_csv(path: &Path, curve: &SweepCurve) -> pd3net::Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "threshold,precision,recall,f1")?;
    for p in &curve.points {
        writeln!(file, "{},{},{},{}", p.threshold, p.precision, p.recall, p.f1)?;
    }
    file.flush()?;
    Ok(())
}

fn run_sweep(args: SweepArgs) -> pd3net::Result<()> {
    let grid = threshold_grid(args.t_min, args.t_max, args.step)?;
    let data = infer_dataset(&args.ckpt, &args.data, args.jobs)?;
    let curve = threshold_sweep(
        &data.maps,
        &data.annotations,
        &grid,
        data.codec.gate_px(),
        data.codec.min_area,
    )?;
    write_curve_csv(&args.out, &curve)?;
    println!("best threshold {} (F1 {})", curve.best_threshold, curve.best_f1);
    Ok(())
}

fn parse_list(name: &str, text: &str) -> pd3net::Result<Vec<usize>> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| Error::Param(format!("{name}: cannot parse {tok:?}")))
        })
        .collect()
}

fn run_bench(args: BenchArgs) -> pd3net::Result<()> {
    let kernels = parse_list("kernels", &args.kernels)?;
    let in_depths = parse_list("in-depths", &args.in_depths)?;
    let out_depths = parse_list("out-depths", &args.out_depths)?;
    let mut rng = Rng::new(args.seed.unwrap_or(0));
    let mut file = BufWriter::new(File::create(&args.out)?);
    writeln!(
        file,
        "K,d,D,H,W,nparam_conv,nparam_sep,nops_conv,nops_sep,predicted_winner,measured_conv_ns,measured_sep_ns"
    )?;
    for &kernel in &kernels {
        for &in_depth in &in_depths {
            for &out_depth in &out_depths {
                let cfg = ConvConfig {
                    kernel,
                    in_depth,
                    out_depth,
                    height: args.height,
                    width: args.width,
                };
                let report = benchmark_pair(&cfg, args.trials, &mut rng)?;
                writeln!(
                    file,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    kernel,
                    in_depth,
                    out_depth,
                    args.height,
                    args.width,
                    report.nparam_conv,
                    report.nparam_sep,
                    report.nops_conv,
                    report.nops_sep,
                    report.predicted_winner(),
                    report.measured_conv_ns.unwrap_or(0),
                    report.measured_sep_ns.unwrap_or(0),
                )?;
            }
        }
    }
    file.flush()?;
    println!("{}", args.out.display());
    Ok(())
}

fn run_detect(args: DetectArgs) -> pd3net::Result<()> {
    let net = NetworkGraph::load(&args.ckpt)?;
    let (h, w, _) = net.geometry();
    let codec = CodecConfig::for_resolution(h, w);
    let mut bytes = Vec::new();
    File::open(&args.frame)?.read_to_end(&mut bytes)?;
    if bytes.len() != h * w * 2 {
        return Err(Error::Format(format!(
            "frame has {} bytes, checkpoint geometry {h}x{w} needs {}",
            bytes.len(),
            h * w * 2
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64 / 65535.0)
        .collect();
    let image = Tensor::from_vec(Shape::new(1, 1, h, w), data)?;
    let (_, polished) = net.infer(&image)?;
    let detections = decode_detections(&polished, args.threshold, codec.min_area)?;
    println!("{}", serde_json::to_string_pretty(&detections).expect("serializable detections"));
    Ok(())
}

//! Thin command-line front end; all logic lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aadf::attacks::{derive_seed, sample_attack_with, AttackFamily};
use aadf::detector::{read_checkpoint, DetectorParams};
use aadf::harness::{gen_synth, read_report, run_eval, train_from_manifest, RunConfig};
use aadf::imagecore::{load_image, save_image};
use aadf::metrics::{operating_metrics, tune_tau, PredictionRecord, SplitTag};
use aadf::objective::{grad_check, LossWeights};
use aadf::priors::{build_prior, FaceBox};
use aadf::protocol::{ttd_predict, DefenseConfig};

#[derive(Parser)]
#[command(
    name = "aadf",
    about = "Attack-aware image forensics: counter-forensic attacks, red-team training, randomized defense, deployment-style evaluation",
    version
)]
struct Cli {
    /// Master seed; derives all sub-seeds unless a config file overrides them.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run configuration as a flat key=value file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired corpus and its manifest.
    Synth {
        /// Total image count (half real, half fake).
        #[arg(long, default_value_t = 500)]
        count: usize,
    },
    /// Apply each attack family once to an image and save the results.
    Attack {
        #[arg(long)]
        image: PathBuf,
        /// Face box "x0,y0,x1,y1" (required for the seam family).
        #[arg(long, value_parser = parse_box)]
        face_box: Option<FaceBox>,
        /// Restrict to one family.
        #[arg(long)]
        family: Option<String>,
    },
    /// Red-team training on a manifest's train split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Train the clean-only baseline instead.
        #[arg(long, default_value_t = false)]
        clean_only: bool,
    },
    /// Defended inference on one image: probability, evidence, overlay.
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Paired clean/attacked evaluation of a manifest's test split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Max-min threshold search over a predictions.jsonl file.
    TuneThreshold {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Finite-difference verification of the objective's gradients.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 64)]
        working: usize,
        #[arg(long, default_value_t = 32)]
        grid: usize,
    },
    /// Pretty-print a metrics.json report.
    Report {
        #[arg(long)]
        metrics: PathBuf,
    },
}

fn parse_box(s: &str) -> Result<FaceBox, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if parts.len() != 4 {
        return Err("expected x0,y0,x1,y1".into());
    }
    FaceBox::new(parts[0], parts[1], parts[2], parts[3]).map_err(|e| e.to_string())
}

fn load_config(cli: &Cli) -> aadf::Result<RunConfig> {
    match &cli.config {
        Some(path) => RunConfig::read_from(path),
        None => Ok(RunConfig::with_seed(cli.seed)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> aadf::Result<()> {
    match &cli.command {
        Command::Synth { count } => {
            let manifest = gen_synth(*count, cli.seed, &cli.out)?;
            println!("wrote {} images and {}", count, manifest.display());
        }
        Command::Attack {
            image,
            face_box,
            family,
        } => {
            let cfg = load_config(&cli)?;
            let img = load_image(image)?;
            let prior = face_box
                .map(|b| {
                    build_prior(
                        &b,
                        img.height(),
                        img.width(),
                        cfg.working_size,
                        cfg.prior.margin,
                        cfg.prior.sigma_frac,
                    )
                })
                .transpose()?;
            std::fs::create_dir_all(&cli.out).map_err(|e| aadf::Error::io(&cli.out, e))?;
            let families: Vec<AttackFamily> = match family {
                Some(name) => vec![AttackFamily::parse(name)?],
                None => AttackFamily::ALL.to_vec(),
            };
            let mut records = String::new();
            for (i, fam) in families.iter().enumerate() {
                let inst = sample_attack_with(
                    *fam,
                    derive_seed(cli.seed, "attack", 0, i as u32),
                    &cfg.ranges,
                );
                if *fam == AttackFamily::Seam && prior.is_none() {
                    eprintln!("skipping seam: no --face-box given");
                    continue;
                }
                let attacked = aadf::attacks::apply_attack(&img, &inst, prior.as_ref())?;
                let out_path = cli.out.join(format!("{}.png", fam.name()));
                save_image(&attacked, &out_path)?;
                let psnr = aadf::imagecore::psnr(&img, &attacked);
                println!(
                    "{:<9} psnr {:>6.2} dB -> {}",
                    fam.name(),
                    psnr,
                    out_path.display()
                );
                records.push_str(&inst.serialize());
                records.push('\n');
            }
            let rec_path = cli.out.join("instances.txt");
            std::fs::write(&rec_path, records).map_err(|e| aadf::Error::io(&rec_path, e))?;
        }
        Command::Train {
            manifest,
            clean_only,
        } => {
            let mut cfg = load_config(&cli)?;
            cfg.clean_only = *clean_only;
            let artifacts = train_from_manifest(manifest, &cfg, &cli.out)?;
            println!(
                "trained; checkpoint {} log {}",
                artifacts.checkpoint_path.display(),
                artifacts.log_path.display()
            );
        }
        Command::Infer { image, checkpoint } => {
            let cfg = load_config(&cli)?;
            let params = read_checkpoint(checkpoint)?;
            let img = load_image(image)?;
            let defense = DefenseConfig {
                seed: derive_seed(cfg.defense.seed, "infer", 0, 0),
                ..cfg.defense
            };
            let pred = ttd_predict(&img, &params, &defense, cfg.working_size)?;
            std::fs::create_dir_all(&cli.out).map_err(|e| aadf::Error::io(&cli.out, e))?;
            let overlay_path = cli.out.join("overlay.png");
            aadf::harness::render_overlay(&img, &pred.evidence, &overlay_path)?;
            println!(
                "p(fake) = {:.6} (mean logit {:+.6}, {} views); overlay {}",
                pred.probability,
                pred.mean_logit,
                pred.per_view_logits.len(),
                overlay_path.display()
            );
        }
        Command::Eval {
            manifest,
            checkpoint,
        } => {
            let cfg = load_config(&cli)?;
            let params = read_checkpoint(checkpoint)?;
            let report = run_eval(manifest, &params, &cfg, &cli.out)?;
            print_report(&report);
            println!("reports written to {}", cli.out.display());
        }
        Command::TuneThreshold { predictions } => {
            let records = read_predictions(predictions)?;
            let tau = tune_tau(&records)?;
            println!("tau* = {tau}");
            let mut by_split: std::collections::BTreeMap<SplitTag, Vec<PredictionRecord>> =
                Default::default();
            for r in &records {
                by_split.entry(r.split).or_default().push(r.clone());
            }
            let mut worst = f64::INFINITY;
            for (split, rs) in &by_split {
                let acc = operating_metrics(rs, tau)?.acc;
                worst = worst.min(acc);
                println!("  {:<9} acc {acc:.5}", split.name());
            }
            println!("  worst-case acc {worst:.5}");
        }
        Command::Gradcheck {
            seeds,
            working,
            grid,
        } => {
            use rand::{Rng, SeedableRng};
            let det = aadf::detector::DetectorConfig {
                mask_grid: *grid,
                d_u: 16,
            };
            let mut worst_full = 0.0f64;
            let mut worst_linear = 0.0f64;
            for seed in 0..*seeds {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let img = aadf::imagecore::Image::new(
                    *working,
                    *working,
                    (0..working * working * 3).map(|_| rng.gen()).collect(),
                )?;
                let g = aadf::imagecore::Grid::from_vec(
                    *working,
                    *working,
                    (0..working * working).map(|_| rng.gen()).collect(),
                );
                let p = DetectorParams::init_seeded(&det, seed ^ 0x9e37);
                let y = (seed % 2) as u8;
                let full = grad_check(
                    &img,
                    &g,
                    y,
                    &p,
                    &LossWeights::default(),
                    aadf::objective::LossResolution::WorkingRes,
                    1,
                    seed,
                )?;
                let linear = grad_check(
                    &img,
                    &g,
                    y,
                    &p,
                    &LossWeights {
                        lambda_mask: 0.0,
                        lambda_edge: 0.0,
                        lambda_size: 0.0,
                        lambda_cons: 0.0,
                        ..LossWeights::default()
                    },
                    aadf::objective::LossResolution::WorkingRes,
                    1,
                    seed,
                )?;
                worst_full = worst_full.max(full);
                worst_linear = worst_linear.max(linear);
                println!("seed {seed}: full {full:.3e}, linear-only {linear:.3e}");
            }
            println!(
                "worst: full {worst_full:.3e} (gate 1e-4), linear-only {worst_linear:.3e} (gate 1e-7)"
            );
            if worst_full > 1e-4 || worst_linear > 1e-7 {
                return Err(aadf::Error::Invalid("gradient check failed".into()));
            }
        }
        Command::Report { metrics } => {
            let report = read_report(metrics)?;
            print_report(&report);
        }
    }
    Ok(())
}

fn read_predictions(path: &PathBuf) -> aadf::Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| aadf::Error::io(path, e))?;
    let mut records = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| aadf::Error::Invalid(format!("predictions parse: {e}")))?;
        records.push(PredictionRecord::scored(
            v["id"].as_str().unwrap_or_default().to_string(),
            SplitTag::parse(v["split"].as_str().unwrap_or_default())?,
            v["p_hat"].as_f64().unwrap_or_default(),
            v["label"].as_u64().unwrap_or_default() as u8,
        ));
    }
    Ok(records)
}

fn print_report(report: &aadf::harness::EvalReport) {
    println!("tau* = {:.6}", report.tau_star);
    println!(
        "{:<10} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}   tn/fp/fn/tp",
        "split", "auc", "ap", "ece", "brier", "nll", "aurc", "acc"
    );
    for s in &report.splits {
        println!(
            "{:<10} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}   {}/{}/{}/{}",
            s.split.name(),
            s.auc,
            s.ap,
            s.ece,
            s.brier,
            s.nll,
            s.aurc,
            s.acc,
            s.tn,
            s.fp,
            s.fn_,
            s.tp
        );
    }
    println!("worst-case acc = {:.4}", report.worst_case_acc);
    for l in &report.localization {
        if l.fake_count > 0 {
            println!(
                "loc {:<9} ewr {:.3} pir {:.3} soft-iou {:.3} dilated-iou {:.3} | real evidence {:.3}",
                l.split.name(),
                l.mean_ewr,
                l.mean_precision_in_roi,
                l.mean_soft_iou,
                l.mean_dilated_iou,
                l.mean_real_evidence
            );
        }
    }
}

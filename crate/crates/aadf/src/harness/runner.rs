//! Run orchestration: train from a manifest, evaluate with the paired
//! clean/attacked protocol, and emit reports. Every output directory gets
//! the fully serialized run configuration; re-running from it reproduces
//! byte-identical artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::manifest::{read_manifest, DataSplit, ManifestEntry};
use super::overlay::render_overlay;
use crate::attacks::{derive_seed, sample_attack_with, AttackFamily};
use crate::detector::{write_checkpoint, DetectorParams};
use crate::error::{Error, Result};
use crate::imagecore::{load_image, Image};
use crate::metrics::{
    calib_metrics, operating_metrics, rank_metrics, selective_metrics, tune_tau,
    weak_localization, PredictionRecord, SplitTag,
};
use crate::priors::{build_prior, transform_prior, WeakPrior};
use crate::protocol::{train, ttd_predict, DefenseConfig, TrainSample};

/// Outputs of a training run.
#[derive(Debug)]
pub struct TrainArtifacts {
    pub params: DetectorParams,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// Train on the manifest's train split and write checkpoint, training log
/// (JSONL, one record per optimizer step) and the config echo.
pub fn train_from_manifest(
    manifest_path: impl AsRef<Path>,
    cfg: &RunConfig,
    out_dir: impl AsRef<Path>,
) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let manifest_path = manifest_path.as_ref();
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let entries = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let samples: Vec<TrainSample> = entries
        .iter()
        .filter(|e| e.split == DataSplit::Train)
        .map(|e| TrainSample {
            id: e.id.clone(),
            path: base.join(&e.path),
            label: e.label,
            face_box: e.box_,
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::Manifest("manifest has no train entries".into()));
    }

    let init = DetectorParams::init_seeded(&cfg.detector_config(), cfg.init_seed);
    let (params, log) = train(
        &samples,
        init,
        &cfg.train,
        &cfg.loss,
        &cfg.ranges,
        &cfg.prior,
        cfg.loss_resolution(),
        cfg.working_size,
        cfg.train_mode(),
    )?;

    cfg.write_to(out_dir.join("config.txt"))?;
    let checkpoint_path = out_dir.join("checkpoint.bin");
    write_checkpoint(&params, &checkpoint_path)?;
    let log_path = out_dir.join("training_log.jsonl");
    {
        let mut f = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        for record in &log {
            let line = serde_json::to_string(record)
                .map_err(|e| Error::Invalid(format!("log serialize: {e}")))?;
            writeln!(f, "{line}").map_err(|e| Error::io(&log_path, e))?;
        }
    }
    Ok(TrainArtifacts {
        params,
        checkpoint_path,
        log_path,
    })
}

/// Per-split metric row of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: SplitTag,
    pub auc: f64,
    pub ap: f64,
    pub ece: f64,
    pub brier: f64,
    pub nll: f64,
    pub aurc: f64,
    pub acc: f64,
    pub eer: Option<f64>,
    pub tpr_at_fpr_1e2: Option<f64>,
    pub tpr_at_fpr_1e3: Option<f64>,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

/// Per-split weak-localization summary (fakes) plus the mean evidence level
/// on bona fide images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    pub split: SplitTag,
    pub fake_count: usize,
    pub mean_ewr: f64,
    pub mean_precision_in_roi: f64,
    pub mean_dilated_iou: f64,
    pub mean_soft_iou: f64,
    pub mean_hard_iou: f64,
    pub real_count: usize,
    pub mean_real_evidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau_star: f64,
    pub worst_case_acc: f64,
    pub splits: Vec<SplitReport>,
    pub localization: Vec<LocalizationSummary>,
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("report parse: {e}")))
}

#[derive(Default)]
struct LocAccumulator {
    fakes: usize,
    ewr: f64,
    pir: f64,
    dilated: f64,
    soft: f64,
    hard: f64,
    reals: usize,
    real_evidence: f64,
}

/// Evaluate the test split: one clean prediction per entry plus six attacked
/// counterparts (one deterministic instance per family, seeded from the
/// entry id), all through the randomized defense. Writes predictions,
/// metrics, confusion table, risk-coverage curves, sample overlays and the
/// config echo into `out_dir`.
pub fn run_eval(
    manifest_path: impl AsRef<Path>,
    params: &DetectorParams,
    cfg: &RunConfig,
    out_dir: impl AsRef<Path>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let manifest_path = manifest_path.as_ref();
    let out_dir = out_dir.as_ref();
    let overlays_dir = out_dir.join("overlays");
    fs::create_dir_all(&overlays_dir).map_err(|e| Error::io(&overlays_dir, e))?;

    let entries = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let test_entries: Vec<&ManifestEntry> = entries
        .iter()
        .filter(|e| e.split == DataSplit::Test)
        .collect();
    if test_entries.is_empty() {
        return Err(Error::Manifest("manifest has no test entries".into()));
    }
    let missing: Vec<&str> = test_entries
        .iter()
        .filter(|e| !base.join(&e.path).is_file())
        .map(|e| e.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Manifest(format!(
            "missing image files for ids: {}",
            missing.join(", ")
        )));
    }
    let boxless: Vec<&str> = test_entries
        .iter()
        .filter(|e| e.box_.is_none())
        .map(|e| e.id.as_str())
        .collect();
    if !boxless.is_empty() {
        return Err(Error::Manifest(format!(
            "missing face boxes (needed for the seam attack and localization): {}",
            boxless.join(", ")
        )));
    }

    let mut records: Vec<(PredictionRecord, f64)> = Vec::new(); // record + mean logit
    let mut loc: BTreeMap<SplitTag, LocAccumulator> = BTreeMap::new();
    let mut overlay_done: BTreeMap<SplitTag, bool> = BTreeMap::new();

    for entry in &test_entries {
        let img = load_image(base.join(&entry.path))?;
        let face = entry.box_.expect("checked above");
        let prior = build_prior(
            &face,
            img.height(),
            img.width(),
            cfg.working_size,
            cfg.prior.margin,
            cfg.prior.sigma_frac,
        )?;

        // clean view
        evaluate_view(
            entry,
            SplitTag::Clean,
            entry.id.clone(),
            &img,
            &prior,
            params,
            cfg,
            &mut records,
            &mut loc,
            &mut overlay_done,
            &overlays_dir,
        )?;

        // six attacked counterparts
        for (fam_idx, family) in AttackFamily::ALL.iter().enumerate() {
            let inst = sample_attack_with(
                *family,
                derive_seed(cfg.eval_seed, &entry.id, 0, fam_idx as u32),
                &cfg.ranges,
            );
            let attacked = crate::attacks::apply_attack(&img, &inst, Some(&prior))?;
            let transported = transform_prior(&prior, &inst);
            let split = SplitTag::from_family(*family);
            let record_id = format!("{}:{}", entry.id, family.name());
            evaluate_view(
                entry,
                split,
                record_id,
                &attacked,
                &transported,
                params,
                cfg,
                &mut records,
                &mut loc,
                &mut overlay_done,
                &overlays_dir,
            )?;
        }
    }

    // global operating point and per-split metrics
    let scored: Vec<PredictionRecord> = records.iter().map(|(r, _)| r.clone()).collect();
    let tau_star = tune_tau(&scored)?;
    let mut by_split: BTreeMap<SplitTag, Vec<PredictionRecord>> = BTreeMap::new();
    for r in &scored {
        by_split.entry(r.split).or_default().push(r.clone());
    }
    let mut splits = Vec::new();
    let mut worst = f64::INFINITY;
    for tag in SplitTag::ALL {
        let rs = by_split
            .get(&tag)
            .ok_or_else(|| Error::Metric(format!("split {} has no records", tag.name())))?;
        let rank = rank_metrics(rs)?;
        let calib = calib_metrics(rs, 10)?;
        let sel = selective_metrics(rs)?;
        let op = operating_metrics(rs, tau_star)?;
        worst = worst.min(op.acc);
        splits.push(SplitReport {
            split: tag,
            auc: rank.auc,
            ap: rank.ap,
            ece: calib.ece,
            brier: calib.brier,
            nll: calib.nll,
            aurc: sel.aurc,
            acc: op.acc,
            eer: op.eer,
            tpr_at_fpr_1e2: op.tpr_at_fpr_1e2,
            tpr_at_fpr_1e3: op.tpr_at_fpr_1e3,
            tn: op.counts.tn,
            fp: op.counts.fp,
            fn_: op.counts.fn_,
            tp: op.counts.tp,
        });

        let curve = sel.curve;
        let mut csv = String::from("coverage,risk\n");
        for (c, r) in curve {
            csv.push_str(&format!("{c},{r}\n"));
        }
        let curve_path = out_dir.join(format!("risk_coverage_{}.csv", tag.name()));
        fs::write(&curve_path, csv).map_err(|e| Error::io(&curve_path, e))?;
    }

    let localization: Vec<LocalizationSummary> = SplitTag::ALL
        .iter()
        .map(|tag| {
            let acc = loc.remove(tag).unwrap_or_default();
            let nf = acc.fakes.max(1) as f64;
            let nr = acc.reals.max(1) as f64;
            LocalizationSummary {
                split: *tag,
                fake_count: acc.fakes,
                mean_ewr: acc.ewr / nf,
                mean_precision_in_roi: acc.pir / nf,
                mean_dilated_iou: acc.dilated / nf,
                mean_soft_iou: acc.soft / nf,
                mean_hard_iou: acc.hard / nf,
                real_count: acc.reals,
                mean_real_evidence: acc.real_evidence / nr,
            }
        })
        .collect();

    let report = EvalReport {
        tau_star,
        worst_case_acc: worst,
        splits,
        localization,
    };

    // outputs
    cfg.write_to(out_dir.join("config.txt"))?;
    let metrics_path = out_dir.join("metrics.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Invalid(format!("report serialize: {e}")))?;
    fs::write(&metrics_path, json).map_err(|e| Error::io(&metrics_path, e))?;

    let mut confusion = String::from("split,tn,fp,fn,tp\n");
    for s in &report.splits {
        confusion.push_str(&format!(
            "{},{},{},{},{}\n",
            s.split.name(),
            s.tn,
            s.fp,
            s.fn_,
            s.tp
        ));
    }
    let confusion_path = out_dir.join("confusion.csv");
    fs::write(&confusion_path, confusion).map_err(|e| Error::io(&confusion_path, e))?;

    let pred_path = out_dir.join("predictions.jsonl");
    {
        let mut f = fs::File::create(&pred_path).map_err(|e| Error::io(&pred_path, e))?;
        for (r, mean_logit) in &records {
            let line = serde_json::json!({
                "id": r.id,
                "split": r.split.name(),
                "label": r.label,
                "p_hat": r.p_hat,
                "mean_logit": mean_logit,
            });
            writeln!(f, "{line}").map_err(|e| Error::io(&pred_path, e))?;
        }
    }

    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_view(
    entry: &ManifestEntry,
    split: SplitTag,
    record_id: String,
    view: &Image,
    prior: &WeakPrior,
    params: &DetectorParams,
    cfg: &RunConfig,
    records: &mut Vec<(PredictionRecord, f64)>,
    loc: &mut BTreeMap<SplitTag, LocAccumulator>,
    overlay_done: &mut BTreeMap<SplitTag, bool>,
    overlays_dir: &Path,
) -> Result<()> {
    let defense = DefenseConfig {
        seed: derive_seed(cfg.defense.seed, &record_id, 0, 0),
        ..cfg.defense.clone()
    };
    let defended = ttd_predict(view, params, &defense, cfg.working_size)?;

    let acc = loc.entry(split).or_default();
    if entry.label == 1 {
        let m = weak_localization(
            &defended.evidence,
            &prior.grid,
            cfg.loc_theta,
            cfg.loc_dilate_radius,
        )?;
        acc.fakes += 1;
        acc.ewr += m.ewr;
        acc.pir += m.precision_in_roi;
        acc.dilated += m.dilated_iou;
        acc.soft += m.soft_iou;
        acc.hard += m.hard_iou;
        if !overlay_done.get(&split).copied().unwrap_or(false) {
            let path = overlays_dir.join(format!("{}_{}.png", split.name(), entry.id));
            render_overlay(view, &defended.evidence, path)?;
            overlay_done.insert(split, true);
        }
    } else {
        acc.reals += 1;
        acc.real_evidence += defended.evidence.mean();
    }

    records.push((
        PredictionRecord::scored(record_id, split, defended.probability, entry.label),
        defended.mean_logit,
    ));
    Ok(())
}

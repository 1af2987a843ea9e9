//! Deployment-facing measurement: ranking (AUC/AP), calibration (equal-mass
//! ECE, Brier, NLL), selective prediction (risk-coverage, AURC),
//! operating-point statistics (confusion, accuracy, EER, TPR at low FPR),
//! the max-min global operating point, and weak-localization scores.
//!
//! All reductions run in documented sorted order, so results are bit-exact
//! regardless of caller-side parallelism.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{dilate, Grid};

/// Evaluation split: clean or one attack family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Clean,
    Jpeg,
    Warp,
    Regrain,
    Seam,
    Gamma,
    Transcode,
}

impl SplitTag {
    pub const ALL: [SplitTag; 7] = [
        SplitTag::Clean,
        SplitTag::Jpeg,
        SplitTag::Warp,
        SplitTag::Regrain,
        SplitTag::Seam,
        SplitTag::Gamma,
        SplitTag::Transcode,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SplitTag::Clean => "clean",
            SplitTag::Jpeg => "jpeg",
            SplitTag::Warp => "warp",
            SplitTag::Regrain => "regrain",
            SplitTag::Seam => "seam",
            SplitTag::Gamma => "gamma",
            SplitTag::Transcode => "transcode",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown split '{s}'")))
    }

    pub fn from_family(f: crate::attacks::AttackFamily) -> Self {
        use crate::attacks::AttackFamily as A;
        match f {
            A::Jpeg => SplitTag::Jpeg,
            A::Warp => SplitTag::Warp,
            A::Regrain => SplitTag::Regrain,
            A::Seam => SplitTag::Seam,
            A::Gamma => SplitTag::Gamma,
            A::Transcode => SplitTag::Transcode,
        }
    }
}

/// Per-image scored output feeding every metric. Evidence/prior grids are
/// optional: scalar metrics ignore them, weak localization requires them.
#[derive(Debug, Clone)]
pub struct PredictionRecord {
    pub id: String,
    pub split: SplitTag,
    pub p_hat: f64,
    pub label: u8,
    pub evidence: Option<Grid>,
    pub prior: Option<Grid>,
}

impl PredictionRecord {
    pub fn scored(id: impl Into<String>, split: SplitTag, p_hat: f64, label: u8) -> Self {
        Self {
            id: id.into(),
            split,
            p_hat,
            label,
            evidence: None,
            prior: None,
        }
    }

    fn confidence(&self) -> f64 {
        self.p_hat.max(1.0 - self.p_hat)
    }

    fn predicted(&self) -> u8 {
        u8::from(self.p_hat >= 0.5)
    }

    fn correct(&self) -> bool {
        self.predicted() == self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankMetrics {
    pub auc: f64,
    pub ap: f64,
}

/// AUC by Mann-Whitney with ties counted 0.5; AP with tied scores grouped
/// (every positive in a tie group contributes the precision at the end of
/// the group), traversal stable by id.
pub fn rank_metrics(records: &[PredictionRecord]) -> Result<RankMetrics> {
    let pos = records.iter().filter(|r| r.label == 1).count();
    let neg = records.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "ranking needs both classes (pos={pos}, neg={neg})"
        )));
    }

    // midrank formulation of the Mann-Whitney statistic
    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.p_hat.total_cmp(&b.p_hat).then_with(|| a.id.cmp(&b.id)));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].p_hat == sorted[i].p_hat {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0; // average of ranks i+1 ..= j
        for r in &sorted[i..j] {
            if r.label == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let auc = (rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64;

    // grouped average precision in descending-score order
    let mut desc: Vec<&PredictionRecord> = records.iter().collect();
    desc.sort_by(|a, b| b.p_hat.total_cmp(&a.p_hat).then_with(|| a.id.cmp(&b.id)));
    let mut ap_sum = 0.0;
    let mut seen = 0usize;
    let mut seen_pos = 0usize;
    let mut i = 0;
    while i < desc.len() {
        let mut j = i;
        let mut group_pos = 0usize;
        while j < desc.len() && desc[j].p_hat == desc[i].p_hat {
            if desc[j].label == 1 {
                group_pos += 1;
            }
            j += 1;
        }
        seen += j - i;
        seen_pos += group_pos;
        if group_pos > 0 {
            ap_sum += group_pos as f64 * seen_pos as f64 / seen as f64;
        }
        i = j;
    }
    let ap = ap_sum / pos as f64;

    Ok(RankMetrics { auc, ap })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibMetrics {
    pub ece: f64,
    pub brier: f64,
    pub nll: f64,
}

/// Equal-mass ECE over confidence = max(p, 1-p) (bin sizes differ by at most
/// one, stable sort order, the first `n % bins` bins take the extra record),
/// Brier score, and NLL with a 1e-12 probability floor.
pub fn calib_metrics(records: &[PredictionRecord], bins: usize) -> Result<CalibMetrics> {
    if records.is_empty() {
        return Err(Error::Metric("calibration needs records".into()));
    }
    if bins == 0 {
        return Err(Error::Invalid("bin count must be >= 1".into()));
    }
    let n = records.len();

    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.confidence().total_cmp(&b.confidence()));

    let bins = bins.min(n);
    let base = n / bins;
    let extra = n % bins;
    let mut ece = 0.0;
    let mut start = 0;
    for b in 0..bins {
        let len = base + usize::from(b < extra);
        let slice = &sorted[start..start + len];
        start += len;
        let conf: f64 = slice.iter().map(|r| r.confidence()).sum::<f64>() / len as f64;
        let acc: f64 = slice.iter().filter(|r| r.correct()).count() as f64 / len as f64;
        ece += (len as f64 / n as f64) * (acc - conf).abs();
    }

    let brier = records
        .iter()
        .map(|r| (r.p_hat - r.label as f64).powi(2))
        .sum::<f64>()
        / n as f64;

    let nll = records
        .iter()
        .map(|r| {
            let p = r.p_hat.clamp(1e-12, 1.0 - 1e-12);
            if r.label == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n as f64;

    Ok(CalibMetrics { ece, brier, nll })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectiveMetrics {
    /// (coverage, risk) points for k = 1..N kept predictions.
    pub curve: Vec<(f64, f64)>,
    pub aurc: f64,
}

/// Risk-coverage curve: sort by confidence descending (ties by id), keep the
/// top-k, risk = error rate among kept. AURC is the mean of the N risks.
pub fn selective_metrics(records: &[PredictionRecord]) -> Result<SelectiveMetrics> {
    if records.is_empty() {
        return Err(Error::Metric("selective prediction needs records".into()));
    }
    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        b.confidence()
            .total_cmp(&a.confidence())
            .then_with(|| a.id.cmp(&b.id))
    });
    let n = sorted.len();
    let mut errors = 0usize;
    let mut curve = Vec::with_capacity(n);
    let mut risk_sum = 0.0;
    for (k, r) in sorted.iter().enumerate() {
        if !r.correct() {
            errors += 1;
        }
        let coverage = (k + 1) as f64 / n as f64;
        let risk = errors as f64 / (k + 1) as f64;
        risk_sum += risk;
        curve.push((coverage, risk));
    }
    Ok(SelectiveMetrics {
        curve,
        aurc: risk_sum / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn accuracy(&self) -> f64 {
        (self.tn + self.tp) as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingMetrics {
    pub counts: ConfusionCounts,
    pub acc: f64,
    /// None when the split has a single class.
    pub eer: Option<f64>,
    pub tpr_at_fpr_1e2: Option<f64>,
    pub tpr_at_fpr_1e3: Option<f64>,
}

/// Confusion counts and accuracy at threshold tau (predict 1 iff p >= tau),
/// EER by linear ROC interpolation, and the best TPR subject to FPR <=
/// {1e-2, 1e-3} over all achievable thresholds (0 when unattainable).
pub fn operating_metrics(records: &[PredictionRecord], tau: f64) -> Result<OperatingMetrics> {
    if records.is_empty() {
        return Err(Error::Metric("operating metrics need records".into()));
    }
    let mut counts = ConfusionCounts {
        tn: 0,
        fp: 0,
        fn_: 0,
        tp: 0,
    };
    for r in records {
        match (r.label, r.p_hat >= tau) {
            (0, false) => counts.tn += 1,
            (0, true) => counts.fp += 1,
            (1, false) => counts.fn_ += 1,
            (1, true) => counts.tp += 1,
            _ => return Err(Error::Invalid(format!("label {} not binary", r.label))),
        }
    }
    let acc = counts.accuracy();

    let pos = (counts.tp + counts.fn_) as f64;
    let neg = (counts.tn + counts.fp) as f64;
    if pos == 0.0 || neg == 0.0 {
        return Ok(OperatingMetrics {
            counts,
            acc,
            eer: None,
            tpr_at_fpr_1e2: None,
            tpr_at_fpr_1e3: None,
        });
    }

    // ROC over thresholds at every distinct score, descending, plus the
    // all-negative point above the maximum.
    let mut scores: Vec<f64> = records.iter().map(|r| r.p_hat).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push((0.0, 0.0)); // tau above max: FPR 0, TPR 0
    for &t in &scores {
        let mut tp = 0u64;
        let mut fp = 0u64;
        for r in records {
            if r.p_hat >= t {
                if r.label == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        points.push((fp as f64 / neg, tp as f64 / pos));
    }

    // EER: walk the ROC until FPR >= FNR, interpolate the crossing
    let mut eer = None;
    for w in points.windows(2) {
        let (f1, t1) = w[0];
        let (f2, t2) = w[1];
        let (n1, n2) = (1.0 - t1, 1.0 - t2);
        let d1 = f1 - n1;
        let d2 = f2 - n2;
        if d1 == 0.0 {
            eer = Some(f1);
            break;
        }
        if d1 < 0.0 && d2 >= 0.0 {
            let t = d1 / (d1 - d2); // linear interpolation of the sign change
            eer = Some(f1 + t * (f2 - f1));
            break;
        }
    }
    let eer = eer.or_else(|| points.last().map(|&(f, t)| (f + (1.0 - t)) / 2.0));

    let tpr_at = |target: f64| -> f64 {
        points
            .iter()
            .filter(|&&(f, _)| f <= target)
            .map(|&(_, t)| t)
            .fold(0.0, f64::max)
    };

    Ok(OperatingMetrics {
        counts,
        acc,
        eer,
        tpr_at_fpr_1e2: Some(tpr_at(1e-2)),
        tpr_at_fpr_1e3: Some(tpr_at(1e-3)),
    })
}

/// Max-min operating point: candidates are every observed probability, the
/// midpoints between adjacent sorted distinct values, and {0, 1}; the winner
/// maximizes the minimum per-split accuracy, ties broken by the largest tau.
pub fn tune_tau(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Metric("threshold tuning needs records".into()));
    }
    let mut splits: std::collections::BTreeMap<SplitTag, Vec<&PredictionRecord>> =
        std::collections::BTreeMap::new();
    for r in records {
        splits.entry(r.split).or_default().push(r);
    }

    let mut candidates: Vec<f64> = records.iter().map(|r| r.p_hat).collect();
    candidates.push(0.0);
    candidates.push(1.0);
    candidates.sort_by(|a, b| a.total_cmp(b));
    candidates.dedup();
    let mids: Vec<f64> = candidates
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect();
    candidates.extend(mids);
    candidates.sort_by(|a, b| a.total_cmp(b));
    candidates.dedup();

    let min_acc = |tau: f64| -> f64 {
        splits
            .values()
            .map(|rs| {
                let correct = rs
                    .iter()
                    .filter(|r| u8::from(r.p_hat >= tau) == r.label)
                    .count();
                correct as f64 / rs.len() as f64
            })
            .fold(f64::INFINITY, f64::min)
    };

    let mut best_tau = candidates[0];
    let mut best = min_acc(best_tau);
    for &tau in &candidates[1..] {
        let score = min_acc(tau);
        if score >= best {
            // >= keeps the largest tau among ties
            best = score;
            best_tau = tau;
        }
    }
    Ok(best_tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakLocalization {
    /// Energy-within-ROI: <evidence, prior> / <evidence, 1>.
    pub ewr: f64,
    /// Fraction of thresholded evidence inside the binarized prior; 1.0 when
    /// nothing exceeds the threshold (flagged by `empty_prediction`).
    pub precision_in_roi: f64,
    pub dilated_iou: f64,
    pub soft_iou: f64,
    pub hard_iou: f64,
    pub empty_prediction: bool,
}

/// Weak-localization scores of an evidence map against a soft prior.
pub fn weak_localization(
    evidence: &Grid,
    prior: &Grid,
    theta: f64,
    dilate_radius: usize,
) -> Result<WeakLocalization> {
    if evidence.h() != prior.h() || evidence.w() != prior.w() {
        return Err(Error::Shape(format!(
            "evidence {}x{} vs prior {}x{}",
            evidence.h(),
            evidence.w(),
            prior.h(),
            prior.w()
        )));
    }
    let dot: f64 = evidence
        .data()
        .iter()
        .zip(prior.data())
        .map(|(&e, &g)| e * g)
        .sum();
    let mass = evidence.sum().max(1e-12);
    let ewr = dot / mass;

    let pred = evidence.threshold(theta);
    let prior_bin = prior.threshold(0.5);
    let pred_count = pred.count();
    let empty_prediction = pred_count == 0;
    let precision_in_roi = if empty_prediction {
        1.0
    } else {
        pred.and(&prior_bin).count() as f64 / pred_count as f64
    };

    let iou = |a: &crate::imagecore::Mask, b: &crate::imagecore::Mask| -> f64 {
        let inter = a.and(b).count();
        let union = a.count() + b.count() - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    };
    let dilated_iou = iou(&pred, &dilate(&prior_bin, dilate_radius));
    let hard_iou = iou(&pred, &prior_bin);

    let mut min_sum = 0.0;
    let mut max_sum = 0.0;
    for (&e, &g) in evidence.data().iter().zip(prior.data()) {
        min_sum += e.min(g);
        max_sum += e.max(g);
    }
    let soft_iou = if max_sum <= 1e-12 {
        1.0
    } else {
        min_sum / max_sum
    };

    Ok(WeakLocalization {
        ewr,
        precision_in_roi,
        dilated_iou,
        soft_iou,
        hard_iou,
        empty_prediction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rec(id: &str, p: f64, y: u8) -> PredictionRecord {
        PredictionRecord::scored(id, SplitTag::Clean, p, y)
    }

    /// Exhaustive pairwise oracle for AUC.
    fn auc_pairwise(records: &[PredictionRecord]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for p in records.iter().filter(|r| r.label == 1) {
            for n in records.iter().filter(|r| r.label == 0) {
                pairs += 1.0;
                if p.p_hat > n.p_hat {
                    wins += 1.0;
                } else if p.p_hat == n.p_hat {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfectly_separated_scores_are_perfect() {
        let records = vec![
            rec("a", 0.9, 1),
            rec("b", 0.8, 1),
            rec("c", 0.2, 0),
            rec("d", 0.1, 0),
        ];
        let m = rank_metrics(&records).unwrap();
        assert_eq!(m.auc, 1.0);
        assert_eq!(m.ap, 1.0);
    }

    #[test]
    fn all_equal_scores_give_half_auc() {
        let records = vec![rec("a", 0.5, 1), rec("b", 0.5, 0), rec("c", 0.5, 1)];
        let m = rank_metrics(&records).unwrap();
        assert_eq!(m.auc, 0.5);
    }

    #[test]
    fn six_record_fixture_matches_pairwise_oracle() {
        let records = vec![
            rec("a", 0.9, 1),
            rec("b", 0.8, 0),
            rec("c", 0.7, 1),
            rec("d", 0.7, 1),
            rec("e", 0.5, 0),
            rec("f", 0.2, 0),
        ];
        let m = rank_metrics(&records).unwrap();
        assert!((m.auc - auc_pairwise(&records)).abs() < 1e-12);
        // grouped AP by hand: group {0.9}: 1 * 1/1; group {0.7, 0.7}: 2 * 3/4
        let want_ap = (1.0 + 2.0 * 0.75) / 3.0;
        assert!((m.ap - want_ap).abs() < 1e-12);
    }

    #[test]
    fn random_records_match_pairwise_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let records: Vec<PredictionRecord> = (0..40)
                .map(|i| {
                    rec(
                        &format!("r{i:02}"),
                        (rng.gen::<f64>() * 8.0).round() / 8.0, // force ties
                        rng.gen_range(0..=1),
                    )
                })
                .collect();
            if records.iter().all(|r| r.label == 1) || records.iter().all(|r| r.label == 0) {
                continue;
            }
            let m = rank_metrics(&records).unwrap();
            assert!((m.auc - auc_pairwise(&records)).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let records: Vec<PredictionRecord> = (0..30)
            .map(|i| rec(&format!("r{i:02}"), rng.gen(), rng.gen_range(0..=1)))
            .collect();
        let mapped: Vec<PredictionRecord> = records
            .iter()
            .map(|r| {
                let mut c = r.clone();
                c.p_hat = 1.0 / (1.0 + (-(4.0 * r.p_hat - 1.0)).exp());
                c
            })
            .collect();
        let a = rank_metrics(&records).unwrap().auc;
        let b = rank_metrics(&mapped).unwrap().auc;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_a_metric_error() {
        let records = vec![rec("a", 0.9, 1), rec("b", 0.8, 1)];
        assert!(matches!(rank_metrics(&records), Err(Error::Metric(_))));
    }

    #[test]
    fn confident_correct_predictions_have_zero_ece_brier() {
        let records = vec![rec("a", 1.0, 1), rec("b", 0.0, 0), rec("c", 1.0, 1)];
        let m = calib_metrics(&records, 10).unwrap();
        assert!(m.ece.abs() < 1e-12);
        assert!(m.brier.abs() < 1e-12);
        assert!(m.nll < 1e-9);
    }

    #[test]
    fn coin_flip_probabilities_have_quarter_brier_log2_nll() {
        let records = vec![rec("a", 0.5, 1), rec("b", 0.5, 0), rec("c", 0.5, 1), rec("d", 0.5, 0)];
        let m = calib_metrics(&records, 4).unwrap();
        assert!((m.brier - 0.25).abs() < 1e-12);
        assert!((m.nll - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn twelve_record_three_bin_fixture_matches_hand_binning() {
        let data = [
            (0.9, 1u8),
            (0.8, 0),
            (0.7, 1),
            (0.6, 0),
            (0.55, 1),
            (0.52, 0),
            (0.45, 0),
            (0.4, 1),
            (0.3, 0),
            (0.2, 1),
            (0.1, 0),
            (0.05, 0),
        ];
        let records: Vec<PredictionRecord> = data
            .iter()
            .enumerate()
            .map(|(i, &(p, y))| rec(&format!("r{i:02}"), p, y))
            .collect();
        let m = calib_metrics(&records, 3).unwrap();
        // hand binning by ascending confidence (4 records each):
        // bin1 {0.52, 0.55, 0.55, 0.6}: conf 0.555, acc 0.5
        // bin2 {0.6, 0.7, 0.7, 0.8}: conf 0.7, acc 0.5
        // bin3 {0.8, 0.9, 0.9, 0.95}: conf 0.8875, acc 0.75
        let want = ((0.555f64 - 0.5).abs() + (0.7f64 - 0.5).abs() + (0.8875f64 - 0.75).abs()) / 3.0;
        assert!((m.ece - want).abs() < 1e-12, "{} vs {want}", m.ece);
    }

    #[test]
    fn aurc_extremes() {
        let all_right = vec![rec("a", 0.9, 1), rec("b", 0.1, 0)];
        assert_eq!(selective_metrics(&all_right).unwrap().aurc, 0.0);
        let all_wrong = vec![rec("a", 0.9, 0), rec("b", 0.1, 1)];
        assert_eq!(selective_metrics(&all_wrong).unwrap().aurc, 1.0);
    }

    #[test]
    fn five_record_fixture_matches_prefix_oracle() {
        let records = vec![
            rec("a", 0.95, 1),
            rec("b", 0.9, 0),
            rec("c", 0.2, 0),
            rec("d", 0.6, 1),
            rec("e", 0.4, 1),
        ];
        let m = selective_metrics(&records).unwrap();
        // descending confidence: a(0.95,ok) b(0.9,wrong) c(0.8,ok) d(0.6,ok) e(0.6->conf0.6? ...)
        // independent prefix computation:
        let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
        sorted.sort_by(|x, y| {
            y.confidence()
                .total_cmp(&x.confidence())
                .then_with(|| x.id.cmp(&y.id))
        });
        let mut errors = 0.0;
        let mut want = 0.0;
        for (k, r) in sorted.iter().enumerate() {
            if !r.correct() {
                errors += 1.0;
            }
            want += errors / (k + 1) as f64;
        }
        want /= 5.0;
        assert!((m.aurc - want).abs() < 1e-12);
        assert_eq!(m.curve.len(), 5);
        assert!((m.curve[4].0 - 1.0).abs() < 1e-15);
    }

    fn from_counts(split: SplitTag, tn: u64, fp: u64, fn_: u64, tp: u64) -> Vec<PredictionRecord> {
        let mut out = Vec::new();
        let mut i = 0;
        let mut push = |p: f64, y: u8, out: &mut Vec<PredictionRecord>, i: &mut usize| {
            out.push(PredictionRecord::scored(
                format!("{}-{i:04}", split.name()),
                split,
                p,
                y,
            ));
            *i += 1;
        };
        for _ in 0..tn {
            push(0.25, 0, &mut out, &mut i);
        }
        for _ in 0..fp {
            push(0.75, 0, &mut out, &mut i);
        }
        for _ in 0..fn_ {
            push(0.25, 1, &mut out, &mut i);
        }
        for _ in 0..tp {
            push(0.75, 1, &mut out, &mut i);
        }
        out
    }

    #[test]
    fn confusion_counts_reproduce_reference_split_accuracies() {
        // seven splits with published confusion counts; worst-case accuracy
        // must come out at 0.9917 when rounded to four decimals
        let table = [
            (SplitTag::Clean, (118u64, 0u64, 0u64, 122u64)),
            (SplitTag::Jpeg, (118, 0, 2, 120)),
            (SplitTag::Warp, (118, 0, 0, 122)),
            (SplitTag::Regrain, (116, 2, 0, 122)),
            (SplitTag::Seam, (118, 0, 0, 122)),
            (SplitTag::Gamma, (118, 0, 0, 122)),
            (SplitTag::Transcode, (118, 0, 0, 122)),
        ];
        let mut worst = f64::INFINITY;
        for (split, (tn, fp, fn_, tp)) in table {
            let records = from_counts(split, tn, fp, fn_, tp);
            let m = operating_metrics(&records, 0.5).unwrap();
            assert_eq!((m.counts.tn, m.counts.fp, m.counts.fn_, m.counts.tp), (tn, fp, fn_, tp));
            worst = worst.min(m.acc);
        }
        assert!((worst - 238.0 / 240.0).abs() < 1e-12);
        assert_eq!(format!("{worst:.4}"), "0.9917");
        assert_eq!(format!("{worst:.5}"), "0.99167");
    }

    #[test]
    fn tau_zero_predicts_everything_positive() {
        let records = from_counts(SplitTag::Clean, 5, 0, 0, 7);
        let m = operating_metrics(&records, 0.0).unwrap();
        assert_eq!(m.counts.tn, 0);
        assert_eq!(m.counts.fn_, 0);
        assert_eq!(m.counts.fp, 5);
        assert_eq!(m.counts.tp, 7);
    }

    #[test]
    fn eer_matches_hand_drawn_roc_intersection() {
        // pos {0.8, 0.4}, neg {0.6, 0.2}: the ROC passes through
        // (FPR, FNR) = (0, 0.5) at tau=0.8 and (0.5, 0.5) at tau=0.6, so the
        // crossing FPR = FNR sits at 0.5
        let records = vec![
            rec("a", 0.8, 1),
            rec("b", 0.6, 0),
            rec("c", 0.4, 1),
            rec("d", 0.2, 0),
        ];
        let m = operating_metrics(&records, 0.5).unwrap();
        assert!((m.eer.unwrap() - 0.5).abs() < 1e-12);
        // separable case: EER 0
        let sep = vec![rec("a", 0.9, 1), rec("b", 0.1, 0)];
        assert!(operating_metrics(&sep, 0.5).unwrap().eer.unwrap().abs() < 1e-12);
    }

    #[test]
    fn tpr_at_low_fpr_requires_zero_false_positives_on_small_sets() {
        let records = vec![
            rec("a", 0.9, 1),
            rec("b", 0.8, 1),
            rec("c", 0.7, 0),
            rec("d", 0.3, 1),
            rec("e", 0.2, 0),
        ];
        // with 2 negatives, FPR <= 1e-2 forces zero FPs: best TPR is 2/3
        let m = operating_metrics(&records, 0.5).unwrap();
        assert!((m.tpr_at_fpr_1e2.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.tpr_at_fpr_1e3.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_operating_metrics_keep_counts_but_not_eer() {
        let records = vec![rec("a", 0.9, 1), rec("b", 0.2, 1)];
        let m = operating_metrics(&records, 0.5).unwrap();
        assert_eq!(m.counts.tp, 1);
        assert_eq!(m.counts.fn_, 1);
        assert!(m.eer.is_none());
        assert!(m.tpr_at_fpr_1e2.is_none());
    }

    #[test]
    fn tune_tau_perfectly_separable_single_split() {
        let records = vec![
            rec("a", 0.9, 1),
            rec("b", 0.8, 1),
            rec("c", 0.3, 0),
            rec("d", 0.1, 0),
        ];
        let tau = tune_tau(&records).unwrap();
        let m = operating_metrics(&records, tau).unwrap();
        assert_eq!(m.acc, 1.0);
    }

    #[test]
    fn tune_tau_finds_the_max_min_compromise() {
        // split A is perfect only on (0.2, 0.3], split B only on (0.7, 0.8];
        // the minimum over both peaks strictly and uniquely on (0.5, 0.55]
        // (A 5/6, B 4/5), which is optimal for neither split alone
        let mut records = vec![
            PredictionRecord::scored("a1", SplitTag::Clean, 0.05, 0),
            PredictionRecord::scored("a2", SplitTag::Clean, 0.10, 0),
            PredictionRecord::scored("a3", SplitTag::Clean, 0.20, 0),
            PredictionRecord::scored("a4", SplitTag::Clean, 0.30, 1),
            PredictionRecord::scored("a5", SplitTag::Clean, 0.55, 1),
            PredictionRecord::scored("a6", SplitTag::Clean, 0.90, 1),
        ];
        records.extend([
            PredictionRecord::scored("b1", SplitTag::Jpeg, 0.50, 0),
            PredictionRecord::scored("b2", SplitTag::Jpeg, 0.70, 0),
            PredictionRecord::scored("b3", SplitTag::Jpeg, 0.80, 1),
            PredictionRecord::scored("b4", SplitTag::Jpeg, 0.90, 1),
            PredictionRecord::scored("b5", SplitTag::Jpeg, 0.95, 1),
        ]);
        let tau = tune_tau(&records).unwrap();
        // exhaustive oracle over a fine grid
        let min_acc = |tau: f64| -> f64 {
            [SplitTag::Clean, SplitTag::Jpeg]
                .iter()
                .map(|s| {
                    let rs: Vec<&PredictionRecord> =
                        records.iter().filter(|r| r.split == *s).collect();
                    rs.iter()
                        .filter(|r| u8::from(r.p_hat >= tau) == r.label)
                        .count() as f64
                        / rs.len() as f64
                })
                .fold(f64::INFINITY, f64::min)
        };
        let got = min_acc(tau);
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            assert!(
                got >= min_acc(t) - 1e-12,
                "tau {tau} (min acc {got}) beaten by {t} ({})",
                min_acc(t)
            );
        }
        assert!((got - 0.8).abs() < 1e-12, "max-min accuracy {got}");
        // largest tau inside the optimal plateau is the observed 0.55
        assert!((tau - 0.55).abs() < 1e-12, "expected 0.55, got {tau}");
    }

    #[test]
    fn tune_tau_decisions_are_invariant_under_monotone_transforms() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let records: Vec<PredictionRecord> = (0..24)
            .map(|i| {
                PredictionRecord::scored(
                    format!("r{i:02}"),
                    if i % 2 == 0 { SplitTag::Clean } else { SplitTag::Warp },
                    rng.gen(),
                    rng.gen_range(0..=1),
                )
            })
            .collect();
        let tau = tune_tau(&records).unwrap();
        let decisions: Vec<u8> = records.iter().map(|r| u8::from(r.p_hat >= tau)).collect();

        let transform = |p: f64| 1.0 / (1.0 + (-(3.0 * p + 0.2)).exp());
        let mapped: Vec<PredictionRecord> = records
            .iter()
            .map(|r| {
                let mut c = r.clone();
                c.p_hat = transform(r.p_hat);
                c
            })
            .collect();
        let tau2 = tune_tau(&mapped).unwrap();
        let decisions2: Vec<u8> = mapped.iter().map(|r| u8::from(r.p_hat >= tau2)).collect();
        assert_eq!(decisions, decisions2);
    }

    #[test]
    fn max_min_optimality_is_exhaustive_over_candidates() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let records: Vec<PredictionRecord> = (0..30)
            .map(|i| {
                let p = (rng.gen::<f64>() * 16.0).round() / 16.0;
                // label loosely correlated with the score
                let label = u8::from(p + 0.2 * (rng.gen::<f64>() - 0.5) >= 0.5);
                PredictionRecord::scored(format!("r{i:02}"), SplitTag::ALL[i % 3], p, label)
            })
            .collect();
        let tau = tune_tau(&records).unwrap();
        let min_acc = |tau: f64| -> f64 {
            let mut accs = Vec::new();
            for s in [SplitTag::Clean, SplitTag::Jpeg, SplitTag::Warp] {
                let rs: Vec<&PredictionRecord> =
                    records.iter().filter(|r| r.split == s).collect();
                if rs.is_empty() {
                    continue;
                }
                accs.push(
                    rs.iter()
                        .filter(|r| u8::from(r.p_hat >= tau) == r.label)
                        .count() as f64
                        / rs.len() as f64,
                );
            }
            accs.into_iter().fold(f64::INFINITY, f64::min)
        };
        let got = min_acc(tau);
        for i in 0..=2000 {
            let t = i as f64 / 2000.0;
            assert!(got >= min_acc(t) - 1e-12);
        }
    }

    #[test]
    fn weak_localization_hand_fixture() {
        let evidence = Grid::from_vec(
            4,
            4,
            vec![
                0.9, 0.8, 0.1, 0.0, //
                0.7, 0.6, 0.2, 0.0, //
                0.0, 0.1, 0.3, 0.0, //
                0.0, 0.0, 0.0, 0.05,
            ],
        );
        let prior = Grid::from_vec(
            4,
            4,
            vec![
                1.0, 1.0, 0.0, 0.0, //
                1.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        );
        let m = weak_localization(&evidence, &prior, 0.5, 1).unwrap();
        assert!((m.ewr - 3.0 / 3.75).abs() < 1e-12);
        assert!((m.precision_in_roi - 1.0).abs() < 1e-15);
        assert!((m.dilated_iou - 4.0 / 9.0).abs() < 1e-12);
        assert!((m.soft_iou - 3.0 / 4.75).abs() < 1e-12);
        assert!((m.hard_iou - 1.0).abs() < 1e-15);
        assert!(!m.empty_prediction);
    }

    #[test]
    fn ewr_is_one_when_prior_covers_everything() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let evidence = Grid::from_vec(5, 5, (0..25).map(|_| rng.gen::<f64>()).collect());
        let m = weak_localization(&evidence, &Grid::constant(5, 5, 1.0), 0.5, 2).unwrap();
        assert!((m.ewr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evidence_confined_to_the_prior_scores_perfectly() {
        let mut evidence = Grid::zeros(6, 6);
        let mut prior = Grid::zeros(6, 6);
        for y in 1..3 {
            for x in 1..4 {
                prior.set(y, x, 1.0);
                evidence.set(y, x, 0.8);
            }
        }
        let m = weak_localization(&evidence, &prior, 0.5, 1).unwrap();
        assert!((m.ewr - 1.0).abs() < 1e-12);
        assert!((m.precision_in_roi - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_prediction_convention_is_flagged() {
        let evidence = Grid::constant(4, 4, 0.1);
        let mut prior = Grid::zeros(4, 4);
        prior.set(1, 1, 1.0);
        let m = weak_localization(&evidence, &prior, 0.5, 1).unwrap();
        assert_eq!(m.precision_in_roi, 1.0);
        assert!(m.empty_prediction);
        assert_eq!(m.hard_iou, 0.0);
    }

    #[test]
    fn dilated_iou_dominates_hard_iou_when_prediction_fits() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        for trial in 0..20 {
            let evidence = Grid::from_vec(8, 8, (0..64).map(|_| rng.gen::<f64>()).collect());
            let prior = Grid::from_vec(8, 8, (0..64).map(|_| rng.gen::<f64>()).collect());
            let m = weak_localization(&evidence, &prior, 0.6, 2).unwrap();
            let pred = evidence.threshold(0.6);
            let dil = dilate(&prior.threshold(0.5), 2);
            if pred.is_subset_of(&dil) {
                assert!(
                    m.dilated_iou >= m.hard_iou - 1e-12,
                    "trial {trial}: {} < {}",
                    m.dilated_iou,
                    m.hard_iou
                );
            }
            for v in [m.ewr, m.precision_in_roi, m.dilated_iou, m.soft_iou, m.hard_iou] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(weak_localization(&Grid::zeros(4, 4), &Grid::zeros(5, 5), 0.5, 1).is_err());
    }
}

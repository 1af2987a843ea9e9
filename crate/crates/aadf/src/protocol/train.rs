//! Worst-of-K red-team training. Per sample: draw K candidate attacks from
//! distinct families, keep the one with the highest classification loss,
//! train on that view plus an auxiliary clean view. Gradient accumulation is
//! strictly sequential in batch order so runs are bit-reproducible.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optimizer::{clip_global_norm, AdamW};
use crate::attacks::{
    apply_attack, derive_seed, sample_attack_with, AttackFamily, AttackInstance, AttackRanges,
};
use crate::detector::{backward, forward, DetectorParams, ModelOutput};
use crate::error::{Error, Result};
use crate::imagecore::{load_image, pi_preprocess, Grid, Image};
use crate::objective::{loss_cls, total_objective, LossBreakdown, LossResolution, LossWeights};
use crate::priors::{build_prior, transform_prior, PriorConfig, WeakPrior};

/// Slot reserved for the per-sample family permutation; candidate slots are
/// 0..K-1.
const FAMILY_PERMUTATION_SLOT: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Candidate attacks per sample (worst-of-K).
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub global_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 3,
            epochs: 2,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            global_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.k > AttackFamily::ALL.len() {
            return Err(Error::Invalid(format!("k must be in [1,6], got {}", self.k)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Invalid("batch size and epochs must be >= 1".into()));
        }
        if self.lr < 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::Invalid("lr must be >= 0 and clip_norm > 0".into()));
        }
        Ok(())
    }
}

/// Red-team (worst-of-K) or clean-only baseline training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    RedTeam,
    CleanOnly,
}

/// One training sample; pixels are loaded lazily from `path` at each visit
/// to keep memory flat.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub path: PathBuf,
    pub label: u8,
    pub face_box: Option<crate::priors::FaceBox>,
}

/// One optimizer step in the training log (JSONL, one record per step).
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub sample_ids: Vec<String>,
    pub chosen_families: Vec<String>,
    pub cls: f64,
    pub mask_att: f64,
    pub mask_clean: f64,
    pub edge: f64,
    pub size: f64,
    pub cons: f64,
    pub total: f64,
    pub grad_norm: f64,
}

/// Candidate instances for one sample visit: K distinct families drawn
/// without replacement from a seeded permutation (seam excluded when the
/// sample has no face box), each materialized from its slot seed.
pub fn candidate_instances(
    global_seed: u64,
    sample_id: &str,
    epoch: u32,
    k: usize,
    ranges: &AttackRanges,
    has_prior: bool,
) -> Vec<AttackInstance> {
    let mut families: Vec<AttackFamily> = AttackFamily::ALL
        .iter()
        .copied()
        .filter(|f| has_prior || *f != AttackFamily::Seam)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        global_seed,
        sample_id,
        epoch,
        FAMILY_PERMUTATION_SLOT,
    ));
    // Fisher-Yates
    for i in (1..families.len()).rev() {
        let j = rng.gen_range(0..=i);
        families.swap(i, j);
    }
    families
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(slot, family)| {
            sample_attack_with(
                family,
                derive_seed(global_seed, sample_id, epoch, slot as u32),
                ranges,
            )
        })
        .collect()
}

/// Apply every candidate, run the forward pass, and score the
/// classification loss alone. Returns the forwards, the per-candidate
/// losses, and the argmax index (ties broken by the lowest slot).
fn evaluate_candidates(
    x: &Image,
    y: u8,
    p: &DetectorParams,
    candidates: &[AttackInstance],
    prior: Option<&WeakPrior>,
    working_size: usize,
) -> Result<(Vec<ModelOutput>, Vec<f64>, usize)> {
    if candidates.is_empty() {
        return Err(Error::Invalid("worst-of-k needs at least one candidate".into()));
    }
    let mut outs = Vec::with_capacity(candidates.len());
    let mut losses = Vec::with_capacity(candidates.len());
    for inst in candidates {
        let attacked = apply_attack(x, inst, prior)?;
        let std = pi_preprocess(&attacked, working_size)?;
        let out = forward(&std, p);
        losses.push(loss_cls(out.logit, y).0);
        outs.push(out);
    }
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l > losses[best] {
            best = i;
        }
    }
    debug_assert!(losses.iter().all(|&l| losses[best] >= l));
    Ok((outs, losses, best))
}

/// Worst-of-K selection: the candidate whose classification loss is largest
/// wins; ties resolve to the lowest slot index. Returns the chosen index and
/// every candidate's loss.
pub fn select_worst_of_k(
    x: &Image,
    y: u8,
    p: &DetectorParams,
    candidates: &[AttackInstance],
    prior: Option<&WeakPrior>,
    working_size: usize,
) -> Result<(usize, Vec<f64>)> {
    let (_, losses, best) = evaluate_candidates(x, y, p, candidates, prior, working_size)?;
    Ok((best, losses))
}

/// Train from an initial parameter state. The dataset order, candidate
/// seeds, and accumulation order are all derived from `cfg.global_seed`;
/// identical inputs give bit-identical parameters.
#[allow(clippy::too_many_arguments)]
pub fn train(
    samples: &[TrainSample],
    init: DetectorParams,
    cfg: &TrainConfig,
    weights: &LossWeights,
    ranges: &AttackRanges,
    prior_cfg: &PriorConfig,
    res: LossResolution,
    working_size: usize,
    mode: TrainMode,
) -> Result<(DetectorParams, Vec<StepRecord>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Manifest("training set is empty".into()));
    }

    let det_cfg = init.config();
    let dim = init.param_count();
    let mut flat = init.to_flat();
    let mut opt = AdamW::new(
        dim,
        cfg.lr,
        cfg.weight_decay,
        cfg.beta1,
        cfg.beta2,
        cfg.eps_opt,
    );
    let mut log = Vec::new();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.global_seed,
            "epoch-shuffle",
            epoch as u32,
            0,
        ));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        for batch in order.chunks(cfg.batch_size) {
            let params = DetectorParams::from_flat(&det_cfg, &flat)?;
            let mut grad_acc = vec![0.0; dim];
            let mut sample_ids = Vec::with_capacity(batch.len());
            let mut chosen_families = Vec::with_capacity(batch.len());
            let mut sums = [0.0f64; 7]; // cls, mask_att, mask_clean, edge, size, cons, total

            for &idx in batch {
                let sample = &samples[idx];
                let img = load_image(&sample.path)?;
                let prior = match &sample.face_box {
                    Some(b) => Some(build_prior(
                        b,
                        img.height(),
                        img.width(),
                        working_size,
                        prior_cfg.margin,
                        prior_cfg.sigma_frac,
                    )?),
                    None => {
                        if sample.label == 1 {
                            return Err(Error::Manifest(format!(
                                "fake sample '{}' has no face box for mask supervision",
                                sample.id
                            )));
                        }
                        None
                    }
                };

                let std_clean = pi_preprocess(&img, working_size)?;
                let clean_out = forward(&std_clean, &params);

                let zeros = Grid::zeros(working_size, working_size);
                let g_clean = match (sample.label, &prior) {
                    (1, Some(p)) => p.grid.clone(),
                    _ => zeros.clone(),
                };

                let (att_out, g_att, family_name) = match mode {
                    TrainMode::CleanOnly => (clean_out.clone(), g_clean.clone(), "clean".to_string()),
                    TrainMode::RedTeam => {
                        let candidates = candidate_instances(
                            cfg.global_seed,
                            &sample.id,
                            epoch as u32,
                            cfg.k,
                            ranges,
                            prior.is_some(),
                        );
                        let (mut outs, losses, best) = evaluate_candidates(
                            &img,
                            sample.label,
                            &params,
                            &candidates,
                            prior.as_ref(),
                            working_size,
                        )?;
                        assert!(
                            losses.iter().all(|&l| losses[best] >= l),
                            "worst-of-k dominance violated"
                        );
                        let inst = &candidates[best];
                        let g_att = match (sample.label, &prior) {
                            (1, Some(p)) => transform_prior(p, inst).grid,
                            _ => zeros.clone(),
                        };
                        (outs.swap_remove(best), g_att, inst.family.name().to_string())
                    }
                };

                let lb: LossBreakdown = total_objective(
                    &att_out,
                    &clean_out,
                    sample.label,
                    &g_att,
                    &g_clean,
                    weights,
                    res,
                )?;
                let ga = backward(&att_out.cache, &params, lb.grad_logit, &lb.grad_mask)?;
                let gc = backward(&clean_out.cache, &params, 0.0, &lb.grad_mask_clean)?;
                for (acc, (a, c)) in grad_acc
                    .iter_mut()
                    .zip(ga.to_flat().into_iter().zip(gc.to_flat()))
                {
                    *acc += a + c;
                }

                sample_ids.push(sample.id.clone());
                chosen_families.push(family_name);
                for (s, v) in sums.iter_mut().zip([
                    lb.cls,
                    lb.mask_att,
                    lb.mask_clean,
                    lb.edge,
                    lb.size,
                    lb.cons,
                    lb.total,
                ]) {
                    *s += v;
                }
            }

            let inv_b = 1.0 / batch.len() as f64;
            for g in &mut grad_acc {
                *g *= inv_b;
            }
            let grad_norm = clip_global_norm(&mut grad_acc, cfg.clip_norm);
            opt.step(&mut flat, &grad_acc);

            log.push(StepRecord {
                epoch,
                step,
                sample_ids,
                chosen_families,
                cls: sums[0] * inv_b,
                mask_att: sums[1] * inv_b,
                mask_clean: sums[2] * inv_b,
                edge: sums[3] * inv_b,
                size: sums[4] * inv_b,
                cons: sums[5] * inv_b,
                total: sums[6] * inv_b,
                grad_norm,
            });
            step += 1;
        }
    }

    Ok((DetectorParams::from_flat(&det_cfg, &flat)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::DetectorConfig;
    use crate::imagecore::save_image;
    use crate::priors::FaceBox;

    fn write_fixture_corpus(dir: &std::path::Path, n: usize) -> Vec<TrainSample> {
        let mut samples = Vec::new();
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            let mut img = Image::new(
                48,
                48,
                (0..48 * 48 * 3).map(|_| rng.gen::<f64>() * 0.6 + 0.2).collect(),
            )
            .unwrap();
            let label = (i % 2) as u8;
            if label == 1 {
                // bright square inside the face box region
                for c in 0..3 {
                    for y in 14..30 {
                        for x in 14..30 {
                            img.set(c, y, x, 0.95);
                        }
                    }
                }
            }
            let path = dir.join(format!("s{i}.png"));
            save_image(&img, &path).unwrap();
            samples.push(TrainSample {
                id: format!("s{i}"),
                path,
                label,
                face_box: Some(FaceBox::new(12.0, 12.0, 32.0, 32.0).unwrap()),
            });
        }
        samples
    }

    fn small_cfg(seed: u64) -> (DetectorParams, TrainConfig) {
        let det = DetectorConfig {
            mask_grid: 8,
            d_u: 8,
        };
        let params = DetectorParams::init_seeded(&det, 1);
        let cfg = TrainConfig {
            k: 2,
            epochs: 1,
            batch_size: 2,
            lr: 1e-3,
            global_seed: seed,
            ..TrainConfig::default()
        };
        (params, cfg)
    }

    #[test]
    fn candidate_families_are_distinct_and_seeded() {
        let a = candidate_instances(7, "img", 0, 3, &AttackRanges::default(), true);
        let b = candidate_instances(7, "img", 0, 3, &AttackRanges::default(), true);
        assert_eq!(a, b);
        let fams: std::collections::BTreeSet<_> = a.iter().map(|i| i.family).collect();
        assert_eq!(fams.len(), 3, "families drawn without replacement");
        // no prior -> seam never appears
        for epoch in 0..8 {
            let c = candidate_instances(7, "img", epoch, 5, &AttackRanges::default(), false);
            assert!(c.iter().all(|i| i.family != AttackFamily::Seam));
        }
    }

    #[test]
    fn select_worst_of_k_returns_the_sole_candidate() {
        let dir = tempfile::tempdir().unwrap();
        let samples = write_fixture_corpus(dir.path(), 1);
        let img = load_image(&samples[0].path).unwrap();
        let p = DetectorParams::init_seeded(
            &DetectorConfig {
                mask_grid: 8,
                d_u: 8,
            },
            2,
        );
        let cands = candidate_instances(1, "s0", 0, 1, &AttackRanges::default(), false);
        let (best, losses) = select_worst_of_k(&img, 0, &p, &cands, None, 32).unwrap();
        assert_eq!(best, 0);
        assert_eq!(losses.len(), 1);
    }

    #[test]
    fn chosen_loss_dominates_all_candidates() {
        let dir = tempfile::tempdir().unwrap();
        let samples = write_fixture_corpus(dir.path(), 2);
        let img = load_image(&samples[1].path).unwrap();
        let prior = build_prior(
            samples[1].face_box.as_ref().unwrap(),
            48,
            48,
            32,
            0.15,
            0.05,
        )
        .unwrap();
        let p = DetectorParams::init_seeded(
            &DetectorConfig {
                mask_grid: 8,
                d_u: 8,
            },
            5,
        );
        let cands = candidate_instances(3, "s1", 0, 3, &AttackRanges::default(), true);
        let (best, losses) = select_worst_of_k(&img, 1, &p, &cands, Some(&prior), 32).unwrap();
        let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(losses[best], max);
    }

    #[test]
    fn zero_lr_training_is_a_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let samples = write_fixture_corpus(dir.path(), 4);
        let (params, mut cfg) = small_cfg(11);
        cfg.lr = 0.0;
        let before = params.to_flat();
        let (after, log) = train(
            &samples,
            params,
            &cfg,
            &LossWeights::default(),
            &AttackRanges::default(),
            &PriorConfig::default(),
            LossResolution::MaskGrid,
            32,
            TrainMode::RedTeam,
        )
        .unwrap();
        assert_eq!(after.to_flat(), before);
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let samples = write_fixture_corpus(dir.path(), 6);
        let run = || {
            let (params, cfg) = small_cfg(23);
            train(
                &samples,
                params,
                &cfg,
                &LossWeights::default(),
                &AttackRanges::default(),
                &PriorConfig::default(),
                LossResolution::MaskGrid,
                32,
                TrainMode::RedTeam,
            )
            .unwrap()
        };
        let (a, log_a) = run();
        let (b, log_b) = run();
        assert_eq!(a.to_flat(), b.to_flat());
        assert_eq!(
            serde_json::to_string(&log_a).unwrap(),
            serde_json::to_string(&log_b).unwrap()
        );
    }

    #[test]
    fn single_sample_step_matches_hand_computed_adam() {
        let dir = tempfile::tempdir().unwrap();
        let samples = write_fixture_corpus(dir.path(), 1);
        let det = DetectorConfig {
            mask_grid: 8,
            d_u: 8,
        };
        let init = DetectorParams::init_seeded(&det, 9);
        let cfg = TrainConfig {
            k: 1,
            epochs: 1,
            batch_size: 1,
            lr: 1e-3,
            global_seed: 31,
            ..TrainConfig::default()
        };
        let w = LossWeights::default();
        let ranges = AttackRanges::default();
        let pc = PriorConfig::default();

        // hand path: recompute the gradient with public pieces
        let img = load_image(&samples[0].path).unwrap();
        let prior = build_prior(samples[0].face_box.as_ref().unwrap(), 48, 48, 32, pc.margin, pc.sigma_frac).unwrap();
        let cands = candidate_instances(31, "s0", 0, 1, &ranges, true);
        let attacked = apply_attack(&img, &cands[0], Some(&prior)).unwrap();
        let att_out = forward(&pi_preprocess(&attacked, 32).unwrap(), &init);
        let clean_out = forward(&pi_preprocess(&img, 32).unwrap(), &init);
        let zeros = Grid::zeros(32, 32);
        let lb = total_objective(
            &att_out,
            &clean_out,
            0,
            &zeros,
            &zeros,
            &w,
            LossResolution::MaskGrid,
        )
        .unwrap();
        let ga = backward(&att_out.cache, &init, lb.grad_logit, &lb.grad_mask).unwrap();
        let gc = backward(&clean_out.cache, &init, 0.0, &lb.grad_mask_clean).unwrap();
        let mut grad: Vec<f64> = ga
            .to_flat()
            .iter()
            .zip(gc.to_flat())
            .map(|(a, c)| a + c)
            .collect();
        clip_global_norm(&mut grad, cfg.clip_norm);
        let mut want = init.to_flat();
        for i in 0..want.len() {
            let decayed = want[i] * (1.0 - cfg.lr * cfg.weight_decay);
            // t = 1: m_hat = g, v_hat = g^2
            want[i] = decayed - cfg.lr * grad[i] / (grad[i].abs() + cfg.eps_opt);
        }

        let (got, log) = train(
            &samples,
            init,
            &cfg,
            &w,
            &ranges,
            &pc,
            LossResolution::MaskGrid,
            32,
            TrainMode::RedTeam,
        )
        .unwrap();
        assert_eq!(log.len(), 1);
        for (g, w_) in got.to_flat().iter().zip(&want) {
            assert!((g - w_).abs() <= 1e-15, "{g} vs {w_}");
        }
    }

    #[test]
    fn clean_only_mode_never_attacks() {
        let dir = tempfile::tempdir().unwrap();
        let samples = write_fixture_corpus(dir.path(), 4);
        let (params, cfg) = small_cfg(41);
        let (_, log) = train(
            &samples,
            params,
            &cfg,
            &LossWeights::default(),
            &AttackRanges::default(),
            &PriorConfig::default(),
            LossResolution::MaskGrid,
            32,
            TrainMode::CleanOnly,
        )
        .unwrap();
        assert!(log
            .iter()
            .flat_map(|r| r.chosen_families.iter())
            .all(|f| f == "clean"));
        // identical views: consistency gap is zero
        assert!(log.iter().all(|r| r.cons == 0.0));
    }

    #[test]
    fn fake_sample_without_box_is_a_manifest_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = write_fixture_corpus(dir.path(), 2);
        samples[1].face_box = None; // s1 has label 1
        let (params, cfg) = small_cfg(3);
        let err = train(
            &samples,
            params,
            &cfg,
            &LossWeights::default(),
            &AttackRanges::default(),
            &PriorConfig::default(),
            LossResolution::MaskGrid,
            32,
            TrainMode::RedTeam,
        );
        assert!(matches!(err, Err(Error::Manifest(_))));
    }
}

//! Objective/subjective agreement: PCC, SROCC, per-epoch curves, noise
//! classification, checkpoint selection and indicator comparison.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::augment::NoiseSpec;
use crate::baselines::Orientation;
use crate::encoder::{Encoder, FeatureSet};
use crate::fid::{self, FidError};
use crate::image::Image;
use crate::math;
use crate::subjective::SubjectiveScore;
use crate::trainer::CheckpointSeries;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorrelationError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("a score vector has zero variance")]
    ZeroVariance,
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite score")]
    NonFinite,
    #[error("no subjective score for '{0}'")]
    MissingSubjective(String),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("curve is incomplete: {0}")]
    IncompleteCurve(&'static str),
    #[error("no curve is classified positive")]
    NoPositiveNoise,
    #[error("indicator '{indicator}' has no score for '{image}' in group {group}")]
    IncompleteScores { indicator: String, group: usize, image: String },
    #[error(transparent)]
    Fid(#[from] FidError),
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), CorrelationError> {
    if x.len() != y.len() {
        return Err(CorrelationError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(CorrelationError::TooFewSamples(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(CorrelationError::NonFinite);
    }
    Ok(())
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    let (mx, my) = (math::mean(x), math::mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CorrelationError::ZeroVariance);
    }
    // The n - 1 divisors cancel between numerator and denominator.
    Ok((sxy / (math::sqrt(sxx) * math::sqrt(syy))).clamp(-1.0, 1.0))
}

/// Pearson linear correlation.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    check_pair(x, y)?;
    pearson_unchecked(x, y)
}

/// 1-based ranks; tied values share the average of their positions.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = alloc::vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn has_ties(ranks: &[f64]) -> bool {
    let mut s = ranks.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

/// `1 − 6Σd² / (n(n² − 1))`; only the Spearman coefficient when neither
/// vector has ties.
pub fn spearman_formula(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    check_pair(x, y)?;
    let (rx, ry) = (midranks(x), midranks(y));
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    let n = x.len() as f64;
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

/// Pearson correlation of the midrank vectors.
pub fn pearson_on_ranks(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    check_pair(x, y)?;
    pearson_unchecked(&midranks(x), &midranks(y))
}

/// Spearman rank correlation. Tie-free inputs use the closed form, inputs
/// with ties fall back to Pearson on midranks.
pub fn srocc(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    check_pair(x, y)?;
    let (rx, ry) = (midranks(x), midranks(y));
    if has_ties(&rx) || has_ties(&ry) {
        pearson_unchecked(&rx, &ry)
    } else {
        spearman_formula(x, y)
    }
}

/// How correlations are computed over a test set split into groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// Correlate within each group, then average across groups.
    #[default]
    PerGroup,
    /// Correlate over all items at once.
    Pooled,
}

/// `(pcc, srocc)` of oriented objective scores against subjective scores,
/// both laid out group by group.
pub fn correlate(objective: &[Vec<f64>], subjective: &[Vec<f64>], mode: CorrelationMode) -> Result<(f64, f64), CorrelationError> {
    if objective.is_empty() {
        return Err(CorrelationError::EmptyTestSet);
    }
    if objective.len() != subjective.len() {
        return Err(CorrelationError::LengthMismatch(objective.len(), subjective.len()));
    }
    match mode {
        CorrelationMode::Pooled => {
            let x: Vec<f64> = objective.concat();
            let y: Vec<f64> = subjective.concat();
            Ok((pcc(&x, &y)?, srocc(&x, &y)?))
        }
        CorrelationMode::PerGroup => {
            let (mut p, mut s) = (0.0, 0.0);
            for (x, y) in objective.iter().zip(subjective) {
                p += pcc(x, y)?;
                s += srocc(x, y)?;
            }
            let k = objective.len() as f64;
            Ok((p / k, s / k))
        }
    }
}

/// A stitched image to score; its features come from `stitched` (typically
/// tiles of one image).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub stitched: Vec<Image>,
}

/// Stitched items sharing one reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGroup {
    pub id: String,
    pub reference: Vec<Image>,
    pub items: Vec<EvalItem>,
}

/// Raw Fréchet distances for every item, grouped like the input.
/// Reference features are embedded once per group.
pub fn score_groups(enc: &Encoder, groups: &[EvalGroup]) -> Result<Vec<Vec<f64>>, CorrelationError> {
    if groups.iter().all(|g| g.items.is_empty()) {
        return Err(CorrelationError::EmptyTestSet);
    }
    groups
        .iter()
        .map(|g| {
            let reference: FeatureSet = enc.embed_batch(&g.reference).map_err(FidError::from)?;
            g.items
                .iter()
                .map(|it| {
                    let f = enc.embed_batch(&it.stitched).map_err(FidError::from)?;
                    Ok(fid::score_features(&reference, &f)?)
                })
                .collect()
        })
        .collect()
}

/// Looks up subjective values for every item, grouped like `groups`.
pub fn subjective_matrix(groups: &[EvalGroup], scores: &[SubjectiveScore]) -> Result<Vec<Vec<f64>>, CorrelationError> {
    let by_id: BTreeMap<&str, f64> = scores.iter().map(|s| (s.image_id.as_str(), s.value)).collect();
    groups
        .iter()
        .map(|g| {
            g.items
                .iter()
                .map(|it| {
                    by_id
                        .get(it.id.as_str())
                        .copied()
                        .ok_or_else(|| CorrelationError::MissingSubjective(it.id.clone()))
                })
                .collect()
        })
        .collect()
}

/// Negates Fréchet distances so larger means better.
pub fn orient_fid(scores: &[Vec<f64>]) -> Vec<Vec<f64>> {
    scores.iter().map(|g| g.iter().map(|v| -v).collect()).collect()
}

/// Correlation of one encoder's scores with the subjective matrix.
pub fn curve_point(
    enc: &Encoder,
    groups: &[EvalGroup],
    subjective: &[Vec<f64>],
    mode: CorrelationMode,
) -> Result<(f64, f64), CorrelationError> {
    correlate(&orient_fid(&score_groups(enc, groups)?), subjective, mode)
}

/// Per-epoch agreement for one noise; index 0 is the untrained encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub noise: NoiseSpec,
    pub mode: CorrelationMode,
    pub pcc: Vec<f64>,
    pub srocc: Vec<f64>,
}

impl CorrelationCurve {
    /// Builds a curve from `(pcc, srocc)` points ordered by epoch.
    pub fn from_points(noise: NoiseSpec, mode: CorrelationMode, points: &[(f64, f64)]) -> Self {
        Self {
            noise,
            mode,
            pcc: points.iter().map(|p| p.0).collect(),
            srocc: points.iter().map(|p| p.1).collect(),
        }
    }

    /// Number of trained epochs `E` (the curve has `E + 1` points).
    pub fn epochs(&self) -> usize {
        self.pcc.len().saturating_sub(1)
    }

    /// `mean(pcc, srocc)` per epoch.
    pub fn combined(&self) -> Vec<f64> {
        self.pcc.iter().zip(&self.srocc).map(|(p, s)| 0.5 * (p + s)).collect()
    }

    fn check(&self) -> Result<(), CorrelationError> {
        if self.pcc.len() != self.srocc.len() {
            return Err(CorrelationError::IncompleteCurve("pcc and srocc lengths differ"));
        }
        if self.pcc.len() < 3 {
            return Err(CorrelationError::IncompleteCurve("need epoch 0 and at least two trained epochs"));
        }
        if self.pcc.iter().chain(&self.srocc).any(|v| !v.is_finite()) {
            return Err(CorrelationError::IncompleteCurve("non-finite entry"));
        }
        Ok(())
    }
}

/// Scores the initial encoder and every checkpoint on the test set.
pub fn build_curve(
    series: &CheckpointSeries,
    groups: &[EvalGroup],
    subjective: &[SubjectiveScore],
    mode: CorrelationMode,
) -> Result<CorrelationCurve, CorrelationError> {
    let subj = subjective_matrix(groups, subjective)?;
    let points = core::iter::once(&series.initial)
        .chain(&series.checkpoints)
        .map(|enc| curve_point(enc, groups, &subj, mode))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CorrelationCurve::from_points(series.noise, mode, &points))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseClass {
    Positive,
    Negative,
}

/// Thresholds for calling a curve positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRule {
    pub min_slope: f64,
    pub min_gain: f64,
    /// Trailing epochs averaged for the gain.
    pub tail: usize,
}

impl Default for ClassifyRule {
    fn default() -> Self {
        Self {
            min_slope: 0.0,
            min_gain: 0.0,
            tail: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseVerdict {
    pub noise: NoiseSpec,
    pub class: NoiseClass,
    pub slope: f64,
    pub final_gain: f64,
    pub roughness: f64,
}

fn ls_slope(ys: &[f64]) -> f64 {
    let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
    let (mx, my) = (math::mean(&xs), math::mean(ys));
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

pub fn classify_noise(curve: &CorrelationCurve) -> Result<NoiseVerdict, CorrelationError> {
    classify_noise_with(curve, &ClassifyRule::default())
}

pub fn classify_noise_with(curve: &CorrelationCurve, rule: &ClassifyRule) -> Result<NoiseVerdict, CorrelationError> {
    curve.check()?;
    let c = curve.combined();
    let trained = &c[1..];
    let slope = ls_slope(trained);
    let tail = &trained[trained.len().saturating_sub(rule.tail.max(1))..];
    let final_gain = tail.iter().map(|v| v - c[0]).sum::<f64>() / tail.len() as f64;
    let diffs: Vec<f64> = trained.windows(2).map(|w| w[1] - w[0]).collect();
    let roughness = if diffs.len() < 2 { 0.0 } else { math::sqrt(math::sample_variance(&diffs)) };
    let class = if slope > rule.min_slope && final_gain > rule.min_gain {
        NoiseClass::Positive
    } else {
        NoiseClass::Negative
    };
    Ok(NoiseVerdict {
        noise: curve.noise,
        class,
        slope,
        final_gain,
        roughness,
    })
}

/// The chosen noise and checkpoint. `epoch` counts from 1, so the checkpoint
/// is `series.checkpoints[epoch - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub noise: NoiseSpec,
    pub epoch: usize,
    pub pcc: f64,
    pub srocc: f64,
    pub verdict: NoiseVerdict,
}

pub fn select_si_fid(curves: &[CorrelationCurve]) -> Result<Selection, CorrelationError> {
    select_si_fid_with(curves, &ClassifyRule::default())
}

pub fn select_si_fid_with(curves: &[CorrelationCurve], rule: &ClassifyRule) -> Result<Selection, CorrelationError> {
    let mut positive = Vec::new();
    for c in curves {
        let v = classify_noise_with(c, rule)?;
        if v.class == NoiseClass::Positive {
            positive.push((c, v));
        }
    }
    let (curve, verdict) = positive
        .into_iter()
        .min_by(|(ca, a), (cb, b)| {
            b.final_gain
                .total_cmp(&a.final_gain)
                .then(a.roughness.total_cmp(&b.roughness))
                .then_with(|| ca.noise.tag().cmp(&cb.noise.tag()))
        })
        .ok_or(CorrelationError::NoPositiveNoise)?;
    let combined = curve.combined();
    let mut best = 1;
    for e in 2..combined.len() {
        if combined[e] > combined[best] {
            best = e;
        }
    }
    Ok(Selection {
        noise: curve.noise,
        epoch: best,
        pcc: curve.pcc[best],
        srocc: curve.srocc[best],
        verdict,
    })
}

/// One indicator's raw scores, one map (image id → score) per group.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorScores {
    pub name: String,
    pub orientation: Orientation,
    pub groups: Vec<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSummary {
    pub name: String,
    pub mean_pcc: f64,
    /// Sample variance across groups; absent with a single group.
    pub var_pcc: Option<f64>,
    pub mean_srocc: f64,
    pub var_srocc: Option<f64>,
    /// 1 is best, by mean SROCC.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub groups: usize,
    /// Sorted by rank.
    pub indicators: Vec<IndicatorSummary>,
}

/// Per indicator: orient, correlate within each group against the
/// subjective scores, then summarise across groups.
pub fn compare_indicators(
    indicators: &[IndicatorScores],
    subjective: &[Vec<SubjectiveScore>],
) -> Result<ComparisonReport, CorrelationError> {
    if subjective.is_empty() || subjective.iter().any(|g| g.is_empty()) {
        return Err(CorrelationError::EmptyTestSet);
    }
    let mut rows = Vec::with_capacity(indicators.len());
    for ind in indicators {
        let (mut ps, mut ss) = (Vec::new(), Vec::new());
        for (gi, subj) in subjective.iter().enumerate() {
            let missing = |image: &str| CorrelationError::IncompleteScores {
                indicator: ind.name.clone(),
                group: gi,
                image: image.into(),
            };
            let table = ind.groups.get(gi).ok_or_else(|| missing("*"))?;
            let mut x = Vec::with_capacity(subj.len());
            for s in subj {
                let v = table.get(&s.image_id).ok_or_else(|| missing(&s.image_id))?;
                x.push(ind.orientation.orient(*v));
            }
            let y: Vec<f64> = subj.iter().map(|s| s.value).collect();
            ps.push(pcc(&x, &y)?);
            ss.push(srocc(&x, &y)?);
        }
        let var = |v: &[f64]| (v.len() >= 2).then(|| math::sample_variance(v));
        rows.push(IndicatorSummary {
            name: ind.name.clone(),
            mean_pcc: math::mean(&ps),
            var_pcc: var(&ps),
            mean_srocc: math::mean(&ss),
            var_srocc: var(&ss),
            rank: 0,
        });
    }
    rows.sort_by(|a, b| match b.mean_srocc.total_cmp(&a.mean_srocc) {
        Ordering::Equal => a.name.cmp(&b.name),
        o => o,
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(ComparisonReport {
        groups: subjective.len(),
        indicators: rows,
    })
}

//! Pipeline stages over bundles and checkpoint series, with bounded
//! parallelism.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use sifid_core::baselines::{self, MetricError, MetricKind, NiqeModel};
use sifid_core::correlation::{
    self, curve_point, subjective_matrix, CorrelationCurve, CorrelationError, CorrelationMode, EvalGroup, IndicatorScores,
};
use sifid_core::fid::FidError;
use sifid_core::subjective::SubjectiveScore;
use sifid_core::synthgen::{Bundle, SynthError};
use sifid_core::trainer::CheckpointSeries;
use sifid_core::{Encoder, Image};

use crate::distort::with_jobs;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Fid(#[from] FidError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("metric {0} needs {1}")]
    MissingInput(&'static str, &'static str),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// One scored stitched image.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemScore {
    pub image_id: String,
    pub group: String,
    pub value: f64,
}

/// Encoders a metric may need.
#[derive(Default)]
pub struct Scorers<'a> {
    /// Untrained encoder for plain FID.
    pub fid: Option<&'a Encoder>,
    /// Selected checkpoint for the fine-tuned variant.
    pub si_fid: Option<&'a Encoder>,
    pub niqe: Option<&'a NiqeModel>,
}

/// Scores every stitched image of `bundle` with `metric`, in pair order.
/// Fréchet metrics compare tile sets of the source and the stitched image.
pub fn score_bundle(
    bundle: &Bundle,
    metric: MetricKind,
    scorers: &Scorers,
    tile: usize,
    stride: usize,
    jobs: usize,
) -> Result<Vec<ItemScore>, PipelineError> {
    let values: Vec<f64> = match metric {
        MetricKind::Fid | MetricKind::SiFid => {
            let enc = match metric {
                MetricKind::Fid => scorers.fid.ok_or(PipelineError::MissingInput("fid", "an encoder"))?,
                _ => scorers.si_fid.ok_or(PipelineError::MissingInput("sifid", "a checkpoint"))?,
            };
            let groups = bundle.eval_groups(tile, stride)?;
            let per_group = with_jobs(jobs, || {
                groups
                    .par_iter()
                    .map(|g| correlation::score_groups(enc, std::slice::from_ref(g)).map(|mut v| v.remove(0)))
                    .collect::<Result<Vec<_>, _>>()
            })
            .map_err(PipelineError::Pool)??;
            per_group.concat()
        }
        _ => {
            let niqe = scorers.niqe;
            with_jobs(jobs, || {
                bundle
                    .pairs
                    .par_iter()
                    .map(|p| image_metric(metric, &p.reference, &p.stitched, niqe))
                    .collect::<Result<Vec<_>, _>>()
            })
            .map_err(PipelineError::Pool)??
        }
    };
    Ok(bundle
        .pairs
        .iter()
        .zip(values)
        .map(|(p, value)| ItemScore {
            image_id: p.image_id.clone(),
            group: p.source_id.clone(),
            value,
        })
        .collect())
}

/// A non-Fréchet metric on one (reference, stitched) pair.
pub fn image_metric(metric: MetricKind, reference: &Image, stitched: &Image, niqe: Option<&NiqeModel>) -> Result<f64, PipelineError> {
    Ok(match metric {
        MetricKind::Mse => baselines::mse(reference, stitched)?,
        MetricKind::Psnr => baselines::psnr(reference, stitched)?,
        MetricKind::Ssim => baselines::ssim(reference, stitched)?,
        MetricKind::Ag => baselines::average_gradient(stitched)?,
        MetricKind::Sf => baselines::spatial_frequency(stitched)?,
        MetricKind::Niqe => baselines::niqe_score(stitched, niqe.ok_or(PipelineError::MissingInput("niqe", "a model"))?)?,
        MetricKind::Fid | MetricKind::SiFid => return Err(PipelineError::MissingInput("fid", "image sets, not a single pair")),
    })
}

/// [`correlation::build_curve`] with checkpoints scored on `jobs` threads.
pub fn build_curve_parallel(
    series: &CheckpointSeries,
    groups: &[EvalGroup],
    subjective: &[SubjectiveScore],
    mode: CorrelationMode,
    jobs: usize,
) -> Result<CorrelationCurve, PipelineError> {
    let subj = subjective_matrix(groups, subjective)?;
    let encoders: Vec<&Encoder> = std::iter::once(&series.initial).chain(&series.checkpoints).collect();
    let points = with_jobs(jobs, || {
        encoders
            .par_iter()
            .map(|enc| curve_point(enc, groups, &subj, mode))
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(PipelineError::Pool)??;
    Ok(CorrelationCurve::from_points(series.noise, mode, &points))
}

/// Splits subjective scores by bundle source, in pair order.
pub fn subjective_groups(bundle: &Bundle, scores: &[SubjectiveScore]) -> Result<Vec<Vec<SubjectiveScore>>, PipelineError> {
    let by_id: HashMap<&str, &SubjectiveScore> = scores.iter().map(|s| (s.image_id.as_str(), s)).collect();
    bundle
        .sources
        .iter()
        .map(|(sid, _)| {
            bundle
                .pairs
                .iter()
                .filter(|p| &p.source_id == sid)
                .map(|p| {
                    by_id
                        .get(p.image_id.as_str())
                        .map(|s| (*s).clone())
                        .ok_or_else(|| CorrelationError::MissingSubjective(p.image_id.clone()).into())
                })
                .collect()
        })
        .collect()
}

/// Image id to group index, following bundle source order.
pub fn group_index(bundle: &Bundle) -> HashMap<String, usize> {
    let pos: HashMap<&str, usize> = bundle.sources.iter().enumerate().map(|(i, (s, _))| (s.as_str(), i)).collect();
    bundle.pairs.iter().map(|p| (p.image_id.clone(), pos[p.source_id.as_str()])).collect()
}

/// Turns item scores into one comparison indicator.
pub fn indicator(name: &str, metric: MetricKind, scores: &[ItemScore], bundle: &Bundle) -> IndicatorScores {
    let idx = group_index(bundle);
    let mut groups = vec![BTreeMap::new(); bundle.sources.len()];
    for s in scores {
        groups[idx[&s.image_id]].insert(s.image_id.clone(), s.value);
    }
    IndicatorScores {
        name: name.to_string(),
        orientation: metric.orientation(),
        groups,
    }
}

//! Critic score tables: z-score normalisation and per-image aggregation.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;

pub const SCORE_MIN: f64 = 0.0;
pub const SCORE_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubjectiveError {
    #[error("score {score} for ({critic}, {image}) outside [0, 100]")]
    ScoreOutOfRange { critic: String, image: String, score: f64 },
    #[error("duplicate rating for ({critic}, {image})")]
    DuplicateRating { critic: String, image: String },
    #[error("normalisation group '{0}' has zero variance")]
    ZeroVariance(String),
    #[error("normalisation group '{0}' has fewer than 2 ratings")]
    TooFewRatings(String),
    #[error("image '{0}' has no ratings")]
    NoRatingsForImage(String),
    #[error("need at least 2 critics and 2 images")]
    TableTooSmall,
}

/// Critic × image matrix of raw 0–100 scores; `None` marks a missing rating.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    critics: Vec<String>,
    images: Vec<String>,
    raw: Vec<Option<f64>>,
}

impl ScoreTable {
    /// Builds a dense table from `(critic, image, score)` triples. Critics and
    /// images keep first-appearance order.
    pub fn from_ratings<'a>(ratings: impl IntoIterator<Item = (&'a str, &'a str, f64)>) -> Result<Self, SubjectiveError> {
        let mut critics: Vec<String> = Vec::new();
        let mut images: Vec<String> = Vec::new();
        let mut triples = Vec::new();
        for (c, i, s) in ratings {
            if !(SCORE_MIN..=SCORE_MAX).contains(&s) {
                return Err(SubjectiveError::ScoreOutOfRange {
                    critic: c.into(),
                    image: i.into(),
                    score: s,
                });
            }
            let ci = index_of(&mut critics, c);
            let ii = index_of(&mut images, i);
            triples.push((ci, ii, s));
        }
        let mut raw = alloc::vec![None; critics.len() * images.len()];
        for (ci, ii, s) in triples {
            let slot = &mut raw[ci * images.len() + ii];
            if slot.is_some() {
                return Err(SubjectiveError::DuplicateRating {
                    critic: critics[ci].clone(),
                    image: images[ii].clone(),
                });
            }
            *slot = Some(s);
        }
        Ok(Self { critics, images, raw })
    }

    pub fn critics(&self) -> &[String] {
        &self.critics
    }

    pub fn images(&self) -> &[String] {
        &self.images
    }

    pub fn get(&self, critic: usize, image: usize) -> Option<f64> {
        self.raw[critic * self.images.len() + image]
    }

    pub fn present_count(&self) -> usize {
        self.raw.iter().filter(|v| v.is_some()).count()
    }

    pub fn missing_count(&self) -> usize {
        self.raw.len() - self.present_count()
    }
}

fn index_of(list: &mut Vec<String>, key: &str) -> usize {
    match list.iter().position(|k| k == key) {
        Some(i) => i,
        None => {
            list.push(key.into());
            list.len() - 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Each critic z-scored across the images they rated.
    #[default]
    PerCritic,
    /// Each image z-scored across its critics, as printed. Aggregating this
    /// always yields zero.
    PerImageLiteral,
}

/// Same layout as [`ScoreTable`], holding z-scores.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTable {
    pub critics: Vec<String>,
    pub images: Vec<String>,
    pub values: Vec<Option<f64>>,
    pub mode: NormalizationMode,
}

impl NormalizedTable {
    pub fn get(&self, critic: usize, image: usize) -> Option<f64> {
        self.values[critic * self.images.len() + image]
    }

    /// Present values of one critic, in image order.
    pub fn critic_row(&self, critic: usize) -> Vec<f64> {
        (0..self.images.len()).filter_map(|i| self.get(critic, i)).collect()
    }
}

/// Mean and sample standard deviation (`n − 1`).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    (math::mean(xs), math::sqrt(math::sample_variance(xs)))
}

/// z-scores with the sample standard deviation.
pub fn normalize(table: &ScoreTable, mode: NormalizationMode) -> Result<NormalizedTable, SubjectiveError> {
    if table.critics.len() < 2 || table.images.len() < 2 {
        return Err(SubjectiveError::TableTooSmall);
    }
    let (nc, ni) = (table.critics.len(), table.images.len());
    let mut values = alloc::vec![None; nc * ni];
    let groups: Vec<(String, Vec<usize>)> = match mode {
        NormalizationMode::PerCritic => (0..nc)
            .map(|c| (table.critics[c].clone(), (0..ni).map(|i| c * ni + i).collect()))
            .collect(),
        NormalizationMode::PerImageLiteral => (0..ni)
            .map(|i| (table.images[i].clone(), (0..nc).map(|c| c * ni + i).collect()))
            .collect(),
    };
    for (name, cells) in groups {
        let present: Vec<(usize, f64)> = cells.iter().filter_map(|&k| table.raw[k].map(|v| (k, v))).collect();
        if present.len() < 2 {
            return Err(SubjectiveError::TooFewRatings(name));
        }
        let xs: Vec<f64> = present.iter().map(|&(_, v)| v).collect();
        let (mu, sd) = mean_std(&xs);
        if sd == 0.0 {
            return Err(SubjectiveError::ZeroVariance(name));
        }
        for (k, v) in present {
            values[k] = Some((v - mu) / sd);
        }
    }
    Ok(NormalizedTable {
        critics: table.critics.clone(),
        images: table.images.clone(),
        values,
        mode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectiveScore {
    pub image_id: String,
    pub value: f64,
    pub n_raters: usize,
}

/// Per image, the mean normalised score over the critics who rated it.
pub fn aggregate(table: &NormalizedTable) -> Result<Vec<SubjectiveScore>, SubjectiveError> {
    let ni = table.images.len();
    (0..ni)
        .map(|i| {
            let xs: Vec<f64> = (0..table.critics.len()).filter_map(|c| table.get(c, i)).collect();
            if xs.is_empty() {
                return Err(SubjectiveError::NoRatingsForImage(table.images[i].clone()));
            }
            Ok(SubjectiveScore {
                image_id: table.images[i].clone(),
                value: xs.iter().sum::<f64>() / xs.len() as f64,
                n_raters: xs.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn table(rows: &[(&str, &str, f64)]) -> ScoreTable {
        ScoreTable::from_ratings(rows.iter().copied()).unwrap()
    }

    #[test]
    fn ingest_rules() {
        assert!(matches!(
            ScoreTable::from_ratings([("a", "x", 101.0)]),
            Err(SubjectiveError::ScoreOutOfRange { .. })
        ));
        assert!(matches!(
            ScoreTable::from_ratings([("a", "x", 1.0), ("a", "x", 2.0)]),
            Err(SubjectiveError::DuplicateRating { .. })
        ));
        let t = table(&[("a", "x", 0.0), ("b", "y", 100.0)]);
        assert_eq!(t.present_count(), 2);
        assert_eq!(t.missing_count(), 2);
    }

    #[test]
    fn full_panel_uses_fourteen_raters() {
        let critics: Vec<String> = (0..14).map(|c| format!("c{c}")).collect();
        let images: Vec<String> = (0..160).map(|i| format!("img{i}")).collect();
        let mut rows = Vec::new();
        for (ci, c) in critics.iter().enumerate() {
            for (ii, i) in images.iter().enumerate() {
                rows.push((c.as_str(), i.as_str(), ((ci * 31 + ii * 17) % 101) as f64));
            }
        }
        let t = ScoreTable::from_ratings(rows).unwrap();
        assert_eq!(t.present_count(), 2240);
        let s = aggregate(&normalize(&t, NormalizationMode::PerCritic).unwrap()).unwrap();
        assert!(s.iter().all(|x| x.n_raters == 14));
    }

    #[test]
    fn per_critic_rows_are_standardised() {
        let t = table(&[
            ("a", "x", 10.0),
            ("a", "y", 50.0),
            ("a", "z", 70.0),
            ("b", "x", 60.0),
            ("b", "y", 65.0),
            ("b", "z", 90.0),
        ]);
        let n = normalize(&t, NormalizationMode::PerCritic).unwrap();
        for c in 0..2 {
            let row = n.critic_row(c);
            let m = row.iter().sum::<f64>() / row.len() as f64;
            let sd = (row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (row.len() - 1) as f64).sqrt();
            assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn literal_mode_aggregates_to_zero() {
        let t = table(&[
            ("a", "x", 10.0),
            ("a", "y", 50.0),
            ("b", "x", 60.0),
            ("b", "y", 65.0),
            ("c", "x", 33.0),
            ("c", "y", 12.5),
        ]);
        let s = aggregate(&normalize(&t, NormalizationMode::PerImageLiteral).unwrap()).unwrap();
        assert!(s.iter().all(|x| x.value.abs() < 1e-12));
    }

    #[test]
    fn error_paths() {
        let flat = table(&[("a", "x", 10.0), ("a", "y", 10.0), ("b", "x", 1.0), ("b", "y", 2.0)]);
        assert_eq!(
            normalize(&flat, NormalizationMode::PerCritic),
            Err(SubjectiveError::ZeroVariance("a".into()))
        );
        let sparse = table(&[("a", "x", 10.0), ("a", "y", 20.0), ("b", "x", 1.0), ("b", "z", 2.0)]);
        assert_eq!(
            normalize(&sparse, NormalizationMode::PerImageLiteral),
            Err(SubjectiveError::TooFewRatings("y".into()))
        );
        let unrated = NormalizedTable {
            critics: vec!["a".into()],
            images: vec!["x".into()],
            values: vec![None],
            mode: NormalizationMode::PerCritic,
        };
        assert_eq!(aggregate(&unrated), Err(SubjectiveError::NoRatingsForImage("x".into())));
        let tiny = table(&[("a", "x", 1.0)]);
        assert_eq!(normalize(&tiny, NormalizationMode::PerCritic), Err(SubjectiveError::TableTooSmall));
    }

    #[test]
    fn rank_identical_critics_keep_their_ranking() {
        let t = table(&[
            ("a", "x", 10.0),
            ("a", "y", 30.0),
            ("a", "z", 20.0),
            ("b", "x", 40.0),
            ("b", "y", 95.0),
            ("b", "z", 50.0),
        ]);
        let s = aggregate(&normalize(&t, NormalizationMode::PerCritic).unwrap()).unwrap();
        assert!(s[0].value < s[2].value && s[2].value < s[1].value);
    }

    fn arb_table() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..6, 3usize..8).prop_flat_map(|(c, i)| {
            proptest::collection::vec(proptest::collection::vec(0.0f64..=100.0, i), c)
        })
    }

    fn build(rows: &[Vec<f64>], order: &[usize]) -> ScoreTable {
        let names: Vec<(String, Vec<String>)> = order
            .iter()
            .map(|&c| (format!("c{c}"), (0..rows[c].len()).map(|i| format!("i{i}")).collect()))
            .collect();
        let mut triples = Vec::new();
        for (k, &c) in order.iter().enumerate() {
            for (i, &v) in rows[c].iter().enumerate() {
                triples.push((names[k].0.as_str(), names[k].1[i].as_str(), v));
            }
        }
        // Re-borrow through owned strings to satisfy lifetimes.
        let owned: Vec<(String, String, f64)> = triples.into_iter().map(|(a, b, v)| (a.into(), b.into(), v)).collect();
        ScoreTable::from_ratings(owned.iter().map(|(a, b, v)| (a.as_str(), b.as_str(), *v))).unwrap()
    }

    proptest! {
        #[test]
        fn per_critic_preserves_within_critic_order(rows in arb_table()) {
            let order: Vec<usize> = (0..rows.len()).collect();
            let t = build(&rows, &order);
            if let Ok(n) = normalize(&t, NormalizationMode::PerCritic) {
                for c in 0..rows.len() {
                    for i in 0..rows[c].len() {
                        for j in 0..rows[c].len() {
                            if rows[c][i] < rows[c][j] {
                                prop_assert!(n.get(c, i).unwrap() < n.get(c, j).unwrap());
                            }
                        }
                    }
                }
            }
        }

        #[test]
        fn aggregation_ignores_critic_order(rows in arb_table()) {
            let fwd: Vec<usize> = (0..rows.len()).collect();
            let rev: Vec<usize> = fwd.iter().rev().copied().collect();
            let a = normalize(&build(&rows, &fwd), NormalizationMode::PerCritic);
            let b = normalize(&build(&rows, &rev), NormalizationMode::PerCritic);
            if let (Ok(a), Ok(b)) = (a, b) {
                let sa = aggregate(&a).unwrap();
                let sb = aggregate(&b).unwrap();
                for (x, y) in sa.iter().zip(&sb) {
                    prop_assert_eq!(&x.image_id, &y.image_id);
                    prop_assert!((x.value - y.value).abs() < 1e-12);
                }
            }
        }
    }
}

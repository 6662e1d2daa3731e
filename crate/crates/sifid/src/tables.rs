//! CSV and JSON tables exchanged between pipeline stages.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sifid_core::baselines::Orientation;
use sifid_core::correlation::{CorrelationCurve, CorrelationMode, IndicatorScores};
use sifid_core::subjective::{ScoreTable, SubjectiveError, SubjectiveScore};
use sifid_core::NoiseSpec;

use crate::io::{self, IoError};

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{path}:{line}: {message}")]
    ParseError { path: PathBuf, line: u64, message: String },
    #[error(transparent)]
    Subjective(#[from] SubjectiveError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("external score for unknown image '{0}'")]
    UnknownImage(String),
    #[error("metric '{0}' listed with conflicting orientations")]
    ConflictingOrientation(String),
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> TableError {
    TableError::ParseError {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path, bytes: Vec<u8>, header: &[&str]) -> Result<csv::Reader<std::io::Cursor<Vec<u8>>>, TableError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(std::io::Cursor::new(bytes));
    let found: Vec<String> = r
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(parse_err(path, 1, format!("expected header {}", header.join(","))));
    }
    Ok(r)
}

fn parse_f64(path: &Path, line: u64, field: &str) -> Result<f64, TableError> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(path, line, format!("'{field}' is not a finite number"))),
    }
}

/// One raw rating row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub critic_id: String,
    pub image_id: String,
    pub score: f64,
}

pub const RATINGS_HEADER: [&str; 3] = ["critic_id", "image_id", "score"];

pub fn parse_ratings(bytes: Vec<u8>, path: &Path) -> Result<Vec<Rating>, TableError> {
    let mut r = reader(path, bytes, &RATINGS_HEADER)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 || rec[0].is_empty() || rec[1].is_empty() {
            return Err(parse_err(path, line, "need critic_id, image_id, score"));
        }
        out.push(Rating {
            critic_id: rec[0].to_string(),
            image_id: rec[1].to_string(),
            score: parse_f64(path, line, &rec[2])?,
        });
    }
    Ok(out)
}

/// Reads a ratings CSV (`critic_id,image_id,score`) into a dense table.
pub fn ingest_csv(path: &Path) -> Result<ScoreTable, TableError> {
    ingest_bytes(io::read_file(path)?, path)
}

pub fn ingest_bytes(bytes: Vec<u8>, origin: &Path) -> Result<ScoreTable, TableError> {
    let rows = parse_ratings(bytes, origin)?;
    Ok(ScoreTable::from_ratings(rows.iter().map(|r| (r.critic_id.as_str(), r.image_id.as_str(), r.score)))?)
}

pub fn ratings_csv(rows: &[Rating]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RATINGS_HEADER).expect("in-memory csv");
    for r in rows {
        w.write_record([r.critic_id.as_str(), r.image_id.as_str(), &r.score.to_string()])
            .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

pub const AGGREGATE_HEADER: [&str; 3] = ["image_id", "subjective_score", "n_raters"];

pub fn write_aggregate_csv(scores: &[SubjectiveScore], path: &Path) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(io::create_file(path)?);
    w.write_record(AGGREGATE_HEADER)?;
    for s in scores {
        w.write_record([s.image_id.clone(), s.value.to_string(), s.n_raters.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<SubjectiveScore>, TableError> {
    let mut r = reader(path, io::read_file(path)?, &AGGREGATE_HEADER)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(SubjectiveScore {
            image_id: rec[0].to_string(),
            value: parse_f64(path, line, &rec[1])?,
            n_raters: rec[2].parse().map_err(|_| parse_err(path, line, "bad n_raters"))?,
        });
    }
    Ok(out)
}

pub const CURVE_HEADER: [&str; 4] = ["noise_tag", "epoch", "pcc", "srocc"];

pub fn write_curve_csv(curves: &[CorrelationCurve], path: &Path) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(io::create_file(path)?);
    w.write_record(CURVE_HEADER)?;
    for c in curves {
        let tag = c.noise.tag();
        for (e, (p, s)) in c.pcc.iter().zip(&c.srocc).enumerate() {
            w.write_record([tag.clone(), e.to_string(), p.to_string(), s.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads curves back, one per noise tag in first-appearance order. Epochs
/// must run 0, 1, 2, ... within each tag.
pub fn read_curve_csv(path: &Path, mode: CorrelationMode) -> Result<Vec<CorrelationCurve>, TableError> {
    let mut r = reader(path, io::read_file(path)?, &CURVE_HEADER)?;
    let mut curves: Vec<CorrelationCurve> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let noise = NoiseSpec::from_tag(&rec[0]).ok_or_else(|| parse_err(path, line, format!("unknown noise tag '{}'", &rec[0])))?;
        let epoch: usize = rec[1].parse().map_err(|_| parse_err(path, line, "bad epoch"))?;
        let (p, s) = (parse_f64(path, line, &rec[2])?, parse_f64(path, line, &rec[3])?);
        let idx = match curves.iter().position(|c| c.noise == noise) {
            Some(i) => i,
            None => {
                curves.push(CorrelationCurve::from_points(noise, mode, &[]));
                curves.len() - 1
            }
        };
        let c = &mut curves[idx];
        if epoch != c.pcc.len() {
            return Err(parse_err(path, line, format!("expected epoch {}", c.pcc.len())));
        }
        c.pcc.push(p);
        c.srocc.push(s);
    }
    Ok(curves)
}

/// One objective score. Infinite scores (PSNR of identical images) are
/// written as `null` with `infinite: true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub reference_set: String,
    pub stitched_set: String,
    pub checkpoint: Option<String>,
    pub metric: String,
    pub score: Option<f64>,
    pub infinite: bool,
}

impl ScoreRecord {
    pub fn new(reference_set: String, stitched_set: String, checkpoint: Option<String>, metric: &str, value: f64) -> Self {
        Self {
            reference_set,
            stitched_set,
            checkpoint,
            metric: metric.to_string(),
            score: value.is_finite().then_some(value),
            infinite: value.is_infinite(),
        }
    }

    pub fn value(&self) -> f64 {
        match (self.score, self.infinite) {
            (Some(v), _) => v,
            (None, true) => f64::INFINITY,
            (None, false) => f64::NAN,
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("output serialises");
    bytes.push(b'\n');
    io::write_bytes(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    serde_json::from_slice(&io::read_file(path)?).map_err(|e| IoError::CorruptData {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub const EXTERNAL_HEADER: [&str; 4] = ["image_id", "metric_name", "value", "orientation"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalScore {
    pub image_id: String,
    pub metric: String,
    pub value: f64,
    pub orientation: Orientation,
}

fn parse_orientation(s: &str) -> Option<Orientation> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "lower_better" | "lower" => Some(Orientation::LowerBetter),
        "higher_better" | "higher" => Some(Orientation::HigherBetter),
        _ => None,
    }
}

/// Reads `image_id,metric_name,value,orientation`; orientation is
/// `lower_better` or `higher_better`.
pub fn read_external_scores(path: &Path) -> Result<Vec<ExternalScore>, TableError> {
    let mut r = reader(path, io::read_file(path)?, &EXTERNAL_HEADER)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(ExternalScore {
            image_id: rec[0].to_string(),
            metric: rec[1].to_string(),
            value: parse_f64(path, line, &rec[2])?,
            orientation: parse_orientation(&rec[3]).ok_or_else(|| parse_err(path, line, format!("bad orientation '{}'", &rec[3])))?,
        });
    }
    Ok(out)
}

/// Adds external metrics to `indicators`, placing each image in its group.
pub fn merge_external(
    indicators: &mut Vec<IndicatorScores>,
    external: &[ExternalScore],
    group_of: &HashMap<String, usize>,
    n_groups: usize,
) -> Result<(), TableError> {
    let mut added: BTreeMap<String, IndicatorScores> = BTreeMap::new();
    for s in external {
        let g = *group_of.get(&s.image_id).ok_or_else(|| TableError::UnknownImage(s.image_id.clone()))?;
        let entry = added.entry(s.metric.clone()).or_insert_with(|| IndicatorScores {
            name: s.metric.clone(),
            orientation: s.orientation,
            groups: vec![BTreeMap::new(); n_groups],
        });
        if entry.orientation != s.orientation {
            return Err(TableError::ConflictingOrientation(s.metric.clone()));
        }
        entry.groups[g].insert(s.image_id.clone(), s.value);
    }
    indicators.extend(added.into_values());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("r.csv")
    }

    #[test]
    fn ingest_rules() {
        let ok = b"critic_id,image_id,score\na,x,0\na,y,100\nb,x,55.5\n".to_vec();
        let t = ingest_bytes(ok, p()).unwrap();
        assert_eq!(t.present_count(), 3);
        assert_eq!(t.missing_count(), 1);

        let high = b"critic_id,image_id,score\na,x,101\n".to_vec();
        assert!(matches!(
            ingest_bytes(high, p()),
            Err(TableError::Subjective(SubjectiveError::ScoreOutOfRange { .. }))
        ));
        let dup = b"critic_id,image_id,score\na,x,1\na,x,2\n".to_vec();
        assert!(matches!(
            ingest_bytes(dup, p()),
            Err(TableError::Subjective(SubjectiveError::DuplicateRating { .. }))
        ));
        let junk = b"critic_id,image_id,score\na,x,abc\n".to_vec();
        assert!(matches!(ingest_bytes(junk, p()), Err(TableError::ParseError { line: 2, .. })));
        let header = b"who,what,score\n".to_vec();
        assert!(matches!(ingest_bytes(header, p()), Err(TableError::ParseError { line: 1, .. })));
    }

    #[test]
    fn ratings_round_trip() {
        let rows = vec![
            Rating { critic_id: "c".into(), image_id: "i1".into(), score: 0.0 },
            Rating { critic_id: "c".into(), image_id: "i2".into(), score: 100.0 },
            Rating { critic_id: "c".into(), image_id: "i3".into(), score: 33.25 },
        ];
        assert_eq!(parse_ratings(ratings_csv(&rows), p()).unwrap(), rows);
    }

    #[test]
    fn curve_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let cat = sifid_core::augment::CATALOG;
        let curves = vec![
            CorrelationCurve::from_points(cat[0], CorrelationMode::PerGroup, &[(0.1, 0.2), (0.3, 0.4)]),
            CorrelationCurve::from_points(cat[7], CorrelationMode::PerGroup, &[(0.5, 0.6), (0.7, -0.8), (0.9, 1.0)]),
        ];
        write_curve_csv(&curves, &path).unwrap();
        assert_eq!(read_curve_csv(&path, CorrelationMode::PerGroup).unwrap(), curves);
        std::fs::write(&path, "noise_tag,epoch,pcc,srocc\nhflip_p0.5,1,0,0\n").unwrap();
        assert!(matches!(read_curve_csv(&path, CorrelationMode::PerGroup), Err(TableError::ParseError { .. })));
    }

    #[test]
    fn infinite_scores_serialise_as_null() {
        let r = ScoreRecord::new("ref".into(), "st".into(), None, "psnr", f64::INFINITY);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"score\":null") && json.contains("\"infinite\":true"));
        let back: ScoreRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.value(), f64::INFINITY);
    }

    #[test]
    fn external_merge() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "image_id,metric_name,value,orientation\nx,brisque,3,lower_better\ny,brisque,4,lower_better\n").unwrap();
        let ext = read_external_scores(&path).unwrap();
        let groups: HashMap<String, usize> = [("x".to_string(), 0), ("y".to_string(), 1)].into();
        let mut ind = Vec::new();
        merge_external(&mut ind, &ext, &groups, 2).unwrap();
        assert_eq!(ind.len(), 1);
        assert_eq!(ind[0].groups[1]["y"], 4.0);
        let bad = vec![ExternalScore {
            image_id: "z".into(),
            metric: "m".into(),
            value: 1.0,
            orientation: Orientation::HigherBetter,
        }];
        assert!(matches!(merge_external(&mut ind, &bad, &groups, 2), Err(TableError::UnknownImage(_))));
    }
}

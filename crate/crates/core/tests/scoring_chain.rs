//! Cross-module checks through the public API: synthetic bundle to
//! encoder scores to correlation with the ladder's subjective scores.

use sifid_core::correlation::{correlate, orient_fid, score_groups, subjective_matrix, CorrelationMode};
use sifid_core::encoder::init_encoder;
use sifid_core::fid::score_stitched;
use sifid_core::synthgen::{build_severity_ladder, random_scene};
use sifid_core::{EncoderConfig, Rng};

#[test]
fn untrained_scores_follow_the_severity_ladder() {
    let sources: Vec<_> = (0..4).map(|i| random_scene(128, 128, &mut Rng::new(40 + i))).collect();
    let bundle = build_severity_ladder(&sources, 9).unwrap();
    let groups = bundle.eval_groups(64, 32).unwrap();
    let enc = init_encoder(&EncoderConfig::default()).unwrap();

    let scores = score_groups(&enc, &groups).unwrap();
    assert_eq!(scores.len(), 4);
    assert!(scores.iter().flatten().all(|v| v.is_finite() && *v >= 0.0));

    let subj = subjective_matrix(&groups, &bundle.subjective).unwrap();
    let (_, srocc) = correlate(&orient_fid(&scores), &subj, CorrelationMode::PerGroup).unwrap();
    assert!(srocc > 0.5, "srocc {srocc}");
}

#[test]
fn a_set_scored_against_itself_is_zero() {
    let tiles = random_scene(128, 128, &mut Rng::new(3)).tiles(64, 32).unwrap();
    let enc = init_encoder(&EncoderConfig::default()).unwrap();
    let d = score_stitched(&tiles, &tiles, &enc).unwrap();
    assert!(d.abs() < 1e-9, "{d}");
}

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};
use std::path::PathBuf;

use literati_core::annotation_store::{Annotation, BoundingBox, CoordSpace};
use literati_core::eval_harness::{
    accuracy_table, eval_units, evaluate_units, EvalTable, MatchMode, MatchResult, ThresholdMatch, IOU_THRESHOLDS,
};
use literati_core::map_decoder::synthetic::{planted_scene, SceneConfig};
use literati_core::map_decoder::{softmax_map, DecodeParams, LogitMap, MapShape, PeakRegion, ProbMap};
use literati_core::report_parser::{
    classify_attributes, disease_mentions, referring_expression, segment_sentences, Category, Disease, Lexicon,
    Polarity,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[derive(Debug, Deserialize)]
pub struct PhraseCase {
    pub text: String,
    pub spans: Vec<(Category, String)>,
    pub phrase: String,
    pub polarity: Polarity,
}

pub fn phrase_cases() -> Vec<PhraseCase> {
    serde_json::from_str(&read_fixture("phrase_examples.json")).unwrap()
}

/// Compares a phrase against its hand label; `Err` describes the first difference.
pub fn check_phrase(case: &PhraseCase, lex: &Lexicon) -> Result<(), String> {
    let sentences = segment_sentences(&case.text);
    if sentences.len() != 1 {
        return Err(format!("{:?}: {} sentences", case.text, sentences.len()));
    }
    let s = &sentences[0];
    let spans: Vec<(Category, String)> = classify_attributes(s, lex)
        .into_iter()
        .map(|a| (a.category, a.surface))
        .collect();
    if spans != case.spans {
        return Err(format!("{:?}: spans {spans:?}", case.text));
    }
    let expr = referring_expression(s, lex).ok_or_else(|| format!("{:?}: no expression", case.text))?;
    if expr.phrase != case.phrase {
        return Err(format!("{:?}: phrase {:?}", case.text, expr.phrase));
    }
    if expr.polarity != case.polarity {
        return Err(format!("{:?}: polarity {:?}", case.text, expr.polarity));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
pub struct MentionLabel {
    pub disease: Disease,
    pub negated: bool,
}

#[derive(Debug, Deserialize)]
pub struct NegationCase {
    pub text: String,
    pub mentions: Vec<MentionLabel>,
}

pub fn negation_cases() -> Vec<NegationCase> {
    read_fixture("negation_corpus.jsonl")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn check_negation(case: &NegationCase, lex: &Lexicon) -> Result<(), String> {
    let sentences = segment_sentences(&case.text);
    if sentences.len() != 1 {
        return Err(format!("{:?}: {} sentences", case.text, sentences.len()));
    }
    let got: Vec<(Disease, bool)> = disease_mentions(&sentences[0].lowercase_tokens(), lex)
        .into_iter()
        .map(|m| (m.disease, m.negated))
        .collect();
    let want: Vec<(Disease, bool)> = case.mentions.iter().map(|m| (m.disease, m.negated)).collect();
    if got != want {
        return Err(format!("{:?}: got {got:?}, labelled {want:?}", case.text));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
pub struct TableFixtureRow {
    pub method: String,
    pub hits: [usize; 5],
}

#[derive(Debug, Deserialize)]
pub struct TableFixture {
    pub n_images: usize,
    pub rows: Vec<TableFixtureRow>,
    pub expected_csv: Vec<String>,
}

pub fn table_fixture(name: &str) -> TableFixture {
    serde_json::from_str(&read_fixture(name)).unwrap()
}

/// Per-image results in which image `i` is a hit at threshold `t` iff
/// `i < hits[t]`.
pub fn results_from_hits(n_images: usize, hits: &[usize; 5]) -> Vec<MatchResult> {
    (0..n_images)
        .map(|i| MatchResult {
            image_id: format!("img{i:04}"),
            mode: MatchMode::Top1,
            n_ground_truth: 1,
            excluded: false,
            thresholds: IOU_THRESHOLDS
                .iter()
                .zip(hits)
                .map(|(&threshold, &h)| ThresholdMatch {
                    threshold,
                    hit: i < h,
                    matched: Vec::new(),
                    recall: if i < h { 1.0 } else { 0.0 },
                })
                .collect(),
        })
        .collect()
}

pub fn fixture_table(fx: &TableFixture) -> EvalTable {
    let mut table: Option<EvalTable> = None;
    for row in &fx.rows {
        let t = accuracy_table(&row.method, &results_from_hits(fx.n_images, &row.hits)).unwrap();
        match table.as_mut() {
            Some(acc) => acc.extend(t).unwrap(),
            None => table = Some(t),
        }
    }
    table.unwrap()
}

/// Random probability map with coarse logits so ties are common.
pub fn random_prob_map(seed: u64, max_side: usize) -> (ProbMap, DecodeParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = rng.random_range(2..=3);
    let h = rng.random_range(1..=max_side);
    let w = rng.random_range(1..=max_side);
    let levels = rng.random_range(2..=8);
    let values: Vec<f64> = (0..channels * h * w)
        .map(|_| rng.random_range(0..levels) as f64 * 0.75)
        .collect();
    let logits = LogitMap::new(MapShape::new(channels, h, w), values, 0).unwrap();
    let params = DecodeParams {
        d: rng.random_range(1..=4),
        tau: rng.random_range(0.0..0.6),
        alpha: rng.random_range(0.05..=1.0),
    };
    (softmax_map(&logits).unwrap(), params)
}

/// Direct peak test over the whole `(2d+1)^2` window and flood-fill regions.
pub fn oracle_regions(map: &ProbMap, class_index: usize, params: &DecodeParams) -> Vec<PeakRegion> {
    let shape = map.shape();
    let (h, w, d) = (shape.height, shape.width, params.d as isize);
    let p = |r: usize, c: usize| map.get(class_index, r, c);
    let mut peaks = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = p(r, c);
            if v < params.tau {
                continue;
            }
            let mut is_peak = true;
            for dr in -d..=d {
                for dc in -d..=d {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize || (dr, dc) == (0, 0) {
                        continue;
                    }
                    let u = p(rr as usize, cc as usize);
                    let earlier = (rr as usize, cc as usize) < (r, c);
                    if u > v || (u == v && earlier) {
                        is_peak = false;
                    }
                }
            }
            if is_peak {
                peaks.push((v, r, c));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut claimed = vec![vec![false; w]; h];
    let mut regions = Vec::new();
    for (v, r, c) in peaks {
        if claimed[r][c] {
            continue;
        }
        let floor = params.alpha * v;
        let mut members = BTreeSet::new();
        let mut frontier = VecDeque::from([(r, c)]);
        members.insert((r, c));
        while let Some((r0, c0)) = frontier.pop_front() {
            for rr in r0.saturating_sub(1)..=(r0 + 1).min(h - 1) {
                for cc in c0.saturating_sub(1)..=(c0 + 1).min(w - 1) {
                    if !claimed[rr][cc] && !members.contains(&(rr, cc)) && p(rr, cc) >= floor {
                        members.insert((rr, cc));
                        frontier.push_back((rr, cc));
                    }
                }
            }
        }
        let members: Vec<(usize, usize)> = members.into_iter().collect();
        for &(rr, cc) in &members {
            claimed[rr][cc] = true;
        }
        let n = members.len() as f64;
        let (sr, sc) = members
            .iter()
            .fold((0.0, 0.0), |(a, b), &(rr, cc)| (a + rr as f64, b + cc as f64));
        regions.push(PeakRegion {
            class_index,
            peak: (r, c),
            peak_prob: v,
            members,
            centroid: (sr / n, sc / n),
        });
    }
    regions
}

/// Decodes planted scenes and scores them against the planted boxes.
pub fn synthetic_accuracy(seeds: std::ops::Range<u64>, cfg: &SceneConfig, threshold: f64, mode: MatchMode) -> f64 {
    let mut records = Vec::new();
    let mut anns = Vec::new();
    for seed in seeds {
        let scene = planted_scene(seed, cfg);
        records.extend(
            scene
                .sample
                .decode_records(&DecodeParams::default(), CoordSpace::Map, None)
                .unwrap(),
        );
        anns.push(Annotation {
            image_id: scene.sample.sidecar.image_id.clone(),
            phrase: "planted".into(),
            category: scene.sample.class_name(scene.class_index).to_owned(),
            boxes: scene.boxes.clone(),
            disease_tags: BTreeSet::new(),
        });
    }
    let units = eval_units(&records, &anns).unwrap();
    let results = evaluate_units(&units, mode).unwrap();
    let table = accuracy_table("synthetic", &results).unwrap();
    let col = IOU_THRESHOLDS.iter().position(|t| *t == threshold).unwrap();
    table.rows[0].accuracy[col]
}

pub fn arb_box(space: CoordSpace) -> impl proptest::strategy::Strategy<Value = BoundingBox> {
    use proptest::prelude::*;
    (-50.0f64..50.0, -50.0f64..50.0, 0.01f64..40.0, 0.01f64..40.0).prop_map(move |(x, y, w, h)| BoundingBox {
        x,
        y,
        w,
        h,
        space,
    })
}

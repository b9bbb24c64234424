//! IOU scoring of detections against ground truth and accuracy tables.
//!
//! Two matching modes exist. `top1` grounds one phrase per image: the image
//! is a hit when its highest-confidence detection overlaps any ground-truth
//! box by at least the threshold, and accuracy is hits over images.
//! `greedy_multi` lets detections claim unmatched ground-truth boxes in
//! confidence order, and accuracy is matched boxes over all boxes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotation_store::{Annotation, BoundingBox};
use crate::error::{Error, Result};
use crate::map_decoder::{Detection, DetectionRecord};

/// IOU thresholds reported in every table.
pub const IOU_THRESHOLDS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// Intersection over union of two boxes in the same coordinate space.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    if a.space != b.space {
        return Err(Error::SpaceMismatch {
            left: a.space,
            right: b.space,
        });
    }
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return Ok(0.0);
    }
    // areas from the same edge arithmetic as the intersection, so identical
    // boxes score exactly 1
    let area = |q: &BoundingBox| (q.right() - q.x) * (q.bottom() - q.y);
    let union = area(a) + area(b) - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Top1,
    GreedyMulti,
}

impl MatchMode {
    pub fn unit(self) -> &'static str {
        match self {
            MatchMode::Top1 => "image",
            MatchMode::GreedyMulti => "box",
        }
    }
}

impl std::str::FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top1" => Ok(MatchMode::Top1),
            "greedy_multi" => Ok(MatchMode::GreedyMulti),
            other => Err(Error::invalid(format!("unknown match mode {other:?}"))),
        }
    }
}

/// A detection box with its score, in the annotation's coordinate space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl From<&Detection> for ScoredBox {
    fn from(d: &Detection) -> Self {
        ScoredBox {
            bbox: d.bbox,
            confidence: d.confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub detection: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMatch {
    pub threshold: f64,
    pub hit: bool,
    pub matched: Vec<MatchedPair>,
    /// Matched ground-truth boxes over all ground-truth boxes.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub image_id: String,
    pub mode: MatchMode,
    pub n_ground_truth: usize,
    /// Set when the image has no ground truth; it then counts in no table.
    pub excluded: bool,
    pub thresholds: Vec<ThresholdMatch>,
}

impl MatchResult {
    pub fn at(&self, threshold: f64) -> Option<&ThresholdMatch> {
        self.thresholds.iter().find(|t| t.threshold == threshold)
    }
}

fn check_sorted(dets: &[ScoredBox]) -> Result<()> {
    if dets.windows(2).any(|w| w[0].confidence < w[1].confidence) {
        return Err(Error::invalid("detections must be sorted by confidence, highest first"));
    }
    Ok(())
}

/// Best-IOU ground truth for `det` among those not yet claimed.
fn best_gt(det: &BoundingBox, gts: &[BoundingBox], taken: &[bool], threshold: f64) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(usize, f64)> = None;
    for (g, gt) in gts.iter().enumerate() {
        if taken[g] {
            continue;
        }
        let v = iou(det, gt)?;
        if v >= threshold && best.is_none_or(|(_, b)| v > b) {
            best = Some((g, v));
        }
    }
    Ok(best)
}

/// Matches one image's detections against its ground truth at `threshold`.
/// `gts` must be non-empty.
pub fn match_image(dets: &[ScoredBox], gts: &[BoundingBox], threshold: f64, mode: MatchMode) -> Result<ThresholdMatch> {
    check_sorted(dets)?;
    if gts.is_empty() {
        return Err(Error::invalid("image has no ground-truth boxes"));
    }
    let mut taken = vec![false; gts.len()];
    let mut matched = Vec::new();
    let candidates = match mode {
        MatchMode::Top1 => &dets[..dets.len().min(1)],
        MatchMode::GreedyMulti => dets,
    };
    for (d, det) in candidates.iter().enumerate() {
        if let Some((g, v)) = best_gt(&det.bbox, gts, &taken, threshold)? {
            taken[g] = true;
            matched.push(MatchedPair {
                detection: d,
                ground_truth: g,
                iou: v,
            });
        }
    }
    Ok(ThresholdMatch {
        threshold,
        hit: !matched.is_empty(),
        recall: matched.len() as f64 / gts.len() as f64,
        matched,
    })
}

/// Matches one image at every table threshold.
pub fn evaluate_image(image_id: &str, dets: &[ScoredBox], gts: &[BoundingBox], mode: MatchMode) -> Result<MatchResult> {
    if gts.is_empty() {
        check_sorted(dets)?;
        return Ok(MatchResult {
            image_id: image_id.to_owned(),
            mode,
            n_ground_truth: 0,
            excluded: true,
            thresholds: Vec::new(),
        });
    }
    let thresholds = IOU_THRESHOLDS
        .iter()
        .map(|&t| match_image(dets, gts, t, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(MatchResult {
        image_id: image_id.to_owned(),
        mode,
        n_ground_truth: gts.len(),
        excluded: false,
        thresholds,
    })
}

/// Detections and ground truth for one grounded phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalUnit {
    pub image_id: String,
    pub category: String,
    pub detections: Vec<ScoredBox>,
    pub ground_truth: Vec<BoundingBox>,
}

/// Pairs every annotation with the detections of its category (compared
/// case-insensitively) on the same image. Units are ordered by image,
/// category and phrase.
pub fn eval_units(detections: &[DetectionRecord], annotations: &[Annotation]) -> Result<Vec<EvalUnit>> {
    let mut by_key: BTreeMap<(&str, String), Vec<ScoredBox>> = BTreeMap::new();
    for rec in detections {
        by_key.entry((rec.image_id.as_str(), rec.class.to_lowercase())).or_default().push(ScoredBox {
            bbox: rec.to_box()?,
            confidence: rec.confidence,
        });
    }
    for dets in by_key.values_mut() {
        dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    }
    let mut anns: Vec<&Annotation> = annotations.iter().collect();
    anns.sort_by(|a, b| (&a.image_id, &a.category, &a.phrase).cmp(&(&b.image_id, &b.category, &b.phrase)));
    Ok(anns
        .into_iter()
        .map(|a| EvalUnit {
            image_id: a.image_id.clone(),
            category: a.category.clone(),
            detections: by_key
                .get(&(a.image_id.as_str(), a.category.to_lowercase()))
                .cloned()
                .unwrap_or_default(),
            ground_truth: a.boxes.clone(),
        })
        .collect())
}

pub fn evaluate_units(units: &[EvalUnit], mode: MatchMode) -> Result<Vec<MatchResult>> {
    units
        .iter()
        .map(|u| evaluate_image(&u.image_id, &u.detections, &u.ground_truth, mode))
        .collect()
}

/// Accuracy at a single, arbitrary threshold, in the unit of `mode`.
/// Units without ground truth are skipped; having none left is an error.
pub fn accuracy_at(units: &[EvalUnit], threshold: f64, mode: MatchMode) -> Result<f64> {
    let (mut num, mut den) = (0usize, 0usize);
    for u in units.iter().filter(|u| !u.ground_truth.is_empty()) {
        let m = match_image(&u.detections, &u.ground_truth, threshold, mode)?;
        match mode {
            MatchMode::Top1 => {
                num += m.hit as usize;
                den += 1;
            }
            MatchMode::GreedyMulti => {
                num += m.matched.len();
                den += u.ground_truth.len();
            }
        }
    }
    if den == 0 {
        return Err(Error::invalid("no ground-truth boxes to evaluate against"));
    }
    Ok(num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub accuracy: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<TableRow>,
    pub n_images: usize,
    /// `image` for top1 tables, `box` for greedy_multi, `fixture` for rows
    /// entered by hand.
    pub unit: String,
    /// Images left out for having no ground truth.
    #[serde(default)]
    pub excluded: Vec<String>,
}

impl EvalTable {
    pub fn from_rows(rows: Vec<TableRow>, n_images: usize, unit: impl Into<String>) -> Result<Self> {
        for row in &rows {
            if row.accuracy.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::invalid(format!("accuracy of {:?} outside [0, 1]", row.method)));
            }
        }
        Ok(EvalTable {
            rows,
            n_images,
            unit: unit.into(),
            excluded: Vec::new(),
        })
    }

    /// Appends the rows of `other`, which must share this table's unit.
    pub fn extend(&mut self, other: EvalTable) -> Result<()> {
        if other.unit != self.unit {
            return Err(Error::invalid(format!("cannot merge {} and {} tables", self.unit, other.unit)));
        }
        self.rows.extend(other.rows);
        Ok(())
    }
}

/// Aggregates per-image results of one method into a table row.
pub fn accuracy_table(method: &str, results: &[MatchResult]) -> Result<EvalTable> {
    let included: Vec<&MatchResult> = results.iter().filter(|r| !r.excluded).collect();
    if included.is_empty() {
        return Err(Error::invalid("no evaluable images"));
    }
    let mode = included[0].mode;
    if included.iter().any(|r| r.mode != mode) {
        return Err(Error::invalid("results mix matching modes"));
    }
    let mut accuracy = [0.0; 5];
    for (slot, &t) in accuracy.iter_mut().zip(IOU_THRESHOLDS.iter()) {
        let (mut num, mut den) = (0usize, 0usize);
        for r in &included {
            let m = r
                .at(t)
                .ok_or_else(|| Error::invalid(format!("result for {} lacks IOU {t}", r.image_id)))?;
            match mode {
                MatchMode::Top1 => {
                    num += m.hit as usize;
                    den += 1;
                }
                MatchMode::GreedyMulti => {
                    num += m.matched.len();
                    den += r.n_ground_truth;
                }
            }
        }
        *slot = num as f64 / den as f64;
    }
    Ok(EvalTable {
        rows: vec![TableRow {
            method: method.to_owned(),
            accuracy,
        }],
        n_images: included.len(),
        unit: mode.unit().to_owned(),
        excluded: results.iter().filter(|r| r.excluded).map(|r| r.image_id.clone()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::invalid(format!("unknown table format {other:?}"))),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Renders the table with a `IOU,0.1,...,0.5` header and three decimals.
pub fn render_table(table: &EvalTable, format: TableFormat) -> String {
    let header: Vec<String> = IOU_THRESHOLDS.iter().map(|t| format!("{t:.1}")).collect();
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            writeln!(out, "IOU,{}", header.join(",")).unwrap();
            for row in &table.rows {
                let cells: Vec<String> = row.accuracy.iter().map(|a| format!("{a:.3}")).collect();
                writeln!(out, "{},{}", csv_field(&row.method), cells.join(",")).unwrap();
            }
        }
        TableFormat::Markdown => {
            writeln!(out, "| IOU | {} |", header.join(" | ")).unwrap();
            writeln!(out, "|---|{}", "---|".repeat(header.len())).unwrap();
            for row in &table.rows {
                let cells: Vec<String> = row.accuracy.iter().map(|a| format!("{a:.3}")).collect();
                writeln!(out, "| {} | {} |", row.method.replace('|', "\\|"), cells.join(" | ")).unwrap();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation_store::CoordSpace;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h, CoordSpace::Native).unwrap()
    }

    fn det(b: BoundingBox, confidence: f64) -> ScoredBox {
        ScoredBox { bbox: b, confidence }
    }

    #[test]
    fn iou_basics() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 1.0, 1.0)).unwrap(), 0.0);
        assert_eq!(iou(&a, &bx(2.0, 0.0, 2.0, 2.0)).unwrap(), 0.0);
        let v = iou(&a, &bx(1.0, 1.0, 2.0, 2.0)).unwrap();
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn iou_space_mismatch() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        let b = BoundingBox::new(0.0, 0.0, 2.0, 2.0, CoordSpace::Map).unwrap();
        assert!(matches!(iou(&a, &b), Err(Error::SpaceMismatch { .. })));
    }

    #[test]
    fn exact_detection_hits() {
        let gt = bx(10.0, 10.0, 5.0, 5.0);
        let m = match_image(&[det(gt, 0.9)], &[gt], 0.5, MatchMode::Top1).unwrap();
        assert!(m.hit);
        assert_eq!(m.matched[0].iou, 1.0);
    }

    #[test]
    fn bibasilar_two_boxes() {
        let left = bx(10.0, 60.0, 30.0, 20.0);
        let right = bx(60.0, 60.0, 30.0, 20.0);
        let dets = [det(bx(12.0, 62.0, 28.0, 18.0), 0.8)];
        let top1 = match_image(&dets, &[left, right], 0.3, MatchMode::Top1).unwrap();
        assert!(top1.hit);
        let multi = match_image(&dets, &[left, right], 0.3, MatchMode::GreedyMulti).unwrap();
        assert_eq!(multi.recall, 0.5);
    }

    #[test]
    fn no_detections_miss() {
        let m = match_image(&[], &[bx(0.0, 0.0, 1.0, 1.0)], 0.1, MatchMode::GreedyMulti).unwrap();
        assert!(!m.hit);
        assert_eq!(m.recall, 0.0);
    }

    #[test]
    fn greedy_claims_each_gt_once() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let dets = [det(gt, 0.9), det(bx(1.0, 1.0, 9.0, 9.0), 0.8)];
        let m = match_image(&dets, &[gt], 0.1, MatchMode::GreedyMulti).unwrap();
        assert_eq!(m.matched.len(), 1);
        assert_eq!(m.matched[0].detection, 0);
    }

    #[test]
    fn unsorted_detections_rejected() {
        let gt = bx(0.0, 0.0, 1.0, 1.0);
        assert!(match_image(&[det(gt, 0.1), det(gt, 0.9)], &[gt], 0.1, MatchMode::Top1).is_err());
    }

    #[test]
    fn empty_gt_excluded_from_table() {
        let gt = bx(0.0, 0.0, 4.0, 4.0);
        let results = vec![
            evaluate_image("a", &[det(gt, 0.9)], &[gt], MatchMode::Top1).unwrap(),
            evaluate_image("b", &[det(gt, 0.9)], &[], MatchMode::Top1).unwrap(),
        ];
        assert!(results[1].excluded);
        let table = accuracy_table("m", &results).unwrap();
        assert_eq!(table.n_images, 1);
        assert_eq!(table.rows[0].accuracy, [1.0; 5]);
        assert_eq!(table.excluded, vec!["b".to_string()]);
    }

    #[test]
    fn empty_results_error() {
        assert!(accuracy_table("m", &[]).is_err());
    }

    #[test]
    fn greedy_table_counts_boxes() {
        let (l, r) = (bx(0.0, 0.0, 4.0, 4.0), bx(10.0, 0.0, 4.0, 4.0));
        let results = vec![
            evaluate_image("a", &[det(l, 0.9)], &[l, r], MatchMode::GreedyMulti).unwrap(),
            evaluate_image("b", &[det(l, 0.9)], &[l], MatchMode::GreedyMulti).unwrap(),
        ];
        let table = accuracy_table("m", &results).unwrap();
        assert_eq!(table.unit, "box");
        assert!((table.rows[0].accuracy[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn render_formats() {
        let table = EvalTable::from_rows(
            vec![TableRow {
                method: "LITERATI NWS".into(),
                accuracy: [0.349, 0.125, 0.060, 0.024, 0.007],
            }],
            0,
            "fixture",
        )
        .unwrap();
        assert_eq!(
            render_table(&table, TableFormat::Csv),
            "IOU,0.1,0.2,0.3,0.4,0.5\nLITERATI NWS,0.349,0.125,0.060,0.024,0.007\n"
        );
        assert_eq!(
            render_table(&table, TableFormat::Markdown),
            "| IOU | 0.1 | 0.2 | 0.3 | 0.4 | 0.5 |\n|---|---|---|---|---|---|\n| LITERATI NWS | 0.349 | 0.125 | 0.060 | 0.024 | 0.007 |\n"
        );
    }

    #[test]
    fn csv_quotes_method_names() {
        let table = EvalTable::from_rows(
            vec![TableRow {
                method: "a,b".into(),
                accuracy: [0.0; 5],
            }],
            0,
            "fixture",
        )
        .unwrap();
        assert!(render_table(&table, TableFormat::Csv).contains("\"a,b\",0.000"));
    }
}

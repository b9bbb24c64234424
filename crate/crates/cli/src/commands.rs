use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use literati_core::annotation_store::{
    load_coco_file, make_split, mix_negatives, to_coco, Annotation, CoordSpace, ImageRecord,
};
use literati_core::eval_harness::{accuracy_table, eval_units, evaluate_units, render_table, MatchMode};
use literati_core::map_decoder::synthetic::{planted_scene, SceneConfig};
use literati_core::map_decoder::{read_map_dir, write_map, DecodeParams, DetectionRecord};
use literati_core::numeric_heads::{grad_check, GradCase, GradOp};
use literati_core::report_parser::{parse_report, Lexicon, Report};
use literati_core::tpe_tuner::{decoder_space, tune_decoder, SearchSpace, TpeConfig, TuneSettings};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::{DecodeArgs, DemoArgs, EvalArgs, GradcheckArgs, MixArgs, ParseArgs, SplitArgs, TuneArgs};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(PathBuf, std::io::Error),
    Core(literati_core::Error),
}

impl CliError {
    /// 2 for filesystem failures, 1 for everything else.
    pub fn code(&self) -> u8 {
        match self {
            CliError::Io(..) => 2,
            CliError::Core(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(msg) => f.write_str(msg),
            CliError::Io(path, e) => write!(f, "i/o error on {}: {e}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<literati_core::Error> for CliError {
    fn from(e: literati_core::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(path.to_owned(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Io(path.to_owned(), e))
}

/// Writes to `out` when given, stdout otherwise.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| literati_core::Error::json(text, &e).into())
}

/// Ids from a JSON array of strings, or one id per non-empty line.
fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = read_text(path)?;
    if text.trim_start().starts_with('[') {
        return parse_json(&text);
    }
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect())
}

/// COCO boxes load as native; a file in another space is relabelled.
fn load_annotations(path: &Path, space: CoordSpace) -> Result<(Vec<ImageRecord>, Vec<Annotation>)> {
    let (images, mut annotations) = load_coco_file(path)?;
    for ann in &mut annotations {
        for b in &mut ann.boxes {
            b.space = space;
        }
    }
    Ok((images, annotations))
}

pub fn parse(args: ParseArgs) -> Result<()> {
    let lexicon = match &args.lexicon {
        Some(path) => Lexicon::load(path)?,
        None => Lexicon::bundled(),
    };
    let text = read_text(&args.reports)?;
    let mut out = String::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let report: Report = serde_json::from_str(line)
            .map_err(|e| CliError::Validation(format!("{} line {}: {e}", args.reports.display(), n + 1)))?;
        report.validate()?;
        for expr in parse_report(&report, &lexicon, args.level) {
            out.push_str(&serde_json::to_string(&expr).expect("serializable"));
            out.push('\n');
        }
    }
    emit(args.out.as_deref(), &out)
}

pub fn split(args: SplitArgs) -> Result<()> {
    let ids = read_ids(&args.ids)?;
    let split = make_split(&ids, args.ratios, args.seed)?;
    let (tr, va, te) = split.sizes();
    info!("split {} ids into {tr}/{va}/{te}", ids.len());
    emit(args.out.as_deref(), &to_json(&split))
}

pub fn mix(args: MixArgs) -> Result<()> {
    let pos = read_ids(&args.pos)?;
    let neg = read_ids(&args.neg)?;
    let outcome = mix_negatives(&pos, &neg, args.ratio, args.seed)?;
    if let Some(w) = &outcome.warning {
        warn!("{w}");
    }
    emit(args.out.as_deref(), &to_json(&outcome))
}

fn image_sizes(images: &[ImageRecord]) -> BTreeMap<String, (u32, u32)> {
    images.iter().map(|i| (i.image_id.clone(), (i.width, i.height))).collect()
}

pub fn decode(args: DecodeArgs) -> Result<()> {
    let params = DecodeParams::new(args.d, args.tau, args.alpha)?;
    let sizes = match (&args.ann, args.space) {
        (Some(path), _) => image_sizes(&load_coco_file(path)?.0),
        (None, CoordSpace::Native) => {
            return Err(CliError::Validation("--space native needs --ann for the image sizes".into()));
        }
        (None, _) => BTreeMap::new(),
    };
    let samples = read_map_dir(&args.maps)?;
    info!("decoding {} maps", samples.len());
    let per_sample: Vec<Vec<DetectionRecord>> = samples
        .par_iter()
        .map(|s| s.decode_records(&params, args.space, sizes.get(&s.sidecar.image_id).copied()))
        .collect::<literati_core::Result<_>>()?;
    let records: Vec<DetectionRecord> = per_sample.into_iter().flatten().collect();
    emit(args.out.as_deref(), &to_json(&records))
}

pub fn tune(args: TuneArgs) -> Result<()> {
    let space = match &args.space {
        Some(path) => SearchSpace::from_json(&read_text(path)?)?,
        None => decoder_space(),
    };
    let samples = read_map_dir(&args.maps)?;
    let (images, annotations) = load_annotations(&args.ann, args.ann_space)?;
    let settings = TuneSettings {
        iou_threshold: args.iou,
        mode: args.mode,
        ann_space: args.ann_space,
    };
    let outcome = tune_decoder(
        &samples,
        &images,
        &annotations,
        &space,
        args.budget,
        &TpeConfig::with_seed(args.seed),
        &settings,
    )?;
    match &args.out {
        Some(path) => {
            write_text(path, &to_json(&outcome))?;
            println!(
                "d={} tau={} alpha={} accuracy={:.3}",
                outcome.best.d,
                outcome.best.tau,
                outcome.best.alpha,
                outcome.best_trial.objective.unwrap_or(f64::NAN)
            );
            Ok(())
        }
        None => emit(None, &to_json(&outcome)),
    }
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    mode: MatchMode,
    results: &'a [literati_core::eval_harness::MatchResult],
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let records: Vec<DetectionRecord> = parse_json(&read_text(&args.detections)?)?;
    if let Some(r) = records.iter().find(|r| r.space != args.ann_space) {
        return Err(CliError::Validation(format!(
            "detections of {} are in {} space but annotations are in {}; decode with --space {} or pass --ann-space",
            r.image_id, r.space, args.ann_space, args.ann_space
        )));
    }
    let (_, annotations) = load_annotations(&args.ann, args.ann_space)?;
    let units = eval_units(&records, &annotations)?;
    let results = evaluate_units(&units, args.mode)?;
    let table = accuracy_table(&args.method, &results)?;
    if !table.excluded.is_empty() {
        info!("{} annotations without boxes left out", table.excluded.len());
    }
    if let Some(path) = &args.diagnostics {
        write_text(
            path,
            &to_json(&Diagnostics {
                mode: args.mode,
                results: &results,
            }),
        )?;
    }
    emit(args.out.as_deref(), &render_table(&table, args.format))
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    if args.cases == 0 {
        return Err(CliError::Validation("--cases must be at least 1".into()));
    }
    let mut out = String::from("op,cases,coordinates,max_rel_error,tolerance,status\n");
    let mut failed = Vec::new();
    for op in GradOp::ALL {
        let reports = (args.seed..args.seed + args.cases)
            .into_par_iter()
            .map(|seed| grad_check(&GradCase::random(op, seed), args.h))
            .collect::<literati_core::Result<Vec<_>>>()?;
        let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        let coords: usize = reports.iter().map(|r| r.coordinates).sum();
        let ok = reports.iter().all(|r| r.passed());
        if !ok {
            failed.push(op.as_str());
        }
        let status = if ok { "pass" } else { "FAIL" };
        writeln!(out, "{op},{},{coords},{worst:.3e},{:.0e},{status}", args.cases, op.tolerance()).unwrap();
    }
    print!("{out}");
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn demo(args: DemoArgs) -> Result<()> {
    if args.maps == 0 {
        return Err(CliError::Validation("--maps must be at least 1".into()));
    }
    let single = SceneConfig::default();
    let double = SceneConfig {
        boxes: 2,
        ..SceneConfig::default()
    };
    let seeds = |offset: u64| (0..args.maps).map(move |i| args.seed.wrapping_mul(1000).wrapping_add(offset + i));

    let mut text = String::new();
    let mut written = Vec::new();
    for (cfg, mode, label, offset) in [
        (&single, MatchMode::Top1, "planted single", 0),
        (&double, MatchMode::GreedyMulti, "planted pair", args.maps),
    ] {
        let scenes: Vec<_> = seeds(offset).map(|s| planted_scene(s, cfg)).collect();
        let mut records = Vec::new();
        let mut anns = Vec::new();
        for scene in &scenes {
            let sample = &scene.sample;
            records.extend(sample.decode_records(&DecodeParams::default(), CoordSpace::Map, None)?);
            anns.push(Annotation {
                image_id: sample.sidecar.image_id.clone(),
                phrase: sample.class_name(scene.class_index).to_owned(),
                category: sample.class_name(scene.class_index).to_owned(),
                boxes: scene.boxes.clone(),
                disease_tags: BTreeSet::new(),
            });
        }
        let results = evaluate_units(&eval_units(&records, &anns)?, mode)?;
        let table = accuracy_table(label, &results)?;
        writeln!(text, "# {label}: {} maps, {} per {}", scenes.len(), mode_name(mode), table.unit).unwrap();
        text.push_str(&render_table(&table, args.format));
        written.push((scenes, anns));
    }
    print!("{text}");

    if let Some(dir) = &args.out {
        let maps = dir.join("maps");
        fs::create_dir_all(&maps).map_err(|e| CliError::Io(maps.clone(), e))?;
        let mut images = Vec::new();
        let mut anns = Vec::new();
        for (scenes, a) in written {
            for scene in &scenes {
                let s = &scene.sample;
                write_map(&maps, &s.sidecar.image_id, s)?;
                let shape = s.logits.shape();
                images.push(ImageRecord {
                    image_id: s.sidecar.image_id.clone(),
                    width: shape.width as u32,
                    height: shape.height as u32,
                    disease_labels: BTreeSet::new(),
                });
            }
            anns.extend(a);
        }
        write_text(&dir.join("annotations.json"), &to_json(&to_coco(&images, &anns)))?;
        info!("wrote {} maps and map-space annotations to {}", images.len(), dir.display());
    }
    Ok(())
}

fn mode_name(mode: MatchMode) -> &'static str {
    match mode {
        MatchMode::Top1 => "top1",
        MatchMode::GreedyMulti => "greedy_multi",
    }
}

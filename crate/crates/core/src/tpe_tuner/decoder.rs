//! Tuning `(d, tau, alpha)` against detection accuracy on validation maps.

use std::collections::{BTreeMap, BTreeSet};

use log::info;
use serde::Serialize;
use serde_json::Value;

use super::{optimize_from, ParamKind, ParamSpec, Params, SearchSpace, TpeConfig, Trial};
use crate::annotation_store::{Annotation, CoordSpace, ImageRecord};
use crate::error::{Error, Result};
use crate::eval_harness::{accuracy_at, eval_units, MatchMode};
use crate::map_decoder::{DecodeParams, MapSample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneSettings {
    pub iou_threshold: f64,
    pub mode: MatchMode,
    /// Space the annotation boxes are expressed in.
    pub ann_space: CoordSpace,
}

impl Default for TuneSettings {
    fn default() -> Self {
        TuneSettings {
            iou_threshold: 0.1,
            mode: MatchMode::Top1,
            ann_space: CoordSpace::Native,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneOutcome {
    pub best: DecodeParams,
    pub best_trial: Trial,
    pub history: Vec<Trial>,
}

/// Default space: `d` in 1..=8, `tau` in [0.05, 0.95], `alpha` in [0.1, 0.95].
pub fn decoder_space() -> SearchSpace {
    SearchSpace::new(vec![
        ParamSpec {
            name: "d".into(),
            kind: ParamKind::IntegerUniform { low: 1, high: 8 },
        },
        ParamSpec {
            name: "tau".into(),
            kind: ParamKind::Uniform { low: 0.05, high: 0.95 },
        },
        ParamSpec {
            name: "alpha".into(),
            kind: ParamKind::Uniform { low: 0.1, high: 0.95 },
        },
    ])
    .expect("static space is valid")
}

/// Reads decoder parameters, taking defaults for names the space omits.
pub fn decode_params_from(params: &Params) -> Result<DecodeParams> {
    let mut out = DecodeParams::default();
    for (name, value) in params {
        let bad = || Error::invalid(format!("parameter '{name}' has unusable value {value}"));
        match name.as_str() {
            "d" => out.d = value.as_u64().ok_or_else(bad)? as usize,
            "tau" => out.tau = value.as_f64().ok_or_else(bad)?,
            "alpha" => out.alpha = value.as_f64().ok_or_else(bad)?,
            _ => return Err(Error::invalid(format!("'{name}' is not a decoder parameter"))),
        }
    }
    out.validate()?;
    Ok(out)
}

/// The values of `p` for the parameters `space` declares.
pub fn params_from_decode(p: &DecodeParams, space: &SearchSpace) -> Params {
    space
        .params
        .iter()
        .filter_map(|spec| {
            let v = match spec.name.as_str() {
                "d" => Value::from(p.d as u64),
                "tau" => Value::from(p.tau),
                "alpha" => Value::from(p.alpha),
                _ => return None,
            };
            Some((spec.name.clone(), v))
        })
        .collect()
}

/// Runs the tuner with the default parameters as trial 0 (when the space
/// admits them) and returns the best parameters found.
pub fn tune_decoder(
    samples: &[MapSample],
    images: &[ImageRecord],
    annotations: &[Annotation],
    space: &SearchSpace,
    budget: usize,
    cfg: &TpeConfig,
    settings: &TuneSettings,
) -> Result<TuneOutcome> {
    if budget == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    if let Some(p) = space.params.iter().find(|p| !matches!(p.name.as_str(), "d" | "tau" | "alpha")) {
        return Err(Error::invalid(format!("'{}' is not a decoder parameter", p.name)));
    }
    let ids: BTreeSet<&str> = samples.iter().map(|s| s.sidecar.image_id.as_str()).collect();
    let validation: Vec<Annotation> = annotations
        .iter()
        .filter(|a| ids.contains(a.image_id.as_str()) && !a.boxes.is_empty())
        .cloned()
        .collect();
    if validation.is_empty() {
        return Err(Error::invalid("validation set is empty: no annotated image has a map"));
    }
    let sizes: BTreeMap<&str, (u32, u32)> = images.iter().map(|i| (i.image_id.as_str(), (i.width, i.height))).collect();

    let objective = |params: &Params| -> Result<f64> {
        let decode = decode_params_from(params)?;
        let mut records = Vec::new();
        for s in samples {
            let native = sizes.get(s.sidecar.image_id.as_str()).copied();
            records.extend(s.decode_records(&decode, settings.ann_space, native)?);
        }
        accuracy_at(&eval_units(&records, &validation)?, settings.iou_threshold, settings.mode)
    };

    let defaults = params_from_decode(&DecodeParams::default(), space);
    let initial: Vec<Params> = if space.check(&defaults).is_ok() {
        vec![defaults]
    } else {
        info!("default decoder parameters fall outside the space; not seeding trial 0");
        Vec::new()
    };
    let run = optimize_from(objective, space, budget, cfg, &initial)?;
    let best = decode_params_from(&run.best.params)?;
    info!("best decoder parameters {best:?} with accuracy {:?}", run.best.objective);
    Ok(TuneOutcome {
        best,
        best_trial: run.best,
        history: run.history,
    })
}

//! Tree-structured Parzen estimator over flat search spaces.
//!
//! Continuous dimensions (log-uniform ones in log space) get a mixture of
//! Gaussians truncated to the bounds, one per observed point, with bandwidth
//! equal to the larger gap to its sorted neighbours and floored at
//! `range / min(100, n)`. Integer and choice dimensions use category counts
//! with add-one smoothing. Candidates are drawn from the density of the
//! best `ceil(gamma * n)` trials and the one maximizing `l(x) / g(x)` wins.

mod decoder;

pub use decoder::{decode_params_from, decoder_space, params_from_decode, tune_decoder, TuneOutcome, TuneSettings};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub type Params = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    Uniform {
        low: f64,
        high: f64,
    },
    LogUniform {
        low: f64,
        high: f64,
    },
    #[serde(alias = "int_uniform")]
    IntegerUniform {
        low: i64,
        high: i64,
    },
    Choice {
        choices: Vec<Value>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
}

impl ParamSpec {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(format!("parameter '{}': {msg}", self.name)));
        match &self.kind {
            ParamKind::Uniform { low, high } | ParamKind::LogUniform { low, high } => {
                if !low.is_finite() || !high.is_finite() {
                    return bad("bounds must be finite");
                }
                if low >= high {
                    return bad("low must be below high");
                }
                if matches!(self.kind, ParamKind::LogUniform { .. }) && *low <= 0.0 {
                    return bad("log-uniform bounds must be positive");
                }
            }
            ParamKind::IntegerUniform { low, high } => {
                if low >= high {
                    return bad("low must be below high");
                }
            }
            ParamKind::Choice { choices } => {
                if choices.is_empty() {
                    return bad("choice list is empty");
                }
            }
        }
        Ok(())
    }

    /// Whether `value` is a legal assignment for this parameter.
    pub fn admits(&self, value: &Value) -> bool {
        match &self.kind {
            ParamKind::Uniform { low, high } | ParamKind::LogUniform { low, high } => {
                value.as_f64().is_some_and(|v| v >= *low && v <= *high)
            }
            ParamKind::IntegerUniform { low, high } => value.as_i64().is_some_and(|v| v >= *low && v <= *high),
            ParamKind::Choice { choices } => choices.contains(value),
        }
    }

    fn encode(&self, value: &Value) -> Option<Coord> {
        if !self.admits(value) {
            return None;
        }
        Some(match &self.kind {
            ParamKind::Uniform { .. } => Coord::Real(value.as_f64()?),
            ParamKind::LogUniform { .. } => Coord::Real(value.as_f64()?.ln()),
            ParamKind::IntegerUniform { low, .. } => Coord::Cat((value.as_i64()? - low) as usize),
            ParamKind::Choice { choices } => Coord::Cat(choices.iter().position(|c| c == value)?),
        })
    }

    fn decode(&self, coord: Coord) -> Value {
        match (&self.kind, coord) {
            (ParamKind::Uniform { low, high }, Coord::Real(x)) => Value::from(x.clamp(*low, *high)),
            (ParamKind::LogUniform { low, high }, Coord::Real(x)) => Value::from(x.exp().clamp(*low, *high)),
            (ParamKind::IntegerUniform { low, .. }, Coord::Cat(i)) => Value::from(low + i as i64),
            (ParamKind::Choice { choices }, Coord::Cat(i)) => choices[i].clone(),
            _ => unreachable!("coordinate kind follows the parameter kind"),
        }
    }

    /// Transformed continuous range, or the number of categories.
    fn domain(&self) -> Domain {
        match &self.kind {
            ParamKind::Uniform { low, high } => Domain::Real(*low, *high),
            ParamKind::LogUniform { low, high } => Domain::Real(low.ln(), high.ln()),
            ParamKind::IntegerUniform { low, high } => Domain::Cat((high - low + 1) as usize),
            ParamKind::Choice { choices } => Domain::Cat(choices.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Coord {
    Real(f64),
    Cat(usize),
}

#[derive(Debug, Clone, Copy)]
enum Domain {
    Real(f64, f64),
    Cat(usize),
}

/// Ordered list of parameters; serialized as a bare JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        let space = SearchSpace { params };
        space.validate()?;
        Ok(space)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let space: SearchSpace = serde_json::from_str(json).map_err(|e| Error::json(json, &e))?;
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::invalid("search space is empty"));
        }
        let mut names = BTreeSet::new();
        for p in &self.params {
            if !names.insert(p.name.as_str()) {
                return Err(Error::invalid(format!("parameter '{}' declared twice", p.name)));
            }
            p.validate()?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Checks that `params` assigns every declared parameter a legal value
    /// and nothing else.
    pub fn check(&self, params: &Params) -> Result<()> {
        for p in &self.params {
            match params.get(&p.name) {
                Some(v) if p.admits(v) => {}
                Some(v) => return Err(Error::invalid(format!("parameter '{}': {v} is out of bounds", p.name))),
                None => return Err(Error::invalid(format!("parameter '{}' is missing", p.name))),
            }
        }
        if let Some(extra) = params.keys().find(|k| self.get(k).is_none()) {
            return Err(Error::invalid(format!("unknown parameter '{extra}'")));
        }
        Ok(())
    }

    fn encode(&self, params: &Params) -> Option<Vec<Coord>> {
        self.params.iter().map(|p| p.encode(params.get(&p.name)?)).collect()
    }

    fn decode(&self, coords: &[Coord]) -> Params {
        self.params
            .iter()
            .zip(coords)
            .map(|(p, c)| (p.name.clone(), p.decode(*c)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub number: usize,
    pub params: Params,
    /// Higher is better. `None` for failed trials.
    pub objective: Option<f64>,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trial {
    pub fn complete(number: usize, params: Params, objective: f64) -> Trial {
        Trial {
            number,
            params,
            objective: Some(objective),
            status: TrialStatus::Complete,
            error: None,
        }
    }

    pub fn failed(number: usize, params: Params, error: impl Into<String>) -> Trial {
        Trial {
            number,
            params,
            objective: None,
            status: TrialStatus::Failed,
            error: Some(error.into()),
        }
    }

    fn value(&self) -> Option<f64> {
        match self.status {
            TrialStatus::Complete => self.objective.filter(|v| v.is_finite()),
            TrialStatus::Failed => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    pub gamma: f64,
    pub n_startup: usize,
    pub n_candidates: usize,
    pub seed: u64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig {
            gamma: 0.25,
            n_startup: 10,
            n_candidates: 24,
            seed: 0,
        }
    }
}

impl TpeConfig {
    pub fn with_seed(seed: u64) -> Self {
        TpeConfig { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma {} must lie in (0, 1)", self.gamma)));
        }
        if self.n_candidates == 0 {
            return Err(Error::invalid("n_candidates must be at least 1"));
        }
        Ok(())
    }
}

/// Truncated-Gaussian mixture on `[lo, hi]`; uniform when fitted to nothing.
#[derive(Debug, Clone)]
struct Parzen {
    lo: f64,
    hi: f64,
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    /// Log of each component's mass inside the bounds.
    log_mass: Vec<f64>,
}

fn std_normal() -> Normal {
    Normal::standard()
}

impl Parzen {
    fn fit(points: &[f64], lo: f64, hi: f64) -> Parzen {
        let mut mus = points.to_vec();
        mus.sort_by(f64::total_cmp);
        let n = mus.len();
        let floor = (hi - lo) / (n.clamp(1, 100) as f64);
        let sigmas: Vec<f64> = (0..n)
            .map(|i| {
                let left = if i > 0 { mus[i] - mus[i - 1] } else { 0.0 };
                let right = if i + 1 < n { mus[i + 1] - mus[i] } else { 0.0 };
                left.max(right).max(floor)
            })
            .collect();
        let z = std_normal();
        let log_mass = mus
            .iter()
            .zip(&sigmas)
            .map(|(m, s)| (z.cdf((hi - m) / s) - z.cdf((lo - m) / s)).ln())
            .collect();
        Parzen {
            lo,
            hi,
            mus,
            sigmas,
            log_mass,
        }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        if self.mus.is_empty() {
            return -(self.hi - self.lo).ln();
        }
        let z = std_normal();
        let terms: Vec<f64> = (0..self.mus.len())
            .map(|i| {
                let s = self.sigmas[i];
                z.ln_pdf((x - self.mus[i]) / s) - s.ln() - self.log_mass[i]
            })
            .collect();
        log_sum_exp(&terms) - (self.mus.len() as f64).ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.mus.is_empty() {
            return rng.random_range(self.lo..=self.hi);
        }
        let i = rng.random_range(0..self.mus.len());
        let (m, s) = (self.mus[i], self.sigmas[i]);
        let z = std_normal();
        let (a, b) = (z.cdf((self.lo - m) / s), z.cdf((self.hi - m) / s));
        let u = a + (b - a) * rng.random::<f64>();
        let x = m + s * z.inverse_cdf(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON));
        if x.is_finite() {
            x.clamp(self.lo, self.hi)
        } else {
            m
        }
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Add-one smoothed category frequencies.
#[derive(Debug, Clone)]
struct Categorical {
    weights: Vec<f64>,
}

impl Categorical {
    fn fit(points: &[usize], k: usize) -> Categorical {
        let mut counts = vec![1.0; k];
        for &p in points {
            counts[p] += 1.0;
        }
        let total = (points.len() + k) as f64;
        Categorical {
            weights: counts.into_iter().map(|c| c / total).collect(),
        }
    }

    fn log_pdf(&self, i: usize) -> f64 {
        self.weights[i].ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let mut u = rng.random::<f64>();
        for (i, w) in self.weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        self.weights.len() - 1
    }
}

#[derive(Debug, Clone)]
enum Density {
    Real(Parzen),
    Cat(Categorical),
}

impl Density {
    fn fit(domain: Domain, coords: &[Coord]) -> Density {
        match domain {
            Domain::Real(lo, hi) => {
                let pts: Vec<f64> = coords
                    .iter()
                    .map(|c| match c {
                        Coord::Real(x) => *x,
                        Coord::Cat(_) => unreachable!(),
                    })
                    .collect();
                Density::Real(Parzen::fit(&pts, lo, hi))
            }
            Domain::Cat(k) => {
                let pts: Vec<usize> = coords
                    .iter()
                    .map(|c| match c {
                        Coord::Cat(i) => *i,
                        Coord::Real(_) => unreachable!(),
                    })
                    .collect();
                Density::Cat(Categorical::fit(&pts, k))
            }
        }
    }

    fn log_pdf(&self, c: Coord) -> f64 {
        match (self, c) {
            (Density::Real(p), Coord::Real(x)) => p.log_pdf(x),
            (Density::Cat(p), Coord::Cat(i)) => p.log_pdf(i),
            _ => unreachable!(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Coord {
        match self {
            Density::Real(p) => Coord::Real(p.sample(rng)),
            Density::Cat(p) => Coord::Cat(p.sample(rng)),
        }
    }
}

/// A scored candidate from the model-based phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub params: Params,
    /// Summed per-dimension log densities under the good and bad models.
    pub log_l: f64,
    pub log_g: f64,
}

impl Candidate {
    pub fn log_ratio(&self) -> f64 {
        self.log_l - self.log_g
    }
}

/// A suggestion plus how it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Suggestion {
    pub params: Params,
    /// True when drawn uniformly because of too few complete trials.
    pub startup: bool,
    pub candidates: Vec<Candidate>,
}

fn rng_for(cfg: &TpeConfig, history_len: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(history_len as u64);
    rng
}

fn uniform_coord(domain: Domain, rng: &mut ChaCha8Rng) -> Coord {
    match domain {
        Domain::Real(lo, hi) => Coord::Real(rng.random_range(lo..=hi)),
        Domain::Cat(k) => Coord::Cat(rng.random_range(0..k)),
    }
}

/// Splits complete, in-space trials into the good and bad sets.
fn split_history(history: &[Trial], space: &SearchSpace, gamma: f64) -> (Vec<Vec<Coord>>, Vec<Vec<Coord>>) {
    let mut scored: Vec<(f64, usize, Vec<Coord>)> = history
        .iter()
        .filter_map(|t| Some((t.value()?, t.number, space.encode(&t.params)?)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let n_good = ((gamma * scored.len() as f64).ceil() as usize).clamp(1, scored.len().max(1));
    let bad = scored.split_off(n_good.min(scored.len()));
    let strip = |v: Vec<(f64, usize, Vec<Coord>)>| v.into_iter().map(|(_, _, c)| c).collect();
    (strip(scored), strip(bad))
}

/// Number of trials a fit would currently use.
pub fn usable_trials(history: &[Trial], space: &SearchSpace) -> usize {
    history
        .iter()
        .filter(|t| t.value().is_some() && space.encode(&t.params).is_some())
        .count()
}

/// Like [`suggest`], also returning every scored candidate.
pub fn suggest_traced(history: &[Trial], space: &SearchSpace, cfg: &TpeConfig) -> Result<Suggestion> {
    space.validate()?;
    cfg.validate()?;
    let mut rng = rng_for(cfg, history.len());
    let domains: Vec<Domain> = space.params.iter().map(ParamSpec::domain).collect();

    if usable_trials(history, space) < cfg.n_startup.max(1) {
        let coords: Vec<Coord> = domains.iter().map(|d| uniform_coord(*d, &mut rng)).collect();
        return Ok(Suggestion {
            params: space.decode(&coords),
            startup: true,
            candidates: Vec::new(),
        });
    }

    let (good, bad) = split_history(history, space, cfg.gamma);
    debug!("tpe fit on {} good and {} bad trials", good.len(), bad.len());
    let column = |set: &[Vec<Coord>], d: usize| set.iter().map(|c| c[d]).collect::<Vec<_>>();
    let l: Vec<Density> = domains.iter().enumerate().map(|(d, dom)| Density::fit(*dom, &column(&good, d))).collect();
    let g: Vec<Density> = domains.iter().enumerate().map(|(d, dom)| Density::fit(*dom, &column(&bad, d))).collect();

    let mut candidates = Vec::with_capacity(cfg.n_candidates);
    let mut best: Option<(f64, usize)> = None;
    for i in 0..cfg.n_candidates {
        let coords: Vec<Coord> = l.iter().map(|dens| dens.sample(&mut rng)).collect();
        // score the decoded point so the trace agrees with what is returned
        let params = space.decode(&coords);
        let coords = space.encode(&params).expect("decoded values lie in the space");
        let log_l: f64 = coords.iter().zip(&l).map(|(c, dens)| dens.log_pdf(*c)).sum();
        let log_g: f64 = coords.iter().zip(&g).map(|(c, dens)| dens.log_pdf(*c)).sum();
        let ratio = log_l - log_g;
        if best.is_none_or(|(b, _)| ratio > b) {
            best = Some((ratio, i));
        }
        candidates.push(Candidate { params, log_l, log_g });
    }
    let (_, pick) = best.expect("at least one candidate");
    Ok(Suggestion {
        params: candidates[pick].params.clone(),
        startup: false,
        candidates,
    })
}

/// Next point to evaluate. Fully determined by `cfg.seed` and `history`.
pub fn suggest(history: &[Trial], space: &SearchSpace, cfg: &TpeConfig) -> Result<Params> {
    Ok(suggest_traced(history, space, cfg)?.params)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Optimization {
    pub best: Trial,
    pub history: Vec<Trial>,
}

/// Runs `budget` sequential trials, evaluating `initial` points first, and
/// maximises the objective.
///
/// An objective that errors or returns a non-finite value marks its trial
/// failed; failed trials never enter the density fits.
pub fn optimize_from<F, E>(
    mut objective: F,
    space: &SearchSpace,
    budget: usize,
    cfg: &TpeConfig,
    initial: &[Params],
) -> Result<Optimization>
where
    F: FnMut(&Params) -> std::result::Result<f64, E>,
    E: fmt::Display,
{
    space.validate()?;
    cfg.validate()?;
    if budget == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    for p in initial {
        space.check(p)?;
    }
    let mut history: Vec<Trial> = Vec::with_capacity(budget);
    for number in 0..budget {
        let params = match initial.get(number) {
            Some(p) => p.clone(),
            None => suggest(&history, space, cfg)?,
        };
        let trial = match objective(&params) {
            Ok(v) if v.is_finite() => Trial::complete(number, params, v),
            Ok(v) => Trial::failed(number, params, format!("objective returned {v}")),
            Err(e) => Trial::failed(number, params, e.to_string()),
        };
        debug!("trial {number}: {:?}", trial.objective);
        history.push(trial);
    }
    let best = best_trial(&history).cloned().ok_or_else(|| Error::invalid("every trial failed"))?;
    Ok(Optimization { best, history })
}

pub fn optimize<F, E>(objective: F, space: &SearchSpace, budget: usize, cfg: &TpeConfig) -> Result<Optimization>
where
    F: FnMut(&Params) -> std::result::Result<f64, E>,
    E: fmt::Display,
{
    optimize_from(objective, space, budget, cfg, &[])
}

/// Uniform random search with the same trial bookkeeping, for comparison.
pub fn random_search<F, E>(objective: F, space: &SearchSpace, budget: usize, seed: u64) -> Result<Optimization>
where
    F: FnMut(&Params) -> std::result::Result<f64, E>,
    E: fmt::Display,
{
    let cfg = TpeConfig {
        n_startup: usize::MAX,
        ..TpeConfig::with_seed(seed)
    };
    optimize(objective, space, budget, &cfg)
}

/// Highest complete trial; ties go to the earliest.
pub fn best_trial(history: &[Trial]) -> Option<&Trial> {
    history
        .iter()
        .filter_map(|t| Some((t.value()?, t)))
        .fold(None, |best: Option<(f64, &Trial)>, (v, t)| match best {
            Some((b, _)) if b >= v => best,
            _ => Some((v, t)),
        })
        .map(|(_, t)| t)
}

/// Running maximum of the objective; `None` until a trial completes.
pub fn best_so_far(history: &[Trial]) -> Vec<Option<f64>> {
    let mut best: Option<f64> = None;
    history
        .iter()
        .map(|t| {
            if let Some(v) = t.value() {
                best = Some(best.map_or(v, |b| b.max(v)));
            }
            best
        })
        .collect()
}

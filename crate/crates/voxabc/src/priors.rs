//! Prior specification and vectorized sampling of the parameter/model
//! matrix Θ.
//!
//! A [`PriorSpec`] lists candidate models (each a kinetic-model kind plus a
//! distribution per canonical parameter) and model prior probabilities.
//! [`sample_theta`] draws N i.i.d. `(model, θ)` rows into a rectangular
//! [`ThetaMatrix`] whose columns are the union of the models' parameters;
//! parameters a row's model does not use hold a NaN sentinel. Nested pairs
//! (lp-ntPET, MRTM) share the R1/k2/k2a columns by name.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{CounterRng, RngStream};
use rand_distr::{Distribution, StandardNormal};

/// Kinetic-model kinds the engine can forward-simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[serde(rename = "2tcm")]
    TwoTcm,
    LpNtPet,
    Mrtm,
}

/// Whether a model consumes the plasma input or a reference-region curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputRole {
    Plasma,
    Reference,
}

impl ModelKind {
    /// Canonical parameter names, in simulator order.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ModelKind::TwoTcm => &["K1", "k2", "k3", "k4", "Vb"],
            ModelKind::LpNtPet => &["R1", "k2", "k2a", "gamma", "tD", "tP", "alpha"],
            ModelKind::Mrtm => &["R1", "k2", "k2a"],
        }
    }

    pub fn input_role(&self) -> InputRole {
        match self {
            ModelKind::TwoTcm => InputRole::Plasma,
            ModelKind::LpNtPet | ModelKind::Mrtm => InputRole::Reference,
        }
    }
}

/// Per-parameter prior distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dist {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Normal, truncated to [lo, hi] where given (rejection sampling).
    Normal {
        mean: f64,
        sd: f64,
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
    },
    /// Value = base parameter + U(lo, hi); used to enforce tP > tD.
    OffsetUniform { base: String, lo: f64, hi: f64 },
    /// gamma as a response-function magnitude: gamma = pct/100 * k2a, with
    /// pct drawn from the inner distribution (percent above baseline).
    ResponsePct { pct: Box<Dist> },
}

impl Dist {
    /// Support interval given the supports of previously sampled parameters.
    fn support(&self, resolved: &BTreeMap<String, (f64, f64)>) -> Result<(f64, f64)> {
        match self {
            Dist::Fixed { value } => Ok((*value, *value)),
            Dist::Uniform { lo, hi } => Ok((*lo, *hi)),
            Dist::Normal { lo, hi, .. } => Ok((lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY))),
            Dist::OffsetUniform { base, lo, hi } => {
                let (blo, bhi) = *resolved
                    .get(base)
                    .ok_or_else(|| Error::config(format!("offset_uniform base '{base}' not sampled earlier")))?;
                Ok((blo + lo, bhi + hi))
            }
            Dist::ResponsePct { pct } => {
                let (plo, phi) = pct.support(resolved)?;
                let (klo, khi) = *resolved
                    .get("k2a")
                    .ok_or_else(|| Error::config("response_pct requires k2a sampled earlier"))?;
                Ok((plo / 100.0 * klo, phi / 100.0 * khi))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Dist::Fixed { value } => {
                if !value.is_finite() {
                    return Err(Error::config("fixed value must be finite"));
                }
            }
            Dist::Uniform { lo, hi } | Dist::OffsetUniform { lo, hi, .. } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::config(format!("uniform bounds must satisfy lo < hi, got [{lo},{hi}]")));
                }
            }
            Dist::Normal { sd, lo, hi, .. } => {
                if !(*sd > 0.0) {
                    return Err(Error::config(format!("normal sd must be > 0, got {sd}")));
                }
                if let (Some(l), Some(h)) = (lo, hi) {
                    if l >= h {
                        return Err(Error::config("normal truncation requires lo < hi"));
                    }
                }
            }
            Dist::ResponsePct { pct } => {
                pct.validate()?;
                if matches!(**pct, Dist::OffsetUniform { .. } | Dist::ResponsePct { .. }) {
                    return Err(Error::config("response_pct inner distribution must be fixed/uniform/normal"));
                }
            }
        }
        Ok(())
    }
}

/// One candidate model: a kind plus a distribution per canonical parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    pub params: BTreeMap<String, Dist>,
}

/// Prior over models and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub models: Vec<ModelSpec>,
    /// Model prior probabilities; empty means equal probability 1/M.
    #[serde(default)]
    pub model_probs: Vec<f64>,
}

/// Sampling-ready distribution with base parameters resolved to columns.
#[derive(Debug, Clone)]
enum CompiledDist {
    Fixed(f64),
    Uniform { lo: f64, width: f64 },
    Normal { mean: f64, sd: f64, lo: f64, hi: f64 },
    OffsetUniform { base_col: usize, lo: f64, width: f64 },
    ResponsePct { k2a_col: usize, pct: Box<CompiledDist> },
}

impl CompiledDist {
    fn sample(&self, rng: &mut CounterRng, row: &[f64]) -> f64 {
        match self {
            CompiledDist::Fixed(v) => *v,
            CompiledDist::Uniform { lo, width } => lo + rng.uniform() * width,
            CompiledDist::Normal { mean, sd, lo, hi } => {
                for _ in 0..256 {
                    let z: f64 = StandardNormal.sample(rng);
                    let v = mean + sd * z;
                    if v >= *lo && v <= *hi {
                        return v;
                    }
                }
                // Pathological truncation; pin to the nearest bound.
                (*mean).clamp(*lo, *hi)
            }
            CompiledDist::OffsetUniform { base_col, lo, width } => row[*base_col] + lo + rng.uniform() * width,
            CompiledDist::ResponsePct { k2a_col, pct } => {
                let p = pct.sample(rng, row);
                p / 100.0 * row[*k2a_col]
            }
        }
    }
}

#[derive(Debug, Clone)]
struct CompiledModel {
    kind: ModelKind,
    /// (column in Θ, compiled distribution), in canonical parameter order.
    params: Vec<(usize, CompiledDist)>,
}

/// Validated, sampling-ready prior.
#[derive(Debug, Clone)]
pub struct CompiledPrior {
    models: Vec<CompiledModel>,
    cumulative_probs: Vec<f64>,
    pub columns: Vec<String>,
    pub meta: Vec<ModelMeta>,
    pub input_role: InputRole,
}

/// Descriptive record of one candidate model carried with Θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub name: String,
    pub kind: ModelKind,
    /// Number of non-fixed parameters (parsimony order for tie-breaks).
    pub n_free: usize,
}

impl CompiledPrior {
    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn model_kind(&self, m: usize) -> ModelKind {
        self.models[m].kind
    }

    /// Θ column index of each canonical parameter of model `m`, in
    /// simulator order.
    pub(crate) fn model_param_cols(&self, m: usize) -> Vec<usize> {
        self.models[m].params.iter().map(|(c, _)| *c).collect()
    }
}

impl PriorSpec {
    pub fn compile(&self) -> Result<CompiledPrior> {
        if self.models.is_empty() {
            return Err(Error::config("prior spec lists no models"));
        }
        let m = self.models.len();
        let probs = if self.model_probs.is_empty() {
            vec![1.0 / m as f64; m]
        } else {
            if self.model_probs.len() != m {
                return Err(Error::config("model_probs length does not match model count"));
            }
            let sum: f64 = self.model_probs.iter().sum();
            if self.model_probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::config("model_probs must be non-negative and sum to 1"));
            }
            self.model_probs.clone()
        };
        let mut cumulative = Vec::with_capacity(m);
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cumulative.push(acc);
        }

        let role = self.models[0].kind.input_role();
        if self.models.iter().any(|ms| ms.kind.input_role() != role) {
            return Err(Error::config(
                "all models in one prior must share the input role (plasma vs reference); \
                 the simulation pool is driven by a single shared curve",
            ));
        }

        // Column union by name, in order of first appearance.
        let mut columns = vec!["model".to_string()];
        for ms in &self.models {
            for &name in ms.kind.param_names() {
                if !columns.iter().any(|c| c == name) {
                    columns.push(name.to_string());
                }
            }
        }

        let mut compiled = Vec::with_capacity(m);
        let mut meta = Vec::with_capacity(m);
        let mut seen_names = std::collections::BTreeSet::new();
        for ms in &self.models {
            if ms.name.is_empty() || !seen_names.insert(ms.name.clone()) {
                return Err(Error::config(format!("model names must be unique and non-empty ('{}')", ms.name)));
            }
            let canonical = ms.kind.param_names();
            for key in ms.params.keys() {
                if !canonical.contains(&key.as_str()) {
                    return Err(Error::config(format!(
                        "model '{}': unknown parameter '{key}' (expected {:?})",
                        ms.name, canonical
                    )));
                }
            }
            let mut params = Vec::with_capacity(canonical.len());
            let mut supports: BTreeMap<String, (f64, f64)> = BTreeMap::new();
            for &name in canonical {
                let dist = ms
                    .params
                    .get(name)
                    .ok_or_else(|| Error::config(format!("model '{}': missing parameter '{name}'", ms.name)))?;
                dist.validate()?;
                let support = dist.support(&supports)?;
                check_param_support(&ms.name, ms.kind, name, dist, support, &supports)?;
                supports.insert(name.to_string(), support);
                let col = columns.iter().position(|c| c == name).unwrap();
                params.push((col, compile_dist(dist, &columns)?));
            }
            let n_free = canonical
                .iter()
                .filter(|&&n| !matches!(ms.params[n], Dist::Fixed { .. }))
                .count();
            compiled.push(CompiledModel { kind: ms.kind, params });
            meta.push(ModelMeta { name: ms.name.clone(), kind: ms.kind, n_free });
        }

        Ok(CompiledPrior {
            models: compiled,
            cumulative_probs: cumulative,
            columns,
            meta,
            input_role: role,
        })
    }
}

fn compile_dist(dist: &Dist, columns: &[String]) -> Result<CompiledDist> {
    Ok(match dist {
        Dist::Fixed { value } => CompiledDist::Fixed(*value),
        Dist::Uniform { lo, hi } => CompiledDist::Uniform { lo: *lo, width: hi - lo },
        Dist::Normal { mean, sd, lo, hi } => CompiledDist::Normal {
            mean: *mean,
            sd: *sd,
            lo: lo.unwrap_or(f64::NEG_INFINITY),
            hi: hi.unwrap_or(f64::INFINITY),
        },
        Dist::OffsetUniform { base, lo, hi } => {
            let base_col = columns
                .iter()
                .position(|c| c == base)
                .ok_or_else(|| Error::config(format!("offset_uniform base '{base}' is not a column")))?;
            CompiledDist::OffsetUniform { base_col, lo: *lo, width: hi - lo }
        }
        Dist::ResponsePct { pct } => {
            let k2a_col = columns
                .iter()
                .position(|c| c == "k2a")
                .ok_or_else(|| Error::config("response_pct requires a k2a column"))?;
            CompiledDist::ResponsePct { k2a_col, pct: Box::new(compile_dist(pct, columns)?) }
        }
    })
}

/// Reject priors whose support can violate the model invariants.
fn check_param_support(
    model: &str,
    kind: ModelKind,
    name: &str,
    dist: &Dist,
    (lo, hi): (f64, f64),
    earlier: &BTreeMap<String, (f64, f64)>,
) -> Result<()> {
    let err = |msg: String| Err(Error::config(format!("model '{model}', parameter '{name}': {msg}")));
    let nonneg = ["K1", "k2", "k3", "k4", "R1", "k2a", "gamma", "tD"];
    if nonneg.contains(&name) && lo < 0.0 {
        return err(format!("support [{lo},{hi}] extends below 0"));
    }
    match (kind, name) {
        (ModelKind::TwoTcm, "Vb") => {
            if lo <= 0.0 || hi >= 1.0 {
                return err(format!("Vb support [{lo},{hi}] must lie inside (0,1)"));
            }
        }
        (ModelKind::LpNtPet, "alpha") => {
            if lo <= 0.0 {
                return err(format!("alpha support [{lo},{hi}] must be positive"));
            }
        }
        (ModelKind::LpNtPet, "tP") => {
            // tP > tD must hold for every draw.
            let ok = match dist {
                Dist::OffsetUniform { base, lo, .. } => base == "tD" && *lo > 0.0,
                Dist::Fixed { value } => earlier.get("tD").is_some_and(|&(_, td_hi)| *value > td_hi),
                _ => false,
            };
            if !ok {
                return err(
                    "tP must be offset_uniform on tD with lo > 0, or fixed above tD's maximum".to_string(),
                );
            }
        }
        _ => {}
    }
    Ok(())
}

/// N rows of (model indicator, parameters); column 0 is the indicator,
/// unused trailing parameters hold NaN.
#[derive(Debug, Clone)]
pub struct ThetaMatrix {
    pub columns: Vec<String>,
    pub meta: Vec<ModelMeta>,
    n_rows: usize,
    data: Vec<f64>,
}

impl ThetaMatrix {
    /// Rebuild from raw row-major data (posterior import path).
    pub(crate) fn from_raw(columns: Vec<String>, meta: Vec<ModelMeta>, data: Vec<f64>) -> Result<Self> {
        if columns.len() < 2 || data.len() % columns.len() != 0 {
            return Err(Error::data("theta data size does not match column count"));
        }
        let n_rows = data.len() / columns.len();
        Ok(ThetaMatrix { columns, meta, n_rows, data })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Parameter count P (columns minus the model indicator).
    pub fn n_params(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn n_models(&self) -> usize {
        self.meta.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.columns.len();
        &self.data[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn model_of(&self, i: usize) -> usize {
        self.row(i)[0] as usize
    }

    pub fn col(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Draw N i.i.d. rows from the prior. Deterministic per (spec, N, seed):
/// row i's model indicator comes from stream coordinates (i, 0) and its
/// parameter in column c from (i, c), so any parallel split gives identical
/// output.
pub fn sample_theta(prior: &CompiledPrior, n: usize, stream: &RngStream) -> Result<ThetaMatrix> {
    if n == 0 {
        return Err(Error::config("sample count N must be >= 1"));
    }
    let width = prior.columns.len();
    let stream = stream.substream("theta");
    let mut data = vec![f64::NAN; n * width];
    data.par_chunks_mut(width).enumerate().for_each(|(i, row)| {
        let i_u = i as u64;
        let u = stream.uniform_at(&[i_u, 0]);
        let m = prior
            .cumulative_probs
            .iter()
            .position(|&c| u < c)
            .unwrap_or(prior.models.len() - 1);
        row[0] = m as f64;
        for (col, dist) in &prior.models[m].params {
            let mut rng = stream.at(&[i_u, *col as u64]);
            row[*col] = dist.sample(&mut rng, row);
        }
    });
    Ok(ThetaMatrix { columns: prior.columns.clone(), meta: prior.meta.clone(), n_rows: n, data })
}

/// Named prior presets.
///
/// `fdg-2tcm-wide`: 2TCM reversibility selection with wide FDG ranges
/// (K1~U(0.001,1), k2~U(0.001,2), k3~U(0.001,0.5), k4~U(0,0.1) or fixed 0,
/// Vb~U(0.03,0.2), equal model probability).
///
/// `raclopride-lpntpet`: MRTM vs lp-ntPET activation selection with
/// task-window activation timing (tD~U(30,40), tP = tD + U(1,45),
/// alpha~N(0.7,0.1) truncated to [0.25,4], gamma~U(0,0.15)).
pub fn preset(name: &str) -> Result<PriorSpec> {
    fn uni(lo: f64, hi: f64) -> Dist {
        Dist::Uniform { lo, hi }
    }
    match name {
        "fdg-2tcm-wide" => {
            let base: BTreeMap<String, Dist> = [
                ("K1".to_string(), uni(0.001, 1.0)),
                ("k2".to_string(), uni(0.001, 2.0)),
                ("k3".to_string(), uni(0.001, 0.5)),
                ("Vb".to_string(), uni(0.03, 0.2)),
            ]
            .into();
            let mut irreversible = base.clone();
            irreversible.insert("k4".to_string(), Dist::Fixed { value: 0.0 });
            let mut reversible = base;
            reversible.insert("k4".to_string(), uni(0.0, 0.1));
            Ok(PriorSpec {
                models: vec![
                    ModelSpec { name: "2tcm-irreversible".into(), kind: ModelKind::TwoTcm, params: irreversible },
                    ModelSpec { name: "2tcm-reversible".into(), kind: ModelKind::TwoTcm, params: reversible },
                ],
                model_probs: vec![],
            })
        }
        "raclopride-lpntpet" => {
            let shared: BTreeMap<String, Dist> = [
                ("R1".to_string(), uni(0.5, 2.0)),
                ("k2".to_string(), uni(0.1, 0.6)),
                ("k2a".to_string(), uni(0.01, 0.3)),
            ]
            .into();
            let mut lp = shared.clone();
            lp.insert("gamma".to_string(), uni(0.0, 0.15));
            lp.insert("tD".to_string(), uni(30.0, 40.0));
            lp.insert("tP".to_string(), Dist::OffsetUniform { base: "tD".into(), lo: 1.0, hi: 45.0 });
            lp.insert(
                "alpha".to_string(),
                Dist::Normal { mean: 0.7, sd: 0.1, lo: Some(0.25), hi: Some(4.0) },
            );
            Ok(PriorSpec {
                models: vec![
                    ModelSpec { name: "mrtm".into(), kind: ModelKind::Mrtm, params: shared },
                    ModelSpec { name: "lpntpet".into(), kind: ModelKind::LpNtPet, params: lp },
                ],
                model_probs: vec![],
            })
        }
        other => Err(Error::config(format!("unknown prior preset '{other}'"))),
    }
}

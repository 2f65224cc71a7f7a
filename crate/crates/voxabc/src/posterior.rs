//! Posterior summaries: model probabilities, conditional point estimates and
//! credible intervals, derived-parameter posteriors (K_i, BP_ND, response
//! function), and parametric maps.
//!
//! Point estimates are conditional posterior means; intervals are central
//! (equal-tail) empirical quantiles with linear interpolation of order
//! statistics. Derived parameters are transformed per accepted draw and then
//! summarized, never computed from parameter means.

use rayon::prelude::*;

use crate::abc::AcceptedPosterior;
use crate::dataio::{Geometry, ParametricMap};
use crate::error::{Error, Result};
use crate::priors::ModelKind;

/// Empirical quantile with linear interpolation of order statistics
/// (h = (n-1)p): the convention under which draws {1,2,3,4,5} give a 95%
/// interval of [1.1, 4.9].
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let i = (h.floor() as usize).min(n - 2);
    let frac = h - i as f64;
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Mean and central credible interval of one scalar sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

fn stats_of(samples: Vec<f64>, level: f64) -> Stats {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let s = sorted(samples);
    let tail = 0.5 * (1.0 - level);
    Stats { mean, lo: quantile(&s, tail), hi: quantile(&s, 1.0 - tail) }
}

/// Fraction of accepted draws per model indicator; exact multiples of 1/n.
pub fn model_probability(acc: &AcceptedPosterior, voxel: usize) -> Vec<f64> {
    let m = acc.theta.n_models();
    let mut counts = vec![0usize; m];
    for d in acc.voxel(voxel) {
        counts[acc.theta.model_of(d.sim_index as usize)] += 1;
    }
    counts.into_iter().map(|c| c as f64 / acc.n_accept as f64).collect()
}

/// Preferred model: highest posterior probability; for two models this is
/// the strict >50% rule. Exact ties prefer the model with fewer free
/// parameters, then the lower index.
pub fn preferred_model(probs: &[f64], acc: &AcceptedPosterior) -> usize {
    let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best = usize::MAX;
    let mut best_free = usize::MAX;
    for (m, &p) in probs.iter().enumerate() {
        if p == max {
            let free = acc.theta.meta[m].n_free;
            if free < best_free || (free == best_free && m < best) {
                best = m;
                best_free = free;
            }
        }
    }
    best
}

/// Per-parameter mean + CrI over the voxel's draws with the given model
/// indicator. `None` when no accepted draw carries the model.
pub fn conditional_summary(
    acc: &AcceptedPosterior,
    voxel: usize,
    model: usize,
    level: f64,
) -> Option<Vec<(String, Stats)>> {
    let names = acc.theta.meta[model].kind.param_names();
    let rows: Vec<&[f64]> = acc
        .voxel(voxel)
        .iter()
        .filter(|d| acc.theta.model_of(d.sim_index as usize) == model)
        .map(|d| acc.theta.row(d.sim_index as usize))
        .collect();
    if rows.is_empty() {
        return None;
    }
    let mut out = Vec::with_capacity(names.len());
    for &name in names {
        let col = acc.theta.col(name).expect("canonical parameter column");
        let samples: Vec<f64> = rows.iter().map(|r| r[col]).collect();
        out.push((name.to_string(), stats_of(samples, level)));
    }
    Some(out)
}

/// Net influx rate K_i = K1*k3/(k2+k3) per accepted 2TCM draw of `model`,
/// then summarized. Draws with k2+k3 = 0 contribute K_i = 0 and are counted
/// in `degenerate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedSummary {
    pub stats: Stats,
    pub n_samples: usize,
    pub degenerate: usize,
}

pub fn ki_posterior(
    acc: &AcceptedPosterior,
    voxel: usize,
    model: usize,
    level: f64,
) -> Result<Option<DerivedSummary>> {
    if acc.theta.meta[model].kind != ModelKind::TwoTcm {
        return Err(Error::config(format!(
            "K_i is defined for 2TCM models; '{}' is not one",
            acc.theta.meta[model].name
        )));
    }
    let (ck1, ck2, ck3) = (
        acc.theta.col("K1").unwrap(),
        acc.theta.col("k2").unwrap(),
        acc.theta.col("k3").unwrap(),
    );
    let mut samples = Vec::new();
    let mut degenerate = 0usize;
    for d in acc.voxel(voxel) {
        let i = d.sim_index as usize;
        if acc.theta.model_of(i) != model {
            continue;
        }
        let r = acc.theta.row(i);
        let denom = r[ck2] + r[ck3];
        if denom == 0.0 {
            degenerate += 1;
            samples.push(0.0);
        } else {
            samples.push(r[ck1] * r[ck3] / denom);
        }
    }
    if samples.is_empty() {
        return Ok(None);
    }
    let n_samples = samples.len();
    Ok(Some(DerivedSummary { stats: stats_of(samples, level), n_samples, degenerate }))
}

/// Binding potential BP_ND = k2/k2a - 1 per accepted reference-model draw.
/// Draws with k2a = 0 are excluded and counted.
pub fn bpnd_posterior(
    acc: &AcceptedPosterior,
    voxel: usize,
    model: usize,
    level: f64,
) -> Result<Option<DerivedSummary>> {
    let kind = acc.theta.meta[model].kind;
    if !matches!(kind, ModelKind::LpNtPet | ModelKind::Mrtm) {
        return Err(Error::config("BP_ND is defined for reference-tissue models"));
    }
    let (ck2, ck2a) = (acc.theta.col("k2").unwrap(), acc.theta.col("k2a").unwrap());
    let mut samples = Vec::new();
    let mut degenerate = 0usize;
    for d in acc.voxel(voxel) {
        let i = d.sim_index as usize;
        if acc.theta.model_of(i) != model {
            continue;
        }
        let r = acc.theta.row(i);
        if r[ck2a] == 0.0 {
            degenerate += 1;
        } else {
            samples.push(r[ck2] / r[ck2a] - 1.0);
        }
    }
    if samples.is_empty() && degenerate == 0 {
        return Ok(None);
    }
    if samples.is_empty() {
        return Ok(Some(DerivedSummary {
            stats: Stats { mean: f64::NAN, lo: f64::NAN, hi: f64::NAN },
            n_samples: 0,
            degenerate,
        }));
    }
    let n_samples = samples.len();
    Ok(Some(DerivedSummary { stats: stats_of(samples, level), n_samples, degenerate }))
}

/// Per-time credible envelope of the response function
/// k2a(t)/k2a = 1 + (gamma/k2a) g(t) over the voxel's lp-ntPET draws.
#[derive(Debug, Clone)]
pub struct ResponseEnvelope {
    pub t_min: Vec<f64>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
    /// True when the lower envelope exceeds the flat response anywhere.
    pub activation: bool,
    pub n_rows: usize,
    pub excluded_k2a_zero: usize,
}

pub fn response_envelope(
    acc: &AcceptedPosterior,
    voxel: usize,
    model: usize,
    t_grid: &[f64],
    level: f64,
) -> Result<Option<ResponseEnvelope>> {
    if acc.theta.meta[model].kind != ModelKind::LpNtPet {
        return Err(Error::config("response envelopes require an lp-ntPET model"));
    }
    let cols = ["k2a", "gamma", "tD", "tP", "alpha"]
        .map(|n| acc.theta.col(n).expect("lp-ntPET column"));
    let mut rows = Vec::new();
    let mut excluded = 0usize;
    for d in acc.voxel(voxel) {
        let i = d.sim_index as usize;
        if acc.theta.model_of(i) != model {
            continue;
        }
        let r = acc.theta.row(i);
        if r[cols[0]] == 0.0 {
            excluded += 1;
        } else {
            rows.push([r[cols[0]], r[cols[1]], r[cols[2]], r[cols[3]], r[cols[4]]]);
        }
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let tail = 0.5 * (1.0 - level);
    let mut lower = Vec::with_capacity(t_grid.len());
    let mut median = Vec::with_capacity(t_grid.len());
    let mut upper = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let vals = sorted(
            rows.iter()
                .map(|[k2a, gamma, td, tp, alpha]| {
                    1.0 + gamma / k2a * crate::kinetics::gamma_variate_unchecked(*td, *tp, *alpha, t)
                })
                .collect(),
        );
        lower.push(quantile(&vals, tail));
        median.push(quantile(&vals, 0.5));
        upper.push(quantile(&vals, 1.0 - tail));
    }
    let activation = lower.iter().any(|&v| v > 1.0);
    Ok(Some(ResponseEnvelope {
        t_min: t_grid.to_vec(),
        lower,
        median,
        upper,
        activation,
        n_rows: rows.len(),
        excluded_k2a_zero: excluded,
    }))
}

/// Everything the summary CSV and maps need for one voxel.
#[derive(Debug, Clone)]
pub struct VoxelSummary {
    pub model_probs: Vec<f64>,
    pub preferred: usize,
    /// Conditional on the preferred model, canonical order.
    pub params: Vec<(String, Stats)>,
    pub ki: Option<DerivedSummary>,
    pub bp_nd: Option<DerivedSummary>,
    pub best_distance: f64,
}

pub fn summarize_voxel(acc: &AcceptedPosterior, voxel: usize, level: f64) -> Result<VoxelSummary> {
    let probs = model_probability(acc, voxel);
    let preferred = preferred_model(&probs, acc);
    let params = conditional_summary(acc, voxel, preferred, level).unwrap_or_default();
    let kind = acc.theta.meta[preferred].kind;
    let ki = if kind == ModelKind::TwoTcm { ki_posterior(acc, voxel, preferred, level)? } else { None };
    let bp_nd = if matches!(kind, ModelKind::LpNtPet | ModelKind::Mrtm) {
        bpnd_posterior(acc, voxel, preferred, level)?
    } else {
        None
    };
    Ok(VoxelSummary {
        model_probs: probs,
        preferred,
        params,
        ki,
        bp_nd,
        best_distance: acc.voxel(voxel)[0].distance,
    })
}

pub fn summarize_all(acc: &AcceptedPosterior, level: f64) -> Result<Vec<VoxelSummary>> {
    (0..acc.n_voxels).into_par_iter().map(|j| summarize_voxel(acc, j, level)).collect()
}

/// Scalar field selectors understood by [`make_map`] and the summary CSV:
/// `model_prob:<name>`, `preferred_model`, `best_distance`,
/// `ki:mean|lo|hi`, `bpnd:mean|lo|hi`, `param:<name>:mean|lo|hi`.
pub fn summary_field(s: &VoxelSummary, acc: &AcceptedPosterior, field: &str) -> Result<f64> {
    let pick = |st: &Stats, which: &str| -> Result<f64> {
        Ok(match which {
            "mean" => st.mean,
            "lo" => st.lo,
            "hi" => st.hi,
            other => return Err(Error::config(format!("unknown statistic '{other}'"))),
        })
    };
    let parts: Vec<&str> = field.split(':').collect();
    match parts.as_slice() {
        ["preferred_model"] => Ok(s.preferred as f64),
        ["best_distance"] => Ok(s.best_distance),
        ["model_prob", name] => {
            let m = acc
                .theta
                .meta
                .iter()
                .position(|mm| mm.name == *name)
                .ok_or_else(|| Error::config(format!("unknown model '{name}'")))?;
            Ok(s.model_probs[m])
        }
        ["ki", which] => {
            s.ki.as_ref().map(|d| pick(&d.stats, which)).transpose().map(|v| v.unwrap_or(f64::NAN))
        }
        ["bpnd", which] => {
            s.bp_nd.as_ref().map(|d| pick(&d.stats, which)).transpose().map(|v| v.unwrap_or(f64::NAN))
        }
        ["param", name, which] => {
            match s.params.iter().find(|(n, _)| n == name) {
                Some((_, st)) => pick(st, which),
                None => Ok(f64::NAN),
            }
        }
        _ => Err(Error::config(format!("unknown map field '{field}'"))),
    }
}

/// Write one summary field at each masked voxel coordinate; NaN elsewhere.
pub fn make_map(
    summaries: &[VoxelSummary],
    acc: &AcceptedPosterior,
    masked_indices: &[usize],
    field: &str,
    geom: &Geometry,
) -> Result<ParametricMap> {
    if summaries.len() != masked_indices.len() {
        return Err(Error::data(format!(
            "{} summaries for {} masked voxels",
            summaries.len(),
            masked_indices.len()
        )));
    }
    let mut values = vec![f32::NAN; geom.n_voxels()];
    for (s, &v) in summaries.iter().zip(masked_indices) {
        if v >= values.len() {
            return Err(Error::data(format!("masked index {v} outside geometry")));
        }
        values[v] = summary_field(s, acc, field)? as f32;
    }
    ParametricMap::new(*geom, field, values)
}

//! Fixed-budget, vectorized voxelwise rejection ABC.
//!
//! One simulation pool (N rows of sampled parameters and their noisy model
//! curves) serves every voxel: the engine streams pool rows in batches,
//! accumulates per-voxel L1 discrepancies against the observed TACs, and
//! keeps the n closest rows per voxel with a bounded worst-first heap. The
//! conceptual J x N distance matrix is never materialized; results are
//! bit-identical for any batch size or worker count because every random
//! draw is keyed by the global row index.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{InputCurve, TacDataset};
use crate::error::{Error, Result};
use crate::kinetics::{self, FineGrid, FrameAverager, FrameSchedule};
use crate::noise::{self, NoiseModel};
use crate::priors::{sample_theta, CompiledPrior, InputRole, ModelKind, ThetaMatrix};
use crate::rng::RngStream;

/// Discrepancy between an observed and a simulated TAC, accumulated in f64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    L1,
    L2,
}

impl Distance {
    #[inline]
    pub fn eval(&self, a: &[f32], b: &[f32]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Distance::L1 => {
                let mut acc = 0.0f64;
                for (&x, &y) in a.iter().zip(b) {
                    acc += (x as f64 - y as f64).abs();
                }
                acc
            }
            Distance::L2 => {
                let mut acc = 0.0f64;
                for (&x, &y) in a.iter().zip(b) {
                    let d = x as f64 - y as f64;
                    acc += d * d;
                }
                acc.sqrt()
            }
        }
    }
}

fn default_budget() -> u64 {
    4 * 1024 * 1024 * 1024
}

fn default_fine_step() -> f64 {
    0.05
}

/// Engine configuration. `n_budget` is the simulation count N, `n_accept`
/// the accepted count n per voxel (the retained proportion is p = n/N).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcConfig {
    pub n_budget: usize,
    pub n_accept: usize,
    #[serde(default)]
    pub distance: Distance,
    /// Pool rows simulated and scanned per batch; derived from the memory
    /// budget when absent.
    #[serde(default)]
    pub batch_rows: Option<usize>,
    #[serde(default = "default_budget")]
    pub memory_budget_bytes: u64,
    #[serde(default = "default_fine_step")]
    pub fine_grid_step_min: f64,
    pub seed: u64,
}

impl AbcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_accept < 1 || self.n_accept > self.n_budget {
            return Err(Error::config(format!(
                "need 1 <= n_accept <= n_budget, got n={} N={}",
                self.n_accept, self.n_budget
            )));
        }
        if let Some(b) = self.batch_rows {
            if b < 1 {
                return Err(Error::config("batch_rows must be >= 1"));
            }
        }
        if !(self.fine_grid_step_min > 0.0) {
            return Err(Error::config("fine_grid_step_min must be > 0"));
        }
        Ok(())
    }

    /// Retained proportion p = n/N.
    pub fn proportion(&self) -> f64 {
        self.n_accept as f64 / self.n_budget as f64
    }
}

/// Shared forward-simulation context: fine grid covering the schedule, the
/// shared input/reference curve resampled onto it, and the frame averager.
#[derive(Debug, Clone)]
pub struct ForwardContext {
    pub grid: FineGrid,
    pub schedule: Arc<FrameSchedule>,
    pub input_fine: Vec<f64>,
    pub input_role: InputRole,
    pub averager: FrameAverager,
}

impl ForwardContext {
    pub fn new(schedule: Arc<FrameSchedule>, input: &InputCurve, step_min: f64) -> Result<Self> {
        let grid = FineGrid::covering(&schedule, step_min)?;
        let input_fine = input.resample(&grid)?;
        let averager = FrameAverager::new(&grid, &schedule)?;
        Ok(ForwardContext { grid, schedule, input_fine, input_role: input.role, averager })
    }

    /// Build from a curve already sampled on a fine grid.
    pub fn from_fine(
        schedule: Arc<FrameSchedule>,
        grid: FineGrid,
        input_fine: Vec<f64>,
        input_role: InputRole,
    ) -> Result<Self> {
        if input_fine.len() != grid.n_nodes() {
            return Err(Error::data("input curve length does not match fine grid"));
        }
        let averager = FrameAverager::new(&grid, &schedule)?;
        Ok(ForwardContext { grid, schedule, input_fine, input_role, averager })
    }

    pub fn n_frames(&self) -> usize {
        self.schedule.len()
    }
}

/// Simulate one Θ row onto the frame schedule (no noise).
///
/// `params` are the model's canonical parameters; `fine` is scratch of
/// grid length.
pub(crate) fn simulate_row(
    kind: ModelKind,
    params: &[f64],
    ctx: &ForwardContext,
    fine: &mut [f64],
    frames: &mut [f64],
) {
    match kind {
        ModelKind::TwoTcm => {
            let p = kinetics::TwoTcmParams {
                k1: params[0],
                k2: params[1],
                k3: params[2],
                k4: params[3],
                vb: params[4],
            };
            kinetics::twotcm_fine(&p, &ctx.input_fine, None, &ctx.grid, fine);
        }
        ModelKind::LpNtPet => {
            let p = kinetics::LpNtPetParams {
                r1: params[0],
                k2: params[1],
                k2a: params[2],
                gamma: params[3],
                t_d: params[4],
                t_p: params[5],
                alpha: params[6],
            };
            kinetics::lpntpet_fine(&p, &ctx.input_fine, &ctx.grid, fine);
        }
        ModelKind::Mrtm => {
            kinetics::mrtm_fine(params[0], params[1], params[2], &ctx.input_fine, &ctx.grid, fine);
        }
    }
    ctx.averager.apply(fine, frames);
}

/// Simulate rows `range` of Θ into `out` (row-major, f32), applying the
/// observation noise keyed by the global row index.
fn simulate_rows_into(
    theta: &ThetaMatrix,
    prior: &CompiledPrior,
    ctx: &ForwardContext,
    noise_model: &NoiseModel,
    noise_stream: &RngStream,
    first_row: usize,
    out: &mut [f32],
) -> Result<()> {
    let l = ctx.n_frames();
    let n_rows = out.len() / l;
    let cols: Vec<Vec<usize>> = (0..prior.n_models()).map(|m| prior.model_param_cols(m)).collect();

    const BLOCK: usize = 512;
    out.par_chunks_mut(l * BLOCK).enumerate().try_for_each(|(blk, chunk)| -> Result<()> {
        let mut fine = vec![0.0f64; ctx.grid.n_nodes()];
        let mut frames = vec![0.0f64; l];
        let mut params = [0.0f64; 8];
        let base = first_row + blk * BLOCK;
        for (r, row_out) in chunk.chunks_mut(l).enumerate() {
            let i = base + r;
            if i >= first_row + n_rows {
                break;
            }
            let row = theta.row(i);
            let m = row[0] as usize;
            let kind = theta.meta[m].kind;
            let pc = &cols[m];
            for (k, &c) in pc.iter().enumerate() {
                params[k] = row[c];
            }
            simulate_row(kind, &params[..pc.len()], ctx, &mut fine, &mut frames);
            noise::perturb_frames_in_place(&mut frames, &ctx.schedule, noise_model, noise_stream, i as u64);
            for (o, &v) in row_out.iter_mut().zip(&frames) {
                if !v.is_finite() {
                    return Err(Error::data(format!("simulation row {i} produced non-finite value {v}")));
                }
                *o = v as f32;
            }
        }
        Ok(())
    })
}

/// Pool of N simulated, noise-perturbed candidate curves plus their Θ rows.
#[derive(Debug)]
pub struct SimulationPool {
    pub theta: ThetaMatrix,
    /// N x L, row-major, single precision.
    pub curves: Vec<f32>,
    pub n_frames: usize,
}

impl SimulationPool {
    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.curves[i * self.n_frames..(i + 1) * self.n_frames]
    }

    pub fn n_rows(&self) -> usize {
        self.theta.n_rows()
    }
}

/// Build the full simulation pool: sample Θ, simulate every row, apply one
/// noise realization per row. Deterministic given `cfg.seed`; identical for
/// any `batch_rows` split.
pub fn build_pool(
    prior: &CompiledPrior,
    ctx: &ForwardContext,
    noise_model: &NoiseModel,
    cfg: &AbcConfig,
) -> Result<SimulationPool> {
    cfg.validate()?;
    noise_model.validate()?;
    if prior.input_role != ctx.input_role {
        return Err(Error::config(format!(
            "prior needs a {:?} curve but the context provides {:?}",
            prior.input_role, ctx.input_role
        )));
    }
    let n = cfg.n_budget;
    let l = ctx.n_frames();
    let theta_bytes = (n * (prior.columns.len())) as u64 * 8;
    let pool_bytes = (n * l) as u64 * 4;
    if theta_bytes + pool_bytes > cfg.memory_budget_bytes {
        return Err(Error::budget(format!(
            "pool needs {} bytes (theta {theta_bytes} + curves {pool_bytes}) over budget {}; \
             use abc_infer's streaming path or raise the budget",
            theta_bytes + pool_bytes,
            cfg.memory_budget_bytes
        )));
    }
    let stream = RngStream::from_seed(cfg.seed);
    let theta = sample_theta(prior, n, &stream)?;
    let noise_stream = stream.substream("pool-noise");
    let mut curves = vec![0.0f32; n * l];
    let step = cfg.batch_rows.unwrap_or(n).min(n);
    let mut r0 = 0;
    while r0 < n {
        let r1 = (r0 + step).min(n);
        simulate_rows_into(
            &theta,
            prior,
            ctx,
            noise_model,
            &noise_stream,
            r0,
            &mut curves[r0 * l..r1 * l],
        )?;
        r0 = r1;
    }
    Ok(SimulationPool { theta, curves, n_frames: l })
}

/// Materialized J x N distance matrix (row-major per voxel). Intended for
/// small validation cases; guarded by the memory budget.
pub fn distance_matrix(
    pool: &SimulationPool,
    observed: &[f32],
    l: usize,
    distance: Distance,
    memory_budget_bytes: u64,
) -> Result<Vec<f64>> {
    if l != pool.n_frames {
        return Err(Error::data(format!(
            "observed frame count {l} does not match pool frame count {}",
            pool.n_frames
        )));
    }
    if observed.len() % l != 0 {
        return Err(Error::data("observed matrix size is not a multiple of the frame count"));
    }
    let j = observed.len() / l;
    let n = pool.n_rows();
    let bytes = (j * n) as u64 * 8;
    if bytes > memory_budget_bytes {
        return Err(Error::budget(format!(
            "distance matrix needs {bytes} bytes over budget {memory_budget_bytes}"
        )));
    }
    let mut d = vec![0.0f64; j * n];
    d.par_chunks_mut(n).enumerate().for_each(|(vj, drow)| {
        let y = &observed[vj * l..(vj + 1) * l];
        for (i, di) in drow.iter_mut().enumerate() {
            *di = distance.eval(pool.row(i), y);
        }
    });
    Ok(d)
}

/// One accepted simulation for one voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedDraw {
    pub sim_index: u64,
    pub distance: f64,
}

/// Bounded selection of the n smallest (distance, index) pairs.
///
/// Ties at the cutoff break toward the lower simulation index, which makes
/// the selected set independent of scan order and batch partitioning.
#[derive(Debug, Clone)]
pub struct TopN {
    cap: usize,
    heap: Vec<(f64, u64)>, // max-heap on (distance, index)
}

#[inline]
fn entry_gt(a: (f64, u64), b: (f64, u64)) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => a.1 > b.1,
    }
}

impl TopN {
    pub fn new(cap: usize) -> Self {
        TopN { cap, heap: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn offer(&mut self, distance: f64, sim_index: u64) {
        let e = (distance, sim_index);
        if self.heap.len() < self.cap {
            self.heap.push(e);
            let mut k = self.heap.len() - 1;
            while k > 0 {
                let parent = (k - 1) / 2;
                if entry_gt(self.heap[k], self.heap[parent]) {
                    self.heap.swap(k, parent);
                    k = parent;
                } else {
                    break;
                }
            }
        } else if entry_gt(self.heap[0], e) {
            self.heap[0] = e;
            let mut k = 0;
            loop {
                let (l, r) = (2 * k + 1, 2 * k + 2);
                let mut largest = k;
                if l < self.heap.len() && entry_gt(self.heap[l], self.heap[largest]) {
                    largest = l;
                }
                if r < self.heap.len() && entry_gt(self.heap[r], self.heap[largest]) {
                    largest = r;
                }
                if largest == k {
                    break;
                }
                self.heap.swap(k, largest);
                k = largest;
            }
        }
    }

    /// Current worst accepted entry, if the heap is full.
    #[inline]
    pub fn cutoff(&self) -> Option<(f64, u64)> {
        if self.heap.len() == self.cap {
            self.heap.first().copied()
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Accepted draws in ascending (distance, index) order.
    pub fn into_sorted(self) -> Vec<AcceptedDraw> {
        let mut v = self.heap;
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v.into_iter().map(|(distance, sim_index)| AcceptedDraw { sim_index, distance }).collect()
    }
}

/// Select the n smallest distances of one voxel's full distance row.
pub fn select_top_n(distances: &[f64], n: usize) -> Result<Vec<AcceptedDraw>> {
    if n > distances.len() {
        return Err(Error::config(format!("n={n} exceeds pool size {}", distances.len())));
    }
    let mut top = TopN::new(n);
    for (i, &d) in distances.iter().enumerate() {
        top.offer(d, i as u64);
    }
    Ok(top.into_sorted())
}

/// Joint accepted posterior of all voxels: for each voxel, the n accepted
/// pool rows (by index into `theta`) sorted ascending by distance.
#[derive(Debug)]
pub struct AcceptedPosterior {
    pub theta: ThetaMatrix,
    pub n_accept: usize,
    pub n_voxels: usize,
    draws: Vec<AcceptedDraw>,
}

impl AcceptedPosterior {
    pub fn from_parts(theta: ThetaMatrix, n_accept: usize, per_voxel: Vec<Vec<AcceptedDraw>>) -> Result<Self> {
        let n_voxels = per_voxel.len();
        let mut draws = Vec::with_capacity(n_voxels * n_accept);
        for (j, v) in per_voxel.into_iter().enumerate() {
            if v.len() != n_accept {
                return Err(Error::data(format!(
                    "voxel {j} has {} accepted draws, expected {n_accept}",
                    v.len()
                )));
            }
            draws.extend(v);
        }
        Ok(AcceptedPosterior { theta, n_accept, n_voxels, draws })
    }

    #[inline]
    pub fn voxel(&self, j: usize) -> &[AcceptedDraw] {
        &self.draws[j * self.n_accept..(j + 1) * self.n_accept]
    }

    /// Truncate every voxel to its n' closest draws (valid because accepted
    /// sets are nested in n).
    pub fn truncated(&self, n_prime: usize) -> Result<AcceptedPosterior> {
        if n_prime < 1 || n_prime > self.n_accept {
            return Err(Error::config(format!(
                "truncation n'={n_prime} outside 1..={}",
                self.n_accept
            )));
        }
        let mut draws = Vec::with_capacity(self.n_voxels * n_prime);
        for j in 0..self.n_voxels {
            draws.extend_from_slice(&self.voxel(j)[..n_prime]);
        }
        Ok(AcceptedPosterior {
            theta: self.theta.clone(),
            n_accept: n_prime,
            n_voxels: self.n_voxels,
            draws,
        })
    }
}

/// Plan for the streaming scan: rows per batch and the fixed memory bill.
fn plan_batch_rows(cfg: &AbcConfig, j: usize, l: usize, n_cols: usize) -> Result<usize> {
    let n = cfg.n_budget;
    let theta_bytes = (n * n_cols) as u64 * 8;
    let obs_bytes = (j * l) as u64 * 4;
    let heap_bytes = (j * cfg.n_accept) as u64 * 16 * 2; // heaps + final draws
    let fixed = theta_bytes + obs_bytes + heap_bytes;
    let row_bytes = l as u64 * 4;
    let avail = cfg.memory_budget_bytes.saturating_sub(fixed);
    let max_rows = (avail / row_bytes) as usize;
    if max_rows < 1 {
        return Err(Error::budget(format!(
            "fixed allocations need {fixed} bytes, leaving no room for even one simulated row \
             ({row_bytes} bytes) under budget {}; minimal feasible batch needs {} bytes total",
            cfg.memory_budget_bytes,
            fixed + row_bytes
        )));
    }
    match cfg.batch_rows {
        Some(b) => {
            if b > max_rows {
                return Err(Error::budget(format!(
                    "batch_rows={b} needs {} bytes over budget {}; minimal feasible batch is 1, \
                     largest feasible is {max_rows}",
                    fixed + b as u64 * row_bytes,
                    cfg.memory_budget_bytes
                )));
            }
            Ok(b.min(n))
        }
        // Default cap keeps batches cache-friendly even under huge budgets.
        None => Ok(max_rows.min(n).min(65_536)),
    }
}

/// End-to-end voxelwise inference: sample Θ, stream simulated batches, and
/// keep each voxel's n closest rows. Output is identical for any batch size
/// and worker count given the seed.
pub fn abc_infer(
    dataset: &TacDataset,
    prior: &CompiledPrior,
    noise_model: &NoiseModel,
    cfg: &AbcConfig,
) -> Result<AcceptedPosterior> {
    cfg.validate()?;
    noise_model.validate()?;
    let masked = dataset.masked_indices();
    let j = masked.len();
    if j == 0 {
        return Err(Error::data("dataset mask selects no voxels"));
    }
    if prior.input_role != dataset.input.role {
        return Err(Error::config(format!(
            "prior needs a {:?} curve but the dataset input is {:?}",
            prior.input_role, dataset.input.role
        )));
    }
    let ctx = ForwardContext::new(dataset.schedule.clone(), &dataset.input, cfg.fine_grid_step_min)?;
    let l = ctx.n_frames();
    let batch_rows = plan_batch_rows(cfg, j, l, prior.columns.len())?;

    let stream = RngStream::from_seed(cfg.seed);
    let theta = sample_theta(prior, cfg.n_budget, &stream)?;
    let noise_stream = stream.substream("pool-noise");

    // Contiguous copy of the masked observations, f32 to match the pool.
    let mut observed = vec![0.0f32; j * l];
    for (row, &v) in masked.iter().enumerate() {
        observed[row * l..(row + 1) * l].copy_from_slice(dataset.voxel_tac(v));
    }

    let mut heaps: Vec<TopN> = (0..j).map(|_| TopN::new(cfg.n_accept)).collect();
    let mut batch = vec![0.0f32; batch_rows * l];
    let mut r0 = 0usize;
    while r0 < cfg.n_budget {
        let r1 = (r0 + batch_rows).min(cfg.n_budget);
        let rows = r1 - r0;
        simulate_rows_into(&theta, prior, &ctx, noise_model, &noise_stream, r0, &mut batch[..rows * l])?;
        let batch_ref = &batch[..rows * l];
        heaps.par_iter_mut().enumerate().for_each(|(vj, heap)| {
            let y = &observed[vj * l..(vj + 1) * l];
            for r in 0..rows {
                let d = cfg.distance.eval(&batch_ref[r * l..(r + 1) * l], y);
                heap.offer(d, (r0 + r) as u64);
            }
        });
        r0 = r1;
    }

    let per_voxel: Vec<Vec<AcceptedDraw>> = heaps.into_par_iter().map(TopN::into_sorted).collect();
    AcceptedPosterior::from_parts(theta, cfg.n_accept, per_voxel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{feng_input, FengParams};
    use crate::priors::preset;

    fn fdg_ctx(schedule: Arc<FrameSchedule>) -> ForwardContext {
        let grid = FineGrid::covering(&schedule, 0.05).unwrap();
        let p = FengParams::new([4e4, 1e4, 8e3], [1.0, 0.03, 0.01]).unwrap();
        let input = feng_input(&p, &grid);
        ForwardContext::from_fine(schedule, grid, input, InputRole::Plasma).unwrap()
    }

    fn small_cfg(n: usize, acc: usize, seed: u64) -> AbcConfig {
        AbcConfig {
            n_budget: n,
            n_accept: acc,
            distance: Distance::L1,
            batch_rows: None,
            memory_budget_bytes: default_budget(),
            fine_grid_step_min: 0.05,
            seed,
        }
    }

    #[test]
    fn deterministic_pool_row_without_noise() {
        let schedule = Arc::new(FrameSchedule::uniform(20, 1.0).unwrap());
        let ctx = fdg_ctx(schedule.clone());
        let mut spec = preset("fdg-2tcm-wide").unwrap();
        spec.models.truncate(1);
        for (_, d) in spec.models[0].params.iter_mut() {
            if let crate::priors::Dist::Uniform { lo, .. } = d {
                *d = crate::priors::Dist::Fixed { value: (*lo).max(0.05) };
            }
        }
        let prior = spec.compile().unwrap();
        let pool = build_pool(&prior, &ctx, &NoiseModel::None, &small_cfg(1, 1, 9)).unwrap();
        let row = pool.theta.row(0);
        let cols = prior.model_param_cols(0);
        let p = kinetics::TwoTcmParams {
            k1: row[cols[0]],
            k2: row[cols[1]],
            k3: row[cols[2]],
            k4: row[cols[3]],
            vb: row[cols[4]],
        };
        let direct = kinetics::simulate_2tcm(&p, &ctx.input_fine, &ctx.grid, &schedule).unwrap();
        for (a, &b) in direct.values.iter().zip(pool.row(0)) {
            assert!((*a as f32 - b).abs() == 0.0, "{a} vs {b}");
        }
    }

    #[test]
    fn pool_batching_is_bit_identical() {
        let schedule = Arc::new(FrameSchedule::uniform(12, 1.0).unwrap());
        let ctx = fdg_ctx(schedule);
        let prior = preset("fdg-2tcm-wide").unwrap().compile().unwrap();
        let noise = NoiseModel::Gaussian { level: 3.0, half_life_min: 109.8, style: Default::default() };
        let mut a_cfg = small_cfg(2000, 10, 42);
        a_cfg.batch_rows = Some(100);
        let mut b_cfg = small_cfg(2000, 10, 42);
        b_cfg.batch_rows = Some(2000);
        let a = build_pool(&prior, &ctx, &noise, &a_cfg).unwrap();
        let b = build_pool(&prior, &ctx, &noise, &b_cfg).unwrap();
        assert_eq!(a.curves, b.curves);
    }

    #[test]
    fn pool_sanity_under_wide_priors() {
        let schedule = Arc::new(FrameSchedule::uniform(15, 1.0).unwrap());
        let ctx = fdg_ctx(schedule);
        let prior = preset("fdg-2tcm-wide").unwrap().compile().unwrap();
        let noise = NoiseModel::Gaussian { level: 7.0, half_life_min: 109.8, style: Default::default() };
        let pool = build_pool(&prior, &ctx, &noise, &small_cfg(10_000, 18, 7)).unwrap();
        assert!(pool.curves.iter().all(|v| v.is_finite()));
        let frac0 = (0..pool.n_rows()).filter(|&i| pool.theta.model_of(i) == 0).count() as f64 / 10_000.0;
        assert!((frac0 - 0.5).abs() < 0.02, "{frac0}");
    }

    #[test]
    fn distance_kernel_basics() {
        assert_eq!(Distance::L1.eval(&[1.0], &[2.0]), 1.0);
        assert_eq!(Distance::L1.eval(&[3.0], &[2.0]), 1.0);
        let a = [1.0f32, 2.0, 3.0];
        assert_eq!(Distance::L1.eval(&a, &a), 0.0);
        assert!((Distance::L2.eval(&[0.0, 3.0], &[4.0, 0.0]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn distance_matrix_matches_naive_loop() {
        let l = 7;
        let n = 5;
        let j = 5;
        let s = RngStream::from_seed(17).substream("dm");
        let curves: Vec<f32> = (0..n * l).map(|i| s.uniform_at(&[0, i as u64]) as f32).collect();
        let observed: Vec<f32> = (0..j * l).map(|i| s.uniform_at(&[1, i as u64]) as f32).collect();
        let theta = sample_theta(
            &preset("fdg-2tcm-wide").unwrap().compile().unwrap(),
            n,
            &RngStream::from_seed(1),
        )
        .unwrap();
        let pool = SimulationPool { theta, curves: curves.clone(), n_frames: l };
        let d = distance_matrix(&pool, &observed, l, Distance::L1, u64::MAX).unwrap();
        for vj in 0..j {
            for i in 0..n {
                let mut acc = 0.0f64;
                for f in 0..l {
                    acc += (curves[i * l + f] as f64 - observed[vj * l + f] as f64).abs();
                }
                assert!((d[vj * n + i] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn top_n_equals_full_sort() {
        let s = RngStream::from_seed(23).substream("topn");
        let d: Vec<f64> = (0..100).map(|i| s.uniform_at(&[i])).collect();
        let got = select_top_n(&d, 5).unwrap();
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
        for (k, g) in got.iter().enumerate() {
            assert_eq!(g.sim_index as usize, idx[k]);
            assert_eq!(g.distance, d[idx[k]]);
        }
        assert!(select_top_n(&d, 101).is_err());
    }

    #[test]
    fn top_n_all_rows_when_n_equals_pool() {
        let d = vec![0.5, 0.1, 0.9, 0.1];
        let got = select_top_n(&d, 4).unwrap();
        let dists: Vec<f64> = got.iter().map(|g| g.distance).collect();
        assert_eq!(dists, vec![0.1, 0.1, 0.5, 0.9]);
        // Equal distances keep ascending simulation index.
        assert_eq!(got[0].sim_index, 1);
        assert_eq!(got[1].sim_index, 3);
    }

    #[test]
    fn tie_at_cutoff_keeps_lower_index() {
        let d = vec![0.3, 0.2, 0.3, 0.1];
        let got = select_top_n(&d, 2).unwrap();
        assert_eq!(got[0].sim_index, 3);
        assert_eq!(got[1].sim_index, 1);
        let got3 = select_top_n(&d, 3).unwrap();
        assert_eq!(got3[2].sim_index, 0, "index 0 beats index 2 at equal distance");
    }

    #[test]
    fn monotone_refinement_by_truncation() {
        let schedule = Arc::new(FrameSchedule::uniform(10, 1.0).unwrap());
        let dataset = TacDataset::synthetic_1d_for_tests(schedule, 6, 3);
        let prior = preset("fdg-2tcm-wide").unwrap().compile().unwrap();
        let acc = abc_infer(&dataset, &prior, &NoiseModel::None, &small_cfg(500, 20, 5)).unwrap();
        let small = acc.truncated(7).unwrap();
        for j in 0..acc.n_voxels {
            assert_eq!(&acc.voxel(j)[..7], small.voxel(j));
        }
    }

    #[test]
    fn infer_recovers_pool_member_exactly() {
        // Observations that are themselves pool members: best distance 0 and
        // the generating theta row is recovered.
        let schedule = Arc::new(FrameSchedule::uniform(16, 1.0).unwrap());
        let ctx = fdg_ctx(schedule.clone());
        let prior = preset("fdg-2tcm-wide").unwrap().compile().unwrap();
        let cfg = small_cfg(800, 5, 33);
        let pool = build_pool(&prior, &ctx, &NoiseModel::None, &cfg).unwrap();
        let picks = [3usize, 200, 799];
        let dataset = TacDataset::from_pool_rows_for_tests(&pool, &picks, ctx.clone());
        let acc = abc_infer(&dataset, &prior, &NoiseModel::None, &cfg).unwrap();
        for (j, &i) in picks.iter().enumerate() {
            let best = acc.voxel(j)[0];
            assert_eq!(best.distance, 0.0);
            assert_eq!(best.sim_index as usize, i);
        }
    }

    #[test]
    fn batch_and_worker_invariance() {
        let schedule = Arc::new(FrameSchedule::uniform(10, 1.0).unwrap());
        let dataset = TacDataset::synthetic_1d_for_tests(schedule, 9, 11);
        let prior = preset("fdg-2tcm-wide").unwrap().compile().unwrap();
        let noise = NoiseModel::Gaussian { level: 2.0, half_life_min: 109.8, style: Default::default() };
        let mut base = small_cfg(1500, 12, 77);
        let reference = abc_infer(&dataset, &prior, &noise, &base).unwrap();
        for rows in [37usize, 1000, 1500] {
            base.batch_rows = Some(rows);
            let got = abc_infer(&dataset, &prior, &noise, &base).unwrap();
            for j in 0..reference.n_voxels {
                assert_eq!(reference.voxel(j), got.voxel(j), "batch_rows={rows}");
            }
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        base.batch_rows = Some(37);
        let got = pool.install(|| abc_infer(&dataset, &prior, &noise, &base)).unwrap();
        for j in 0..reference.n_voxels {
            assert_eq!(reference.voxel(j), got.voxel(j));
        }
    }

    #[test]
    fn budget_violation_reports_minimal_batch() {
        let schedule = Arc::new(FrameSchedule::uniform(10, 1.0).unwrap());
        let dataset = TacDataset::synthetic_1d_for_tests(schedule, 4, 2);
        let prior = preset("fdg-2tcm-wide").unwrap().compile().unwrap();
        let mut cfg = small_cfg(1000, 5, 1);
        cfg.memory_budget_bytes = 1024; // absurdly small
        match abc_infer(&dataset, &prior, &NoiseModel::None, &cfg) {
            Err(Error::Budget(msg)) => assert!(msg.contains("minimal feasible batch")),
            other => panic!("expected budget error, got {other:?}"),
        }
    }
}

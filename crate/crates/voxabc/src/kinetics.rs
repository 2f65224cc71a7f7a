//! Forward simulators for the kinetic models and input functions.
//!
//! All models are simulated on a uniform fine time grid ([`FineGrid`]) and
//! then averaged onto the acquisition frames ([`FrameSchedule`]). Input and
//! reference curves are treated as piecewise linear between grid nodes; the
//! 2TCM solution uses the closed-form bi-exponential impulse response with
//! convolution weights that are exact for piecewise-linear inputs, so the
//! discretization error is set by the input sampling, not the stepper.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Acquisition timebase shared by all TACs: frame starts and durations in
/// minutes. Frames must be non-overlapping and in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSchedule {
    starts: Vec<f64>,
    durations: Vec<f64>,
}

impl FrameSchedule {
    pub fn new(starts: Vec<f64>, durations: Vec<f64>) -> Result<Self> {
        if starts.is_empty() || starts.len() != durations.len() {
            return Err(Error::config("frame schedule: empty or mismatched start/duration lists"));
        }
        for (i, (&s, &d)) in starts.iter().zip(&durations).enumerate() {
            if !s.is_finite() || !d.is_finite() || d <= 0.0 || s < 0.0 {
                return Err(Error::config(format!("frame {i}: invalid start {s} or duration {d}")));
            }
            if i > 0 {
                let prev_end = starts[i - 1] + durations[i - 1];
                if s <= starts[i - 1] {
                    return Err(Error::config(format!("frame {i}: starts not strictly increasing")));
                }
                if s < prev_end - 1e-9 {
                    return Err(Error::config(format!("frame {i}: overlaps previous frame")));
                }
            }
        }
        Ok(FrameSchedule { starts, durations })
    }

    /// `count` back-to-back frames of equal duration starting at t = 0.
    pub fn uniform(count: usize, duration_min: f64) -> Result<Self> {
        let starts = (0..count).map(|i| i as f64 * duration_min).collect();
        let durations = vec![duration_min; count];
        FrameSchedule::new(starts, durations)
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn starts(&self) -> &[f64] {
        &self.starts
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn mid_time(&self, frame: usize) -> f64 {
        self.starts[frame] + 0.5 * self.durations[frame]
    }

    pub fn mid_times(&self) -> Vec<f64> {
        (0..self.len()).map(|f| self.mid_time(f)).collect()
    }

    /// End of the last frame in minutes.
    pub fn end_time(&self) -> f64 {
        let last = self.len() - 1;
        self.starts[last] + self.durations[last]
    }

    pub fn min_duration(&self) -> f64 {
        self.durations.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// One time–activity curve on a frame schedule (kBq/mL per frame).
/// Values must be finite; negatives are allowed (noise can produce them).
#[derive(Debug, Clone)]
pub struct Tac {
    pub values: Vec<f64>,
    pub schedule: Arc<FrameSchedule>,
}

impl Tac {
    pub fn new(values: Vec<f64>, schedule: Arc<FrameSchedule>) -> Result<Self> {
        if values.len() != schedule.len() {
            return Err(Error::data(format!(
                "TAC has {} values but schedule has {} frames",
                values.len(),
                schedule.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::data(format!("TAC contains non-finite value {v}")));
        }
        Ok(Tac { values, schedule })
    }
}

/// Uniform simulation grid: nodes at 0, step, 2*step, ... (minutes).
#[derive(Debug, Clone, PartialEq)]
pub struct FineGrid {
    step: f64,
    n_nodes: usize,
}

impl FineGrid {
    pub fn new(step: f64, t_end: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::config(format!("fine grid step must be positive, got {step}")));
        }
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::config(format!("fine grid end must be positive, got {t_end}")));
        }
        let n_nodes = (t_end / step).ceil() as usize + 1;
        Ok(FineGrid { step, n_nodes })
    }

    /// Smallest grid with the given step that covers the schedule. Errors if
    /// the step exceeds the shortest frame duration.
    pub fn covering(schedule: &FrameSchedule, step: f64) -> Result<Self> {
        let grid = FineGrid::new(step, schedule.end_time())?;
        if step > schedule.min_duration() + 1e-12 {
            return Err(Error::config(format!(
                "fine grid step {} exceeds shortest frame duration {}",
                step,
                schedule.min_duration()
            )));
        }
        Ok(grid)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn time(&self, node: usize) -> f64 {
        node as f64 * self.step
    }

    pub fn t_end(&self) -> f64 {
        (self.n_nodes - 1) as f64 * self.step
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|k| self.time(k)).collect()
    }
}

/// 2TCM rate constants. `k4 = 0` is the irreversible case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoTcmParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub vb: f64,
}

impl TwoTcmParams {
    pub fn new(k1: f64, k2: f64, k3: f64, k4: f64, vb: f64) -> Result<Self> {
        if !(k1 >= 0.0 && k2 >= 0.0 && k3 >= 0.0 && k4 >= 0.0) {
            return Err(Error::config(format!("2TCM rates must be non-negative: ({k1},{k2},{k3},{k4})")));
        }
        if !(vb > 0.0 && vb < 1.0) {
            return Err(Error::config(format!("Vb must lie in (0,1), got {vb}")));
        }
        Ok(TwoTcmParams { k1, k2, k3, k4, vb })
    }
}

/// lp-ntPET parameters; `gamma = 0` reduces to MRTM. `BP_ND = k2/k2a - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpNtPetParams {
    pub r1: f64,
    pub k2: f64,
    pub k2a: f64,
    pub gamma: f64,
    pub t_d: f64,
    pub t_p: f64,
    pub alpha: f64,
}

impl LpNtPetParams {
    pub fn new(r1: f64, k2: f64, k2a: f64, gamma: f64, t_d: f64, t_p: f64, alpha: f64) -> Result<Self> {
        if !(r1 >= 0.0 && k2 >= 0.0 && k2a >= 0.0 && gamma >= 0.0) {
            return Err(Error::config(format!(
                "lp-ntPET coefficients must be non-negative: ({r1},{k2},{k2a},{gamma})"
            )));
        }
        check_activation_shape(t_d, t_p, alpha)?;
        Ok(LpNtPetParams { r1, k2, k2a, gamma, t_d, t_p, alpha })
    }
}

fn check_activation_shape(t_d: f64, t_p: f64, alpha: f64) -> Result<()> {
    if !(t_d >= 0.0 && t_p > t_d && alpha > 0.0) {
        return Err(Error::config(format!(
            "activation shape requires tP > tD >= 0 and alpha > 0, got tD={t_d}, tP={t_p}, alpha={alpha}"
        )));
    }
    Ok(())
}

/// Feng arterial-input model coefficients (amplitudes `beta`, rates `kappa`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FengParams {
    pub beta: [f64; 3],
    pub kappa: [f64; 3],
}

impl FengParams {
    pub fn new(beta: [f64; 3], kappa: [f64; 3]) -> Result<Self> {
        if beta.iter().chain(&kappa).any(|v| !v.is_finite()) {
            return Err(Error::config("Feng parameters must be finite"));
        }
        Ok(FengParams { beta, kappa })
    }

    /// kappa1 > kappa2 > kappa3 > 0 is the physiological ordering; callers
    /// may warn when this does not hold (it is not rejected).
    pub fn is_well_ordered(&self) -> bool {
        self.kappa[0] > self.kappa[1] && self.kappa[1] > self.kappa[2] && self.kappa[2] > 0.0
    }
}

/// Feng model value at time `t` (minutes).
///
/// Written in the grouped form `b1*t*e1 + b2*(e2-e1) + b3*(e3-e1)` so the
/// value at t = 0 is exactly zero in floating point.
pub fn feng_value(p: &FengParams, t: f64) -> f64 {
    let e1 = (-p.kappa[0] * t).exp();
    let e2 = (-p.kappa[1] * t).exp();
    let e3 = (-p.kappa[2] * t).exp();
    p.beta[0] * t * e1 + p.beta[1] * (e2 - e1) + p.beta[2] * (e3 - e1)
}

/// Feng input curve sampled on the fine grid.
pub fn feng_input(p: &FengParams, grid: &FineGrid) -> Vec<f64> {
    (0..grid.n_nodes()).map(|k| feng_value(p, grid.time(k))).collect()
}

/// Peak-normalized gamma-variate activation profile: 0 for t <= tD, maximum
/// of exactly 1 at t = tP.
pub fn gamma_variate(t_d: f64, t_p: f64, alpha: f64, t: f64) -> Result<f64> {
    check_activation_shape(t_d, t_p, alpha)?;
    Ok(gamma_variate_unchecked(t_d, t_p, alpha, t))
}

#[inline]
pub(crate) fn gamma_variate_unchecked(t_d: f64, t_p: f64, alpha: f64, t: f64) -> f64 {
    if t <= t_d {
        return 0.0;
    }
    let x = (t - t_d) / (t_p - t_d);
    if t == t_p {
        return 1.0;
    }
    // x^alpha * e^(alpha(1-x)) = e^(alpha(1 - x + ln x))
    (alpha * (1.0 - x + x.ln())).exp()
}

// ---------------------------------------------------------------------------
// Exponential-integrator convolution weights.
//
// phi1(x) = (1 - e^-x)/x
// phi2(x) = (1 - (1+x)e^-x)/x^2
// phi3(x) = (2 - (2+2x+x^2)e^-x)/x^3
//
// Small-x branches use series to avoid cancellation; all three tend to
// 1, 1/2, 1/3 scaled trapezoid limits as x -> 0.
// ---------------------------------------------------------------------------

#[inline]
fn phi1(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

#[inline]
fn phi2(x: f64) -> f64 {
    if x < 0.02 {
        0.5 - x / 3.0 + x * x / 8.0 - x * x * x / 30.0 + x * x * x * x / 144.0
    } else {
        (1.0 - (1.0 + x) * (-x).exp()) / (x * x)
    }
}

#[inline]
fn phi3(x: f64) -> f64 {
    if x < 0.02 {
        1.0 / 3.0 - x / 4.0 + x * x / 10.0 - x * x * x / 36.0 + x * x * x * x / 168.0
    } else {
        (2.0 - (2.0 + 2.0 * x + x * x) * (-x).exp()) / (x * x * x)
    }
}

/// Convolution of a piecewise-linear curve `u` with `e^(-theta t)` on the
/// grid, exact for piecewise-linear `u`. Adds `scale * result` into `out`.
fn add_exp_conv(theta: f64, scale: f64, u: &[f64], step: f64, out: &mut [f64]) {
    let x = theta * step;
    let decay = (-x).exp();
    let w_prev = step * phi2(x);
    let w_next = step * (phi1(x) - phi2(x));
    let mut y = 0.0;
    // out[0] += 0: convolution starts at zero.
    for n in 0..u.len() - 1 {
        y = decay * y + w_prev * u[n] + w_next * u[n + 1];
        out[n + 1] += scale * y;
    }
}

/// Convolution with `t e^(-theta t)` (repeated-eigenvalue branch), exact for
/// piecewise-linear `u`. Adds `scale * result` into `out`.
fn add_texp_conv(theta: f64, scale: f64, u: &[f64], step: f64, out: &mut [f64]) {
    let x = theta * step;
    let decay = (-x).exp();
    let wy_prev = step * phi2(x);
    let wy_next = step * (phi1(x) - phi2(x));
    let wz_prev = step * step * phi3(x);
    let wz_next = step * step * (phi2(x) - phi3(x));
    let (mut y, mut z) = (0.0, 0.0);
    for n in 0..u.len() - 1 {
        z = decay * (z + step * y) + wz_prev * u[n] + wz_next * u[n + 1];
        y = decay * y + wy_prev * u[n] + wy_next * u[n + 1];
        out[n + 1] += scale * z;
    }
}

/// Relative eigenvalue gap below which the repeated-root branch is used.
const REPEATED_ROOT_REL: f64 = 1e-12;

/// 2TCM tissue + blood activity on the fine grid, writing into `out`.
///
/// `input` is the plasma curve on the grid; `whole_blood` defaults to the
/// plasma curve when `None`.
pub(crate) fn twotcm_fine(
    p: &TwoTcmParams,
    input: &[f64],
    whole_blood: Option<&[f64]>,
    grid: &FineGrid,
    out: &mut [f64],
) {
    debug_assert_eq!(input.len(), grid.n_nodes());
    debug_assert_eq!(out.len(), grid.n_nodes());
    out.fill(0.0);
    let s = p.k2 + p.k3 + p.k4;
    let disc = (s * s - 4.0 * p.k2 * p.k4).max(0.0);
    let gap = disc.sqrt();
    let slow = 0.5 * (s - gap);
    let fast = 0.5 * (s + gap);
    let tissue_scale = 1.0 - p.vb;
    if gap <= REPEATED_ROOT_REL * (fast + slow) {
        // Repeated eigenvalue: IRF = K1 e^(-th t) (1 + (k3+k4-th) t).
        let th = 0.5 * s;
        add_exp_conv(th, tissue_scale * p.k1, input, grid.step(), out);
        add_texp_conv(th, tissue_scale * p.k1 * (p.k3 + p.k4 - th), input, grid.step(), out);
    } else {
        let a_slow = p.k1 * (p.k3 + p.k4 - slow) / gap;
        let a_fast = p.k1 * (fast - p.k3 - p.k4) / gap;
        add_exp_conv(slow, tissue_scale * a_slow, input, grid.step(), out);
        add_exp_conv(fast, tissue_scale * a_fast, input, grid.step(), out);
    }
    let wb = whole_blood.unwrap_or(input);
    for (o, &b) in out.iter_mut().zip(wb) {
        *o += p.vb * b;
    }
}

/// Simulate the 2TCM and average onto the acquisition frames.
pub fn simulate_2tcm(
    p: &TwoTcmParams,
    input: &[f64],
    grid: &FineGrid,
    schedule: &Arc<FrameSchedule>,
) -> Result<Tac> {
    simulate_2tcm_with_wb(p, input, None, grid, schedule)
}

/// As [`simulate_2tcm`] with an explicit whole-blood curve for the blood
/// volume term (defaults to the plasma input).
pub fn simulate_2tcm_with_wb(
    p: &TwoTcmParams,
    input: &[f64],
    whole_blood: Option<&[f64]>,
    grid: &FineGrid,
    schedule: &Arc<FrameSchedule>,
) -> Result<Tac> {
    if input.len() != grid.n_nodes() {
        return Err(Error::data("input curve length does not match fine grid"));
    }
    if let Some(wb) = whole_blood {
        if wb.len() != grid.n_nodes() {
            return Err(Error::data("whole-blood curve length does not match fine grid"));
        }
    }
    let mut fine = vec![0.0; grid.n_nodes()];
    twotcm_fine(p, input, whole_blood, grid, &mut fine);
    let avgr = FrameAverager::new(grid, schedule)?;
    let mut frames = vec![0.0; schedule.len()];
    avgr.apply(&fine, &mut frames);
    Tac::new(frames, Arc::clone(schedule))
}

/// lp-ntPET target-tissue curve on the fine grid (semi-implicit trapezoid
/// stepping of the differentiated model), writing into `out`.
///
/// With `gamma = 0` the update is arithmetically identical to
/// [`mrtm_fine`]; the MRTM path is the same recurrence with a constant
/// efflux coefficient.
pub(crate) fn lpntpet_fine(p: &LpNtPetParams, reference: &[f64], grid: &FineGrid, out: &mut [f64]) {
    debug_assert_eq!(reference.len(), grid.n_nodes());
    let step = grid.step();
    let half = 0.5 * step;
    let mut c = p.r1 * reference[0];
    out[0] = c;
    let mut a_prev = p.k2a + p.gamma * gamma_variate_unchecked(p.t_d, p.t_p, p.alpha, 0.0);
    for n in 0..reference.len() - 1 {
        let t_next = grid.time(n + 1);
        let a_next = p.k2a + p.gamma * gamma_variate_unchecked(p.t_d, p.t_p, p.alpha, t_next);
        let rhs = c * (1.0 - half * a_prev)
            + p.r1 * (reference[n + 1] - reference[n])
            + half * p.k2 * (reference[n] + reference[n + 1]);
        c = rhs / (1.0 + half * a_next);
        out[n + 1] = c;
        a_prev = a_next;
    }
}

/// MRTM target-tissue curve on the fine grid (lp-ntPET with gamma = 0).
pub(crate) fn mrtm_fine(r1: f64, k2: f64, k2a: f64, reference: &[f64], grid: &FineGrid, out: &mut [f64]) {
    let step = grid.step();
    let half = 0.5 * step;
    let mut c = r1 * reference[0];
    out[0] = c;
    for n in 0..reference.len() - 1 {
        let rhs = c * (1.0 - half * k2a)
            + r1 * (reference[n + 1] - reference[n])
            + half * k2 * (reference[n] + reference[n + 1]);
        c = rhs / (1.0 + half * k2a);
        out[n + 1] = c;
    }
}

/// Simulate lp-ntPET and average onto the acquisition frames.
pub fn simulate_lpntpet(
    p: &LpNtPetParams,
    reference: &[f64],
    grid: &FineGrid,
    schedule: &Arc<FrameSchedule>,
) -> Result<Tac> {
    if reference.len() != grid.n_nodes() {
        return Err(Error::data("reference curve length does not match fine grid"));
    }
    let mut fine = vec![0.0; grid.n_nodes()];
    lpntpet_fine(p, reference, grid, &mut fine);
    let avgr = FrameAverager::new(grid, schedule)?;
    let mut frames = vec![0.0; schedule.len()];
    avgr.apply(&fine, &mut frames);
    Tac::new(frames, Arc::clone(schedule))
}

/// Simulate MRTM and average onto the acquisition frames.
pub fn simulate_mrtm(
    r1: f64,
    k2: f64,
    k2a: f64,
    reference: &[f64],
    grid: &FineGrid,
    schedule: &Arc<FrameSchedule>,
) -> Result<Tac> {
    if reference.len() != grid.n_nodes() {
        return Err(Error::data("reference curve length does not match fine grid"));
    }
    let mut fine = vec![0.0; grid.n_nodes()];
    mrtm_fine(r1, k2, k2a, reference, grid, &mut fine);
    let avgr = FrameAverager::new(grid, schedule)?;
    let mut frames = vec![0.0; schedule.len()];
    avgr.apply(&fine, &mut frames);
    Tac::new(frames, Arc::clone(schedule))
}

/// Precomputed per-frame trapezoid-mean weights over fine-grid nodes.
///
/// Frame value = sum of `weights[k] * curve[first + k]`; weights integrate a
/// piecewise-linear curve over [start, start + duration] exactly and divide
/// by the duration. Linear in the curve, so it can be reused across many
/// simulations of the same geometry.
#[derive(Debug, Clone)]
pub struct FrameAverager {
    spans: Vec<(usize, Vec<f64>)>,
}

impl FrameAverager {
    pub fn new(grid: &FineGrid, schedule: &FrameSchedule) -> Result<Self> {
        let step = grid.step();
        let t_end = grid.t_end();
        let mut spans = Vec::with_capacity(schedule.len());
        for f in 0..schedule.len() {
            let a = schedule.starts()[f];
            let b = a + schedule.durations()[f];
            if b > t_end * (1.0 + 1e-12) + 1e-12 {
                return Err(Error::data(format!(
                    "frame {f} ends at {b} min beyond fine grid end {t_end} min"
                )));
            }
            let b = b.min(t_end);
            let k_lo = ((a / step).floor() as usize).min(grid.n_nodes() - 2);
            let mut weights = vec![0.0; 2];
            let mut k = k_lo;
            loop {
                let t0 = k as f64 * step;
                let t1 = t0 + step;
                let lo = a.max(t0);
                let hi = b.min(t1);
                if hi > lo {
                    let u_lo = (lo - t0) / step;
                    let u_hi = (hi - t0) / step;
                    let w = 0.5 * (hi - lo);
                    let idx = k - k_lo;
                    if weights.len() < idx + 2 {
                        weights.resize(idx + 2, 0.0);
                    }
                    weights[idx] += w * (2.0 - u_lo - u_hi);
                    weights[idx + 1] += w * (u_lo + u_hi);
                }
                if t1 >= b || k + 2 >= grid.n_nodes() {
                    break;
                }
                k += 1;
            }
            let dur = schedule.durations()[f];
            for w in &mut weights {
                *w /= dur;
            }
            spans.push((k_lo, weights));
        }
        Ok(FrameAverager { spans })
    }

    pub fn apply(&self, curve: &[f64], out: &mut [f64]) {
        for (f, (first, weights)) in self.spans.iter().enumerate() {
            let seg = &curve[*first..*first + weights.len()];
            let mut acc = 0.0;
            for (w, v) in weights.iter().zip(seg) {
                acc += w * v;
            }
            out[f] = acc;
        }
    }
}

/// Per-frame trapezoidal mean of a fine-grid curve.
pub fn frame_average(curve: &[f64], grid: &FineGrid, schedule: &Arc<FrameSchedule>) -> Result<Tac> {
    if curve.len() != grid.n_nodes() {
        return Err(Error::data("curve length does not match fine grid"));
    }
    let avgr = FrameAverager::new(grid, schedule)?;
    let mut out = vec![0.0; schedule.len()];
    avgr.apply(curve, &mut out);
    Tac::new(out, Arc::clone(schedule))
}

//! Patlak graphical analysis: ordinary least squares of C_t(t)/C_p(t)
//! against the normalized cumulative input integral, over frames with
//! mid-time >= t*.

use crate::error::{Error, Result};
use crate::kinetics::Tac;

/// Cumulative trapezoid over frame mid-times, anchored at (t=0, value=0).
/// The anchor matters for bolus inputs that start at zero activity.
pub(crate) fn cumtrapz_anchored(mids: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.5 * mids[0] * values[0];
    out.push(acc);
    for f in 1..values.len() {
        acc += 0.5 * (mids[f] - mids[f - 1]) * (values[f] + values[f - 1]);
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatlakFit {
    /// Slope: net influx rate K_i under irreversible trapping.
    pub ki: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn patlak_ki(tac: &Tac, input: &Tac, t_star_min: f64) -> Result<PatlakFit> {
    if tac.values.len() != input.values.len() {
        return Err(Error::data("TAC and input frame counts differ"));
    }
    let schedule = &tac.schedule;
    let mids = schedule.mid_times();
    let cum = cumtrapz_anchored(&mids, &input.values);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for f in 0..mids.len() {
        if mids[f] < t_star_min {
            continue;
        }
        if input.values[f] <= 0.0 {
            return Err(Error::data(format!(
                "nonpositive input value {} at frame {f} after t*",
                input.values[f]
            )));
        }
        xs.push(cum[f] / input.values[f]);
        ys.push(tac.values[f] / input.values[f]);
    }
    if xs.len() < 3 {
        return Err(Error::data(format!(
            "only {} frames after t* = {t_star_min} min; Patlak needs >= 3",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::data("degenerate Patlak abscissa (constant x)"));
    }
    let ki = sxy / sxx;
    let intercept = my - ki * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(PatlakFit { ki, intercept, r_squared, n_points: xs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{feng_input, simulate_2tcm, FengParams, FineGrid, FrameSchedule, TwoTcmParams};
    use std::sync::Arc;

    #[test]
    fn exactly_linear_data_is_recovered_to_machine_precision() {
        let schedule = Arc::new(FrameSchedule::uniform(30, 2.0).unwrap());
        let mids = schedule.mid_times();
        let input_vals: Vec<f64> = mids.iter().map(|t| 50.0 * (-0.02 * t).exp() + 5.0).collect();
        let input = Tac::new(input_vals.clone(), schedule.clone()).unwrap();
        let cum = cumtrapz_anchored(&mids, &input_vals);
        let tac_vals: Vec<f64> = (0..mids.len())
            .map(|f| (0.02 * cum[f] / input_vals[f] + 0.5) * input_vals[f])
            .collect();
        let tac = Tac::new(tac_vals, schedule).unwrap();
        let fit = patlak_ki(&tac, &input, 10.0).unwrap();
        assert!((fit.ki - 0.02).abs() < 1e-12, "{}", fit.ki);
        assert!((fit.intercept - 0.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    fn fdg_frames() -> (Arc<FrameSchedule>, FineGrid, Vec<f64>) {
        let schedule = Arc::new(FrameSchedule::uniform(50, 1.0).unwrap());
        let grid = FineGrid::covering(&schedule, 0.02).unwrap();
        let feng = FengParams::new([4e4, 1e4, 8e3], [1.0, 0.03, 0.01]).unwrap();
        let input = feng_input(&feng, &grid);
        (schedule, grid, input)
    }

    #[test]
    fn irreversible_2tcm_recovers_ki_within_two_percent() {
        let (schedule, grid, input_fine) = fdg_frames();
        let p = TwoTcmParams::new(0.5, 0.4, 0.15, 0.0, 1e-9).unwrap();
        let tac = simulate_2tcm(&p, &input_fine, &grid, &schedule).unwrap();
        let input = crate::kinetics::frame_average(&input_fine, &grid, &schedule).unwrap();
        let fit = patlak_ki(&tac, &input, 20.0).unwrap();
        let ki = p.k1 * p.k3 / (p.k2 + p.k3);
        assert!((fit.ki - ki).abs() < 0.02 * ki, "fit {} vs true {ki}", fit.ki);
    }

    #[test]
    fn reversible_kinetics_underestimate_ki() {
        let (schedule, grid, input_fine) = fdg_frames();
        let p = TwoTcmParams::new(0.5, 0.4, 0.15, 0.05, 1e-9).unwrap();
        let tac = simulate_2tcm(&p, &input_fine, &grid, &schedule).unwrap();
        let input = crate::kinetics::frame_average(&input_fine, &grid, &schedule).unwrap();
        let fit = patlak_ki(&tac, &input, 20.0).unwrap();
        let ki = p.k1 * p.k3 / (p.k2 + p.k3);
        assert!(fit.ki < 0.9 * ki, "reversible fit {} should underestimate {ki}", fit.ki);
    }

    #[test]
    fn error_paths() {
        let schedule = Arc::new(FrameSchedule::uniform(5, 1.0).unwrap());
        let tac = Tac::new(vec![1.0; 5], schedule.clone()).unwrap();
        let input = Tac::new(vec![1.0; 5], schedule.clone()).unwrap();
        // Too few frames after a late t*.
        assert!(matches!(patlak_ki(&tac, &input, 3.0), Err(Error::Data(_))));
        // Nonpositive input after t*.
        let bad = Tac::new(vec![1.0, 1.0, 0.0, 1.0, 1.0], schedule).unwrap();
        assert!(matches!(patlak_ki(&tac, &bad, 1.0), Err(Error::Data(_))));
    }
}

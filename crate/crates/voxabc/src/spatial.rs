//! Spatial-coherence diagnostics: detrended, z-scored local Moran's I maps
//! on 2-D slices and cross-map agreement statistics.
//!
//! Detrending subtracts an anisotropic Gaussian-smoothed field (mask-aware
//! normalized convolution), then z-scores within the mask. Local Moran's I
//! uses the in-plane 8-neighborhood with inverse-distance weights in mm,
//! row-standardized over in-mask neighbors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::quantile;

fn default_fwhm() -> f64 {
    40.0
}

/// Detrending and neighborhood configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranConfig {
    /// FWHM of the detrending Gaussian in mm.
    #[serde(default = "default_fwhm")]
    pub fwhm_mm: f64,
    /// In-plane voxel spacing in mm (axis 0, axis 1 of the slice).
    pub spacing_mm: [f64; 2],
}

impl MoranConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm_mm > 0.0) {
            return Err(Error::config(format!("FWHM must be positive, got {}", self.fwhm_mm)));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config(format!("spacing must be positive, got {:?}", self.spacing_mm)));
        }
        Ok(())
    }
}

/// 2-D slice with mask; values indexed `[x + nx * y]`.
#[derive(Debug, Clone)]
pub struct Slice2d {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Slice2d {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != nx * ny || mask.len() != nx * ny {
            return Err(Error::data("slice size does not match nx*ny"));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::data("slice mask is empty"));
        }
        for (i, (&v, &m)) in values.iter().zip(&mask).enumerate() {
            if m && !v.is_finite() {
                return Err(Error::data(format!("non-finite value inside mask at index {i}")));
            }
        }
        Ok(Slice2d { nx, ny, values, mask })
    }
}

/// 1-D Gaussian kernel with sigma = FWHM / (2 sqrt(2 ln 2)) / spacing,
/// truncated at 4 sigma.
fn gaussian_kernel(fwhm_mm: f64, spacing_mm: f64) -> Vec<f64> {
    let sigma = fwhm_mm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt()) / spacing_mm;
    let radius = (4.0 * sigma).ceil() as usize;
    (0..=2 * radius)
        .map(|k| {
            let d = k as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect()
}

/// Separable mask-aware normalized convolution: smooth(value*mask) /
/// smooth(mask). Out-of-mask voxels stay untouched (NaN in the output).
fn masked_gaussian_smooth(slice: &Slice2d, cfg: &MoranConfig) -> Vec<f64> {
    let (nx, ny) = (slice.nx, slice.ny);
    let kx = gaussian_kernel(cfg.fwhm_mm, cfg.spacing_mm[0]);
    let ky = gaussian_kernel(cfg.fwhm_mm, cfg.spacing_mm[1]);
    let rx = kx.len() / 2;
    let ry = ky.len() / 2;

    // Pass 1 along x for both value*mask and mask.
    let mut num_x = vec![0.0; nx * ny];
    let mut den_x = vec![0.0; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let mut num = 0.0;
            let mut den = 0.0;
            for (k, &w) in kx.iter().enumerate() {
                let xx = x as isize + k as isize - rx as isize;
                if xx < 0 || xx >= nx as isize {
                    continue;
                }
                let idx = xx as usize + nx * y;
                if slice.mask[idx] {
                    num += w * slice.values[idx];
                    den += w;
                }
            }
            num_x[x + nx * y] = num;
            den_x[x + nx * y] = den;
        }
    }
    // Pass 2 along y.
    let mut out = vec![f64::NAN; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            if !slice.mask[x + nx * y] {
                continue;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for (k, &w) in ky.iter().enumerate() {
                let yy = y as isize + k as isize - ry as isize;
                if yy < 0 || yy >= ny as isize {
                    continue;
                }
                num += w * num_x[x + nx * yy as usize];
                den += w * den_x[x + nx * yy as usize];
            }
            out[x + nx * y] = if den > 0.0 { num / den } else { f64::NAN };
        }
    }
    out
}

/// Subtract the smoothed trend, then z-score within the mask (population
/// standard deviation). Errors when the residual has no variance.
pub fn detrend_zscore(slice: &Slice2d, cfg: &MoranConfig) -> Result<Slice2d> {
    cfg.validate()?;
    let trend = masked_gaussian_smooth(slice, cfg);
    let n_mask = slice.mask.iter().filter(|&&m| m).count() as f64;
    let mut residual = vec![f64::NAN; slice.values.len()];
    let mut scale = 0.0f64;
    for i in 0..slice.values.len() {
        if slice.mask[i] {
            residual[i] = slice.values[i] - trend[i];
            scale += slice.values[i] * slice.values[i];
        }
    }
    let scale = (scale / n_mask).sqrt();
    let mean = residual.iter().zip(&slice.mask).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>() / n_mask;
    let var = residual
        .iter()
        .zip(&slice.mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| (v - mean) * (v - mean))
        .sum::<f64>()
        / n_mask;
    let sd = var.sqrt();
    if sd <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::data("detrended map has zero variance inside the mask"));
    }
    let z: Vec<f64> = residual
        .iter()
        .zip(&slice.mask)
        .map(|(&v, &m)| if m { (v - mean) / sd } else { f64::NAN })
        .collect();
    Slice2d::new(slice.nx, slice.ny, z, slice.mask.clone())
}

/// Local Moran's I: I_j = z_j * sum_k w_jk z_k over the in-mask 8-neighbors,
/// with w_jk = (1/d_jk) / sum(1/d_j.), d in mm. Voxels without in-mask
/// neighbors get NaN.
pub fn local_morans_i(zmap: &Slice2d, cfg: &MoranConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (nx, ny) = (zmap.nx, zmap.ny);
    let (sx, sy) = (cfg.spacing_mm[0], cfg.spacing_mm[1]);
    let mut out = vec![f64::NAN; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let idx = x + nx * y;
            if !zmap.mask[idx] {
                continue;
            }
            let mut wsum = 0.0;
            let mut acc = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    if xx < 0 || yy < 0 || xx >= nx as i64 || yy >= ny as i64 {
                        continue;
                    }
                    let nidx = xx as usize + nx * yy as usize;
                    if !zmap.mask[nidx] {
                        continue;
                    }
                    let d = ((dx as f64 * sx).powi(2) + (dy as f64 * sy).powi(2)).sqrt();
                    let w = 1.0 / d;
                    wsum += w;
                    acc += w * zmap.values[nidx];
                }
            }
            if wsum > 0.0 {
                out[idx] = zmap.values[idx] * acc / wsum;
            }
        }
    }
    Ok(out)
}

/// Global Moran's I under the same row-standardized weights; equals the
/// mask-mean of local I when every masked voxel has a neighbor.
pub fn global_morans_i(zmap: &Slice2d, cfg: &MoranConfig) -> Result<f64> {
    let local = local_morans_i(zmap, cfg)?;
    let vals: Vec<f64> = local.iter().copied().filter(|v| v.is_finite()).collect();
    if vals.is_empty() {
        return Err(Error::data("no voxel has in-mask neighbors"));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Per-map summary plus pairwise agreement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoranReport {
    pub maps: Vec<MoranMapSummary>,
    /// (name_a, name_b, Pearson r over jointly defined voxels).
    pub correlations: Vec<(String, String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoranMapSummary {
    pub name: String,
    pub q75: f64,
    pub median: f64,
    pub n_defined: usize,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(&x, &y)| (x, y))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let (mx, my) = (
        pairs.iter().map(|p| p.0).sum::<f64>() / n,
        pairs.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Run the full diagnostic on named maps sharing one mask/geometry:
/// detrend + z-score each, compute local I, summarize (q75, median) and
/// correlate all pairs. Returns the report and each map's local-I field.
pub fn moran_compare(
    maps: &[(String, Slice2d)],
    cfg: &MoranConfig,
) -> Result<(MoranReport, Vec<Vec<f64>>)> {
    if maps.is_empty() {
        return Err(Error::config("moran_compare needs at least one map"));
    }
    let (nx, ny) = (maps[0].1.nx, maps[0].1.ny);
    for (name, m) in maps {
        if m.nx != nx || m.ny != ny {
            return Err(Error::data(format!("map '{name}' geometry differs")));
        }
        if m.mask != maps[0].1.mask {
            return Err(Error::data(format!("map '{name}' mask differs")));
        }
    }
    let mut i_maps = Vec::with_capacity(maps.len());
    let mut summaries = Vec::with_capacity(maps.len());
    for (name, m) in maps {
        let z = detrend_zscore(m, cfg)?;
        let i_map = local_morans_i(&z, cfg)?;
        let mut defined: Vec<f64> = i_map.iter().copied().filter(|v| v.is_finite()).collect();
        defined.sort_by(|a, b| a.total_cmp(b));
        if defined.is_empty() {
            return Err(Error::data(format!("map '{name}': no defined local I values")));
        }
        summaries.push(MoranMapSummary {
            name: name.clone(),
            q75: quantile(&defined, 0.75),
            median: quantile(&defined, 0.5),
            n_defined: defined.len(),
        });
        i_maps.push(i_map);
    }
    let mut correlations = Vec::new();
    for a in 0..maps.len() {
        for b in a + 1..maps.len() {
            let r = pearson(&i_maps[a], &i_maps[b]).unwrap_or(f64::NAN);
            correlations.push((maps[a].0.clone(), maps[b].0.clone(), r));
        }
    }
    Ok((MoranReport { maps: summaries, correlations }, i_maps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn cfg() -> MoranConfig {
        MoranConfig { fwhm_mm: 40.0, spacing_mm: [1.6456, 3.3] }
    }

    fn full_mask(nx: usize, ny: usize) -> Vec<bool> {
        vec![true; nx * ny]
    }

    fn noise_slice(nx: usize, ny: usize, seed: u64) -> Slice2d {
        let s = RngStream::from_seed(seed).substream("noise-map");
        let values: Vec<f64> = (0..nx * ny).map(|i| s.normal_at(&[i as u64])).collect();
        Slice2d::new(nx, ny, values, full_mask(nx, ny)).unwrap()
    }

    #[test]
    fn constant_map_has_zero_variance() {
        let s = Slice2d::new(20, 20, vec![5.0; 400], full_mask(20, 20)).unwrap();
        assert!(matches!(detrend_zscore(&s, &cfg()), Err(Error::Data(_))));
    }

    #[test]
    fn low_frequency_ramp_is_removed() {
        // A ramp spanning far more than the FWHM mostly disappears.
        let (nx, ny) = (120, 60);
        let values: Vec<f64> = (0..nx * ny).map(|i| (i % nx) as f64).collect();
        let mut with_noise = values.clone();
        let s = RngStream::from_seed(3).substream("ramp");
        for (i, v) in with_noise.iter_mut().enumerate() {
            *v += 0.5 * s.normal_at(&[i as u64]);
        }
        let slice = Slice2d::new(nx, ny, with_noise, full_mask(nx, ny)).unwrap();
        let trend = masked_gaussian_smooth(&slice, &cfg());
        let resid_var: f64 = slice
            .values
            .iter()
            .zip(&trend)
            .map(|(v, t)| (v - t) * (v - t))
            .sum::<f64>()
            / (nx * ny) as f64;
        let input_var = {
            let mean = slice.values.iter().sum::<f64>() / (nx * ny) as f64;
            slice.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nx * ny) as f64
        };
        assert!(resid_var < 0.1 * input_var, "removed {} of {}", resid_var, input_var);
    }

    #[test]
    fn zscore_has_unit_moments() {
        let s = noise_slice(50, 40, 9);
        let z = detrend_zscore(&s, &cfg()).unwrap();
        let vals: Vec<f64> = z.values.iter().copied().filter(|v| v.is_finite()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkerboard_gives_minus_one() {
        let (nx, ny) = (12, 10);
        let values: Vec<f64> = (0..nx * ny)
            .map(|i| if (i % nx + i / nx) % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let z = Slice2d::new(nx, ny, values, full_mask(nx, ny)).unwrap();
        let i_map = local_morans_i(&z, &cfg()).unwrap();
        // Interior voxels: row-standardized neighbor mean is exactly -z_j.
        for y in 1..ny - 1 {
            for x in 1..nx - 1 {
                assert!((i_map[x + nx * y] + 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn positive_blob_clusters_positively() {
        let (nx, ny) = (30, 30);
        let mut values = vec![-0.2; nx * ny];
        for y in 10..20 {
            for x in 10..20 {
                values[x + nx * y] = 2.0;
            }
        }
        let z = Slice2d::new(nx, ny, values, full_mask(nx, ny)).unwrap();
        let i_map = local_morans_i(&z, &cfg()).unwrap();
        for y in 12..18 {
            for x in 12..18 {
                assert!(i_map[x + nx * y] > 0.0);
            }
        }
    }

    #[test]
    fn matches_hand_rolled_3x3() {
        // Naive double-loop oracle on a random 3x3 grid.
        let s = RngStream::from_seed(77).substream("3x3");
        let values: Vec<f64> = (0..9).map(|i| s.normal_at(&[i as u64])).collect();
        let z = Slice2d::new(3, 3, values.clone(), full_mask(3, 3)).unwrap();
        let c = cfg();
        let i_map = local_morans_i(&z, &c).unwrap();
        for y in 0..3i64 {
            for x in 0..3i64 {
                let mut wsum = 0.0;
                let mut acc = 0.0;
                for yy in 0..3i64 {
                    for xx in 0..3i64 {
                        if (xx, yy) == (x, y) || (xx - x).abs() > 1 || (yy - y).abs() > 1 {
                            continue;
                        }
                        let d = (((xx - x) as f64 * c.spacing_mm[0]).powi(2)
                            + ((yy - y) as f64 * c.spacing_mm[1]).powi(2))
                        .sqrt();
                        wsum += 1.0 / d;
                        acc += values[(xx + 3 * yy) as usize] / d;
                    }
                }
                let want = values[(x + 3 * y) as usize] * acc / wsum;
                let got = i_map[(x + 3 * y) as usize];
                assert!((got - want).abs() < 1e-12, "({x},{y}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn translation_and_scale_invariance() {
        let s = noise_slice(40, 30, 21);
        let base = {
            let z = detrend_zscore(&s, &cfg()).unwrap();
            local_morans_i(&z, &cfg()).unwrap()
        };
        for (shift, scale) in [(100.0, 1.0), (0.0, 7.5), (-3.0, 2.0)] {
            let values: Vec<f64> = s.values.iter().map(|v| v * scale + shift).collect();
            let t = Slice2d::new(s.nx, s.ny, values, s.mask.clone()).unwrap();
            let z = detrend_zscore(&t, &cfg()).unwrap();
            let got = local_morans_i(&z, &cfg()).unwrap();
            for (a, b) in base.iter().zip(&got) {
                if a.is_finite() {
                    assert!((a - b).abs() < 1e-9, "{a} vs {b} (shift {shift}, scale {scale})");
                }
            }
        }
    }

    #[test]
    fn mean_local_equals_global() {
        let s = noise_slice(25, 25, 5);
        let z = detrend_zscore(&s, &cfg()).unwrap();
        let local = local_morans_i(&z, &cfg()).unwrap();
        let mean = local.iter().filter(|v| v.is_finite()).sum::<f64>()
            / local.iter().filter(|v| v.is_finite()).count() as f64;
        let global = global_morans_i(&z, &cfg()).unwrap();
        assert!((mean - global).abs() < 1e-10);
    }

    #[test]
    fn row_standardization_sums_to_one() {
        // Implicit in the formula; check via a probe where all z = 1, so
        // I_j = sum of weights = 1 for every voxel with neighbors.
        let (nx, ny) = (6, 5);
        let mut mask = full_mask(nx, ny);
        mask[7] = false;
        mask[29] = false;
        let z = Slice2d::new(nx, ny, vec![1.0; nx * ny], mask.clone()).unwrap();
        let i_map = local_morans_i(&z, &cfg()).unwrap();
        for (i, v) in i_map.iter().enumerate() {
            if mask[i] {
                assert!((v - 1.0).abs() < 1e-12, "voxel {i}: weight sum {v}");
            } else {
                assert!(v.is_nan());
            }
        }
    }

    #[test]
    fn isolated_voxel_is_nan_and_excluded() {
        let (nx, ny) = (5, 5);
        let mut mask = vec![false; nx * ny];
        mask[12] = true; // center, no in-mask neighbors
        mask[0] = true;
        mask[1] = true;
        let values: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let z = Slice2d::new(nx, ny, values, mask).unwrap();
        let i_map = local_morans_i(&z, &cfg()).unwrap();
        assert!(i_map[12].is_nan());
        assert!(i_map[0].is_finite());
    }

    #[test]
    fn self_comparison_correlates_perfectly_and_smoothing_raises_q75() {
        let raw = noise_slice(48, 36, 13);
        // Lightly smoothed copy of the same field.
        let smooth_cfg = MoranConfig { fwhm_mm: 8.0, spacing_mm: [1.6456, 3.3] };
        let smoothed_values = masked_gaussian_smooth(&raw, &smooth_cfg);
        let smoothed = Slice2d::new(raw.nx, raw.ny, smoothed_values, raw.mask.clone()).unwrap();
        let maps = vec![
            ("raw".to_string(), raw.clone()),
            ("raw-again".to_string(), raw.clone()),
            ("smoothed".to_string(), smoothed),
        ];
        let (report, _) = moran_compare(&maps, &cfg()).unwrap();
        let r_self = report
            .correlations
            .iter()
            .find(|(a, b, _)| a == "raw" && b == "raw-again")
            .unwrap()
            .2;
        assert!((r_self - 1.0).abs() < 1e-12);
        let q75 = |name: &str| report.maps.iter().find(|m| m.name == name).unwrap().q75;
        assert!(
            q75("smoothed") > q75("raw"),
            "smoothed {} vs raw {}",
            q75("smoothed"),
            q75("raw")
        );
        for m in &report.maps {
            assert!(m.q75 >= m.median);
        }
    }
}

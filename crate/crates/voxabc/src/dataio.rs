//! Dataset, map, and posterior serialization plus run manifests.
//!
//! All binary payloads are little-endian and documented byte-for-byte in
//! `docs/FORMATS.md`:
//! - TAC payload: f32 array, frame-major within voxel, voxels in x-fastest
//!   order (payload length = X*Y*Z*L*4 bytes).
//! - mask: one u8 per voxel (nonzero = inside), x-fastest.
//! - parametric map payload: f32 array, x-fastest, NaN outside the mask.
//! - accepted-posterior records: per voxel, n records of
//!   (u64 sim_index, f64 distance, f64 theta[P+1]).
//! Each payload carries a JSON sidecar naming dims, schedule and paths.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abc::AcceptedPosterior;
use crate::error::{Error, Result};
use crate::kinetics::{FineGrid, FrameSchedule};
use crate::priors::{InputRole, ModelMeta, ThetaMatrix};

/// Volume geometry: dims in voxels (x, y, z) and voxel spacing in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
}

impl Geometry {
    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::data(format!("geometry dims must be nonzero, got {:?}", self.dims)));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::data(format!("voxel spacing must be positive, got {:?}", self.spacing_mm)));
        }
        Ok(())
    }
}

/// Shared input curve (plasma IDIF or reference-region TAC), sampled at
/// arbitrary increasing times and linearly interpolated onto fine grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputCurve {
    pub role: InputRole,
    pub t_min: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default = "default_units")]
    pub units: String,
}

fn default_units() -> String {
    "kBq/mL".to_string()
}

impl InputCurve {
    pub fn from_grid(grid: &FineGrid, values: Vec<f64>, role: InputRole, units: &str) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::data("input curve length does not match grid"));
        }
        let curve = InputCurve { role, t_min: grid.times(), values, units: units.to_string() };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_min.len() < 2 || self.t_min.len() != self.values.len() {
            return Err(Error::data("input curve needs >= 2 samples with matching times/values"));
        }
        if self.t_min.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::data("input curve times must be strictly increasing"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("input curve values must be finite"));
        }
        Ok(())
    }

    /// Linear interpolation onto the fine grid; the samples must cover it.
    pub fn resample(&self, grid: &FineGrid) -> Result<Vec<f64>> {
        self.validate()?;
        let t0 = self.t_min[0];
        let t_last = *self.t_min.last().unwrap();
        if t0 > 1e-9 || t_last < grid.t_end() - 1e-9 {
            return Err(Error::data(format!(
                "input curve samples [{t0}, {t_last}] min do not cover the grid [0, {}] min",
                grid.t_end()
            )));
        }
        let mut out = Vec::with_capacity(grid.n_nodes());
        let mut k = 0usize;
        for node in 0..grid.n_nodes() {
            let t = grid.time(node).min(t_last);
            while k + 2 < self.t_min.len() && self.t_min[k + 1] < t {
                k += 1;
            }
            let (ta, tb) = (self.t_min[k], self.t_min[k + 1]);
            let frac = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            out.push(self.values[k] * (1.0 - frac) + self.values[k + 1] * frac);
        }
        Ok(out)
    }
}

/// In-memory dynamic-PET dataset: per-voxel TACs on a shared schedule, a
/// mask, and the shared input curve.
#[derive(Debug, Clone)]
pub struct TacDataset {
    pub geom: Geometry,
    pub schedule: Arc<FrameSchedule>,
    pub mask: Vec<bool>,
    /// X*Y*Z * L values, frame-major within voxel, x-fastest voxel order.
    pub tacs: Vec<f32>,
    pub input: InputCurve,
    pub units: String,
}

impl TacDataset {
    pub fn new(
        geom: Geometry,
        schedule: Arc<FrameSchedule>,
        mask: Vec<bool>,
        tacs: Vec<f32>,
        input: InputCurve,
        units: String,
    ) -> Result<Self> {
        geom.validate()?;
        input.validate()?;
        let nv = geom.n_voxels();
        if mask.len() != nv {
            return Err(Error::data(format!("mask has {} entries for {nv} voxels", mask.len())));
        }
        if tacs.len() != nv * schedule.len() {
            return Err(Error::data(format!(
                "TAC payload has {} values, expected {} ({} voxels x {} frames)",
                tacs.len(),
                nv * schedule.len(),
                nv,
                schedule.len()
            )));
        }
        Ok(TacDataset { geom, schedule, mask, tacs, input, units })
    }

    /// 1-D dataset (dims [J,1,1], all in-mask) from per-voxel TACs.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        schedule: Arc<FrameSchedule>,
        input: InputCurve,
        units: &str,
    ) -> Result<Self> {
        let j = rows.len();
        let l = schedule.len();
        let mut tacs = Vec::with_capacity(j * l);
        for r in &rows {
            if r.len() != l {
                return Err(Error::data("row length does not match schedule"));
            }
            tacs.extend(r.iter().map(|&v| v as f32));
        }
        TacDataset::new(
            Geometry { dims: [j, 1, 1], spacing_mm: [1.0, 1.0, 1.0] },
            schedule,
            vec![true; j],
            tacs,
            input,
            units.to_string(),
        )
    }

    pub fn n_frames(&self) -> usize {
        self.schedule.len()
    }

    pub fn n_voxels(&self) -> usize {
        self.geom.n_voxels()
    }

    #[inline]
    pub fn voxel_tac(&self, v: usize) -> &[f32] {
        let l = self.schedule.len();
        &self.tacs[v * l..(v + 1) * l]
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.n_voxels()).filter(|&v| self.mask[v]).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Write `dataset.json` + payloads into `dir`; returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let payload_path = dir.join("tacs.f32");
        write_f32_le(&payload_path, &self.tacs)?;
        let mask_path = dir.join("mask.u8");
        let mask_bytes: Vec<u8> = self.mask.iter().map(|&m| u8::from(m)).collect();
        fs::write(&mask_path, &mask_bytes)?;
        let input_path = dir.join("input.json");
        write_json(&input_path, &self.input)?;
        let header = DatasetHeader {
            format: "tacdataset/v1".to_string(),
            dims: self.geom.dims,
            spacing_mm: self.geom.spacing_mm,
            units: self.units.clone(),
            schedule: ScheduleBlock {
                frame_start_min: self.schedule.starts().to_vec(),
                frame_duration_min: self.schedule.durations().to_vec(),
            },
            mask_path: "mask.u8".to_string(),
            payload_path: "tacs.f32".to_string(),
            input_path: "input.json".to_string(),
        };
        let header_path = dir.join("dataset.json");
        write_json(&header_path, &header)?;
        Ok(vec![header_path, payload_path, mask_path, input_path])
    }

    pub fn read(header_path: &Path) -> Result<Self> {
        let header: DatasetHeader = read_json(header_path)?;
        if header.format != "tacdataset/v1" {
            return Err(Error::data(format!("unknown dataset format '{}'", header.format)));
        }
        let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
        let schedule = Arc::new(FrameSchedule::new(
            header.schedule.frame_start_min,
            header.schedule.frame_duration_min,
        )?);
        let geom = Geometry { dims: header.dims, spacing_mm: header.spacing_mm };
        let tacs = read_f32_le(&dir.join(&header.payload_path))?;
        let mask_bytes = fs::read(dir.join(&header.mask_path))?;
        let mask: Vec<bool> = mask_bytes.iter().map(|&b| b != 0).collect();
        let input: InputCurve = read_json(&dir.join(&header.input_path))?;
        TacDataset::new(geom, schedule, mask, tacs, input, header.units)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ScheduleBlock {
    frame_start_min: Vec<f64>,
    frame_duration_min: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    units: String,
    schedule: ScheduleBlock,
    mask_path: String,
    payload_path: String,
    input_path: String,
}

/// 3-D scalar field aligned to a dataset geometry; NaN outside the mask.
#[derive(Debug, Clone)]
pub struct ParametricMap {
    pub geom: Geometry,
    pub field: String,
    pub values: Vec<f32>,
}

impl ParametricMap {
    pub fn new(geom: Geometry, field: &str, values: Vec<f32>) -> Result<Self> {
        if values.len() != geom.n_voxels() {
            return Err(Error::data(format!(
                "map '{field}' has {} values for {} voxels",
                values.len(),
                geom.n_voxels()
            )));
        }
        Ok(ParametricMap { geom, field: field.to_string(), values })
    }

    /// Write `<stem>.f32` + `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str, mask_path: Option<&str>) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let payload = dir.join(format!("{stem}.f32"));
        write_f32_le(&payload, &self.values)?;
        let sidecar = MapSidecar {
            format: "map/v1".to_string(),
            field: self.field.clone(),
            dims: self.geom.dims,
            spacing_mm: self.geom.spacing_mm,
            mask_path: mask_path.map(str::to_string),
            payload_path: format!("{stem}.f32"),
        };
        let sidecar_path = dir.join(format!("{stem}.json"));
        write_json(&sidecar_path, &sidecar)?;
        Ok(vec![sidecar_path, payload])
    }

    pub fn read(sidecar_path: &Path) -> Result<(Self, Option<Vec<bool>>)> {
        let sidecar: MapSidecar = read_json(sidecar_path)?;
        if sidecar.format != "map/v1" {
            return Err(Error::data(format!("unknown map format '{}'", sidecar.format)));
        }
        let dir = sidecar_path.parent().unwrap_or_else(|| Path::new("."));
        let values = read_f32_le(&dir.join(&sidecar.payload_path))?;
        let geom = Geometry { dims: sidecar.dims, spacing_mm: sidecar.spacing_mm };
        let mask = match &sidecar.mask_path {
            Some(p) => {
                let bytes = fs::read(dir.join(p))?;
                Some(bytes.iter().map(|&b| b != 0).collect())
            }
            None => None,
        };
        Ok((ParametricMap::new(geom, &sidecar.field, values)?, mask))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapSidecar {
    format: String,
    field: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    mask_path: Option<String>,
    payload_path: String,
}

/// Sidecar of an accepted-posterior export.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorSidecar {
    pub format: String,
    /// Masked voxel count J.
    pub j: usize,
    /// Accepted draws per voxel.
    pub n: usize,
    /// Parameter count P (theta row is P+1 wide, column 0 = model).
    pub p: usize,
    pub columns: Vec<String>,
    pub models: Vec<ModelMeta>,
    pub record_bytes: usize,
    pub endianness: String,
    pub payload_path: String,
    pub layout: String,
}

/// Write the accepted posterior as binary records + JSON sidecar.
pub fn write_posterior(acc: &AcceptedPosterior, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let width = acc.theta.columns.len();
    let record_bytes = 8 + 8 + 8 * width;
    let bin_path = dir.join("posterior.bin");
    let mut w = BufWriter::new(fs::File::create(&bin_path)?);
    for j in 0..acc.n_voxels {
        for d in acc.voxel(j) {
            w.write_all(&d.sim_index.to_le_bytes())?;
            w.write_all(&d.distance.to_le_bytes())?;
            for &v in acc.theta.row(d.sim_index as usize) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    let sidecar = PosteriorSidecar {
        format: "posterior/v1".to_string(),
        j: acc.n_voxels,
        n: acc.n_accept,
        p: width - 1,
        columns: acc.theta.columns.clone(),
        models: acc.theta.meta.clone(),
        record_bytes,
        endianness: "little".to_string(),
        payload_path: "posterior.bin".to_string(),
        layout: "per voxel, n records; record = u64 sim_index, f64 distance, f64 theta[P+1]".to_string(),
    };
    let sidecar_path = dir.join("posterior.json");
    write_json(&sidecar_path, &sidecar)?;
    Ok(vec![sidecar_path, bin_path])
}

/// Re-load an exported posterior. Theta rows are materialized from the
/// records (one row per accepted draw).
pub fn read_posterior(sidecar_path: &Path) -> Result<AcceptedPosterior> {
    let sidecar: PosteriorSidecar = read_json(sidecar_path)?;
    if sidecar.format != "posterior/v1" {
        return Err(Error::data(format!("unknown posterior format '{}'", sidecar.format)));
    }
    let dir = sidecar_path.parent().unwrap_or_else(|| Path::new("."));
    let bytes = fs::read(dir.join(&sidecar.payload_path))?;
    let width = sidecar.p + 1;
    let record_bytes = 8 + 8 + 8 * width;
    if record_bytes != sidecar.record_bytes {
        return Err(Error::data("posterior sidecar record_bytes does not match columns"));
    }
    let n_records = sidecar.j * sidecar.n;
    if bytes.len() != n_records * record_bytes {
        return Err(Error::data(format!(
            "posterior payload is {} bytes, expected {}",
            bytes.len(),
            n_records * record_bytes
        )));
    }
    let mut theta_data = Vec::with_capacity(n_records * width);
    let mut per_voxel = Vec::with_capacity(sidecar.j);
    let mut cursor = 0usize;
    for _ in 0..sidecar.j {
        let mut draws = Vec::with_capacity(sidecar.n);
        for _ in 0..sidecar.n {
            let _orig_index = u64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap());
            let distance = f64::from_le_bytes(bytes[cursor + 8..cursor + 16].try_into().unwrap());
            let row_index = theta_data.len() / width;
            for k in 0..width {
                let off = cursor + 16 + 8 * k;
                theta_data.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            }
            draws.push(crate::abc::AcceptedDraw { sim_index: row_index as u64, distance });
            cursor += record_bytes;
        }
        per_voxel.push(draws);
    }
    let theta = ThetaMatrix::from_raw(sidecar.columns, sidecar.models, theta_data)?;
    AcceptedPosterior::from_parts(theta, sidecar.n, per_voxel)
}

// --- manifest -------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Run manifest: config hash, seed, versions, per-stage wall time, and a
/// content hash for every output file. The manifest itself carries timing
/// and is therefore not byte-stable across runs; all listed outputs are.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub workers: usize,
    pub stages: Vec<StageTiming>,
    pub outputs: Vec<OutputEntry>,
}

impl Manifest {
    pub fn new(config_bytes: &[u8], seed: u64, workers: usize) -> Self {
        Manifest {
            format: "manifest/v1".to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: hex_sha256(config_bytes),
            seed,
            workers,
            stages: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_stage(&mut self, name: &str, wall_ms: f64) {
        self.stages.push(StageTiming { name: name.to_string(), wall_ms });
    }

    /// Hash and record outputs; paths are stored relative to `dir`.
    pub fn add_outputs(&mut self, dir: &Path, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            let bytes = fs::metadata(p)?.len();
            let sha256 = sha256_file(p)?;
            let rel = p.strip_prefix(dir).unwrap_or(p).to_string_lossy().to_string();
            self.outputs.push(OutputEntry { path: rel, bytes, sha256 });
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

// --- small writers ---------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::data(format!("cannot parse {}: {e}", path.display())))
}

pub fn write_f32_le(path: &Path, values: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_f32_le(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::data(format!("{} is not a multiple of 4 bytes", path.display())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Write a CSV file. Cells are written verbatim; callers format floats with
/// the default shortest round-trip representation so re-runs are byte-stable.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// 8-bit binary PGM of one z-slice of a map (debug visualization only).
/// Finite values are linearly rescaled to 0..=255; NaN renders as 0.
pub fn write_pgm_slice(map: &ParametricMap, z: usize, path: &Path) -> Result<()> {
    let [nx, ny, _] = map.geom.dims;
    if z >= map.geom.dims[2] {
        return Err(Error::data(format!("z-slice {z} out of range")));
    }
    let slice: Vec<f32> = (0..nx * ny).map(|i| map.values[z * nx * ny + i]).collect();
    let finite: Vec<f32> = slice.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = finite
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "P5")?;
    writeln!(w, "{nx} {ny}")?;
    writeln!(w, "255")?;
    let bytes: Vec<u8> = slice
        .iter()
        .map(|&v| if v.is_finite() { ((v - lo) * scale).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
impl TacDataset {
    /// Smooth-ish random 1-D dataset for engine tests.
    pub(crate) fn synthetic_1d_for_tests(schedule: Arc<FrameSchedule>, j: usize, seed: u64) -> TacDataset {
        use crate::rng::RngStream;
        let s = RngStream::from_seed(seed).substream("synthetic-tacs");
        let l = schedule.len();
        let rows: Vec<Vec<f64>> = (0..j)
            .map(|v| {
                let peak = 20.0 + 60.0 * s.uniform_at(&[v as u64, 0]);
                (0..l)
                    .map(|f| {
                        let t = schedule.mid_time(f);
                        peak * (1.0 - (-0.5 * t).exp()) * (-0.01 * t).exp()
                            + s.normal_at(&[v as u64, 1 + f as u64])
                    })
                    .collect()
            })
            .collect();
        let grid = FineGrid::covering(&schedule, 0.05).unwrap();
        let p = crate::kinetics::FengParams::new([4e4, 1e4, 8e3], [1.0, 0.03, 0.01]).unwrap();
        let input = InputCurve::from_grid(
            &grid,
            crate::kinetics::feng_input(&p, &grid),
            InputRole::Plasma,
            "kBq/mL",
        )
        .unwrap();
        TacDataset::from_rows(rows, schedule, input, "kBq/mL").unwrap()
    }

    /// Dataset whose voxel TACs are copies of chosen pool rows.
    pub(crate) fn from_pool_rows_for_tests(
        pool: &crate::abc::SimulationPool,
        picks: &[usize],
        ctx: crate::abc::ForwardContext,
    ) -> TacDataset {
        let rows: Vec<Vec<f64>> =
            picks.iter().map(|&i| pool.row(i).iter().map(|&v| v as f64).collect()).collect();
        let input = InputCurve::from_grid(&ctx.grid, ctx.input_fine.clone(), ctx.input_role, "kBq/mL").unwrap();
        TacDataset::from_rows(rows, ctx.schedule.clone(), input, "kBq/mL").unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let schedule = Arc::new(FrameSchedule::uniform(8, 1.0).unwrap());
        let ds = TacDataset::synthetic_1d_for_tests(schedule, 5, 3);
        let paths = ds.write(dir.path()).unwrap();
        let back = TacDataset::read(&dir.path().join("dataset.json")).unwrap();
        assert_eq!(ds.tacs, back.tacs);
        assert_eq!(ds.mask, back.mask);
        assert_eq!(ds.input, back.input);
        assert_eq!(*ds.schedule, *back.schedule);
        // Re-writing produces byte-identical files.
        let dir2 = tempfile::tempdir().unwrap();
        back.write(dir2.path()).unwrap();
        for p in &paths {
            let rel = p.file_name().unwrap();
            assert_eq!(
                fs::read(p).unwrap(),
                fs::read(dir2.path().join(rel)).unwrap(),
                "{rel:?} differs"
            );
        }
    }

    #[test]
    fn resample_is_exact_on_grid_nodes() {
        let grid = FineGrid::new(0.05, 3.0).unwrap();
        let values: Vec<f64> = (0..grid.n_nodes()).map(|k| (k as f64).sqrt()).collect();
        let c = InputCurve::from_grid(&grid, values.clone(), InputRole::Plasma, "kBq/mL").unwrap();
        assert_eq!(c.resample(&grid).unwrap(), values);
        // Coarser target grid interpolates linearly.
        let coarse = FineGrid::new(0.1, 3.0).unwrap();
        let r = c.resample(&coarse).unwrap();
        assert_eq!(r[1], values[2]);
    }

    #[test]
    fn resample_requires_coverage() {
        let grid = FineGrid::new(0.1, 2.0).unwrap();
        let c = InputCurve {
            role: InputRole::Plasma,
            t_min: vec![0.0, 1.0],
            values: vec![0.0, 5.0],
            units: "kBq/mL".into(),
        };
        assert!(matches!(c.resample(&grid), Err(Error::Data(_))));
    }

    #[test]
    fn map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let geom = Geometry { dims: [4, 3, 2], spacing_mm: [1.6456, 3.3, 2.0] };
        let values: Vec<f32> = (0..24).map(|i| if i % 5 == 0 { f32::NAN } else { i as f32 }).collect();
        let map = ParametricMap::new(geom, "ki:mean", values.clone()).unwrap();
        map.write(dir.path(), "ki_mean", None).unwrap();
        let (back, mask) = ParametricMap::read(&dir.path().join("ki_mean.json")).unwrap();
        assert!(mask.is_none());
        assert_eq!(back.field, "ki:mean");
        for (a, b) in values.iter().zip(&back.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn manifest_lists_outputs_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.bin");
        fs::write(&f, b"abc").unwrap();
        let mut m = Manifest::new(b"{}", 7, 1);
        m.add_stage("sim", 12.5);
        m.add_outputs(dir.path(), &[f]).unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.outputs[0].path, "x.bin");
        assert_eq!(m.outputs[0].bytes, 3);
        assert_eq!(
            m.outputs[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        m.write(dir.path()).unwrap();
    }
}

//! Deterministic synthetic dataset generation, the on-disk dataset format,
//! loading and batching.
//!
//! Directory layout: `manifest.txt` at the root, images under
//! `samples/NNNNNN.{face,leye,reye}.gzt`. Manifest lines are
//! `face<TAB>leye<TAB>reye<TAB>gx<TAB>gy<TAB>gz` with gaze components at 9
//! significant digits; `#`-prefixed header lines carry metadata.

pub mod batch;
pub mod preprocess;
pub mod render;

pub use batch::{BatchIterator, SampleSet, TensorBatch};
pub use render::{RawSample, RenderConfig};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{GazeVector, SphericalGaze};
use crate::tensor::{gzt, Tensor};
use preprocess::preprocess_image;
use render::{render_sample, PITCH_MAX_DEG, YAW_MAX_DEG};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::arg("split", format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One manifest line: three image paths (relative to the dataset root) and
/// the unit gaze label.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub face_path: String,
    pub leye_path: String,
    pub reye_path: String,
    pub gaze: GazeVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Option<Split>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A preprocessed training sample: images in [-1,1], unit gaze label, and
/// the source record index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub face: Tensor<f32>,
    pub left_eye: Tensor<f32>,
    pub right_eye: Tensor<f32>,
    pub gaze: GazeVector,
    pub meta: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Per-sample seed: hash of (seed, index), so generation order does not
/// matter.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

fn format_gaze_component(v: f64) -> String {
    format!("{v:.8e}")
}

fn manifest_text(split: Split, records: &[ManifestRecord]) -> String {
    let mut out = String::new();
    out.push_str("# crossgaze dataset v1\n");
    out.push_str(&format!("# split={split}\n"));
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.face_path,
            r.leye_path,
            r.reye_path,
            format_gaze_component(r.gaze.x),
            format_gaze_component(r.gaze.y),
            format_gaze_component(r.gaze.z),
        ));
    }
    out
}

/// Generate `count` samples under `out_dir` and write the manifest last.
/// Fully determined by (`seed`, `count`): per-sample rngs are derived as
/// hash(seed, index). On failure any partial output is removed.
pub fn generate_synthetic_dataset(
    out_dir: &Path,
    count: usize,
    seed: u64,
    split: Split,
    cfg: &RenderConfig,
) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::arg("gendata", "count must be >= 1"));
    }
    let existed_before = out_dir.exists();
    let result = generate_inner(out_dir, count, seed, split, cfg);
    if result.is_err() {
        if existed_before {
            let _ = fs::remove_file(out_dir.join("manifest.txt"));
            let _ = fs::remove_dir_all(out_dir.join("samples"));
        } else {
            let _ = fs::remove_dir_all(out_dir);
        }
    }
    result
}

fn generate_inner(
    out_dir: &Path,
    count: usize,
    seed: u64,
    split: Split,
    cfg: &RenderConfig,
) -> Result<DatasetManifest> {
    let samples_dir = out_dir.join("samples");
    fs::create_dir_all(&samples_dir)?;
    let mut records = Vec::with_capacity(count);
    for index in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64));
        let yaw = rng.random_range(-YAW_MAX_DEG..YAW_MAX_DEG).to_radians();
        let pitch = rng.random_range(-PITCH_MAX_DEG..PITCH_MAX_DEG).to_radians();
        let raw = render_sample(&SphericalGaze::new(yaw, pitch), cfg, &mut rng)?;
        let stem = format!("{index:06}");
        let rec = ManifestRecord {
            face_path: format!("samples/{stem}.face.gzt"),
            leye_path: format!("samples/{stem}.leye.gzt"),
            reye_path: format!("samples/{stem}.reye.gzt"),
            gaze: raw.gaze,
        };
        gzt::write_file(&out_dir.join(&rec.face_path), &raw.face)?;
        gzt::write_file(&out_dir.join(&rec.leye_path), &raw.left_eye)?;
        gzt::write_file(&out_dir.join(&rec.reye_path), &raw.right_eye)?;
        records.push(rec);
    }
    fs::write(out_dir.join("manifest.txt"), manifest_text(split, &records))?;
    Ok(DatasetManifest { root: out_dir.to_path_buf(), split: Some(split), records })
}

/// Parse manifest text. Line numbers are 1-based in errors; `#` lines are
/// headers.
pub fn parse_manifest_str(text: &str) -> Result<(Option<Split>, Vec<ManifestRecord>)> {
    let mut split = None;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let header = header.trim();
            if let Some(value) = header.strip_prefix("split=") {
                split = Some(value.parse::<Split>().map_err(|e| {
                    Error::data(format!("manifest line {lineno}"), e.to_string())
                })?);
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::data(
                format!("manifest line {lineno}"),
                format!("expected 6 tab-separated fields, found {}", fields.len()),
            ));
        }
        let mut gaze = [0.0f64; 3];
        for (i, g) in gaze.iter_mut().enumerate() {
            *g = fields[3 + i].parse::<f64>().map_err(|_| {
                Error::data(
                    format!("manifest line {lineno}"),
                    format!("bad gaze component {:?}", fields[3 + i]),
                )
            })?;
        }
        let gaze = GazeVector::new(gaze[0], gaze[1], gaze[2]);
        if !gaze.is_unit(1e-4) {
            return Err(Error::data(
                format!("manifest line {lineno}"),
                format!("gaze label is not unit norm (|g| = {:.6})", gaze.norm()),
            ));
        }
        records.push(ManifestRecord {
            face_path: fields[0].to_string(),
            leye_path: fields[1].to_string(),
            reye_path: fields[2].to_string(),
            gaze,
        });
    }
    if records.is_empty() {
        return Err(Error::data("manifest", "no records"));
    }
    Ok((split, records))
}

/// Load and validate a dataset manifest; every referenced file must exist.
pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::data(path.display().to_string(), e.to_string()))?;
    let (split, records) = parse_manifest_str(&text)?;
    for (i, rec) in records.iter().enumerate() {
        for p in [&rec.face_path, &rec.leye_path, &rec.reye_path] {
            if !dir.join(p).is_file() {
                return Err(Error::data(
                    p.clone(),
                    format!("file referenced by record {i} is missing"),
                ));
            }
        }
    }
    Ok(DatasetManifest { root: dir.to_path_buf(), split, records })
}

/// Read one record's images from disk and preprocess them.
pub fn load_sample(manifest: &DatasetManifest, index: usize) -> Result<Sample> {
    let rec = &manifest.records[index];
    let read = |rel: &str| -> Result<Tensor<f32>> {
        let img = gzt::read_file_f32(&manifest.root.join(rel))?;
        preprocess_image(&img)
    };
    Ok(Sample {
        face: read(&rec.face_path)?,
        left_eye: read(&rec.leye_path)?,
        right_eye: read(&rec.reye_path)?,
        gaze: rec.gaze,
        meta: index,
    })
}

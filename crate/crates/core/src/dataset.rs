//! Dataset generation and the on-disk sample format.
//!
//! A dataset file holds, per sample: the scene as a JSON blob (full `f64`
//! ground truth), the truncated angular-delay magnitude image as `f32`, and
//! the continuous label table `(tau_bar, theta_bar, |alpha|)` per scatter.
//! Everything is little-endian and length-prefixed, so records are seekable
//! through the manifest offsets.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::scene::{
    add_estimation_noise, compute_path_params, sample_scene, synthesize_channel, Scene,
};
use crate::transform::{params_to_coords, preprocess_truncate, AngularDelayTransform};

pub const DATASET_MAGIC: &[u8; 4] = b"CSIY";
pub const DATASET_VERSION: u32 = 1;

/// One labeled scatter in truncated-map coordinates: `row = tau_bar - 1`
/// (continuous), `col = theta_bar` (continuous, periodic), `weight = |alpha|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelPoint {
    pub row: f64,
    pub col: f64,
    pub weight: f64,
}

/// One dataset record.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub scene: Scene,
    /// Truncated angular-delay magnitude image, `n_c_trunc x n_t`.
    pub magnitude: Array2<T>,
    pub labels: Vec<LabelPoint>,
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub sys: SystemConfig,
    pub samples: Vec<Sample<T>>,
}

/// Sidecar metadata written next to the binary file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub count: usize,
    pub seed: u64,
    pub n_s_range: (usize, usize),
    /// `None` means noiseless (infinite SNR).
    pub snr_db: Option<f64>,
    pub sys: SystemConfig,
    /// Byte offset of each record in the binary file.
    pub offsets: Vec<u64>,
}

/// Declarative description of a split to synthesize.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSpec {
    pub seed: u64,
    pub count: usize,
    pub split: String,
    pub n_s_range: (usize, usize),
    /// `None` = noiseless channels.
    pub snr_db: Option<f64>,
    pub sys: SystemConfig,
}

/// Stateless per-purpose seed derivation (splitmix64 over base/index/stream).
pub fn derive_seed(base: u64, index: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Label table of a scene: one point per scatter (the LoS path has no label).
pub fn scene_labels(scene: &Scene, sys: &SystemConfig) -> Result<Vec<LabelPoint>> {
    let params = compute_path_params(scene, sys);
    params
        .iter()
        .skip(1)
        .map(|p| {
            let c = params_to_coords(p.tau, p.theta, sys)?;
            Ok(LabelPoint { row: c.tau_bar - 1.0, col: c.theta_bar, weight: p.alpha.norm() })
        })
        .collect()
}

/// Synthesize one sample deterministically from `(seed, index)`.
pub fn generate_sample<T: Real>(
    spec: &GenSpec,
    transform: &AngularDelayTransform<T>,
    index: usize,
) -> Result<Sample<T>> {
    let scene = sample_scene(derive_seed(spec.seed, index as u64, 0), &spec.sys, spec.n_s_range)?;
    let mut h = synthesize_channel::<T>(&scene, &spec.sys);
    if let Some(snr) = spec.snr_db {
        h = add_estimation_noise(&h, snr, derive_seed(spec.seed, index as u64, 1));
    }
    let full = transform.apply(&h)?;
    let map = preprocess_truncate(&full, &spec.sys);
    let magnitude = map.mapv(|z| z.norm());
    let labels = scene_labels(&scene, &spec.sys)?;
    Ok(Sample { scene, magnitude, labels })
}

/// Generate a whole split in parallel (deterministic regardless of worker
/// count: each sample derives its own seeds).
pub fn generate<T: Real>(spec: &GenSpec) -> Result<Dataset<T>> {
    spec.sys.validate()?;
    let transform = AngularDelayTransform::<T>::new(&spec.sys);
    let samples: Result<Vec<Sample<T>>> =
        (0..spec.count).into_par_iter().map(|i| generate_sample(spec, &transform, i)).collect();
    Ok(Dataset { sys: spec.sys.clone(), samples: samples? })
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Write the binary file and its manifest (`<path>.manifest.json`).
pub fn save_dataset<T: Real>(
    path: &Path,
    dataset: &Dataset<T>,
    spec: &GenSpec,
) -> Result<DatasetManifest> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(DATASET_MAGIC)?;
    write_u32(&mut w, DATASET_VERSION)?;
    write_u32(&mut w, dataset.sys.n_c_trunc as u32)?;
    write_u32(&mut w, dataset.sys.n_t as u32)?;
    write_u64(&mut w, dataset.samples.len() as u64)?;
    let mut offset = (4 + 4 + 4 + 4 + 8) as u64;
    let mut offsets = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        offsets.push(offset);
        let scene_json = serde_json::to_vec(&s.scene)?;
        write_u32(&mut w, scene_json.len() as u32)?;
        w.write_all(&scene_json)?;
        for v in s.magnitude.iter() {
            w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
        write_u32(&mut w, s.labels.len() as u32)?;
        for l in &s.labels {
            w.write_all(&(l.row as f32 + 1.0).to_le_bytes())?; // stored as tau_bar
            w.write_all(&(l.col as f32).to_le_bytes())?;
            w.write_all(&(l.weight as f32).to_le_bytes())?;
        }
        offset += 4
            + scene_json.len() as u64
            + (s.magnitude.len() * 4) as u64
            + 4
            + (s.labels.len() * 12) as u64;
    }
    w.flush()?;

    let manifest = DatasetManifest {
        split: spec.split.clone(),
        count: dataset.samples.len(),
        seed: spec.seed,
        n_s_range: spec.n_s_range,
        snr_db: spec.snr_db,
        sys: dataset.sys.clone(),
        offsets,
    };
    let mpath = manifest_path(path);
    serde_json::to_writer_pretty(BufWriter::new(File::create(mpath)?), &manifest)?;
    Ok(manifest)
}

pub fn manifest_path(dataset_path: &Path) -> std::path::PathBuf {
    let mut os = dataset_path.as_os_str().to_owned();
    os.push(".manifest.json");
    os.into()
}

/// Load a dataset written by [`save_dataset`]. The system config comes from
/// the manifest; the binary header is cross-checked against it.
pub fn load_dataset<T: Real>(path: &Path) -> Result<(Dataset<T>, DatasetManifest)> {
    let manifest: DatasetManifest =
        serde_json::from_reader(BufReader::new(File::open(manifest_path(path))?))?;
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Dataset(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != DATASET_VERSION {
        return Err(Error::Dataset(format!("unsupported version {version}")));
    }
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let count = read_u64(&mut r)? as usize;
    if rows != manifest.sys.n_c_trunc || cols != manifest.sys.n_t || count != manifest.count {
        return Err(Error::Dataset("header disagrees with manifest".into()));
    }
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let json_len = read_u32(&mut r)? as usize;
        let mut buf = vec![0u8; json_len];
        r.read_exact(&mut buf)?;
        let scene: Scene = serde_json::from_slice(&buf)?;
        let mut magnitude = Array2::zeros((rows, cols));
        for v in magnitude.iter_mut() {
            *v = T::of(read_f32(&mut r)? as f64);
        }
        let n_labels = read_u32(&mut r)? as usize;
        let mut labels = Vec::with_capacity(n_labels);
        for _ in 0..n_labels {
            let tau_bar = read_f32(&mut r)? as f64;
            let col = read_f32(&mut r)? as f64;
            let weight = read_f32(&mut r)? as f64;
            labels.push(LabelPoint { row: tau_bar - 1.0, col, weight });
        }
        samples.push(Sample { scene, magnitude, labels });
    }
    Ok((Dataset { sys: manifest.sys.clone(), samples }, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> GenSpec {
        GenSpec {
            seed: 5,
            count: 4,
            split: "test".into(),
            n_s_range: (2, 4),
            snr_db: None,
            sys: SystemConfig { n_c: 128, n_t: 16, n_c_trunc: 16, ..SystemConfig::default() },
        }
    }

    #[test]
    fn generation_is_deterministic_and_labeled() {
        let spec = small_spec();
        let a = generate::<f32>(&spec).unwrap();
        let b = generate::<f32>(&spec).unwrap();
        assert_eq!(a.samples.len(), 4);
        for (x, y) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(x.scene, y.scene);
            assert_eq!(x.magnitude, y.magnitude);
        }
        for s in &a.samples {
            assert_eq!(s.labels.len(), s.scene.n_scatters());
            for l in &s.labels {
                assert!(l.row >= 0.0 && l.row < spec.sys.n_c_trunc as f64);
                assert!(l.col >= 0.0 && l.col < spec.sys.n_t as f64);
                assert!(l.weight >= 0.2 && l.weight <= 0.6);
            }
        }
    }

    #[test]
    fn labels_sit_on_magnitude_peaks() {
        // The strongest label's nearest grid bin should carry notable energy
        // relative to the map maximum.
        let spec = small_spec();
        let ds = generate::<f64>(&spec).unwrap();
        for s in &ds.samples {
            let max = s.magnitude.iter().cloned().fold(0.0, f64::max);
            let strongest =
                s.labels.iter().max_by(|a, b| a.weight.partial_cmp(&b.weight).unwrap()).unwrap();
            let r = (strongest.row.round() as usize).min(spec.sys.n_c_trunc - 1);
            let c = (strongest.col.round() as usize) % spec.sys.n_t;
            assert!(s.magnitude[(r, c)] > 0.05 * max);
        }
    }

    #[test]
    fn snr_changes_image_but_not_scene() {
        let clean = generate::<f64>(&small_spec()).unwrap();
        let noisy =
            generate::<f64>(&GenSpec { snr_db: Some(5.0), ..small_spec() }).unwrap();
        assert_eq!(clean.samples[0].scene, noisy.samples[0].scene);
        assert_ne!(clean.samples[0].magnitude, noisy.samples[0].magnitude);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.bin");
        let spec = small_spec();
        let ds = generate::<f32>(&spec).unwrap();
        let manifest = save_dataset(&path, &ds, &spec).unwrap();
        assert_eq!(manifest.offsets.len(), 4);
        let (back, m2) = load_dataset::<f32>(&path).unwrap();
        assert_eq!(m2.count, 4);
        assert_eq!(m2.seed, 5);
        for (a, b) in ds.samples.iter().zip(back.samples.iter()) {
            assert_eq!(a.scene, b.scene);
            assert_eq!(a.magnitude, b.magnitude); // f32 payload: bit-exact
            assert_eq!(a.labels.len(), b.labels.len());
            for (x, y) in a.labels.iter().zip(b.labels.iter()) {
                assert!((x.row - y.row).abs() < 1e-5);
                assert!((x.col - y.col).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        let spec = small_spec();
        let ds = generate::<f32>(&spec).unwrap();
        save_dataset(&path, &ds, &spec).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(load_dataset::<f32>(&path).is_err());
    }
}

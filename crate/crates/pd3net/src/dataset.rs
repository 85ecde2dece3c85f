//! Dataset files: raw little-endian `u16` depth frames plus a JSON-lines
//! manifest, one record per frame.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{encode_labels, Annotation, CodecConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::synth::{advance_walker, generate_frame, sample_pose_base, spawn_walkers, SceneConfig};
use crate::tensor::{Shape, Tensor};
use crate::train::Sample;

/// One manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Frame file path relative to the manifest.
    pub path: String,
    pub h: usize,
    pub w: usize,
    pub depth_min_m: f64,
    pub depth_max_m: f64,
    /// `[u, v, occlusion]` per person.
    pub annotations: Vec<[f64; 3]>,
}

impl FrameRecord {
    pub fn annotations(&self) -> Vec<Annotation> {
        self.annotations
            .iter()
            .map(|a| Annotation { u: a[0], v: a[1], occlusion: a[2] })
            .collect()
    }
}

const MANIFEST: &str = "manifest.jsonl";
/// Reserved substream for the dataset-level draws (base pose, walkers).
const SCENE_STREAM: u64 = u64::MAX;
/// Simulated seconds between consecutive frames.
const FRAME_DT_S: f64 = 0.4;

/// Render `n_frames` into `dir` (frames plus manifest). A fixed config seed
/// reproduces the dataset byte for byte; results are independent of `jobs`
/// because trajectories are precomputed sequentially and every frame renders
/// from its own derived random stream.
pub fn generate_dataset(
    cfg: &SceneConfig,
    n_frames: usize,
    dir: &Path,
    jobs: usize,
) -> Result<Vec<FrameRecord>> {
    cfg.validate()?;
    if n_frames == 0 {
        return Err(Error::Param("dataset needs at least one frame".into()));
    }
    fs::create_dir_all(dir)?;
    let mut scene_rng = Rng::derive(cfg.seed, SCENE_STREAM);
    let base = sample_pose_base(cfg, &mut scene_rng);
    let mut walkers = spawn_walkers(cfg, &base, &mut scene_rng);

    // Walker trajectories are sequential state; snapshot them per frame
    // before the (parallelizable) rendering pass.
    let mut snapshots = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        snapshots.push(walkers.clone());
        for walker in walkers.iter_mut() {
            advance_walker(walker, cfg, &base, FRAME_DT_S, &mut scene_rng);
        }
    }

    let render = |index: usize| {
        generate_frame(cfg, &base, &snapshots[index], &mut Rng::derive(cfg.seed, index as u64))
    };
    let frames: Vec<crate::synth::DepthFrame> = if jobs <= 1 {
        (0..n_frames).map(render).collect::<Result<_>>()?
    } else {
        let chunk = n_frames.div_ceil(jobs);
        let indices: Vec<usize> = (0..n_frames).collect();
        let results: Vec<Result<Vec<_>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = indices
                .chunks(chunk)
                .map(|indices| scope.spawn(move || indices.iter().map(|&i| render(i)).collect()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("render worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(n_frames);
        for r in results {
            all.extend(r?);
        }
        all
    };

    let mut records = Vec::with_capacity(n_frames);
    let manifest_path = dir.join(MANIFEST);
    let mut manifest = BufWriter::new(File::create(&manifest_path)?);
    for (index, frame) in frames.iter().enumerate() {
        let name = format!("frame_{index:06}.u16");
        let mut file = BufWriter::new(File::create(dir.join(&name))?);
        for value in &frame.depth {
            file.write_all(&value.to_le_bytes())?;
        }
        file.flush()?;
        let record = FrameRecord {
            path: name,
            h: frame.height,
            w: frame.width,
            depth_min_m: cfg.depth_min_m,
            depth_max_m: cfg.depth_max_m,
            annotations: frame.annotations.iter().map(|a| [a.u, a.v, a.occlusion]).collect(),
        };
        manifest.write_all(serde_json::to_string(&record)?.as_bytes())?;
        manifest.write_all(b"\n")?;
        records.push(record);
    }
    manifest.flush()?;
    Ok(records)
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Error {
        Error::Format(format!("manifest JSON: {e}"))
    }
}

/// Read a dataset manifest.
pub fn load_manifest(dir: &Path) -> Result<Vec<FrameRecord>> {
    let file = File::open(dir.join(MANIFEST))
        .map_err(|e| Error::Format(format!("cannot open manifest in {}: {e}", dir.display())))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    if records.is_empty() {
        return Err(Error::Format("manifest is empty".into()));
    }
    Ok(records)
}

/// Load one frame as a normalized `(1, 1, h, w)` tensor.
pub fn load_frame(dir: &Path, record: &FrameRecord) -> Result<Tensor> {
    let mut file = BufReader::new(File::open(dir.join(&record.path))?);
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let expected = record.h * record.w * 2;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes, found {}",
            record.path,
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64 / 65535.0)
        .collect();
    Tensor::from_vec(Shape::new(1, 1, record.h, record.w), data)
}

/// Load all frames plus their encoded label maps, ready for training.
pub fn load_samples(dir: &Path, codec: &CodecConfig) -> Result<Vec<Sample>> {
    let records = load_manifest(dir)?;
    records
        .iter()
        .map(|record| {
            let image = load_frame(dir, record)?;
            let target = encode_labels(&record.annotations(), record.h, record.w, codec)?;
            Ok(Sample { image, target })
        })
        .collect()
}

/// Load frames with their raw annotations (for evaluation).
pub fn load_eval_frames(dir: &Path) -> Result<Vec<(Tensor, Vec<Annotation>)>> {
    let records = load_manifest(dir)?;
    records
        .iter()
        .map(|record| Ok((load_frame(dir, record)?, record.annotations())))
        .collect()
}

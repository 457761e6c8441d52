//! Corpus materialization: JSONL manifests plus PPM images on disk.
//!
//! One record per line: scene, caption, QA pairs, and the image path with
//! its stored resolution. Regeneration from (seed, sizes) is bit-identical.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{caption, qa_pair, render, sample_scene_split, QaPair, SceneSpec, Split};
use crate::error::{Error, Result};
use crate::rng::Pcg32;

pub const QA_PER_SCENE: usize = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene: SceneSpec,
    pub caption: String,
    pub qa: Vec<QaPair>,
    pub image: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub dir: PathBuf,
}

impl CorpusPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CorpusPaths { dir: dir.into() }
    }

    pub fn train_manifest(&self) -> PathBuf {
        self.dir.join("train.jsonl")
    }

    pub fn eval_manifest(&self) -> PathBuf {
        self.dir.join("eval.jsonl")
    }

    pub fn images_dir(&self) -> PathBuf {
        self.dir.join("images")
    }
}

fn write_split(
    paths: &CorpusPaths,
    rng: &mut Pcg32,
    split: Split,
    n: usize,
    prefix: &str,
    small_fraction: f32,
) -> Result<Vec<SceneRecord>> {
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let scene = sample_scene_split(rng, split);
        let cap = caption(&scene, rng);
        let qa: Vec<QaPair> = (0..QA_PER_SCENE).map(|_| qa_pair(&scene, rng)).collect();
        // A slice of training images is stored at the small resolution so
        // the decoder's short-side filter has something to filter.
        let res = if split == Split::Train && rng.next_f32() < small_fraction {
            32
        } else {
            48
        };
        let img = render(&scene, res)?;
        let rel = format!("images/{prefix}_{i:05}.ppm");
        super::ppm_write(&img, &paths.dir.join(&rel))?;
        records.push(SceneRecord {
            scene,
            caption: cap,
            qa,
            image: rel,
            width: res as u32,
            height: res as u32,
        });
    }
    Ok(records)
}

fn write_manifest(path: &Path, records: &[SceneRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)
            .map_err(|e| Error::format(0, format!("record encode: {e}")))?;
        buf.push(b'\n');
    }
    let mut f =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Generate train/eval manifests and images under `dir`.
pub fn generate_corpus(
    dir: &Path,
    seed: u64,
    n_train: usize,
    n_eval: usize,
    small_fraction: f32,
) -> Result<CorpusPaths> {
    let paths = CorpusPaths::new(dir);
    fs::create_dir_all(paths.images_dir())
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    let root = Pcg32::new(seed, 0);
    let mut train_rng = root.substream(1);
    let mut eval_rng = root.substream(2);
    let train = write_split(
        &paths,
        &mut train_rng,
        Split::Train,
        n_train,
        "train",
        small_fraction,
    )?;
    let eval = write_split(&paths, &mut eval_rng, Split::Eval, n_eval, "eval", 0.0)?;
    write_manifest(&paths.train_manifest(), &train)?;
    write_manifest(&paths.eval_manifest(), &eval)?;
    Ok(paths)
}

pub fn load_records(manifest: &Path) -> Result<Vec<SceneRecord>> {
    let f =
        fs::File::open(manifest).map_err(|e| Error::io(manifest.display().to_string(), e))?;
    let reader = BufReader::new(f);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(manifest.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SceneRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(i as u64, format!("record {i}: {e}")))?;
        out.push(rec);
    }
    Ok(out)
}

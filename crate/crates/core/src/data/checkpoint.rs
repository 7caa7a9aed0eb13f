//! Training checkpoints: a directory with `manifest.json` and one OVNT
//! tensor per grid and per Adam moment buffer, plus the current pseudo
//! maps once self-training has started.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::image::LabelMap;
use super::scene::{read_json, view_name, write_json, Camera};
use super::tensor::{read_tensor, write_tensor, TensorFile};
use crate::cse::PseudoMapSet;
use crate::error::{Error, Result};
use crate::field::{Aabb, FieldGrid};
use crate::train::adam::{AdamState, Moments};
use crate::train::config::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub field: FieldGrid,
    pub adam: AdamState,
    /// Next iteration to run.
    pub iteration: u64,
    pub config: TrainConfig,
    pub pseudo: Option<PseudoMapSet>,
    /// Every synthesized pose, including ones a provider dropped.
    pub novel_poses: Vec<Camera>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    iteration: u64,
    adam_step: u64,
    aabb: Aabb,
    resolution: [usize; 3],
    feature_dim: usize,
    grids: Vec<GridEntry>,
    pseudo: Option<PseudoEntry>,
    novel_poses: usize,
    config: TrainConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridEntry {
    name: String,
    file: String,
    dims: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PseudoEntry {
    generated_at: u64,
    train_maps: usize,
    novel_maps: usize,
}

fn buffers(ck: &Checkpoint) -> Vec<(&'static str, Vec<usize>, &Vec<f32>)> {
    let [nx, ny, nz] = ck.field.resolution;
    let d = ck.field.feature_dim;
    let s1 = vec![nx, ny, nz];
    let s3 = vec![nx, ny, nz, 3];
    let sd = vec![nx, ny, nz, d];
    vec![
        ("density", s1.clone(), &ck.field.density_raw),
        ("color", s3.clone(), &ck.field.color_raw),
        ("feature", sd.clone(), &ck.field.feature),
        ("adam_m_density", s1.clone(), &ck.adam.first.density),
        ("adam_m_color", s3.clone(), &ck.adam.first.color),
        ("adam_m_feature", sd.clone(), &ck.adam.first.feature),
        ("adam_v_density", s1, &ck.adam.second.density),
        ("adam_v_color", s3, &ck.adam.second.color),
        ("adam_v_feature", sd, &ck.adam.second.feature),
    ]
}

pub fn save_checkpoint(dir: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut grids = Vec::new();
    for (name, dims, values) in buffers(ck) {
        let file = format!("{name}.ovnt");
        write_tensor(dir.join(&file), &TensorFile::from_f32(dims.clone(), values.clone())?)?;
        grids.push(GridEntry {
            name: name.into(),
            file,
            dims,
        });
    }
    let pseudo_dir = dir.join("pseudo");
    if pseudo_dir.exists() {
        fs::remove_dir_all(&pseudo_dir).map_err(|e| Error::io(&pseudo_dir, e))?;
    }
    if let Some(p) = &ck.pseudo {
        for (i, m) in p.train_maps.iter().enumerate() {
            write_tensor(pseudo_dir.join(format!("train/{}.ovnt", view_name(i))), &m.to_tensor())?;
        }
        for (i, m) in p.novel_maps.iter().enumerate() {
            write_tensor(pseudo_dir.join(format!("novel/{}.ovnt", view_name(i))), &m.to_tensor())?;
        }
        if !p.novel_cameras.is_empty() {
            write_json(&pseudo_dir.join("novel_cameras.json"), &p.novel_cameras)?;
        }
    }
    if !ck.novel_poses.is_empty() {
        write_json(&pseudo_dir.join("poses.json"), &ck.novel_poses)?;
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        iteration: ck.iteration,
        adam_step: ck.adam.step,
        aabb: ck.field.aabb,
        resolution: ck.field.resolution,
        feature_dim: ck.field.feature_dim,
        grids,
        pseudo: ck.pseudo.as_ref().map(|p| PseudoEntry {
            generated_at: p.generated_at,
            train_maps: p.train_maps.len(),
            novel_maps: p.novel_maps.len(),
        }),
        novel_poses: ck.novel_poses.len(),
        config: ck.config.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(manifest_path.clone())
        } else {
            Error::io(&manifest_path, e)
        }
    })?;
    // check the version before the full schema so old/new layouts get a
    // clear message
    let version = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("format_version").and_then(|x| x.as_u64()))
        .unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let m: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    let load = |name: &str| -> Result<Vec<f32>> {
        let entry = m
            .grids
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::invalid("manifest.json", format!("missing grid {name}")))?;
        let t = read_tensor(dir.join(&entry.file))?;
        if t.dims() != entry.dims.as_slice() {
            return Err(Error::DimensionMismatch {
                what: entry.file.clone(),
                expected: entry.dims.clone(),
                found: t.dims().to_vec(),
            });
        }
        t.into_f32()
            .ok_or_else(|| Error::invalid(&entry.file, "expected f32 dtype"))
    };
    let field = FieldGrid {
        aabb: m.aabb,
        resolution: m.resolution,
        feature_dim: m.feature_dim,
        density_raw: load("density")?,
        color_raw: load("color")?,
        feature: load("feature")?,
    };
    let adam = AdamState {
        first: Moments {
            density: load("adam_m_density")?,
            color: load("adam_m_color")?,
            feature: load("adam_m_feature")?,
        },
        second: Moments {
            density: load("adam_v_density")?,
            color: load("adam_v_color")?,
            feature: load("adam_v_feature")?,
        },
        step: m.adam_step,
    };
    if !adam.shapes_match(&field) {
        return Err(Error::invalid("checkpoint", "moment buffers do not match grids"));
    }
    let pseudo_dir = dir.join("pseudo");
    let read_maps = |sub: &str, n: usize| -> Result<Vec<LabelMap>> {
        (0..n)
            .map(|i| {
                let p = pseudo_dir.join(format!("{sub}/{}.ovnt", view_name(i)));
                LabelMap::from_tensor(read_tensor(&p)?, &p.display().to_string())
            })
            .collect()
    };
    let read_cams = |file: &str, n: usize| -> Result<Vec<Camera>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let path = pseudo_dir.join(file);
        let cams: Vec<Camera> = read_json(&path)?;
        if cams.len() != n {
            return Err(Error::DimensionMismatch {
                what: path.display().to_string(),
                expected: vec![n],
                found: vec![cams.len()],
            });
        }
        Ok(cams)
    };
    let pseudo = match &m.pseudo {
        Some(p) => Some(PseudoMapSet {
            train_maps: read_maps("train", p.train_maps)?,
            novel_maps: read_maps("novel", p.novel_maps)?,
            novel_cameras: read_cams("novel_cameras.json", p.novel_maps)?,
            generated_at: p.generated_at,
        }),
        None => None,
    };
    Ok(Checkpoint {
        field,
        adam,
        iteration: m.iteration,
        config: m.config,
        pseudo,
        novel_poses: read_cams("poses.json", m.novel_poses)?,
    })
}

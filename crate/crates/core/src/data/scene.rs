//! Scene directories: cameras, images, precomputed features, region
//! proposals, and class text embeddings.
//!
//! ```text
//! cameras.json
//! rgb/<idx>.ovnt     H×W×3 f32
//! feat/<idx>.ovnt    H×W×D f32 (train views)
//! masks/<idx>.json   region proposals (train views)
//! text.ovnt          M×D f32
//! gt/<idx>.ovnt      H×W u16 (optional)
//! ```
//!
//! Camera space is x-right, y-up, looking down −z.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{Image, LabelMap};
use super::rle::RegionProposalSet;
use super::tensor::{read_tensor, write_tensor, TensorFile};
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

const ROTATION_TOL: f64 = 1e-5;
const TEXT_NORM_TOL: f32 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    /// Camera-to-world, row-major 4×4.
    pub c2w: [f32; 16],
    pub split: Split,
}

impl Camera {
    pub fn rotation(&self) -> Mat3 {
        let m = &self.c2w;
        Mat3([
            [m[0] as f64, m[1] as f64, m[2] as f64],
            [m[4] as f64, m[5] as f64, m[6] as f64],
            [m[8] as f64, m[9] as f64, m[10] as f64],
        ])
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.c2w[3], self.c2w[7], self.c2w[11])
    }

    pub fn with_pose(&self, rotation: &Mat3, translation: Vec3) -> Camera {
        let r = &rotation.0;
        let t = translation;
        let mut c = self.clone();
        c.c2w = [
            r[0][0] as f32, r[0][1] as f32, r[0][2] as f32, t.x,
            r[1][0] as f32, r[1][1] as f32, r[1][2] as f32, t.y,
            r[2][0] as f32, r[2][1] as f32, r[2][2] as f32, t.z,
            0.0, 0.0, 0.0, 1.0,
        ];
        c
    }

    /// Pose looking from `eye` at `target` with the given world up vector.
    pub fn look_at(mut self, eye: Vec3, target: Vec3, up: Vec3) -> Camera {
        let back = (eye - target).normalized();
        let right = up.cross(back).normalized();
        let true_up = back.cross(right);
        let rot = Mat3::from_columns(right, true_up, back);
        self = self.with_pose(&rot, eye);
        self
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    fn validate(&self, frame: &str) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(
                format!("{frame}: intrinsics"),
                "fx and fy must be positive",
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("cameras.json", "width and height must be positive"));
        }
        if !self.rotation().is_rotation(ROTATION_TOL) {
            return Err(Error::NonRotation {
                frame: frame.to_string(),
            });
        }
        Ok(())
    }
}

/// Class text embeddings, one unit row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddings {
    pub classes: usize,
    pub dim: usize,
    pub rows: Vec<f32>,
}

impl TextEmbeddings {
    pub fn new(classes: usize, dim: usize, rows: Vec<f32>) -> Result<Self> {
        if rows.len() != classes * dim {
            return Err(Error::DimensionMismatch {
                what: "text embeddings".into(),
                expected: vec![classes, dim],
                found: vec![rows.len()],
            });
        }
        let t = TextEmbeddings { classes, dim, rows };
        t.validate()?;
        Ok(t)
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.rows[class * self.dim..(class + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("text.ovnt", "at least two classes are required"));
        }
        for m in 0..self.classes {
            let norm = self.row(m).iter().map(|v| v * v).sum::<f32>().sqrt();
            if !((norm - 1.0).abs() <= TEXT_NORM_TOL) {
                return Err(Error::NonUnitTextRow { row: m, norm });
            }
        }
        Ok(())
    }

    pub fn from_tensor(t: TensorFile) -> Result<Self> {
        if t.dims().len() != 2 {
            return Err(Error::invalid("text.ovnt", format!("expected M×D, got {:?}", t.dims())));
        }
        let (m, d) = (t.dims()[0], t.dims()[1]);
        let rows = t
            .into_f32()
            .ok_or_else(|| Error::invalid("text.ovnt", "expected f32 dtype"))?;
        Self::new(m, d, rows)
    }

    pub fn to_tensor(&self) -> TensorFile {
        TensorFile::from_f32(vec![self.classes, self.dim], self.rows.clone())
            .expect("embedding dims are non-zero")
    }
}

#[derive(Debug, Clone)]
pub struct View {
    /// Zero-padded index shared by every per-view file.
    pub name: String,
    pub camera: Camera,
    pub rgb: Image,
    pub features: Option<Image>,
    pub proposals: Option<RegionProposalSet>,
    pub gt: Option<LabelMap>,
}

#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub views: Vec<View>,
    pub text: TextEmbeddings,
    pub warnings: Vec<String>,
}

impl SceneDataset {
    pub fn train_views(&self) -> impl Iterator<Item = &View> {
        self.views.iter().filter(|v| v.camera.split == Split::Train)
    }

    pub fn test_views(&self) -> impl Iterator<Item = &View> {
        self.views.iter().filter(|v| v.camera.split == Split::Test)
    }

    pub fn feature_dim(&self) -> usize {
        self.text.dim
    }

    /// Checks every cross-file invariant. `load_scene` calls this; it is
    /// public so in-memory scenes can be checked before export.
    pub fn validate(&self) -> Result<()> {
        self.text.validate()?;
        for v in &self.views {
            v.camera.validate(&v.name)?;
            let (h, w) = (v.camera.height, v.camera.width);
            let dims = |img: &Image| vec![img.height, img.width, img.channels];
            if (v.rgb.height, v.rgb.width, v.rgb.channels) != (h, w, 3) {
                return Err(Error::DimensionMismatch {
                    what: format!("rgb/{}.ovnt", v.name),
                    expected: vec![h, w, 3],
                    found: dims(&v.rgb),
                });
            }
            if let Some(bad) = v.rgb.data.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::invalid(
                    format!("rgb/{}.ovnt", v.name),
                    format!("value {bad} outside [0,1]"),
                ));
            }
            if v.camera.split == Split::Train {
                let feat = v
                    .features
                    .as_ref()
                    .ok_or_else(|| Error::MissingFile(format!("feat/{}.ovnt", v.name).into()))?;
                if (feat.height, feat.width, feat.channels) != (h, w, self.text.dim) {
                    return Err(Error::DimensionMismatch {
                        what: format!("feat/{}.ovnt", v.name),
                        expected: vec![h, w, self.text.dim],
                        found: dims(feat),
                    });
                }
                if feat.data.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid(format!("feat/{}.ovnt", v.name), "non-finite value"));
                }
                let props = v
                    .proposals
                    .as_ref()
                    .ok_or_else(|| Error::MissingFile(format!("masks/{}.json", v.name).into()))?;
                if (props.height, props.width) != (h, w) {
                    return Err(Error::DimensionMismatch {
                        what: format!("masks/{}.json", v.name),
                        expected: vec![h, w],
                        found: vec![props.height, props.width],
                    });
                }
                props.validate()?;
            }
            if let Some(gt) = &v.gt {
                if (gt.height, gt.width) != (h, w) {
                    return Err(Error::DimensionMismatch {
                        what: format!("gt/{}.ovnt", v.name),
                        expected: vec![h, w],
                        found: vec![gt.height, gt.width],
                    });
                }
                if let Some(&l) = gt.data.iter().find(|&&l| l as usize >= self.text.classes) {
                    return Err(Error::LabelOutOfRange {
                        what: format!("gt/{}.ovnt", v.name),
                        label: l as u32,
                        classes: self.text.classes,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CamerasJson {
    width: usize,
    height: usize,
    fx: f32,
    fy: f32,
    cx: f32,
    cy: f32,
    frames: Vec<FrameJson>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameJson {
    file: String,
    c2w: Vec<f32>,
    split: Split,
}

pub fn view_name(index: usize) -> String {
    format!("{index:04}")
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_proposals(path: impl AsRef<Path>) -> Result<RegionProposalSet> {
    let set: RegionProposalSet = read_json(path.as_ref())?;
    set.validate()?;
    Ok(set)
}

pub fn write_proposals(path: impl AsRef<Path>, set: &RegionProposalSet) -> Result<()> {
    write_json(path.as_ref(), set)
}

pub fn write_cameras(path: impl AsRef<Path>, cameras: &[(String, Camera)]) -> Result<()> {
    let first = &cameras
        .first()
        .ok_or_else(|| Error::invalid("cameras", "no cameras to write"))?
        .1;
    let json = CamerasJson {
        width: first.width,
        height: first.height,
        fx: first.fx,
        fy: first.fy,
        cx: first.cx,
        cy: first.cy,
        frames: cameras
            .iter()
            .map(|(name, c)| FrameJson {
                file: format!("rgb/{name}.ovnt"),
                c2w: c.c2w.to_vec(),
                split: c.split,
            })
            .collect(),
    };
    write_json(path.as_ref(), &json)
}

/// Reads `cameras.json` and returns `(view name, camera)` pairs in file order.
pub fn read_cameras(path: impl AsRef<Path>) -> Result<Vec<(String, Camera)>> {
    let json: CamerasJson = read_json(path.as_ref())?;
    json.frames
        .iter()
        .map(|f| {
            let name = Path::new(&f.file)
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::invalid("cameras.json", format!("bad frame file {:?}", f.file)))?
                .to_string();
            let c2w: [f32; 16] = f.c2w.as_slice().try_into().map_err(|_| {
                Error::invalid(format!("{}: c2w", f.file), "expected 16 values")
            })?;
            let cam = Camera {
                width: json.width,
                height: json.height,
                fx: json.fx,
                fy: json.fy,
                cx: json.cx,
                cy: json.cy,
                c2w,
                split: f.split,
            };
            cam.validate(&f.file)?;
            Ok((name, cam))
        })
        .collect()
}

pub fn load_scene(dir: impl AsRef<Path>) -> Result<SceneDataset> {
    let dir = dir.as_ref();
    let cameras = read_cameras(dir.join("cameras.json"))?;
    let text = TextEmbeddings::from_tensor(read_tensor(dir.join("text.ovnt"))?)?;

    let mut warnings = Vec::new();
    let mut views = Vec::with_capacity(cameras.len());
    for (name, camera) in cameras {
        let rgb = Image::from_tensor(read_tensor(dir.join(format!("rgb/{name}.ovnt")))?, &name)?;
        let (features, proposals) = if camera.split == Split::Train {
            let feat_path = dir.join(format!("feat/{name}.ovnt"));
            let feat = Image::from_tensor(read_tensor(&feat_path)?, &format!("feat/{name}.ovnt"))?;
            let props = read_proposals(dir.join(format!("masks/{name}.json")))?;
            (Some(feat), Some(props))
        } else {
            (None, None)
        };
        let gt_path = dir.join(format!("gt/{name}.ovnt"));
        let gt = if gt_path.exists() {
            Some(LabelMap::from_tensor(read_tensor(&gt_path)?, &format!("gt/{name}.ovnt"))?)
        } else {
            if camera.split == Split::Test {
                warnings.push(format!("test view {name} has no ground-truth labels"));
            }
            None
        };
        views.push(View {
            name,
            camera,
            rgb,
            features,
            proposals,
            gt,
        });
    }
    let scene = SceneDataset {
        views,
        text,
        warnings,
    };
    scene.validate()?;
    for w in &scene.warnings {
        log::warn!("{}: {w}", dir.display());
    }
    Ok(scene)
}

pub fn save_scene(dir: impl AsRef<Path>, scene: &SceneDataset) -> Result<()> {
    let dir = dir.as_ref();
    scene.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cams: Vec<(String, Camera)> = scene
        .views
        .iter()
        .map(|v| (v.name.clone(), v.camera.clone()))
        .collect();
    write_cameras(dir.join("cameras.json"), &cams)?;
    write_tensor(dir.join("text.ovnt"), &scene.text.to_tensor())?;
    for v in &scene.views {
        v.rgb.save(dir.join(format!("rgb/{}.ovnt", v.name)))?;
        if let Some(f) = &v.features {
            f.save(dir.join(format!("feat/{}.ovnt", v.name)))?;
        }
        if let Some(p) = &v.proposals {
            write_proposals(dir.join(format!("masks/{}.json", v.name)), p)?;
        }
        if let Some(gt) = &v.gt {
            write_tensor(dir.join(format!("gt/{}.ovnt", v.name)), &gt.to_tensor())?;
        }
    }
    Ok(())
}

/// Files that make up a scene, relative to its directory.
pub fn scene_files(scene: &SceneDataset) -> Vec<PathBuf> {
    let mut files = vec![PathBuf::from("cameras.json"), PathBuf::from("text.ovnt")];
    for v in &scene.views {
        files.push(format!("rgb/{}.ovnt", v.name).into());
        if v.features.is_some() {
            files.push(format!("feat/{}.ovnt", v.name).into());
            files.push(format!("masks/{}.json", v.name).into());
        }
        if v.gt.is_some() {
            files.push(format!("gt/{}.ovnt", v.name).into());
        }
    }
    files
}

//! Synthetic oracle scenes: primitives seen from an orbit, with exact
//! labels, label corruption that mimics noisy and view-inconsistent
//! relevancy maps, features that invert the relevancy map, and
//! segment-style region proposals.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::image::{Image, LabelMap};
use crate::data::rle::{Mask, RegionProposalSet};
use crate::data::scene::{save_scene, view_name, Camera, SceneDataset, Split, TextEmbeddings, View};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::morph::{connected_components, dilate, erode};
use crate::render::pixel_direction;
use crate::rng::{rng_for, Stream};

/// Proposals and instances smaller than this are ignored.
pub const MIN_COMPONENT_PIXELS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Box { center: [f32; 3], half_size: [f32; 3] },
    Sphere { center: [f32; 3], radius: f32 },
}

impl Shape {
    /// Smallest positive hit distance along `origin + t·dir`.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f32> {
        match *self {
            Shape::Box { center, half_size } => {
                let mut t0 = f32::NEG_INFINITY;
                let mut t1 = f32::INFINITY;
                for a in 0..3 {
                    let (o, d) = (origin.get(a), dir.get(a));
                    let (lo, hi) = (center[a] - half_size[a], center[a] + half_size[a]);
                    if d.abs() < 1e-12 {
                        if o < lo || o > hi {
                            return None;
                        }
                        continue;
                    }
                    let (a0, a1) = ((lo - o) / d, (hi - o) / d);
                    t0 = t0.max(a0.min(a1));
                    t1 = t1.min(a0.max(a1));
                }
                if t1 < t0.max(0.0) {
                    None
                } else if t0 > 0.0 {
                    Some(t0)
                } else {
                    Some(t1)
                }
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - Vec3::from_array(center);
                let b = oc.dot(dir);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|&t| t > 0.0)
            }
        }
    }

    fn inside_cube(&self, half: f32) -> bool {
        let (c, ext) = match *self {
            Shape::Box { center, half_size } => (center, half_size),
            Shape::Sphere { center, radius } => (center, [radius; 3]),
        };
        (0..3).all(|a| c[a] - ext[a] >= -half && c[a] + ext[a] <= half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(flatten)]
    pub shape: Shape,
    pub class: u16,
    pub color: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub count: usize,
    pub radius: f32,
    /// Camera height above the look-at point.
    pub height: f32,
    pub look_at: [f32; 3],
    /// Horizontal field of view in degrees.
    pub fov_deg: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionParams {
    /// Largest boundary dilation/erosion radius in pixels.
    pub boundary_px: usize,
    /// Per-view, per-instance probability of relabeling to the partner class.
    pub flip_prob: f64,
    /// Standard deviation of the per-channel feature noise.
    pub feat_noise: f32,
    /// Largest proposal boundary perturbation in pixels.
    pub proposal_jitter: usize,
    pub proposal_drop: f64,
}

impl Default for CorruptionParams {
    fn default() -> Self {
        CorruptionParams {
            boundary_px: 3,
            flip_prob: 0.15,
            feat_noise: 0.1,
            proposal_jitter: 2,
            proposal_drop: 0.1,
        }
    }
}

impl CorruptionParams {
    pub fn none() -> Self {
        CorruptionParams {
            boundary_px: 0,
            flip_prob: 0.0,
            feat_noise: 0.0,
            proposal_jitter: 0,
            proposal_drop: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid("corruption.flip_prob", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.proposal_drop) {
            return Err(Error::invalid("corruption.proposal_drop", "must lie in [0, 1]"));
        }
        if !(self.feat_noise >= 0.0 && self.feat_noise.is_finite()) {
            return Err(Error::invalid("corruption.feat_noise", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub objects: Vec<SceneObject>,
    pub classes: usize,
    pub feature_dim: usize,
    pub orbit: Orbit,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub corruption: CorruptionParams,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSceneSpec {
    /// Three objects (two boxes and a sphere), 4 classes, 16-dim
    /// features, 44 views of 96×96.
    pub fn threebox() -> Self {
        SyntheticSceneSpec {
            objects: vec![
                SceneObject {
                    shape: Shape::Box {
                        center: [-0.4, -0.25, 0.15],
                        half_size: [0.25, 0.25, 0.25],
                    },
                    class: 1,
                    color: [0.85, 0.2, 0.15],
                },
                SceneObject {
                    shape: Shape::Sphere {
                        center: [0.4, -0.2, 0.2],
                        radius: 0.3,
                    },
                    class: 2,
                    color: [0.2, 0.75, 0.25],
                },
                SceneObject {
                    shape: Shape::Box {
                        center: [0.0, 0.1, -0.45],
                        half_size: [0.25, 0.4, 0.2],
                    },
                    class: 3,
                    color: [0.2, 0.3, 0.9],
                },
            ],
            classes: 4,
            feature_dim: 16,
            orbit: Orbit {
                count: 44,
                radius: 2.6,
                height: 1.2,
                look_at: [0.0, -0.1, 0.0],
                fov_deg: 45.0,
            },
            width: 96,
            height: 96,
            corruption: CorruptionParams::default(),
            seed: 0,
        }
    }

    /// Floor slab plus five objects, 8 classes (one never appears), 80
    /// views of 128×128.
    pub fn room() -> Self {
        let obj = |shape, class, color| SceneObject { shape, class, color };
        SyntheticSceneSpec {
            objects: vec![
                obj(
                    Shape::Box {
                        center: [0.0, -0.85, 0.0],
                        half_size: [0.95, 0.1, 0.95],
                    },
                    1,
                    [0.6, 0.5, 0.35],
                ),
                obj(
                    Shape::Box {
                        center: [-0.5, -0.5, -0.4],
                        half_size: [0.3, 0.25, 0.2],
                    },
                    2,
                    [0.8, 0.2, 0.2],
                ),
                obj(
                    Shape::Sphere {
                        center: [0.45, -0.5, 0.4],
                        radius: 0.25,
                    },
                    3,
                    [0.2, 0.7, 0.3],
                ),
                obj(
                    Shape::Box {
                        center: [0.5, -0.2, -0.5],
                        half_size: [0.15, 0.55, 0.15],
                    },
                    4,
                    [0.25, 0.3, 0.85],
                ),
                obj(
                    Shape::Sphere {
                        center: [-0.45, -0.55, 0.45],
                        radius: 0.2,
                    },
                    5,
                    [0.9, 0.8, 0.2],
                ),
                obj(
                    Shape::Box {
                        center: [0.0, -0.6, 0.0],
                        half_size: [0.2, 0.15, 0.2],
                    },
                    6,
                    [0.7, 0.3, 0.8],
                ),
            ],
            classes: 8,
            feature_dim: 16,
            orbit: Orbit {
                count: 80,
                radius: 2.8,
                height: 1.4,
                look_at: [0.0, -0.4, 0.0],
                fov_deg: 50.0,
            },
            width: 128,
            height: 128,
            corruption: CorruptionParams::default(),
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "threebox" => Ok(Self::threebox()),
            "room" => Ok(Self::room()),
            other => Err(Error::invalid("preset", format!("unknown preset {other:?}"))),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("classes", "need at least 2 classes"));
        }
        if self.feature_dim < 2 {
            return Err(Error::invalid("feature_dim", "need at least 2 dimensions"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size", "must be positive"));
        }
        if self.orbit.count < 2 {
            return Err(Error::invalid("orbit.count", "need at least 2 views"));
        }
        if !(self.orbit.fov_deg > 0.0 && self.orbit.fov_deg < 180.0) {
            return Err(Error::invalid("orbit.fov_deg", "must lie in (0, 180)"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.class == 0 || o.class as usize >= self.classes {
                return Err(Error::LabelOutOfRange {
                    what: format!("objects[{i}].class"),
                    label: o.class as u32,
                    classes: self.classes,
                });
            }
            if !o.shape.inside_cube(1.0) {
                return Err(Error::invalid(format!("objects[{i}]"), "must lie inside the unit cube"));
            }
        }
        self.corruption.validate()
    }

    /// Orbit cameras; every 10th view (indices 9, 19, …) is a test view.
    pub fn cameras(&self) -> Vec<Camera> {
        let o = &self.orbit;
        let f = (self.width as f32 / 2.0) / (o.fov_deg.to_radians() / 2.0).tan();
        let target = Vec3::from_array(o.look_at);
        (0..o.count)
            .map(|i| {
                let theta = std::f32::consts::TAU * i as f32 / o.count as f32;
                let eye = target + Vec3::new(o.radius * theta.cos(), o.height, o.radius * theta.sin());
                Camera {
                    width: self.width,
                    height: self.height,
                    fx: f,
                    fy: f,
                    cx: self.width as f32 / 2.0,
                    cy: self.height as f32 / 2.0,
                    c2w: [0.0; 16],
                    split: if (i + 1) % 10 == 0 { Split::Test } else { Split::Train },
                }
                .look_at(eye, target, Vec3::new(0.0, 1.0, 0.0))
            })
            .collect()
    }
}

/// Analytic first-hit render: object color and class on a hit, black and
/// class 0 on a miss.
pub fn render_gt(objects: &[SceneObject], camera: &Camera) -> (Image, LabelMap) {
    let (h, w) = (camera.height, camera.width);
    let mut rgb = vec![0.0f32; h * w * 3];
    let mut labels = vec![0u16; h * w];
    let origin = camera.translation();
    for py in 0..h {
        for px in 0..w {
            let dir = pixel_direction(camera, px as f32, py as f32);
            let hit = objects
                .iter()
                .filter_map(|o| o.shape.intersect(origin, dir).map(|t| (t, o)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, o)) = hit {
                let p = py * w + px;
                labels[p] = o.class;
                rgb[p * 3..p * 3 + 3].copy_from_slice(&o.color);
            }
        }
    }
    (Image::new(h, w, 3, rgb), LabelMap::new(h, w, labels))
}

/// Confusion partner of a foreground class: `k → k+1`, wrapping from the
/// last class back to 1.
pub fn partner_class(class: u16, classes: usize) -> u16 {
    if class == 0 {
        0
    } else if class as usize + 1 >= classes {
        1
    } else {
        class + 1
    }
}

/// Instance flips to the partner class, then per-instance boundary
/// dilation or erosion. Instances are the 4-connected foreground
/// components of `gt`. Eroded pixels fall back to background.
pub fn corrupt_labels(gt: &LabelMap, classes: usize, params: &CorruptionParams, seed: u64, view: u64) -> LabelMap {
    let (h, w) = (gt.height, gt.width);
    let comps: Vec<_> = connected_components(&gt.data, h, w)
        .into_iter()
        .filter(|c| c.label != 0)
        .collect();
    let mut flip_rng = rng_for(seed, Stream::Flip, view);
    let labels: Vec<u16> = comps
        .iter()
        .map(|c| {
            if params.flip_prob > 0.0 && flip_rng.random_bool(params.flip_prob) {
                partner_class(c.label, classes)
            } else {
                c.label
            }
        })
        .collect();
    let mut out = gt.data.clone();
    for (c, &l) in comps.iter().zip(&labels) {
        for &p in &c.pixels {
            out[p] = l;
        }
    }
    if params.boundary_px == 0 {
        return LabelMap::new(h, w, out);
    }
    let mut morph_rng = rng_for(seed, Stream::Morph, view);
    let flipped = out.clone();
    for (c, &l) in comps.iter().zip(&labels) {
        let radius = morph_rng.random_range(0..=params.boundary_px);
        let grow = morph_rng.random_bool(0.5);
        if radius == 0 {
            continue;
        }
        let mut mask = vec![false; h * w];
        for &p in &c.pixels {
            mask[p] = true;
        }
        if grow {
            for (p, m) in dilate(&mask, h, w, radius).into_iter().enumerate() {
                if m && !mask[p] {
                    out[p] = l;
                }
            }
        } else {
            for (p, m) in erode(&mask, h, w, radius).into_iter().enumerate() {
                if mask[p] && !m && out[p] == flipped[p] {
                    out[p] = 0;
                }
            }
        }
    }
    LabelMap::new(h, w, out)
}

/// `normalize(E[label] + ε)` per pixel with `ε ~ N(0, s²)` per channel.
pub fn labels_to_features(labels: &LabelMap, text: &TextEmbeddings, noise: f32, seed: u64, view: u64) -> Image {
    let d = text.dim;
    let mut data = Vec::with_capacity(labels.len() * d);
    let mut rng = rng_for(seed, Stream::Features, view);
    let normal = (noise > 0.0).then(|| Normal::new(0.0f32, noise).expect("finite sigma"));
    let mut buf = vec![0.0f32; d];
    for &l in &labels.data {
        buf.copy_from_slice(text.row(l as usize));
        if let Some(n) = &normal {
            for x in buf.iter_mut() {
                *x += n.sample(&mut rng);
            }
        }
        let norm = buf.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            data.extend(buf.iter().map(|x| x / norm));
        } else {
            data.extend_from_slice(text.row(l as usize));
        }
    }
    Image::new(labels.height, labels.width, d, data)
}

/// One proposal per 4-connected component of every class (background
/// included) with at least [`MIN_COMPONENT_PIXELS`] pixels, each dropped
/// with `proposal_drop` and its boundary dilated or eroded by up to
/// `proposal_jitter` pixels. Ordered by decreasing area so smaller regions
/// come later.
pub fn gen_proposals(gt: &LabelMap, params: &CorruptionParams, seed: u64, view: u64) -> RegionProposalSet {
    let (h, w) = (gt.height, gt.width);
    let mut rng = rng_for(seed, Stream::Proposals, view);
    let mut masks = Vec::new();
    for c in connected_components(&gt.data, h, w) {
        if c.pixels.len() < MIN_COMPONENT_PIXELS {
            continue;
        }
        let drop = params.proposal_drop > 0.0 && rng.random_bool(params.proposal_drop);
        let radius = rng.random_range(0..=params.proposal_jitter);
        let grow = rng.random_bool(0.5);
        if drop {
            continue;
        }
        let mut bits = vec![false; h * w];
        for &p in &c.pixels {
            bits[p] = true;
        }
        if radius > 0 {
            bits = if grow {
                dilate(&bits, h, w, radius)
            } else {
                erode(&bits, h, w, radius)
            };
        }
        let mask = Mask {
            height: h,
            width: w,
            bits,
        };
        if mask.area() > 0 {
            masks.push(mask);
        }
    }
    // stable: equal areas keep raster order of discovery
    masks.sort_by_key(|m| std::cmp::Reverse(m.area()));
    RegionProposalSet::from_masks(h, w, &masks)
}

/// Random unit rows with every pairwise cosine at most `max_cos`.
pub fn random_embeddings(classes: usize, dim: usize, max_cos: f32, seed: u64) -> Result<TextEmbeddings> {
    let mut rng = rng_for(seed, Stream::Embeddings, 0);
    let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(classes);
    let mut attempts = 0usize;
    while rows.len() < classes {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::invalid(
                "embeddings",
                format!("cannot place {classes} rows in {dim} dims with cosine ≤ {max_cos}"),
            ));
        }
        let mut v: Vec<f32> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        let ok = rows
            .iter()
            .all(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum::<f32>() <= max_cos);
        if ok {
            rows.push(v);
        }
    }
    TextEmbeddings::new(classes, dim, rows.concat())
}

/// Builds the full in-memory scene: cameras, rendered RGB and labels,
/// corrupted features and proposals for training views, ground truth for
/// every view.
pub fn build_scene(spec: &SyntheticSceneSpec) -> Result<SceneDataset> {
    spec.validate()?;
    let text = random_embeddings(spec.classes, spec.feature_dim, 0.5, spec.seed)?;
    let cams = spec.cameras();
    let views: Vec<View> = cams
        .into_par_iter()
        .enumerate()
        .map(|(i, camera)| {
            let (rgb, gt) = render_gt(&spec.objects, &camera);
            let (features, proposals) = if camera.split == Split::Train {
                let noisy = corrupt_labels(&gt, spec.classes, &spec.corruption, spec.seed, i as u64);
                let feat = labels_to_features(&noisy, &text, spec.corruption.feat_noise, spec.seed, i as u64);
                let props = gen_proposals(&gt, &spec.corruption, spec.seed, i as u64);
                (Some(feat), Some(props))
            } else {
                (None, None)
            };
            View {
                name: view_name(i),
                camera,
                rgb,
                features,
                proposals,
                gt: Some(gt),
            }
        })
        .collect();
    let scene = SceneDataset {
        views,
        text,
        warnings: Vec::new(),
    };
    scene.validate()?;
    Ok(scene)
}

pub fn export_scene(spec: &SyntheticSceneSpec, out_dir: impl AsRef<Path>) -> Result<SceneDataset> {
    let scene = build_scene(spec)?;
    save_scene(out_dir, &scene)?;
    Ok(scene)
}

/// Shuffled copy of `0..n`, used by tests that need random label maps.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rng_for(seed, Stream::Proposals, u64::MAX));
    v
}

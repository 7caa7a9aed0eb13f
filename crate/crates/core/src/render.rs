//! Ray generation, sampling, and emission-absorption volume rendering of
//! color and semantic features, with the matching reverse pass.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::image::Image;
use crate::data::scene::Camera;
use crate::field::{logistic, softplus, FieldGrid, GridGradient, Trilinear};
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_near: f32,
    pub t_far: f32,
    /// The ray misses the scene box and renders as background.
    pub degenerate: bool,
}

impl Ray {
    pub fn at(&self, t: f32) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Near/far planes before clipping to the scene box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayBounds {
    pub near: f32,
    pub far: f32,
}

impl Default for RayBounds {
    fn default() -> Self {
        RayBounds {
            near: 0.0,
            far: 100.0,
        }
    }
}

/// World-space unit direction through pixel `(px, py)`. The camera looks
/// down its local −z with +y up; pixel centers sit at `+0.5`.
pub fn pixel_direction(camera: &Camera, px: f32, py: f32) -> Vec3 {
    let local = Vec3::new(
        (px + 0.5 - camera.cx) / camera.fx,
        -(py + 0.5 - camera.cy) / camera.fy,
        -1.0,
    );
    camera.rotation().mul_vec(local).normalized()
}

/// Ray through pixel `(px, py)`, clipped to the field's box.
pub fn generate_ray(camera: &Camera, px: f32, py: f32, field: &FieldGrid, bounds: RayBounds) -> Ray {
    let dir = pixel_direction(camera, px, py);
    let origin = camera.translation();
    match field.aabb.intersect(origin, dir) {
        Some((t0, t1)) => {
            let t_near = t0.max(bounds.near).max(0.0);
            let t_far = t1.min(bounds.far);
            Ray {
                origin,
                dir,
                t_near,
                t_far,
                degenerate: !(t_far > t_near),
            }
        }
        None => Ray {
            origin,
            dir,
            t_near: bounds.near,
            t_far: bounds.far.max(bounds.near),
            degenerate: true,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Bin midpoints.
    Uniform,
    /// One uniform draw per bin.
    Stratified,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RaySampling {
    pub t_values: Vec<f32>,
    pub deltas: Vec<f32>,
}

impl RaySampling {
    pub fn len(&self) -> usize {
        self.t_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_values.is_empty()
    }

    /// Fills in place so training can reuse buffers.
    pub fn fill<R: Rng + ?Sized>(
        &mut self,
        ray: &Ray,
        n_samples: usize,
        mode: SamplingMode,
        rng: Option<&mut R>,
    ) {
        self.t_values.clear();
        self.deltas.clear();
        if ray.degenerate {
            return;
        }
        let width = (ray.t_far - ray.t_near) / n_samples as f32;
        match (mode, rng) {
            (SamplingMode::Stratified, Some(rng)) => {
                for k in 0..n_samples {
                    let u: f32 = rng.random();
                    // keep strictly inside the bin so t stays ascending
                    let u = u.clamp(1e-6, 1.0 - 1e-6);
                    self.t_values.push(ray.t_near + (k as f32 + u) * width);
                }
            }
            _ => {
                for k in 0..n_samples {
                    self.t_values.push(ray.t_near + (k as f32 + 0.5) * width);
                }
            }
        }
        for k in 0..n_samples {
            let next = if k + 1 < n_samples {
                self.t_values[k + 1]
            } else {
                ray.t_far
            };
            self.deltas.push(next - self.t_values[k]);
        }
    }
}

/// Samples `n_samples ≥ 2` points in `[t_near, t_far]`. Stratified mode
/// needs `rng`; without one it falls back to midpoints.
pub fn sample_along_ray<R: Rng + ?Sized>(
    ray: &Ray,
    n_samples: usize,
    mode: SamplingMode,
    rng: Option<&mut R>,
) -> RaySampling {
    assert!(n_samples >= 2, "need at least two samples per ray");
    let mut s = RaySampling {
        t_values: Vec::with_capacity(n_samples),
        deltas: Vec::with_capacity(n_samples),
    };
    s.fill(ray, n_samples, mode, rng);
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayRender {
    pub color: [f32; 3],
    pub feature: Vec<f32>,
    /// `T_k·α_k` per sample.
    pub weights: Vec<f32>,
    pub residual_t: f32,
}

/// Sink for pre-activation gradients produced per sample.
pub trait GradSink {
    fn push(&mut self, tri: &Trilinear, density: f32, color: [f32; 3], feature: &[f32]);
}

impl GradSink for GridGradient {
    #[inline]
    fn push(&mut self, tri: &Trilinear, density: f32, color: [f32; 3], feature: &[f32]) {
        self.scatter(tri, density, color, feature);
    }
}

/// Per-sample gradient records, replayed later into a dense buffer in
/// insertion order. Lets workers run rays in parallel while the reduction
/// stays sequential.
#[derive(Debug, Clone, Default)]
pub struct GradRecords {
    entries: Vec<(Trilinear, f32, [f32; 3])>,
    features: Vec<f32>,
}

impl GradRecords {
    pub fn clear(&mut self) {
        self.entries.clear();
        self.features.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn replay(&self, grad: &mut GridGradient) {
        if self.entries.is_empty() {
            return;
        }
        let d = self.features.len() / self.entries.len();
        for (i, (tri, density, color)) in self.entries.iter().enumerate() {
            grad.scatter(tri, *density, *color, &self.features[i * d..(i + 1) * d]);
        }
    }
}

impl GradSink for GradRecords {
    fn push(&mut self, tri: &Trilinear, density: f32, color: [f32; 3], feature: &[f32]) {
        self.entries.push((*tri, density, color));
        self.features.extend_from_slice(feature);
    }
}

/// Forward quantities of one ray kept for the reverse pass. Reusable
/// across rays to avoid per-ray allocation.
#[derive(Debug, Clone, Default)]
pub struct RayTape {
    dim: usize,
    tri: Vec<Option<Trilinear>>,
    raw_density: Vec<f32>,
    rgb: Vec<[f32; 3]>,
    feat: Vec<f32>,
    delta: Vec<f32>,
    weight: Vec<f32>,
    /// `T_0 .. T_n`, so `trans[n]` is the residual transmittance.
    trans: Vec<f32>,
    scratch: Vec<f32>,
}

impl RayTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn weights(&self) -> &[f32] {
        &self.weight
    }

    pub fn residual(&self) -> f32 {
        *self.trans.last().unwrap_or(&1.0)
    }

    /// Renders color and features into the given buffers.
    pub fn forward(
        &mut self,
        field: &FieldGrid,
        ray: &Ray,
        sampling: &RaySampling,
        color: &mut [f32; 3],
        feature: &mut [f32],
    ) {
        let d = field.feature_dim;
        let n = sampling.len();
        self.dim = d;
        self.tri.clear();
        self.raw_density.clear();
        self.rgb.clear();
        self.delta.clear();
        self.weight.clear();
        self.trans.clear();
        self.feat.clear();
        self.feat.resize(n * d, 0.0);
        self.scratch.resize(d, 0.0);
        *color = [0.0; 3];
        feature.fill(0.0);

        let mut t = 1.0f32;
        self.trans.push(t);
        for k in 0..n {
            let p = ray.at(sampling.t_values[k]);
            let delta = sampling.deltas[k];
            let tri = field.trilinear(p);
            let f = &mut self.feat[k * d..(k + 1) * d];
            let (raw_d, rgb, sigma) = match &tri {
                Some(tri) => {
                    let (rd, rc) = field.interpolate_raw(tri, f);
                    (rd, rc.map(logistic), softplus(rd))
                }
                None => (0.0, [0.0; 3], 0.0),
            };
            let alpha = 1.0 - (-sigma * delta).exp();
            let w = t * alpha;
            for c in 0..3 {
                color[c] += w * rgb[c];
            }
            for (acc, x) in feature.iter_mut().zip(f.iter()) {
                *acc += w * x;
            }
            t *= 1.0 - alpha;
            self.tri.push(tri);
            self.raw_density.push(raw_d);
            self.rgb.push(rgb);
            self.delta.push(delta);
            self.weight.push(w);
            self.trans.push(t);
        }
    }

    /// Reverse pass for upstream `∂L/∂Ĉ` and `∂L/∂F̂`.
    pub fn backward(&mut self, up_color: [f32; 3], up_feat: &[f32], sink: &mut impl GradSink) {
        self.backward_with(up_color, up_feat, true, sink);
    }

    /// Reverse pass; with `feat_through_weights` false the feature upstream
    /// reaches only the feature grid and the weights are held constant for it.
    pub fn backward_with(
        &mut self,
        up_color: [f32; 3],
        up_feat: &[f32],
        feat_through_weights: bool,
        sink: &mut impl GradSink,
    ) {
        let d = self.dim;
        let n = self.weight.len();
        let dot = |k: usize, feat: &[f32]| -> f32 {
            let rgb = self.rgb[k];
            let mut s = up_color[0] * rgb[0] + up_color[1] * rgb[1] + up_color[2] * rgb[2];
            if feat_through_weights {
                for (g, f) in up_feat.iter().zip(&feat[k * d..(k + 1) * d]) {
                    s += g * f;
                }
            }
            s
        };
        // suffix = Σ_{j>k} w_j s_j, walked back to front
        let mut suffix = 0.0f32;
        for k in (0..n).rev() {
            let s_k = dot(k, &self.feat);
            let Some(tri) = self.tri[k] else {
                suffix += self.weight[k] * s_k;
                continue;
            };
            let w = self.weight[k];
            let d_sigma = self.delta[k] * (self.trans[k + 1] * s_k - suffix);
            let d_density = d_sigma * logistic(self.raw_density[k]);
            let rgb = self.rgb[k];
            let d_color: [f32; 3] = std::array::from_fn(|c| w * up_color[c] * rgb[c] * (1.0 - rgb[c]));
            for (out, g) in self.scratch.iter_mut().zip(up_feat) {
                *out = w * g;
            }
            sink.push(&tri, d_density, d_color, &self.scratch);
            suffix += w * s_k;
        }
    }
}

pub fn render_ray(field: &FieldGrid, ray: &Ray, sampling: &RaySampling) -> RayRender {
    let mut tape = RayTape::new();
    let mut color = [0.0; 3];
    let mut feature = vec![0.0; field.feature_dim];
    tape.forward(field, ray, sampling, &mut color, &mut feature);
    RayRender {
        color,
        feature,
        weights: tape.weight.clone(),
        residual_t: tape.residual(),
    }
}

/// Gradient of `⟨up_color, Ĉ⟩ + ⟨up_feat, F̂⟩` with respect to the grid,
/// pushed into `sink`.
pub fn render_ray_adjoint(
    field: &FieldGrid,
    ray: &Ray,
    sampling: &RaySampling,
    up_color: [f32; 3],
    up_feat: &[f32],
    sink: &mut impl GradSink,
) {
    let mut tape = RayTape::new();
    let mut color = [0.0; 3];
    let mut feature = vec![0.0; field.feature_dim];
    tape.forward(field, ray, sampling, &mut color, &mut feature);
    tape.backward(up_color, up_feat, sink);
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub color: Image,
    pub feature: Image,
    /// Accumulated opacity `1 − T_residual` per pixel.
    pub opacity: Vec<f32>,
}

/// Renders every pixel with deterministic midpoint sampling. Output does not
/// depend on `chunk_size` or thread count.
pub fn render_image(
    field: &FieldGrid,
    camera: &Camera,
    n_samples: usize,
    bounds: RayBounds,
    chunk_size: usize,
) -> RenderedImage {
    let (h, w, d) = (camera.height, camera.width, field.feature_dim);
    let chunk_size = chunk_size.max(1);
    let mut color = vec![0.0f32; h * w * 3];
    let mut feature = vec![0.0f32; h * w * d];
    let mut opacity = vec![0.0f32; h * w];
    color
        .par_chunks_mut(chunk_size * 3)
        .zip(feature.par_chunks_mut(chunk_size * d))
        .zip(opacity.par_chunks_mut(chunk_size))
        .enumerate()
        .for_each(|(ci, ((col, feat), opa))| {
            let mut tape = RayTape::new();
            let mut sampling = RaySampling {
                t_values: Vec::with_capacity(n_samples),
                deltas: Vec::with_capacity(n_samples),
            };
            for (j, o) in opa.iter_mut().enumerate() {
                let pix = ci * chunk_size + j;
                let (py, px) = (pix / w, pix % w);
                let ray = generate_ray(camera, px as f32, py as f32, field, bounds);
                sampling.fill::<rand_chacha::ChaCha8Rng>(&ray, n_samples, SamplingMode::Uniform, None);
                let mut c = [0.0f32; 3];
                tape.forward(field, &ray, &sampling, &mut c, &mut feat[j * d..(j + 1) * d]);
                col[j * 3..j * 3 + 3].copy_from_slice(&c);
                *o = 1.0 - tape.residual();
            }
        });
    RenderedImage {
        color: Image::new(h, w, 3, color),
        feature: Image::new(h, w, d, feature),
        opacity,
    }
}

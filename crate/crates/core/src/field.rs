//! Dense voxel grid holding density, color, and semantic features, sampled
//! with trilinear interpolation.
//!
//! Activations: `sigma = softplus(raw)`, `rgb = logistic(raw)`, features
//! are used as-is.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::rng::{rng_for, Stream};

/// Density produced by a freshly initialized grid.
pub const INIT_SIGMA: f32 = 0.1;
pub const INIT_FEATURE_SCALE: f32 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn cube(half_extent: f32) -> Self {
        Aabb::new(
            Vec3::new(-half_extent, -half_extent, -half_extent),
            Vec3::new(half_extent, half_extent, half_extent),
        )
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p.get(a) >= self.min.get(a) && p.get(a) <= self.max.get(a))
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Slab test. Returns the parametric `[t0, t1]` overlap of the ray with
    /// the box, if any.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f32, f32)> {
        let mut t0 = f32::NEG_INFINITY;
        let mut t1 = f32::INFINITY;
        for a in 0..3 {
            let o = origin.get(a);
            let d = dir.get(a);
            let (lo, hi) = (self.min.get(a), self.max.get(a));
            if d.abs() < 1e-12 {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut ta, mut tb) = ((lo - o) * inv, (hi - o) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t1 > t0).then_some((t0, t1))
    }
}

#[inline]
pub fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn logistic(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softplus_inverse(y: f32) -> f32 {
    (y as f64).exp_m1().ln() as f32
}

/// The eight lattice vertices around a point and their interpolation weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trilinear {
    pub vertices: [usize; 8],
    pub weights: [f32; 8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub sigma: f32,
    pub rgb: [f32; 3],
    pub feat: Vec<f32>,
}

/// Upstream derivative of a loss with respect to one [`FieldSample`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleUpstream {
    pub sigma: f32,
    pub rgb: [f32; 3],
    pub feat: Vec<f32>,
}

/// Gradient contribution to one lattice vertex (pre-activation values).
#[derive(Debug, Clone, PartialEq)]
pub struct VertexGradient {
    pub vertex: usize,
    pub density: f32,
    pub color: [f32; 3],
    pub feature: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub aabb: Aabb,
    pub resolution: [usize; 3],
    pub feature_dim: usize,
    /// `nx·ny·nz`, vertex index `(ix·ny + iy)·nz + iz`.
    pub density_raw: Vec<f32>,
    /// `nx·ny·nz·3`.
    pub color_raw: Vec<f32>,
    /// `nx·ny·nz·D`.
    pub feature: Vec<f32>,
}

impl FieldGrid {
    /// Fresh grid: uniform density of [`INIT_SIGMA`], mid-gray color, and
    /// tiny uniform-random features drawn from `seed`.
    pub fn init(resolution: [usize; 3], aabb: Aabb, feature_dim: usize, seed: u64) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::invalid("resolution", "need at least 2 vertices per axis"));
        }
        if (0..3).any(|a| !(aabb.max.get(a) > aabb.min.get(a))) {
            return Err(Error::invalid("aabb", "max must exceed min on every axis"));
        }
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be positive"));
        }
        let n = resolution.iter().product::<usize>();
        let mut rng = rng_for(seed, Stream::GridInit, 0);
        let feature = (0..n * feature_dim)
            .map(|_| rng.random_range(-INIT_FEATURE_SCALE..=INIT_FEATURE_SCALE))
            .collect();
        Ok(FieldGrid {
            aabb,
            resolution,
            feature_dim,
            density_raw: vec![softplus_inverse(INIT_SIGMA); n],
            color_raw: vec![0.0; n * 3],
            feature,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn vertex_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.resolution[1] + iy) * self.resolution[2] + iz
    }

    pub fn vertex_position(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let idx = [ix, iy, iz];
        let c = |a: usize| {
            let (lo, hi) = (self.aabb.min.get(a), self.aabb.max.get(a));
            lo + (hi - lo) * idx[a] as f32 / (self.resolution[a] - 1) as f32
        };
        Vec3::new(c(0), c(1), c(2))
    }

    pub fn all_finite(&self) -> bool {
        self.density_raw
            .iter()
            .chain(&self.color_raw)
            .chain(&self.feature)
            .all(|v| v.is_finite())
    }

    /// Enclosing vertices and weights, or `None` outside the box.
    #[inline]
    pub fn trilinear(&self, p: Vec3) -> Option<Trilinear> {
        if !self.aabb.contains(p) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [0f32; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let (lo, hi) = (self.aabb.min.get(a), self.aabb.max.get(a));
            let u = (p.get(a) - lo) / (hi - lo) * (n - 1) as f32;
            let i = (u.floor().max(0.0) as usize).min(n - 2);
            base[a] = i;
            frac[a] = (u - i as f32).clamp(0.0, 1.0);
        }
        let [ny, nz] = [self.resolution[1], self.resolution[2]];
        let v0 = (base[0] * ny + base[1]) * nz + base[2];
        let (sx, sy) = (ny * nz, nz);
        let [fx, fy, fz] = frac;
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        Some(Trilinear {
            vertices: [
                v0,
                v0 + 1,
                v0 + sy,
                v0 + sy + 1,
                v0 + sx,
                v0 + sx + 1,
                v0 + sx + sy,
                v0 + sx + sy + 1,
            ],
            weights: [
                gx * gy * gz,
                gx * gy * fz,
                gx * fy * gz,
                gx * fy * fz,
                fx * gy * gz,
                fx * gy * fz,
                fx * fy * gz,
                fx * fy * fz,
            ],
        })
    }

    /// Interpolated pre-activation values. `feat` must hold `feature_dim` slots.
    #[inline]
    pub fn interpolate_raw(&self, tri: &Trilinear, feat: &mut [f32]) -> (f32, [f32; 3]) {
        let d = self.feature_dim;
        let mut density = 0.0;
        let mut color = [0.0f32; 3];
        feat.fill(0.0);
        for (&v, &w) in tri.vertices.iter().zip(&tri.weights) {
            density += w * self.density_raw[v];
            let c = &self.color_raw[v * 3..v * 3 + 3];
            color[0] += w * c[0];
            color[1] += w * c[1];
            color[2] += w * c[2];
            let f = &self.feature[v * d..(v + 1) * d];
            for (acc, x) in feat.iter_mut().zip(f) {
                *acc += w * x;
            }
        }
        (density, color)
    }

    pub fn sample(&self, p: Vec3) -> FieldSample {
        let mut feat = vec![0.0; self.feature_dim];
        match self.trilinear(p) {
            None => FieldSample {
                sigma: 0.0,
                rgb: [0.0; 3],
                feat,
            },
            Some(tri) => {
                let (d, c) = self.interpolate_raw(&tri, &mut feat);
                FieldSample {
                    sigma: softplus(d),
                    rgb: c.map(logistic),
                    feat,
                }
            }
        }
    }

    /// Chain rule through the activations, then spread over the enclosing
    /// vertices with the interpolation weights. Empty outside the box.
    pub fn sample_adjoint(&self, p: Vec3, upstream: &SampleUpstream) -> Vec<VertexGradient> {
        let Some(tri) = self.trilinear(p) else {
            return Vec::new();
        };
        let mut feat = vec![0.0; self.feature_dim];
        let (d_raw, c_raw) = self.interpolate_raw(&tri, &mut feat);
        let g_density = upstream.sigma * logistic(d_raw);
        let g_color: [f32; 3] = std::array::from_fn(|i| {
            let c = logistic(c_raw[i]);
            upstream.rgb[i] * c * (1.0 - c)
        });
        tri.vertices
            .iter()
            .zip(&tri.weights)
            .map(|(&vertex, &w)| VertexGradient {
                vertex,
                density: w * g_density,
                color: g_color.map(|g| w * g),
                feature: upstream.feat.iter().map(|g| w * g).collect(),
            })
            .collect()
    }
}

/// Dense gradient buffers shaped like a [`FieldGrid`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridGradient {
    pub density: Vec<f32>,
    pub color: Vec<f32>,
    pub feature: Vec<f32>,
    feature_dim: usize,
}

impl GridGradient {
    pub fn zeros_like(field: &FieldGrid) -> Self {
        let n = field.vertex_count();
        GridGradient {
            density: vec![0.0; n],
            color: vec![0.0; n * 3],
            feature: vec![0.0; n * field.feature_dim],
            feature_dim: field.feature_dim,
        }
    }

    pub fn clear(&mut self) {
        self.density.fill(0.0);
        self.color.fill(0.0);
        self.feature.fill(0.0);
    }

    pub fn add_vertex(&mut self, g: &VertexGradient) {
        let d = self.feature_dim;
        self.density[g.vertex] += g.density;
        for k in 0..3 {
            self.color[g.vertex * 3 + k] += g.color[k];
        }
        for (acc, x) in self.feature[g.vertex * d..(g.vertex + 1) * d]
            .iter_mut()
            .zip(&g.feature)
        {
            *acc += x;
        }
    }

    /// Scatter pre-activation gradients at one sample point.
    #[inline]
    pub fn scatter(&mut self, tri: &Trilinear, density: f32, color: [f32; 3], feature: &[f32]) {
        let d = self.feature_dim;
        for (&v, &w) in tri.vertices.iter().zip(&tri.weights) {
            self.density[v] += w * density;
            let c = &mut self.color[v * 3..v * 3 + 3];
            c[0] += w * color[0];
            c[1] += w * color[1];
            c[2] += w * color[2];
            for (acc, x) in self.feature[v * d..(v + 1) * d].iter_mut().zip(feature) {
                *acc += w * x;
            }
        }
    }
}

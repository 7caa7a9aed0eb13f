//! Independent f64 reference implementations and helpers shared by the
//! integration tests. Nothing here calls the library's numerics.
#![allow(dead_code)]

pub mod suites;

use ovnerf_core::render::RaySampling;
use ovnerf_core::render::Ray;
use ovnerf_core::{FieldGrid, TextEmbeddings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Grid parameters in f64, laid out like the library grid.
#[derive(Clone)]
pub struct RefField {
    pub res: [usize; 3],
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub d: usize,
    pub density: Vec<f64>,
    pub color: Vec<f64>,
    pub feature: Vec<f64>,
}

/// Which parameter a probe perturbs.
#[derive(Clone, Copy, Debug)]
pub enum Param {
    Density(usize),
    Color(usize, usize),
    Feature(usize, usize),
}

impl RefField {
    pub fn from_grid(g: &FieldGrid) -> Self {
        let v = |x: &[f32]| x.iter().map(|&a| a as f64).collect::<Vec<_>>();
        RefField {
            res: g.resolution,
            min: [g.aabb.min.x as f64, g.aabb.min.y as f64, g.aabb.min.z as f64],
            max: [g.aabb.max.x as f64, g.aabb.max.y as f64, g.aabb.max.z as f64],
            d: g.feature_dim,
            density: v(&g.density_raw),
            color: v(&g.color_raw),
            feature: v(&g.feature),
        }
    }

    pub fn get_mut(&mut self, p: Param) -> &mut f64 {
        match p {
            Param::Density(v) => &mut self.density[v],
            Param::Color(v, c) => &mut self.color[v * 3 + c],
            Param::Feature(v, k) => &mut self.feature[v * self.d + k],
        }
    }

    /// Trilinear interpolation of raw values; `None` outside the box.
    pub fn raw(&self, p: [f64; 3]) -> Option<(f64, [f64; 3], Vec<f64>)> {
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            if p[a] < self.min[a] || p[a] > self.max[a] {
                return None;
            }
            let n = self.res[a];
            let u = (p[a] - self.min[a]) / (self.max[a] - self.min[a]) * (n - 1) as f64;
            let i = (u.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let mut dens = 0.0;
        let mut col = [0.0; 3];
        let mut feat = vec![0.0; self.d];
        for corner in 0..8 {
            let off = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            let (ix, iy, iz) = (base[0] + off[0], base[1] + off[1], base[2] + off[2]);
            let v = (ix * self.res[1] + iy) * self.res[2] + iz;
            dens += w * self.density[v];
            for c in 0..3 {
                col[c] += w * self.color[v * 3 + c];
            }
            for k in 0..self.d {
                feat[k] += w * self.feature[v * self.d + k];
            }
        }
        Some((dens, col, feat))
    }

    pub fn sample(&self, p: [f64; 3]) -> (f64, [f64; 3], Vec<f64>) {
        match self.raw(p) {
            None => (0.0, [0.0; 3], vec![0.0; self.d]),
            Some((d, c, f)) => (softplus(d), c.map(logistic), f),
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct RefRender {
    pub color: [f64; 3],
    pub feature: Vec<f64>,
    pub weights: Vec<f64>,
    pub residual: f64,
}

/// Emission-absorption quadrature at the given sample positions. Points
/// are formed in f32 like the library so both see the same cells.
pub fn render(field: &RefField, ray: &Ray, sampling: &RaySampling) -> RefRender {
    let mut color = [0.0; 3];
    let mut feature = vec![0.0; field.d];
    let mut weights = Vec::new();
    let mut t = 1.0;
    for (&s, &delta) in sampling.t_values.iter().zip(&sampling.deltas) {
        let p = ray.at(s);
        let (sigma, rgb, f) = field.sample([p.x as f64, p.y as f64, p.z as f64]);
        let alpha = 1.0 - (-sigma * delta as f64).exp();
        let w = t * alpha;
        for c in 0..3 {
            color[c] += w * rgb[c];
        }
        for k in 0..field.d {
            feature[k] += w * f[k];
        }
        weights.push(w);
        t *= 1.0 - alpha;
    }
    RefRender {
        color,
        feature,
        weights,
        residual: t,
    }
}

/// `Σ w_k f_k` with the weights supplied rather than derived from `field`.
pub fn features_with_weights(field: &RefField, ray: &Ray, sampling: &RaySampling, weights: &[f64]) -> Vec<f64> {
    let mut feature = vec![0.0; field.d];
    for (&s, &w) in sampling.t_values.iter().zip(weights) {
        let p = ray.at(s);
        let (_, _, f) = field.sample([p.x as f64, p.y as f64, p.z as f64]);
        for k in 0..field.d {
            feature[k] += w * f[k];
        }
    }
    feature
}

pub fn loss_color(r: &[f64; 3], t: &[f32; 3]) -> f64 {
    (0..3).map(|c| (r[c] - t[c] as f64).powi(2)).sum()
}

pub fn loss_feat(r: &[f64], t: &[f32]) -> f64 {
    let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tn = t.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if rn == 0.0 || tn == 0.0 {
        return 0.0;
    }
    -r.iter().zip(t).map(|(a, &b)| a * b as f64).sum::<f64>() / (rn * tn)
}

pub fn cos_logits(f: &[f64], text: &TextEmbeddings) -> Vec<f64> {
    let n = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    (0..text.classes)
        .map(|m| {
            if n == 0.0 {
                0.0
            } else {
                text.row(m).iter().zip(f).map(|(&a, b)| a as f64 * b).sum::<f64>() / n
            }
        })
        .collect()
}

pub fn cross_entropy(logits: &[f64], target: usize, tau: f64) -> f64 {
    let z: Vec<f64> = logits.iter().map(|l| l / tau).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[target]
}

pub fn loss_map(f: &[f64], target: usize, text: &TextEmbeddings, tau: f64) -> f64 {
    cross_entropy(&cos_logits(f, text), target, tau)
}

/// Central difference of `f` at `x` with step `h`.
pub fn central(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with a floor tied to the largest gradient of the probe
/// set, so entries that cancel to ~0 are compared on an absolute scale.
pub fn rel_err(analytic: f64, fd: f64, scale: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-4 * scale).max(1e-12)
}

pub fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 0.1 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Fills a grid with moderately sized random values.
pub fn randomize(field: &mut FieldGrid, rng: &mut impl Rng) {
    for x in &mut field.density_raw {
        *x = rng.random_range(-1.5f32..1.5);
    }
    for x in &mut field.color_raw {
        *x = rng.random_range(-2.0f32..2.0);
    }
    for x in &mut field.feature {
        *x = rng.random_range(-1.0f32..1.0);
    }
}

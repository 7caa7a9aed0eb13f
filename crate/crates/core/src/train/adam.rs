//! Bias-corrected Adam over the three grid buffers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{FieldGrid, GridGradient};

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub density: Vec<f32>,
    pub color: Vec<f32>,
    pub feature: Vec<f32>,
}

impl Moments {
    fn zeros_like(field: &FieldGrid) -> Self {
        Moments {
            density: vec![0.0; field.density_raw.len()],
            color: vec![0.0; field.color_raw.len()],
            feature: vec![0.0; field.feature.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Moments,
    pub second: Moments,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub lr_grid: f32,
    pub lr_feature: f32,
}

impl AdamState {
    pub fn new(field: &FieldGrid) -> Self {
        AdamState {
            first: Moments::zeros_like(field),
            second: Moments::zeros_like(field),
            step: 0,
        }
    }

    pub fn shapes_match(&self, field: &FieldGrid) -> bool {
        [&self.first, &self.second].iter().all(|m| {
            m.density.len() == field.density_raw.len()
                && m.color.len() == field.color_raw.len()
                && m.feature.len() == field.feature.len()
        })
    }
}

fn update(params: &mut [f32], grads: &[f32], m: &mut [f32], v: &mut [f32], p: &AdamParams, lr: f32, step: u64) {
    let bc1 = 1.0 - (p.beta1 as f64).powi(step as i32);
    let bc2 = 1.0 - (p.beta2 as f64).powi(step as i32);
    let step_size = (lr as f64 / bc1) as f32;
    let inv_bc2_sqrt = (1.0 / bc2.sqrt()) as f32;
    let (b1, b2, eps) = (p.beta1, p.beta2, p.eps);
    params
        .par_chunks_mut(4096)
        .zip(grads.par_chunks(4096))
        .zip(m.par_chunks_mut(4096))
        .zip(v.par_chunks_mut(4096))
        .for_each(|(((x, g), m), v)| {
            for i in 0..x.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                x[i] -= step_size * m[i] / (v[i].sqrt() * inv_bc2_sqrt + eps);
            }
        });
}

/// One Adam step. Density and color use `lr_grid`, features `lr_feature`.
/// Fails before touching any state if a gradient is non-finite.
pub fn adam_step(
    field: &mut FieldGrid,
    grad: &GridGradient,
    state: &mut AdamState,
    params: &AdamParams,
    iteration: u64,
) -> Result<()> {
    for (name, g) in [
        ("density", &grad.density),
        ("color", &grad.color),
        ("feature", &grad.feature),
    ] {
        if g.par_iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient {
                grid: name,
                iteration,
            });
        }
    }
    state.step += 1;
    let step = state.step;
    update(&mut field.density_raw, &grad.density, &mut state.first.density, &mut state.second.density, params, params.lr_grid, step);
    update(&mut field.color_raw, &grad.color, &mut state.first.color, &mut state.second.color, params, params.lr_grid, step);
    update(&mut field.feature, &grad.feature, &mut state.first.feature, &mut state.second.feature, params, params.lr_feature, step);
    Ok(())
}

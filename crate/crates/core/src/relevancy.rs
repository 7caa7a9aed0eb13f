//! Class logits from semantic features: cosine similarity against the
//! class text embeddings, argmax labels, and the temperature-scaled
//! cross-entropy used to supervise them.

use crate::data::image::{Image, LabelMap};
use crate::data::scene::TextEmbeddings;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelevancySource {
    ClipPrecomputed,
    Rendered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevancyImage {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// H×W×M cosine similarities.
    pub logits: Vec<f32>,
    pub labels: LabelMap,
    pub source: RelevancySource,
}

/// Cosine similarity of `feat` with every class row. A zero feature gives
/// all-zero logits.
pub fn relevancy_logits(feat: &[f32], text: &TextEmbeddings) -> Vec<f32> {
    let mut out = vec![0.0; text.classes];
    relevancy_logits_into(feat, text, &mut out);
    out
}

pub fn relevancy_logits_into(feat: &[f32], text: &TextEmbeddings, out: &mut [f32]) -> f32 {
    let norm = feat.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        out.fill(0.0);
        return 0.0;
    }
    let inv = 1.0 / norm;
    for (m, o) in out.iter_mut().enumerate() {
        let dot: f32 = text.row(m).iter().zip(feat).map(|(t, f)| t * f).sum();
        *o = (dot * inv).clamp(-1.0, 1.0);
    }
    norm
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn relevancy_image(features: &Image, text: &TextEmbeddings, source: RelevancySource) -> RelevancyImage {
    let m = text.classes;
    let n = features.pixel_count();
    let mut logits = vec![0.0; n * m];
    let mut labels = Vec::with_capacity(n);
    for p in 0..n {
        let out = &mut logits[p * m..(p + 1) * m];
        relevancy_logits_into(features.pixel(p), text, out);
        labels.push(argmax(out) as u16);
    }
    RelevancyImage {
        height: features.height,
        width: features.width,
        classes: m,
        logits,
        labels: LabelMap::new(features.height, features.width, labels),
        source,
    }
}

/// `−log softmax(logits/τ)[target]` and its gradient with respect to the
/// unscaled logits.
pub fn softmax_ce(logits: &[f32], target: usize, temperature: f32) -> Result<(f32, Vec<f32>)> {
    let mut grad = vec![0.0; logits.len()];
    let loss = softmax_ce_into(logits, target, temperature, &mut grad)?;
    Ok((loss, grad))
}

pub fn softmax_ce_into(logits: &[f32], target: usize, temperature: f32, grad: &mut [f32]) -> Result<f32> {
    if target >= logits.len() {
        return Err(Error::LabelOutOfRange {
            what: "cross-entropy target".into(),
            label: target as u32,
            classes: logits.len(),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature", "must be positive"));
    }
    let inv_t = 1.0 / temperature;
    let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) * inv_t;
    let mut sum = 0.0f32;
    for (g, &l) in grad.iter_mut().zip(logits) {
        *g = (l * inv_t - max).exp();
        sum += *g;
    }
    let loss = sum.ln() + max - logits[target] * inv_t;
    for (i, g) in grad.iter_mut().enumerate() {
        let p = *g / sum;
        *g = (p - if i == target { 1.0 } else { 0.0 }) * inv_t;
    }
    Ok(loss)
}

/// Gradient of `Σ_m g_m · cos⟨t_m, f⟩` with respect to `f`, given the
/// logits computed from `f` and its norm. Zero when the norm is zero.
pub fn cosine_logits_backward(
    feat: &[f32],
    norm: f32,
    logits: &[f32],
    up_logits: &[f32],
    text: &TextEmbeddings,
    out: &mut [f32],
) {
    out.fill(0.0);
    if norm == 0.0 {
        return;
    }
    let inv = 1.0 / norm;
    let mut along = 0.0f32;
    for (m, &g) in up_logits.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        along += g * logits[m];
        for (o, t) in out.iter_mut().zip(text.row(m)) {
            *o += g * t;
        }
    }
    // d cos_m / d f = (t_m − cos_m · f̂) / |f|
    for (o, f) in out.iter_mut().zip(feat) {
        *o = (*o - along * f * inv) * inv;
    }
}

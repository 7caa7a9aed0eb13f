//! Per-ray losses with their gradients.

use crate::data::scene::TextEmbeddings;
use crate::error::Result;
use crate::relevancy::{cosine_logits_backward, relevancy_logits_into, softmax_ce_into};

/// `‖ĉ − c‖²` and `2(ĉ − c)`.
pub fn loss_color(rendered: [f32; 3], target: [f32; 3]) -> (f32, [f32; 3]) {
    let diff: [f32; 3] = std::array::from_fn(|i| rendered[i] - target[i]);
    (
        diff.iter().map(|d| d * d).sum(),
        diff.map(|d| 2.0 * d),
    )
}

/// `−cos⟨f̂, f⟩`, gradient written to `grad`. A zero rendered feature
/// gives loss 0 and gradient 0.
pub fn loss_feat(rendered: &[f32], target: &[f32], grad: &mut [f32]) -> f32 {
    let rn = rendered.iter().map(|x| x * x).sum::<f32>().sqrt();
    let tn = target.iter().map(|x| x * x).sum::<f32>().sqrt();
    if rn == 0.0 || tn == 0.0 {
        grad.fill(0.0);
        return 0.0;
    }
    let dot: f32 = rendered.iter().zip(target).map(|(a, b)| a * b).sum();
    let cos = dot / (rn * tn);
    // d(-cos)/df̂ = −(f/|f| − cos·f̂/|f̂|)/|f̂|
    for ((g, r), t) in grad.iter_mut().zip(rendered).zip(target) {
        *g = -(t / tn - cos * r / rn) / rn;
    }
    -cos
}

/// Reusable buffers for [`loss_map`].
#[derive(Debug, Clone, Default)]
pub struct MapScratch {
    logits: Vec<f32>,
    up_logits: Vec<f32>,
}

/// Cross-entropy between the relevancy logits of `rendered` and `target`,
/// gradient with respect to the rendered feature written to `grad`.
pub fn loss_map(
    rendered: &[f32],
    target: usize,
    text: &TextEmbeddings,
    temperature: f32,
    scratch: &mut MapScratch,
    grad: &mut [f32],
) -> Result<f32> {
    scratch.logits.resize(text.classes, 0.0);
    scratch.up_logits.resize(text.classes, 0.0);
    let norm = relevancy_logits_into(rendered, text, &mut scratch.logits);
    let loss = softmax_ce_into(&scratch.logits, target, temperature, &mut scratch.up_logits)?;
    cosine_logits_backward(rendered, norm, &scratch.logits, &scratch.up_logits, text, grad);
    Ok(loss)
}

//! Confusion-matrix segmentation metrics.

use std::io::Write;
use std::path::Path;

use crate::data::image::LabelMap;
use crate::data::scene::{SceneDataset, TextEmbeddings};
use crate::error::{Error, Result};
use crate::field::FieldGrid;
use crate::relevancy::{relevancy_image, RelevancySource};
use crate::render::{render_image, RayBounds};

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), classes * classes);
        ConfusionMatrix { classes, counts }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.classes..(c + 1) * self.classes].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, c)).sum()
    }

    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if (gt.height, gt.width) != (pred.height, pred.width) {
            return Err(Error::DimensionMismatch {
                what: "prediction vs ground truth".into(),
                expected: vec![gt.height, gt.width],
                found: vec![pred.height, pred.width],
            });
        }
        let m = self.classes;
        for (what, map) in [("ground truth", gt), ("prediction", pred)] {
            if let Some(&bad) = map.data.iter().find(|&&l| l as usize >= m) {
                return Err(Error::LabelOutOfRange {
                    what: what.into(),
                    label: bad as u32,
                    classes: m,
                });
            }
        }
        for (&g, &p) in gt.data.iter().zip(&pred.data) {
            self.counts[g as usize * m + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Per-class `(iou, acc, gt pixel count)`; `None` metrics for classes
    /// absent from the ground truth.
    pub fn per_class(&self) -> Vec<(Option<f64>, Option<f64>, u64)> {
        (0..self.classes)
            .map(|c| {
                let row = self.row_sum(c);
                if row == 0 {
                    return (None, None, 0);
                }
                let tp = self.get(c, c) as f64;
                let union = (row + self.col_sum(c)) as f64 - tp;
                (Some(tp / union), Some(tp / row as f64), row)
            })
            .collect()
    }

    fn mean_present(&self, pick: impl Fn(&(Option<f64>, Option<f64>, u64)) -> Option<f64>) -> Result<f64> {
        let vals: Vec<f64> = self.per_class().iter().filter_map(pick).collect();
        if vals.is_empty() {
            return Err(Error::invalid("confusion matrix", "no ground-truth pixels"));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean IoU over classes present in the ground truth.
    pub fn miou(&self) -> Result<f64> {
        self.mean_present(|c| c.0)
    }

    /// Mean per-class pixel accuracy over classes present in the ground truth.
    pub fn macc(&self) -> Result<f64> {
        self.mean_present(|c| c.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub miou: f64,
    pub macc: f64,
    pub confusion: ConfusionMatrix,
    pub views: usize,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix, views: usize) -> Result<Self> {
        Ok(EvalReport {
            miou: confusion.miou()?,
            macc: confusion.macc()?,
            confusion,
            views,
        })
    }

    /// `class_id,iou,acc,pixel_count`; absent classes leave metrics empty.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "class_id,iou,acc,pixel_count")?;
        for (c, (iou, acc, n)) in self.confusion.per_class().into_iter().enumerate() {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            writeln!(w, "{c},{},{},{n}", f(iou), f(acc))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// Predicted labels for one camera: midpoint render, then argmax relevancy.
pub fn predict_labels(
    field: &FieldGrid,
    camera: &crate::data::scene::Camera,
    text: &TextEmbeddings,
    samples_per_ray: usize,
    bounds: RayBounds,
) -> LabelMap {
    let rendered = render_image(field, camera, samples_per_ray, bounds, 1024);
    relevancy_image(&rendered.feature, text, RelevancySource::Rendered).labels
}

/// Metrics over all test views jointly.
pub fn evaluate_field(
    field: &FieldGrid,
    scene: &SceneDataset,
    samples_per_ray: usize,
    bounds: RayBounds,
) -> Result<EvalReport> {
    let mut conf = ConfusionMatrix::new(scene.text.classes);
    let mut views = 0;
    for v in scene.test_views() {
        let gt = v.gt.as_ref().ok_or_else(|| {
            Error::MissingFile(format!("gt/{}.ovnt", v.name).into())
        })?;
        let pred = predict_labels(field, &v.camera, &scene.text, samples_per_ray, bounds);
        conf.accumulate(gt, &pred)?;
        views += 1;
    }
    if views == 0 {
        return Err(Error::invalid("scene", "no test views to evaluate"));
    }
    EvalReport::from_confusion(conf, views)
}

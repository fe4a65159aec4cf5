//! Hard-label IoU evaluation with dataset-level confusion accumulation.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::class_ids;
use crate::tensor::Tensor;

pub const CLASS_NAMES: [&str; 5] = ["background", "cargo-ship", "fishing-boat", "sand-dredger", "speedboat"];

pub fn class_name(id: usize) -> String {
    CLASS_NAMES.get(id).map_or_else(|| format!("class-{id}"), |s| s.to_string())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn iou(&self) -> Option<f64> {
        let denom = self.tp + self.fp + self.fn_;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }
}

/// Per-class pixel counts summed over any number of images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    counts: Vec<ClassCounts>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion {
            counts: vec![ClassCounts::default(); classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[ClassCounts] {
        &self.counts
    }

    pub fn accumulate(&mut self, pred: &Tensor, truth: &Tensor) -> Result<()> {
        if pred.shape() != truth.shape() {
            return Err(Error::dim(format!(
                "prediction {:?} and truth {:?} differ in shape",
                pred.shape(),
                truth.shape()
            )));
        }
        let k = self.classes();
        for (p, t) in class_ids(pred, k)?.into_iter().zip(class_ids(truth, k)?) {
            if p == t {
                self.counts[p].tp += 1;
            } else {
                self.counts[p].fp += 1;
                self.counts[t].fn_ += 1;
            }
        }
        Ok(())
    }

    pub fn result(&self, include_background: bool) -> EvalResult {
        let first = usize::from(!include_background);
        let mut per_class = IndexMap::new();
        let mut counts = IndexMap::new();
        for (id, c) in self.counts.iter().enumerate().skip(first) {
            per_class.insert(class_name(id), c.iou());
            counts.insert(class_name(id), *c);
        }
        let defined: Vec<f64> = per_class.values().flatten().copied().collect();
        let miou = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        EvalResult {
            per_class,
            miou,
            counts,
        }
    }
}

/// IoU per evaluated class (`null` when a class is absent from both maps),
/// their mean, and the underlying counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_class: IndexMap<String, Option<f64>>,
    pub miou: Option<f64>,
    pub counts: IndexMap<String, ClassCounts>,
}

/// Evaluates one `[H, W]` prediction against its truth over `classes` ids.
pub fn iou_eval(pred: &Tensor, truth: &Tensor, classes: usize, include_background: bool) -> Result<EvalResult> {
    let mut c = Confusion::new(classes);
    c.accumulate(pred, truth)?;
    Ok(c.result(include_background))
}

pub fn write_metrics(result: &EvalResult, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(result)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<EvalResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&[u8]]) -> Tensor {
        let w = rows[0].len();
        Tensor::from_vec(&[rows.len(), w], rows.iter().flat_map(|r| r.iter().map(|&v| v as f64)).collect()).unwrap()
    }

    #[test]
    fn identical_maps_score_one() {
        let m = grid(&[&[0, 1, 1], &[2, 0, 4]]);
        let r = iou_eval(&m, &m, 5, false).unwrap();
        assert_eq!(r.miou, Some(1.0));
        assert_eq!(r.per_class["sand-dredger"], None);
        assert_eq!(r.per_class["speedboat"], Some(1.0));
        assert!(!r.per_class.contains_key("background"));
    }

    #[test]
    fn four_by_four_hand_case() {
        // Truth: 8 pixels of class 1 (top half). Prediction hits 4 of them and
        // adds 2 false positives in the bottom half.
        let truth = grid(&[&[1, 1, 1, 1], &[1, 1, 1, 1], &[0, 0, 0, 0], &[0, 0, 0, 0]]);
        let pred = grid(&[&[1, 1, 1, 1], &[0, 0, 0, 0], &[1, 1, 0, 0], &[0, 0, 0, 0]]);
        let r = iou_eval(&pred, &truth, 2, false).unwrap();
        assert_eq!(r.counts["cargo-ship"], ClassCounts { tp: 4, fp: 2, fn_: 4 });
        assert_eq!(r.per_class["cargo-ship"], Some(0.4));
        assert_eq!(r.miou, Some(0.4));
    }

    #[test]
    fn disjoint_class_scores_zero_and_background_optional() {
        let truth = grid(&[&[1, 0], &[0, 0]]);
        let pred = grid(&[&[0, 1], &[0, 0]]);
        let r = iou_eval(&pred, &truth, 2, false).unwrap();
        assert_eq!(r.per_class["cargo-ship"], Some(0.0));
        let r = iou_eval(&pred, &truth, 2, true).unwrap();
        assert_eq!(r.per_class["background"], Some(2.0 / 4.0));
        assert_eq!(r.miou, Some(0.25));
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = grid(&[&[0, 1, 2], &[2, 2, 1]]);
        let b = grid(&[&[1, 1, 2], &[0, 2, 2]]);
        let ab = iou_eval(&a, &b, 3, true).unwrap();
        let ba = iou_eval(&b, &a, 3, true).unwrap();
        assert_eq!(ab.per_class, ba.per_class);
    }

    #[test]
    fn validation() {
        let a = grid(&[&[0, 1]]);
        assert!(matches!(iou_eval(&a, &grid(&[&[0], &[1]]), 2, false), Err(Error::Dimension(_))));
        assert!(iou_eval(&grid(&[&[0, 7]]), &a, 5, false).is_err());
    }

    #[test]
    fn json_roundtrip_with_nulls() {
        let m = grid(&[&[0, 1], &[1, 0]]);
        let r = iou_eval(&m, &m, 5, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.json");
        write_metrics(&r, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"fishing-boat\": null"));
        assert!(text.contains("\"miou\": 1.0"));
        assert_eq!(read_metrics(&path).unwrap(), r);
    }
}

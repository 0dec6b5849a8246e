//! Pixel-level evaluation with building as the positive class.
//!
//! Scores are micro-aggregated: one confusion matrix is accumulated over every
//! evaluated pixel and OA / F1 / IoU are computed from it once.

use std::fmt;

use crate::error::{Error, Result};

/// A `height × width` mask of 0/1 values, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(Error::InvalidInput(format!(
                "mask value {} at index {pos} is not binary",
                data[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value as u8; height * width],
        }
    }

    pub fn from_labels(height: usize, width: usize, labels: &[usize]) -> Result<Self> {
        Self::new(
            height,
            width,
            labels
                .iter()
                .map(|&l| u8::try_from(l).unwrap_or(u8::MAX))
                .collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    /// Class indices, one per pixel.
    pub fn labels(&self) -> Vec<usize> {
        self.data.iter().map(|&v| v as usize).collect()
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Adds the per-pixel outcomes of one prediction.
    pub fn accumulate(mut self, pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        if (pred.height, pred.width) != (gt.height, gt.width) {
            return Err(Error::InvalidInput(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            match (p, g) {
                (1, 1) => self.tp += 1,
                (1, 0) => self.fp += 1,
                (0, 1) => self.fn_ += 1,
                _ => self.tn += 1,
            }
        }
        Ok(self)
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::InvalidInput(
                "confusion matrix is empty; nothing was evaluated".into(),
            ));
        }
        Ok(())
    }

    pub fn overall_accuracy(&self) -> Result<f64> {
        self.require_nonempty()?;
        Ok((self.tp + self.tn) as f64 / self.total() as f64)
    }

    /// `2tp / (2tp + fp + fn)`; 1 when there is no positive pixel in either mask.
    pub fn f1(&self) -> Result<f64> {
        self.require_nonempty()?;
        let denom = 2 * self.tp + self.fp + self.fn_;
        Ok(if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        })
    }

    /// `tp / (tp + fp + fn)`; 1 when there is no positive pixel in either mask.
    pub fn iou(&self) -> Result<f64> {
        self.require_nonempty()?;
        let denom = self.tp + self.fp + self.fn_;
        Ok(if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        })
    }

    pub fn report(&self) -> Result<MetricsReport> {
        Ok(MetricsReport {
            overall_accuracy: self.overall_accuracy()?,
            f1: self.f1()?,
            iou: self.iou()?,
            confusion: *self,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub overall_accuracy: f64,
    pub f1: f64,
    pub iou: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// `OA=<v> F1=<v> IoU=<v>` with four decimals.
    pub fn machine_line(&self) -> String {
        format!(
            "OA={:.4} F1={:.4} IoU={:.4}",
            self.overall_accuracy, self.f1, self.iou
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.confusion;
        writeln!(f, "pixels evaluated : {}", c.total())?;
        writeln!(
            f,
            "confusion (building positive): tp={} fp={} fn={} tn={}",
            c.tp, c.fp, c.fn_, c.tn
        )?;
        writeln!(f, "overall accuracy : {:.4}", self.overall_accuracy)?;
        writeln!(f, "F1 (building)    : {:.4}", self.f1)?;
        writeln!(f, "IoU (building)   : {:.4}", self.iou)?;
        write!(
            f,
            "note: F1 and IoU are 1 when neither mask contains building pixels"
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, ones: &[(usize, usize)]) -> BinaryMask {
        let mut data = vec![0u8; h * w];
        for &(r, c) in ones {
            data[r * w + c] = 1;
        }
        BinaryMask::new(h, w, data).unwrap()
    }

    #[test]
    fn all_ones_prediction() {
        let ones = BinaryMask::filled(2, 2, true);
        let cm = ConfusionMatrix::default().accumulate(&ones, &ones).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(4, 0, 0, 0));
    }

    #[test]
    fn complement_prediction_has_no_hits() {
        let gt = mask(3, 3, &[(0, 0), (1, 2), (2, 1)]);
        let cm = ConfusionMatrix::default()
            .accumulate(&gt.complement(), &gt)
            .unwrap();
        assert_eq!((cm.tp, cm.tn), (0, 0));
        assert_eq!(cm.total(), 9);
    }

    #[test]
    fn hand_counted_example() {
        // gt: 8 building pixels in row 0; pred: the first 6 of them plus 2 in row 1
        let gt = mask(10, 10, &(0..8).map(|c| (0, c)).collect::<Vec<_>>());
        let mut pred_px: Vec<_> = (0..6).map(|c| (0, c)).collect();
        pred_px.extend([(1, 0), (1, 1)]);
        let pred = mask(10, 10, &pred_px);
        let cm = ConfusionMatrix::default().accumulate(&pred, &gt).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(6, 2, 2, 90));
        assert_eq!(cm.overall_accuracy().unwrap(), 0.96);
        assert_eq!(cm.f1().unwrap(), 0.75);
        assert_eq!(cm.iou().unwrap(), 0.6);
        assert_eq!(
            cm.report().unwrap().machine_line(),
            "OA=0.9600 F1=0.7500 IoU=0.6000"
        );
    }

    #[test]
    fn perfect_and_empty_class() {
        let gt = mask(4, 4, &[(1, 1), (2, 2)]);
        let cm = ConfusionMatrix::default().accumulate(&gt, &gt).unwrap();
        let r = cm.report().unwrap();
        assert_eq!((r.overall_accuracy, r.f1, r.iou), (1.0, 1.0, 1.0));

        let empty = ConfusionMatrix::new(0, 0, 0, 25);
        assert_eq!(empty.f1().unwrap(), 1.0);
        assert_eq!(empty.iou().unwrap(), 1.0);
        assert_eq!(empty.overall_accuracy().unwrap(), 1.0);
        assert_eq!(
            empty.report().unwrap().machine_line(),
            "OA=1.0000 F1=1.0000 IoU=1.0000"
        );
    }

    #[test]
    fn errors() {
        assert!(ConfusionMatrix::default().overall_accuracy().is_err());
        assert!(ConfusionMatrix::default().iou().is_err());
        let a = BinaryMask::filled(2, 2, false);
        let b = BinaryMask::filled(2, 3, false);
        assert!(ConfusionMatrix::default().accumulate(&a, &b).is_err());
        assert!(BinaryMask::new(1, 2, vec![0, 2]).is_err());
        assert!(BinaryMask::new(1, 2, vec![0]).is_err());
    }

    fn arb_cm() -> impl Strategy<Value = ConfusionMatrix> {
        (0u64..10_000, 0u64..10_000, 0u64..10_000, 0u64..10_000)
            .prop_map(|(a, b, c, d)| ConfusionMatrix::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn f1_iou_identity(cm in arb_cm()) {
            prop_assume!(cm.tp + cm.fp + cm.fn_ > 0);
            let (f1, iou) = (cm.f1().unwrap(), cm.iou().unwrap());
            prop_assert!((f1 - 2.0 * iou / (1.0 + iou)).abs() <= 1e-12);
            prop_assert!(iou <= f1);
            if iou > 0.0 && iou < 1.0 {
                prop_assert!(iou < f1);
            }
        }

        #[test]
        fn metrics_in_unit_interval(cm in arb_cm()) {
            prop_assume!(cm.total() > 0);
            for v in [cm.overall_accuracy().unwrap(), cm.f1().unwrap(), cm.iou().unwrap()] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn accumulation_is_order_independent(
            masks in proptest::collection::vec(
                (proptest::collection::vec(0u8..2, 16), proptest::collection::vec(0u8..2, 16)),
                1..6,
            )
        ) {
            let pairs: Vec<(BinaryMask, BinaryMask)> = masks
                .into_iter()
                .map(|(p, g)| (BinaryMask::new(4, 4, p).unwrap(), BinaryMask::new(4, 4, g).unwrap()))
                .collect();
            let forward = pairs.iter().try_fold(ConfusionMatrix::default(), |cm, (p, g)| cm.accumulate(p, g)).unwrap();
            let backward = pairs.iter().rev().try_fold(ConfusionMatrix::default(), |cm, (p, g)| cm.accumulate(p, g)).unwrap();
            prop_assert_eq!(forward, backward);
            let merged = pairs
                .iter()
                .map(|(p, g)| ConfusionMatrix::default().accumulate(p, g).unwrap())
                .fold(ConfusionMatrix::default(), ConfusionMatrix::merge);
            prop_assert_eq!(forward, merged);
        }
    }
}

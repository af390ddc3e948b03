use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Per-class mean accuracy in percent: the mean over categories that have
/// samples of (correct in class / samples in class) × 100.
pub fn accuracy(predictions: &[usize], labels: &[usize], categories: &[usize]) -> Result<f64> {
    let per = per_class_accuracy(predictions, labels, categories)?;
    if per.is_empty() {
        return Err(Error::invalid("no samples to score"));
    }
    Ok(per.values().sum::<f64>() / per.len() as f64)
}

/// Accuracy in percent for each category with at least one sample.
pub fn per_class_accuracy(predictions: &[usize], labels: &[usize], categories: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if predictions.len() != labels.len() {
        return Err(Error::DimMismatch {
            context: "predictions",
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    let mut tally: BTreeMap<usize, (usize, usize)> = categories.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &y) in predictions.iter().zip(labels) {
        let t = tally.get_mut(&y).ok_or_else(|| Error::NotFound {
            kind: "label in category set",
            name: y.to_string(),
        })?;
        t.0 += usize::from(p == y);
        t.1 += 1;
    }
    Ok(tally
        .into_iter()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(c, (k, n))| (c, 100.0 * k as f64 / n as f64))
        .collect())
}

/// Percentage of correct predictions over all samples.
pub fn sample_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::invalid("predictions and labels must be non-empty and equal length"));
    }
    let k = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(100.0 * k as f64 / labels.len() as f64)
}

/// `2SU / (S + U)`.
pub fn harmonic_mean(seen: f64, unseen: f64) -> Result<f64> {
    if seen < 0.0 || unseen < 0.0 {
        return Err(Error::invalid("accuracies must be non-negative"));
    }
    if seen + unseen == 0.0 {
        return Err(Error::invalid("harmonic mean undefined when both accuracies are zero"));
    }
    Ok(2.0 * seen * unseen / (seen + unseen))
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn paper_rows() {
        assert!((harmonic_mean(69.72, 53.81).unwrap() - 60.74).abs() < 0.01);
        assert!((harmonic_mean(57.43, 41.64).unwrap() - 48.28).abs() < 0.01);
        assert!(harmonic_mean(0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn harmonic_properties(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            prop_assert!((harmonic_mean(a.max(1e-9), a.max(1e-9)).unwrap() - a.max(1e-9)).abs() < 1e-9);
            if a + b > 0.0 {
                let h = harmonic_mean(a, b).unwrap();
                prop_assert!(h == harmonic_mean(b, a).unwrap());
                prop_assert!(h <= 2.0 * a.min(b) + 1e-12);
            }
        }
    }

    #[test]
    fn all_correct() {
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 1], &[0, 1]).unwrap(), 100.0);
    }

    #[test]
    fn per_class_mean_ignores_class_sizes() {
        // class 0: 9 samples all right; class 1: 1 sample wrong
        let mut labels = vec![0; 9];
        labels.push(1);
        let mut preds = vec![0; 9];
        preds.push(0);
        assert_eq!(accuracy(&preds, &labels, &[0, 1]).unwrap(), 50.0);
        assert_eq!(sample_accuracy(&preds, &labels).unwrap(), 90.0);
    }

    #[test]
    fn hand_tally() {
        // class 2: 2/3, class 5: 1/2, class 7: 0/1 → (66.67 + 50 + 0) / 3
        let labels = [2, 2, 2, 5, 5, 7];
        let preds = [2, 5, 2, 5, 2, 2];
        let want = (200.0 / 3.0 + 50.0) / 3.0;
        assert!((accuracy(&preds, &labels, &[2, 5, 7, 9]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn label_outside_set() {
        assert!(accuracy(&[1], &[1], &[0]).is_err());
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[7.0]).std, 0.0);
    }
}

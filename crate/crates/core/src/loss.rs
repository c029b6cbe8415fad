use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    /// Softmax cross-entropy on logits.
    #[default]
    CrossEntropy,
    /// `0.5 · ‖logits − onehot‖²`, averaged over the batch. Quadratic in the
    /// logits, used where a loss with a known constant Hessian is needed.
    SquaredError,
}

impl Loss {
    /// Mean loss over the batch and its gradient with respect to the logits.
    pub fn evaluate(self, logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        match self {
            Loss::CrossEntropy => cross_entropy(logits, labels),
            Loss::SquaredError => squared_error(logits, labels),
        }
    }
}

fn check_batch(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    if logits.shape().len() != 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "loss expects [batch, classes] logits, got {:?}",
            logits.shape()
        )));
    }
    let (rows, classes) = (logits.shape()[0], logits.shape()[1]);
    if rows != labels.len() {
        return Err(Error::BatchMismatch { logits: rows, labels: labels.len() });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok((rows, classes))
}

/// Mean softmax cross-entropy and its gradient (already divided by the batch
/// size). Uses log-sum-exp so saturated logits do not overflow.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (rows, classes) = check_batch(logits, labels)?;
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(rows * classes);
    for (n, &label) in labels.iter().enumerate() {
        let z = logits.row(n);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|&v| libm::exp(v - max)).sum();
        let lse = max + libm::log(sum);
        total += lse - z[label];
        for (c, &v) in z.iter().enumerate() {
            let p = libm::exp(v - lse);
            grad.push((p - if c == label { 1.0 } else { 0.0 }) * scale);
        }
    }
    Ok((total * scale, Tensor::from_parts(logits.shape().to_vec(), grad)))
}

pub fn squared_error(outputs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (rows, classes) = check_batch(outputs, labels)?;
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(rows * classes);
    for (n, &label) in labels.iter().enumerate() {
        for (c, &v) in outputs.row(n).iter().enumerate() {
            let r = v - if c == label { 1.0 } else { 0.0 };
            total += 0.5 * r * r;
            grad.push(r * scale);
        }
    }
    Ok((total * scale, Tensor::from_parts(outputs.shape().to_vec(), grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};

    #[test]
    fn uniform_logits_give_log_classes() {
        for c in [2usize, 3, 10] {
            let logits = Tensor::new(vec![1, c], vec![0.7; c]).unwrap();
            let (loss, _) = cross_entropy(&logits, &[c - 1]).unwrap();
            assert!((loss - libm::log(c as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_logits_do_not_overflow() {
        let logits = Tensor::from_rows(&[&[1000.0, 0.0]]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-300 || loss == 0.0);
        assert!(grad.is_finite());
        let (loss, _) = cross_entropy(&logits, &[1]).unwrap();
        assert!((loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn matches_per_sample_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
        let logits = Tensor::new(vec![3, 4], data.clone()).unwrap();
        let labels = [2usize, 0, 3];
        let (loss, _) = cross_entropy(&logits, &labels).unwrap();
        // softmax, then -log of the labelled probability, averaged
        let mut expected = 0.0;
        for (n, &y) in labels.iter().enumerate() {
            let row = &data[n * 4..n * 4 + 4];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            expected += -(row[y].exp() / denom).ln();
        }
        expected /= 3.0;
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn label_range_and_batch_checked() {
        let logits = Tensor::from_rows(&[&[0.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy(&logits, &[2]).unwrap_err(), Error::LabelOutOfRange { label: 2, classes: 2 });
        assert!(matches!(cross_entropy(&logits, &[0, 1]), Err(Error::BatchMismatch { .. })));
    }

    #[test]
    fn squared_error_by_hand() {
        let out = Tensor::from_rows(&[&[1.0, 2.0]]).unwrap();
        let (loss, grad) = squared_error(&out, &[0]).unwrap();
        assert_eq!(loss, 2.0);
        assert_eq!(grad.data(), &[0.0, 2.0]);
    }
}

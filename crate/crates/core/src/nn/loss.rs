use super::Tensor;
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - onehot) / batch`.
pub fn softmax_ce(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let mut grad = vec![0.0; n * k];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut z = 0.0;
        for &v in row {
            z += (v - max).exp();
        }
        loss += z.ln() - (row[y] - max);
        for j in 0..k {
            let p = (row[j] - max).exp() / z;
            let t = if j == y { 1.0 } else { 0.0 };
            grad[i * k + j] = (p - t) * inv_n;
        }
    }
    Ok((loss * inv_n, Tensor::new(vec![n, k], grad)?))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Number of rows whose argmax equals the label.
pub fn correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let (loss, _) = softmax_ce(&Tensor::zeros(&[3, 5]), &[0, 1, 4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_prediction() {
        let logits = Tensor::from_rows(&[vec![100.0, 0.0, 0.0]]).unwrap();
        let (loss, g) = softmax_ce(&logits, &[0]).unwrap();
        assert!(loss < 1e-40);
        assert!(g.max_abs() < 1e-40);
    }

    #[test]
    fn large_logits_are_stable() {
        let logits = Tensor::from_rows(&[vec![1e300, -1e300]]).unwrap();
        let (loss, g) = softmax_ce(&logits, &[1]).unwrap();
        assert!(loss.is_finite() && g.is_finite());
    }

    #[test]
    fn label_out_of_range() {
        let err = softmax_ce(&Tensor::zeros(&[1, 2]), &[2]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 2, classes: 2 }));
    }
}

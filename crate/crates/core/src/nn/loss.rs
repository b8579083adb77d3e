/// Row-wise softmax of `[n][classes]` logits.
pub fn softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / s));
    }
    out
}

/// Mean negative log-likelihood and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let n = labels.len();
    assert_eq!(logits.len(), n * classes, "logit/label count mismatch");
    let mut loss = 0.0;
    let mut grad = softmax(logits, classes);
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad[i * classes + y] -= 1.0;
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (loss * inv, grad)
}

/// Probability of class 1 for each row of two-class logits.
pub fn positive_probability(logits: &[f64]) -> Vec<f64> {
    softmax(logits, 2).chunks(2).map(|r| r[1]).collect()
}

use super::EmbedError;

/// One contrastive training batch: query `i` is paired with positive `i`,
/// every other positive acts as an in-batch negative, and `hard_negatives[i]`
/// is its own extra negative.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub queries: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub hard_negatives: Vec<Vec<f64>>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceGrad {
    pub queries: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub hard_negatives: Vec<Vec<f64>>,
}

impl ContrastiveBatch {
    fn validate(&self) -> Result<usize, EmbedError> {
        let b = self.queries.len();
        if b == 0 || self.positives.len() != b || self.hard_negatives.len() != b {
            return Err(EmbedError::InvalidConfig(format!(
                "batch lists must have equal non-zero length (got {}, {}, {})",
                b,
                self.positives.len(),
                self.hard_negatives.len()
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(EmbedError::InvalidConfig(
                "temperature must be a positive finite number".into(),
            ));
        }
        let dim = self.queries[0].len();
        let all = || {
            self.queries
                .iter()
                .chain(&self.positives)
                .chain(&self.hard_negatives)
        };
        if let Some(bad) = all().find(|v| v.len() != dim) {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        if all().flatten().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFiniteInput);
        }
        Ok(b)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Candidate logits for query `i`: all positives, then its hard negative.
fn logits(batch: &ContrastiveBatch, i: usize) -> Vec<f64> {
    let q = &batch.queries[i];
    batch
        .positives
        .iter()
        .chain(std::iter::once(&batch.hard_negatives[i]))
        .map(|c| dot(q, c) / batch.temperature)
        .collect()
}

/// Returns (log-sum-exp, softmax weights).
fn softmax(z: &[f64]) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (max + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

pub fn infonce_loss(batch: &ContrastiveBatch) -> Result<f64, EmbedError> {
    let b = batch.validate()?;
    let total: f64 = (0..b)
        .map(|i| {
            let z = logits(batch, i);
            let (lse, _) = softmax(&z);
            (lse - z[i]).max(0.0)
        })
        .sum();
    Ok(total / b as f64)
}

/// Loss plus its analytic gradient with respect to every embedding entry.
pub fn infonce_loss_with_grad(batch: &ContrastiveBatch) -> Result<(f64, InfoNceGrad), EmbedError> {
    let b = batch.validate()?;
    let dim = batch.queries[0].len();
    let zeros = || vec![vec![0.0; dim]; b];
    let mut grad = InfoNceGrad {
        queries: zeros(),
        positives: zeros(),
        hard_negatives: zeros(),
    };
    let scale = 1.0 / (batch.temperature * b as f64);
    let mut total = 0.0;
    for i in 0..b {
        let z = logits(batch, i);
        let (lse, p) = softmax(&z);
        total += (lse - z[i]).max(0.0);
        let q = &batch.queries[i];
        for (j, &pj) in p.iter().enumerate() {
            let coeff = (pj - if j == i { 1.0 } else { 0.0 }) * scale;
            let (cand, cand_grad) = if j < b {
                (&batch.positives[j], &mut grad.positives[j])
            } else {
                (&batch.hard_negatives[i], &mut grad.hard_negatives[i])
            };
            for d in 0..dim {
                grad.queries[i][d] += coeff * cand[d];
                cand_grad[d] += coeff * q[d];
            }
        }
    }
    Ok((total / b as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(q: Vec<f64>, pos: Vec<f64>, neg: Vec<f64>, t: f64) -> ContrastiveBatch {
        ContrastiveBatch {
            queries: vec![q],
            positives: vec![pos],
            hard_negatives: vec![neg],
            temperature: t,
        }
    }

    #[test]
    fn equal_similarities_give_ln2() {
        let batch = single(vec![1.0, 0.0], vec![0.5, 0.5], vec![0.5, -0.5], 0.07);
        let loss = infonce_loss(&batch).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn closed_form_case() {
        let batch = single(vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], 1.0);
        let loss = infonce_loss(&batch).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_batches() {
        let mut batch = single(vec![1.0], vec![1.0], vec![1.0], 1.0);
        batch.temperature = 0.0;
        assert!(infonce_loss(&batch).is_err());
        let batch = single(vec![f64::NAN], vec![1.0], vec![1.0], 1.0);
        assert!(matches!(infonce_loss(&batch), Err(EmbedError::NonFiniteInput)));
        let batch = ContrastiveBatch {
            queries: vec![],
            positives: vec![],
            hard_negatives: vec![],
            temperature: 1.0,
        };
        assert!(infonce_loss(&batch).is_err());
    }

    #[test]
    fn grad_loss_matches_plain_loss() {
        let batch = ContrastiveBatch {
            queries: vec![vec![0.3, -0.2, 0.9], vec![0.1, 0.4, -0.5]],
            positives: vec![vec![0.2, 0.1, 0.7], vec![-0.3, 0.5, 0.1]],
            hard_negatives: vec![vec![0.6, 0.6, 0.1], vec![0.0, -0.2, 0.4]],
            temperature: 0.5,
        };
        let plain = infonce_loss(&batch).unwrap();
        let (with_grad, _) = infonce_loss_with_grad(&batch).unwrap();
        assert_eq!(plain, with_grad);
    }
}

use crate::data::Dataset;
use crate::{LayeredModel, Loss, Result};

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Fraction of samples whose argmax logit (lowest index on ties) equals the label.
    pub accuracy: f64,
}

pub fn evaluate(model: &mut LayeredModel, ds: &Dataset, loss: Loss) -> Result<Evaluation> {
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let indices: alloc::vec::Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = ds.gather(chunk);
        let logits = model.forward(x)?;
        let (l, _) = loss.evaluate(&logits, &y)?;
        total_loss += l * chunk.len() as f64;
        for (n, &label) in y.iter().enumerate() {
            if argmax(logits.row(n)) == label {
                correct += 1;
            }
        }
    }
    model.clear_caches();
    let n = ds.len() as f64;
    Ok(Evaluation { loss: total_loss / n, accuracy: correct as f64 / n })
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, LayeredModel, Result, Tensor};

/// Parameter-wise `Σ_k α_k θ_k`, evaluated as `θ_0 + Σ_k α_k (θ_k − θ_0)` with
/// the sum accumulated in ascending `k`. Identical inputs come back bitwise.
pub fn aggregate_weighted(models: &[&LayeredModel], weights: &[f64]) -> Result<LayeredModel> {
    let first = *models.first().ok_or_else(|| Error::InvalidArgument("nothing to aggregate".into()))?;
    if models.len() != weights.len() {
        return Err(Error::InvalidArgument(format!("{} models but {} weights", models.len(), weights.len())));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::WeightSum(sum));
    }
    for m in &models[1..] {
        if m.params().map(|p| p.shape()).ne(first.params().map(|p| p.shape())) {
            return Err(Error::GradientMismatch("aggregated models have different parameter shapes"));
        }
    }
    let mut out = first.clone();
    out.clear_caches();
    for (i, dst) in out.params_mut().enumerate() {
        let srcs: Vec<&Tensor> = models.iter().map(|m| m.params().nth(i).expect("shapes checked")).collect();
        let reference = srcs[0].data();
        for (j, d) in dst.data_mut().iter_mut().enumerate() {
            let shift: f64 = srcs.iter().zip(weights).map(|(src, &w)| w * (src.data()[j] - reference[j])).sum();
            *d = reference[j] + shift;
        }
    }
    Ok(out)
}

use nalgebra::DVector;

use crate::error::Result;
use crate::hmc::{run_hmc, ChainRecord, HmcConfig};
use crate::merge::MergedGp;
use crate::Real;

/// Training input with the highest merged expected log-density; a safe HMC start.
pub fn best_training_point<T: Real>(merged: &MergedGp<T>) -> DVector<T> {
    let mut best = None;
    for s in merged.surrogates() {
        for row in s.inputs().row_iter() {
            let x = row.transpose();
            let v = merged.log_expected_density(&x);
            if v.is_finite() && best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                best = Some((v, x));
            }
        }
    }
    best.map(|(_, x)| x).unwrap_or_else(|| merged.surrogates()[0].inputs().row(0).transpose())
}

/// HMC on the expected merged density; keeps every post-adaptation draw.
pub fn gp_hmc_sample<T: Real>(merged: &MergedGp<T>, config: &HmcConfig<T>, start: Option<&DVector<T>>) -> Result<ChainRecord<T>> {
    let theta0 = match start {
        Some(s) => s.clone(),
        None => best_training_point(merged),
    };
    run_hmc(merged, config, &theta0)
}

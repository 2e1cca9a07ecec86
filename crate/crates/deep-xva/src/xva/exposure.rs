//! Discounted expected positive/negative exposure profiles.

use crate::bsde::ValuePaths;
use crate::error::{Error, Result};
use crate::xva::rates::{neg_part, pos_part, XvaRates};

/// Time-indexed discounted expected positive and negative exposure with
/// per-node standard errors. DEPE >= 0 >= DENE by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureProfile {
    pub nodes: Vec<f64>,
    pub depe: Vec<f64>,
    pub dene: Vec<f64>,
    pub depe_se: Vec<f64>,
    pub dene_se: Vec<f64>,
}

/// DEPE(t_n) = mean_p e^{-int_0^{t_n} r} (V_n^{(p)})^+ and
/// DENE(t_n) = -mean_p e^{-int_0^{t_n} r} (V_n^{(p)})^-.
pub fn exposure_profile(values: &ValuePaths, rates: &XvaRates) -> Result<ExposureProfile> {
    let count = values.count();
    if count == 0 {
        return Err(Error::invalid("exposure profile of an empty path set"));
    }
    let grid = values.grid();
    let mut profile = ExposureProfile {
        nodes: grid.nodes(),
        depe: Vec::with_capacity(grid.steps() + 1),
        dene: Vec::with_capacity(grid.steps() + 1),
        depe_se: Vec::with_capacity(grid.steps() + 1),
        dene_se: Vec::with_capacity(grid.steps() + 1),
    };
    for n in 0..=grid.steps() {
        let disc = rates.discount(grid.node(n));
        let mut pos = Vec::with_capacity(count);
        let mut neg = Vec::with_capacity(count);
        for p in 0..count {
            let v = values.values()[[p, n]];
            pos.push(disc * pos_part(v));
            neg.push(-disc * neg_part(v));
        }
        let (pm, pse) = mean_se(&pos);
        let (nm, nse) = mean_se(&neg);
        profile.depe.push(pm);
        profile.dene.push(nm);
        profile.depe_se.push(pse);
        profile.dene_se.push(nse);
    }
    Ok(profile)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

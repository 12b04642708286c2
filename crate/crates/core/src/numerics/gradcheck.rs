use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::numerics::{rng_for, Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Number of coordinates to probe; `None` probes every coordinate.
    pub probe_count: Option<usize>,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            probe_count: None,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub probes: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss_fn` around
/// `params`.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &ParamStore,
    analytic: &Gradients,
    options: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(options.step > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be > 0, got {}",
            options.step
        )));
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape(
            "analytic gradients do not match the parameter store".into(),
        ));
    }

    let coords: Vec<(usize, usize)> = params
        .ids()
        .flat_map(|id| (0..params.value(id).len()).map(move |k| (id.index(), k)))
        .collect();
    let chosen: Vec<usize> = match options.probe_count {
        Some(n) if n < coords.len() => {
            let mut picks = sample(&mut rng_for(options.seed, 0), coords.len(), n).into_vec();
            picks.sort_unstable();
            picks
        }
        _ => (0..coords.len()).collect(),
    };

    let mut probe = params.clone();
    let ids: Vec<_> = params.ids().collect();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        probes: chosen.len(),
        passed: true,
    };

    for &c in &chosen {
        let (entry, k) = coords[c];
        let id = ids[entry];
        let original = params.value(id).as_slice()[k];

        probe.value_mut(id).as_mut_slice()[k] = original + options.step;
        let plus = loss_fn(&probe)?;
        probe.value_mut(id).as_mut_slice()[k] = original - options.step;
        let minus = loss_fn(&probe)?;
        probe.value_mut(id).as_mut_slice()[k] = original;

        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss while probing `{}`[{k}]",
                params.name(id)
            )));
        }
        let numeric = (plus - minus) / (2.0 * options.step);
        let a = analytic.get(id).as_slice()[k];
        let err = relative_error(a, numeric);
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = err;
            report.worst = Some((params.name(id).to_owned(), k));
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report.passed = report.max_relative_error < options.tolerance;
    Ok(report)
}

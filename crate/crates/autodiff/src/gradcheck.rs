//! Central-difference verification of taped gradients.

use crate::params::{Gradients, ParameterStore};

/// Error between analytic and numeric derivatives, with denominator
/// `max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates skipped because a perturbation flipped a discrete decision.
    pub skipped_flipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Compares `analytic` against central differences of `eval` at step `eps`.
///
/// `eval` returns the loss and a signature of every discrete decision
/// taken on the way. A coordinate whose `+eps` or `-eps` evaluation
/// produces a signature different from the unperturbed one sits on a
/// branch boundary; it is skipped and counted.
pub fn grad_check<S, F>(
    store: &ParameterStore,
    analytic: &Gradients,
    eps: f64,
    mut eval: F,
) -> GradCheckReport
where
    S: PartialEq,
    F: FnMut(&ParameterStore) -> (f64, S),
{
    let (_, baseline) = eval(store);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        skipped_flipped: 0,
    };

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for k in 0..store.get(id).len() {
            let original = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = original + eps;
            let (plus, sig_plus) = eval(&work);
            work.get_mut(id).data_mut()[k] = original - eps;
            let (minus, sig_minus) = eval(&work);
            work.get_mut(id).data_mut()[k] = original;

            if sig_plus != baseline || sig_minus != baseline {
                report.skipped_flipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic.get(id)[k], numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                if err >= report.max_relative_error {
                    report.worst = Some((store.get(id).name().to_string(), k));
                }
            }
        }
    }
    report
}

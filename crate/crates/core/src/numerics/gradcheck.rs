use serde::Serialize;

use super::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares the analytic gradients already stored in `params.grads` against
/// central differences of `loss`. Relative error per scalar is
/// `|ga - gn| / max(|ga|, |gn|, 1e-8)`.
pub fn grad_check(
    params: &mut ParamStore,
    mut loss: impl FnMut(&ParamStore) -> f64,
    eps: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for p in 0..params.values.len() {
        for j in 0..params.values[p].len() {
            let orig = params.values[p].data[j];
            params.values[p].data[j] = orig + eps;
            let up = loss(params);
            params.values[p].data[j] = orig - eps;
            let down = loss(params);
            params.values[p].data[j] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let analytic = params.grads[p].data[j];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst_param = params.name(super::ParamId(p)).to_string();
                report.worst_index = j;
            }
        }
    }
    report
}

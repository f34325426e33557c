/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

// Gradient entries smaller than this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// The relative error of entry `i` is `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], tolerance: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let mut p = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        tolerance,
        passed: true,
    };
    for i in 0..p.len() {
        let x = p[i];
        p[i] = x + FD_STEP;
        let up = loss(&p);
        p[i] = x - FD_STEP;
        let down = loss(&p);
        p[i] = x;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        report.max_abs_error = report.max_abs_error.max(abs);
    }
    report.passed = report.max_rel_error < tolerance;
    report
}

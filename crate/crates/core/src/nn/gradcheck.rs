use super::Parameters;
use crate::scenario::SeededStream;

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Denominator floor so coordinates with vanishing gradient compare absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares analytic gradients against central differences on
/// `probe_count` randomly chosen coordinates; returns the largest relative error.
///
/// `f` returns the scalar loss and its analytic gradient at the given parameters.
pub fn grad_check<P, F>(f: F, params: &P, probe_count: usize, stream: &mut SeededStream) -> f64
where
    P: Parameters + Clone,
    F: Fn(&P) -> (f64, P),
{
    let (_, analytic) = f(params);
    let lens: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
    let total: usize = lens.iter().sum();
    assert!(total > 0, "no parameters to probe");
    let analytic_flat: Vec<&[f64]> = analytic.param_slices();

    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for _ in 0..probe_count.max(1) {
        let mut idx = stream.index(total);
        let mut slice = 0;
        while idx >= lens[slice] {
            idx -= lens[slice];
            slice += 1;
        }
        let orig = probe.param_slices()[slice][idx];
        probe.param_slices_mut()[slice][idx] = orig + GRAD_CHECK_STEP;
        let (up, _) = f(&probe);
        probe.param_slices_mut()[slice][idx] = orig - GRAD_CHECK_STEP;
        let (down, _) = f(&probe);
        probe.param_slices_mut()[slice][idx] = orig;
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        worst = worst.max(relative_error(analytic_flat[slice][idx], numeric));
    }
    worst
}

//! Central finite-difference comparison against analytic gradients.

use crate::params::ParamStore;

/// Largest `|g - fd| / max(|g|, |fd|, floor)` over all scalars, where `fd` is
/// the central difference of `f` with step `h`.
pub fn max_relative_error(store: &ParamStore, analytic: &[f64], h: f64, floor: f64, mut f: impl FnMut(&ParamStore) -> f64) -> f64 {
    let base = store.flatten();
    assert_eq!(base.len(), analytic.len(), "gradient length mismatch");
    let mut probe = store.clone();
    let mut x = base.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        x[i] = base[i] + h;
        probe.unflatten(&x);
        let up = f(&probe);
        x[i] = base[i] - h;
        probe.unflatten(&x);
        let down = f(&probe);
        x[i] = base[i];
        let fd = (up - down) / (2.0 * h);
        let a = analytic[i];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(floor));
    }
    worst
}

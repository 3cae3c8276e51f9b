use crate::series::clamp_score;

/// `1 − two-sided p-value` of a standard normal deviate `z`, i.e.
/// `1 − 2·min(Φ(z), 1 − Φ(z)) = erf(|z| / √2)`, clamped into `[0, 1)`.
pub fn tail_score(z: f64) -> f64 {
    if z.is_nan() {
        return 0.0;
    }
    clamp_score(libm::erf(z.abs() / std::f64::consts::SQRT_2))
}

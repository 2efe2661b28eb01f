//! Unit conversions. Configuration files use GHz, MHz, ns and μs; every
//! computation inside the crate works in rad/s and seconds.

use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Cyclic frequency in GHz to angular frequency in rad/s.
pub fn ghz_to_rad_s(f_ghz: f64) -> f64 {
    TWO_PI * f_ghz * 1e9
}

pub fn mhz_to_rad_s(f_mhz: f64) -> f64 {
    TWO_PI * f_mhz * 1e6
}

pub fn rad_s_to_ghz(omega: f64) -> f64 {
    omega / TWO_PI / 1e9
}

pub fn rad_s_to_mhz(omega: f64) -> f64 {
    omega / TWO_PI / 1e6
}

pub fn ns(t: f64) -> f64 {
    t * 1e-9
}

pub fn us(t: f64) -> f64 {
    t * 1e-6
}

pub fn to_ns(t: f64) -> f64 {
    t * 1e9
}

pub fn to_us(t: f64) -> f64 {
    t * 1e6
}

/// nH to H.
pub fn nh(l: f64) -> f64 {
    l * 1e-9
}

/// pF/m to F/m.
pub fn pf(c: f64) -> f64 {
    c * 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips() {
        assert!((rad_s_to_ghz(ghz_to_rad_s(4.885)) - 4.885).abs() < 1e-12);
        assert!((rad_s_to_mhz(mhz_to_rad_s(5.0)) - 5.0).abs() < 1e-12);
        assert!((to_ns(ns(66.0)) - 66.0).abs() < 1e-12);
        assert!((to_us(us(26.4)) - 26.4).abs() < 1e-12);
    }
}

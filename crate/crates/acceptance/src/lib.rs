//! Closed-form oracles the acceptance suite checks the engine against. None
//! of them calls into the engine's solvers.

use std::f64::consts::PI;

use gridsa_core::fixtures::SmibParams;

/// Initial frequency slope after a sudden power deficit `dp_mw` on a system
/// holding `kinetic_energy_mws`, governors not yet acting:
/// df/dt = -dp * f0 / (2 * Ek).
pub fn swing_initial_rocof(dp_mw: f64, nominal_hz: f64, kinetic_energy_mws: f64) -> f64 {
    -dp_mw * nominal_hz / (2.0 * kinetic_energy_mws)
}

/// Lossless two-bus line, slack at `v1`, unity power factor load `p` (pu) at
/// the far end over reactance `x`. Returns `(v2, theta2)`.
///
/// With V2 = V1 cos(th) the active flow V1 V2 sin(-th) / x = p reduces to
/// sin(2 th) = -2 p x / V1^2.
pub fn two_bus_pq(p: f64, x: f64, v1: f64) -> Option<(f64, f64)> {
    let s = 2.0 * p * x / (v1 * v1);
    if s > 1.0 {
        return None;
    }
    let th = -0.5 * s.asin();
    Some((v1 * th.cos(), th))
}

/// Far-end angle of a lossless line between two voltage-controlled buses
/// carrying `p` pu: sin(-th) = p x / (V1 V2).
pub fn two_bus_pv_angle(p: f64, x: f64, v1: f64, v2: f64) -> f64 {
    -(p * x / (v1 * v2)).asin()
}

/// Largest unity power factor load a lossless line can carry: V1^2 / (2x).
pub fn max_transfer(x: f64, v1: f64) -> f64 {
    v1 * v1 / (2.0 * x)
}

/// Critical clearing time of a bolted fault at the machine terminal of
/// [`SmibParams`], cleared by opening one of the two parallel lines, from the
/// equal-area criterion. The infinite bus sits behind a negligible reactance.
pub fn equal_area_cct(p: &SmibParams, nominal_hz: f64) -> f64 {
    let x_g = p.xd_prime * p.base_mva / p.s_rated;
    let x_r = 0.01 * p.base_mva / 1.0e6;
    let pmax_pre = p.base_mva / (x_g + p.x_line / 2.0 + x_r);
    let pmax_post = p.base_mva / (x_g + p.x_line + x_r);
    let pm = p.p_mech_mw;
    let d0 = (pm / pmax_pre).asin();
    let dmax = PI - (pm / pmax_post).asin();
    let dc = ((pm * (dmax - d0) + pmax_post * dmax.cos()) / pmax_post).acos();
    // During the fault Pe = 0, so delta(t) = d0 + pi f0 Pm t^2 / (2 H S).
    (2.0 * p.h * p.s_rated * (dc - d0) / (PI * nominal_hz * pm)).sqrt()
}

/// `num / den` as a percentage rounded half up to two decimals, computed in
/// decimal text rather than integer hundredths.
pub fn percent_2dp(num: u64, den: u64) -> f64 {
    // Ten digits after the point are exact enough to decide the rounding of
    // ratios of integers below 10^8.
    let scaled = num as u128 * 100 * 10u128.pow(10) / den as u128;
    let text = format!("{scaled:013}");
    let (int, frac) = text.split_at(text.len() - 10);
    let mut hundredths: u128 = format!("{int}{}", &frac[..2]).parse().unwrap();
    if frac.as_bytes()[2] >= b'5' {
        hundredths += 1;
    }
    hundredths as f64 / 100.0
}

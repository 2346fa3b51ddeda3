//! Truncated normal and gamma helpers.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, Gamma as GammaCdf};
use statrs::function::erf::{erfc, erfc_inv};

use super::Counter;

/// `P(Z > z)` for standard normal `Z`.
fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn ln_upper_tail(z: f64) -> f64 {
    let q = upper_tail(z);
    if q > 0.0 {
        q.ln()
    } else {
        // Mills ratio asymptote.
        -0.5 * z * z - (z * (2.0 * std::f64::consts::PI).sqrt()).ln()
    }
}

/// `ln P(a ≤ Z ≤ b)` for `Z ~ N(0, 1)`, `a < b`.
fn ln_std_interval(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        let (la, lb) = (ln_upper_tail(a), ln_upper_tail(b));
        la + (-(lb - la).exp()).ln_1p()
    } else if b < 0.0 {
        ln_std_interval(-b, -a)
    } else {
        (1.0 - upper_tail(-a) - upper_tail(b)).ln()
    }
}

/// `ln P(lo ≤ X ≤ hi)` for `X ~ N(mu, sd²)`.
pub(crate) fn ln_normal_interval(mu: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    ln_std_interval((lo - mu) / sd, (hi - mu) / sd)
}

/// Standard normal restricted to `[a, b]` with `a ≥ 0`.
fn std_upper<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let (qa, qb) = (upper_tail(a), upper_tail(b));
    if qa > 1e-12 && qa - qb > 1e-3 * qa {
        let u = qb + rng.random::<f64>() * (qa - qb);
        let z = std::f64::consts::SQRT_2 * erfc_inv(2.0 * u);
        return z.clamp(a, b);
    }
    // Exponential proposal shifted to `a`.
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(lambda).expect("rate");
    loop {
        let z = a + exp.sample(rng);
        if z <= b && rng.random::<f64>() <= (-0.5 * (z - lambda) * (z - lambda)).exp() {
            return z;
        }
        if b - a < 1e-8 * a.max(1.0) {
            return 0.5 * (a + b);
        }
    }
}

/// Draw from `N(mu, sd²)` restricted to `[lo, hi]`.
pub(crate) fn sample_truncated_normal<R: Rng + ?Sized>(mu: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let (a, b) = ((lo - mu) / sd, (hi - mu) / sd);
    let z = if a >= 0.0 {
        std_upper(a, b, rng)
    } else if b <= 0.0 {
        -std_upper(-b, -a, rng)
    } else if b - a > 2.0 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if (a..=b).contains(&z) {
                break z;
            }
        }
    } else {
        let (fa, fb) = (1.0 - upper_tail(a), 1.0 - upper_tail(b));
        let u = fa + rng.random::<f64>() * (fb - fa);
        (-std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)).clamp(a, b)
    };
    (mu + sd * z).clamp(lo, hi)
}

/// Draw from `Gamma(shape, rate)` restricted to `[lo, hi]`: plain rejection
/// first, inverse CDF after `max_tries` misses. Attempts are tallied in
/// `counter`.
pub(crate) fn sample_truncated_gamma<R: Rng + ?Sized>(
    shape: f64,
    rate: f64,
    lo: f64,
    hi: f64,
    max_tries: usize,
    counter: &mut Counter,
    rng: &mut R,
) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("gamma parameters");
    for _ in 0..max_tries {
        let v = g.sample(rng);
        let inside = (lo..=hi).contains(&v);
        counter.record(inside);
        if inside {
            return v;
        }
    }
    let d = GammaCdf::new(shape, rate).expect("gamma parameters");
    let (fl, fh) = (d.cdf(lo), d.cdf(hi));
    if fh - fl > 1e-300 {
        let u = fl + rng.random::<f64>() * (fh - fl);
        d.inverse_cdf(u).clamp(lo, hi)
    } else if fh < 0.5 {
        hi
    } else {
        lo
    }
}

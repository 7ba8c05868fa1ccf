//! Sine integral.

use num_complex::Complex64;

/// `Si(x) = ∫₀^x sin t / t dt`.
pub fn sine_integral(x: f64) -> f64 {
    let t = x.abs();
    let value = if t < 2.0 {
        // Power series; alternating terms with rapidly decreasing size.
        let mut sum = 0.0;
        let mut term = t;
        let mut k = 0usize;
        loop {
            let add = term / (2 * k + 1) as f64;
            sum += add;
            if add.abs() <= 1e-17 * sum.abs() {
                break;
            }
            k += 1;
            term *= -t * t / ((2 * k) as f64 * (2 * k + 1) as f64);
        }
        sum
    } else {
        // Lentz continued fraction for E1(it), Si = π/2 + Im E1(it).
        let one = Complex64::new(1.0, 0.0);
        let mut b = Complex64::new(1.0, t);
        let mut c = Complex64::new(1.0 / f64::MIN_POSITIVE, 0.0);
        let mut d = one / b;
        let mut h = d;
        for i in 1..200 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = one / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del.re - 1.0).abs() + del.im.abs() < 1e-16 {
                break;
            }
        }
        let e = Complex64::new(t.cos(), -t.sin()) * h;
        std::f64::consts::FRAC_PI_2 + e.im
    };
    value.copysign(x)
}

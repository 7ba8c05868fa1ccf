//! Explicit Runge–Kutta integrator of order 8(5,3) (Dormand–Prince, Hairer's
//! DOP853 coefficients and step-size controller) for complex first-order systems.
//!
//! Integration is done segment by segment: the right-hand side is only ever
//! evaluated strictly inside the current segment, so one-sided limits are used
//! at points where the coefficients jump (e.g. at the end of the support of Q).

use crate::error::{Error, Result};
use crate::matrix::C64;

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, x: f64, y: &[C64], dy: &mut [C64]);
}

const C: [f64; 12] = [
    0.0,
    5.260_015_195_876_773E-2,
    7.890_022_793_815_16E-2,
    1.183_503_419_072_274E-1,
    2.816_496_580_927_726E-1,
    3.333_333_333_333_333E-1,
    0.25,
    3.076_923_076_923_077E-1,
    6.512_820_512_820_513E-1,
    0.6,
    8.571_428_571_428_571E-1,
    1.0,
];

const A: [[f64; 11]; 12] = [
    [0.0; 11],
    [5.260_015_195_876_773E-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.972_505_698_453_79E-2, 5.917_517_095_361_37E-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.958_758_547_680_685E-2, 0.0, 8.876_275_643_042_054E-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [
        2.413_651_341_592_667E-1,
        0.0,
        -8.845_494_793_282_861E-1,
        9.248_340_032_617_92E-1,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        3.703_703_703_703_703_5E-2,
        0.0,
        0.0,
        1.708_286_087_294_738_6E-1,
        1.254_676_875_668_224_2E-1,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        3.7109375E-2,
        0.0,
        0.0,
        1.702_522_110_195_440_5E-1,
        6.021_653_898_045_596E-2,
        -1.7578125E-2,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        3.709_200_011_850_479E-2,
        0.0,
        0.0,
        1.703_839_257_122_399_8E-1,
        1.072_620_304_463_732_8E-1,
        -1.531_943_774_862_440_2E-2,
        8.273_789_163_814_023E-3,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        6.241_109_587_160_757E-1,
        0.0,
        0.0,
        -3.360_892_629_446_941_4,
        -8.682_193_468_417_26E-1,
        2.759_209_969_944_671E1,
        2.015_406_755_047_789_4E1,
        -4.348_988_418_106_996E1,
        0.0,
        0.0,
        0.0,
    ],
    [
        4.776_625_364_382_643_4E-1,
        0.0,
        0.0,
        -2.488_114_619_971_667_7,
        -5.902_908_268_368_43E-1,
        2.123_005_144_818_119_3E1,
        1.527_923_363_288_242_3E1,
        -3.328_821_096_898_486E1,
        -2.033_120_170_850_862_7E-2,
        0.0,
        0.0,
    ],
    [
        -9.371_424_300_859_873E-1,
        0.0,
        0.0,
        5.186_372_428_844_064,
        1.091_437_348_996_729_5,
        -8.149_787_010_746_927,
        -1.852_006_565_999_696E1,
        2.273_948_709_935_050_5E1,
        2.493_605_552_679_652_3,
        -3.046_764_471_898_219_6,
        0.0,
    ],
    [
        2.273_310_147_516_538,
        0.0,
        0.0,
        -1.053_449_546_673_725E1,
        -2.000_872_058_224_862_5,
        -1.795_893_186_311_88E1,
        2.794_888_452_941_996E1,
        -2.858_998_277_135_023_5,
        -8.872_856_933_530_63,
        1.236_056_717_579_430_3E1,
        6.433_927_460_157_636E-1,
    ],
];

const B: [f64; 12] = [
    5.429_373_411_656_876_5E-2,
    0.0,
    0.0,
    0.0,
    0.0,
    4.450_312_892_752_409,
    1.891_517_899_314_500_3,
    -5.801_203_960_010_585,
    3.111_643_669_578_199E-1,
    -1.521_609_496_625_161E-1,
    2.013_654_008_040_303_4E-1,
    4.471_061_572_777_259E-2,
];

const ER: [f64; 12] = [
    1.312_004_499_419_488E-2,
    0.0,
    0.0,
    0.0,
    0.0,
    -1.225_156_446_376_204_4,
    -4.957_589_496_572_502E-1,
    1.664_377_182_454_986_4,
    -3.503_288_487_499_736_6E-1,
    3.341_791_187_130_175E-1,
    8.192_320_648_511_571E-2,
    -2.235_530_786_388_629_4E-2,
];

const BHH: [f64; 3] = [2.440_944_881_889_764E-1, 7.338_466_882_816_118E-1, 2.205_882_352_941_176_6E-2];

const SAFE: f64 = 0.9;
const FACC1: f64 = 1.0 / 0.333;
const FACC2: f64 = 1.0 / 6.0;
const EXPO1: f64 = 1.0 / 8.0;
const MAX_STEPS: usize = 1_000_000;

/// Scratch space for one step; kept out of `Clone` so snapshots stay cheap.
#[derive(Default)]
struct Work {
    k: Vec<Vec<C64>>,
    ytmp: Vec<C64>,
    ynew: Vec<C64>,
}

impl Work {
    fn ensure(&mut self, n: usize) {
        if self.ytmp.len() != n {
            self.k = vec![vec![C64::default(); n]; 12];
            self.ytmp = vec![C64::default(); n];
            self.ynew = vec![C64::default(); n];
        }
    }
}

pub struct Integrator {
    x: f64,
    y: Vec<C64>,
    h: f64,
    rtol: f64,
    atol: f64,
    steps: usize,
    work: Work,
}

impl Clone for Integrator {
    fn clone(&self) -> Self {
        Self {
            x: self.x,
            y: self.y.clone(),
            h: self.h,
            rtol: self.rtol,
            atol: self.atol,
            steps: self.steps,
            work: Work::default(),
        }
    }
}

impl Integrator {
    pub fn new(x0: f64, y0: Vec<C64>, tol: f64) -> Self {
        Self { x: x0, y: y0, h: 0.0, rtol: tol, atol: tol, steps: 0, work: Work::default() }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> &[C64] {
        &self.y
    }

    /// Total accepted steps so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Integrates to `target`, stopping at every breakpoint strictly between.
    pub fn advance<S: OdeSystem + ?Sized>(&mut self, sys: &S, target: f64, breakpoints: &[f64]) -> Result<()> {
        let dir = if target >= self.x { 1.0 } else { -1.0 };
        let mut stops: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|&b| (b - self.x) * dir > 0.0 && (target - b) * dir > 0.0)
            .collect();
        stops.sort_by(|a, b| (a * dir).total_cmp(&(b * dir)));
        stops.push(target);
        for s in stops {
            self.advance_segment(sys, s)?;
        }
        Ok(())
    }

    /// Integrates to `target` assuming the coefficients are smooth on the open interval.
    pub fn advance_segment<S: OdeSystem + ?Sized>(&mut self, sys: &S, target: f64) -> Result<()> {
        let n = self.y.len();
        debug_assert_eq!(n, sys.dim());
        if target == self.x {
            return Ok(());
        }
        if n == 0 {
            self.x = target;
            return Ok(());
        }
        self.work.ensure(n);
        let (lo, hi) = if target > self.x { (self.x, target) } else { (target, self.x) };
        let span = hi - lo;
        let guard = 1e-13 * span.max(1e-300);
        let clamp = |t: f64| t.clamp(lo + guard, hi - guard);
        let dir = (target - self.x).signum();

        let Work { k, ytmp, ynew } = &mut self.work;
        sys.rhs(clamp(self.x), &self.y, &mut k[0]);

        let mut h = if self.h != 0.0 {
            self.h.abs().min(span) * dir
        } else {
            let (k0, rest) = k.split_at_mut(1);
            initial_step(sys, self.x, &self.y, &k0[0], dir, span, self.rtol, self.atol, ytmp, &mut rest[0], clamp)
        };
        let mut last_rejected = false;
        let mut count = 0usize;

        loop {
            let remaining = target - self.x;
            let mut last = false;
            let planned = h;
            if (self.x + 1.01 * h - target) * dir >= 0.0 {
                h = remaining;
                last = true;
            }
            if h.abs() <= 1e-14 * self.x.abs().max(span) {
                return Err(Error::IntegratorFailure { x: self.x, reason: "step size underflow".into() });
            }
            count += 1;
            if count > MAX_STEPS {
                return Err(Error::IntegratorFailure { x: self.x, reason: "maximum step count exceeded".into() });
            }

            for s in 1..12 {
                let (done, rest) = k.split_at_mut(s);
                let a = &A[s];
                for i in 0..n {
                    let mut acc = C64::default();
                    for (j, kj) in done.iter().enumerate() {
                        if a[j] != 0.0 {
                            acc += kj[i] * a[j];
                        }
                    }
                    ytmp[i] = self.y[i] + acc * h;
                }
                sys.rhs(clamp(self.x + C[s] * h), ytmp, &mut rest[0]);
            }

            let mut err = 0.0;
            let mut err2 = 0.0;
            for i in 0..n {
                let mut upd = C64::default();
                let mut e1 = C64::default();
                for j in 0..12 {
                    if B[j] != 0.0 {
                        upd += k[j][i] * B[j];
                    }
                    if ER[j] != 0.0 {
                        e1 += k[j][i] * ER[j];
                    }
                }
                ynew[i] = self.y[i] + upd * h;
                let sk = self.atol + self.rtol * self.y[i].norm().max(ynew[i].norm());
                let e2 = upd - k[0][i] * BHH[0] - k[8][i] * BHH[1] - k[11][i] * BHH[2];
                err += (e1 / sk).norm_sqr();
                err2 += (e2 / sk).norm_sqr();
            }
            let mut deno = err + 0.01 * err2;
            if deno <= 0.0 {
                deno = 1.0;
            }
            let err = h.abs() * err * (1.0 / (deno * n as f64)).sqrt();
            if !err.is_finite() {
                if ynew.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) && h.abs() < 1e-8 * span {
                    return Err(Error::IntegratorFailure { x: self.x, reason: "solution is not finite".into() });
                }
                h *= 0.1;
                last_rejected = true;
                continue;
            }

            let fac11 = err.powf(EXPO1);
            let fac = FACC2.max(FACC1.min(fac11 / SAFE));
            let mut h_new = h / fac;
            if err <= 1.0 {
                std::mem::swap(&mut self.y, ynew);
                self.x = if last { target } else { self.x + h };
                self.steps += 1;
                if last_rejected {
                    h_new = if dir > 0.0 { h_new.min(h) } else { h_new.max(h) };
                }
                last_rejected = false;
                if last {
                    self.h = h_new.abs().max(planned.abs());
                    return Ok(());
                }
                sys.rhs(clamp(self.x), &self.y, &mut k[0]);
                h = h_new;
            } else {
                h_new = h / FACC1.min(fac11 / SAFE);
                last_rejected = true;
                h = h_new;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    x: f64,
    y: &[C64],
    f0: &[C64],
    dir: f64,
    span: f64,
    rtol: f64,
    atol: f64,
    y1: &mut [C64],
    f1: &mut [C64],
    clamp: impl Fn(f64) -> f64,
) -> f64 {
    let n = y.len();
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..n {
        let sk = atol + rtol * y[i].norm();
        dnf += (f0[i] / sk).norm_sqr();
        dny += (y[i] / sk).norm_sqr();
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
    h = h.min(span) * dir;
    for i in 0..n {
        y1[i] = y[i] + f0[i] * h;
    }
    sys.rhs(clamp(x + h), y1, f1);
    let mut der2 = 0.0;
    for i in 0..n {
        let sk = atol + rtol * y[i].norm();
        der2 += ((f1[i] - f0[i]) / sk).norm_sqr();
    }
    let der2 = der2.sqrt() / h.abs();
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 { 1e-6_f64.max(h.abs() * 1e-3) } else { (0.01 / der12).powf(1.0 / 8.0) };
    (100.0 * h.abs()).min(h1).min(span) * dir
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator {
        omega: f64,
    }

    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _x: f64, y: &[C64], dy: &mut [C64]) {
            dy[0] = y[1];
            dy[1] = -y[0] * (self.omega * self.omega);
        }
    }

    struct Growth {
        rate: C64,
    }

    impl OdeSystem for Growth {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _x: f64, y: &[C64], dy: &mut [C64]) {
            dy[0] = self.rate * y[0];
        }
    }

    #[test]
    fn harmonic_oscillator_forward_and_back() {
        let sys = Oscillator { omega: 3.0 };
        let mut it = Integrator::new(0.0, vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)], 1e-12);
        it.advance(&sys, 10.0, &[2.5, 7.0]).unwrap();
        assert!((it.y()[0].re - (30.0f64).cos()).abs() < 1e-9);
        assert!((it.y()[1].re + 3.0 * (30.0f64).sin()).abs() < 1e-9);
        it.advance(&sys, 0.0, &[]).unwrap();
        assert!((it.y()[0].re - 1.0).abs() < 1e-9);
        assert_eq!(it.x(), 0.0);
    }

    #[test]
    fn complex_exponential() {
        let rate = C64::new(-0.5, 4.0);
        let sys = Growth { rate };
        let mut it = Integrator::new(1.0, vec![C64::new(1.0, 0.0)], 1e-10);
        it.advance(&sys, -2.0, &[]).unwrap();
        let exact = (rate * -3.0).exp();
        assert!((it.y()[0] - exact).norm() < 1e-8 * exact.norm());
    }

    struct Step;

    impl OdeSystem for Step {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, x: f64, _y: &[C64], dy: &mut [C64]) {
            dy[0] = C64::new(if x <= 1.0 { 1.0 } else { 0.0 }, 0.0);
        }
    }

    #[test]
    fn one_sided_limits_at_breakpoints() {
        let mut it = Integrator::new(0.0, vec![C64::default()], 1e-10);
        it.advance(&Step, 3.0, &[1.0]).unwrap();
        assert!((it.y()[0].re - 1.0).abs() < 1e-12);
        let mut back = Integrator::new(3.0, vec![C64::default()], 1e-10);
        back.advance(&Step, 0.0, &[1.0]).unwrap();
        assert!((back.y()[0].re + 1.0).abs() < 1e-12);
    }
}

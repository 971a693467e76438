//! Adaptive Dormand–Prince 5(4) stepper with the standard 4th-order
//! continuous extension.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("step size {h:e} underflowed at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("right-hand side failed at t = {t}: {msg}")]
    Rhs { t: f64, msg: String },
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th minus 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Continuous extension.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
}

/// Interpolant over one accepted step `[t0, t0 + h]`.
#[derive(Debug, Clone, Copy)]
pub struct DenseStep<const D: usize> {
    pub t0: f64,
    pub h: f64,
    coeffs: [[f64; D]; 5],
}

impl<const D: usize> DenseStep<D> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn start(&self) -> [f64; D] {
        self.coeffs[0]
    }

    pub fn end(&self) -> [f64; D] {
        let mut y = [0.0; D];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.coeffs[0][i] + self.coeffs[1][i];
        }
        y
    }

    /// Interpolated state at `t` in `[t0, t0 + h]`.
    pub fn eval(&self, t: f64) -> [f64; D] {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.coeffs;
        let mut y = [0.0; D];
        for i in 0..D {
            y[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
        y
    }

    /// Single component of [`Self::eval`].
    pub fn eval_component(&self, t: f64, i: usize) -> f64 {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let c = &self.coeffs;
        c[0][i] + theta * (c[1][i] + theta1 * (c[2][i] + theta * (c[3][i] + theta1 * c[4][i])))
    }
}

type Attempt<const D: usize> = ([f64; D], [f64; D], f64, [[f64; D]; 5]);

/// Stateful stepper; the caller decides what to do after each accepted step.
pub struct DormandPrince<const D: usize, F>
where
    F: FnMut(f64, &[f64; D], &mut [f64; D]) -> Result<(), String>,
{
    rhs: F,
    tol: Tolerances,
    t: f64,
    y: [f64; D],
    k1: [f64; D],
    h: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl<const D: usize, F> DormandPrince<D, F>
where
    F: FnMut(f64, &[f64; D], &mut [f64; D]) -> Result<(), String>,
{
    pub fn new(mut rhs: F, t0: f64, y0: [f64; D], tol: Tolerances) -> Result<Self, StepError> {
        let mut k1 = [0.0; D];
        rhs(t0, &y0, &mut k1).map_err(|msg| StepError::Rhs { t: t0, msg })?;
        let h = initial_step(&y0, &k1, &tol);
        Ok(Self {
            rhs,
            tol,
            t: t0,
            y: y0,
            k1,
            h,
            accepted: 0,
            rejected: 0,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64; D] {
        &self.y
    }

    /// Takes one accepted step that ends no later than `t_end`.
    pub fn step(&mut self, t_end: f64) -> Result<DenseStep<D>, StepError> {
        let min_h = 16.0 * f64::EPSILON * self.t.abs().max(1.0);
        loop {
            let mut h = self.h.min(self.tol.max_step);
            let remaining = t_end - self.t;
            if h >= remaining {
                h = remaining;
            } else if h > 0.5 * remaining {
                // Avoid leaving a sliver at the end of the interval.
                h = 0.5 * remaining;
            }
            if h < min_h && remaining > min_h {
                return Err(StepError::StepUnderflow { t: self.t, h });
            }
            let (y1, k7, err, coeffs) = self.attempt(h)?;
            if err <= 1.0 {
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                let dense = DenseStep {
                    t0: self.t,
                    h,
                    coeffs,
                };
                self.t = if h == remaining { t_end } else { self.t + h };
                self.y = y1;
                self.k1 = k7;
                self.h = h * fac;
                self.accepted += 1;
                return Ok(dense);
            }
            self.rejected += 1;
            self.h = h * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
    }

    /// Returns `y(t + h)`, the last stage, the error norm and the dense coefficients.
    fn attempt(&mut self, h: f64) -> Result<Attempt<D>, StepError> {
        let t = self.t;
        let y = self.y;
        let k1 = self.k1;
        let mut k2 = [0.0; D];
        let mut k3 = [0.0; D];
        let mut k4 = [0.0; D];
        let mut k5 = [0.0; D];
        let mut k6 = [0.0; D];
        let mut k7 = [0.0; D];
        let mut yt = [0.0; D];
        let f = &mut self.rhs;
        let mut call = |tt: f64, yy: &[f64; D], out: &mut [f64; D]| {
            f(tt, yy, out).map_err(|msg| StepError::Rhs { t: tt, msg })
        };

        for i in 0..D {
            yt[i] = y[i] + h * A21 * k1[i];
        }
        call(t + C2 * h, &yt, &mut k2)?;
        for i in 0..D {
            yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        call(t + C3 * h, &yt, &mut k3)?;
        for i in 0..D {
            yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        call(t + C4 * h, &yt, &mut k4)?;
        for i in 0..D {
            yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        call(t + C5 * h, &yt, &mut k5)?;
        for i in 0..D {
            yt[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        call(t + h, &yt, &mut k6)?;
        let mut y1 = [0.0; D];
        for i in 0..D {
            y1[i] =
                y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        if y1.iter().any(|v| !v.is_finite()) {
            return Err(StepError::NonFinite { t: t + h });
        }
        call(t + h, &y1, &mut k7)?;

        let mut acc = 0.0;
        for i in 0..D {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(y1[i].abs());
            acc += (e / sc) * (e / sc);
        }
        let err = (acc / D as f64).sqrt();

        let mut coeffs = [[0.0; D]; 5];
        for i in 0..D {
            let ydiff = y1[i] - y[i];
            let bspl = h * k1[i] - ydiff;
            coeffs[0][i] = y[i];
            coeffs[1][i] = ydiff;
            coeffs[2][i] = bspl;
            coeffs[3][i] = ydiff - h * k7[i] - bspl;
            coeffs[4][i] =
                h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        Ok((y1, k7, err, coeffs))
    }
}

fn initial_step<const D: usize>(y: &[f64; D], f: &[f64; D], tol: &Tolerances) -> f64 {
    let mut dy = 0.0;
    let mut df = 0.0;
    for i in 0..D {
        let sc = tol.atol + tol.rtol * y[i].abs();
        dy += (y[i] / sc).powi(2);
        df += (f[i] / sc).powi(2);
    }
    let (dy, df) = ((dy / D as f64).sqrt(), (df / D as f64).sqrt());
    let h = if dy < 1e-5 || df < 1e-5 {
        1e-6
    } else {
        0.01 * dy / df
    };
    h.min(tol.max_step)
}

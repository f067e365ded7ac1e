//! Second-order Taylor jets: a value with its first two time derivatives.
//!
//! Used to differentiate the kinematic yaw command exactly, rather than by
//! finite differences, so that the dynamic tier sees clean `ṙ` and `r̈`.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub const fn new(v: f64, d1: f64, d2: f64) -> Jet {
        Jet { v, d1, d2 }
    }

    pub const fn constant(v: f64) -> Jet {
        Jet {
            v,
            d1: 0.0,
            d2: 0.0,
        }
    }

    /// Compose with a scalar function given f, f', f''.
    #[inline]
    fn chain(self, f: f64, fp: f64, fpp: f64) -> Jet {
        Jet {
            v: f,
            d1: fp * self.d1,
            d2: fpp * self.d1 * self.d1 + fp * self.d2,
        }
    }

    pub fn sin(self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Jet {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    /// `asin`, valid for |v| < 1.
    pub fn asin(self) -> Jet {
        let q = 1.0 - self.v * self.v;
        let fp = 1.0 / q.sqrt();
        self.chain(self.v.asin(), fp, self.v * fp / q)
    }

    pub fn sqrt(self) -> Jet {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * s * s))
    }

    pub fn tanh(self) -> Jet {
        let t = self.v.tanh();
        let sech2 = 1.0 - t * t;
        self.chain(t, sech2, -2.0 * t * sech2)
    }

    /// Absolute value; derivatives take the sign of the value (0 at 0).
    pub fn abs(self) -> Jet {
        let s = if self.v > 0.0 {
            1.0
        } else if self.v < 0.0 {
            -1.0
        } else {
            0.0
        };
        Jet::new(self.v.abs(), s * self.d1, s * self.d2)
    }

    /// Clamp to `[-limit, limit]`; derivatives vanish while clamped.
    pub fn sat(self, limit: f64) -> Jet {
        if self.v > limit {
            Jet::constant(limit)
        } else if self.v < -limit {
            Jet::constant(-limit)
        } else {
            self
        }
    }

    pub fn scale(self, k: f64) -> Jet {
        Jet::new(self.v * k, self.d1 * k, self.d2 * k)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet::new(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet::new(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet::new(-self.v, -self.d1, -self.d2)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet::new(
            self.v * o.v,
            self.d1 * o.v + self.v * o.d1,
            self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        )
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        let q = self.v / o.v;
        let d1 = (self.d1 - q * o.d1) / o.v;
        let d2 = (self.d2 - 2.0 * d1 * o.d1 - q * o.d2) / o.v;
        Jet::new(q, d1, d2)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, k: f64) -> Jet {
        self.scale(k)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(self, k: f64) -> Jet {
        Jet::new(self.v + k, self.d1, self.d2)
    }
}

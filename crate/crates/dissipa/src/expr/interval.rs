//! Closed-interval arithmetic at working precision.
//!
//! Each operation returns an interval containing the true range image of its
//! operands. Power nodes use dedicated even/odd rules and sin/cos use
//! monotonic-piece analysis, so polynomial and trigonometric Hessian entries
//! bound tightly. Rounding is not directed; conservatism comes from the
//! interval algebra itself.

use std::f64::consts::{FRAC_PI_2, PI};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "invalid interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(c: f64) -> Self {
        Interval { lo: c, hi: c }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// sup |x| over the interval.
    pub fn abs_sup(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// inf |x| over the interval (0 when the interval straddles zero).
    pub fn abs_inf(&self) -> f64 {
        if self.contains(0.0) {
            0.0
        } else {
            self.lo.abs().min(self.hi.abs())
        }
    }

    pub fn neg(self) -> Self {
        Interval { lo: -self.hi, hi: -self.lo }
    }

    pub fn add(self, o: Self) -> Self {
        Interval { lo: self.lo + o.lo, hi: self.hi + o.hi }
    }

    pub fn sub(self, o: Self) -> Self {
        self.add(o.neg())
    }

    pub fn mul(self, o: Self) -> Self {
        let c = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        let mut lo = c[0];
        let mut hi = c[0];
        for v in &c[1..] {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        Interval { lo, hi }
    }

    /// Division; the caller must ensure `o` does not contain zero.
    pub fn div(self, o: Self) -> Self {
        debug_assert!(!o.contains(0.0));
        self.mul(Interval { lo: 1.0 / o.hi, hi: 1.0 / o.lo })
    }

    pub fn powi(self, k: u32) -> Self {
        match k {
            0 => Interval::point(1.0),
            1 => self,
            k if k % 2 == 1 => Interval {
                lo: self.lo.powi(k as i32),
                hi: self.hi.powi(k as i32),
            },
            k => {
                let hi = self.abs_sup().powi(k as i32);
                let lo = self.abs_inf().powi(k as i32);
                Interval { lo, hi }
            }
        }
    }

    pub fn exp(self) -> Self {
        Interval { lo: self.lo.exp(), hi: self.hi.exp() }
    }

    pub fn tanh(self) -> Self {
        Interval { lo: self.lo.tanh(), hi: self.hi.tanh() }
    }

    pub fn sin(self) -> Self {
        if self.width() >= 2.0 * PI {
            return Interval::new(-1.0, 1.0);
        }
        let mut lo = self.lo.sin().min(self.hi.sin());
        let mut hi = self.lo.sin().max(self.hi.sin());
        // Interior critical points: sin attains +-1 at pi/2 + k*pi.
        if contains_critical(self.lo, self.hi, FRAC_PI_2) {
            hi = 1.0;
        }
        if contains_critical(self.lo, self.hi, -FRAC_PI_2) {
            lo = -1.0;
        }
        Interval { lo, hi }
    }

    pub fn cos(self) -> Self {
        if self.width() >= 2.0 * PI {
            return Interval::new(-1.0, 1.0);
        }
        let mut lo = self.lo.cos().min(self.hi.cos());
        let mut hi = self.lo.cos().max(self.hi.cos());
        if contains_critical(self.lo, self.hi, 0.0) {
            hi = 1.0;
        }
        if contains_critical(self.lo, self.hi, PI) {
            lo = -1.0;
        }
        Interval { lo, hi }
    }
}

/// Whether `[lo, hi]` contains a point `phase + 2k*pi` for some integer `k`.
fn contains_critical(lo: f64, hi: f64, phase: f64) -> bool {
    let k = ((lo - phase) / (2.0 * PI)).ceil();
    let point = phase + 2.0 * PI * k;
    point <= hi
}

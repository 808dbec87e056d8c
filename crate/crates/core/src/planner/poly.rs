/// Quintic `x(t) = Σ cᵢ tⁱ` meeting position, velocity and acceleration
/// constraints at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quintic {
    pub c: [f64; 6],
}

impl Quintic {
    pub fn new(x0: f64, v0: f64, a0: f64, x1: f64, v1: f64, a1: f64, t: f64) -> Self {
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        // Residuals after the start conditions, solved in closed form.
        let r0 = x1 - (x0 + v0 * t + 0.5 * a0 * t2);
        let r1 = v1 - (v0 + a0 * t);
        let r2 = a1 - a0;
        let c3 = (10.0 * r0 - 4.0 * r1 * t + 0.5 * r2 * t2) / t3;
        let c4 = (-15.0 * r0 + 7.0 * r1 * t - r2 * t2) / t4;
        let c5 = (6.0 * r0 - 3.0 * r1 * t + 0.5 * r2 * t2) / t5;
        Self { c: [x0, v0, 0.5 * a0, c3, c4, c5] }
    }

    pub fn eval(&self, t: f64) -> [f64; 4] {
        let c = &self.c;
        [
            c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5])))),
            c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5]))),
            2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5])),
            6.0 * c[3] + t * (24.0 * c[4] + t * 60.0 * c[5]),
        ]
    }
}

/// Quartic reaching velocity `v1` with zero acceleration at time `t`; the
/// end position is free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartic {
    pub c: [f64; 5],
}

impl Quartic {
    pub fn new(x0: f64, v0: f64, a0: f64, v1: f64, a1: f64, t: f64) -> Self {
        let (t2, t3) = (t * t, t * t * t);
        let r1 = v1 - (v0 + a0 * t);
        let r2 = a1 - a0;
        let c3 = (3.0 * r1 - r2 * t) / (3.0 * t2);
        let c4 = (-2.0 * r1 + r2 * t) / (4.0 * t3);
        Self { c: [x0, v0, 0.5 * a0, c3, c4] }
    }

    pub fn eval(&self, t: f64) -> [f64; 4] {
        let c = &self.c;
        [
            c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * c[4]))),
            c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * 4.0 * c[4])),
            2.0 * c[2] + t * (6.0 * c[3] + t * 12.0 * c[4]),
            6.0 * c[3] + t * 24.0 * c[4],
        ]
    }
}

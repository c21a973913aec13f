//! Brute-force references for the amplitude-channel Laplace step. They only
//! use the objective `(y - |z|)^2 / (2v) + |z - zbar|^2 / vbar1` over `z` in
//! the plane, never the closed forms.
#![allow(dead_code)]

use deepecpr::rng::Rng;
use num_complex::Complex64;

#[derive(Clone, Copy, Debug)]
pub struct Tuple {
    pub y: f64,
    pub zbar: Complex64,
    pub vbar1: f64,
    pub v: f64,
}

impl Tuple {
    /// y in (0, 100), |zbar| in (0.1, 100), both variances in (0.01, 100),
    /// uniform phase.
    pub fn random(rng: &mut Rng) -> Self {
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.uniform();
        let y = u(0.0, 100.0);
        let mag = u(0.1, 100.0);
        let phase = u(-std::f64::consts::PI, std::f64::consts::PI);
        let vbar1 = u(0.01, 100.0);
        let v = u(0.01, 100.0);
        Tuple {
            y,
            zbar: Complex64::from_polar(mag, phase),
            vbar1,
            v,
        }
    }

    pub fn objective(&self, p: [f64; 2]) -> f64 {
        let r = p[0].hypot(p[1]);
        let d = Complex64::new(p[0], p[1]) - self.zbar;
        (self.y - r).powi(2) / (2.0 * self.v) + d.norm_sqr() / self.vbar1
    }

    /// Gradient of the objective, valid away from the origin.
    pub fn gradient(&self, p: [f64; 2]) -> [f64; 2] {
        let r = p[0].hypot(p[1]);
        let g = (r - self.y) / (self.v * r);
        [
            g * p[0] + 2.0 * (p[0] - self.zbar.re) / self.vbar1,
            g * p[1] + 2.0 * (p[1] - self.zbar.im) / self.vbar1,
        ]
    }

    /// Central-difference Hessian of the gradient with relative step `h`.
    pub fn hessian(&self, p: [f64; 2], h: f64) -> [[f64; 2]; 2] {
        let step = h * p[0].hypot(p[1]).max(1.0);
        let mut hess = [[0.0; 2]; 2];
        for k in 0..2 {
            let (mut a, mut b) = (p, p);
            a[k] += step;
            b[k] -= step;
            let (ga, gb) = (self.gradient(a), self.gradient(b));
            for i in 0..2 {
                hess[i][k] = (ga[i] - gb[i]) / (2.0 * step);
            }
        }
        let off = 0.5 * (hess[0][1] + hess[1][0]);
        hess[0][1] = off;
        hess[1][0] = off;
        hess
    }
}

/// Minimizer by a 401x401 grid over a box holding every candidate, then
/// Newton steps with a finite-difference Hessian and backtracking.
pub fn map_oracle(t: &Tuple) -> Complex64 {
    let reach = 1.5 * t.y.max(t.zbar.norm()) + 1.0;
    let n = 401;
    let cell = 2.0 * reach / (n - 1) as f64;
    let mut best = ([0.0, 0.0], f64::INFINITY);
    for i in 0..n {
        for j in 0..n {
            let p = [-reach + i as f64 * cell, -reach + j as f64 * cell];
            let f = t.objective(p);
            if f < best.1 {
                best = (p, f);
            }
        }
    }
    let (mut p, mut f) = best;
    for _ in 0..200 {
        let g = t.gradient(p);
        let h = t.hessian(p, 1e-6);
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let mut step = if det > 0.0 && h[0][0] > 0.0 {
            [
                -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
                -(h[0][0] * g[1] - h[1][0] * g[0]) / det,
            ]
        } else {
            [-g[0] * cell, -g[1] * cell]
        };
        let mut moved = false;
        for _ in 0..60 {
            let q = [p[0] + step[0], p[1] + step[1]];
            let fq = t.objective(q);
            if fq <= f {
                moved = step[0] != 0.0 || step[1] != 0.0;
                p = q;
                f = fq;
                break;
            }
            step = [0.5 * step[0], 0.5 * step[1]];
        }
        if !moved || step[0].hypot(step[1]) <= 1e-15 * p[0].hypot(p[1]).max(1.0) {
            break;
        }
    }
    Complex64::new(p[0], p[1])
}

/// Trace of the inverse of the finite-difference Hessian at `z`.
pub fn trace_inverse_hessian(t: &Tuple, z: Complex64, h: f64) -> f64 {
    let m = t.hessian([z.re, z.im], h);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    (m[0][0] + m[1][1]) / det
}

/// The variance in its matrix-inversion-lemma form, written in terms of the
/// mode magnitude.
pub fn alternate_variance(t: &Tuple, mode_mag: f64) -> f64 {
    let (v, vb, y) = (t.v, t.vbar1, t.y);
    v * (2.0 * mode_mag / y - vb / (vb + 2.0 * v)) / ((vb + 2.0 * v) / vb * mode_mag / y - 1.0)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

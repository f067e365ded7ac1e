//! Fixed-step Runge–Kutta integration over fixed-size state arrays.

/// One classical RK4 step of `ẋ = f(t, x)`.
pub fn rk4_step<const N: usize, F>(f: &mut F, t: f64, x: &[f64; N], h: f64) -> [f64; N]
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &axpy(x, 0.5 * h, &k1));
    let k3 = f(t + 0.5 * h, &axpy(x, 0.5 * h, &k2));
    let k4 = f(t + h, &axpy(x, h, &k3));
    let mut out = *x;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Integrate over `[t, t + dt]` with `n` equal RK4 substeps.
pub fn rk4_substeps<const N: usize, F>(
    f: &mut F,
    t: f64,
    x: &[f64; N],
    dt: f64,
    n: usize,
) -> [f64; N]
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let n = n.max(1);
    let h = dt / n as f64;
    let mut y = *x;
    for i in 0..n {
        y = rk4_step(f, t + i as f64 * h, &y, h);
    }
    y
}

#[inline]
fn axpy<const N: usize>(x: &[f64; N], a: f64, d: &[f64; N]) -> [f64; N] {
    let mut out = *x;
    for i in 0..N {
        out[i] += a * d[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_fourth_order() {
        let err = |n: usize| {
            let mut f = |_t: f64, x: &[f64; 2]| [x[1], -x[0]];
            let x = rk4_substeps(&mut f, 0.0, &[1.0, 0.0], 1.0, n);
            (x[0] - 1.0f64.cos()).abs()
        };
        let ratio = err(10) / err(20);
        assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
    }

    #[test]
    fn time_dependent_rhs() {
        // ẋ = t³ is integrated exactly by RK4 (degree ≤ 3 quadrature)
        let mut f = |t: f64, _x: &[f64; 1]| [t * t * t];
        let x = rk4_step(&mut f, 1.0, &[0.0], 1.0);
        assert!((x[0] - (16.0 - 1.0) / 4.0).abs() < 1e-14);
    }
}

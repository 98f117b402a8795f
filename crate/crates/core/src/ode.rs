//! Explicit ODE integrators: adaptive Dormand-Prince 5(4) with event
//! location, and classical fixed-step RK4.

use crate::error::{IsoflowError, Result};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            initial_step: 1e-3,
            max_step: f64::MAX,
            max_steps: 200_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OdeSolution {
    pub t: f64,
    pub y: Vec<f64>,
    pub steps: usize,
    /// True when integration stopped on the event function.
    pub event: bool,
    /// Accepted states `(t, y)`, when recording was requested.
    pub trajectory: Vec<(f64, Vec<f64>)>,
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand-Prince step; returns the 5th-order state and the error norm.
fn dopri_step<F>(rhs: &F, t: f64, y: &[f64], h: f64, opts: &OdeOptions) -> (Vec<f64>, f64)
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    rhs(t, y, &mut k[0]);
    for s in 1..7 {
        for i in 0..n {
            let mut acc = y[i];
            for j in 0..s {
                acc += h * A[s][j] * k[j][i];
            }
            tmp[i] = acc;
        }
        let (head, tail) = k.split_at_mut(s);
        let _ = head;
        rhs(t + C[s] * h, &tmp, &mut tail[0]);
    }
    let mut y5 = vec![0.0; n];
    let mut err = 0.0f64;
    for i in 0..n {
        let mut s5 = 0.0;
        let mut s4 = 0.0;
        for s in 0..7 {
            s5 += B5[s] * k[s][i];
            s4 += B4[s] * k[s][i];
        }
        y5[i] = y[i] + h * s5;
        let scale = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
        err = err.max((h * (s5 - s4)).abs() / scale);
    }
    (y5, err)
}

/// Integrate `y' = rhs(t, y)` from `t0` to `t_end`, stopping early where
/// `event` changes sign from its initial value (located by bisection to
/// `1e-14` relative step width).
pub fn dopri5<F>(
    rhs: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
    event: Option<&dyn Fn(f64, &[f64]) -> f64>,
    record: bool,
) -> Result<OdeSolution>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let dir = (t_end - t0).signum();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = opts.initial_step.min((t_end - t0).abs()) * dir;
    let mut steps = 0usize;
    let mut trajectory = Vec::new();
    if record {
        trajectory.push((t, y.clone()));
    }
    let g0 = event.map(|e| e(t, &y));
    while (t_end - t) * dir > 0.0 {
        if steps >= opts.max_steps {
            return Err(IsoflowError::NumericFailure(format!(
                "integrator exceeded {} steps at t = {t}",
                opts.max_steps
            )));
        }
        if (t + h - t_end) * dir > 0.0 {
            h = t_end - t;
        }
        let (y_new, err) = dopri_step(&rhs, t, &y, h, opts);
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            h *= 0.25;
            if h.abs() < 1e-300 {
                return Err(IsoflowError::NumericFailure(format!(
                    "integration blew up near t = {t}"
                )));
            }
            continue;
        }
        if err <= 1.0 {
            steps += 1;
            if let (Some(e), Some(g0)) = (event, g0) {
                let g1 = e(t + h, &y_new);
                if g1 == 0.0 || g1.signum() != g0.signum() && g0 != 0.0 {
                    let (te, ye) = locate_event(&rhs, e, g0, t, &y, h, opts);
                    if record {
                        trajectory.push((te, ye.clone()));
                    }
                    return Ok(OdeSolution { t: te, y: ye, steps, event: true, trajectory });
                }
            }
            t += h;
            y = y_new;
            if record {
                trajectory.push((t, y.clone()));
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * factor).abs().min(opts.max_step) * dir;
    }
    Ok(OdeSolution { t, y, steps, event: false, trajectory })
}

fn locate_event<F>(
    rhs: &F,
    e: &dyn Fn(f64, &[f64]) -> f64,
    g0: f64,
    t: f64,
    y: &[f64],
    h: f64,
    opts: &OdeOptions,
) -> (f64, Vec<f64>)
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = dopri_step(rhs, t, y, h, opts).0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (ym, _) = dopri_step(rhs, t, y, mid * h, opts);
        let gm = e(t + mid * h, &ym);
        if gm.signum() == g0.signum() && gm != 0.0 {
            lo = mid;
        } else {
            hi = mid;
            best = ym;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    (t + hi * h, best)
}

/// Classical RK4 with `steps` equal steps.
pub fn rk4_fixed<F>(rhs: F, t0: f64, y0: &[f64], t1: f64, steps: usize) -> Vec<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        rhs(t, &y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(t + h, &tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

//! Adaptive Dormand–Prince 5(4) integrator for complex state vectors, with
//! the 4th-order continuous extension for dense output.

use crate::opalg::C64;

use super::IntegratorConfig;

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

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Outcome {
    Completed,
    Diverged(f64),
    Failed(f64, String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub rhs_evals: usize,
    pub accepted: usize,
    pub rejected: usize,
}

fn axpy(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for i in 0..out.len() {
        let mut acc = C64::default();
        for (a, k) in terms {
            acc += k[i] * *a;
        }
        out[i] = y[i] + acc * h;
    }
}

fn rms_norm(v: &[C64], scale: impl Fn(usize) -> f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let s: f64 = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let sk = scale(i);
            (x.re / sk).powi(2) + (x.im / sk).powi(2)
        })
        .sum();
    (s / (2 * v.len()) as f64).sqrt()
}

/// Integrates `dy/dt = f(t, y)` over `times` (monotone, physical time),
/// calling `emit(index, y)` at each output time. The integration restarts
/// at every breakpoint strictly inside the time span. `check(t, y)` runs
/// after every accepted step and may stop the run with a failure message.
pub(crate) fn integrate<F, E, K>(
    mut f: F,
    y0: &[C64],
    times: &[f64],
    breakpoints: &[f64],
    cfg: &IntegratorConfig,
    mut emit: E,
    mut check: K,
) -> (Outcome, StepStats)
where
    F: FnMut(f64, &[C64], &mut [C64]),
    E: FnMut(usize, &[C64]),
    K: FnMut(f64, &[C64]) -> Result<(), String>,
{
    let mut stats = StepStats::default();
    if times.is_empty() {
        return (Outcome::Completed, stats);
    }
    let n = y0.len();
    let t_start = times[0];
    let t_end = *times.last().unwrap();
    let mut y = y0.to_vec();
    emit(0, &y);
    let mut next_out = 1;
    if let Err(msg) = check(t_start, &y) {
        return (Outcome::Failed(t_start, msg), stats);
    }

    let mut stops: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > t_start && b < t_end).collect();
    stops.push(t_end);

    let mut k: Vec<Vec<C64>> = vec![vec![C64::default(); n]; 7];
    let mut ytmp = vec![C64::default(); n];
    let mut ynew = vec![C64::default(); n];
    let mut err = vec![C64::default(); n];
    let mut t = t_start;
    let mut h_prev: Option<f64> = None;

    for &seg_end in &stops {
        if seg_end <= t {
            continue;
        }
        f(t, &y, &mut k[0]);
        stats.rhs_evals += 1;
        let span = seg_end - t;
        let mut h = match h_prev {
            Some(h) => h.min(span),
            None => initial_step(&mut f, t, &y, &k[0], span, cfg, &mut stats),
        };
        let mut facold: f64 = 1e-4;
        let mut last_rejected = false;
        while t < seg_end {
            if cfg.max_steps > 0 && stats.accepted + stats.rejected >= cfg.max_steps {
                return (Outcome::Failed(t, format!("step limit {} reached", cfg.max_steps)), stats);
            }
            h = h.min(cfg.max_step);
            let h_min = 1e-14 * t.abs().max(1.0);
            if h < h_min {
                return (Outcome::Diverged(t), stats);
            }
            let last = t + h >= seg_end - 1e-12 * seg_end.abs().max(1.0);
            if last {
                h = seg_end - t;
            }

            let (k1, rest) = k.split_first_mut().unwrap();
            let (k2, rest) = rest.split_first_mut().unwrap();
            let (k3, rest) = rest.split_first_mut().unwrap();
            let (k4, rest) = rest.split_first_mut().unwrap();
            let (k5, rest) = rest.split_first_mut().unwrap();
            let (k6, rest) = rest.split_first_mut().unwrap();
            let k7 = &mut rest[0];

            axpy(&mut ytmp, &y, h, &[(A21, k1)]);
            f(t + C2 * h, &ytmp, k2);
            axpy(&mut ytmp, &y, h, &[(A31, k1), (A32, k2)]);
            f(t + C3 * h, &ytmp, k3);
            axpy(&mut ytmp, &y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
            f(t + C4 * h, &ytmp, k4);
            axpy(&mut ytmp, &y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
            f(t + C5 * h, &ytmp, k5);
            axpy(&mut ytmp, &y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
            let t_new = if last { seg_end } else { t + h };
            // stages at the segment end see the left limit of the forcing
            let t_stage = if last { seg_end.next_down() } else { t_new };
            f(t_stage, &ytmp, k6);
            axpy(&mut ynew, &y, h, &[(A71, k1), (A73, k3), (A74, k4), (A75, k5), (A76, k6)]);
            f(t_stage, &ynew, k7);
            stats.rhs_evals += 6;

            for i in 0..n {
                err[i] = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            }
            let e = rms_norm(&err, |i| cfg.abs_tol + cfg.rel_tol * y[i].norm().max(ynew[i].norm()));
            let fac11 = e.powf(EXPO);

            if e.is_finite() && e <= 1.0 {
                stats.accepted += 1;
                while next_out < times.len() && times[next_out] <= t_new {
                    let theta = (times[next_out] - t) / h;
                    if theta >= 1.0 {
                        emit(next_out, &ynew);
                    } else {
                        let theta1 = 1.0 - theta;
                        for i in 0..n {
                            let r2 = ynew[i] - y[i];
                            let r3 = k1[i] * h - r2;
                            let r4 = r2 - k7[i] * h - r3;
                            let r5 = (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * h;
                            ytmp[i] = y[i] + (r2 + (r3 + (r4 + r5 * theta1) * theta) * theta1) * theta;
                        }
                        emit(next_out, &ytmp);
                    }
                    next_out += 1;
                }
                std::mem::swap(&mut y, &mut ynew);
                std::mem::swap(k1, k7);
                t = t_new;

                if let Some(bad) = y.iter().find(|v| !v.re.is_finite() || !v.im.is_finite() || v.norm() > cfg.divergence_bound) {
                    log::debug!("divergence at t={t}: |y|={}", bad.norm());
                    return (Outcome::Diverged(t), stats);
                }
                if let Err(msg) = check(t, &y) {
                    return (Outcome::Failed(t, msg), stats);
                }

                let fac = (fac11 / facold.powf(BETA)) / SAFETY;
                let fac = fac.clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = h / fac;
                if last_rejected {
                    h_new = h_new.min(h);
                }
                facold = e.max(1e-4);
                last_rejected = false;
                h_prev = Some(h_new);
                h = h_new;
            } else {
                stats.rejected += 1;
                let shrink = if e.is_finite() { (fac11 / SAFETY).min(1.0 / FAC_MIN) } else { 1.0 / FAC_MIN };
                h /= shrink.max(1.0);
                last_rejected = true;
            }
        }
    }
    (Outcome::Completed, stats)
}

fn initial_step<F>(f: &mut F, t: f64, y: &[C64], f0: &[C64], span: f64, cfg: &IntegratorConfig, stats: &mut StepStats) -> f64
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    let scale = |i: usize| cfg.abs_tol + cfg.rel_tol * y[i].norm();
    let d0 = rms_norm(y, scale);
    let d1 = rms_norm(f0, scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span).min(cfg.max_step);
    let y1: Vec<C64> = y.iter().zip(f0).map(|(a, b)| a + b * h0).collect();
    let mut f1 = vec![C64::default(); y.len()];
    f(t + h0, &y1, &mut f1);
    stats.rhs_evals += 1;
    let diff: Vec<C64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms_norm(&diff, scale) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1).min(span).min(cfg.max_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> IntegratorConfig {
        IntegratorConfig { rel_tol: 1e-10, abs_tol: 1e-12, ..IntegratorConfig::default() }
    }

    #[test]
    fn exponential_decay_dense_output() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let mut out = vec![C64::default(); times.len()];
        let (outcome, stats) = integrate(
            |_, y, dy| dy[0] = -y[0],
            &[C64::new(1.0, 0.0)],
            &times,
            &[],
            &cfg(),
            |i, y| out[i] = y[0],
            |_, _| Ok(()),
        );
        assert_eq!(outcome, Outcome::Completed);
        assert!(stats.accepted > 0);
        for (t, y) in times.iter().zip(&out) {
            assert!((y.re - (-t).exp()).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn rotation_preserves_modulus() {
        let times: Vec<f64> = (0..=50).map(|i| i as f64 * 0.2).collect();
        let mut out = vec![C64::default(); times.len()];
        let (outcome, _) = integrate(
            |_, y, dy| dy[0] = C64::new(0.0, -3.0) * y[0],
            &[C64::new(1.0, 0.0)],
            &times,
            &[],
            &cfg(),
            |i, y| out[i] = y[0],
            |_, _| Ok(()),
        );
        assert_eq!(outcome, Outcome::Completed);
        for (t, y) in times.iter().zip(&out) {
            let exact = C64::new(0.0, -3.0 * t).exp();
            assert!((y - exact).norm() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn breakpoint_handles_discontinuous_forcing() {
        // dy/dt = 1 for t < 1, 0 afterwards
        let times = vec![0.0, 0.5, 1.0, 1.5, 2.0];
        let mut out = vec![C64::default(); times.len()];
        let (outcome, _) = integrate(
            |t, _, dy| dy[0] = C64::new(if t < 1.0 { 1.0 } else { 0.0 }, 0.0),
            &[C64::default()],
            &times,
            &[1.0],
            &cfg(),
            |i, y| out[i] = y[0],
            |_, _| Ok(()),
        );
        assert_eq!(outcome, Outcome::Completed);
        let expected = [0.0, 0.5, 1.0, 1.0, 1.0];
        for (y, e) in out.iter().zip(expected) {
            assert!((y.re - e).abs() < 1e-12, "{y} vs {e}");
        }
    }

    #[test]
    fn blow_up_is_reported_as_divergence() {
        // y' = y², y(0) = 1 blows up at t = 1
        let times = vec![0.0, 0.5, 2.0];
        let (outcome, _) = integrate(
            |_, y, dy| dy[0] = y[0] * y[0],
            &[C64::new(1.0, 0.0)],
            &times,
            &[],
            &IntegratorConfig::default(),
            |_, _| {},
            |_, _| Ok(()),
        );
        match outcome {
            Outcome::Diverged(t) => assert!(t < 1.0 + 1e-6 && t > 0.9, "t={t}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn check_callback_stops_run() {
        let times = vec![0.0, 1.0, 2.0];
        let (outcome, _) = integrate(
            |_, _, dy| dy[0] = C64::new(1.0, 0.0),
            &[C64::default()],
            &times,
            &[],
            &IntegratorConfig::default(),
            |_, _| {},
            |_, y| if y[0].re > 1.5 { Err("too big".into()) } else { Ok(()) },
        );
        assert!(matches!(outcome, Outcome::Failed(_, ref m) if m == "too big"));
    }
}

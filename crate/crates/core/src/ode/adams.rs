//! Variable-step Adams–Bashforth–Moulton in PECE mode.
//!
//! Integration weights are rebuilt every step from the actual (irregular)
//! history nodes by Gauss–Legendre quadrature of the Lagrange basis, so step
//! changes need no Nordsieck rescaling. The method is self-starting: the
//! order ramps from 1 up to `max_order` as history accumulates. The
//! difference between the order-`k` predictor and the order-`k+1` corrector
//! drives step-size control; the corrector value is kept.

use std::collections::VecDeque;

use super::{gauss_legendre_unit, hairer_initial_step, weighted_rms, IntegratorOptions, IntegratorStats, OdeError, OdeScalar, OdeSystem};

/// `∫₀¹ L_j(s) ds` for the Lagrange basis on `nodes`.
fn lagrange_integrals(nodes: &[f64], gx: &[f64], gw: &[f64]) -> Vec<f64> {
    let k = nodes.len();
    let mut out = vec![0.0; k];
    for (j, o) in out.iter_mut().enumerate() {
        let mut denom = 1.0;
        for (i, &si) in nodes.iter().enumerate() {
            if i != j {
                denom *= nodes[j] - si;
            }
        }
        let mut acc = 0.0;
        for (&x, &w) in gx.iter().zip(gw) {
            let mut num = 1.0;
            for (i, &si) in nodes.iter().enumerate() {
                if i != j {
                    num *= x - si;
                }
            }
            acc += w * num;
        }
        *o = acc / denom;
    }
    out
}

pub fn integrate<T: OdeScalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    t0: f64,
    t1: f64,
    y: &mut [T],
    opts: &IntegratorOptions,
) -> Result<IntegratorStats, OdeError> {
    let n = y.len();
    let mut stats = IntegratorStats::default();
    if t1 == t0 {
        return Ok(stats);
    }
    let dir = (t1 - t0).signum();
    let max_step = opts.max_step.min((t1 - t0).abs());
    let max_order = opts.max_order.clamp(1, 16);
    let (gx, gw) = gauss_legendre_unit(max_order + 2);

    let mut times: VecDeque<f64> = VecDeque::with_capacity(max_order);
    let mut derivs: VecDeque<Vec<T>> = VecDeque::with_capacity(max_order);
    let mut f0 = vec![T::default(); n];
    sys.rhs(t0, y, &mut f0);
    stats.rhs_evals += 1;

    let mut h = match opts.initial_step {
        Some(h0) => h0,
        None => 0.1 * hairer_initial_step(sys, t0, y, &f0, dir, 2, opts, &mut stats),
    }
    .min(max_step)
        * dir;
    times.push_front(t0);
    derivs.push_front(f0);

    let mut y_pred = vec![T::default(); n];
    let mut f_pred = vec![T::default(); n];
    let mut y_corr = vec![T::default(); n];
    let mut diff = vec![T::default(); n];
    let mut t = t0;
    let mut order = 1usize;
    let mut failures = 0usize;

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(OdeError::MaxSteps { t, steps: opts.max_steps });
        }
        if h.abs() <= f64::EPSILON * t.abs().max(1.0) * 10.0 {
            return Err(OdeError::StepUnderflow { t, h: h.abs() });
        }
        let last = (t + h - t1) * dir >= 0.0;
        if last {
            h = t1 - t;
        }

        let k = order.min(times.len());
        let nodes: Vec<f64> = times.iter().take(k).map(|&tj| (tj - t) / h).collect();
        let beta = lagrange_integrals(&nodes, &gx, &gw);
        for i in 0..n {
            let mut acc = T::default();
            for (b, f) in beta.iter().zip(&derivs) {
                acc = acc + f[i] * *b;
            }
            y_pred[i] = y[i] + acc * h;
        }
        sys.rhs(t + h, &y_pred, &mut f_pred);
        stats.rhs_evals += 1;

        let mut cnodes = Vec::with_capacity(k + 1);
        cnodes.push(1.0);
        cnodes.extend_from_slice(&nodes);
        let gamma = lagrange_integrals(&cnodes, &gx, &gw);
        for i in 0..n {
            let mut acc = f_pred[i] * gamma[0];
            for (g, f) in gamma[1..].iter().zip(&derivs) {
                acc = acc + f[i] * *g;
            }
            y_corr[i] = y[i] + acc * h;
            diff[i] = y_corr[i] - y_pred[i];
        }
        let err = weighted_rms(&diff, y, &y_corr, opts);
        if !err.is_finite() {
            return Err(OdeError::NonFinite { t });
        }

        let expo = 1.0 / (k as f64 + 1.0);
        if err <= 1.0 {
            stats.accepted += 1;
            failures = 0;
            t += h;
            y.copy_from_slice(&y_corr);
            if last {
                break;
            }
            let mut fnew = if derivs.len() == max_order { derivs.pop_back().unwrap() } else { vec![T::default(); n] };
            if times.len() == max_order {
                times.pop_back();
            }
            sys.rhs(t, y, &mut fnew);
            stats.rhs_evals += 1;
            times.push_front(t);
            derivs.push_front(fnew);
            order = (k + 1).min(max_order);
            let ratio = if err == 0.0 { 2.0 } else { (0.9 * err.powf(-expo)).clamp(0.5, 2.0) };
            h = dir * (h.abs() * ratio).min(max_step);
        } else {
            stats.rejected += 1;
            failures += 1;
            if failures >= 3 && order > 1 {
                order = (order / 2).max(1);
            }
            let ratio = (0.9 * err.powf(-expo)).clamp(0.2, 0.9);
            h *= ratio;
        }
    }
    stats.final_time = t;
    Ok(stats)
}

//! Adaptive embedded Runge-Kutta 5(4) integration with event root-finding.
//!
//! The hybrid gait engine integrates each phase until the first qualifying
//! guard crossing. Crossings are detected by scanning guard signs at
//! sub-step checkpoints of every accepted step (Hermite interpolation) and
//! then refined with an Illinois search that re-integrates a single exact
//! Runge-Kutta step of the trial size, so the located event time is accurate
//! to the integration tolerance rather than to the interpolant.

use thiserror::Error;

use crate::model::{BodyState, ModelParams};

/// Phase-transition guard identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Touchdown,
    TakeoffForce,
    TakeoffLength,
    Apex,
    Fall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventDirection {
    Rising,
    Falling,
    Any,
}

/// A guard function with crossing direction. The guard must be continuous
/// along trajectories within a phase.
pub struct EventSpec<'a, const D: usize> {
    pub kind: EventKind,
    pub direction: EventDirection,
    pub guard: &'a dyn Fn(f64, &[f64; D]) -> f64,
}

/// Integration limits and output control.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    /// Maximum phase duration from the segment start [s].
    pub max_time: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    /// Fixed-rate dense output; `None` disables sampling (used during
    /// convergence transients where only event data is needed).
    pub sample_rate: Option<f64>,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_time: 5.0,
            abs_tol: 1e-9,
            rel_tol: 1e-9,
            max_step: 0.05,
            sample_rate: Some(1000.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalEvent<const D: usize> {
    pub kind: EventKind,
    /// Index into the `events` slice passed to the integrator.
    pub event_index: usize,
    pub time: f64,
    pub state: [f64; D],
    /// Guard value at the located event state; should be ~0.
    pub guard_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationResult<const D: usize> {
    /// Dense samples including the segment start and the exact terminal
    /// point. Empty when sampling is disabled.
    pub samples: Vec<(f64, [f64; D])>,
    pub terminal: TerminalEvent<D>,
    pub steps: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError<E> {
    #[error(transparent)]
    Rhs(E),
    #[error("no armed event fired within {max_time} s (reached t = {time})")]
    NoEvent { time: f64, max_time: f64 },
    #[error("step size underflow at t = {time} (h = {step:.3e}); dynamics too stiff")]
    StepSizeUnderflow { time: f64, step: f64 },
    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights equal A[6]; embedded fourth-order weights below.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 5.0;
/// Event time located to within this tolerance [s].
const EVENT_TIME_TOL: f64 = 1e-12;
/// Events closer than this count as simultaneous and are resolved by the
/// kind priority (take-off by rest length beats take-off by force zero).
const EVENT_TIE_TOL: f64 = 1e-10;
/// Sub-step checkpoints scanned for guard sign changes.
const CHECKPOINTS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

fn axpy<const D: usize>(y: &mut [f64; D], a: f64, x: &[f64; D]) {
    for i in 0..D {
        y[i] += a * x[i];
    }
}

/// One explicit Dormand-Prince step of size `h` from `(t, y)` with `k1`
/// already evaluated. Returns `(y_next, k_next, err_estimate)`.
#[allow(clippy::type_complexity)]
fn dp_step<const D: usize, E>(
    rhs: &mut impl FnMut(f64, &[f64; D]) -> Result<[f64; D], E>,
    t: f64,
    y: &[f64; D],
    k1: &[f64; D],
    h: f64,
    evals: &mut usize,
) -> Result<([f64; D], [f64; D], [f64; D]), E> {
    let mut k = [[0.0; D]; 7];
    k[0] = *k1;
    for s in 1..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                axpy(&mut ys, a * h, kj);
            }
        }
        k[s] = rhs(t + C[s] * h, &ys)?;
        *evals += 1;
    }
    // Stage 7 already lands on the fifth-order solution (FSAL).
    let mut y5 = *y;
    for (j, kj) in k.iter().enumerate().take(6) {
        let a = A[6][j];
        if a != 0.0 {
            axpy(&mut y5, a * h, kj);
        }
    }
    let mut err = [0.0; D];
    for i in 0..D {
        let mut e4 = 0.0;
        for (j, kj) in k.iter().enumerate().take(6) {
            e4 += (A[6][j] - B4[j]) * kj[i];
        }
        e4 -= B4[6] * k[6][i];
        err[i] = h * e4;
    }
    Ok((y5, k[6], err))
}

/// Cubic Hermite interpolation over one accepted step.
fn hermite<const D: usize>(
    theta: f64,
    h: f64,
    y0: &[f64; D],
    f0: &[f64; D],
    y1: &[f64; D],
    f1: &[f64; D],
) -> [f64; D] {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let mut out = [0.0; D];
    for i in 0..D {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
    out
}

fn crossing_qualifies(dir: EventDirection, g_prev: f64, g_next: f64) -> bool {
    // A guard sitting exactly at zero at the interval start (e.g. both
    // take-off guards at the touchdown instant) is not a crossing.
    match dir {
        EventDirection::Rising => g_prev < 0.0 && g_next >= 0.0,
        EventDirection::Falling => g_prev > 0.0 && g_next <= 0.0,
        EventDirection::Any => {
            (g_prev < 0.0 && g_next >= 0.0) || (g_prev > 0.0 && g_next <= 0.0)
        }
    }
}

/// Direction check for a guard leaving an exact zero.
fn leaves_zero(dir: EventDirection, g_after: f64) -> bool {
    match dir {
        EventDirection::Rising => g_after > 0.0,
        EventDirection::Falling => g_after < 0.0,
        EventDirection::Any => g_after != 0.0,
    }
}

/// Tie-break priority when two events are located at the same instant.
fn priority(kind: EventKind) -> u8 {
    match kind {
        EventKind::TakeoffLength => 3,
        EventKind::TakeoffForce => 2,
        EventKind::Fall => 1,
        _ => 0,
    }
}

struct PendingEvent<const D: usize> {
    event_index: usize,
    time: f64,
    state: [f64; D],
    guard_value: f64,
}

/// Integrate `rhs` from `(t0, y0)` until the first qualifying event crossing.
///
/// Deterministic: the same inputs always produce bit-identical trajectories.
pub fn integrate_until_event<const D: usize, E>(
    mut rhs: impl FnMut(f64, &[f64; D]) -> Result<[f64; D], E>,
    t0: f64,
    y0: [f64; D],
    events: &[EventSpec<'_, D>],
    limits: &Limits,
) -> Result<IntegrationResult<D>, IntegrationError<E>> {
    assert!(!events.is_empty(), "at least one event must be armed");
    let t_end = t0 + limits.max_time;
    let sample_dt = limits.sample_rate.map(|hz| 1.0 / hz);

    let mut t = t0;
    let mut y = y0;
    let mut f = rhs(t, &y).map_err(IntegrationError::Rhs)?;
    let mut evals = 1usize;
    let mut steps = 0usize;

    let mut samples: Vec<(f64, [f64; D])> = Vec::new();
    if sample_dt.is_some() {
        samples.push((t, y));
    }
    let mut next_sample_idx: u64 = 1;

    let mut h = (limits.max_step.min(1e-3)).min(limits.max_time / 4.0);

    loop {
        if t >= t_end {
            return Err(IntegrationError::NoEvent {
                time: t,
                max_time: limits.max_time,
            });
        }
        h = h.min(limits.max_step).min(t_end - t);
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(IntegrationError::StepSizeUnderflow { time: t, step: h });
        }

        let (y1, f1, err) =
            dp_step(&mut rhs, t, &y, &f, h, &mut evals).map_err(IntegrationError::Rhs)?;
        steps += 1;

        let mut err_norm = 0.0f64;
        let mut finite = true;
        for i in 0..D {
            finite &= y1[i].is_finite();
            let sc = limits.abs_tol + limits.rel_tol * y[i].abs().max(y1[i].abs());
            let e = err[i] / sc;
            err_norm += e * e;
        }
        err_norm = (err_norm / D as f64).sqrt();
        if !finite || !err_norm.is_finite() {
            return Err(IntegrationError::NonFinite { time: t + h });
        }

        if err_norm > 1.0 {
            // Rejected; shrink and retry from the same point.
            let scale = (SAFETY * err_norm.powf(-0.2)).max(MIN_SCALE);
            h *= scale;
            continue;
        }

        // Accepted step: scan guards for qualifying crossings at the
        // sub-step checkpoints. Roots live inside their checkpoint pair, so
        // once a pair produced an event later pairs cannot beat it.
        let mut g_prev: Vec<f64> = events.iter().map(|e| (e.guard)(t, &y)).collect();
        let mut theta_prev = 0.0;
        let mut pending: Option<PendingEvent<D>> = None;

        for &theta in CHECKPOINTS.iter() {
            let tc = if theta == 1.0 { t + h } else { t + theta * h };
            let yc = if theta == 1.0 {
                y1
            } else {
                hermite(theta, h, &y, &f, &y1, &f1)
            };
            for (idx, ev) in events.iter().enumerate() {
                let g = (ev.guard)(tc, &yc);
                if crossing_qualifies(ev.direction, g_prev[idx], g) {
                    let found = refine_event(
                        &mut rhs,
                        t,
                        &y,
                        &f,
                        theta_prev * h,
                        theta * h,
                        h,
                        ev,
                        idx,
                        &mut evals,
                    )
                    .map_err(IntegrationError::Rhs)?;
                    if let Some(found) = found {
                        let replace = match &pending {
                            None => true,
                            Some(best) => {
                                found.time < best.time - EVENT_TIE_TOL
                                    || ((found.time - best.time).abs() <= EVENT_TIE_TOL
                                        && priority(events[found.event_index].kind)
                                            > priority(events[best.event_index].kind))
                            }
                        };
                        if replace {
                            pending = Some(found);
                        }
                    }
                }
                g_prev[idx] = g;
            }
            theta_prev = theta;
            if pending.is_some() {
                break;
            }
        }

        if let Some(ev) = pending {
            if let Some(dt) = sample_dt {
                emit_samples(
                    &mut samples,
                    t0,
                    dt,
                    &mut next_sample_idx,
                    t,
                    h,
                    &y,
                    &f,
                    &y1,
                    &f1,
                    ev.time,
                );
                push_terminal_sample(&mut samples, ev.time, ev.state);
            }
            return Ok(IntegrationResult {
                samples,
                terminal: TerminalEvent {
                    kind: events[ev.event_index].kind,
                    event_index: ev.event_index,
                    time: ev.time,
                    state: ev.state,
                    guard_value: ev.guard_value,
                },
                steps,
                rhs_evals: evals,
            });
        }

        if let Some(dt) = sample_dt {
            emit_samples(
                &mut samples,
                t0,
                dt,
                &mut next_sample_idx,
                t,
                h,
                &y,
                &f,
                &y1,
                &f1,
                f64::INFINITY,
            );
        }

        t += h;
        y = y1;
        f = f1;
        let scale = (SAFETY * err_norm.max(1e-10).powf(-0.2)).clamp(MIN_SCALE, MAX_SCALE);
        h *= scale;
    }
}

/// Emit fixed-rate samples for the accepted step `[t, t+h]`, strictly below
/// `cutoff`.
#[allow(clippy::too_many_arguments)]
fn emit_samples<const D: usize>(
    samples: &mut Vec<(f64, [f64; D])>,
    t_origin: f64,
    dt: f64,
    next_idx: &mut u64,
    t: f64,
    h: f64,
    y0: &[f64; D],
    f0: &[f64; D],
    y1: &[f64; D],
    f1: &[f64; D],
    cutoff: f64,
) {
    loop {
        let ts = t_origin + (*next_idx as f64) * dt;
        if ts > t + h || ts >= cutoff {
            break;
        }
        if ts > t {
            let theta = (ts - t) / h;
            let yc = if theta >= 1.0 {
                *y1
            } else {
                hermite(theta, h, y0, f0, y1, f1)
            };
            samples.push((ts, yc));
        }
        *next_idx += 1;
    }
}

fn push_terminal_sample<const D: usize>(
    samples: &mut Vec<(f64, [f64; D])>,
    time: f64,
    state: [f64; D],
) {
    if let Some(last) = samples.last() {
        if time - last.0 < 1e-12 {
            samples.pop();
        }
    }
    samples.push((time, state));
}

/// Evaluate the guard on the true solution at offset `h` from the step start
/// by taking one exact Runge-Kutta step of that size.
fn guard_at<const D: usize, E>(
    rhs: &mut impl FnMut(f64, &[f64; D]) -> Result<[f64; D], E>,
    t: f64,
    y: &[f64; D],
    f: &[f64; D],
    h: f64,
    guard: &dyn Fn(f64, &[f64; D]) -> f64,
    evals: &mut usize,
) -> Result<([f64; D], f64), E> {
    if h <= 0.0 {
        return Ok((*y, guard(t, y)));
    }
    let (ys, _, _) = dp_step(rhs, t, y, f, h, evals)?;
    Ok((ys, guard(t + h, &ys)))
}

/// Locate the guard root inside `[ha, hb]` (offsets from the step start)
/// with the Illinois method on the true solution.
#[allow(clippy::too_many_arguments)]
fn refine_event<const D: usize, E>(
    rhs: &mut impl FnMut(f64, &[f64; D]) -> Result<[f64; D], E>,
    t: f64,
    y: &[f64; D],
    f: &[f64; D],
    ha: f64,
    hb: f64,
    h_full: f64,
    ev: &EventSpec<'_, D>,
    event_index: usize,
    evals: &mut usize,
) -> Result<Option<PendingEvent<D>>, E> {
    let (mut ya, mut ga) = guard_at(rhs, t, y, f, ha, ev.guard, evals)?;
    let (mut yb, mut gb) = guard_at(rhs, t, y, f, hb, ev.guard, evals)?;
    let (mut a, mut b) = (ha, hb);

    if !crossing_qualifies(ev.direction, ga, gb) {
        // The sub-interval hints came from the interpolant; a root lying
        // within interpolation error of a checkpoint can flip the detected
        // signs on the true solution. Pad the bracket and retry.
        let pad = 0.05 * (hb - ha);
        let a2 = (ha - pad).max(0.0);
        let b2 = (hb + pad).min(h_full);
        let (ya2, ga2) = guard_at(rhs, t, y, f, a2, ev.guard, evals)?;
        let (yb2, gb2) = guard_at(rhs, t, y, f, b2, ev.guard, evals)?;
        if ga == 0.0 && ha > 0.0 && leaves_zero(ev.direction, gb) {
            // Root exactly at the left endpoint.
            return Ok(Some(PendingEvent {
                event_index,
                time: t + ha,
                state: ya,
                guard_value: ga,
            }));
        }
        if gb == 0.0 {
            return Ok(Some(PendingEvent {
                event_index,
                time: t + hb,
                state: yb,
                guard_value: gb,
            }));
        }
        if crossing_qualifies(ev.direction, ga2, gb2) {
            a = a2;
            ga = ga2;
            ya = ya2;
            b = b2;
            gb = gb2;
            yb = yb2;
        } else {
            return Ok(None);
        }
    }

    if gb == 0.0 {
        return Ok(Some(PendingEvent {
            event_index,
            time: t + b,
            state: yb,
            guard_value: gb,
        }));
    }

    // Illinois iteration; ga and gb now have strictly opposite signs.
    // Weighted values drive the secant; true values decide the result.
    let mut wa = ga;
    let mut wb = gb;
    let mut side: i8 = 0;
    for _ in 0..100 {
        if (b - a).abs() <= EVENT_TIME_TOL {
            break;
        }
        let mut x = b - wb * (b - a) / (wb - wa);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if !(x > lo && x < hi) {
            x = 0.5 * (a + b);
        }
        let (yx, gx) = guard_at(rhs, t, y, f, x, ev.guard, evals)?;
        if gx == 0.0 {
            return Ok(Some(PendingEvent {
                event_index,
                time: t + x,
                state: yx,
                guard_value: gx,
            }));
        }
        if (gx > 0.0) == (gb > 0.0) {
            b = x;
            gb = gx;
            yb = yx;
            wb = gx;
            if side == 1 {
                wa *= 0.5;
            }
            side = 1;
        } else {
            a = x;
            ga = gx;
            ya = yx;
            wa = gx;
            if side == -1 {
                wb *= 0.5;
            }
            side = -1;
        }
    }
    let (time, state, guard_value) = if ga.abs() <= gb.abs() {
        (t + a, ya, ga)
    } else {
        (t + b, yb, gb)
    };
    Ok(Some(PendingEvent {
        event_index,
        time,
        state,
        guard_value,
    }))
}

/// Height of the would-be foot during flight: the hip minus the rest leg
/// extended along the commanded touchdown direction. Crosses zero (falling)
/// exactly at the touchdown contact condition.
pub fn foot_height_guard(params: &ModelParams, state: &BodyState, td_angle: f64) -> f64 {
    state.hip_position(params).y - params.leg_rest_length * td_angle.sin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    type NoErr = std::convert::Infallible;

    fn ballistic(_t: f64, y: &[f64; 4]) -> Result<[f64; 4], NoErr> {
        // [x, y, vx, vy]
        Ok([y[2], y[3], 0.0, -9.81])
    }

    #[test]
    fn touchdown_time_matches_closed_form() {
        let y0 = [0.0, 1.2, 5.0, 0.0];
        let target = 1.032; // drop height to guard zero
        let guard = move |_t: f64, y: &[f64; 4]| y[1] - target;
        let events = [EventSpec {
            kind: EventKind::Touchdown,
            direction: EventDirection::Falling,
            guard: &guard,
        }];
        let res = integrate_until_event(ballistic, 0.0, y0, &events, &Limits::default()).unwrap();
        let expected = (2.0 * (1.2 - target) / 9.81).sqrt();
        assert_abs_diff_eq!(res.terminal.time, expected, epsilon = 1e-9);
        assert!(res.terminal.guard_value.abs() < 1e-9);
    }

    #[test]
    fn apex_event_zeroes_vertical_velocity() {
        let y0 = [0.0, 1.0, 5.0, 2.0];
        let guard = |_t: f64, y: &[f64; 4]| y[3];
        let events = [EventSpec {
            kind: EventKind::Apex,
            direction: EventDirection::Falling,
            guard: &guard,
        }];
        let res = integrate_until_event(ballistic, 0.0, y0, &events, &Limits::default()).unwrap();
        assert_abs_diff_eq!(res.terminal.time, 2.0 / 9.81, epsilon = 1e-10);
        assert!(res.terminal.state[3].abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_stays_accurate() {
        let rhs = |_t: f64, y: &[f64; 2]| -> Result<[f64; 2], NoErr> { Ok([y[1], -y[0]]) };
        let period = 2.0 * std::f64::consts::PI;
        let guard = move |t: f64, _y: &[f64; 2]| t - 10.0 * period;
        let events = [EventSpec {
            kind: EventKind::Apex,
            direction: EventDirection::Rising,
            guard: &guard,
        }];
        let limits = Limits {
            max_time: 100.0,
            ..Limits::default()
        };
        let res = integrate_until_event(rhs, 0.0, [1.0, 0.0], &events, &limits).unwrap();
        assert_abs_diff_eq!(res.terminal.state[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(res.terminal.state[1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn start_zero_guard_is_not_a_crossing_and_direction_filters_apply() {
        // g = sin(2 pi t / 0.1): rising roots at t = 0 and t = 0.1, a falling
        // root at t = 0.05. Armed rising: must find t = 0.1.
        let rhs = |_t: f64, _y: &[f64; 1]| -> Result<[f64; 1], NoErr> { Ok([1.0]) };
        let guard = |t: f64, _y: &[f64; 1]| (2.0 * std::f64::consts::PI * t / 0.1).sin();
        let events = [EventSpec {
            kind: EventKind::Apex,
            direction: EventDirection::Rising,
            guard: &guard,
        }];
        let limits = Limits {
            max_step: 0.2,
            sample_rate: None,
            ..Limits::default()
        };
        let res = integrate_until_event(rhs, 0.0, [0.0], &events, &limits).unwrap();
        assert_abs_diff_eq!(res.terminal.time, 0.1, epsilon = 1e-10);
    }

    #[test]
    fn earliest_event_wins() {
        let y0 = [0.0, 1.0, 5.0, 2.0];
        let g_apex = |_t: f64, y: &[f64; 4]| y[3];
        let g_time = |t: f64, _y: &[f64; 4]| t - 0.05;
        let events = [
            EventSpec {
                kind: EventKind::Apex,
                direction: EventDirection::Falling,
                guard: &g_apex,
            },
            EventSpec {
                kind: EventKind::Fall,
                direction: EventDirection::Rising,
                guard: &g_time,
            },
        ];
        let res = integrate_until_event(ballistic, 0.0, y0, &events, &Limits::default()).unwrap();
        assert_eq!(res.terminal.kind, EventKind::Fall);
        assert_abs_diff_eq!(res.terminal.time, 0.05, epsilon = 1e-10);
    }

    #[test]
    fn no_event_errors_after_max_time() {
        let guard = |_t: f64, y: &[f64; 4]| y[1] + 100.0;
        let events = [EventSpec {
            kind: EventKind::Touchdown,
            direction: EventDirection::Falling,
            guard: &guard,
        }];
        let limits = Limits {
            max_time: 0.2,
            ..Limits::default()
        };
        let err = integrate_until_event(ballistic, 0.0, [0.0, 1.0, 0.0, 50.0], &events, &limits)
            .unwrap_err();
        assert!(matches!(err, IntegrationError::NoEvent { .. }));
    }

    #[test]
    fn pole_in_dynamics_reports_underflow_or_nonfinite() {
        let rhs = |t: f64, y: &[f64; 1]| -> Result<[f64; 1], NoErr> { Ok([y[0] / (0.5 - t)]) };
        let guard = |t: f64, _y: &[f64; 1]| t - 10.0;
        let events = [EventSpec {
            kind: EventKind::Fall,
            direction: EventDirection::Rising,
            guard: &guard,
        }];
        let limits = Limits {
            max_time: 20.0,
            ..Limits::default()
        };
        let err = integrate_until_event(rhs, 0.0, [1.0], &events, &limits).unwrap_err();
        assert!(matches!(
            err,
            IntegrationError::StepSizeUnderflow { .. } | IntegrationError::NonFinite { .. }
        ));
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let y0 = [0.0, 1.2, 5.0, 1.0];
        let guard = |_t: f64, y: &[f64; 4]| y[1] - 0.9;
        let events = [EventSpec {
            kind: EventKind::Touchdown,
            direction: EventDirection::Falling,
            guard: &guard,
        }];
        let a = integrate_until_event(ballistic, 0.0, y0, &events, &Limits::default()).unwrap();
        let b = integrate_until_event(ballistic, 0.0, y0, &events, &Limits::default()).unwrap();
        assert_eq!(a.terminal.time.to_bits(), b.terminal.time.to_bits());
        assert_eq!(a.samples.len(), b.samples.len());
        for (sa, sb) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(sa.0.to_bits(), sb.0.to_bits());
            for i in 0..4 {
                assert_eq!(sa.1[i].to_bits(), sb.1[i].to_bits());
            }
        }
    }

    #[test]
    fn halved_tolerances_move_event_times_less_than_the_coarser_tolerance() {
        let y0 = [0.0, 1.2, 5.0, 1.5];
        let guard = |_t: f64, y: &[f64; 4]| y[1] - 0.85;
        let events = [EventSpec {
            kind: EventKind::Touchdown,
            direction: EventDirection::Falling,
            guard: &guard,
        }];
        let coarse = Limits::default();
        let fine = Limits {
            abs_tol: 5e-10,
            rel_tol: 5e-10,
            ..coarse
        };
        let a = integrate_until_event(ballistic, 0.0, y0, &events, &coarse).unwrap();
        let b = integrate_until_event(ballistic, 0.0, y0, &events, &fine).unwrap();
        assert!((a.terminal.time - b.terminal.time).abs() < 1e-9);
    }

    #[test]
    fn samples_are_strictly_increasing_and_terminate_at_the_event() {
        let y0 = [0.0, 1.2, 5.0, 0.0];
        let guard = |_t: f64, y: &[f64; 4]| y[1] - 1.0;
        let events = [EventSpec {
            kind: EventKind::Touchdown,
            direction: EventDirection::Falling,
            guard: &guard,
        }];
        let res = integrate_until_event(ballistic, 0.0, y0, &events, &Limits::default()).unwrap();
        assert!(res.samples.len() > 100);
        for w in res.samples.windows(2) {
            assert!(w[1].0 > w[0].0);
        }
        let last = res.samples.last().unwrap();
        assert_eq!(last.0, res.terminal.time);
        // Flight parabola check against the closed form at each sample.
        for (t, s) in &res.samples {
            let exact = 1.2 - 0.5 * 9.81 * t * t;
            assert_abs_diff_eq!(s[1], exact, epsilon = 1e-9);
        }
    }

    #[test]
    fn simultaneous_takeoff_guards_resolve_to_rest_length() {
        // Two guards crossing at the same instant: the rest-length kind wins.
        let rhs = |_t: f64, _y: &[f64; 1]| -> Result<[f64; 1], NoErr> { Ok([1.0]) };
        let g1 = |t: f64, _y: &[f64; 1]| t - 0.1;
        let g2 = |t: f64, _y: &[f64; 1]| t - 0.1;
        let events = [
            EventSpec {
                kind: EventKind::TakeoffForce,
                direction: EventDirection::Rising,
                guard: &g1,
            },
            EventSpec {
                kind: EventKind::TakeoffLength,
                direction: EventDirection::Rising,
                guard: &g2,
            },
        ];
        let limits = Limits {
            sample_rate: None,
            ..Limits::default()
        };
        let res = integrate_until_event(rhs, 0.0, [0.0], &events, &limits).unwrap();
        assert_eq!(res.terminal.kind, EventKind::TakeoffLength);
    }

    #[test]
    fn foot_height_guard_values() {
        let p = ModelParams::default();
        let td = 1.2f64;
        let hip_y = p.leg_rest_length * td.sin();
        // Pitch zero: hip sits hip_com_distance below the CoM.
        let state = BodyState {
            y_com: hip_y + p.hip_com_distance,
            ..Default::default()
        };
        assert_abs_diff_eq!(foot_height_guard(&p, &state, td), 0.0, epsilon = 1e-15);
        let higher = BodyState {
            y_com: hip_y + p.hip_com_distance + 0.1,
            ..state
        };
        assert_abs_diff_eq!(foot_height_guard(&p, &higher, td), 0.1, epsilon = 1e-12);
    }
}

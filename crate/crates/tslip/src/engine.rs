//! The hybrid gait automaton: sequences flight and stance phases, fires the
//! controllers at the right moments, and records apex-to-apex strides.
//!
//! Besides the six body coordinates, the integrated state carries the PID
//! pitch-integral, running work integrals for spring/damper/hip, and the
//! time integral of pitch. The work components make per-stride energy audits
//! integrator-accurate instead of sample-rate-accurate; the pitch integral
//! gives exact stride-mean pitch without dense output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{pid_torque, ControllerConfig, ControllerState, ProtocolPhase};
use crate::integrator::{
    foot_height_guard, integrate_until_event, EventDirection, EventKind, EventSpec,
    IntegrationError, Limits,
};
use crate::model::{
    flight_derivative, mechanical_energy, stance_context, stance_derivative, BodyState,
    HipCommand, ModelError, ModelParams, StanceContext, Vec2, VpTarget,
};

/// Augmented state layout.
const IX: usize = 0;
const IY: usize = 1;
const IPITCH: usize = 2;
const IVX: usize = 3;
const IVY: usize = 4;
const IOMEGA: usize = 5;
const IINTERR: usize = 6;
const IWSPRING: usize = 7;
const IWDAMPER: usize = 8;
const IWHIP: usize = 9;
const IINTPITCH: usize = 10;
const D: usize = 11;

/// Fraction of the rest length below which the CoM height counts as a fall.
const FALL_HEIGHT_FRAC: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Flight,
    Stance,
}

/// Integration tolerances and phase limits for the engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimLimits {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    /// Per-phase wall time before a missing event counts as a failure [s].
    pub max_phase_time: f64,
}

impl Default for SimLimits {
    fn default() -> Self {
        SimLimits {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
            max_step: 0.05,
            max_phase_time: 5.0,
        }
    }
}

impl SimLimits {
    fn integrator_limits(&self, sample_rate: Option<f64>) -> Limits {
        Limits {
            max_time: self.max_phase_time,
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_step: self.max_step,
            sample_rate,
        }
    }
}

/// One dense output row of a recorded stride.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrideSample {
    pub time: f64,
    pub body: BodyState,
    pub phase: Phase,
    pub stance: Option<StanceContext>,
    pub grf: Vec2,
    pub hip_torque: f64,
    pub spring_power: f64,
    pub damper_power: f64,
    pub hip_power: f64,
}

/// Integrator-accurate net work done on the body over one stride [J].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NetWorks {
    pub spring: f64,
    pub damper: f64,
    pub hip: f64,
}

impl NetWorks {
    pub fn total(&self) -> f64 {
        self.spring + self.damper + self.hip
    }
}

/// One apex-to-apex stride: events, optional dense samples, and per-stride
/// bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrideRecord {
    pub index: u32,
    pub apex_start: BodyState,
    pub apex_end: BodyState,
    pub t_touchdown: f64,
    pub t_takeoff: f64,
    /// Stance sample of maximum leg compression (first attaining); present
    /// only on sampled strides.
    pub t_midstance: Option<f64>,
    pub td_angle: f64,
    pub vp: VpTarget,
    pub used_pid: bool,
    pub foot: Vec2,
    pub net_works: NetWorks,
    pub energy_start: f64,
    pub energy_end: f64,
    pub samples: Vec<StrideSample>,
}

impl StrideRecord {
    pub fn stride_period(&self) -> f64 {
        self.apex_end.time - self.apex_start.time
    }

    pub fn stance_duration(&self) -> f64 {
        self.t_takeoff - self.t_touchdown
    }

    /// Difference between the body's energy change and the integrated
    /// actuator works; should vanish to integrator accuracy.
    pub fn energy_audit_residual(&self) -> f64 {
        (self.energy_end - self.energy_start) - self.net_works.total()
    }

    /// Gross energy moved by the actuators; the audit scale.
    pub fn energy_throughput(&self) -> f64 {
        self.net_works.spring.abs() + self.net_works.damper.abs() + self.net_works.hip.abs()
    }

    pub fn stance_samples(&self) -> impl Iterator<Item = &StrideSample> {
        self.samples.iter().filter(|s| s.phase == Phase::Stance)
    }

    /// Pitch at an event time, looked up from the samples.
    pub fn pitch_at(&self, time: f64) -> Option<f64> {
        self.samples
            .iter()
            .min_by(|a, b| {
                (a.time - time)
                    .abs()
                    .total_cmp(&(b.time - time).abs())
            })
            .map(|s| s.body.pitch)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrideError {
    #[error("fall during {segment} at t = {time:.4} s ({what})")]
    Fall {
        segment: &'static str,
        time: f64,
        what: &'static str,
    },
    #[error("no ascending flight after take-off (vy = {vy:.4} m/s)")]
    NoAscent { vy: f64 },
    #[error("{segment}: {source}")]
    Model {
        segment: &'static str,
        source: ModelError,
    },
    #[error("{segment}: no event within {max_time} s")]
    NoEvent {
        segment: &'static str,
        max_time: f64,
    },
    #[error("{segment}: step size underflow at t = {time:.6} s")]
    Stiff { segment: &'static str, time: f64 },
    #[error("{segment}: non-finite state at t = {time:.6} s")]
    NonFinite { segment: &'static str, time: f64 },
    #[error("VP-angle adaptation diverged at touchdown: {source}")]
    Adaptation {
        #[from]
        source: crate::controllers::AdaptError,
    },
    #[error("event ordering violation in {segment}: unexpected {got:?}")]
    EventOrdering {
        segment: &'static str,
        got: EventKind,
    },
    #[error("no convergence within the stride budget ({budget})")]
    BudgetExhausted { budget: u32 },
}

/// A failed run with the phase and stride where it broke.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("run failed at stride {stride} in phase {phase:?}: {error}")]
pub struct RunFailure {
    pub stride: u32,
    pub phase: ProtocolPhase,
    pub error: StrideError,
}

fn map_int_err(segment: &'static str, e: IntegrationError<ModelError>) -> StrideError {
    match e {
        IntegrationError::Rhs(source) => StrideError::Model { segment, source },
        IntegrationError::NoEvent { max_time, .. } => StrideError::NoEvent { segment, max_time },
        IntegrationError::StepSizeUnderflow { time, .. } => StrideError::Stiff { segment, time },
        IntegrationError::NonFinite { time } => StrideError::NonFinite { segment, time },
    }
}

fn body_from(t: f64, y: &[f64; D]) -> BodyState {
    BodyState {
        x_com: y[IX],
        y_com: y[IY],
        pitch: y[IPITCH],
        vx: y[IVX],
        vy: y[IVY],
        pitch_rate: y[IOMEGA],
        time: t,
    }
}

fn pack(state: &BodyState, int_pitch: f64) -> [f64; D] {
    let mut y = [0.0; D];
    y[IX] = state.x_com;
    y[IY] = state.y_com;
    y[IPITCH] = state.pitch;
    y[IVX] = state.vx;
    y[IVY] = state.vy;
    y[IOMEGA] = state.pitch_rate;
    y[IINTPITCH] = int_pitch;
    y
}

/// Norm of the apex-state difference over (vx, y, pitch, pitch_rate); the
/// horizontal position is cyclic and excluded.
pub fn apex_residual(a: &BodyState, b: &BodyState) -> f64 {
    let d = [
        a.vx - b.vx,
        a.y_com - b.y_com,
        a.pitch - b.pitch,
        a.pitch_rate - b.pitch_rate,
    ];
    d.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Initial apex for cold starts: slightly above the touchdown height at the
/// commanded speed and desired pitch.
pub fn cold_start_apex(params: &ModelParams, cfg: &ControllerConfig, speed: f64) -> BodyState {
    BodyState {
        x_com: 0.0,
        y_com: 1.05 * params.leg_rest_length * cfg.leg.initial_td_angle.sin()
            + params.hip_com_distance * cfg.pid.desired_pitch.cos(),
        pitch: cfg.pid.desired_pitch,
        vx: speed,
        vy: 0.0,
        pitch_rate: 0.0,
        time: 0.0,
    }
}

/// Simulate one apex-to-apex stride: descent flight to touchdown, stance to
/// take-off, ascent flight to the next apex. Controllers fire at apex (leg
/// placement) and touchdown (PID integral reset, VP-angle adaptation).
pub fn simulate_stride(
    params: &ModelParams,
    ctl: &mut ControllerState,
    apex: BodyState,
    lim: &SimLimits,
    sample_rate: Option<f64>,
    index: u32,
) -> Result<StrideRecord, StrideError> {
    debug_assert!(apex.vy.abs() < 1e-6, "stride must start at an apex");
    let td_angle = ctl.on_apex(&apex);
    let energy_start = mechanical_energy(params, &apex);
    let int_limits = lim.integrator_limits(sample_rate);

    let flight_rhs = |t: f64, y: &[f64; D]| -> Result<[f64; D], ModelError> {
        let body = body_from(t, y);
        let d = flight_derivative(params, &body);
        Ok([
            d.vx,
            d.vy,
            d.pitch_rate,
            d.ax,
            d.ay,
            d.pitch_accel,
            0.0,
            0.0,
            0.0,
            0.0,
            y[IPITCH],
        ])
    };

    let g_fall_y = |_t: f64, y: &[f64; D]| y[IY] - FALL_HEIGHT_FRAC * params.leg_rest_length;
    let g_pitch_hi = |_t: f64, y: &[f64; D]| y[IPITCH] - std::f64::consts::FRAC_PI_2;
    let g_pitch_lo = |_t: f64, y: &[f64; D]| -y[IPITCH] - std::f64::consts::FRAC_PI_2;

    // --- descent: apex -> touchdown ---
    let g_touchdown =
        |t: f64, y: &[f64; D]| foot_height_guard(params, &body_from(t, y), td_angle);
    let descent_events = [
        EventSpec {
            kind: EventKind::Touchdown,
            direction: EventDirection::Falling,
            guard: &g_touchdown,
        },
        EventSpec {
            kind: EventKind::Fall,
            direction: EventDirection::Falling,
            guard: &g_fall_y,
        },
        EventSpec {
            kind: EventKind::Fall,
            direction: EventDirection::Rising,
            guard: &g_pitch_hi,
        },
        EventSpec {
            kind: EventKind::Fall,
            direction: EventDirection::Rising,
            guard: &g_pitch_lo,
        },
    ];
    let descent = integrate_until_event(
        flight_rhs,
        apex.time,
        pack(&apex, ctl.pitch_integral_base),
        &descent_events,
        &int_limits,
    )
    .map_err(|e| map_int_err("descent", e))?;
    if descent.terminal.kind == EventKind::Fall {
        return Err(StrideError::Fall {
            segment: "descent",
            time: descent.terminal.time,
            what: fall_what(descent.terminal.event_index, 1),
        });
    }

    // --- touchdown transition ---
    let t_td = descent.terminal.time;
    let mut y_td = descent.terminal.state;
    y_td[IINTERR] = 0.0; // integral anti-windup reset
    let td_body = body_from(t_td, &y_td);
    ctl.on_touchdown(t_td, y_td[IINTPITCH])?;
    let vp = ctl.vp;
    let used_pid = ctl.use_pid();
    let pid = ctl.cfg.pid;
    let hip = td_body.hip_position(params);
    let foot = Vec2::new(
        hip.x + params.leg_rest_length * td_angle.cos(),
        0.0,
    );

    // --- stance: touchdown -> take-off ---
    let stance_rhs = |t: f64, y: &[f64; D]| -> Result<[f64; D], ModelError> {
        let body = body_from(t, y);
        let extra = if used_pid {
            pid_torque(&pid, body.pitch, body.pitch_rate, y[IINTERR])
        } else {
            0.0
        };
        let command = HipCommand::VirtualPoint {
            vp,
            extra_torque: extra,
        };
        let (d, ctx) = stance_derivative(params, &body, foot, &command)?;
        Ok([
            d.vx,
            d.vy,
            d.pitch_rate,
            d.ax,
            d.ay,
            d.pitch_accel,
            if used_pid {
                body.pitch - pid.desired_pitch
            } else {
                0.0
            },
            ctx.spring_power(),
            ctx.damper_power(),
            ctx.hip_power(body.pitch_rate),
            y[IPITCH],
        ])
    };
    let g_to_length = |t: f64, y: &[f64; D]| {
        let body = body_from(t, y);
        let hip = body.hip_position(params);
        (hip - foot).norm() - params.leg_rest_length
    };
    let g_to_force = |t: f64, y: &[f64; D]| {
        let body = body_from(t, y);
        match crate::model::leg_geometry(params, &body, foot) {
            Ok(g) => {
                crate::model::spring_force(params, g.length)
                    - crate::model::damper_force(params, g.length, g.length_rate)
            }
            Err(_) => f64::NAN,
        }
    };
    let stance_events = [
        EventSpec {
            kind: EventKind::TakeoffLength,
            direction: EventDirection::Rising,
            guard: &g_to_length,
        },
        EventSpec {
            kind: EventKind::TakeoffForce,
            direction: EventDirection::Falling,
            guard: &g_to_force,
        },
        EventSpec {
            kind: EventKind::Fall,
            direction: EventDirection::Falling,
            guard: &g_fall_y,
        },
        EventSpec {
            kind: EventKind::Fall,
            direction: EventDirection::Rising,
            guard: &g_pitch_hi,
        },
        EventSpec {
            kind: EventKind::Fall,
            direction: EventDirection::Rising,
            guard: &g_pitch_lo,
        },
    ];
    let stance = integrate_until_event(stance_rhs, t_td, y_td, &stance_events, &int_limits)
        .map_err(|e| map_int_err("stance", e))?;
    match stance.terminal.kind {
        EventKind::TakeoffLength | EventKind::TakeoffForce => {}
        EventKind::Fall => {
            return Err(StrideError::Fall {
                segment: "stance",
                time: stance.terminal.time,
                what: fall_what(stance.terminal.event_index, 2),
            });
        }
        got => {
            return Err(StrideError::EventOrdering {
                segment: "stance",
                got,
            });
        }
    }

    // --- take-off transition ---
    let t_to = stance.terminal.time;
    let y_to = stance.terminal.state;
    ctl.on_takeoff(t_to, y_to[IINTPITCH]);
    if y_to[IVY] <= 0.0 {
        return Err(StrideError::NoAscent { vy: y_to[IVY] });
    }

    // --- ascent: take-off -> apex ---
    let g_apex = |_t: f64, y: &[f64; D]| y[IVY];
    let ascent_events = [
        EventSpec {
            kind: EventKind::Apex,
            direction: EventDirection::Falling,
            guard: &g_apex,
        },
        EventSpec {
            kind: EventKind::Fall,
            direction: EventDirection::Falling,
            guard: &g_fall_y,
        },
        EventSpec {
            kind: EventKind::Fall,
            direction: EventDirection::Rising,
            guard: &g_pitch_hi,
        },
        EventSpec {
            kind: EventKind::Fall,
            direction: EventDirection::Rising,
            guard: &g_pitch_lo,
        },
    ];
    let ascent = integrate_until_event(flight_rhs, t_to, y_to, &ascent_events, &int_limits)
        .map_err(|e| map_int_err("ascent", e))?;
    if ascent.terminal.kind == EventKind::Fall {
        return Err(StrideError::Fall {
            segment: "ascent",
            time: ascent.terminal.time,
            what: fall_what(ascent.terminal.event_index, 1),
        });
    }

    let t_apex = ascent.terminal.time;
    let y_apex = ascent.terminal.state;
    let apex_end = body_from(t_apex, &y_apex);
    ctl.pitch_integral_base = y_apex[IINTPITCH];

    let net_works = NetWorks {
        spring: y_apex[IWSPRING],
        damper: y_apex[IWDAMPER],
        hip: y_apex[IWHIP],
    };

    // --- assemble samples (recorded strides only) ---
    let mut samples = Vec::new();
    let mut t_midstance = None;
    if sample_rate.is_some() {
        samples.reserve(descent.samples.len() + stance.samples.len() + ascent.samples.len());
        // The touchdown row belongs to stance so flight rows carry exactly
        // zero GRF; drop the duplicated boundary rows.
        for (t, y) in descent.samples[..descent.samples.len() - 1].iter() {
            samples.push(flight_sample(*t, y));
        }
        let mut min_len = f64::INFINITY;
        for (t, y) in stance.samples.iter() {
            let body = body_from(*t, y);
            let extra = if used_pid {
                pid_torque(&pid, body.pitch, body.pitch_rate, y[IINTERR])
            } else {
                0.0
            };
            let command = HipCommand::VirtualPoint {
                vp,
                extra_torque: extra,
            };
            let ctx = stance_context(params, &body, foot, &command)
                .map_err(|source| StrideError::Model {
                    segment: "stance sampling",
                    source,
                })?;
            if ctx.leg_length < min_len {
                min_len = ctx.leg_length;
                t_midstance = Some(*t);
            }
            samples.push(StrideSample {
                time: *t,
                body,
                phase: Phase::Stance,
                stance: Some(ctx),
                grf: ctx.grf,
                hip_torque: ctx.hip_torque,
                spring_power: ctx.spring_power(),
                damper_power: ctx.damper_power(),
                hip_power: ctx.hip_power(body.pitch_rate),
            });
        }
        for (t, y) in ascent.samples[1..].iter() {
            samples.push(flight_sample(*t, y));
        }
    }

    Ok(StrideRecord {
        index,
        apex_start: apex,
        apex_end,
        t_touchdown: t_td,
        t_takeoff: t_to,
        t_midstance,
        td_angle,
        vp,
        used_pid,
        foot,
        net_works,
        energy_start,
        energy_end: mechanical_energy(params, &apex_end),
        samples,
    })
}

fn flight_sample(t: f64, y: &[f64; D]) -> StrideSample {
    StrideSample {
        time: t,
        body: body_from(t, y),
        phase: Phase::Flight,
        stance: None,
        grf: Vec2::ZERO,
        hip_torque: 0.0,
        spring_power: 0.0,
        damper_power: 0.0,
        hip_power: 0.0,
    }
}

/// Map a fall-guard index to its cause; `first_fall_index` is the position
/// of the height guard in the armed event list.
fn fall_what(event_index: usize, first_fall_index: usize) -> &'static str {
    match event_index.saturating_sub(first_fall_index) {
        0 => "CoM height below threshold",
        _ => "pitch beyond 90 degrees",
    }
}

/// Convergence metadata of a successful run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceInfo {
    pub total_strides: u32,
    pub phase1_strides: u32,
    pub final_apex_residual: f64,
    pub final_td_angle: f64,
    pub final_vp: VpTarget,
    pub apex: BodyState,
    pub td_clamp_count: u32,
}

/// A full gait run: the convergence protocol followed by recorded
/// steady-state strides. Failures are carried, not thrown, so sweeps can
/// aggregate them.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitRun {
    pub strides: Vec<StrideRecord>,
    pub convergence: Option<ConvergenceInfo>,
    pub failure: Option<RunFailure>,
}

impl GaitRun {
    pub fn converged(&self) -> bool {
        self.failure.is_none() && self.convergence.is_some()
    }
}

/// Run the convergence protocol, then record `record_strides` steady-state
/// strides with dense output.
pub fn run_gait(
    params: &ModelParams,
    cfg: &ControllerConfig,
    vp: VpTarget,
    target_speed: f64,
    lim: &SimLimits,
    record_strides: u32,
    sample_rate: f64,
) -> GaitRun {
    let converged =
        match crate::controllers::run_convergence_protocol(params, cfg, vp, target_speed, lim) {
            Ok(c) => c,
            Err(failure) => {
                return GaitRun {
                    strides: Vec::new(),
                    convergence: None,
                    failure: Some(failure),
                }
            }
        };

    let mut ctl = converged.controllers.clone();
    let mut apex = converged.apex;
    let mut strides = Vec::with_capacity(record_strides as usize);
    for k in 0..record_strides {
        let idx = converged.total_strides + 1 + k;
        match simulate_stride(params, &mut ctl, apex, lim, Some(sample_rate), idx) {
            Ok(rec) => {
                apex = rec.apex_end;
                strides.push(rec);
            }
            Err(error) => {
                return GaitRun {
                    strides,
                    convergence: None,
                    failure: Some(RunFailure {
                        stride: idx,
                        phase: ProtocolPhase::Converged,
                        error,
                    }),
                };
            }
        }
    }

    GaitRun {
        strides,
        convergence: Some(ConvergenceInfo {
            total_strides: converged.total_strides,
            phase1_strides: converged.phase1_strides,
            final_apex_residual: converged.final_apex_residual,
            final_td_angle: ctl.td_angle,
            final_vp: ctl.vp,
            apex,
            td_clamp_count: ctl.td_clamp_count,
        }),
        failure: None,
    }
}

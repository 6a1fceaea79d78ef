//! Stride-level control laws and the two-phase gait convergence protocol.
//!
//! Three controllers act at different timescales:
//! * leg placement picks the touchdown angle once per stride at apex,
//! * an additive pitch PID stabilizes the trunk during the bootstrap phase,
//! * the VP-angle adaptation nudges the virtual-point angle once per stride
//!   after the PID is disabled, until the gait settles on a fixed VP target.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{self, apex_residual, RunFailure, SimLimits, StrideRecord};
use crate::model::{BodyState, ModelParams, VpTarget};

pub const TD_ANGLE_MIN: f64 = 1e-3;
pub const TD_ANGLE_MAX: f64 = std::f64::consts::FRAC_PI_2 - 1e-3;

/// Stride-to-stride touchdown-angle law: previous angle plus gain-weighted
/// apex errors (velocity error against the commanded speed, stride-to-stride
/// velocity change, stride-to-stride apex-height change).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegPlacementGains {
    /// Gain on the apex-velocity error against the target speed [s/m].
    pub k_xdot0: f64,
    /// Gain on the stride-to-stride apex-velocity change [s/m].
    pub k_xdot: f64,
    /// Gain on the stride-to-stride apex-height change [rad/m].
    pub k_y: f64,
    /// Touchdown angle used for the first stride [rad].
    pub initial_td_angle: f64,
}

/// Additive pitch PID used while bootstrapping toward a steady gait.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchPidGains {
    pub k_p: f64,
    pub k_d: f64,
    pub k_i: f64,
    /// Desired mean trunk pitch, forward-positive [rad].
    pub desired_pitch: f64,
    pub desired_pitch_rate: f64,
}

/// Observation taken at each flight apex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApexObs {
    pub vx: f64,
    pub y: f64,
}

/// Touchdown angle for the upcoming stride. Returns the angle and whether
/// the (0, 90) degree clamp was hit.
///
/// The "time step 0" baseline of the velocity term is the commanded apex
/// speed, so a converged gait holds the target speed exactly.
pub fn next_td_angle(
    gains: &LegPlacementGains,
    prev_angle: f64,
    target_speed: f64,
    history: &[ApexObs],
) -> (f64, bool) {
    assert!(!history.is_empty(), "at least one prior apex required");
    let cur = history[history.len() - 1];
    let mut angle = prev_angle + gains.k_xdot0 * (cur.vx - target_speed);
    if history.len() >= 2 {
        let prev = history[history.len() - 2];
        angle += gains.k_xdot * (cur.vx - prev.vx) + gains.k_y * (cur.y - prev.y);
    }
    let clamped = !(TD_ANGLE_MIN..=TD_ANGLE_MAX).contains(&angle);
    (angle.clamp(TD_ANGLE_MIN, TD_ANGLE_MAX), clamped)
}

/// PID hip torque on pitch. The error convention is actual-minus-desired:
/// a positive output is a torque whose reaction pushes the trunk backward,
/// so positive gains stabilize forward-positive pitch. The integral input
/// accumulates `pitch - desired_pitch` over stance and is reset at each
/// touchdown.
pub fn pid_torque(
    gains: &PitchPidGains,
    pitch: f64,
    pitch_rate: f64,
    integral_error: f64,
) -> f64 {
    gains.k_p * (pitch - gains.desired_pitch)
        + gains.k_d * (pitch_rate - gains.desired_pitch_rate)
        + gains.k_i * integral_error
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpAdaptationConfig {
    /// Dimensionless adaptation gain.
    pub k_vp: f64,
    /// Per-stride angle update bound [rad].
    pub rate_limit: f64,
    /// Updates below this magnitude count toward convergence [rad].
    pub update_tolerance: f64,
    /// Number of consecutive small updates declaring convergence.
    pub convergence_window: usize,
    /// Consecutive rate-limited updates declaring divergence.
    pub divergence_limit: u32,
}

impl Default for VpAdaptationConfig {
    fn default() -> Self {
        VpAdaptationConfig {
            k_vp: 0.5,
            rate_limit: 5f64.to_radians(),
            update_tolerance: 1e-4,
            convergence_window: 5,
            divergence_limit: 20,
        }
    }
}

/// Running state of the stride-to-stride VP-angle adaptation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VpAdaptationState {
    pub angle: f64,
    pub converged: bool,
    pub updates_applied: u32,
    pub mean_pitch_history: Vec<f64>,
    recent_updates: VecDeque<f64>,
    consecutive_clamps: u32,
}

impl VpAdaptationState {
    pub fn new(initial_angle: f64) -> Self {
        VpAdaptationState {
            angle: initial_angle,
            ..Default::default()
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum AdaptError {
    #[error("VP-angle adaptation hit its rate limit {0} strides in a row")]
    Diverged(u32),
}

/// One VP-angle update from the observed per-stride mean pitch:
/// `angle += k_vp * (desired - observed)`, rate-limited. Returns the applied
/// increment.
pub fn adapt_vp_angle(
    cfg: &VpAdaptationConfig,
    state: &mut VpAdaptationState,
    desired_pitch: f64,
    stride_mean_pitch: f64,
) -> Result<f64, AdaptError> {
    let raw = cfg.k_vp * (desired_pitch - stride_mean_pitch);
    let applied = raw.clamp(-cfg.rate_limit, cfg.rate_limit);
    if raw.abs() > cfg.rate_limit {
        state.consecutive_clamps += 1;
        if state.consecutive_clamps >= cfg.divergence_limit {
            return Err(AdaptError::Diverged(state.consecutive_clamps));
        }
    } else {
        state.consecutive_clamps = 0;
    }
    state.angle += applied;
    state.updates_applied += 1;
    state.mean_pitch_history.push(stride_mean_pitch);
    state.recent_updates.push_back(applied.abs());
    while state.recent_updates.len() > cfg.convergence_window {
        state.recent_updates.pop_front();
    }
    state.converged = state.recent_updates.len() == cfg.convergence_window
        && state
            .recent_updates
            .iter()
            .all(|u| *u < cfg.update_tolerance);
    Ok(applied)
}

/// Protocol phase; progression is monotone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolPhase {
    VpPlusPid,
    FixedVpAdaptation,
    Converged,
}

/// Averaging window for the per-stride mean pitch fed to the VP adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanPitchWindow {
    /// Time average from one touchdown to the next (default).
    TdToTd,
    /// Time average over the previous stance phase only.
    TdToTo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Apex-residual threshold for the phase-1 steady-state test.
    pub steady_tolerance: f64,
    /// Consecutive steady strides required to enter phase 2.
    pub steady_strides: u32,
    /// Apex-residual threshold declaring final convergence.
    pub converged_tolerance: f64,
    pub stride_budget: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            steady_tolerance: 1e-4,
            steady_strides: 3,
            converged_tolerance: 1e-6,
            stride_budget: 500,
        }
    }
}

/// All controller gains and protocol settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub leg: LegPlacementGains,
    pub pid: PitchPidGains,
    pub adaptation: VpAdaptationConfig,
    pub protocol: ProtocolConfig,
    pub mean_pitch_window: MeanPitchWindow,
}

/// Touchdown angle trend for cold starts, matching the observed decrease
/// from 78 deg at 4 m/s toward 71 deg at 10 m/s. The converged angle is an
/// outcome of the leg-placement law, not this hint.
pub fn default_initial_td_angle(speed: f64) -> f64 {
    let deg = 78.0 + (speed - 4.0) * (71.0 - 78.0) / 6.0;
    deg.clamp(60.0, 85.0).to_radians()
}

impl ControllerConfig {
    /// Artifact-derived default gains, found by the coarse grid search in
    /// `sweep::tune_gains` at 5 m/s with the VP at the CoM (not values from
    /// any published source). `k_i` is fixed at `k_p / 10`, `k_vp` at 0.5.
    pub fn defaults_for_speed(speed: f64) -> Self {
        let k_p = 600.0;
        ControllerConfig {
            leg: LegPlacementGains {
                k_xdot0: -0.06,
                k_xdot: -0.14,
                k_y: -0.06,
                initial_td_angle: default_initial_td_angle(speed),
            },
            pid: PitchPidGains {
                k_p,
                k_d: 110.0,
                k_i: k_p / 10.0,
                desired_pitch: 10f64.to_radians(),
                desired_pitch_rate: 0.0,
            },
            adaptation: VpAdaptationConfig::default(),
            protocol: ProtocolConfig::default(),
            mean_pitch_window: MeanPitchWindow::TdToTd,
        }
    }
}

/// Single-owner mutable controller record driven by the engine: one
/// instance per simulation.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub cfg: ControllerConfig,
    pub target_speed: f64,
    pub phase: ProtocolPhase,
    pub td_angle: f64,
    pub vp: VpTarget,
    pub apex_history: Vec<ApexObs>,
    pub adaptation: VpAdaptationState,
    pub td_clamp_count: u32,
    /// Set once the protocol has declared convergence; freezes adaptation.
    pub frozen: bool,
    /// Running time-integral of pitch carried across strides by the engine.
    pub pitch_integral_base: f64,
    prev_td_mark: Option<(f64, f64)>,
    pending_stance_mark: Option<(f64, f64)>,
    last_stance_span: Option<((f64, f64), (f64, f64))>,
}

impl ControllerState {
    pub fn new(cfg: ControllerConfig, vp: VpTarget, target_speed: f64) -> Self {
        let td_angle = cfg.leg.initial_td_angle;
        let adaptation = VpAdaptationState::new(vp.angle);
        ControllerState {
            cfg,
            target_speed,
            phase: ProtocolPhase::VpPlusPid,
            td_angle,
            vp,
            apex_history: Vec::new(),
            adaptation,
            td_clamp_count: 0,
            frozen: false,
            pitch_integral_base: 0.0,
            prev_td_mark: None,
            pending_stance_mark: None,
            last_stance_span: None,
        }
    }

    pub fn use_pid(&self) -> bool {
        self.phase == ProtocolPhase::VpPlusPid
    }

    /// Record an apex and choose the touchdown angle for the coming stride.
    pub fn on_apex(&mut self, apex: &BodyState) -> f64 {
        self.apex_history.push(ApexObs {
            vx: apex.vx,
            y: apex.y_com,
        });
        if self.apex_history.len() >= 2 {
            let (angle, clamped) = next_td_angle(
                &self.cfg.leg,
                self.td_angle,
                self.target_speed,
                &self.apex_history,
            );
            self.td_angle = angle;
            if clamped {
                self.td_clamp_count += 1;
            }
        }
        self.td_angle
    }

    /// Touchdown bookkeeping: feeds the VP-angle adaptation (phase 2) with
    /// the mean pitch over the configured window and records integral marks.
    /// `pitch_integral` is the running time integral of pitch.
    pub fn on_touchdown(&mut self, time: f64, pitch_integral: f64) -> Result<(), AdaptError> {
        if self.phase == ProtocolPhase::FixedVpAdaptation && !self.frozen {
            let window = match self.cfg.mean_pitch_window {
                MeanPitchWindow::TdToTd => self
                    .prev_td_mark
                    .map(|(t0, s0)| (t0, s0, time, pitch_integral)),
                MeanPitchWindow::TdToTo => self
                    .last_stance_span
                    .map(|((t0, s0), (t1, s1))| (t0, s0, t1, s1)),
            };
            if let Some((t0, s0, t1, s1)) = window {
                if t1 > t0 {
                    let mean = (s1 - s0) / (t1 - t0);
                    adapt_vp_angle(
                        &self.cfg.adaptation,
                        &mut self.adaptation,
                        self.cfg.pid.desired_pitch,
                        mean,
                    )?;
                    self.vp.angle = self.adaptation.angle;
                }
            }
        }
        self.prev_td_mark = Some((time, pitch_integral));
        self.pending_stance_mark = Some((time, pitch_integral));
        Ok(())
    }

    pub fn on_takeoff(&mut self, time: f64, pitch_integral: f64) {
        if let Some(td) = self.pending_stance_mark.take() {
            self.last_stance_span = Some((td, (time, pitch_integral)));
        }
    }
}

/// Result of a successful convergence protocol: a stride-periodic apex and
/// the final controller settings that reproduce it.
#[derive(Debug, Clone)]
pub struct ConvergedGait {
    pub apex: BodyState,
    pub controllers: ControllerState,
    pub total_strides: u32,
    pub phase1_strides: u32,
    pub final_apex_residual: f64,
}

/// Drive the gait to a stride-periodic fixed point.
///
/// Phase 1 runs VP + PID until the apex state is steady to the phase-1
/// tolerance for several consecutive strides. Phase 2 disables the PID and
/// adapts the VP angle once per stride; the run converges when the
/// adaptation updates stay below tolerance for a full window and the apex
/// residual drops below the final tolerance.
pub fn run_convergence_protocol(
    params: &ModelParams,
    cfg: &ControllerConfig,
    vp: VpTarget,
    target_speed: f64,
    limits: &SimLimits,
) -> Result<ConvergedGait, RunFailure> {
    let mut ctl = ControllerState::new(cfg.clone(), vp, target_speed);
    let mut apex = engine::cold_start_apex(params, cfg, target_speed);
    let mut prev_apex: Option<BodyState> = None;
    let mut steady = 0u32;
    let mut phase1_strides = 0u32;
    let budget = cfg.protocol.stride_budget;

    for stride in 1..=budget {
        let record: StrideRecord =
            engine::simulate_stride(params, &mut ctl, apex, limits, None, stride)
                .map_err(|error| RunFailure {
                    stride,
                    phase: ctl.phase,
                    error,
                })?;
        let next = record.apex_end;
        let residual = prev_apex.map(|p| apex_residual(&next, &p));

        match ctl.phase {
            ProtocolPhase::VpPlusPid => {
                phase1_strides = stride;
                if residual.is_some_and(|r| r < cfg.protocol.steady_tolerance) {
                    steady += 1;
                    if steady >= cfg.protocol.steady_strides {
                        ctl.phase = ProtocolPhase::FixedVpAdaptation;
                        steady = 0;
                    }
                } else {
                    steady = 0;
                }
            }
            ProtocolPhase::FixedVpAdaptation => {
                if ctl.adaptation.converged
                    && residual.is_some_and(|r| r < cfg.protocol.converged_tolerance)
                {
                    ctl.phase = ProtocolPhase::Converged;
                    ctl.frozen = true;
                    return Ok(ConvergedGait {
                        apex: next,
                        controllers: ctl,
                        total_strides: stride,
                        phase1_strides,
                        final_apex_residual: residual.unwrap_or(f64::NAN),
                    });
                }
            }
            ProtocolPhase::Converged => unreachable!("protocol returns on convergence"),
        }

        prev_apex = Some(next);
        apex = next;
    }

    Err(RunFailure {
        stride: budget,
        phase: ctl.phase,
        error: engine::StrideError::BudgetExhausted { budget },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn gains() -> LegPlacementGains {
        LegPlacementGains {
            k_xdot0: 0.01,
            k_xdot: 0.0,
            k_y: 0.0,
            initial_td_angle: 1.3,
        }
    }

    #[test]
    fn td_angle_is_a_fixed_point_at_zero_error() {
        let g = LegPlacementGains {
            k_xdot0: -0.05,
            k_xdot: -0.1,
            k_y: -0.05,
            initial_td_angle: 1.3,
        };
        let history = [ApexObs { vx: 5.0, y: 1.0 }, ApexObs { vx: 5.0, y: 1.0 }];
        let (angle, clamped) = next_td_angle(&g, 1.3, 5.0, &history);
        assert_eq!(angle, 1.3);
        assert!(!clamped);
    }

    #[test]
    fn td_angle_single_term_substitution() {
        let history = [ApexObs { vx: 6.0, y: 1.0 }];
        let (angle, clamped) = next_td_angle(&gains(), 1.3, 5.0, &history);
        assert_relative_eq!(angle, 1.31, max_relative = 1e-12);
        assert!(!clamped);
    }

    #[test]
    fn td_angle_clamps_and_flags() {
        let g = LegPlacementGains {
            k_xdot0: 10.0,
            ..gains()
        };
        let history = [ApexObs { vx: 10.0, y: 1.0 }];
        let (angle, clamped) = next_td_angle(&g, 1.3, 5.0, &history);
        assert_eq!(angle, TD_ANGLE_MAX);
        assert!(clamped);
    }

    #[test]
    fn zero_gains_keep_td_angle_constant() {
        let g = LegPlacementGains {
            k_xdot0: 0.0,
            k_xdot: 0.0,
            k_y: 0.0,
            initial_td_angle: 1.25,
        };
        let mut angle = 1.25;
        for i in 0..20 {
            let history = vec![
                ApexObs {
                    vx: 4.0 + i as f64,
                    y: 1.0 + 0.01 * i as f64,
                };
                i + 2
            ];
            let (a, _) = next_td_angle(&g, angle, 5.0, &history);
            angle = a;
        }
        assert_eq!(angle, 1.25);
    }

    #[test]
    fn pid_is_zero_at_the_setpoint() {
        let g = PitchPidGains {
            k_p: 600.0,
            k_d: 110.0,
            k_i: 60.0,
            desired_pitch: 0.2,
            desired_pitch_rate: 0.0,
        };
        assert_eq!(pid_torque(&g, 0.2, 0.0, 0.0), 0.0);
    }

    #[test]
    fn pid_proportional_term_matches_hand_value() {
        let g = PitchPidGains {
            k_p: 100.0,
            k_d: 0.0,
            k_i: 0.0,
            desired_pitch: 0.0,
            desired_pitch_rate: 0.0,
        };
        // 0.1 rad pitch error (actual minus desired) with k_p = 100.
        assert_relative_eq!(pid_torque(&g, 0.1, 0.0, 0.0), 10.0, max_relative = 1e-15);
    }

    #[test]
    fn vp_adaptation_fixed_point_and_half_gain_step() {
        let cfg = VpAdaptationConfig::default();
        let mut st = VpAdaptationState::new(0.0);
        let applied = adapt_vp_angle(&cfg, &mut st, 0.1, 0.1).unwrap();
        assert_eq!(applied, 0.0);
        assert_eq!(st.angle, 0.0);

        // k_vp = 0.5 with +0.02 rad error moves the angle by +0.01 rad.
        let applied = adapt_vp_angle(&cfg, &mut st, 0.12, 0.10).unwrap();
        assert_abs_diff_eq!(applied, 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(st.angle, 0.01, epsilon = 1e-15);
    }

    #[test]
    fn vp_adaptation_rate_limit_and_divergence() {
        let cfg = VpAdaptationConfig {
            divergence_limit: 3,
            ..Default::default()
        };
        let mut st = VpAdaptationState::new(0.0);
        for i in 0..2 {
            let applied = adapt_vp_angle(&cfg, &mut st, 1.0, 0.0).unwrap();
            assert_eq!(applied, cfg.rate_limit, "stride {i}");
        }
        let err = adapt_vp_angle(&cfg, &mut st, 1.0, 0.0).unwrap_err();
        assert_eq!(err, AdaptError::Diverged(3));
    }

    #[test]
    fn vp_adaptation_converges_after_window_of_small_updates() {
        let cfg = VpAdaptationConfig::default();
        let mut st = VpAdaptationState::new(0.3);
        for _ in 0..cfg.convergence_window - 1 {
            adapt_vp_angle(&cfg, &mut st, 0.1, 0.1 + 1e-5).unwrap();
            assert!(!st.converged);
        }
        adapt_vp_angle(&cfg, &mut st, 0.1, 0.1 - 1e-5).unwrap();
        assert!(st.converged);
        // One large update clears the flag again.
        adapt_vp_angle(&cfg, &mut st, 0.1, 0.2).unwrap();
        assert!(!st.converged);
    }

    #[test]
    fn initial_td_angle_trend_decreases_with_speed() {
        let a4 = default_initial_td_angle(4.0);
        let a10 = default_initial_td_angle(10.0);
        assert_relative_eq!(a4.to_degrees(), 78.0, max_relative = 1e-12);
        assert_relative_eq!(a10.to_degrees(), 71.0, max_relative = 1e-12);
        assert!(a4 > a10);
    }
}

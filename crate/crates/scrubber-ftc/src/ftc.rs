//! Sensor-fault injection and active fault-tolerant reconfiguration.
//!
//! The loop measures `y_m = y + f_s`, estimates `f_hat_s` online and feeds
//! the controller the compensated value `y_t = y_m - f_hat_s`; with the
//! compensation disabled the controller tracks the faulty reading instead,
//! which drives the true output to `r/alpha` under a sensitivity fault.
//!
//! A multiplicative sensitivity fault (a sensor reading `alpha * y`) is
//! realized through the additive channel as `f_s = (alpha - 1) y`, so one
//! additive fault model covers both bias and sensitivity scenarios.

use nalgebra::{DMatrix, DVector};

use crate::control::{pi_step, ControllerState};
use crate::error::{Error, Result};
use crate::sim::{integrate_step, setpoint_at, LoopDesign, Scenario};
use crate::Real;

/// Index of the controlled output channel (the pressure reading).
pub const CONTROLLED_OUTPUT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultKind<T = f64> {
    None,
    /// Sensor reads `alpha * y` (0 < alpha <= 1).
    Sensitivity { alpha: T },
    /// Sensor reads `y + value`.
    Bias { value: T },
}

/// What goes wrong with the sensor, and when.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultProfile<T = f64> {
    pub kind: FaultKind<T>,
    /// Controller iteration index at which the fault appears.
    pub onset_step: usize,
    /// Output channel the fault acts on.
    pub affected_output: usize,
}

impl<T: Real> FaultProfile<T> {
    pub fn none() -> Self {
        FaultProfile {
            kind: FaultKind::None,
            onset_step: 0,
            affected_output: CONTROLLED_OUTPUT,
        }
    }

    pub fn sensitivity(alpha: T, onset_step: usize) -> Self {
        FaultProfile {
            kind: FaultKind::Sensitivity { alpha },
            onset_step,
            affected_output: CONTROLLED_OUTPUT,
        }
    }

    pub fn bias(value: T, onset_step: usize) -> Self {
        FaultProfile {
            kind: FaultKind::Bias { value },
            onset_step,
            affected_output: CONTROLLED_OUTPUT,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self.kind {
            FaultKind::Sensitivity { alpha } => {
                if !(alpha > T::zero() && alpha <= T::one()) {
                    v.push(format!(
                        "fault alpha must lie in (0, 1] (got {alpha})"
                    ));
                }
            }
            FaultKind::Bias { value } => {
                if !value.is_finite() {
                    v.push(format!("fault bias must be finite (got {value})"));
                }
            }
            FaultKind::None => {}
        }
        v
    }

    pub fn is_none(&self) -> bool {
        matches!(self.kind, FaultKind::None)
    }
}

/// Measured value and injected fault for the affected channel at one step.
///
/// Before the onset step the sensor is healthy (`y_m = y`, `f_s = 0`); from
/// the onset on, a sensitivity fault scales the reading (`f_s = (alpha-1) y`)
/// and a bias fault shifts it.
pub fn apply_sensor_fault<T: Real>(y: T, profile: &FaultProfile<T>, step: usize) -> (T, T) {
    if step < profile.onset_step {
        return (y, T::zero());
    }
    let f_s = match profile.kind {
        FaultKind::None => T::zero(),
        FaultKind::Sensitivity { alpha } => (alpha - T::one()) * y,
        FaultKind::Bias { value } => value,
    };
    (y + f_s, f_s)
}

/// Reconfigured measurement `y_t = y_m - f_hat_s`.
pub fn compensate<T: Real>(y_m: T, f_hat_s: T) -> T {
    y_m - f_hat_s
}

/// Every signal recorded at one loop iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSignals<T = f64> {
    pub t: T,
    /// Reference.
    pub r: T,
    /// Controller error: `r - y_t` with FTC on, `r - y_m` with FTC off.
    pub e: T,
    /// Control signal (after the optional clamp).
    pub u: T,
    /// Inlet flow state.
    pub m_dot_i: T,
    /// Pressure state.
    pub p: T,
    /// True controlled output (equals `p`).
    pub y: T,
    /// Injected sensor fault (acts on the profile's `affected_output`; the
    /// shipped scenarios fault the pressure channel).
    pub f_s: T,
    /// Measured controlled output: exactly `y + f_s` whenever the fault acts
    /// on the controlled channel, plain `y` otherwise.
    pub y_m: T,
    /// Estimated fault.
    pub f_hat_s: T,
    /// Compensated output, `y_m - f_hat_s`.
    pub y_t: T,
}

/// Mutable state threaded through the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopState<T = f64> {
    /// True augmented state `[x; xi]` (plant plus measurement filter).
    pub plant: DVector<T>,
    /// Observer state `[x_hat_e; f_hat_s]`.
    pub observer: DVector<T>,
    pub controller: ControllerState<T>,
}

/// One configured closed loop: the jointly integrated truth + estimator
/// block and the discrete controller around it.
#[derive(Debug, Clone)]
pub struct ClosedLoop<T = f64> {
    /// Joint system matrix over `[x; xi; x_hat_e; f_hat_s]`.
    joint_a: DMatrix<T>,
    /// Input columns `[u, f_s]` for the joint state.
    joint_b: DMatrix<T>,
    c_plant: DMatrix<T>,
    fault: FaultProfile<T>,
    ftc_enabled: bool,
    gains: crate::control::PIGains<T>,
    clamp: Option<(T, T)>,
    setpoint: Vec<(T, T)>,
    dt: T,
    n_plant: usize,
    n_outputs: usize,
}

impl<T: Real> ClosedLoop<T> {
    /// Assemble the joint truth/observer system for a designed scenario.
    ///
    /// Truth: `[x; xi]' = A_e [x; xi] + B_e u + F_e f_s`. Observer:
    /// `x_g_hat' = (A_g - L C_g) x_g_hat + B_g u + L C_e [x; xi]`; the
    /// correction reads the true filter states continuously, so both blocks
    /// advance in one integration under zero-order-hold `u` and `f_s`.
    pub fn new(design: &LoopDesign<T>, scenario: &Scenario<T>) -> Result<Self> {
        let aug = &design.augmented;
        let obs = &design.observer;
        let ne = aug.n_states();
        let ng = ne + 1;
        let n = aug.n_plant();
        let q = aug.n_outputs();
        if scenario.fault.affected_output >= q {
            return Err(Error::Dimension(format!(
                "fault output index {} out of range for {q} outputs",
                scenario.fault.affected_output
            )));
        }

        let mut joint_a = DMatrix::zeros(ne + ng, ne + ng);
        joint_a.view_mut((0, 0), (ne, ne)).copy_from(&aug.a_e);
        joint_a
            .view_mut((ne, 0), (ng, ne))
            .copy_from(&(&obs.gain * &aug.c_e));
        joint_a
            .view_mut((ne, ne), (ng, ng))
            .copy_from(&(&obs.a_g - &obs.gain * &obs.c_g));

        let mut joint_b = DMatrix::zeros(ne + ng, 2);
        joint_b.view_mut((0, 0), (ne, 1)).copy_from(&aug.b_e);
        joint_b.view_mut((ne, 0), (ng, 1)).copy_from(&obs.b_g);
        joint_b.view_mut((0, 1), (ne, 1)).copy_from(&aug.f_e);

        Ok(ClosedLoop {
            joint_a,
            joint_b,
            c_plant: design.plant_ss.c.clone(),
            fault: scenario.fault,
            ftc_enabled: scenario.ftc_enabled,
            gains: scenario.gains,
            clamp: scenario.output_clamp,
            setpoint: scenario.setpoint.clone(),
            dt: scenario.dt,
            n_plant: n,
            n_outputs: q,
        })
    }

    pub fn initial_state(&self) -> LoopState<T> {
        let ne = self.n_plant + self.n_outputs;
        LoopState {
            plant: DVector::zeros(ne),
            observer: DVector::zeros(ne + 1),
            controller: ControllerState::new(),
        }
    }

    pub fn n_plant(&self) -> usize {
        self.n_plant
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// Signal computation for iteration `step`, without advancing anything:
    /// measure, estimate (read out), compensate, control.
    pub fn signals(&self, state: &LoopState<T>, step: usize) -> Result<(LoopSignals<T>, ControllerState<T>)> {
        let t = T::from_usize(step).unwrap() * self.dt;
        let x = state.plant.rows(0, self.n_plant);
        let y_vec = &self.c_plant * x;
        let y_ctrl = y_vec[CONTROLLED_OUTPUT];
        let y_affected = y_vec[self.fault.affected_output];
        let (_, f_s) = apply_sensor_fault(y_affected, &self.fault, step);
        // measured controlled channel: faulted only when the fault acts on it
        let y_m = if self.fault.affected_output == CONTROLLED_OUTPUT {
            y_ctrl + f_s
        } else {
            y_ctrl
        };
        let f_hat_s = state.observer[state.observer.len() - 1];
        let y_t = compensate(y_m, f_hat_s);
        let r = setpoint_at(&self.setpoint, t);
        let e = if self.ftc_enabled { r - y_t } else { r - y_m };
        let (u_raw, next_controller) = pi_step(state.controller, e, self.dt, &self.gains)?;
        let u = match self.clamp {
            Some((lo, hi)) => u_raw.clamp(lo, hi),
            None => u_raw,
        };
        Ok((
            LoopSignals {
                t,
                r,
                e,
                u,
                m_dot_i: state.plant[1.min(self.n_plant - 1)],
                p: state.plant[0],
                y: y_ctrl,
                f_s,
                y_m,
                f_hat_s,
                y_t,
            },
            next_controller,
        ))
    }

    /// Integrate truth and observer one `dt` under the step's held inputs.
    pub fn advance(
        &self,
        state: &LoopState<T>,
        signals: &LoopSignals<T>,
        next_controller: ControllerState<T>,
    ) -> Result<LoopState<T>> {
        let ne = self.n_plant + self.n_outputs;
        let mut joint = DVector::zeros(ne + ne + 1);
        joint.rows_mut(0, ne).copy_from(&state.plant);
        joint.rows_mut(ne, ne + 1).copy_from(&state.observer);
        let inputs = DVector::from_vec(vec![signals.u, signals.f_s]);
        let next = integrate_step(&self.joint_a, &self.joint_b, &joint, &inputs, self.dt)?;
        Ok(LoopState {
            plant: next.rows(0, ne).into_owned(),
            observer: next.rows(ne, ne + 1).into_owned(),
            controller: next_controller,
        })
    }
}

/// One full loop iteration: measure, estimate, compensate, control,
/// integrate. Returns the advanced states and the step's signal record.
pub fn closed_loop_step<T: Real>(
    closed: &ClosedLoop<T>,
    state: &LoopState<T>,
    step: usize,
) -> Result<(LoopState<T>, LoopSignals<T>)> {
    let (signals, next_controller) = closed.signals(state, step)?;
    let next = closed.advance(state, &signals, next_controller)?;
    Ok((next, signals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn full_sensitivity_is_identity() {
        let profile = FaultProfile::sensitivity(1.0, 0);
        for step in 0..5 {
            let (y_m, f_s) = apply_sensor_fault(352.0, &profile, step);
            assert_eq!(y_m, 352.0);
            assert_eq!(f_s, 0.0);
        }
    }

    #[test]
    fn sensitivity_085_at_reference_level() {
        let profile = FaultProfile::sensitivity(0.85, 0);
        let (y_m, f_s) = apply_sensor_fault(352.0, &profile, 0);
        assert_relative_eq!(y_m, 299.2, max_relative = 1e-12);
        assert_relative_eq!(f_s, -52.8, max_relative = 1e-12);
    }

    #[test]
    fn fault_steps_in_at_onset() {
        let profile = FaultProfile::sensitivity(0.70, 100);
        let y = 348.0;
        let (y_m, f_s) = apply_sensor_fault(y, &profile, 99);
        assert_eq!((y_m, f_s), (y, 0.0));
        let (y_m, f_s) = apply_sensor_fault(y, &profile, 100);
        assert_relative_eq!(f_s, -0.30 * y, max_relative = 1e-12);
        assert_relative_eq!(y_m, 0.70 * y, max_relative = 1e-12);
        let (_, f_s_later) = apply_sensor_fault(y, &profile, 5000);
        assert_eq!(f_s, f_s_later);
    }

    #[test]
    fn bias_fault_shifts_reading() {
        let profile = FaultProfile::bias(-20.0, 3);
        assert_eq!(apply_sensor_fault(100.0, &profile, 2), (100.0, 0.0));
        assert_eq!(apply_sensor_fault(100.0, &profile, 3), (80.0, -20.0));
    }

    #[test]
    fn compensation_identities() {
        assert_eq!(compensate(299.2, 0.0), 299.2);
        // a perfect estimate recovers the true output
        let (y, f) = (352.0, -52.8);
        assert_relative_eq!(compensate(y + f, f), y, max_relative = 1e-12);
        assert_relative_eq!(compensate(299.2, -52.8), 352.0, max_relative = 1e-12);
    }

    #[test]
    fn fault_profile_validation() {
        assert!(FaultProfile::sensitivity(1.2, 0).violations().len() == 1);
        assert!(FaultProfile::sensitivity(0.0, 0).violations().len() == 1);
        assert!(FaultProfile::bias(f64::NAN, 0).violations().len() == 1);
        assert!(FaultProfile::<f64>::none().violations().is_empty());
    }
}

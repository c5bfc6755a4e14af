//! PI(D) control law and second-order transient-response analytics.

use crate::error::{Error, Result};
use crate::{r64, Real};

/// Controller gains: `u = K_p [e + (1/T_i) int(e) + T_d de/dt]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PIGains<T = f64> {
    pub k_p: T,
    /// Integral time, s.
    pub t_i: T,
    /// Derivative time, s. The shipped scenarios all run pure PI (`t_d = 0`).
    pub t_d: T,
}

impl<T: Real> PIGains<T> {
    pub fn pi(k_p: T, t_i: T) -> Result<Self> {
        Self::pid(k_p, t_i, T::zero())
    }

    pub fn pid(k_p: T, t_i: T, t_d: T) -> Result<Self> {
        let g = PIGains { k_p, t_i, t_d };
        let v = g.violations();
        if v.is_empty() {
            Ok(g)
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !self.k_p.is_finite() {
            v.push(format!("kp must be finite (got {})", self.k_p));
        }
        if !(self.t_i > T::zero()) {
            v.push(format!("ti must be strictly positive (got {})", self.t_i));
        }
        if self.t_d < T::zero() {
            v.push(format!("td must be non-negative (got {})", self.t_d));
        }
        v
    }
}

/// Controller gains used by the shipped loop: `K_p = 0.1396`, `T_i = 0.3294`.
pub fn canonical_pi_gains<T: Real>() -> PIGains<T> {
    PIGains {
        k_p: r64(0.1396),
        t_i: r64(0.3294),
        t_d: T::zero(),
    }
}

/// Controller memory: the rectangle-rule error integral and the previous
/// error sample for the backward-difference derivative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerState<T = f64> {
    pub integral: T,
    /// `None` before the first step; the derivative term is defined as zero
    /// on the first step.
    pub previous_error: Option<T>,
}

impl<T: Real> ControllerState<T> {
    pub fn new() -> Self {
        ControllerState {
            integral: T::zero(),
            previous_error: None,
        }
    }

    pub fn reset(&mut self) {
        self.integral = T::zero();
        self.previous_error = None;
    }
}

/// One discrete controller update.
///
/// The integral accumulates `e * dt` (forward rectangle rule) before the
/// output is formed, so a single step with error `e` contributes
/// `K_p e (1 + dt/T_i)`. The derivative is the backward difference
/// `(e - e_prev)/dt`, zero on the first step.
pub fn pi_step<T: Real>(
    state: ControllerState<T>,
    error: T,
    dt: T,
    gains: &PIGains<T>,
) -> Result<(T, ControllerState<T>)> {
    if !(dt > T::zero()) {
        return Err(Error::Domain(format!("dt must be positive (got {dt})")));
    }
    let integral = state.integral + error * dt;
    let derivative = match state.previous_error {
        Some(prev) => (error - prev) / dt,
        None => T::zero(),
    };
    let u = gains.k_p * (error + integral / gains.t_i + gains.t_d * derivative);
    Ok((
        u,
        ControllerState {
            integral,
            previous_error: Some(error),
        },
    ))
}

/// Underdamped second-order design point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientSpec<T = f64> {
    /// Damping ratio, 0 < zeta < 1.
    pub zeta: T,
    /// Natural frequency, rad/s.
    pub omega_n: T,
}

impl<T: Real> TransientSpec<T> {
    pub fn new(zeta: T, omega_n: T) -> Result<Self> {
        if !(zeta > T::zero() && zeta < T::one()) {
            return Err(Error::Domain(format!(
                "transient formulas require an underdamped system, 0 < zeta < 1 (got {zeta})"
            )));
        }
        if !(omega_n > T::zero()) {
            return Err(Error::Domain(format!(
                "natural frequency must be positive (got {omega_n})"
            )));
        }
        Ok(TransientSpec { zeta, omega_n })
    }

    /// Damped frequency `omega_n sqrt(1 - zeta^2)`, rad/s.
    pub fn omega_d(&self) -> T {
        self.omega_n * (T::one() - self.zeta * self.zeta).sqrt()
    }

    /// Decay rate `zeta omega_n`, 1/s.
    pub fn sigma(&self) -> T {
        self.zeta * self.omega_n
    }
}

/// Closed-form transient metrics of an underdamped second-order step
/// response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientMetrics<T = f64> {
    /// Rise time `(pi - beta)/omega_d` with `beta = atan(omega_d/sigma)`, s.
    pub t_r: T,
    /// Peak time `pi/omega_d`, s.
    pub t_p: T,
    /// 2% settling time `4/sigma`, s.
    pub t_s_2pct: T,
    /// 5% settling time `3/sigma`, s.
    pub t_s_5pct: T,
    /// Maximum overshoot `exp(-(sigma/omega_d) pi)`, percent.
    pub m_p_percent: T,
}

pub fn transient_metrics<T: Real>(spec: &TransientSpec<T>) -> TransientMetrics<T> {
    let omega_d = spec.omega_d();
    let sigma = spec.sigma();
    let beta = (omega_d / sigma).atan();
    TransientMetrics {
        t_r: (T::pi() - beta) / omega_d,
        t_p: T::pi() / omega_d,
        t_s_2pct: r64::<T>(4.0) / sigma,
        t_s_5pct: r64::<T>(3.0) / sigma,
        m_p_percent: (-(sigma / omega_d) * T::pi()).exp() * r64(100.0),
    }
}

/// Step-response metrics measured from a sampled trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredResponse<T = f64> {
    /// 10%-to-90% rise time (levels referenced to the final value), s.
    pub t_r: T,
    /// Time of the maximum, s.
    pub t_p: T,
    /// Last time the signal sits outside the +-2% band around the final
    /// value, s. Zero when it never leaves the band.
    pub t_s_2pct: T,
    /// Observed overshoot `(max - final)/final`, percent; zero for monotone
    /// responses.
    pub m_p_percent: T,
    /// Final sample.
    pub final_value: T,
}

/// Empirical counterpart of [`transient_metrics`] for validating simulated
/// loops.
///
/// Returns `None` when the output never reaches 10% of the setpoint, rather
/// than fabricating metrics.
pub fn measure_step_response<T: Real>(
    t: &[T],
    y: &[T],
    setpoint: T,
) -> Result<Option<MeasuredResponse<T>>> {
    if t.is_empty() || t.len() != y.len() {
        return Err(Error::Dimension(format!(
            "need matching non-empty samples (got {} times, {} values)",
            t.len(),
            y.len()
        )));
    }
    if setpoint == T::zero() {
        return Err(Error::Domain("setpoint must be nonzero".into()));
    }
    let sign = if setpoint > T::zero() { T::one() } else { -T::one() };
    if !y.iter().any(|&v| v * sign >= r64::<T>(0.1) * setpoint * sign) {
        return Ok(None);
    }
    let final_value = y[y.len() - 1];
    let level = |frac: f64| r64::<T>(frac) * final_value;
    let first_crossing = |threshold: T| {
        t.iter()
            .zip(y)
            .find(|(_, &v)| v * sign >= threshold * sign)
            .map(|(&time, _)| time)
    };
    let t10 = first_crossing(level(0.1));
    let t90 = first_crossing(level(0.9));
    let t_r = match (t10, t90) {
        (Some(a), Some(b)) => b - a,
        _ => return Ok(None),
    };
    let (i_max, &y_max) = y
        .iter()
        .enumerate()
        .max_by(|a, b| (*a.1 * sign).partial_cmp(&(*b.1 * sign)).unwrap())
        .expect("non-empty");
    let band = r64::<T>(0.02) * final_value.abs();
    let t_s = t
        .iter()
        .zip(y)
        .rev()
        .find(|(_, &v)| (v - final_value).abs() > band)
        .map(|(&time, _)| time)
        .unwrap_or(T::zero());
    let overshoot = ((y_max - final_value) / final_value).max(T::zero()) * r64(100.0);
    Ok(Some(MeasuredResponse {
        t_r,
        t_p: t[i_max],
        t_s_2pct: t_s,
        m_p_percent: overshoot,
        final_value,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_error_gives_zero_output() {
        let gains = canonical_pi_gains::<f64>();
        let mut state = ControllerState::new();
        for _ in 0..50 {
            let (u, next) = pi_step(state, 0.0, 0.01, &gains).unwrap();
            assert_eq!(u, 0.0);
            state = next;
        }
    }

    #[test]
    fn rectangle_rule_accumulation() {
        // Kp = Ti = 1, e = 1, dt = 0.1: after 10 steps u = 1 + 1.0.
        let gains = PIGains::pi(1.0, 1.0).unwrap();
        let mut state = ControllerState::new();
        let mut u = 0.0;
        for _ in 0..10 {
            let (out, next) = pi_step(state, 1.0, 0.1, &gains).unwrap();
            u = out;
            state = next;
        }
        assert_relative_eq!(u, 2.0, max_relative = 1e-12);
        assert_relative_eq!(state.integral, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn first_step_with_canonical_gains() {
        let gains = canonical_pi_gains::<f64>();
        let (u, _) = pi_step(ControllerState::new(), 1.0, 0.01, &gains).unwrap();
        assert_relative_eq!(u, 0.1438380085003036, max_relative = 1e-12);
    }

    #[test]
    fn derivative_is_zero_on_first_step() {
        let gains = PIGains::pid(1.0, 1e9, 1.0).unwrap();
        let (u1, state) = pi_step(ControllerState::new(), 5.0, 0.1, &gains).unwrap();
        // no derivative kick: u = e (+ negligible integral)
        assert_relative_eq!(u1, 5.0, max_relative = 1e-6);
        let (u2, _) = pi_step(state, 6.0, 0.1, &gains).unwrap();
        assert_relative_eq!(u2, 6.0 + (6.0 - 5.0) / 0.1, max_relative = 1e-6);
    }

    #[test]
    fn reset_clears_memory() {
        let gains = canonical_pi_gains::<f64>();
        let (_, mut state) = pi_step(ControllerState::new(), 1.0, 0.1, &gains).unwrap();
        state.reset();
        assert_eq!(state.integral, 0.0);
        assert_eq!(state.previous_error, None);
    }

    #[test]
    fn invalid_gains_and_dt_rejected() {
        assert!(PIGains::pi(1.0, 0.0).is_err());
        assert!(PIGains::pid(1.0, 1.0, -0.1).is_err());
        assert!(PIGains::pi(f64::NAN, 1.0).is_err());
        let gains = canonical_pi_gains::<f64>();
        assert!(pi_step(ControllerState::new(), 1.0, 0.0, &gains).is_err());
    }

    proptest! {
        // with T_d = 0 the controller is exactly linear in (error, integral)
        #[test]
        fn pi_is_linear(
            e1 in -100.0f64..100.0,
            e2 in -100.0f64..100.0,
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
            acc1 in -10.0f64..10.0,
            acc2 in -10.0f64..10.0,
        ) {
            let gains = canonical_pi_gains::<f64>();
            let dt = 0.01;
            let state = |acc: f64| ControllerState { integral: acc, previous_error: None };
            let (u1, _) = pi_step(state(acc1), e1, dt, &gains).unwrap();
            let (u2, _) = pi_step(state(acc2), e2, dt, &gains).unwrap();
            let (u12, _) = pi_step(state(a * acc1 + b * acc2), a * e1 + b * e2, dt, &gains).unwrap();
            prop_assert!((u12 - (a * u1 + b * u2)).abs() < 1e-9);
        }

        // the accumulator after n equal steps is n*dt*e (exact up to
        // floating-point association of the repeated sum)
        #[test]
        fn integral_accumulates_exactly(n in 1usize..200, e in -50.0f64..50.0) {
            let gains = PIGains::pi(1.0, 1.0).unwrap();
            let dt = 0.5; // exactly representable
            let mut state = ControllerState::new();
            for _ in 0..n {
                let (_, next) = pi_step(state, e, dt, &gains).unwrap();
                state = next;
            }
            let expected = n as f64 * dt * e;
            prop_assert!((state.integral - expected).abs() <= 1e-12 * expected.abs());
        }

        // binary-exact error values accumulate with no rounding at all
        #[test]
        fn integral_accumulates_bit_exactly(n in 1usize..200, k in -64i32..64) {
            let e = k as f64 * 0.25;
            let gains = PIGains::pi(1.0, 1.0).unwrap();
            let mut state = ControllerState::new();
            for _ in 0..n {
                let (_, next) = pi_step(state, e, 0.5, &gains).unwrap();
                state = next;
            }
            prop_assert_eq!(state.integral, n as f64 * 0.5 * e);
        }
    }

    #[test]
    fn transient_metrics_reference_point() {
        let spec = TransientSpec::new(0.5, 2.0).unwrap();
        let m = transient_metrics(&spec);
        assert_relative_eq!(spec.omega_d(), 3.0f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(m.t_r, 1.2091995761561454, epsilon = 1e-12);
        assert_relative_eq!(m.t_p, 1.8137993642342178, epsilon = 1e-12);
        assert_relative_eq!(m.t_s_2pct, 4.0, epsilon = 1e-12);
        assert_relative_eq!(m.t_s_5pct, 3.0, epsilon = 1e-12);
        assert_relative_eq!(m.m_p_percent, 16.30335348215804, epsilon = 1e-10);
    }

    #[test]
    fn overshoot_at_sigma_equal_omega_d() {
        // zeta = sqrt(2)/2 makes sigma = omega_d, so M_p = e^-pi.
        let spec = TransientSpec::new(std::f64::consts::FRAC_1_SQRT_2, 3.0).unwrap();
        let m = transient_metrics(&spec);
        assert_relative_eq!(m.m_p_percent, 4.3213918263772255, epsilon = 1e-10);
    }

    #[test]
    fn settling_time_ratio_is_four_thirds() {
        for (zeta, omega_n) in [(0.1, 0.5), (0.5, 2.0), (0.9, 40.0)] {
            let m = transient_metrics(&TransientSpec::new(zeta, omega_n).unwrap());
            assert_relative_eq!(m.t_s_2pct / m.t_s_5pct, 4.0 / 3.0, max_relative = 1e-14);
            assert!(m.t_r > 0.0 && m.t_p > 0.0 && m.m_p_percent > 0.0);
        }
    }

    #[test]
    fn overshoot_decreases_with_damping() {
        let mut last = f64::INFINITY;
        for zeta in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let m = transient_metrics(&TransientSpec::new(zeta, 2.0).unwrap());
            assert!(m.m_p_percent < last);
            last = m.m_p_percent;
        }
    }

    #[test]
    fn overdamped_spec_rejected() {
        assert!(TransientSpec::new(1.0, 2.0).is_err());
        assert!(TransientSpec::new(1.5, 2.0).is_err());
        assert!(TransientSpec::new(0.5, 0.0).is_err());
    }

    #[test]
    fn measured_response_on_flat_trace() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let y = vec![5.0; 100];
        let m = measure_step_response(&t, &y, 5.0).unwrap().unwrap();
        assert_eq!(m.m_p_percent, 0.0);
        assert_eq!(m.t_s_2pct, 0.0);
    }

    #[test]
    fn monotone_first_order_has_no_overshoot() {
        let t: Vec<f64> = (0..5000).map(|i| i as f64 * 0.01).collect();
        let y: Vec<f64> = t.iter().map(|&ti| 5.0 * (1.0 - (-ti).exp())).collect();
        let m = measure_step_response(&t, &y, 5.0).unwrap().unwrap();
        assert_eq!(m.m_p_percent, 0.0);
        assert!(m.t_r > 0.0);
    }

    #[test]
    fn dead_output_reports_absent_metrics() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y = vec![0.01; 10];
        assert!(measure_step_response(&t, &y, 348.0).unwrap().is_none());
    }
}

//! Fixed-step integration and scenario execution.
//!
//! Everything is deterministic: a scenario run is a pure function of the
//! `Scenario` value, and identical scenarios produce bit-identical traces.

use nalgebra::{Complex, DMatrix, DVector};

use crate::control::PIGains;
use crate::error::{Error, Result};
use crate::ftc::{ClosedLoop, FaultProfile};
use crate::model::{
    canonical_plant, canonical_valve, plant_state_space, scrubber_tf, stroke_fraction,
    valve_gain, valve_time_constant, FirstOrderTF, PhysicalPlantParams, StateSpace,
};
use crate::observer::{augment, AugmentedSystem, ObserverDesign};
use crate::{r64, Real};

/// Classical 4th-order Runge-Kutta step of `x' = A x + B u` under
/// zero-order-hold input.
///
/// Trips the instability guard (an error) if the advanced state is not
/// finite; callers in a scenario loop re-stamp the error with step and time.
pub fn integrate_step<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    x: &DVector<T>,
    u: &DVector<T>,
    dt: T,
) -> Result<DVector<T>> {
    let n = a.nrows();
    if a.ncols() != n || x.len() != n || b.nrows() != n || b.ncols() != u.len() {
        return Err(Error::Dimension(format!(
            "integrate_step shapes disagree: A {}x{}, B {}x{}, x {}, u {}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            x.len(),
            u.len()
        )));
    }
    if !(dt > T::zero()) {
        return Err(Error::Domain(format!("dt must be positive (got {dt})")));
    }
    let half = dt / r64(2.0);
    let sixth = dt / r64(6.0);
    let two = r64::<T>(2.0);
    let bu = b * u;
    let k1 = a * x + &bu;
    let k2 = a * (x + &k1 * half) + &bu;
    let k3 = a * (x + &k2 * half) + &bu;
    let k4 = a * (x + &k3 * dt) + &bu;
    let next = x + (k1 + k2 * two + k3 * two + k4) * sixth;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Instability {
            step: 0,
            time: 0.0,
            detail: "integration produced a non-finite state".into(),
        });
    }
    Ok(next)
}

/// Steady-state output per unit constant input, `-C A^(-1) B`.
pub fn dc_gain<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, c: &DMatrix<T>) -> Result<DMatrix<T>> {
    let solved = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("A is singular; no unique steady state".into()))?;
    Ok(-(c * solved))
}

/// Where the numeric plant constants come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource<T = f64> {
    /// Constants identified on the plant (the validated ground truth).
    Canonical,
    /// Constants evaluated from physical vessel and instrument parameters.
    Physical(PhysicalModelSpec<T>),
}

impl<T> ModelSource<T> {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSource::Canonical => "canonical",
            ModelSource::Physical(_) => "physical",
        }
    }
}

/// Physical inputs for the second construction path.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalModelSpec<T = f64> {
    pub plant: PhysicalPlantParams<T>,
    /// Valve flow span, mmscfd.
    pub gas_span: (T, T),
    /// I/P converter pneumatic span, psi.
    pub ip_out_span_psi: (T, T),
    /// I/P converter current span, mA.
    pub ip_in_span_ma: (T, T),
    /// Valve full stroking time, s.
    pub stroke_time: T,
    /// Inherent-time over stroke ratio.
    pub stroke_ratio: T,
}

impl<T: Real> Default for PhysicalModelSpec<T> {
    fn default() -> Self {
        PhysicalModelSpec {
            plant: PhysicalPlantParams::default(),
            gas_span: (r64(12.0), r64(16.0)),
            ip_out_span_psi: (r64(3.0), r64(15.0)),
            ip_in_span_ma: (r64(4.0), r64(20.0)),
            // stroke time implied by the canonical valve lag at a 0.25
            // stroke fraction and 0.03 inherent-time ratio
            stroke_time: r64(0.9000576036866359),
            stroke_ratio: r64(0.03),
        }
    }
}

/// The two element models the loop is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel<T = f64> {
    pub scrubber: FirstOrderTF<T>,
    pub valve: FirstOrderTF<T>,
    pub source_name: &'static str,
}

impl<T: Real> PlantModel<T> {
    pub fn state_space(&self) -> StateSpace<T> {
        plant_state_space(&self.scrubber, &self.valve)
    }
}

/// Build the element models for a source.
pub fn build_model<T: Real>(source: &ModelSource<T>) -> Result<PlantModel<T>> {
    match source {
        ModelSource::Canonical => Ok(PlantModel {
            scrubber: canonical_plant(),
            valve: canonical_valve(),
            source_name: source.name(),
        }),
        ModelSource::Physical(spec) => {
            let scrubber = scrubber_tf(&spec.plant)?;
            let gain = valve_gain(spec.gas_span, spec.ip_out_span_psi, spec.ip_in_span_ma)?;
            let delta_v = stroke_fraction(spec.gas_span.1, spec.gas_span.0)?;
            let tau = valve_time_constant(spec.stroke_time, delta_v, spec.stroke_ratio)?;
            Ok(PlantModel {
                scrubber,
                valve: FirstOrderTF::new(gain, tau)?,
                source_name: source.name(),
            })
        }
    }
}

/// Complete scenario description; `run_scenario` is a pure function of this.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T = f64> {
    /// Run length, s.
    pub duration: T,
    /// Fixed step, s.
    pub dt: T,
    /// Piecewise-constant reference: `(time_s, value)` knots, earliest first.
    pub setpoint: Vec<(T, T)>,
    pub fault: FaultProfile<T>,
    pub ftc_enabled: bool,
    pub gains: PIGains<T>,
    pub model: ModelSource<T>,
    pub observer_poles: Vec<Complex<T>>,
    /// Diagonal of the measurement-filter matrix `Phi`.
    pub filter_diag: Vec<T>,
    /// Optional control-signal clamp `(min, max)`.
    pub output_clamp: Option<(T, T)>,
}

impl<T: Real> Scenario<T> {
    /// Defaults shared by the shipped scenarios: canonical model and gains,
    /// reference step to the linearization pressure, default estimator poles.
    pub fn baseline(duration: f64) -> Self {
        Scenario {
            duration: r64(duration),
            dt: r64(1e-3),
            setpoint: vec![(T::zero(), r64(348.091))],
            fault: FaultProfile::none(),
            ftc_enabled: true,
            gains: crate::control::canonical_pi_gains(),
            model: ModelSource::Canonical,
            observer_poles: crate::observer::default_observer_poles(),
            filter_diag: vec![T::one(), T::one()],
            output_clamp: None,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.duration > T::zero()) {
            v.push(format!("duration must be positive (got {})", self.duration));
        }
        if !(self.dt > T::zero()) {
            v.push(format!("dt must be positive (got {})", self.dt));
        }
        if self.dt > self.duration && self.duration > T::zero() {
            v.push(format!(
                "dt ({}) must not exceed the duration ({})",
                self.dt, self.duration
            ));
        }
        let mut last = T::zero();
        for (i, &(time, value)) in self.setpoint.iter().enumerate() {
            if time < T::zero() || time > self.duration {
                v.push(format!(
                    "setpoint knot {i} at t = {time} lies outside [0, {}]",
                    self.duration
                ));
            }
            if i > 0 && time < last {
                v.push(format!(
                    "setpoint times must be non-decreasing (knot {i} at {time} after {last})"
                ));
            }
            if !value.is_finite() {
                v.push(format!("setpoint knot {i} value is not finite"));
            }
            last = time;
        }
        v.extend(self.fault.violations());
        v.extend(self.gains.violations());
        if self.observer_poles.is_empty() {
            v.push("observer pole list must not be empty".into());
        }
        for pole in &self.observer_poles {
            if pole.re >= T::zero() {
                v.push(format!(
                    "observer pole {} + {}i is not strictly stable",
                    pole.re, pole.im
                ));
            }
        }
        if self.filter_diag.is_empty() {
            v.push("filter diagonal must not be empty".into());
        }
        for (i, &phi) in self.filter_diag.iter().enumerate() {
            if !(phi > T::zero()) {
                v.push(format!(
                    "filter diagonal entry {i} must be strictly positive (got {phi})"
                ));
            }
        }
        if let Some((lo, hi)) = self.output_clamp {
            if !(lo < hi) {
                v.push(format!("output clamp must satisfy min < max (got {lo}, {hi})"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Number of integration intervals; the trace carries one more row.
    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt)
            .floor()
            .to_usize()
            .unwrap_or(usize::MAX)
    }

    /// Order-independent content hash for trace provenance.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.f(self.duration);
        h.f(self.dt);
        for &(t, v) in &self.setpoint {
            h.f(t);
            h.f(v);
        }
        match self.fault.kind {
            crate::ftc::FaultKind::None => h.tag("none"),
            crate::ftc::FaultKind::Sensitivity { alpha } => {
                h.tag("sensitivity");
                h.f(alpha);
            }
            crate::ftc::FaultKind::Bias { value } => {
                h.tag("bias");
                h.f(value);
            }
        }
        h.u(self.fault.onset_step as u64);
        h.u(self.fault.affected_output as u64);
        h.u(self.ftc_enabled as u64);
        h.f(self.gains.k_p);
        h.f(self.gains.t_i);
        h.f(self.gains.t_d);
        match &self.model {
            ModelSource::Canonical => h.tag("canonical"),
            ModelSource::Physical(p) => {
                h.tag("physical");
                for v in [
                    p.plant.volume,
                    p.plant.diameter,
                    p.plant.height,
                    p.plant.area,
                    p.plant.rho_in,
                    p.plant.rho_out,
                    p.plant.h_in,
                    p.plant.h_out,
                    p.plant.gravity,
                    p.plant.outflow_coeff,
                    p.plant.p_operating,
                    p.gas_span.0,
                    p.gas_span.1,
                    p.ip_out_span_psi.0,
                    p.ip_out_span_psi.1,
                    p.ip_in_span_ma.0,
                    p.ip_in_span_ma.1,
                    p.stroke_time,
                    p.stroke_ratio,
                ] {
                    h.f(v);
                }
            }
        }
        for pole in &self.observer_poles {
            h.f(pole.re);
            h.f(pole.im);
        }
        for &phi in &self.filter_diag {
            h.f(phi);
        }
        if let Some((lo, hi)) = self.output_clamp {
            h.tag("clamp");
            h.f(lo);
            h.f(hi);
        }
        h.finish()
    }
}

// FNV-1a over the exact bit patterns of the scenario fields.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn u(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn f<T: Real>(&mut self, v: T) {
        self.u(v.to_f64().unwrap_or(f64::NAN).to_bits());
    }
    fn tag(&mut self, s: &str) {
        for &b in s.as_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Reference value at time `t`: the latest knot not after `t`, zero before
/// the first knot.
pub fn setpoint_at<T: Real>(profile: &[(T, T)], t: T) -> T {
    let mut value = T::zero();
    for &(time, v) in profile {
        if time <= t {
            value = v;
        } else {
            break;
        }
    }
    value
}

/// Everything derived from a scenario before stepping: models, augmentation
/// and the placed estimator.
#[derive(Debug, Clone)]
pub struct LoopDesign<T = f64> {
    pub model: PlantModel<T>,
    pub plant_ss: StateSpace<T>,
    pub augmented: AugmentedSystem<T>,
    pub observer: ObserverDesign<T>,
}

/// Build models, augment, and place the estimator for a scenario.
pub fn design_loop<T: Real>(scenario: &Scenario<T>) -> Result<LoopDesign<T>> {
    scenario.validate()?;
    let model = build_model(&scenario.model)?;
    let plant_ss = model
        .state_space()
        .with_fault_on_output(scenario.fault.affected_output)?;
    if scenario.filter_diag.len() != plant_ss.n_outputs() {
        return Err(Error::Dimension(format!(
            "filter diagonal needs {} entries (got {})",
            plant_ss.n_outputs(),
            scenario.filter_diag.len()
        )));
    }
    let phi = DMatrix::from_diagonal(&DVector::from_vec(scenario.filter_diag.clone()));
    let augmented = augment(&plant_ss, &phi)?;
    let observer = ObserverDesign::new(&augmented, &scenario.observer_poles)?;
    Ok(LoopDesign {
        model,
        plant_ss,
        augmented,
        observer,
    })
}

/// One logged step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow<T = f64> {
    pub signals: crate::ftc::LoopSignals<T>,
    /// Observer augmented-state estimate `[x_hat; xi_hat]`.
    pub x_hat_e: Vec<T>,
    /// True filter states, kept for residual diagnostics.
    pub xi: Vec<T>,
}

impl<T: Real> TraceRow<T> {
    /// Norm of the measurement residual `y_e - y_e_hat = xi - xi_hat`.
    pub fn residual_norm(&self) -> T {
        let n_plant = self.x_hat_e.len() - self.xi.len();
        self.xi
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &v)| {
                let d = v - self.x_hat_e[n_plant + i];
                acc + d * d
            })
            .sqrt()
    }
}

/// Run provenance recorded alongside the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub scenario_hash: u64,
    pub model_source: &'static str,
    pub k_s: f64,
    pub tau_s: f64,
    pub k_v: f64,
    pub tau_v: f64,
    pub ftc_enabled: bool,
    pub fault_onset_time: Option<f64>,
    /// Sensitivity factor when the run injects a sensitivity fault.
    pub fault_alpha: Option<f64>,
    pub fault_desc: String,
}

/// Uniform-grid record of a complete run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<T = f64> {
    pub dt: T,
    pub rows: Vec<TraceRow<T>>,
    pub meta: TraceMeta,
}

impl<T: Real> Trace<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn times(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.signals.t).collect()
    }

    pub fn pressure(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.signals.y).collect()
    }

    pub fn reference(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.signals.r).collect()
    }

    pub fn fault_estimate(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.signals.f_hat_s).collect()
    }

    pub fn fault(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.signals.f_s).collect()
    }

    pub fn residual_norms(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.residual_norm()).collect()
    }

    /// Mean of the last `fraction` of a signal; the steady-state estimator
    /// used by reports.
    pub fn tail_mean(values: &[T], fraction: f64) -> T {
        let n = values.len();
        let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        let slice = &values[n - take..];
        let sum = slice.iter().fold(T::zero(), |a, &b| a + b);
        sum / T::from_usize(slice.len()).unwrap()
    }
}

/// Execute a scenario: design, then iterate measure -> estimate ->
/// compensate -> control -> integrate, logging every step.
pub fn run_scenario<T: Real>(scenario: &Scenario<T>) -> Result<Trace<T>> {
    let design = design_loop(scenario)?;
    run_designed(scenario, &design)
}

/// Execute with an existing design (lets callers reuse one placement across
/// FTC-on/off variants of the same scenario).
pub fn run_designed<T: Real>(scenario: &Scenario<T>, design: &LoopDesign<T>) -> Result<Trace<T>> {
    scenario.validate()?;
    let closed = ClosedLoop::new(design, scenario)?;
    let n_steps = scenario.n_steps();
    let n_plant = design.augmented.n_plant();
    let q = design.augmented.n_outputs();
    let mut rows = Vec::with_capacity(n_steps + 1);
    let mut state = closed.initial_state();
    for step in 0..=n_steps {
        let (signals, next_controller) = closed.signals(&state, step)?;
        rows.push(TraceRow {
            signals,
            x_hat_e: state.observer.as_slice()[..n_plant + q].to_vec(),
            xi: state.plant.as_slice()[n_plant..].to_vec(),
        });
        if step < n_steps {
            state = closed
                .advance(&state, &signals, next_controller)
                .map_err(|e| stamp_instability(e, step, scenario.dt))?;
        }
    }
    let meta = TraceMeta {
        scenario_hash: scenario.fingerprint(),
        model_source: design.model.source_name,
        k_s: design.model.scrubber.gain.to_f64().unwrap_or(f64::NAN),
        tau_s: design.model.scrubber.tau.to_f64().unwrap_or(f64::NAN),
        k_v: design.model.valve.gain.to_f64().unwrap_or(f64::NAN),
        tau_v: design.model.valve.tau.to_f64().unwrap_or(f64::NAN),
        ftc_enabled: scenario.ftc_enabled,
        fault_onset_time: if scenario.fault.is_none() {
            None
        } else {
            Some(scenario.fault.onset_step as f64 * scenario.dt.to_f64().unwrap_or(f64::NAN))
        },
        fault_alpha: match scenario.fault.kind {
            crate::ftc::FaultKind::Sensitivity { alpha } => alpha.to_f64(),
            _ => None,
        },
        fault_desc: describe_fault(&scenario.fault, scenario.dt),
    };
    Ok(Trace {
        dt: scenario.dt,
        rows,
        meta,
    })
}

/// Human-readable fault summary with the onset time spelled out in seconds.
pub fn describe_fault<T: Real>(fault: &FaultProfile<T>, dt: T) -> String {
    let onset = || {
        format!(
            "from step {} (t = {:.4} s)",
            fault.onset_step,
            fault.onset_step as f64 * dt.to_f64().unwrap_or(f64::NAN)
        )
    };
    match fault.kind {
        crate::ftc::FaultKind::None => "none".to_string(),
        crate::ftc::FaultKind::Sensitivity { alpha } => format!(
            "sensitivity alpha = {} on output {} {}",
            alpha,
            fault.affected_output,
            onset()
        ),
        crate::ftc::FaultKind::Bias { value } => format!(
            "bias {} psi on output {} {}",
            value,
            fault.affected_output,
            onset()
        ),
    }
}

fn stamp_instability<T: Real>(e: Error, step: usize, dt: T) -> Error {
    match e {
        Error::Instability { detail, .. } => Error::Instability {
            step,
            time: step as f64 * dt.to_f64().unwrap_or(f64::NAN),
            detail,
        },
        other => other,
    }
}

/// One row of the open-loop steady-state table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenLoopRow<T = f64> {
    pub input: T,
    pub simulated: T,
    pub reference: Option<T>,
    /// `(simulated - reference) / reference * 100`.
    pub percent_error: Option<T>,
}

/// Percent deviation of `value` from `reference`.
pub fn percent_error<T: Real>(reference: T, value: T) -> T {
    (value - reference) / reference * r64(100.0)
}

/// Simulate each constant input to steady state and tabulate the final
/// pressure, optionally against a reference column.
pub fn open_loop_table<T: Real>(
    inputs: &[T],
    model: &PlantModel<T>,
    reference: Option<&[T]>,
) -> Result<Vec<OpenLoopRow<T>>> {
    if let Some(r) = reference {
        if r.len() != inputs.len() {
            return Err(Error::Dimension(format!(
                "reference column has {} entries for {} inputs",
                r.len(),
                inputs.len()
            )));
        }
    }
    let ss = model.state_space();
    let dt = r64::<T>(1e-3);
    let horizon = model.scrubber.tau.max(model.valve.tau) * r64(20.0);
    let steps = (horizon / dt)
        .ceil()
        .to_usize()
        .ok_or_else(|| Error::Domain("open-loop horizon overflow".into()))?;
    let mut rows = Vec::with_capacity(inputs.len());
    for (i, &input) in inputs.iter().enumerate() {
        let u = DVector::from_element(1, input);
        let mut x = DVector::zeros(ss.n_states());
        for step in 0..steps {
            x = integrate_step(&ss.a, &ss.b, &x, &u, dt)
                .map_err(|e| stamp_instability(e, step, dt))?;
        }
        let simulated = x[0];
        let reference_value = reference.map(|r| r[i]);
        rows.push(OpenLoopRow {
            input,
            simulated,
            reference: reference_value,
            percent_error: reference_value.map(|r| percent_error(r, simulated)),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rk4_is_exact_for_constant_derivative() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::identity(2, 2);
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let u = DVector::from_vec(vec![3.0, 0.5]);
        let next = integrate_step(&a, &b, &x, &u, 0.25).unwrap();
        assert_eq!(next, DVector::from_vec(vec![1.75, -1.875]));
    }

    #[test]
    fn rk4_scalar_decay_matches_series() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let b = DMatrix::zeros(1, 1);
        let x = DVector::from_element(1, 1.0);
        let u = DVector::zeros(1);
        let next = integrate_step(&a, &b, &x, &u, 0.1).unwrap();
        assert_relative_eq!(next[0], 0.9048375, epsilon = 1e-15);
        assert!((next[0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_guard_trips_on_overflow() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::zeros(1, 1);
        let u = DVector::zeros(1);
        let mut x = DVector::from_element(1, f64::MAX / 4.0);
        let mut tripped = false;
        for _ in 0..10 {
            match integrate_step(&a, &b, &x, &u, 1.0) {
                Ok(next) => x = next,
                Err(Error::Instability { .. }) => {
                    tripped = true;
                    break;
                }
                Err(other) => panic!("unexpected error {other}"),
            }
        }
        assert!(tripped);
    }

    #[test]
    fn rk4_rejects_shape_mismatch() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(2, 1);
        let x = DVector::zeros(3);
        let u = DVector::zeros(1);
        assert!(integrate_step(&a, &b, &x, &u, 0.1).is_err());
    }

    #[test]
    fn canonical_eigenvalues_sit_inside_rk4_stability_region() {
        // fastest estimator pole at dt = 1e-3 gives |lambda| dt ~ 0.064,
        // far inside the RK4 region (|lambda dt| < 2.78 on the real axis).
        let poles = crate::observer::default_observer_poles::<f64>();
        let dt = 1e-3;
        let worst = poles
            .iter()
            .map(|p| (p.re * p.re + p.im * p.im).sqrt() * dt)
            .fold(0.0f64, f64::max);
        assert!(worst < 0.1, "|lambda| dt = {worst}");
    }

    #[test]
    fn dc_gain_canonical_values() {
        let ss = build_model(&ModelSource::<f64>::Canonical)
            .unwrap()
            .state_space();
        let gain = dc_gain(&ss.a, &ss.b, &ss.c).unwrap();
        assert_relative_eq!(gain[(0, 0)], 13.803482587064675, max_relative = 1e-12);
        assert_relative_eq!(gain[(1, 0)], 0.25, max_relative = 1e-12);
    }

    #[test]
    fn dc_gain_identity_and_singular_cases() {
        let i = DMatrix::<f64>::identity(3, 3);
        let gain = dc_gain(&(-i.clone()), &i, &i).unwrap();
        assert_relative_eq!((gain - DMatrix::identity(3, 3)).abs().max(), 0.0, epsilon = 1e-14);
        let singular = DMatrix::<f64>::zeros(2, 2);
        assert!(matches!(
            dc_gain(&singular, &DMatrix::identity(2, 2), &DMatrix::identity(2, 2)),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn open_loop_settles_to_dc_gain() {
        let model = build_model(&ModelSource::<f64>::Canonical).unwrap();
        let rows = open_loop_table(&[1.0, 25.0], &model, None).unwrap();
        for row in rows {
            let expected = 13.803482587064675 * row.input;
            assert!(
                ((row.simulated - expected) / expected).abs() < 1e-3,
                "input {}: {} vs {}",
                row.input,
                row.simulated,
                expected
            );
        }
    }

    #[test]
    fn step_response_settles_within_ten_time_constants() {
        // pressure reaches K_s K_v u within 0.1% once 10 max(tau_s, tau_v)
        // have elapsed
        let model = build_model(&ModelSource::<f64>::Canonical).unwrap();
        let ss = model.state_space();
        let u = DVector::from_element(1, 2.0);
        let dt = 1e-3;
        let horizon = 10.0 * model.scrubber.tau.max(model.valve.tau);
        let mut x = DVector::zeros(2);
        for _ in 0..(horizon / dt) as usize {
            x = integrate_step(&ss.a, &ss.b, &x, &u, dt).unwrap();
        }
        let target = 13.803482587064675 * u[0];
        assert!(
            ((x[0] - target) / target).abs() < 1e-3,
            "pressure {} vs {}",
            x[0],
            target
        );
    }

    #[test]
    fn measurement_bookkeeping_identity_holds_bitwise() {
        let mut s = Scenario::<f64>::baseline(1.0);
        s.fault = FaultProfile::sensitivity(0.85, 100);
        let trace = run_scenario(&s).unwrap();
        for row in &trace.rows {
            assert_eq!(row.signals.y_m, row.signals.y + row.signals.f_s);
            assert_eq!(row.signals.y_t, row.signals.y_m - row.signals.f_hat_s);
        }
    }

    #[test]
    fn fault_free_estimate_stays_negligible() {
        // with no fault injected the estimator never invents one
        let s = Scenario::<f64>::baseline(5.0);
        let trace = run_scenario(&s).unwrap();
        let worst = trace
            .fault_estimate()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-6 * 348.091, "max |f_hat| = {worst}");
    }

    #[test]
    fn percent_error_matches_reference_arithmetic() {
        let e: f64 = percent_error(346.113, 349.6);
        assert!((e - 1.01).abs() < 0.005, "{e}");
        assert_eq!(percent_error::<f64>(123.4, 123.4), 0.0);
    }

    #[test]
    fn setpoint_lookup() {
        let profile = vec![(0.0, 10.0), (5.0, 20.0)];
        assert_eq!(setpoint_at(&profile, 0.0), 10.0);
        assert_eq!(setpoint_at(&profile, 4.999), 10.0);
        assert_eq!(setpoint_at(&profile, 5.0), 20.0);
        assert_eq!(setpoint_at(&[(1.0, 7.0)], 0.5), 0.0);
    }

    #[test]
    fn scenario_validation_collects_all_violations() {
        let mut s = Scenario::<f64>::baseline(5.0);
        s.dt = 0.0;
        s.setpoint = vec![(3.0, 1.0), (2.0, 2.0)];
        if let crate::ftc::FaultKind::None = s.fault.kind {
            s.fault = FaultProfile::sensitivity(1.5, 10);
        }
        let v = s.violations();
        assert!(v.iter().any(|m| m.contains("dt")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("non-decreasing")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("alpha")), "{v:?}");
        assert!(v.len() >= 3);
    }

    #[test]
    fn zero_scenario_is_identically_zero() {
        let mut s = Scenario::<f64>::baseline(1.0);
        s.setpoint = vec![(0.0, 0.0)];
        let trace = run_scenario(&s).unwrap();
        assert_eq!(trace.len(), s.n_steps() + 1);
        for row in &trace.rows {
            assert_eq!(row.signals.u, 0.0);
            assert_eq!(row.signals.y, 0.0);
            assert_eq!(row.signals.f_hat_s, 0.0);
            assert!(row.x_hat_e.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn runs_are_bit_identical() {
        let mut s = Scenario::<f64>::baseline(2.0);
        s.fault = FaultProfile::sensitivity(0.85, 100);
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_grid_invariants() {
        let s = Scenario::<f64>::baseline(0.5);
        let trace = run_scenario(&s).unwrap();
        assert_eq!(trace.len(), 501);
        for (k, row) in trace.rows.iter().enumerate() {
            assert_relative_eq!(row.signals.t, k as f64 * 1e-3, epsilon = 1e-12);
        }
    }

    #[test]
    fn step_reference_tracks_with_small_overshoot() {
        let s = Scenario::<f64>::baseline(5.0);
        let trace = run_scenario(&s).unwrap();
        let r = 348.091;
        let y = trace.pressure();
        let final_err = (y[y.len() - 1] - r).abs() / r;
        assert!(final_err < 5e-3, "final error {final_err}");
        let peak = y.iter().cloned().fold(f64::MIN, f64::max);
        let overshoot = (peak - r) / r;
        assert!(overshoot > 0.0 && overshoot < 0.5, "overshoot {overshoot}");
    }

    #[test]
    fn instability_guard_reports_step_and_time() {
        // dt far outside the RK4 stability region for the fast estimator pair
        let mut s = Scenario::<f64>::baseline(60.0);
        s.dt = 0.1;
        match run_scenario(&s) {
            Err(Error::Instability { step, time, .. }) => {
                assert!(step > 0);
                assert!(time > 0.0);
            }
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn physical_model_builds_and_runs() {
        let mut s = Scenario::<f64>::baseline(1.0);
        s.model = ModelSource::Physical(PhysicalModelSpec::default());
        let design = design_loop(&s).unwrap();
        assert_relative_eq!(design.model.valve.gain, 0.25, max_relative = 1e-12);
        assert_relative_eq!(
            design.model.scrubber.gain,
            47.32557288506358,
            max_relative = 1e-12
        );
        let trace = run_designed(&s, &design).unwrap();
        assert_eq!(trace.meta.model_source, "physical");
        assert_eq!(trace.len(), 1001);
    }

    #[test]
    fn fingerprint_distinguishes_scenarios() {
        let a = Scenario::<f64>::baseline(5.0);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.ftc_enabled = false;
        assert_ne!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        c.fault = FaultProfile::sensitivity(0.85, 100);
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn tail_mean_is_mean_of_last_fraction() {
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let tail = Trace::tail_mean(&values, 0.1);
        assert_relative_eq!(tail, 94.5, epsilon = 1e-12);
    }
}

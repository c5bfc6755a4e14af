//! Plant, actuator and transmitter models, and the open-loop state space.
//!
//! Every element of the loop is a first-order lag. The scrubber pressure
//! dynamics come from a pressure balance whose square-root outflow term is
//! linearized around the operating pressure `p_o`; the control valve and the
//! pressure transmitter are instrument models built from span ratios. The
//! two lags combine into the two-state system
//!
//! ```text
//! d/dt [p; m_dot_i] = [[-1/tau_s, K_s/tau_s], [0, -1/tau_v]] [p; m_dot_i]
//!                     + [0; K_v/tau_v] u
//! y = I2 [p; m_dot_i] + [1; 0] f_s
//! ```
//!
//! Two constructions of the numeric model ship side by side: the canonical
//! constants identified on the plant (see [`canonical_plant`],
//! [`canonical_valve`]) and the constants evaluated from physical vessel
//! parameters ([`scrubber_tf`]). They disagree by roughly 14% on the
//! scrubber gain and time constant; the canonical constants are the ground
//! truth and reports surface the discrepancy rather than reconciling it.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::{r64, Real};

/// Measured vessel and fluid properties of the scrubber installation.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalPlantParams<T = f64> {
    /// Vessel volume, m^3 (carried for documentation; unused by the dynamics).
    pub volume: T,
    /// Internal diameter, m.
    pub diameter: T,
    /// Vessel height, m (documentation only).
    pub height: T,
    /// Cross-section area, m^2. Equals `pi d^2 / 4` when built from the diameter.
    pub area: T,
    /// Inlet flow density, kg/m^3.
    pub rho_in: T,
    /// Outlet gas density, kg/m^3.
    pub rho_out: T,
    /// Inlet enthalpy, J/kg.
    pub h_in: T,
    /// Outlet enthalpy, J/kg.
    pub h_out: T,
    /// Gravitational acceleration, m/s^2.
    pub gravity: T,
    /// Outflow coefficient in `m_dot_out = k sqrt(p)` (dimensionless).
    pub outflow_coeff: T,
    /// Operating pressure the outflow law is linearized at, psi.
    pub p_operating: T,
    /// Specific gravity of the liquid phase (documentation only).
    pub spec_gravity_liquid: T,
    /// Specific gravity of the gas phase (documentation only).
    pub spec_gravity_gas: T,
}

impl<T: Real> PhysicalPlantParams<T> {
    /// Cross-section area of a circular vessel of diameter `d`.
    pub fn cross_section(diameter: T) -> T {
        T::pi() * diameter * diameter / r64(4.0)
    }

    /// Every violated invariant, or an empty list when the parameters are valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut positive = |name: &str, value: T| {
            if !(value > T::zero()) {
                v.push(format!("{name} must be strictly positive (got {value})"));
            }
        };
        positive("volume", self.volume);
        positive("diameter", self.diameter);
        positive("height", self.height);
        positive("area", self.area);
        positive("rho_in", self.rho_in);
        positive("rho_out", self.rho_out);
        positive("h_in", self.h_in);
        positive("h_out", self.h_out);
        positive("gravity", self.gravity);
        positive("outflow_coeff", self.outflow_coeff);
        positive("p_operating", self.p_operating);
        let implied = Self::cross_section(self.diameter);
        if self.area > T::zero()
            && ((self.area - implied) / implied).abs() > r64(1e-9)
        {
            v.push(format!(
                "area {} inconsistent with diameter {} (pi d^2/4 = {})",
                self.area, self.diameter, implied
            ));
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
}

impl<T: Real> Default for PhysicalPlantParams<T> {
    /// Properties of the reference installation the canonical model was
    /// identified on.
    fn default() -> Self {
        let diameter = r64(1.07);
        PhysicalPlantParams {
            volume: r64(2.5),
            diameter,
            height: r64(2.4),
            area: Self::cross_section(diameter),
            rho_in: r64(5.2),
            rho_out: r64(4.9),
            h_in: r64(4.9),
            h_out: r64(4.1),
            gravity: r64(9.81),
            outflow_coeff: T::one(),
            p_operating: r64(348.091),
            spec_gravity_liquid: r64(0.726),
            spec_gravity_gas: r64(1.173),
        }
    }
}

/// First-order lag `gain / (tau s + 1)`: the universal element model for the
/// scrubber, the control valve and the transmitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderTF<T = f64> {
    pub gain: T,
    /// Time constant, s.
    pub tau: T,
}

impl<T: Real> FirstOrderTF<T> {
    pub fn new(gain: T, tau: T) -> Result<Self> {
        if !(tau > T::zero()) {
            return Err(Error::Domain(format!(
                "time constant must be strictly positive (got {tau})"
            )));
        }
        if !gain.is_finite() || gain == T::zero() {
            return Err(Error::Domain(format!(
                "gain must be finite and nonzero (got {gain})"
            )));
        }
        Ok(FirstOrderTF { gain, tau })
    }
}

/// Canonical scrubber lag identified on the plant: `tau_s = 1/5.0250`,
/// `K_s = 277.45/5.0250`.
pub fn canonical_plant<T: Real>() -> FirstOrderTF<T> {
    FirstOrderTF {
        gain: r64::<T>(277.45) / r64(5.0250),
        tau: T::one() / r64(5.0250),
    }
}

/// Canonical valve lag: `tau_v = 1/3.9680`, `K_v = 0.9920/3.9680 = 0.25`.
pub fn canonical_valve<T: Real>() -> FirstOrderTF<T> {
    FirstOrderTF {
        gain: r64::<T>(0.9920) / r64(3.9680),
        tau: T::one() / r64(3.9680),
    }
}

/// Scrubber transfer function from physical parameters.
///
/// Linearizing the outflow `k sqrt(p)` at `p_o` and taking the Laplace
/// transform of the pressure balance gives a first-order lag with
///
/// ```text
/// K_s  = (2 sqrt(p_o) / k) * (rho_in h_in) / (rho_out h_out)
/// tau_s = 2 A sqrt(p_o) / (rho_out h_out g k)
/// ```
///
/// Gravity cancels in the gain and the cross-section area enters only the
/// time constant.
pub fn scrubber_tf<T: Real>(params: &PhysicalPlantParams<T>) -> Result<FirstOrderTF<T>> {
    params.validate()?;
    let root = params.p_operating.sqrt();
    let two = r64::<T>(2.0);
    let out_weight = params.rho_out * params.h_out;
    let gain = (two * root / params.outflow_coeff) * (params.rho_in * params.h_in) / out_weight;
    let tau = two * params.area * root
        / (out_weight * params.gravity * params.outflow_coeff);
    FirstOrderTF::new(gain, tau)
}

/// Transmitter gain as the ratio of output span over input span.
pub fn transmitter_tf<T: Real>(
    out_span: (T, T),
    in_span: (T, T),
    tau: T,
) -> Result<FirstOrderTF<T>> {
    let num = out_span.1 - out_span.0;
    let den = in_span.1 - in_span.0;
    if !(den > T::zero()) {
        return Err(Error::Domain(format!(
            "transmitter input span must be non-degenerate (got {} to {})",
            in_span.0, in_span.1
        )));
    }
    if !(num > T::zero()) {
        return Err(Error::Domain(format!(
            "transmitter output span must be non-degenerate (got {} to {})",
            out_span.0, out_span.1
        )));
    }
    FirstOrderTF::new(num / den, tau)
}

/// Control valve gain in mmscfd/mA: the I/P converter span ratio (psi per
/// mA) times the valve span ratio (mmscfd per psi).
pub fn valve_gain<T: Real>(
    gas_span: (T, T),
    ip_out_span: (T, T),
    ip_in_span: (T, T),
) -> Result<T> {
    let span = |name: &str, (lo, hi): (T, T)| -> Result<T> {
        let w = hi - lo;
        if w > T::zero() {
            Ok(w)
        } else {
            Err(Error::Domain(format!(
                "{name} span must be non-degenerate (got {lo} to {hi})"
            )))
        }
    };
    let g_ip = span("I/P output", ip_out_span)? / span("I/P input", ip_in_span)?;
    let g_v = span("gas", gas_span)? / span("I/P output", ip_out_span)?;
    Ok(g_v * g_ip)
}

/// Fraction of the stroke used by the flow span: `(q_max - q_min) / q_max`.
pub fn stroke_fraction<T: Real>(q_max: T, q_min: T) -> Result<T> {
    if q_max == T::zero() {
        return Err(Error::Domain(
            "stroke fraction undefined for q_max = 0".into(),
        ));
    }
    Ok((q_max - q_min) / q_max)
}

/// Valve time constant `tau_v = T_v (delta_v + r_v)` from the full stroking
/// time, the stroke fraction and the inherent-time ratio.
pub fn valve_time_constant<T: Real>(stroke_time: T, delta_v: T, r_v: T) -> Result<T> {
    if !(stroke_time > T::zero()) {
        return Err(Error::Domain(format!(
            "stroking time must be strictly positive (got {stroke_time})"
        )));
    }
    if delta_v < T::zero() || delta_v > T::one() {
        return Err(Error::Domain(format!(
            "stroke fraction must lie in [0, 1] (got {delta_v})"
        )));
    }
    if r_v < T::zero() {
        return Err(Error::Domain(format!(
            "inherent-time ratio must be non-negative (got {r_v})"
        )));
    }
    Ok(stroke_time * (delta_v + r_v))
}

/// First-order Taylor expansion of the outflow `k sqrt(p)` about `p_o`.
pub fn linearized_outflow<T: Real>(p: T, k: T, p_o: T) -> Result<T> {
    if !(p_o > T::zero()) {
        return Err(Error::Domain(format!(
            "expansion pressure must be strictly positive (got {p_o})"
        )));
    }
    let root = p_o.sqrt();
    Ok(k * root + k / (r64::<T>(2.0) * root) * (p - p_o))
}

/// Exact nonlinear pressure rate: inflow term minus the square-root outflow,
/// both weighted by `rho h g / A`. This is the reference model the
/// linearized lag is validated against.
pub fn nonlinear_pressure_rate<T: Real>(
    p: T,
    m_dot_in: T,
    params: &PhysicalPlantParams<T>,
) -> Result<T> {
    if p < T::zero() {
        return Err(Error::Domain(format!(
            "pressure must be non-negative (got {p})"
        )));
    }
    let inflow = params.rho_in * params.h_in * params.gravity * m_dot_in / params.area;
    let outflow = params.rho_out * params.h_out * params.gravity * params.outflow_coeff * p.sqrt()
        / params.area;
    Ok(inflow - outflow)
}

/// Pressure rate with the outflow replaced by its linearization at `p_o`.
pub fn linearized_pressure_rate<T: Real>(
    p: T,
    m_dot_in: T,
    params: &PhysicalPlantParams<T>,
) -> Result<T> {
    let inflow = params.rho_in * params.h_in * params.gravity * m_dot_in / params.area;
    let outflow = params.rho_out
        * params.h_out
        * params.gravity
        * linearized_outflow(p, params.outflow_coeff, params.p_operating)?
        / params.area;
    Ok(inflow - outflow)
}

/// Open-loop state space `(A, B, C, F)` with an additive output fault channel.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace<T = f64> {
    /// n x n system matrix, 1/s.
    pub a: DMatrix<T>,
    /// n x m input matrix.
    pub b: DMatrix<T>,
    /// q x n output matrix.
    pub c: DMatrix<T>,
    /// q x 1 fault distribution column.
    pub f: DMatrix<T>,
    /// State names, for reports.
    pub state_labels: Vec<String>,
}

impl<T: Real> StateSpace<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>, f: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square (got {}x{})",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "B must have {} rows (got {})",
                n,
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!(
                "C must have {} columns (got {})",
                n,
                c.ncols()
            )));
        }
        if f.nrows() != c.nrows() || f.ncols() != 1 {
            return Err(Error::Dimension(format!(
                "F must be {}x1 (got {}x{})",
                c.nrows(),
                f.nrows(),
                f.ncols()
            )));
        }
        Ok(StateSpace {
            a,
            b,
            c,
            f,
            state_labels: Vec::new(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Continuous-time poles of the system matrix.
    pub fn poles(&self) -> Vec<Complex<T>> {
        self.a.complex_eigenvalues().iter().copied().collect()
    }

    /// Redirect the fault column onto a different output channel.
    pub fn with_fault_on_output(mut self, output: usize) -> Result<Self> {
        if output >= self.n_outputs() {
            return Err(Error::Dimension(format!(
                "fault output index {output} out of range for {} outputs",
                self.n_outputs()
            )));
        }
        self.f = DMatrix::zeros(self.n_outputs(), 1);
        self.f[(output, 0)] = T::one();
        Ok(self)
    }
}

/// Series connection of the valve and scrubber lags as a two-state system.
///
/// States are the pressure `p` and the inlet flow `m_dot_i`; both are
/// measured (`C = I`) and the fault channel acts on the pressure reading
/// (`F = [1; 0]`).
pub fn plant_state_space<T: Real>(
    plant: &FirstOrderTF<T>,
    valve: &FirstOrderTF<T>,
) -> StateSpace<T> {
    let a = DMatrix::from_row_slice(
        2,
        2,
        &[
            -T::one() / plant.tau,
            plant.gain / plant.tau,
            T::zero(),
            -T::one() / valve.tau,
        ],
    );
    let b = DMatrix::from_column_slice(2, 1, &[T::zero(), valve.gain / valve.tau]);
    let c = DMatrix::identity(2, 2);
    let f = DMatrix::from_column_slice(2, 1, &[T::one(), T::zero()]);
    let mut ss = StateSpace::new(a, b, c, f).expect("fixed 2x2 shape");
    ss.state_labels = vec!["p".into(), "m_dot_i".into()];
    ss
}

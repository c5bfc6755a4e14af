//! Scenario configuration files.
//!
//! A scenario is a TOML document with four flat sections. Unknown keys are
//! rejected; only `[model]` (defaulting to the canonical constants), the
//! clamp, the filter diagonal and the fault details are optional.
//!
//! ```toml
//! [loop]
//! duration_s = 60.0          # run length, s
//! dt_s = 0.001               # fixed integration step, s
//! setpoint = [[0.0, 348.091]] # piecewise-constant reference: [time s, value psi]
//! ftc_enabled = true         # feed the controller y_t (true) or y_m (false)
//! kp = 0.1396                # proportional gain, mA per psi
//! ti_s = 0.3294              # integral time, s
//! td_s = 0.0                 # derivative time, s (optional, default 0)
//! clamp_ma = [-1000, 1000]   # optional control-signal clamp, mA
//!
//! [fault]
//! kind = "sensitivity"       # "none" | "sensitivity" | "bias"
//! alpha = 0.85               # sensor reads alpha*y   (sensitivity only)
//! value_psi = -20.0          # sensor reads y + value (bias only)
//! onset_step = 100           # controller iteration the fault appears at
//! affected_output = 0        # measured channel: 0 = pressure, 1 = inlet flow
//!
//! [model]
//! source = "canonical"       # "canonical" | "physical"
//! # physical source only (all required then):
//! # volume_m3, diameter_m, height_m, rho_in_kg_m3, rho_out_kg_m3,
//! # h_in_j_kg, h_out_j_kg, gravity_m_s2, outflow_coeff, p_operating_psi,
//! # gas_span_mmscfd = [lo, hi], ip_out_span_psi = [lo, hi],
//! # ip_in_span_ma = [lo, hi], stroke_time_s, stroke_ratio
//!
//! [observer]
//! poles = [[-54.4047, 33.5101], ...]  # estimator targets, [re, im] rad/s
//! filter_diag = [1.0, 1.0]            # optional, measurement filter diagonal
//! ```

use std::path::Path;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ftc::{FaultKind, FaultProfile};
use crate::model::PhysicalPlantParams;
use crate::sim::{ModelSource, PhysicalModelSpec, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(rename = "loop")]
    pub control_loop: LoopSection,
    pub fault: FaultSection,
    #[serde(default)]
    pub model: ModelSection,
    pub observer: ObserverSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSection {
    /// Run length, s.
    pub duration_s: f64,
    /// Fixed integration step, s.
    pub dt_s: f64,
    /// Piecewise-constant reference knots `[time s, value psi]`.
    pub setpoint: Vec<[f64; 2]>,
    pub ftc_enabled: bool,
    /// Proportional gain, mA per psi.
    pub kp: f64,
    /// Integral time, s.
    pub ti_s: f64,
    /// Derivative time, s.
    #[serde(default)]
    pub td_s: f64,
    /// Optional control clamp `[min, max]`, mA.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_ma: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    /// `"none"`, `"sensitivity"` or `"bias"`.
    pub kind: String,
    /// Sensitivity factor: the sensor reads `alpha * y`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Bias: the sensor reads `y + value`, psi.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_psi: Option<f64>,
    /// Controller iteration the fault appears at.
    #[serde(default)]
    pub onset_step: usize,
    /// Measured channel the fault acts on.
    #[serde(default)]
    pub affected_output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `"canonical"` (identified constants) or `"physical"` (evaluated from
    /// the keys below).
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume_m3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diameter_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_in_kg_m3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_out_kg_m3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_in_j_kg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_out_j_kg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gravity_m_s2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outflow_coeff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_operating_psi: Option<f64>,
    /// Valve flow span, mmscfd.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gas_span_mmscfd: Option<[f64; 2]>,
    /// I/P converter pneumatic span, psi.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ip_out_span_psi: Option<[f64; 2]>,
    /// I/P converter current span, mA.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ip_in_span_ma: Option<[f64; 2]>,
    /// Valve full stroking time, s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stroke_time_s: Option<f64>,
    /// Valve inherent-time over stroke ratio.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stroke_ratio: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            source: "canonical".into(),
            volume_m3: None,
            diameter_m: None,
            height_m: None,
            rho_in_kg_m3: None,
            rho_out_kg_m3: None,
            h_in_j_kg: None,
            h_out_j_kg: None,
            gravity_m_s2: None,
            outflow_coeff: None,
            p_operating_psi: None,
            gas_span_mmscfd: None,
            ip_out_span_psi: None,
            ip_in_span_ma: None,
            stroke_time_s: None,
            stroke_ratio: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSection {
    /// Estimator target poles as `[re, im]` pairs, rad/s.
    pub poles: Vec<[f64; 2]>,
    /// Diagonal of the measurement-filter matrix; defaults to ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_diag: Option<Vec<f64>>,
}

impl ScenarioFile {
    /// Validate the document structure and produce a scenario.
    ///
    /// Structural problems (wrong `kind`, missing conditional keys) are all
    /// collected before reporting; once the structure is sound the scenario's
    /// own invariants are checked the same way.
    pub fn to_scenario(&self) -> Result<Scenario<f64>> {
        let mut violations = Vec::new();

        let fault = match self.fault.kind.as_str() {
            "none" => {
                if self.fault.alpha.is_some() || self.fault.value_psi.is_some() {
                    violations.push(
                        "fault.alpha / fault.value_psi are not allowed for kind = \"none\"".into(),
                    );
                }
                FaultProfile {
                    kind: FaultKind::None,
                    onset_step: self.fault.onset_step,
                    affected_output: self.fault.affected_output,
                }
            }
            "sensitivity" => {
                if self.fault.value_psi.is_some() {
                    violations
                        .push("fault.value_psi is not allowed for kind = \"sensitivity\"".into());
                }
                match self.fault.alpha {
                    Some(alpha) => FaultProfile {
                        kind: FaultKind::Sensitivity { alpha },
                        onset_step: self.fault.onset_step,
                        affected_output: self.fault.affected_output,
                    },
                    None => {
                        violations
                            .push("fault.alpha is required for kind = \"sensitivity\"".into());
                        FaultProfile::none()
                    }
                }
            }
            "bias" => {
                if self.fault.alpha.is_some() {
                    violations.push("fault.alpha is not allowed for kind = \"bias\"".into());
                }
                match self.fault.value_psi {
                    Some(value) => FaultProfile {
                        kind: FaultKind::Bias { value },
                        onset_step: self.fault.onset_step,
                        affected_output: self.fault.affected_output,
                    },
                    None => {
                        violations.push("fault.value_psi is required for kind = \"bias\"".into());
                        FaultProfile::none()
                    }
                }
            }
            other => {
                violations.push(format!(
                    "fault.kind must be \"none\", \"sensitivity\" or \"bias\" (got \"{other}\")"
                ));
                FaultProfile::none()
            }
        };

        let model = match self.model.source.as_str() {
            "canonical" => ModelSource::Canonical,
            "physical" => match self.physical_spec(&mut violations) {
                Some(spec) => ModelSource::Physical(spec),
                None => ModelSource::Canonical,
            },
            other => {
                violations.push(format!(
                    "model.source must be \"canonical\" or \"physical\" (got \"{other}\")"
                ));
                ModelSource::Canonical
            }
        };

        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }

        let scenario = Scenario {
            duration: self.control_loop.duration_s,
            dt: self.control_loop.dt_s,
            setpoint: self
                .control_loop
                .setpoint
                .iter()
                .map(|&[t, v]| (t, v))
                .collect(),
            fault,
            ftc_enabled: self.control_loop.ftc_enabled,
            gains: crate::control::PIGains {
                k_p: self.control_loop.kp,
                t_i: self.control_loop.ti_s,
                t_d: self.control_loop.td_s,
            },
            model,
            observer_poles: self
                .observer
                .poles
                .iter()
                .map(|&[re, im]| Complex::new(re, im))
                .collect(),
            filter_diag: self.observer.filter_diag.clone().unwrap_or(vec![1.0, 1.0]),
            output_clamp: self.control_loop.clamp_ma.map(|[lo, hi]| (lo, hi)),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    fn physical_spec(&self, violations: &mut Vec<String>) -> Option<PhysicalModelSpec<f64>> {
        fn need(missing: &mut Vec<String>, name: &str, v: Option<f64>) -> f64 {
            if v.is_none() {
                missing.push(name.to_string());
            }
            v.unwrap_or(1.0)
        }
        fn need_span(missing: &mut Vec<String>, name: &str, v: Option<[f64; 2]>) -> (f64, f64) {
            if v.is_none() {
                missing.push(name.to_string());
            }
            let [lo, hi] = v.unwrap_or([0.0, 1.0]);
            (lo, hi)
        }
        let m = &self.model;
        let mut missing = Vec::new();
        let diameter = need(&mut missing, "model.diameter_m", m.diameter_m);
        let plant = PhysicalPlantParams {
            volume: need(&mut missing, "model.volume_m3", m.volume_m3),
            diameter,
            height: need(&mut missing, "model.height_m", m.height_m),
            area: PhysicalPlantParams::<f64>::cross_section(diameter),
            rho_in: need(&mut missing, "model.rho_in_kg_m3", m.rho_in_kg_m3),
            rho_out: need(&mut missing, "model.rho_out_kg_m3", m.rho_out_kg_m3),
            h_in: need(&mut missing, "model.h_in_j_kg", m.h_in_j_kg),
            h_out: need(&mut missing, "model.h_out_j_kg", m.h_out_j_kg),
            gravity: need(&mut missing, "model.gravity_m_s2", m.gravity_m_s2),
            outflow_coeff: need(&mut missing, "model.outflow_coeff", m.outflow_coeff),
            p_operating: need(&mut missing, "model.p_operating_psi", m.p_operating_psi),
            spec_gravity_liquid: 0.0,
            spec_gravity_gas: 0.0,
        };
        let spec = PhysicalModelSpec {
            plant,
            gas_span: need_span(&mut missing, "model.gas_span_mmscfd", m.gas_span_mmscfd),
            ip_out_span_psi: need_span(&mut missing, "model.ip_out_span_psi", m.ip_out_span_psi),
            ip_in_span_ma: need_span(&mut missing, "model.ip_in_span_ma", m.ip_in_span_ma),
            stroke_time: need(&mut missing, "model.stroke_time_s", m.stroke_time_s),
            stroke_ratio: need(&mut missing, "model.stroke_ratio", m.stroke_ratio),
        };
        if missing.is_empty() {
            Some(spec)
        } else {
            violations.extend(
                missing
                    .into_iter()
                    .map(|k| format!("{k} is required when model.source = \"physical\"")),
            );
            None
        }
    }

    /// File document for a scenario (the inverse of [`ScenarioFile::to_scenario`]).
    pub fn from_scenario(s: &Scenario<f64>) -> Self {
        let fault = match s.fault.kind {
            FaultKind::None => FaultSection {
                kind: "none".into(),
                alpha: None,
                value_psi: None,
                onset_step: s.fault.onset_step,
                affected_output: s.fault.affected_output,
            },
            FaultKind::Sensitivity { alpha } => FaultSection {
                kind: "sensitivity".into(),
                alpha: Some(alpha),
                value_psi: None,
                onset_step: s.fault.onset_step,
                affected_output: s.fault.affected_output,
            },
            FaultKind::Bias { value } => FaultSection {
                kind: "bias".into(),
                alpha: None,
                value_psi: Some(value),
                onset_step: s.fault.onset_step,
                affected_output: s.fault.affected_output,
            },
        };
        let model = match &s.model {
            ModelSource::Canonical => ModelSection::default(),
            ModelSource::Physical(p) => ModelSection {
                source: "physical".into(),
                volume_m3: Some(p.plant.volume),
                diameter_m: Some(p.plant.diameter),
                height_m: Some(p.plant.height),
                rho_in_kg_m3: Some(p.plant.rho_in),
                rho_out_kg_m3: Some(p.plant.rho_out),
                h_in_j_kg: Some(p.plant.h_in),
                h_out_j_kg: Some(p.plant.h_out),
                gravity_m_s2: Some(p.plant.gravity),
                outflow_coeff: Some(p.plant.outflow_coeff),
                p_operating_psi: Some(p.plant.p_operating),
                gas_span_mmscfd: Some([p.gas_span.0, p.gas_span.1]),
                ip_out_span_psi: Some([p.ip_out_span_psi.0, p.ip_out_span_psi.1]),
                ip_in_span_ma: Some([p.ip_in_span_ma.0, p.ip_in_span_ma.1]),
                stroke_time_s: Some(p.stroke_time),
                stroke_ratio: Some(p.stroke_ratio),
            },
        };
        ScenarioFile {
            control_loop: LoopSection {
                duration_s: s.duration,
                dt_s: s.dt,
                setpoint: s.setpoint.iter().map(|&(t, v)| [t, v]).collect(),
                ftc_enabled: s.ftc_enabled,
                kp: s.gains.k_p,
                ti_s: s.gains.t_i,
                td_s: s.gains.t_d,
                clamp_ma: s.output_clamp.map(|(lo, hi)| [lo, hi]),
            },
            fault,
            model,
            observer: ObserverSection {
                poles: s.observer_poles.iter().map(|p| [p.re, p.im]).collect(),
                filter_diag: Some(s.filter_diag.clone()),
            },
        }
    }
}

/// Parse a scenario document; `origin` names the source in diagnostics.
pub fn parse_scenario_str(text: &str, origin: &str) -> Result<Scenario<f64>> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    file.to_scenario()
}

/// Read and validate a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario<f64>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_str(&text, &path.display().to_string())
}

/// Canonical TOML rendering of a scenario.
pub fn scenario_to_toml(s: &Scenario<f64>) -> String {
    toml::to_string_pretty(&ScenarioFile::from_scenario(s)).expect("scenario serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftc::FaultKind;

    fn minimal(extra_fault: &str) -> String {
        format!(
            r#"
[loop]
duration_s = 1.0
dt_s = 0.001
setpoint = [[0.0, 348.091]]
ftc_enabled = true
kp = 0.1396
ti_s = 0.3294

[fault]
{extra_fault}

[observer]
poles = [[-54.4047, 33.5101], [-54.4047, -33.5101], [-2.7588, 0.0], [-0.1951, 0.0], [-0.5291, 0.0]]
"#
        )
    }

    #[test]
    fn parses_minimal_sensitivity_scenario() {
        let text = minimal("kind = \"sensitivity\"\nalpha = 0.85\nonset_step = 100");
        let s = parse_scenario_str(&text, "inline").unwrap();
        assert!(matches!(s.fault.kind, FaultKind::Sensitivity { alpha } if alpha == 0.85));
        assert_eq!(s.fault.onset_step, 100);
        assert!(s.ftc_enabled);
        assert_eq!(s.filter_diag, vec![1.0, 1.0]);
        assert!(matches!(s.model, ModelSource::Canonical));
    }

    #[test]
    fn zero_dt_names_the_key() {
        let text = minimal("kind = \"none\"").replace("dt_s = 0.001", "dt_s = 0.0");
        match parse_scenario_str(&text, "inline") {
            Err(Error::Validation(v)) => assert!(v.iter().any(|m| m.contains("dt")), "{v:?}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn excess_alpha_rejected() {
        let text = minimal("kind = \"sensitivity\"\nalpha = 1.2");
        match parse_scenario_str(&text, "inline") {
            Err(Error::Validation(v)) => {
                assert!(v.iter().any(|m| m.contains("alpha")), "{v:?}")
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn every_violation_is_listed() {
        let text = minimal("kind = \"sensitivity\"")
            .replace("dt_s = 0.001", "dt_s = -1.0")
            .replace("ti_s = 0.3294", "ti_s = 0.0");
        match parse_scenario_str(&text, "inline") {
            // structural issue (missing alpha) reported first, on its own
            Err(Error::Validation(v)) => assert!(v.iter().any(|m| m.contains("alpha"))),
            other => panic!("{other:?}"),
        }
        let text2 = minimal("kind = \"sensitivity\"\nalpha = 0.85")
            .replace("dt_s = 0.001", "dt_s = -1.0")
            .replace("ti_s = 0.3294", "ti_s = 0.0");
        match parse_scenario_str(&text2, "inline") {
            Err(Error::Validation(v)) => {
                assert!(v.iter().any(|m| m.contains("dt")), "{v:?}");
                assert!(v.iter().any(|m| m.contains("ti")), "{v:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = minimal("kind = \"none\"\nwhatever = 3");
        match parse_scenario_str(&text, "inline") {
            Err(Error::Parse { message, .. }) => assert!(message.contains("whatever")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_line_info() {
        match parse_scenario_str("[loop\n", "broken.toml") {
            Err(Error::Parse { message, path }) => {
                assert_eq!(path, "broken.toml");
                assert!(message.contains("line 1"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn physical_source_requires_every_key() {
        let text =
            minimal("kind = \"none\"") + "\n[model]\nsource = \"physical\"\ndiameter_m = 1.07\n";
        match parse_scenario_str(&text, "inline") {
            Err(Error::Validation(v)) => {
                assert!(v.iter().any(|m| m.contains("volume_m3")), "{v:?}");
                assert!(v.iter().any(|m| m.contains("stroke_time_s")), "{v:?}");
                assert!(!v.iter().any(|m| m.contains("diameter_m")), "{v:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn roundtrip_preserves_scenario() {
        let mut s = Scenario::<f64>::baseline(5.0);
        s.fault = FaultProfile::sensitivity(0.7, 100);
        s.output_clamp = Some((-500.0, 500.0));
        let text = scenario_to_toml(&s);
        let back = parse_scenario_str(&text, "roundtrip").unwrap();
        assert_eq!(s, back);
        // and a second serialization is byte-identical
        assert_eq!(text, scenario_to_toml(&back));
    }

    #[test]
    fn physical_roundtrip() {
        let mut s = Scenario::<f64>::baseline(2.0);
        s.model = ModelSource::Physical(PhysicalModelSpec::default());
        let back = parse_scenario_str(&scenario_to_toml(&s), "roundtrip").unwrap();
        match (&s.model, &back.model) {
            (ModelSource::Physical(a), ModelSource::Physical(b)) => {
                assert_eq!(a.plant.diameter, b.plant.diameter);
                assert_eq!(a.stroke_time, b.stroke_time);
                // spec-gravity fields are documentation-only and not part of
                // the file schema
                assert_eq!(b.plant.spec_gravity_liquid, 0.0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(back.duration, 2.0);
    }
}

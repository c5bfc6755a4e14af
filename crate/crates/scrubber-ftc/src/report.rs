//! Run reports: transient metrics, steady-state figures, observer
//! convergence, model-constant provenance and FTC-on/off comparisons.
//!
//! Every number in a report is recomputable from the emitted CSV columns
//! plus the design constants printed in the header; nothing is carried from
//! hidden state.

use crate::control::{measure_step_response, MeasuredResponse};
use crate::error::{Error, Result};
use crate::model::scrubber_tf;
use crate::sim::{
    build_model, percent_error, LoopDesign, ModelSource, PhysicalModelSpec, Scenario, Trace,
};
use crate::trace_csv::format_significant;

/// Fraction of the trace tail the steady-state statistics average over.
pub const STEADY_TAIL_FRACTION: f64 = 0.1;

/// Default per-sample threshold for trace divergence detection.
pub const DIVERGENCE_EPSILON: f64 = 1e-9;

/// Measured open-loop operating pressures of the reference installation,
/// paired with previously reported simulated values (read-only reference
/// dataset; the percent-error column of the original comparison is
/// reproduced by `percent_error`).
pub const OPEN_LOOP_REFERENCE: [(f64, f64); 10] = [
    (346.113, 349.6),
    (347.235, 351.0),
    (348.091, 352.1),
    (346.702, 350.2),
    (344.805, 347.9),
    (345.921, 349.9),
    (347.0, 350.7),
    (345.065, 349.0),
    (342.186, 345.1),
    (344.237, 347.7),
];

/// Steady-state figures of one run, relative to the final reference value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateStats {
    pub reference: f64,
    pub final_value: f64,
    /// Mean output over the last [`STEADY_TAIL_FRACTION`] of the run.
    pub tail_mean: f64,
    pub final_rel_err: f64,
    pub tail_rel_err: f64,
}

pub fn steady_state_stats(trace: &Trace<f64>) -> SteadyStateStats {
    let y = trace.pressure();
    let r = *trace.reference().last().unwrap_or(&0.0);
    let final_value = *y.last().unwrap_or(&0.0);
    let tail_mean = Trace::tail_mean(&y, STEADY_TAIL_FRACTION);
    let denom = if r == 0.0 { 1.0 } else { r.abs() };
    SteadyStateStats {
        reference: r,
        final_value,
        tail_mean,
        final_rel_err: (final_value - r).abs() / denom,
        tail_rel_err: (tail_mean - r).abs() / denom,
    }
}

/// First time after which the fault estimate stays within 1% of the largest
/// injected fault magnitude. `None` for fault-free runs.
pub fn observer_convergence_time(trace: &Trace<f64>) -> Option<f64> {
    let f_s = trace.fault();
    let f_hat = trace.fault_estimate();
    let peak = f_s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return None;
    }
    let tol = 0.01 * peak;
    let mut converged_from = None;
    for (i, (a, b)) in f_hat.iter().zip(&f_s).enumerate() {
        if (a - b).abs() <= tol {
            converged_from.get_or_insert(i);
        } else {
            converged_from = None;
        }
    }
    converged_from.map(|i| trace.rows[i].signals.t)
}

/// The FTC-on / FTC-off pair comparison section.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// First step at which the pressure outputs differ by more than
    /// `epsilon`; `None` when the traces agree throughout.
    pub divergence_step: Option<usize>,
    pub epsilon: f64,
    pub ftc_on: SteadyStateStats,
    pub ftc_off: SteadyStateStats,
    /// Steady-output-over-reference check for the uncompensated loop under a
    /// sensitivity fault: the integral action drives `alpha * y` to `r`, so
    /// `y/r` is predicted to settle at `1/alpha`.
    pub pi_only_ratio: Option<RatioCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioCheck {
    pub alpha: f64,
    pub predicted: f64,
    pub observed: f64,
    pub rel_deviation: f64,
}

/// Compare an FTC-on run against its FTC-off counterpart on the same grid.
pub fn compare_runs(
    ftc_on: &Trace<f64>,
    ftc_off: &Trace<f64>,
    epsilon: f64,
) -> Result<Comparison> {
    if ftc_on.len() != ftc_off.len() || ftc_on.dt != ftc_off.dt {
        return Err(Error::Dimension(format!(
            "time grids differ: {} samples at dt {} vs {} samples at dt {}",
            ftc_on.len(),
            ftc_on.dt,
            ftc_off.len(),
            ftc_off.dt
        )));
    }
    let ya = ftc_on.pressure();
    let yb = ftc_off.pressure();
    let divergence_step = ya
        .iter()
        .zip(&yb)
        .position(|(a, b)| (a - b).abs() > epsilon);
    let on_stats = steady_state_stats(ftc_on);
    let off_stats = steady_state_stats(ftc_off);
    let pi_only_ratio = ftc_off.meta.fault_alpha.map(|alpha| {
        let predicted = 1.0 / alpha;
        let observed = off_stats.tail_mean / off_stats.reference;
        RatioCheck {
            alpha,
            predicted,
            observed,
            rel_deviation: (observed - predicted).abs() / predicted,
        }
    });
    Ok(Comparison {
        divergence_step,
        epsilon,
        ftc_on: on_stats,
        ftc_off: off_stats,
        pi_only_ratio,
    })
}

/// Side-by-side model constants from the two construction paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvenanceRow {
    pub name: &'static str,
    pub used: f64,
    pub canonical: f64,
    pub physical: f64,
    /// `(physical - canonical) / canonical * 100`.
    pub deviation_pct: f64,
}

/// The discrepancy table between identified and physically derived
/// constants. The canonical values are ground truth; the gap is reported,
/// not reconciled.
pub fn provenance_table(design: &LoopDesign<f64>, scenario: &Scenario<f64>) -> Vec<ProvenanceRow> {
    let canonical = build_model(&ModelSource::<f64>::Canonical).expect("canonical model");
    let physical_spec = match &scenario.model {
        ModelSource::Physical(spec) => spec.clone(),
        ModelSource::Canonical => PhysicalModelSpec::default(),
    };
    // fall back to the canonical lag if the physical path cannot be built
    let physical = build_model(&ModelSource::Physical(physical_spec.clone()))
        .or_else(|_| {
            scrubber_tf(&physical_spec.plant).map(|s| crate::sim::PlantModel {
                scrubber: s,
                valve: canonical.valve,
                source_name: "physical",
            })
        })
        .unwrap_or_else(|_| canonical.clone());
    let rows = [
        (
            "K_s",
            design.model.scrubber.gain,
            canonical.scrubber.gain,
            physical.scrubber.gain,
        ),
        (
            "tau_s",
            design.model.scrubber.tau,
            canonical.scrubber.tau,
            physical.scrubber.tau,
        ),
        (
            "K_v",
            design.model.valve.gain,
            canonical.valve.gain,
            physical.valve.gain,
        ),
        (
            "tau_v",
            design.model.valve.tau,
            canonical.valve.tau,
            physical.valve.tau,
        ),
    ];
    rows.iter()
        .map(|&(name, used, canon, phys)| ProvenanceRow {
            name,
            used,
            canonical: canon,
            physical: phys,
            deviation_pct: percent_error(canon, phys),
        })
        .collect()
}

/// Everything the `run` command reports about one scenario execution.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub scenario_hash: u64,
    pub duration_s: f64,
    pub dt_s: f64,
    pub samples: usize,
    pub ftc_enabled: bool,
    pub fault_desc: String,
    pub model_source: String,
    pub provenance: Vec<ProvenanceRow>,
    pub target_poles: Vec<(f64, f64)>,
    pub achieved_poles: Vec<(f64, f64)>,
    pub slow_mode_condition: f64,
    pub transient: Option<MeasuredResponse<f64>>,
    pub steady: SteadyStateStats,
    pub observer_convergence_s: Option<f64>,
    pub max_abs_fault_estimate: f64,
    pub comparison: Option<Comparison>,
}

pub fn build_report(
    name: &str,
    scenario: &Scenario<f64>,
    design: &LoopDesign<f64>,
    trace: &Trace<f64>,
    comparison: Option<Comparison>,
) -> Result<RunReport> {
    let times = trace.times();
    let pressures = trace.pressure();
    let reference = *trace.reference().last().unwrap_or(&0.0);
    let transient = if reference == 0.0 {
        None
    } else {
        measure_step_response(&times, &pressures, reference)?
    };
    Ok(RunReport {
        name: name.to_string(),
        scenario_hash: trace.meta.scenario_hash,
        duration_s: scenario.duration,
        dt_s: scenario.dt,
        samples: trace.len(),
        ftc_enabled: scenario.ftc_enabled,
        fault_desc: trace.meta.fault_desc.clone(),
        model_source: trace.meta.model_source.to_string(),
        provenance: provenance_table(design, scenario),
        target_poles: design
            .observer
            .target_poles
            .iter()
            .map(|p| (p.re, p.im))
            .collect(),
        achieved_poles: design
            .observer
            .achieved_poles
            .iter()
            .map(|p| (p.re, p.im))
            .collect(),
        slow_mode_condition: design.observer.slow_mode_condition,
        transient,
        steady: steady_state_stats(trace),
        observer_convergence_s: observer_convergence_time(trace),
        max_abs_fault_estimate: trace
            .fault_estimate()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs())),
        comparison,
    })
}

fn sig(v: f64) -> String {
    format_significant(v, 9)
}

fn pole(p: (f64, f64)) -> String {
    if p.1 == 0.0 {
        format!("{:.6}", p.0)
    } else if p.1 > 0.0 {
        format!("{:.6}+{:.6}i", p.0, p.1)
    } else {
        format!("{:.6}{:.6}i", p.0, p.1)
    }
}

impl RunReport {
    /// Plain-text rendering with aligned columns.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let push = |out: &mut String, line: String| {
            out.push_str(&line);
            out.push('\n');
        };
        push(&mut out, format!("scenario {}", self.name));
        push(
            &mut out,
            format!("  fingerprint       {:016x}", self.scenario_hash),
        );
        push(
            &mut out,
            format!(
                "  grid              {} s at dt = {} s ({} samples)",
                self.duration_s, self.dt_s, self.samples
            ),
        );
        push(
            &mut out,
            format!(
                "  compensation      {}",
                if self.ftc_enabled { "on" } else { "off (PI only)" }
            ),
        );
        push(&mut out, format!("  fault             {}", self.fault_desc));
        push(&mut out, String::new());
        push(
            &mut out,
            format!("model constants (source: {})", self.model_source),
        );
        push(
            &mut out,
            format!(
                "  {:<7} {:>16} {:>16} {:>16} {:>12}",
                "name", "used", "canonical", "physical", "dev %"
            ),
        );
        for row in &self.provenance {
            push(
                &mut out,
                format!(
                    "  {:<7} {:>16} {:>16} {:>16} {:>12.4}",
                    row.name,
                    sig(row.used),
                    sig(row.canonical),
                    sig(row.physical),
                    row.deviation_pct
                ),
            );
        }
        push(&mut out, String::new());
        push(&mut out, "estimator".to_string());
        push(
            &mut out,
            format!(
                "  slow-mode condition number {:.4}",
                self.slow_mode_condition
            ),
        );
        push(
            &mut out,
            format!("  {:<24} {:<24}", "target pole", "achieved pole"),
        );
        for (t, a) in self.target_poles.iter().zip(&self.achieved_poles) {
            push(&mut out, format!("  {:<24} {:<24}", pole(*t), pole(*a)));
        }
        push(&mut out, String::new());
        match &self.transient {
            Some(m) => {
                push(&mut out, "transient response (pressure)".to_string());
                push(&mut out, format!("  rise time 10-90%  {:.4} s", m.t_r));
                push(&mut out, format!("  peak time         {:.4} s", m.t_p));
                push(
                    &mut out,
                    format!("  settling (2%)     {:.4} s", m.t_s_2pct),
                );
                push(
                    &mut out,
                    format!("  overshoot         {:.4} %", m.m_p_percent),
                );
            }
            None => push(
                &mut out,
                "transient response: not measurable (output never reached 10% of the setpoint)"
                    .to_string(),
            ),
        }
        push(&mut out, String::new());
        push(
            &mut out,
            format!(
                "steady state (tail mean over last {:.0}%)",
                STEADY_TAIL_FRACTION * 100.0
            ),
        );
        push(
            &mut out,
            format!("  reference         {}", sig(self.steady.reference)),
        );
        push(
            &mut out,
            format!("  final value       {}", sig(self.steady.final_value)),
        );
        push(
            &mut out,
            format!("  tail mean         {}", sig(self.steady.tail_mean)),
        );
        push(
            &mut out,
            format!(
                "  rel error         {:.6} % (final), {:.6} % (tail)",
                self.steady.final_rel_err * 100.0,
                self.steady.tail_rel_err * 100.0
            ),
        );
        push(&mut out, String::new());
        push(&mut out, "observer".to_string());
        push(
            &mut out,
            format!(
                "  max |f_hat|       {}",
                sig(self.max_abs_fault_estimate)
            ),
        );
        match self.observer_convergence_s {
            Some(t) => push(
                &mut out,
                format!("  convergence       {t:.4} s (estimate within 1% of the fault)"),
            ),
            None => push(&mut out, "  convergence       n/a (no fault injected)".to_string()),
        }
        if let Some(c) = &self.comparison {
            push(&mut out, String::new());
            push(
                &mut out,
                "comparison: compensation on vs off (same fault)".to_string(),
            );
            match c.divergence_step {
                Some(k) => push(
                    &mut out,
                    format!(
                        "  divergence        step {k} (t = {:.4} s, |dy| > {})",
                        k as f64 * self.dt_s,
                        c.epsilon
                    ),
                ),
                None => push(
                    &mut out,
                    format!("  divergence        none (|dy| <= {} throughout)", c.epsilon),
                ),
            }
            push(
                &mut out,
                format!(
                    "  ftc-on  tail rel err   {:.6} %",
                    c.ftc_on.tail_rel_err * 100.0
                ),
            );
            push(
                &mut out,
                format!(
                    "  pi-only tail rel err   {:.6} %",
                    c.ftc_off.tail_rel_err * 100.0
                ),
            );
            if let Some(r) = &c.pi_only_ratio {
                push(
                    &mut out,
                    format!(
                        "  pi-only steady y/r     {:.6} (predicted 1/alpha = {:.6}, deviation {:.6} %)",
                        r.observed,
                        r.predicted,
                        r.rel_deviation * 100.0
                    ),
                );
            }
        }
        out
    }

    /// Machine-readable rendering: one `key=value` per line.
    pub fn render_machine(&self) -> String {
        let mut lines = Vec::new();
        lines.push(format!("name={}", self.name));
        lines.push(format!("fingerprint={:016x}", self.scenario_hash));
        lines.push(format!("duration_s={}", self.duration_s));
        lines.push(format!("dt_s={}", self.dt_s));
        lines.push(format!("samples={}", self.samples));
        lines.push(format!("ftc_enabled={}", self.ftc_enabled));
        lines.push(format!("fault={}", self.fault_desc));
        lines.push(format!("model.source={}", self.model_source));
        for row in &self.provenance {
            lines.push(format!("model.{}.used={}", row.name, sig(row.used)));
            lines.push(format!(
                "model.{}.canonical={}",
                row.name,
                sig(row.canonical)
            ));
            lines.push(format!("model.{}.physical={}", row.name, sig(row.physical)));
            lines.push(format!(
                "model.{}.deviation_pct={}",
                row.name,
                sig(row.deviation_pct)
            ));
        }
        lines.push(format!(
            "observer.slow_mode_condition={}",
            sig(self.slow_mode_condition)
        ));
        for (i, (t, a)) in self
            .target_poles
            .iter()
            .zip(&self.achieved_poles)
            .enumerate()
        {
            lines.push(format!("observer.target_pole.{i}={},{}", sig(t.0), sig(t.1)));
            lines.push(format!(
                "observer.achieved_pole.{i}={},{}",
                sig(a.0),
                sig(a.1)
            ));
        }
        match &self.transient {
            Some(m) => {
                lines.push(format!("transient.t_r_s={}", sig(m.t_r)));
                lines.push(format!("transient.t_p_s={}", sig(m.t_p)));
                lines.push(format!("transient.t_s_2pct_s={}", sig(m.t_s_2pct)));
                lines.push(format!("transient.overshoot_pct={}", sig(m.m_p_percent)));
            }
            None => lines.push("transient.available=false".to_string()),
        }
        lines.push(format!("steady.reference={}", sig(self.steady.reference)));
        lines.push(format!("steady.final={}", sig(self.steady.final_value)));
        lines.push(format!("steady.tail_mean={}", sig(self.steady.tail_mean)));
        lines.push(format!(
            "steady.final_rel_err={}",
            sig(self.steady.final_rel_err)
        ));
        lines.push(format!(
            "steady.tail_rel_err={}",
            sig(self.steady.tail_rel_err)
        ));
        lines.push(format!(
            "observer.max_abs_f_hat={}",
            sig(self.max_abs_fault_estimate)
        ));
        if let Some(t) = self.observer_convergence_s {
            lines.push(format!("observer.convergence_s={}", sig(t)));
        }
        if let Some(c) = &self.comparison {
            match c.divergence_step {
                Some(k) => lines.push(format!("compare.divergence_step={k}")),
                None => lines.push("compare.divergence_step=none".to_string()),
            }
            lines.push(format!(
                "compare.ftc_on.tail_rel_err={}",
                sig(c.ftc_on.tail_rel_err)
            ));
            lines.push(format!(
                "compare.pi_only.tail_rel_err={}",
                sig(c.ftc_off.tail_rel_err)
            ));
            if let Some(r) = &c.pi_only_ratio {
                lines.push(format!("compare.pi_only.ratio={}", sig(r.observed)));
                lines.push(format!("compare.pi_only.predicted={}", sig(r.predicted)));
                lines.push(format!(
                    "compare.pi_only.rel_deviation={}",
                    sig(r.rel_deviation)
                ));
            }
        }
        lines.join("\n") + "\n"
    }
}

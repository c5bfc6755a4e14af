//! Command-line interface.
//!
//! Subcommands: `run` (simulate a scenario to CSV + report), `presets`
//! (list or emit the shipped scenarios), `design` (print the model and
//! estimator design) and `table3` (open-loop reference comparison).
//! Exit codes: 0 success, 1 configuration/validation problem, 2 runtime
//! failure.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::observer::{legacy_gain_output_major, spectrum_mismatch};
use crate::report::{
    build_report, compare_runs, Comparison, DIVERGENCE_EPSILON, OPEN_LOOP_REFERENCE,
};
use crate::scenario_file::parse_scenario_str;
use crate::sim::{
    design_loop, open_loop_table, percent_error, run_designed, ModelSource, Scenario, Trace,
};
use crate::trace_csv::write_trace_csv;

/// A scenario shipped inside the binary.
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub text: &'static str,
}

/// The shipped scenario catalogue (also present under `presets/` in the
/// source tree).
pub fn presets() -> &'static [Preset] {
    &[
        Preset {
            name: "baseline_ftc",
            description: "healthy sensor, 5 s step-reference transient, compensation on",
            text: include_str!("../../../presets/baseline_ftc.toml"),
        },
        Preset {
            name: "baseline_noftc",
            description: "healthy sensor, 5 s step-reference transient, PI only",
            text: include_str!("../../../presets/baseline_noftc.toml"),
        },
        Preset {
            name: "baseline_steady_ftc",
            description: "healthy sensor, 60 s steady-state run, compensation on",
            text: include_str!("../../../presets/baseline_steady_ftc.toml"),
        },
        Preset {
            name: "sens85_ftc",
            description: "85% sensor sensitivity at step 100, compensation on (60 s)",
            text: include_str!("../../../presets/sens85_ftc.toml"),
        },
        Preset {
            name: "sens85_noftc",
            description: "85% sensor sensitivity at step 100, PI only (60 s)",
            text: include_str!("../../../presets/sens85_noftc.toml"),
        },
        Preset {
            name: "sens70_ftc",
            description: "70% sensor sensitivity at step 100, compensation on (60 s)",
            text: include_str!("../../../presets/sens70_ftc.toml"),
        },
        Preset {
            name: "sens70_noftc",
            description: "70% sensor sensitivity at step 100, PI only (60 s)",
            text: include_str!("../../../presets/sens70_noftc.toml"),
        },
        Preset {
            name: "bias_ftc",
            description: "-20 psi sensor bias at step 100, compensation on (120 s)",
            text: include_str!("../../../presets/bias_ftc.toml"),
        },
    ]
}

#[derive(Parser)]
#[command(
    name = "scrubber-ftc",
    version,
    about = "Scrubber pressure-loop simulator with sensor-fault estimation and active FTC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario (file path or preset name) to CSV and a report.
    Run {
        /// Scenario file path, or the name of a shipped preset.
        scenario: String,
        /// Output directory for the CSV and report files.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Print the report as machine-readable key=value lines.
        #[arg(long)]
        machine: bool,
    },
    /// List the shipped scenarios (optionally write them out as files).
    Presets {
        /// Write every preset into this directory.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Print the model matrices, the estimator design and the gain
    /// comparison.
    Design {
        /// Print as machine-readable key=value lines.
        #[arg(long)]
        machine: bool,
    },
    /// Open-loop reference table: measured pressures vs model steady states.
    Table3,
}

/// Entry point behind `main`; returns the process exit code.
pub fn cli_main<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Run {
            scenario,
            out,
            machine,
        } => cmd_run(&scenario, &out, machine),
        Command::Presets { emit } => cmd_presets(emit.as_deref()),
        Command::Design { machine } => cmd_design(machine),
        Command::Table3 => cmd_table3(),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolve a scenario argument: an existing file wins, then a preset name
/// (with or without the `.toml` suffix).
fn resolve_scenario(arg: &str) -> Result<(String, Scenario<f64>)> {
    let path = Path::new(arg);
    if path.exists() {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".to_string());
        return Ok((name, crate::scenario_file::parse_scenario(path)?));
    }
    let stem = arg.strip_suffix(".toml").unwrap_or(arg);
    if let Some(preset) = presets().iter().find(|p| p.name == stem) {
        let scenario = parse_scenario_str(preset.text, preset.name)?;
        return Ok((preset.name.to_string(), scenario));
    }
    Err(Error::Parse {
        path: arg.to_string(),
        message: "no such file, and no shipped preset has this name (see `presets`)".into(),
    })
}

fn cmd_run(arg: &str, out_dir: &Path, machine: bool) -> Result<()> {
    let (name, scenario) = resolve_scenario(arg)?;
    let design = design_loop(&scenario)?;
    let trace = run_designed(&scenario, &design)?;

    // for faulted runs, also execute the toggled counterpart so the report
    // can compare compensated and uncompensated behaviour
    let mut counterpart: Option<(Scenario<f64>, Trace<f64>)> = None;
    if !scenario.fault.is_none() {
        let mut other = scenario.clone();
        other.ftc_enabled = !scenario.ftc_enabled;
        let other_trace = run_designed(&other, &design)?;
        counterpart = Some((other, other_trace));
    }
    let comparison: Option<Comparison> = match &counterpart {
        Some((_, other_trace)) => {
            let (on, off) = if scenario.ftc_enabled {
                (&trace, other_trace)
            } else {
                (other_trace, &trace)
            };
            Some(compare_runs(on, off, DIVERGENCE_EPSILON)?)
        }
        None => None,
    };

    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let csv_path = out_dir.join(format!("{name}.csv"));
    write_trace_csv(&trace, &csv_path)?;
    let mut written = vec![csv_path.display().to_string()];
    if let Some((_, other_trace)) = &counterpart {
        let alt = out_dir.join(format!("{name}.counterpart.csv"));
        write_trace_csv(other_trace, &alt)?;
        written.push(alt.display().to_string());
    }

    let report = build_report(&name, &scenario, &design, &trace, comparison)?;
    let text = report.render_text();
    let report_path = out_dir.join(format!("{name}.report.txt"));
    std::fs::write(&report_path, &text).map_err(|source| Error::Io {
        path: report_path.display().to_string(),
        source,
    })?;
    written.push(report_path.display().to_string());

    if machine {
        print!("{}", report.render_machine());
    } else {
        print!("{text}");
        println!("files written:");
        for w in written {
            println!("  {w}");
        }
    }
    Ok(())
}

fn cmd_presets(emit: Option<&Path>) -> Result<()> {
    let width = presets().iter().map(|p| p.name.len()).max().unwrap_or(0);
    for preset in presets() {
        println!("{:width$}  {}", preset.name, preset.description);
    }
    if let Some(dir) = emit {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for preset in presets() {
            let path = dir.join(format!("{}.toml", preset.name));
            std::fs::write(&path, preset.text).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        println!("wrote {} preset files to {}", presets().len(), dir.display());
    }
    Ok(())
}

fn matrix_lines(name: &str, m: &DMatrix<f64>) -> Vec<String> {
    let mut lines = vec![format!("{name} =")];
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:>12.4}", m[(i, j)])).collect();
        lines.push(format!("  [{}]", row.join(" ")));
    }
    lines
}

fn cmd_design(machine: bool) -> Result<()> {
    let scenario = Scenario::<f64>::baseline(1.0);
    let design = design_loop(&scenario)?;
    let obs = &design.observer;

    let legacy = legacy_gain_output_major::<f64>().transpose();
    let legacy_closed = &obs.a_g - &legacy * &obs.c_g;
    let legacy_poles: Vec<_> = legacy_closed.complex_eigenvalues().iter().copied().collect();
    let legacy_mismatch = spectrum_mismatch(&legacy_poles, &obs.target_poles);
    let placed_mismatch = spectrum_mismatch(&obs.achieved_poles, &obs.target_poles);
    let rank = crate::observer::observability_rank(&obs.a_g, &obs.c_g)?;

    if machine {
        println!("model.K_s={}", design.model.scrubber.gain);
        println!("model.tau_s={}", design.model.scrubber.tau);
        println!("model.K_v={}", design.model.valve.gain);
        println!("model.tau_v={}", design.model.valve.tau);
        println!("observability.rank={}", rank.rank);
        println!("placement.max_rel_error={placed_mismatch:e}");
        println!("placement.slow_mode_condition={}", obs.slow_mode_condition);
        for (i, p) in obs.achieved_poles.iter().enumerate() {
            println!("placement.pole.{i}={},{}", p.re, p.im);
        }
        for i in 0..obs.gain.nrows() {
            let row: Vec<String> = (0..obs.gain.ncols())
                .map(|j| format!("{}", obs.gain[(i, j)]))
                .collect();
            println!("gain.row.{i}={}", row.join(","));
        }
        println!("legacy_gain.max_rel_error={legacy_mismatch:e}");
        println!(
            "legacy_gain.matches_targets={}",
            legacy_mismatch <= 1e-6
        );
        return Ok(());
    }

    println!("plant model (canonical constants)");
    println!(
        "  scrubber: gain {:.6}, tau {:.6} s   (physical path: gain {:.6}, tau {:.6} s)",
        design.model.scrubber.gain,
        design.model.scrubber.tau,
        47.32557288506358,
        0.17024912384592697,
    );
    println!(
        "  valve:    gain {:.6}, tau {:.6} s",
        design.model.valve.gain, design.model.valve.tau
    );
    for line in matrix_lines("A", &design.plant_ss.a) {
        println!("{line}");
    }
    for line in matrix_lines("B", &design.plant_ss.b) {
        println!("{line}");
    }
    for line in matrix_lines("A_g (augmented + fault state)", &obs.a_g) {
        println!("{line}");
    }
    for line in matrix_lines("B_g", &obs.b_g) {
        println!("{line}");
    }
    for line in matrix_lines("C_g", &obs.c_g) {
        println!("{line}");
    }
    println!(
        "observability: rank {} of {} -> {}",
        rank.rank,
        obs.a_g.nrows(),
        if rank.observable { "observable" } else { "NOT observable" }
    );
    println!();
    println!("estimator gain L (placed, slow-mode condition {:.4}):", obs.slow_mode_condition);
    for line in matrix_lines("L", &obs.gain) {
        println!("{line}");
    }
    println!("achieved poles vs targets (max rel error {placed_mismatch:.3e}):");
    for (a, t) in obs.achieved_poles.iter().zip(&obs.target_poles) {
        println!(
            "  {:>12.6} {:>+12.6}i    target {:>12.6} {:>+12.6}i",
            a.re, a.im, t.re, t.im
        );
    }
    println!();
    println!("retained earlier-design gain (output-major), spectrum check:");
    let mut sorted = legacy_poles.clone();
    sorted.sort_by(|x, y| (x.re, x.im).partial_cmp(&(y.re, y.im)).unwrap());
    for p in &sorted {
        println!("  {:>12.6} {:>+12.6}i", p.re, p.im);
    }
    println!(
        "  max rel deviation from targets: {legacy_mismatch:.3} -> {}",
        if legacy_mismatch <= 1e-6 {
            "matches the target poles"
        } else {
            "does NOT reproduce the target poles (kept for reference only)"
        }
    );
    Ok(())
}

fn cmd_table3() -> Result<()> {
    let model = crate::sim::build_model(&ModelSource::<f64>::Canonical)?;
    let ss = model.state_space();
    let dc = crate::sim::dc_gain(&ss.a, &ss.b, &ss.c)?[(0, 0)];

    println!("open-loop reference comparison");
    println!("(reference dataset: measured plant pressures vs previously reported");
    println!(" simulated values; error column recomputed as (sim - real)/real * 100)");
    println!();
    println!("  {:>10} {:>12} {:>10}", "real", "simulation", "error %");
    for (real, sim) in OPEN_LOOP_REFERENCE {
        println!(
            "  {:>10.3} {:>12.1} {:>10.2}",
            real,
            sim,
            percent_error(real, sim)
        );
    }
    println!();
    println!("model cross-check: steady state from simulation vs dc gain {dc:.6} psi/mA");
    let inputs: Vec<f64> = OPEN_LOOP_REFERENCE.iter().map(|(_, sim)| sim / dc).collect();
    let reference: Vec<f64> = OPEN_LOOP_REFERENCE.iter().map(|(real, _)| *real).collect();
    let rows = open_loop_table(&inputs, &model, Some(&reference))?;
    println!(
        "  {:>10} {:>12} {:>12} {:>10} {:>12}",
        "input mA", "sim psi", "dc*u psi", "real psi", "error %"
    );
    for row in rows {
        println!(
            "  {:>10.4} {:>12.4} {:>12.4} {:>10.3} {:>12.2}",
            row.input,
            row.simulated,
            dc * row.input,
            row.reference.unwrap_or(f64::NAN),
            row.percent_error.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftc::FaultKind;
    use crate::scenario_file::scenario_to_toml;

    #[test]
    fn every_preset_parses() {
        for preset in presets() {
            let s = parse_scenario_str(preset.text, preset.name)
                .unwrap_or_else(|e| panic!("{}: {e}", preset.name));
            assert!(s.duration > 0.0);
        }
    }

    #[test]
    fn sens85_preset_contents() {
        let preset = presets().iter().find(|p| p.name == "sens85_ftc").unwrap();
        let s = parse_scenario_str(preset.text, preset.name).unwrap();
        assert!(matches!(s.fault.kind, FaultKind::Sensitivity { alpha } if alpha == 0.85));
        assert_eq!(s.fault.onset_step, 100);
        assert!(s.ftc_enabled);
        assert_eq!(s.observer_poles.len(), 5);
    }

    #[test]
    fn preset_pairs_differ_only_in_ftc_flag() {
        for base in ["baseline", "sens85", "sens70"] {
            let on = presets()
                .iter()
                .find(|p| p.name == format!("{base}_ftc"))
                .unwrap();
            let off = presets()
                .iter()
                .find(|p| p.name == format!("{base}_noftc"))
                .unwrap();
            let mut s_on = parse_scenario_str(on.text, on.name).unwrap();
            let s_off = parse_scenario_str(off.text, off.name).unwrap();
            assert!(s_on.ftc_enabled && !s_off.ftc_enabled);
            s_on.ftc_enabled = false;
            assert_eq!(s_on, s_off);
        }
    }

    #[test]
    fn resolve_prefers_files_then_presets() {
        let (name, _) = resolve_scenario("sens70_ftc").unwrap();
        assert_eq!(name, "sens70_ftc");
        let (name, _) = resolve_scenario("sens70_ftc.toml").unwrap();
        assert_eq!(name, "sens70_ftc");
        assert!(resolve_scenario("no_such_scenario").is_err());
    }

    #[test]
    fn preset_files_match_embedded_copies() {
        // the source-tree files and the embedded catalogue must not drift
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
        for preset in presets() {
            let path = dir.join(format!("{}.toml", preset.name));
            let on_disk = std::fs::read_to_string(&path).unwrap();
            assert_eq!(on_disk, preset.text, "{}", preset.name);
        }
    }

    #[test]
    fn every_preset_runs_to_completion() {
        for preset in presets() {
            let s = parse_scenario_str(preset.text, preset.name).unwrap();
            let trace = crate::sim::run_scenario(&s)
                .unwrap_or_else(|e| panic!("{}: {e}", preset.name));
            assert_eq!(trace.len(), s.n_steps() + 1, "{}", preset.name);
            crate::trace_csv::render_trace_csv(&trace)
                .unwrap_or_else(|e| panic!("{}: {e}", preset.name));
        }
    }

    #[test]
    fn scenario_serialization_is_stable() {
        let preset = presets().iter().find(|p| p.name == "bias_ftc").unwrap();
        let s = parse_scenario_str(preset.text, preset.name).unwrap();
        let text = scenario_to_toml(&s);
        let again = parse_scenario_str(&text, "roundtrip").unwrap();
        assert_eq!(s, again);
    }
}

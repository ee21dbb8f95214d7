use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use handsim::control::{tune_position_gain, ControllerConfig};
use handsim::grasp::GraspLibrary;
use handsim::harness::console::{console_repl, run_script};
use handsim::harness::{payload_hold_test, run_experiment, speed_test, EventKind, HandConfig, HandSim, Scenario};
use handsim::kinematics::{grasp_radius_envelope, write_trajectory_csv};
use handsim::plant::{count_resolution, size_actuation, sizing_payload_limit, MotorParams};
use handsim::protocol::telemetry_csv_header;
use handsim::tactile::{
    calibrate_cycles, calibration_trace, characterize_preset, preset, preset_range, Finger, LoadingTrace,
    CALIBRATION_CYCLES, REPORT_CSV_HEADER,
};

#[derive(Parser)]
#[command(name = "sim", version, about = "Tactile robotic hand simulator")]
struct Cli {
    /// Hand configuration (TOML); built-in defaults otherwise.
    #[arg(long, global = true)]
    hand: Option<PathBuf>,
    /// Grasp library (TOML); the built-in library otherwise.
    #[arg(long, global = true)]
    grasps: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a grasp/hold/move/hold/shake scenario; exits non-zero if any
    /// expectation in the file fails.
    Run {
        scenario: PathBuf,
        /// Write the telemetry frames as CSV.
        #[arg(long)]
        telemetry: Option<PathBuf>,
        /// Print every logged event.
        #[arg(long)]
        events: bool,
    },
    /// MediumWrap closing and opening times over global speed factors.
    Speedtest {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0")]
        factors: Vec<f64>,
    },
    /// Payload hold test with MediumWrap on a handle of the given mass.
    Payload {
        #[arg(long, default_value_t = 2.65)]
        mass: f64,
    },
    /// Actuator sizing for holding a payload.
    Size {
        /// kg.
        #[arg(long)]
        payload: f64,
        /// mm.
        #[arg(long, default_value_t = 36.0)]
        lever: f64,
        #[arg(long, default_value_t = 20.0)]
        worm: f64,
        /// Gearbox stall torque, N mm.
        #[arg(long, default_value_t = 107.0)]
        stall: f64,
    },
    /// Calibrate a taxel from a loading trace CSV (t_s,f_ref_N,p_hPa,v_label_mm_s).
    Calibrate {
        traces: PathBuf,
        #[arg(long, default_value_t = 1)]
        degree: usize,
        #[arg(long, default_value_t = CALIBRATION_CYCLES)]
        cycles: usize,
        /// Write the fitted model as TOML.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full synthetic characterization of the five fingertip sensors.
    Characterize {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also run the range/threshold staircase.
        #[arg(long)]
        range: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic 25-cycle calibration trace for one fingertip.
    Traces {
        #[arg(long, default_value = "pinky")]
        finger: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        out: PathBuf,
    },
    /// Operator console on stdin/stdout, or a timed script.
    Console {
        /// Scenario whose object is placed in the hand.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Run a timed script instead of reading stdin.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Do not pace the simulation to wall-clock time.
        #[arg(long)]
        fast: bool,
    },
    /// Controller gains and position-gain tuning per gearbox.
    Tune,
    /// Fingertip trajectory and grasp envelope of the finger geometry.
    Trajectory {
        #[arg(long, default_value_t = 91)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_hand(path: Option<&Path>) -> Result<HandConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let cfg: HandConfig = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            cfg.validate()?;
            Ok(cfg)
        }
        None => Ok(HandConfig::default()),
    }
}

fn load_library(path: Option<&Path>) -> Result<GraspLibrary> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(GraspLibrary::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => Ok(GraspLibrary::builtin()),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scenario::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
}

fn finger_by_name(name: &str) -> Result<Finger> {
    Finger::ALL
        .into_iter()
        .find(|f| f.name().eq_ignore_ascii_case(name))
        .with_context(|| format!("unknown finger '{name}'"))
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<bool> {
    let hand_cfg = || load_hand(cli.hand.as_deref());
    let library = || load_library(cli.grasps.as_deref());
    match &cli.cmd {
        Cmd::Run { scenario, telemetry, events } => {
            let sc = load_scenario(scenario)?;
            let cfg = match &sc.hand {
                Some(h) if cli.hand.is_none() => h.clone(),
                _ => hand_cfg()?,
            };
            let res = run_experiment(&sc, &cfg, &library()?)?;
            let s = &res.summary;
            println!("scenario {} ({} on {})", sc.name, sc.grasp, sc.object.name);
            for p in &res.log.phases {
                println!("  {:<6} {:>9.3} s .. {:>9.3} s", p.name, p.start_tick as f64 * 1e-4, p.end_tick as f64 * 1e-4);
            }
            match s.closing_time {
                Some(t) => println!("  grasp reached after {t:.3} s{}", if s.operator_stop { " (operator stop)" } else { "" }),
                None => println!("  grasp not reached"),
            }
            println!("  max holding current {:.3} A, max angle drift {:.3e} rad", s.max_holding_current, s.max_angle_drift);
            println!("  longest contact loss during shake {:.3} s", s.longest_contact_loss);
            println!(
                "  retained={} dropped={} grasp_failed={} stalled={}",
                s.retained, s.dropped, s.grasp_failed, s.stalled
            );
            for e in &res.log.events {
                let show = *events || !matches!(e.kind, EventKind::ContactOn { .. } | EventKind::ContactOff { .. });
                if show {
                    println!("  event {:>9.4} s {:?}", e.tick as f64 * 1e-4, e.kind);
                }
            }
            if let Some(path) = telemetry {
                let mut w = output(Some(path))?;
                writeln!(w, "{}", telemetry_csv_header())?;
                for f in &res.log.frames {
                    writeln!(w, "{}", f.csv())?;
                }
            }
            let failures = res.check(&sc.expect);
            for f in &failures {
                println!("FAIL {f}");
            }
            if failures.is_empty() {
                println!("PASS");
            }
            Ok(failures.is_empty())
        }
        Cmd::Speedtest { factors } => {
            let rows = speed_test(&hand_cfg()?, &library()?, factors)?;
            println!("factor,closing_s,opening_s");
            for r in rows {
                println!("{},{:.3},{:.3}", r.factor, r.closing, r.opening);
            }
            Ok(true)
        }
        Cmd::Payload { mass } => {
            let r = payload_hold_test(&hand_cfg()?, &library()?, *mass)?;
            let s = &r.result.summary;
            println!(
                "payload {mass} kg: {} (retained={} max holding current {:.3} A, stalled={})",
                if r.pass { "pass" } else { "fail" },
                s.retained,
                s.max_holding_current,
                s.stalled
            );
            Ok(r.pass)
        }
        Cmd::Size { payload, lever, worm, stall } => {
            let r = size_actuation(*payload, *lever, *worm, *stall);
            println!("F_G     = {:.1} N", r.grip_force);
            println!("M_MCP   = {:.0} N·mm", r.mcp_torque);
            println!("M_motor = {:.0} N·mm", r.motor_torque);
            println!("safety  = {:.2}", r.safety_factor);
            println!("payload limit at safety 1 = {:.2} kg", sizing_payload_limit(*lever, *worm, *stall));
            Ok(true)
        }
        Cmd::Calibrate { traces, degree, cycles, out } => {
            let f = fs::File::open(traces).with_context(|| format!("opening {}", traces.display()))?;
            let trace = LoadingTrace::read_csv(BufReader::new(f))?;
            let c = calibrate_cycles(&trace, *degree, *cycles)?;
            println!("degree        {}", c.degree);
            println!("R^2           {:.5}", c.r_squared);
            println!("P0            {:.2} hPa", c.p0_est);
            println!("range         {:.3} N", c.range_est);
            println!("sensitivity   {:.2} hPa/N", c.sensitivity_est);
            println!("hysteresis    {:.2} % of range", 100.0 * c.hysteresis_frac);
            println!("drift         {:.3} % of zero value", 100.0 * c.drift_frac);
            if let Some(p) = out {
                fs::write(p, toml::to_string(&c)?)?;
            }
            Ok(true)
        }
        Cmd::Characterize { seed, range, out } => {
            let mut w = output(out.as_ref())?;
            writeln!(w, "{REPORT_CSV_HEADER}{}", if *range { ",threshold_N,range_N" } else { "" })?;
            for f in Finger::ALL {
                let p = preset(f);
                let (_, row) = characterize_preset(&p, *seed)?;
                let extra = if *range {
                    let r = preset_range(&p, *seed);
                    format!(",{:.4},{:.3}", r.threshold, r.range)
                } else {
                    String::new()
                };
                writeln!(w, "{}{extra}", row.csv())?;
            }
            Ok(true)
        }
        Cmd::Traces { finger, seed, out } => {
            let p = preset(finger_by_name(finger)?);
            let trace = calibration_trace(&p.model, *seed);
            trace.write_csv(io::BufWriter::new(fs::File::create(out)?))?;
            println!("{} samples written to {}", trace.len(), out.display());
            Ok(true)
        }
        Cmd::Console { scenario, script, fast } => {
            let (cfg, object) = match scenario {
                Some(p) => {
                    let sc = load_scenario(p)?;
                    (sc.hand.clone().unwrap_or(hand_cfg()?), Some(sc.object))
                }
                None => (hand_cfg()?, None),
            };
            let mut hand = HandSim::new(cfg, library()?)?;
            if let Some(o) = &object {
                hand.place_object(o)?;
            }
            let mut stdout = io::stdout().lock();
            match script {
                Some(p) => run_script(&mut hand, &fs::read_to_string(p)?, &mut stdout)?,
                None => console_repl(&mut hand, BufReader::new(io::stdin()), &mut stdout, !fast)?,
            }
            Ok(true)
        }
        Cmd::Tune => {
            let cfg = hand_cfg()?;
            println!("gearbox,kp_cur,ki_cur,kp_vel,ki_vel,kd_vel,kp_pos_max,count_rad");
            for ratio in [75.0, 100.0] {
                let p = MotorParams::with_gearbox(ratio);
                let c = ControllerConfig::tuned(&p);
                let kp = tune_position_gain(&p, &c, cfg.encoder_cpr, 0.5, 0.1);
                println!(
                    "{ratio},{:.4},{:.1},{:.4},{:.3},{:.2e},{:.2},{:.3e}",
                    c.kp_cur,
                    c.ki_cur,
                    c.kp_vel,
                    c.ki_vel,
                    c.kd_vel,
                    kp,
                    count_resolution(cfg.encoder_cpr, &p)
                );
            }
            Ok(true)
        }
        Cmd::Trajectory { samples, out } => {
            let cfg = hand_cfg()?;
            let env = grasp_radius_envelope(&cfg.geometry, 361)?;
            eprintln!("grasp envelope {:.1} .. {:.1} mm", env.r_min, env.r_max);
            write_trajectory_csv(&cfg.geometry, *samples, output(out.as_ref())?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

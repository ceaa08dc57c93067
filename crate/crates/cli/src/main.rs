//! Command-line front end for the transient-stability engine.
//!
//! Five commands: `simulate` runs one scenario and writes the trajectory;
//! `metrics` pairs a controlled and an uncontrolled run and compares their
//! fluctuation metrics; `ccl` brackets critical clearing times per bus with
//! and without the fleet; `sweep` averages clearing-time gains across fleet
//! penetrations; `validate` lints a case file.
//!
//! Every output file carries the resolved configuration and the SHA-256 of
//! the case file in `#` header comments (or JSON fields), so a result can be
//! traced back to its exact inputs. Identical invocations produce
//! byte-identical outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use gridtide::analysis::{write_metrics_csv, write_sweep_csv};
use gridtide::control::DEFAULT_SATURATION_MHZ;
use gridtide::prelude::*;
use gridtide::scenario::parse_events;
use gridtide::timeseries::TimeSeries;

#[derive(Parser)]
#[command(
    name = "gridtide",
    version,
    about = "Transient-stability simulation with aggregated EV-fleet control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one disturbance scenario and write the sampled trajectory
    Simulate(SimulateArgs),
    /// Run a disturbance with and without the fleet; compare fluctuations
    Metrics(MetricsArgs),
    /// Bracket critical clearing times per bus, without and with the fleet
    Ccl(CclArgs),
    /// Average clearing-time gain across fleet penetration levels
    Sweep(SweepArgs),
    /// Load a case file and report what it contains
    Validate(ValidateArgs),
}

#[derive(Args)]
struct CaseArgs {
    /// Case file (JSON); the bundled 39-bus system when omitted
    #[arg(long, value_name = "FILE")]
    case: Option<PathBuf>,
}

/// A loaded case plus the provenance of its bytes.
struct LoadedCase {
    case: NetworkCase,
    label: String,
    sha256: String,
}

impl CaseArgs {
    fn load(&self) -> anyhow::Result<LoadedCase> {
        match &self.case {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading case file {}", path.display()))?;
                Ok(LoadedCase {
                    case: load_case(&text)?,
                    label: path.display().to_string(),
                    sha256: sha256_hex(text.as_bytes()),
                })
            }
            None => Ok(LoadedCase {
                case: gridtide::ne39::new_england_39(),
                label: "bundled ne39".into(),
                sha256: sha256_hex(gridtide::ne39::CASE_JSON.as_bytes()),
            }),
        }
    }
}

#[derive(Args)]
struct IntegrationArgs {
    /// Integration step, s
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Simulated horizon, s
    #[arg(long, default_value_t = 10.0)]
    horizon: f64,
    /// Sampling interval of recorded output, s
    #[arg(long, default_value_t = 1e-2)]
    output_interval: f64,
}

#[derive(Args)]
struct FleetArgs {
    /// Rated charge/discharge power per vehicle, kW
    #[arg(long, default_value_t = 10.0)]
    per_vehicle_kw: f64,
    /// Deviation at which the fleet saturates, mHz
    #[arg(long, default_value_t = DEFAULT_SATURATION_MHZ)]
    saturation_mhz: f64,
}

#[derive(Args)]
struct OutputArgs {
    /// Directory for output files
    #[arg(long, value_name = "DIR", default_value = ".")]
    output_dir: PathBuf,
    /// Cap on concurrent simulations; overrides GRIDTIDE_THREADS
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// JSON event list; overrides the shortcut flags below
    #[arg(long, value_name = "FILE")]
    scenario: Option<PathBuf>,
    /// Apply a bolted three-phase fault at this bus
    #[arg(long)]
    fault_bus: Option<usize>,
    /// Fault application time, s
    #[arg(long, default_value_t = 1.0)]
    fault_start: f64,
    /// Fault duration until clearing, s
    #[arg(long)]
    fault_duration: Option<f64>,
    /// Trip the branch from this bus (requires --trip-to)
    #[arg(long)]
    trip_from: Option<usize>,
    /// Far end of the tripped branch
    #[arg(long)]
    trip_to: Option<usize>,
    /// Trip time, s
    #[arg(long, default_value_t = 1.0)]
    trip_start: f64,
    /// Return the branch to service after this long, s; permanent if omitted
    #[arg(long)]
    trip_restore: Option<f64>,
    /// Scale the load at this bus (requires --step-factor)
    #[arg(long)]
    step_bus: Option<usize>,
    /// New load level as a fraction of nominal (0.9 = 10% decrease)
    #[arg(long)]
    step_factor: Option<f64>,
    /// Step time, s
    #[arg(long, default_value_t = 1.0)]
    step_start: f64,
    /// Revert the load step after this long, s; permanent if omitted
    #[arg(long)]
    step_hold: Option<f64>,
}

impl ScenarioArgs {
    fn events(&self) -> anyhow::Result<Vec<DisturbanceEvent>> {
        if let Some(path) = &self.scenario {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading scenario file {}", path.display()))?;
            return Ok(parse_events(&text)?);
        }
        let mut events = Vec::new();
        match (self.fault_bus, self.fault_duration) {
            (Some(bus), Some(d)) => events.extend(fault_at(bus, self.fault_start, d)?),
            (None, None) => {}
            _ => bail!("--fault-bus and --fault-duration go together"),
        }
        match (self.trip_from, self.trip_to) {
            (Some(f), Some(t)) => {
                events.extend(branch_trip(f, t, self.trip_start, self.trip_restore)?)
            }
            (None, None) => {}
            _ => bail!("--trip-from and --trip-to go together"),
        }
        match (self.step_bus, self.step_factor) {
            (Some(b), Some(f)) => {
                events.extend(load_step(b, self.step_start, f, self.step_hold)?)
            }
            (None, None) => {}
            _ => bail!("--step-bus and --step-factor go together"),
        }
        Ok(events)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    run: IntegrationArgs,
    /// Participating vehicles
    #[arg(long, default_value_t = 0)]
    n_pev: u64,
    #[command(flatten)]
    fleet: FleetArgs,
    /// Keep integrating after the rotor angles separate (for plotting)
    #[arg(long)]
    no_early_stop: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    run: IntegrationArgs,
    /// Participating vehicles in the controlled run
    #[arg(long, default_value_t = 50_000)]
    n_pev: u64,
    #[command(flatten)]
    fleet: FleetArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct CclArgs {
    #[command(flatten)]
    case: CaseArgs,
    /// Faulted buses, repeatable or comma-separated
    #[arg(long = "bus", value_delimiter = ',', required = true)]
    buses: Vec<usize>,
    /// Participating vehicles in the controlled column; 0 skips it
    #[arg(long, default_value_t = 50_000)]
    n_pev: u64,
    #[command(flatten)]
    fleet: FleetArgs,
    /// Bracket width of the reported clearing time, s
    #[arg(long, default_value_t = 1e-3)]
    resolution: f64,
    /// Fault application time, s
    #[arg(long, default_value_t = 1.0)]
    fault_start: f64,
    /// Longest fault duration considered, s
    #[arg(long, default_value_t = 1.0)]
    max_duration: f64,
    #[command(flatten)]
    run: IntegrationArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    case: CaseArgs,
    /// Penetration levels, percent of the national fleet
    #[arg(
        long = "penetration",
        value_delimiter = ',',
        default_values_t = [0.0, 1.0, 2.0, 4.0, 5.5, 7.0, 10.0]
    )]
    penetrations: Vec<f64>,
    /// Fault buses averaged at each level, repeatable or comma-separated
    #[arg(long = "bus", value_delimiter = ',', required = true)]
    buses: Vec<usize>,
    /// National fleet size the percentages refer to
    #[arg(long, default_value_t = 5_000_000)]
    fleet_size: u64,
    /// Rated charge/discharge power per vehicle, kW
    #[arg(long, default_value_t = 10.0)]
    per_vehicle_kw: f64,
    /// Bracket width of the clearing times, s
    #[arg(long, default_value_t = 1e-3)]
    resolution: f64,
    /// Fault application time, s
    #[arg(long, default_value_t = 1.0)]
    fault_start: f64,
    /// Longest fault duration considered, s
    #[arg(long, default_value_t = 1.0)]
    max_duration: f64,
    #[command(flatten)]
    run: IntegrationArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    case: CaseArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// Validation problems exit 2, numerical failures 3, I/O failures 1.
fn classify(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<gridtide::Error>() {
        if matches!(e, gridtide::Error::Io(_)) {
            1
        } else if e.is_validation() {
            2
        } else {
            3
        }
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        1
    } else {
        2
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = match &cli.command {
        Command::Simulate(a) => a.out.threads,
        Command::Metrics(a) => a.out.threads,
        Command::Ccl(a) => a.out.threads,
        Command::Sweep(a) => a.out.threads,
        Command::Validate(_) => None,
    };
    configure_parallelism(threads)?;
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Ccl(args) => cmd_ccl(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Validate(args) => cmd_validate(args),
    }
}

fn configure_parallelism(flag: Option<usize>) -> anyhow::Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("GRIDTIDE_THREADS") {
            Ok(s) => Some(s.trim().parse::<usize>().map_err(|_| {
                anyhow::anyhow!("GRIDTIDE_THREADS must be a positive integer, got {s:?}")
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            bail!("thread cap must be at least 1");
        }
        gridtide::par::configure_threads(n);
    }
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Header-comment lines embedding the resolved configuration.
fn provenance(
    command: &str,
    loaded: &LoadedCase,
    extra: &[(&str, String)],
) -> Vec<String> {
    let mut lines = vec![
        format!("command: {command}"),
        format!("case: {}", loaded.label),
        format!("case_sha256: {}", loaded.sha256),
    ];
    for (k, v) in extra {
        lines.push(format!("{k}: {v}"));
    }
    lines
}

fn build_controller(
    case: &NetworkCase,
    n_pev: u64,
    fleet: &FleetArgs,
) -> gridtide::Result<Controller> {
    if n_pev == 0 {
        return Ok(Controller::disabled(case));
    }
    let mut f = build_fleet(case, n_pev, fleet.per_vehicle_kw)?;
    // The default threshold keeps the builder's exact gains.
    if fleet.saturation_mhz != DEFAULT_SATURATION_MHZ {
        f = f.with_saturation_mhz(fleet.saturation_mhz)?;
    }
    Ok(Controller::new(f))
}

fn create_output(dir: &PathBuf, name: &str) -> anyhow::Result<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    let file =
        File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok((path, BufWriter::new(file)))
}

/// Stability verdict, or "unknown" when the horizon is shorter than the
/// settling window the verdict is defined over.
fn verdict_of(ts: &TimeSeries) -> anyhow::Result<&'static str> {
    match is_stable(ts, &StabilityCriteria::default()) {
        Ok(true) => Ok("stable"),
        Ok(false) => Ok("unstable"),
        Err(gridtide::Error::HorizonTooShort { .. }) => Ok("unknown"),
        Err(e) => Err(e.into()),
    }
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let loaded = args.case.load()?;
    let events = args.scenario.events()?;
    let init = InitializedCase::from_case(loaded.case.clone())?;
    let machines = Machines::from_init(&init);
    let controller = build_controller(&init.case, args.n_pev, &args.fleet)?;
    let scenario = compile_scenario(&init, &events, args.run.horizon)?;
    let opts = SimOptions {
        dt: args.run.dt,
        output_interval: args.run.output_interval,
        stop_on_instability: !args.no_early_stop,
        // A post-disturbance solve failure is voltage collapse: truncate and
        // classify instead of aborting. Pre-disturbance failures stay fatal.
        collapse_is_instability: true,
        ..SimOptions::default()
    };
    let (ts, stats) = simulate(&initial_state(&init), &scenario, &machines, &controller, &opts)?;
    let verdict = verdict_of(&ts)?;

    let config = [
        ("events", serde_json::to_string(&events)?),
        ("dt_s", args.run.dt.to_string()),
        ("horizon_s", args.run.horizon.to_string()),
        ("output_interval_s", args.run.output_interval.to_string()),
        ("n_pev", args.n_pev.to_string()),
        ("per_vehicle_kw", args.fleet.per_vehicle_kw.to_string()),
        ("saturation_mhz", args.fleet.saturation_mhz.to_string()),
    ];
    let comments = provenance("simulate", &loaded, &config);
    let (ts_path, mut w) = create_output(&args.out.output_dir, "timeseries.csv")?;
    ts.write_csv(&mut w, &comments)?;
    w.flush()?;

    let last = ts.n_samples() - 1;
    let summary = serde_json::json!({
        "command": "simulate",
        "case": loaded.label,
        "case_sha256": loaded.sha256,
        "config": {
            "events": serde_json::to_value(&events)?,
            "dt_s": args.run.dt,
            "horizon_s": args.run.horizon,
            "output_interval_s": args.run.output_interval,
            "n_pev": args.n_pev,
            "per_vehicle_kw": args.fleet.per_vehicle_kw,
            "saturation_mhz": args.fleet.saturation_mhz,
        },
        "verdict": verdict,
        "early_stop_s": ts.early_stop,
        "max_angle_spread_deg": ts.max_angle_spread().to_degrees(),
        "final_state": {
            "t_s": ts.times[last],
            "omega_hz": ts.omega_row(last),
            "phi_rad": ts.phi_row(last),
            "v_pu": ts.v_row(last),
            "p_acvg_mw": ts.p_acvg_row(last),
            "delta_omega_hz": ts.delta_omega_hz[last],
        },
        "stats": {
            "steps": stats.steps,
            "newton_iterations": stats.newton_iterations,
            "fallback_solves": stats.fallback_solves,
            "suppressions_s": stats.suppressions,
            "collapse_at_s": stats.collapse_at,
        },
    });
    let (sum_path, mut w) = create_output(&args.out.output_dir, "summary.json")?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;

    match ts.early_stop {
        Some(t) => println!("verdict: {verdict} (lost synchronism at t = {t:.3} s)"),
        None => println!("verdict: {verdict}"),
    }
    println!("wrote {} and {}", ts_path.display(), sum_path.display());
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> anyhow::Result<()> {
    let loaded = args.case.load()?;
    let events = args.scenario.events()?;
    if events.is_empty() {
        bail!("metrics needs a disturbance; give shortcut flags or --scenario");
    }
    let init = InitializedCase::from_case(loaded.case.clone())?;
    let machines = Machines::from_init(&init);
    let scenario = compile_scenario(&init, &events, args.run.horizon)?;
    let opts = SimOptions {
        dt: args.run.dt,
        output_interval: args.run.output_interval,
        ..SimOptions::default()
    };
    let state0 = initial_state(&init);
    let nominal: Vec<f64> = init.acvg_voltages().iter().map(|v| v.norm()).collect();

    let baseline = Controller::disabled(&init.case);
    let controlled = build_controller(&init.case, args.n_pev, &args.fleet)?;
    let (ts_without, _) = simulate(&state0, &scenario, &machines, &baseline, &opts)?;
    let (ts_with, _) = simulate(&state0, &scenario, &machines, &controlled, &opts)?;
    let cmp = compare_fluctuations(
        fluctuation_metrics(&ts_without, &nominal)?,
        fluctuation_metrics(&ts_with, &nominal)?,
    );

    let config = [
        ("events", serde_json::to_string(&events)?),
        ("dt_s", args.run.dt.to_string()),
        ("horizon_s", args.run.horizon.to_string()),
        ("output_interval_s", args.run.output_interval.to_string()),
        ("n_pev", args.n_pev.to_string()),
        ("per_vehicle_kw", args.fleet.per_vehicle_kw.to_string()),
        ("saturation_mhz", args.fleet.saturation_mhz.to_string()),
        ("verdict_without_control", verdict_of(&ts_without)?.to_string()),
        ("verdict_with_control", verdict_of(&ts_with)?.to_string()),
    ];
    let comments = provenance("metrics", &loaded, &config);
    let (path, mut w) = create_output(&args.out.output_dir, "metrics.csv")?;
    write_metrics_csv(&mut w, &cmp, &comments)?;
    w.flush()?;

    println!(
        "speed   MSD: {:.6e} -> {:.6e} Hz^2   ({:+.1}%)",
        cmp.without.speed_msd_hz2,
        cmp.with_control.speed_msd_hz2,
        -cmp.speed_reduction_pct
    );
    println!(
        "voltage MSD: {:.6e} -> {:.6e} pu^2   ({:+.1}%)",
        cmp.without.voltage_msd_pu2,
        cmp.with_control.voltage_msd_pu2,
        -cmp.voltage_reduction_pct
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// One paired clearing-time row of the `ccl` table.
fn ccl_cell(outcome: &CclOutcome) -> String {
    match outcome {
        CclOutcome::Found(r) => r.t_ccl.to_string(),
        CclOutcome::StableThroughout { max_tested, .. } => format!(">{max_tested}"),
    }
}

fn cmd_ccl(args: CclArgs) -> anyhow::Result<()> {
    let loaded = args.case.load()?;
    let init = InitializedCase::from_case(loaded.case.clone())?;
    let search = CclSearch {
        fault_start: args.fault_start,
        resolution: args.resolution,
        max_duration: args.max_duration,
        horizon: args.run.horizon,
        sim: SimOptions {
            dt: args.run.dt,
            output_interval: args.run.output_interval,
            stop_on_instability: true,
            ..SimOptions::default()
        },
        criteria: StabilityCriteria::default(),
        assume_stable_base: false,
    };

    // Certify the undisturbed case once, then let every search assume it.
    let quiet = compile_scenario(&init, &[], search.horizon)?;
    let machines = Machines::from_init(&init);
    let (ts, _) = simulate(
        &initial_state(&init),
        &quiet,
        &machines,
        &Controller::disabled(&init.case),
        &search.sim,
    )?;
    if !is_stable(&ts, &search.criteria)? {
        bail!("case is unstable without any disturbance; clearing times are undefined");
    }
    let search = CclSearch { assume_stable_base: true, ..search };

    let controlled = if args.n_pev > 0 {
        Some(build_controller(&init.case, args.n_pev, &args.fleet)?)
    } else {
        None
    };
    let baseline = Controller::disabled(&init.case);
    let mut jobs: Vec<(usize, &Controller)> = Vec::new();
    for &bus in &args.buses {
        jobs.push((bus, &baseline));
        if let Some(c) = &controlled {
            jobs.push((bus, c));
        }
    }
    let outcomes = gridtide::par::map_ordered(&jobs, |&(bus, controller)| {
        find_ccl(&init, controller, bus, &search)
    });
    let outcomes: Vec<CclOutcome> = outcomes.into_iter().collect::<gridtide::Result<_>>()?;

    let config = [
        ("buses", join(&args.buses)),
        ("n_pev", args.n_pev.to_string()),
        ("per_vehicle_kw", args.fleet.per_vehicle_kw.to_string()),
        ("saturation_mhz", args.fleet.saturation_mhz.to_string()),
        ("resolution_s", args.resolution.to_string()),
        ("fault_start_s", args.fault_start.to_string()),
        ("max_duration_s", args.max_duration.to_string()),
        ("dt_s", args.run.dt.to_string()),
        ("horizon_s", args.run.horizon.to_string()),
    ];
    let comments = provenance("ccl", &loaded, &config);
    let (path, mut w) = create_output(&args.out.output_dir, "ccl.csv")?;
    for line in &comments {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "bus,t_ccl_base_s,t_ccl_fleet_s,increase_pct")?;
    let stride = if controlled.is_some() { 2 } else { 1 };
    for (i, &bus) in args.buses.iter().enumerate() {
        let base = &outcomes[i * stride];
        let with = controlled.is_some().then(|| &outcomes[i * stride + 1]);
        let base_cell = ccl_cell(base);
        let (with_cell, pct) = match with {
            Some(o) => {
                let pct = match (base.found(), o.found()) {
                    (Some(b), Some(h)) => Some(100.0 * (h.t_ccl - b.t_ccl) / b.t_ccl),
                    _ => None,
                };
                (ccl_cell(o), pct)
            }
            None => (String::new(), None),
        };
        let pct_cell = pct.map(|p| p.to_string()).unwrap_or_default();
        writeln!(w, "{bus},{base_cell},{with_cell},{pct_cell}")?;
        if with_cell.is_empty() {
            println!("bus {bus}: t_ccl {base_cell} s");
        } else if let Some(p) = pct {
            println!("bus {bus}: t_ccl {base_cell} -> {with_cell} s ({p:+.1}%)");
        } else {
            println!("bus {bus}: t_ccl {base_cell} -> {with_cell} s");
        }
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let loaded = args.case.load()?;
    let init = InitializedCase::from_case(loaded.case.clone())?;
    let config = SweepConfig {
        penetrations_pct: args.penetrations.clone(),
        fault_buses: args.buses.clone(),
        fleet_size: args.fleet_size,
        per_vehicle_kw: args.per_vehicle_kw,
        search: CclSearch {
            fault_start: args.fault_start,
            resolution: args.resolution,
            max_duration: args.max_duration,
            horizon: args.run.horizon,
            sim: SimOptions {
                dt: args.run.dt,
                output_interval: args.run.output_interval,
                stop_on_instability: true,
                ..SimOptions::default()
            },
            criteria: StabilityCriteria::default(),
            assume_stable_base: false,
        },
    };
    let points = penetration_sweep(&init, &config)?;

    let extra = [
        ("penetrations_pct", join(&args.penetrations)),
        ("buses", join(&args.buses)),
        ("fleet_size", args.fleet_size.to_string()),
        ("per_vehicle_kw", args.per_vehicle_kw.to_string()),
        ("resolution_s", args.resolution.to_string()),
        ("fault_start_s", args.fault_start.to_string()),
        ("max_duration_s", args.max_duration.to_string()),
        ("dt_s", args.run.dt.to_string()),
        ("horizon_s", args.run.horizon.to_string()),
    ];
    let comments = provenance("sweep", &loaded, &extra);
    let (path, mut w) = create_output(&args.out.output_dir, "sweep.csv")?;
    write_sweep_csv(&mut w, &points, &comments)?;
    w.flush()?;

    for p in &points {
        println!(
            "{:5.1}% ({:>8} vehicles): avg t_ccl increase {:+.1}% over {} buses",
            p.penetration_pct, p.n_pev, p.avg_ccl_increase_pct, p.buses_used
        );
    }
    let peak = points
        .iter()
        .max_by(|a, b| {
            a.avg_ccl_increase_pct
                .partial_cmp(&b.avg_ccl_increase_pct)
                .expect("averages are finite")
        })
        .expect("sweep returns at least the baseline");
    println!(
        "peak: {:+.1}% at {}% penetration ({} vehicles)",
        peak.avg_ccl_increase_pct, peak.penetration_pct, peak.n_pev
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> anyhow::Result<()> {
    let loaded = args.case.load()?;
    let case = &loaded.case;
    println!("case:        {} ({})", case.name, loaded.label);
    if !case.description.is_empty() {
        println!("description: {}", case.description);
    }
    println!("sha256:      {}", loaded.sha256);
    println!(
        "size:        {} buses, {} branches, {} machines, {} loads, {} fleet buses",
        case.n_buses(),
        case.branches.len(),
        case.n_generators(),
        case.loads.len(),
        case.n_acvg()
    );
    println!(
        "base:        {} MVA, {} Hz, swing machine at bus {}",
        case.mva_base,
        case.frequency_hz,
        case.generators[case.swing_index()].bus_id
    );
    let load_mw: f64 = case.loads.iter().map(|l| l.p_mw).sum();
    let dispatch_mw: f64 = case.generators.iter().map(|g| g.p_mw).sum();
    println!("schedule:    {load_mw:.1} MW load, {dispatch_mw:.1} MW dispatched");
    if let Some(cal) = &case.calibration {
        println!(
            "calibration: fault bus {}, t_ccl {} s (+-{} s); {}",
            cal.fault_bus, cal.t_ccl_s, cal.resolution_s, cal.note
        );
    }

    let pf = solve_power_flow(case)?;
    let vmin = pf.voltages.iter().map(|v| v.norm()).fold(f64::MAX, f64::min);
    let vmax = pf.voltages.iter().map(|v| v.norm()).fold(0.0, f64::max);
    println!(
        "power flow:  converged in {} iterations, max mismatch {:.2e} pu, |V| in [{:.4}, {:.4}] pu",
        pf.iterations, pf.max_mismatch, vmin, vmax
    );
    InitializedCase::from_case(case.clone())?;
    println!("dynamic init: ok");
    Ok(())
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

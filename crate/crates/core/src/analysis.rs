//! Trajectory classification, clearing-time search, fleet-size sweeps.

use std::io::{self, Write};

use crate::control::{build_fleet, Controller};
use crate::dynamics::{initial_state, simulate, Machines, SimOptions};
use crate::error::{Error, Result};
use crate::powerflow::InitializedCase;
use crate::scenario::{fault_at, ScenarioCompiler};
use crate::timeseries::TimeSeries;

/// What counts as a stable trajectory.
#[derive(Debug, Clone, Copy)]
pub struct StabilityCriteria {
    /// Largest tolerated rotor-angle spread at any sample, rad.
    pub max_angle_spread_rad: f64,
    /// Largest tolerated per-machine frequency deviation near the end, Hz.
    pub frequency_band_hz: f64,
    /// Length of the terminal window the frequency test covers, s.
    pub final_window_s: f64,
}

impl Default for StabilityCriteria {
    fn default() -> Self {
        StabilityCriteria {
            max_angle_spread_rad: std::f64::consts::PI,
            frequency_band_hz: 1.0,
            final_window_s: 2.0,
        }
    }
}

/// Classify a trajectory: synchronism kept everywhere, frequencies settled
/// inside the band over the final window.
pub fn is_stable(ts: &TimeSeries, criteria: &StabilityCriteria) -> Result<bool> {
    if ts.early_stop.is_some() {
        return Ok(false);
    }
    if ts.end_time() < criteria.final_window_s {
        return Err(Error::HorizonTooShort {
            needed: criteria.final_window_s,
            have: ts.end_time(),
        });
    }
    if ts.max_angle_spread() >= criteria.max_angle_spread_rad {
        return Ok(false);
    }
    let from = ts.end_time() - criteria.final_window_s;
    for s in 0..ts.n_samples() {
        if ts.times[s] + 1e-12 < from {
            continue;
        }
        if ts
            .omega_row(s)
            .iter()
            .any(|w| w.abs() >= criteria.frequency_band_hz)
        {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Mean squared deviations over a whole trajectory.
#[derive(Debug, Clone, Copy)]
pub struct FluctuationReport {
    /// Machine speed deviation from nominal, mean over samples and machines, Hz².
    pub speed_msd_hz2: f64,
    /// ACVG voltage deviation from its pre-disturbance value, pu².
    pub voltage_msd_pu2: f64,
}

/// Compute fluctuation metrics against per-bus nominal voltages
/// (typically the solved pre-disturbance magnitudes, fleet order).
pub fn fluctuation_metrics(ts: &TimeSeries, nominal_v: &[f64]) -> Result<FluctuationReport> {
    if nominal_v.len() != ts.n_acvg() {
        return Err(Error::InvalidConfig(format!(
            "expected {} nominal voltages, got {}",
            ts.n_acvg(),
            nominal_v.len()
        )));
    }
    if ts.n_samples() == 0 {
        return Err(Error::InvalidConfig("empty time series".into()));
    }
    let mut speed = 0.0;
    let mut volt = 0.0;
    for s in 0..ts.n_samples() {
        for w in ts.omega_row(s) {
            speed += w * w;
        }
        for (v, v0) in ts.v_row(s).iter().zip(nominal_v) {
            let d = v - v0;
            volt += d * d;
        }
    }
    let samples = ts.n_samples() as f64;
    Ok(FluctuationReport {
        speed_msd_hz2: speed / (samples * ts.n_gen() as f64),
        voltage_msd_pu2: if ts.n_acvg() == 0 {
            0.0
        } else {
            volt / (samples * ts.n_acvg() as f64)
        },
    })
}

/// Side-by-side fluctuation metrics for a controlled and uncontrolled run.
#[derive(Debug, Clone, Copy)]
pub struct FluctuationComparison {
    pub without: FluctuationReport,
    pub with_control: FluctuationReport,
    pub speed_reduction_pct: f64,
    pub voltage_reduction_pct: f64,
}

pub fn compare_fluctuations(
    without: FluctuationReport,
    with_control: FluctuationReport,
) -> FluctuationComparison {
    let pct = |a: f64, b: f64| if a > 0.0 { 100.0 * (a - b) / a } else { 0.0 };
    FluctuationComparison {
        without,
        with_control,
        speed_reduction_pct: pct(without.speed_msd_hz2, with_control.speed_msd_hz2),
        voltage_reduction_pct: pct(without.voltage_msd_pu2, with_control.voltage_msd_pu2),
    }
}

/// Settings for the critical-clearing-time bisection.
#[derive(Debug, Clone)]
pub struct CclSearch {
    /// When the fault lands, s.
    pub fault_start: f64,
    /// Reported bracket width; every tested duration is a multiple of this.
    pub resolution: f64,
    /// Longest fault the search will consider, s. The actual upper bracket
    /// is the next power-of-two multiple of the resolution.
    pub max_duration: f64,
    /// Total simulated horizon per candidate, s.
    pub horizon: f64,
    pub sim: SimOptions,
    pub criteria: StabilityCriteria,
    /// Skip the undisturbed sanity run (set when a caller already verified it).
    pub assume_stable_base: bool,
}

impl Default for CclSearch {
    fn default() -> Self {
        CclSearch {
            fault_start: 1.0,
            resolution: 1e-3,
            max_duration: 1.0,
            horizon: 10.0,
            sim: SimOptions { stop_on_instability: true, ..SimOptions::default() },
            criteria: StabilityCriteria::default(),
            assume_stable_base: false,
        }
    }
}

/// A bracketed critical clearing time.
#[derive(Debug, Clone, Copy)]
pub struct CclResult {
    pub bus: usize,
    /// Midpoint of the final bracket, s.
    pub t_ccl: f64,
    /// Longest simulation-verified stable clearing time, s.
    pub stable_at: f64,
    /// Shortest simulation-verified unstable clearing time, s.
    pub unstable_at: f64,
    pub resolution: f64,
    /// Simulations the search spent.
    pub simulations: usize,
}

/// Outcome of a clearing-time search.
#[derive(Debug, Clone, Copy)]
pub enum CclOutcome {
    Found(CclResult),
    /// The system rode through every tested duration; the clearing time
    /// exceeds `max_tested`.
    StableThroughout { bus: usize, max_tested: f64 },
}

impl CclOutcome {
    pub fn found(&self) -> Option<&CclResult> {
        match self {
            CclOutcome::Found(r) => Some(r),
            CclOutcome::StableThroughout { .. } => None,
        }
    }

    pub fn bus(&self) -> usize {
        match self {
            CclOutcome::Found(r) => r.bus,
            CclOutcome::StableThroughout { bus, .. } => *bus,
        }
    }
}

fn units_on_grid(value: f64, unit: f64, what: &str) -> Result<usize> {
    let k = (value / unit).round();
    if k >= 0.0 && (value - k * unit).abs() <= 1e-9 * value.abs().max(1.0) {
        Ok(k as usize)
    } else {
        Err(Error::InvalidConfig(format!(
            "{what} {value} is not a multiple of {unit}"
        )))
    }
}

/// Find the critical clearing time for a bolted fault at `bus` by integer
/// bisection on the fault duration.
///
/// Durations are integer multiples of the resolution; the initial bracket is
/// the next power of two above `max_duration`, so the bracket width halves
/// exactly until one resolution unit separates a verified-stable from a
/// verified-unstable duration.
pub fn find_ccl(
    init: &InitializedCase,
    controller: &Controller,
    bus: usize,
    search: &CclSearch,
) -> Result<CclOutcome> {
    if init.case.bus_index(bus).is_none() {
        return Err(Error::UnknownBus(bus));
    }
    units_on_grid(search.resolution, search.sim.dt, "resolution")?;
    units_on_grid(search.fault_start, search.sim.dt, "fault start")?;
    let max_units = units_on_grid(search.max_duration, search.resolution, "max duration")?;
    if max_units == 0 {
        return Err(Error::InvalidConfig(
            "max duration shorter than one resolution unit".into(),
        ));
    }
    let upper = max_units.next_power_of_two();
    if search.fault_start + upper as f64 * search.resolution >= search.horizon {
        return Err(Error::InvalidConfig(format!(
            "horizon {} s too short for fault start {} s plus max duration {} s",
            search.horizon,
            search.fault_start,
            upper as f64 * search.resolution
        )));
    }

    let machines = Machines::from_init(init);
    let state0 = initial_state(init);
    let mut compiler = ScenarioCompiler::new(init);
    let mut simulations = 0usize;

    // Probe runs classify a mid-run solvability loss as voltage collapse
    // (unstable); the undisturbed certification run keeps it a hard error.
    let mut probe_opts = search.sim.clone();
    probe_opts.collapse_is_instability = true;
    let mut run = |duration_units: usize| -> Result<bool> {
        simulations += 1;
        let scenario = if duration_units == 0 {
            compiler.compile(&[], search.horizon)?
        } else {
            let d = duration_units as f64 * search.resolution;
            compiler.compile(&fault_at(bus, search.fault_start, d)?, search.horizon)?
        };
        let opts = if duration_units == 0 {
            &search.sim
        } else {
            &probe_opts
        };
        let (ts, _) = simulate(&state0, &scenario, &machines, controller, opts)?;
        is_stable(&ts, &search.criteria)
    };

    if !search.assume_stable_base && !run(0)? {
        return Err(Error::InvalidConfig(
            "case is unstable without any disturbance; clearing times are undefined".into(),
        ));
    }
    if run(upper)? {
        return Ok(CclOutcome::StableThroughout {
            bus,
            max_tested: upper as f64 * search.resolution,
        });
    }

    // Invariant: lo stable, hi unstable, both simulation-verified.
    let mut lo = 0usize;
    let mut hi = upper;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if run(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    drop(run);
    Ok(CclOutcome::Found(CclResult {
        bus,
        t_ccl: (lo + hi) as f64 * 0.5 * search.resolution,
        stable_at: lo as f64 * search.resolution,
        unstable_at: hi as f64 * search.resolution,
        resolution: search.resolution,
        simulations,
    }))
}

/// Sweep configuration: clearing times across fleet sizes.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Penetration levels in percent of the national fleet; must include 0.
    pub penetrations_pct: Vec<f64>,
    /// Faulted buses averaged at each level.
    pub fault_buses: Vec<usize>,
    /// National fleet size the percentages refer to.
    pub fleet_size: u64,
    pub per_vehicle_kw: f64,
    pub search: CclSearch,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            penetrations_pct: vec![0.0, 1.0, 2.0, 4.0, 5.5, 7.0, 10.0],
            fault_buses: Vec::new(),
            fleet_size: 5_000_000,
            per_vehicle_kw: 10.0,
            search: CclSearch::default(),
        }
    }
}

/// One row of a penetration sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub penetration_pct: f64,
    pub n_pev: u64,
    /// Mean relative clearing-time gain over the buses bracketed at both
    /// this level and the baseline, percent.
    pub avg_ccl_increase_pct: f64,
    /// Buses contributing to the average.
    pub buses_used: usize,
    /// Buses without a bracketed clearing time here or at baseline.
    pub skipped_buses: Vec<usize>,
}

/// Clearing-time gain versus fleet penetration, averaged over fault buses.
///
/// Results are ordered by penetration; per-bus searches run through the
/// parallel map and are deterministic regardless of thread count.
pub fn penetration_sweep(init: &InitializedCase, config: &SweepConfig) -> Result<Vec<SweepPoint>> {
    if config.fault_buses.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one fault bus".into()));
    }
    for &bus in &config.fault_buses {
        if init.case.bus_index(bus).is_none() {
            return Err(Error::UnknownBus(bus));
        }
    }
    let mut pens = config.penetrations_pct.clone();
    if pens.is_empty() {
        return Err(Error::InvalidConfig("sweep needs penetration levels".into()));
    }
    pens.sort_by(|a, b| a.partial_cmp(b).expect("penetrations are finite"));
    pens.dedup();
    if pens[0] != 0.0 {
        return Err(Error::InvalidConfig(
            "sweep must include the 0% baseline".into(),
        ));
    }
    if pens.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidConfig("penetrations must be finite and non-negative".into()));
    }
    let mut buses = config.fault_buses.clone();
    buses.sort_unstable();
    buses.dedup();

    // One undisturbed run certifies the base case for every search below
    // (with no disturbance the controller never acts, so one run covers all
    // fleet sizes).
    let machines = Machines::from_init(init);
    let state0 = initial_state(init);
    let quiet = crate::scenario::compile_scenario(init, &[], config.search.horizon)?;
    let (ts, _) = simulate(
        &state0,
        &quiet,
        &machines,
        &Controller::disabled(&init.case),
        &config.search.sim,
    )?;
    if !is_stable(&ts, &config.search.criteria)? {
        return Err(Error::InvalidConfig(
            "case is unstable without any disturbance; clearing times are undefined".into(),
        ));
    }
    let mut search = config.search.clone();
    search.assume_stable_base = true;

    let jobs: Vec<(f64, usize)> = pens
        .iter()
        .flat_map(|&p| buses.iter().map(move |&b| (p, b)))
        .collect();
    let outcomes: Vec<Result<CclOutcome>> = crate::par::map_ordered(&jobs, |&(pct, bus)| {
        let n_pev = ((pct / 100.0) * config.fleet_size as f64).round() as u64;
        let controller = if n_pev == 0 {
            Controller::disabled(&init.case)
        } else {
            Controller::new(build_fleet(&init.case, n_pev, config.per_vehicle_kw)?)
        };
        find_ccl(init, &controller, bus, &search)
    });
    let mut by_job = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        by_job.push(o?);
    }

    let nb = buses.len();
    let baseline = &by_job[..nb];
    let mut points = Vec::with_capacity(pens.len());
    for (pi, &pct) in pens.iter().enumerate() {
        let row = &by_job[pi * nb..(pi + 1) * nb];
        let n_pev = ((pct / 100.0) * config.fleet_size as f64).round() as u64;
        let mut sum = 0.0;
        let mut used = 0usize;
        let mut skipped = Vec::new();
        for (bi, outcome) in row.iter().enumerate() {
            match (baseline[bi].found(), outcome.found()) {
                (Some(base), Some(here)) => {
                    sum += 100.0 * (here.t_ccl - base.t_ccl) / base.t_ccl;
                    used += 1;
                }
                _ => skipped.push(buses[bi]),
            }
        }
        points.push(SweepPoint {
            penetration_pct: pct,
            n_pev,
            avg_ccl_increase_pct: if used > 0 { sum / used as f64 } else { 0.0 },
            buses_used: used,
            skipped_buses: skipped,
        });
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// CSV serialization shared by the CLI and tests
// ---------------------------------------------------------------------------

pub fn write_ccl_csv<W: Write>(
    mut w: W,
    outcomes: &[CclOutcome],
    comments: &[String],
) -> io::Result<()> {
    for line in comments {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "bus,found,t_ccl_s,stable_at_s,unstable_at_s,resolution_s")?;
    for o in outcomes {
        match o {
            CclOutcome::Found(r) => writeln!(
                w,
                "{},true,{},{},{},{}",
                r.bus, r.t_ccl, r.stable_at, r.unstable_at, r.resolution
            )?,
            CclOutcome::StableThroughout { bus, max_tested } => {
                writeln!(w, "{bus},false,,{max_tested},,")?
            }
        }
    }
    Ok(())
}

pub fn write_metrics_csv<W: Write>(
    mut w: W,
    cmp: &FluctuationComparison,
    comments: &[String],
) -> io::Result<()> {
    for line in comments {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "quantity,without_control,with_control,reduction_pct")?;
    writeln!(
        w,
        "speed_msd_hz2,{},{},{}",
        cmp.without.speed_msd_hz2, cmp.with_control.speed_msd_hz2, cmp.speed_reduction_pct
    )?;
    writeln!(
        w,
        "voltage_msd_pu2,{},{},{}",
        cmp.without.voltage_msd_pu2, cmp.with_control.voltage_msd_pu2, cmp.voltage_reduction_pct
    )?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(
    mut w: W,
    points: &[SweepPoint],
    comments: &[String],
) -> io::Result<()> {
    for line in comments {
        writeln!(w, "# {line}")?;
    }
    writeln!(
        w,
        "penetration_pct,n_pev,avg_ccl_increase_pct,buses_used,skipped_buses"
    )?;
    for p in points {
        let skipped = p
            .skipped_buses
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            w,
            "{},{},{},{},{}",
            p.penetration_pct, p.n_pev, p.avg_ccl_increase_pct, p.buses_used, skipped
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_series(omega_hz: f64, spread: f64, horizon: f64) -> TimeSeries {
        let mut ts = TimeSeries::new(vec![30, 31], vec![3], 60.0);
        let steps = (horizon / 0.01).round() as usize;
        for s in 0..=steps {
            ts.times.push(s as f64 * 0.01);
            ts.omega_hz.extend_from_slice(&[omega_hz, 0.0]);
            ts.phi_rad.extend_from_slice(&[0.0, spread]);
            ts.v_pu.push(1.0);
            ts.p_acvg_mw.push(0.0);
            ts.delta_omega_hz.push(omega_hz / 2.0);
        }
        ts
    }

    #[test]
    fn classifies_flat_series_as_stable() {
        let ts = flat_series(0.2, 0.5, 10.0);
        assert!(is_stable(&ts, &StabilityCriteria::default()).unwrap());
    }

    #[test]
    fn rejects_wide_angle_spread() {
        let ts = flat_series(0.0, 3.5, 10.0);
        assert!(!is_stable(&ts, &StabilityCriteria::default()).unwrap());
    }

    #[test]
    fn rejects_persistent_frequency_offset() {
        let ts = flat_series(1.5, 0.0, 10.0);
        assert!(!is_stable(&ts, &StabilityCriteria::default()).unwrap());
    }

    #[test]
    fn early_stop_is_always_unstable() {
        let mut ts = flat_series(0.0, 0.0, 10.0);
        ts.early_stop = Some(3.0);
        assert!(!is_stable(&ts, &StabilityCriteria::default()).unwrap());
    }

    #[test]
    fn short_series_is_an_error() {
        let ts = flat_series(0.0, 0.0, 1.0);
        assert!(matches!(
            is_stable(&ts, &StabilityCriteria::default()),
            Err(Error::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn fluctuation_metrics_by_hand() {
        // Two samples, two machines, one bus: speeds (0,0) then (0.3,-0.1);
        // voltages 1.0 then 0.9 against nominal 1.0.
        let mut ts = TimeSeries::new(vec![30, 31], vec![3], 60.0);
        ts.times = vec![0.0, 0.01];
        ts.omega_hz = vec![0.0, 0.0, 0.3, -0.1];
        ts.phi_rad = vec![0.0; 4];
        ts.v_pu = vec![1.0, 0.9];
        ts.p_acvg_mw = vec![0.0, 0.0];
        ts.delta_omega_hz = vec![0.0, 0.1];
        let rep = fluctuation_metrics(&ts, &[1.0]).unwrap();
        let expect_speed = (0.3_f64.powi(2) + 0.1_f64.powi(2)) / 4.0;
        let expect_volt = 0.1_f64.powi(2) / 2.0;
        assert!((rep.speed_msd_hz2 - expect_speed).abs() < 1e-15);
        assert!((rep.voltage_msd_pu2 - expect_volt).abs() < 1e-15);
    }

    #[test]
    fn comparison_percentages() {
        let a = FluctuationReport { speed_msd_hz2: 4.0, voltage_msd_pu2: 0.02 };
        let b = FluctuationReport { speed_msd_hz2: 1.0, voltage_msd_pu2: 0.005 };
        let cmp = compare_fluctuations(a, b);
        assert!((cmp.speed_reduction_pct - 75.0).abs() < 1e-12);
        assert!((cmp.voltage_reduction_pct - 75.0).abs() < 1e-12);
    }

    #[test]
    fn ccl_csv_shapes() {
        let rows = vec![
            CclOutcome::Found(CclResult {
                bus: 12,
                t_ccl: 0.2275,
                stable_at: 0.227,
                unstable_at: 0.228,
                resolution: 0.001,
                simulations: 12,
            }),
            CclOutcome::StableThroughout { bus: 30, max_tested: 1.024 },
        ];
        let mut buf = Vec::new();
        write_ccl_csv(&mut buf, &rows, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "bus,found,t_ccl_s,stable_at_s,unstable_at_s,resolution_s"
        );
        assert_eq!(lines.next().unwrap(), "12,true,0.2275,0.227,0.228,0.001");
        assert_eq!(lines.next().unwrap(), "30,false,,1.024,,");
    }
}

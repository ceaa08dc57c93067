//! Case files and the validated in-memory network model.
//!
//! A case file is a JSON document describing buses, branches (π-equivalents),
//! synchronous machines, classical loads, and the buses hosting aggregated
//! EV fleets (ACVG buses). Loading a case validates every cross-reference,
//! converts machine constants to the system MVA base, and renumbers buses
//! into a deterministic internal order.

use std::collections::BTreeSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A network bus after renumbering. Internal index = position in `NetworkCase::buses`.
#[derive(Debug, Clone)]
pub struct Bus {
    /// Original id from the case file.
    pub id: usize,
    /// Nominal voltage, kV.
    pub base_kv: f64,
}

/// A transmission branch as a fixed π-equivalent.
///
/// Off-nominal transformer taps are absorbed at load time into an equivalent
/// π with distinct end shunts, so the admittance matrix stays symmetric.
#[derive(Debug, Clone)]
pub struct Branch {
    /// Internal index of the from-bus.
    pub from: usize,
    /// Internal index of the to-bus.
    pub to: usize,
    /// Series admittance 1/(r + jx), scaled by the tap if one was given.
    pub series_admittance: Complex64,
    /// Shunt admittance tied to the from-bus end.
    pub shunt_from: Complex64,
    /// Shunt admittance tied to the to-bus end.
    pub shunt_to: Complex64,
    /// Branches out of service are skipped during matrix assembly.
    pub in_service: bool,
}

/// A synchronous machine in the classical (constant-EMF) representation.
///
/// `emf_magnitude` and `mech_power` are produced by initialization from a
/// solved power flow; they are not free inputs.
#[derive(Debug, Clone)]
pub struct Generator {
    /// Internal index of the terminal bus.
    pub bus: usize,
    /// Original id of the terminal bus.
    pub bus_id: usize,
    /// Transient reactance X'_g, pu on the system base.
    pub xd_transient: f64,
    /// Inertia coefficient M = 2H, seconds on the system base.
    pub inertia_m: f64,
    /// Damping coefficient, pu power per pu speed deviation, system base.
    pub damping_d: f64,
    /// Scheduled active dispatch, MW.
    pub p_mw: f64,
    /// Terminal voltage setpoint, pu.
    pub v_setpoint: f64,
    /// Exactly one machine per case balances the slack.
    pub is_swing: bool,
}

/// A constant-impedance load, specified as constant power at the pre-fault
/// operating point and converted to an equivalent admittance by initialization.
#[derive(Debug, Clone)]
pub struct ClassicalLoad {
    /// Internal index of the bus.
    pub bus: usize,
    /// Original id of the bus.
    pub bus_id: usize,
    /// Active power drawn, MW.
    pub p_mw: f64,
    /// Reactive power drawn, MVAr.
    pub q_mvar: f64,
}

/// Record of how the bundled case was calibrated. Carried opaquely.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub note: String,
    pub fault_bus: usize,
    pub t_ccl_s: f64,
    pub resolution_s: f64,
}

/// A validated network case.
///
/// Buses are sorted ascending by id; generators, loads, and ACVG buses are
/// sorted ascending by bus id. The reduced network later places generator i
/// at row i and the j-th ACVG bus at row n + j, matching these orders.
#[derive(Debug, Clone)]
pub struct NetworkCase {
    pub name: String,
    pub description: String,
    /// System apparent-power base, MVA.
    pub mva_base: f64,
    /// Nominal frequency, Hz.
    pub frequency_hz: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<ClassicalLoad>,
    /// Internal bus indices hosting EV fleets, ascending by bus id.
    pub acvg_buses: Vec<usize>,
    pub calibration: Option<Calibration>,
}

impl NetworkCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn n_acvg(&self) -> usize {
        self.acvg_buses.len()
    }

    /// Nominal angular frequency ω_B = 2π f, rad/s.
    pub fn omega_base(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency_hz
    }

    /// Internal index for an original bus id.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.binary_search_by_key(&id, |b| b.id).ok()
    }

    /// Original bus id for an internal index.
    pub fn bus_id(&self, index: usize) -> usize {
        self.buses[index].id
    }

    /// Load attached to an internal bus index, if any.
    pub fn load_at(&self, bus: usize) -> Option<&ClassicalLoad> {
        self.loads.iter().find(|l| l.bus == bus)
    }

    /// Index into `loads` for an internal bus index, if any.
    pub fn load_index_at(&self, bus: usize) -> Option<usize> {
        self.loads.iter().position(|l| l.bus == bus)
    }

    /// Position of an internal bus index within `acvg_buses`, if it hosts a fleet.
    pub fn acvg_position(&self, bus: usize) -> Option<usize> {
        self.acvg_buses.iter().position(|&b| b == bus)
    }

    /// Original ids of the generator terminal buses, in machine order.
    pub fn generator_bus_ids(&self) -> Vec<usize> {
        self.generators.iter().map(|g| g.bus_id).collect()
    }

    /// Original ids of the ACVG buses, in fleet order.
    pub fn acvg_bus_ids(&self) -> Vec<usize> {
        self.acvg_buses.iter().map(|&b| self.buses[b].id).collect()
    }

    /// Index of the swing machine in `generators`.
    pub fn swing_index(&self) -> usize {
        self.generators
            .iter()
            .position(|g| g.is_swing)
            .expect("validated case has a swing machine")
    }
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    name: String,
    #[serde(default)]
    description: String,
    mva_base: f64,
    frequency_hz: f64,
    buses: Vec<BusSpec>,
    branches: Vec<BranchSpec>,
    generators: Vec<GeneratorSpec>,
    loads: Vec<LoadSpec>,
    acvgs: Vec<usize>,
    #[serde(default)]
    calibration: Option<Calibration>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BusSpec {
    id: usize,
    base_kv: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchSpec {
    from: usize,
    to: usize,
    r: f64,
    x: f64,
    /// Total line-charging susceptance, pu.
    #[serde(default)]
    b: f64,
    /// Off-nominal tap ratio on the from side; 1.0 if absent.
    #[serde(default)]
    tap: Option<f64>,
    #[serde(default = "default_true")]
    in_service: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorSpec {
    bus: usize,
    /// Machine MVA rating; constants below are on this base.
    mva_rating: f64,
    xd_transient: f64,
    inertia_h: f64,
    damping: f64,
    p_mw: f64,
    v_setpoint: f64,
    #[serde(default)]
    swing: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadSpec {
    bus: usize,
    p_mw: f64,
    #[serde(default)]
    q_mvar: f64,
}

fn default_true() -> bool {
    true
}

// ---------------------------------------------------------------------------
// Loading and validation
// ---------------------------------------------------------------------------

/// Parse and validate a case from JSON text.
pub fn load_case(json: &str) -> Result<NetworkCase> {
    let file: CaseFile = serde_json::from_str(json)?;
    build_case(file)
}

/// Parse and validate a case from a file on disk.
pub fn load_case_from_path(path: &std::path::Path) -> Result<NetworkCase> {
    let text = std::fs::read_to_string(path)?;
    load_case(&text)
}

fn build_case(file: CaseFile) -> Result<NetworkCase> {
    if !(file.mva_base > 0.0) {
        return Err(Error::InvalidCase(format!(
            "mva_base must be positive, got {}",
            file.mva_base
        )));
    }
    if !(file.frequency_hz > 0.0) {
        return Err(Error::InvalidCase(format!(
            "frequency_hz must be positive, got {}",
            file.frequency_hz
        )));
    }
    if file.buses.is_empty() {
        return Err(Error::InvalidCase("case has no buses".into()));
    }

    // Buses: unique ids, sorted ascending.
    let mut buses: Vec<Bus> = file
        .buses
        .iter()
        .map(|b| Bus { id: b.id, base_kv: b.base_kv })
        .collect();
    buses.sort_by_key(|b| b.id);
    for pair in buses.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::DuplicateBus(pair[0].id));
        }
    }
    let index_of = |id: usize| buses.binary_search_by_key(&id, |b| b.id).ok();

    // Branches.
    let mut branches = Vec::with_capacity(file.branches.len());
    for spec in &file.branches {
        let from = index_of(spec.from).ok_or(Error::DanglingBranch {
            from: spec.from,
            to: spec.to,
            missing: spec.from,
        })?;
        let to = index_of(spec.to).ok_or(Error::DanglingBranch {
            from: spec.from,
            to: spec.to,
            missing: spec.to,
        })?;
        if from == to {
            return Err(Error::InvalidCase(format!(
                "branch {}-{} connects a bus to itself",
                spec.from, spec.to
            )));
        }
        let z = Complex64::new(spec.r, spec.x);
        if z.norm() == 0.0 {
            return Err(Error::InvalidCase(format!(
                "branch {}-{} has zero impedance",
                spec.from, spec.to
            )));
        }
        let tap = spec.tap.unwrap_or(1.0);
        if !(tap > 0.0) {
            return Err(Error::InvalidCase(format!(
                "branch {}-{} has non-positive tap {}",
                spec.from, spec.to, tap
            )));
        }
        let y = z.inv();
        let half_b = Complex64::new(0.0, 0.5 * spec.b);
        // Equivalent π of a from-side tap: Y_ff = (y + jb/2)/t², Y_ft = -y/t,
        // Y_tt = y + jb/2. Split into a symmetric series part and end shunts.
        let series = y / tap;
        let shunt_from = (y + half_b) / (tap * tap) - series;
        let shunt_to = (y + half_b) - series;
        branches.push(Branch {
            from,
            to,
            series_admittance: series,
            shunt_from,
            shunt_to,
            in_service: spec.in_service,
        });
    }

    // Generators: unique terminal buses, exactly one swing, sorted by bus id.
    let mut generators = Vec::with_capacity(file.generators.len());
    for spec in &file.generators {
        let bus = index_of(spec.bus).ok_or(Error::DanglingRef {
            element: "generator",
            bus: spec.bus,
        })?;
        if !(spec.mva_rating > 0.0) {
            return Err(Error::InvalidCase(format!(
                "generator at bus {} has non-positive mva_rating",
                spec.bus
            )));
        }
        if !(spec.xd_transient > 0.0) {
            return Err(Error::InvalidCase(format!(
                "generator at bus {} has non-positive xd_transient",
                spec.bus
            )));
        }
        if !(spec.inertia_h > 0.0) {
            return Err(Error::InvalidCase(format!(
                "generator at bus {} has non-positive inertia_h",
                spec.bus
            )));
        }
        if spec.damping < 0.0 {
            return Err(Error::InvalidCase(format!(
                "generator at bus {} has negative damping",
                spec.bus
            )));
        }
        if !(spec.v_setpoint > 0.0) {
            return Err(Error::InvalidCase(format!(
                "generator at bus {} has non-positive v_setpoint",
                spec.bus
            )));
        }
        // Convert machine-base constants to the system base.
        let ratio = spec.mva_rating / file.mva_base;
        generators.push(Generator {
            bus,
            bus_id: spec.bus,
            xd_transient: spec.xd_transient / ratio,
            inertia_m: 2.0 * spec.inertia_h * ratio,
            damping_d: spec.damping * ratio,
            p_mw: spec.p_mw,
            v_setpoint: spec.v_setpoint,
            is_swing: spec.swing,
        });
    }
    generators.sort_by_key(|g| g.bus_id);
    for pair in generators.windows(2) {
        if pair[0].bus_id == pair[1].bus_id {
            return Err(Error::InvalidCase(format!(
                "two generators at bus {}",
                pair[0].bus_id
            )));
        }
    }
    let swing_buses: Vec<usize> = generators
        .iter()
        .filter(|g| g.is_swing)
        .map(|g| g.bus_id)
        .collect();
    match swing_buses.len() {
        0 if generators.is_empty() => {
            return Err(Error::InvalidCase("case has no generators".into()))
        }
        0 => return Err(Error::NoSwing),
        1 => {}
        _ => return Err(Error::MultipleSwing(swing_buses)),
    }

    // Loads: unique buses, non-negative active power, sorted by bus id.
    let mut loads = Vec::with_capacity(file.loads.len());
    for spec in &file.loads {
        let bus = index_of(spec.bus).ok_or(Error::DanglingRef {
            element: "load",
            bus: spec.bus,
        })?;
        if spec.p_mw < 0.0 {
            return Err(Error::InvalidCase(format!(
                "load at bus {} has negative active power",
                spec.bus
            )));
        }
        loads.push(ClassicalLoad {
            bus,
            bus_id: spec.bus,
            p_mw: spec.p_mw,
            q_mvar: spec.q_mvar,
        });
    }
    loads.sort_by_key(|l| l.bus_id);
    for pair in loads.windows(2) {
        if pair[0].bus_id == pair[1].bus_id {
            return Err(Error::InvalidCase(format!(
                "two loads at bus {}",
                pair[0].bus_id
            )));
        }
    }

    // ACVG buses: unique, existing, never generator terminals.
    let mut acvg_ids: Vec<usize> = file.acvgs.clone();
    acvg_ids.sort_unstable();
    for pair in acvg_ids.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::InvalidCase(format!(
                "ACVG bus {} listed twice",
                pair[0]
            )));
        }
    }
    let mut acvg_buses = Vec::with_capacity(acvg_ids.len());
    for id in &acvg_ids {
        let bus = index_of(*id).ok_or(Error::DanglingRef {
            element: "ACVG",
            bus: *id,
        })?;
        if generators.iter().any(|g| g.bus == bus) {
            return Err(Error::InvalidCase(format!(
                "ACVG bus {} is a generator terminal",
                id
            )));
        }
        acvg_buses.push(bus);
    }

    let case = NetworkCase {
        name: file.name,
        description: file.description,
        mva_base: file.mva_base,
        frequency_hz: file.frequency_hz,
        buses,
        branches,
        generators,
        loads,
        acvg_buses,
        calibration: file.calibration,
    };
    check_connected(&case)?;
    Ok(case)
}

/// Every bus must be reachable from the swing bus over in-service branches.
fn check_connected(case: &NetworkCase) -> Result<()> {
    let n = case.n_buses();
    let mut adjacency = vec![Vec::new(); n];
    for br in case.branches.iter().filter(|b| b.in_service) {
        adjacency[br.from].push(br.to);
        adjacency[br.to].push(br.from);
    }
    let start = case.generators[case.swing_index()].bus;
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(b) = stack.pop() {
        for &next in &adjacency[b] {
            if !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    let isolated: BTreeSet<usize> = seen
        .iter()
        .enumerate()
        .filter(|(_, s)| !**s)
        .map(|(i, _)| case.buses[i].id)
        .collect();
    if isolated.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidCase(format!(
            "buses {:?} are not connected to the swing bus",
            isolated.into_iter().collect::<Vec<_>>()
        )))
    }
}

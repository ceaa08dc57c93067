//! Disturbance scenarios compiled into per-epoch reduced networks.
//!
//! A scenario is a list of timed events — bolted bus faults, branch trips,
//! load steps — that partition the run into epochs of constant topology.
//! Compilation validates every event against the case, applies the events in
//! order, and builds the reduced dynamic network once per distinct topology;
//! repeated topologies (for instance the post-clearing network during a
//! clearing-time search) are shared through a cache.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::admittance::{assemble_with_overrides, augment_and_reduce, AssemblyOverrides, ReducedNetwork};
use crate::error::{Error, Result};
use crate::powerflow::InitializedCase;

/// Susceptance of the bolted-fault shunt, pu. Effectively grounds the bus
/// while keeping the algebraic system solvable.
pub const FAULT_SHUNT_B: f64 = -1.0e6;

/// What an event does. Bus and branch references use original ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventAction {
    /// Apply a bolted three-phase fault at a bus.
    BusFault { bus: usize },
    /// Remove a previously applied fault.
    ClearBusFault { bus: usize },
    /// Take a branch out of service.
    BranchTrip { from: usize, to: usize },
    /// Return a tripped branch to service.
    BranchRestore { from: usize, to: usize },
    /// Scale a load's admittance to `factor` times its pre-disturbance value.
    LoadStep { bus: usize, factor: f64 },
}

/// A timed event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEvent {
    /// Seconds from the start of the run.
    pub t: f64,
    #[serde(flatten)]
    pub action: EventAction,
}

/// One span of constant network topology.
#[derive(Debug, Clone)]
pub struct Epoch {
    /// Start time, s. The first epoch starts at zero.
    pub start: f64,
    pub net: Arc<ReducedNetwork>,
    /// Fleet positions whose bus carries a bolted fault during this epoch.
    /// Their power may be suppressed if the network algebra fails.
    pub faulted_acvg: Vec<usize>,
    /// Whether any bus carries a bolted fault during this epoch. Fleets near
    /// a fault may be tripped one by one to keep the algebra solvable.
    pub fault_on: bool,
}

/// A compiled scenario: epochs partition `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub events: Vec<DisturbanceEvent>,
    pub epochs: Vec<Epoch>,
    pub horizon: f64,
}

impl Scenario {
    /// The epoch governing time `t`.
    pub fn epoch_at(&self, t: f64) -> &Epoch {
        let idx = self
            .epochs
            .iter()
            .rposition(|e| e.start <= t)
            .unwrap_or(0);
        &self.epochs[idx]
    }
}

/// Events for a bolted fault applied at `start` and cleared after `duration`.
pub fn fault_at(bus: usize, start: f64, duration: f64) -> Result<Vec<DisturbanceEvent>> {
    if !(duration > 0.0) {
        return Err(Error::BadEvent(format!(
            "fault duration must be positive, got {duration} s"
        )));
    }
    if start < 0.0 {
        return Err(Error::BadEvent(format!(
            "fault start must be non-negative, got {start} s"
        )));
    }
    Ok(vec![
        DisturbanceEvent { t: start, action: EventAction::BusFault { bus } },
        DisturbanceEvent {
            t: start + duration,
            action: EventAction::ClearBusFault { bus },
        },
    ])
}

/// Events for a branch trip, optionally restored after `duration`.
pub fn branch_trip(
    from: usize,
    to: usize,
    start: f64,
    duration: Option<f64>,
) -> Result<Vec<DisturbanceEvent>> {
    if start < 0.0 {
        return Err(Error::BadEvent(format!(
            "trip start must be non-negative, got {start} s"
        )));
    }
    let mut events = vec![DisturbanceEvent {
        t: start,
        action: EventAction::BranchTrip { from, to },
    }];
    if let Some(d) = duration {
        if !(d > 0.0) {
            return Err(Error::BadEvent(format!(
                "trip duration must be positive, got {d} s"
            )));
        }
        events.push(DisturbanceEvent {
            t: start + d,
            action: EventAction::BranchRestore { from, to },
        });
    }
    Ok(events)
}

/// Events scaling a load to `factor`, optionally reverting after `hold`.
pub fn load_step(
    bus: usize,
    start: f64,
    factor: f64,
    hold: Option<f64>,
) -> Result<Vec<DisturbanceEvent>> {
    if start < 0.0 {
        return Err(Error::BadEvent(format!(
            "step start must be non-negative, got {start} s"
        )));
    }
    if factor < 0.0 {
        return Err(Error::BadEvent(format!(
            "load factor must be non-negative, got {factor}"
        )));
    }
    let mut events = vec![DisturbanceEvent {
        t: start,
        action: EventAction::LoadStep { bus, factor },
    }];
    if let Some(h) = hold {
        if !(h > 0.0) {
            return Err(Error::BadEvent(format!(
                "hold duration must be positive, got {h} s"
            )));
        }
        events.push(DisturbanceEvent {
            t: start + h,
            action: EventAction::LoadStep { bus, factor: 1.0 },
        });
    }
    Ok(events)
}

/// Cache key: the full topology override state, load scales by exact bits.
type NetKey = (Vec<usize>, Vec<usize>, Vec<u64>);

/// Compiles scenarios against one operating point, sharing reduced networks
/// across compilations. Reuse a single compiler inside search loops.
pub struct ScenarioCompiler<'a> {
    init: &'a InitializedCase,
    cache: HashMap<NetKey, Arc<ReducedNetwork>>,
}

impl<'a> ScenarioCompiler<'a> {
    pub fn new(init: &'a InitializedCase) -> Self {
        ScenarioCompiler { init, cache: HashMap::new() }
    }

    /// Number of distinct reduced networks built so far.
    pub fn cached_networks(&self) -> usize {
        self.cache.len()
    }

    pub fn compile(
        &mut self,
        events: &[DisturbanceEvent],
        horizon: f64,
    ) -> Result<Scenario> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon must be positive, got {horizon} s"
            )));
        }
        let case = &self.init.case;
        // Validate and translate to internal indices.
        let mut translated: Vec<(f64, Action)> = Vec::with_capacity(events.len());
        for ev in events {
            if ev.t < 0.0 || ev.t >= horizon {
                return Err(Error::EventOutsideHorizon { t: ev.t, horizon });
            }
            let action = match ev.action {
                EventAction::BusFault { bus } => {
                    Action::Fault(case.bus_index(bus).ok_or(Error::UnknownBus(bus))?)
                }
                EventAction::ClearBusFault { bus } => {
                    Action::Clear(case.bus_index(bus).ok_or(Error::UnknownBus(bus))?)
                }
                EventAction::BranchTrip { from, to } => Action::Trip(find_branch(case, from, to)?),
                EventAction::BranchRestore { from, to } => {
                    Action::Restore(find_branch(case, from, to)?)
                }
                EventAction::LoadStep { bus, factor } => {
                    if factor < 0.0 {
                        return Err(Error::BadEvent(format!(
                            "load factor must be non-negative, got {factor}"
                        )));
                    }
                    let b = case.bus_index(bus).ok_or(Error::UnknownBus(bus))?;
                    let idx = case.load_index_at(b).ok_or_else(|| {
                        Error::BadEvent(format!("no load at bus {bus} to step"))
                    })?;
                    Action::Scale(idx, factor)
                }
            };
            translated.push((ev.t, action));
        }
        translated.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("event times are finite"));

        let mut faulted: BTreeSet<usize> = BTreeSet::new();
        let mut out: BTreeSet<usize> = BTreeSet::new();
        let mut scale: Vec<f64> = vec![1.0; case.loads.len()];
        let mut epochs = Vec::new();
        let base = self
            .network_for(&faulted, &out, &scale)
            .map_err(|e| Error::EpochFailed { t: 0.0, source: Box::new(e) })?;
        epochs.push(Epoch {
            start: 0.0,
            net: base,
            faulted_acvg: Vec::new(),
            fault_on: false,
        });

        let mut i = 0;
        while i < translated.len() {
            let t = translated[i].0;
            while i < translated.len() && translated[i].0 == t {
                apply(case, &translated[i].1, &mut faulted, &mut out, &mut scale)?;
                i += 1;
            }
            let net = self
                .network_for(&faulted, &out, &scale)
                .map_err(|e| Error::EpochFailed { t, source: Box::new(e) })?;
            let faulted_acvg = faulted
                .iter()
                .filter_map(|&b| case.acvg_position(b))
                .collect();
            if t == 0.0 {
                // Events at t = 0 replace the pre-disturbance epoch.
                epochs.clear();
            }
            epochs.push(Epoch {
                start: t,
                net,
                faulted_acvg,
                fault_on: !faulted.is_empty(),
            });
        }

        let mut sorted_events = events.to_vec();
        sorted_events.sort_by(|a, b| a.t.partial_cmp(&b.t).expect("event times are finite"));
        Ok(Scenario { events: sorted_events, epochs, horizon })
    }

    fn network_for(
        &mut self,
        faulted: &BTreeSet<usize>,
        out: &BTreeSet<usize>,
        scale: &[f64],
    ) -> Result<Arc<ReducedNetwork>> {
        let key: NetKey = (
            out.iter().copied().collect(),
            faulted.iter().copied().collect(),
            scale.iter().map(|s| s.to_bits()).collect(),
        );
        if let Some(net) = self.cache.get(&key) {
            return Ok(Arc::clone(net));
        }
        let admittances: Vec<Complex64> = self
            .init
            .load_admittances
            .iter()
            .zip(scale)
            .map(|(y, s)| y * *s)
            .collect();
        let shunts: Vec<(usize, Complex64)> = faulted
            .iter()
            .map(|&b| (b, Complex64::new(0.0, FAULT_SHUNT_B)))
            .collect();
        let branches_out: Vec<usize> = out.iter().copied().collect();
        let y = assemble_with_overrides(
            &self.init.case,
            Some(&admittances),
            &AssemblyOverrides { branches_out: &branches_out, extra_shunts: &shunts },
        );
        let net = Arc::new(augment_and_reduce(&y, &self.init.case)?);
        self.cache.insert(key, Arc::clone(&net));
        Ok(net)
    }
}

/// One-shot compilation without an external cache.
pub fn compile_scenario(
    init: &InitializedCase,
    events: &[DisturbanceEvent],
    horizon: f64,
) -> Result<Scenario> {
    ScenarioCompiler::new(init).compile(events, horizon)
}

enum Action {
    Fault(usize),
    Clear(usize),
    Trip(usize),
    Restore(usize),
    Scale(usize, f64),
}

fn find_branch(case: &crate::case::NetworkCase, from: usize, to: usize) -> Result<usize> {
    let fi = case.bus_index(from).ok_or(Error::UnknownBus(from))?;
    let ti = case.bus_index(to).ok_or(Error::UnknownBus(to))?;
    case.branches
        .iter()
        .position(|b| (b.from == fi && b.to == ti) || (b.from == ti && b.to == fi))
        .ok_or(Error::UnknownBranch { from, to })
}

fn apply(
    case: &crate::case::NetworkCase,
    action: &Action,
    faulted: &mut BTreeSet<usize>,
    out: &mut BTreeSet<usize>,
    scale: &mut [f64],
) -> Result<()> {
    match *action {
        Action::Fault(b) => {
            if !faulted.insert(b) {
                return Err(Error::BadEvent(format!(
                    "bus {} is already faulted",
                    case.bus_id(b)
                )));
            }
        }
        Action::Clear(b) => {
            if !faulted.remove(&b) {
                return Err(Error::BadEvent(format!(
                    "bus {} is not faulted at clearing time",
                    case.bus_id(b)
                )));
            }
        }
        Action::Trip(idx) => {
            if !case.branches[idx].in_service {
                return Err(Error::BadEvent(format!(
                    "branch {}-{} is out of service in the case",
                    case.bus_id(case.branches[idx].from),
                    case.bus_id(case.branches[idx].to)
                )));
            }
            if !out.insert(idx) {
                return Err(Error::BadEvent(format!(
                    "branch {}-{} is already tripped",
                    case.bus_id(case.branches[idx].from),
                    case.bus_id(case.branches[idx].to)
                )));
            }
        }
        Action::Restore(idx) => {
            if !out.remove(&idx) {
                return Err(Error::BadEvent(format!(
                    "branch {}-{} is not tripped at restore time",
                    case.bus_id(case.branches[idx].from),
                    case.bus_id(case.branches[idx].to)
                )));
            }
        }
        Action::Scale(idx, factor) => scale[idx] = factor,
    }
    Ok(())
}

/// Parse a JSON array of events.
pub fn parse_events(json: &str) -> Result<Vec<DisturbanceEvent>> {
    Ok(serde_json::from_str(json)?)
}

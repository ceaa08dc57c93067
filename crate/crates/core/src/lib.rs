//! Transient-stability simulation of AC power grids with aggregated,
//! frequency-responsive electric-vehicle fleets.
//!
//! The crate models a multi-machine system in the classical representation:
//! constant EMF behind transient reactance, swing-equation rotor dynamics,
//! loads embedded as constant admittances, and a set of retained buses whose
//! aggregated vehicle fleets (ACVGs) appear as controllable power-balance
//! constraints. The network between machines and fleets is Kron-reduced once
//! per topology, so each integration stage only solves a small algebraic
//! system.
//!
//! Typical flow:
//!
//! ```no_run
//! use gridtide::prelude::*;
//!
//! let case = gridtide::ne39::new_england_39();
//! let init = InitializedCase::from_case(case)?;
//! let machines = Machines::from_init(&init);
//! let controller = Controller::new(build_fleet(&init.case, 50_000, 10.0)?);
//! let events = fault_at(12, 1.0, 0.2)?;
//! let scenario = compile_scenario(&init, &events, 10.0)?;
//! let (series, _) = simulate(
//!     &initial_state(&init), &scenario, &machines, &controller,
//!     &SimOptions::default(),
//! )?;
//! println!("{}", series.to_csv_string());
//! # Ok::<(), gridtide::Error>(())
//! ```

pub mod admittance;
pub mod analysis;
pub mod case;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod ne39;
pub mod par;
pub mod powerflow;
pub mod scenario;
pub mod timeseries;

pub use error::{Error, Result};

// These appear in public signatures; re-export so downstream code can name
// the exact versions we compile against.
pub use nalgebra;
pub use num_complex;

/// The names most programs need.
pub mod prelude {
    pub use crate::admittance::{assemble_admittance, augment_and_reduce, ReducedNetwork};
    pub use crate::analysis::{
        compare_fluctuations, find_ccl, fluctuation_metrics, is_stable, penetration_sweep,
        CclOutcome, CclResult, CclSearch, FluctuationComparison, FluctuationReport,
        StabilityCriteria, SweepConfig, SweepPoint,
    };
    pub use crate::case::{load_case, load_case_from_path, NetworkCase};
    pub use crate::control::{build_fleet, control_power, AcvgFleet, Controller};
    pub use crate::dynamics::{
        initial_state, simulate, step, Machines, NewtonOptions, SimOptions, SystemState,
    };
    pub use crate::error::{Error, Result};
    pub use crate::powerflow::{
        initialize_machine_constants, solve_power_flow, InitializedCase, PowerFlowSolution,
    };
    pub use crate::scenario::{
        branch_trip, compile_scenario, fault_at, load_step, DisturbanceEvent, EventAction,
        Scenario, ScenarioCompiler,
    };
    pub use crate::timeseries::TimeSeries;
}

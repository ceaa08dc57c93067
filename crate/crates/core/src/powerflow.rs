//! Full AC power flow and machine-constant initialization.
//!
//! The pre-disturbance operating point comes from a conventional
//! Newton–Raphson power flow in polar form: the swing bus holds angle zero,
//! other generator terminals hold voltage magnitude (PV), everything else is
//! PQ. From the solved flow each machine's internal EMF and mechanical power
//! are fixed, and each load is converted to the equivalent admittance that
//! reproduces it at the solved voltage.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::admittance::{assemble_admittance, AdmittanceMatrix, ReducedNetwork};
use crate::case::NetworkCase;
use crate::error::{Error, Result};

/// Convergence threshold on the worst power mismatch, pu.
pub const PF_TOLERANCE: f64 = 1e-8;
/// Iteration cap for the power-flow Newton loop.
pub const PF_MAX_ITERATIONS: usize = 50;

/// A converged operating point in the internal bus order.
#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Complex bus voltages, pu.
    pub voltages: Vec<Complex64>,
    /// Net complex power injected into the network at each bus, pu.
    pub injections: Vec<Complex64>,
    pub iterations: usize,
    /// Worst mismatch at exit, pu.
    pub max_mismatch: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum BusKind {
    Swing,
    Pv,
    Pq,
}

/// Solve the AC power flow from a flat start.
pub fn solve_power_flow(case: &NetworkCase) -> Result<PowerFlowSolution> {
    let nb = case.n_buses();
    let y = assemble_admittance(case, None);

    let mut kind = vec![BusKind::Pq; nb];
    let mut v_sched = vec![1.0_f64; nb];
    for g in &case.generators {
        kind[g.bus] = if g.is_swing { BusKind::Swing } else { BusKind::Pv };
        v_sched[g.bus] = g.v_setpoint;
    }
    let mut p_sched = vec![0.0_f64; nb];
    let mut q_sched = vec![0.0_f64; nb];
    for g in &case.generators {
        p_sched[g.bus] += g.p_mw / case.mva_base;
    }
    for l in &case.loads {
        p_sched[l.bus] -= l.p_mw / case.mva_base;
        q_sched[l.bus] -= l.q_mvar / case.mva_base;
    }

    // Unknown layout: angles of non-swing buses, then magnitudes of PQ buses.
    let ang_buses: Vec<usize> = (0..nb).filter(|&i| kind[i] != BusKind::Swing).collect();
    let mag_buses: Vec<usize> = (0..nb).filter(|&i| kind[i] == BusKind::Pq).collect();
    let na = ang_buses.len();
    let nm = mag_buses.len();

    // Flat start at scheduled magnitudes, zero angles.
    let mut vm = v_sched.clone();
    let mut va = vec![0.0_f64; nb];

    let mut t = DMatrix::<Complex64>::zeros(nb, nb);
    let mut s = vec![Complex64::ZERO; nb];
    let mut iterations = 0;
    let mut max_mismatch;
    loop {
        let volts: Vec<Complex64> = (0..nb)
            .map(|i| Complex64::from_polar(vm[i], va[i]))
            .collect();
        // T_ik = V_i conj(Y_ik V_k); S_i = Σ_k T_ik. All Jacobian blocks are
        // simple functions of T, which keeps the inner loop trig-free.
        for i in 0..nb {
            let mut acc = Complex64::ZERO;
            for k in 0..nb {
                let tik = volts[i] * (y.entries[(i, k)] * volts[k]).conj();
                t[(i, k)] = tik;
                acc += tik;
            }
            s[i] = acc;
        }

        let mut f = DVector::<f64>::zeros(na + nm);
        for (r, &i) in ang_buses.iter().enumerate() {
            f[r] = p_sched[i] - s[i].re;
        }
        for (r, &i) in mag_buses.iter().enumerate() {
            f[na + r] = q_sched[i] - s[i].im;
        }
        max_mismatch = f.amax();
        if max_mismatch < PF_TOLERANCE {
            break;
        }
        if iterations >= PF_MAX_ITERATIONS {
            return Err(Error::PowerFlowDiverged { iterations, max_mismatch });
        }

        let mut jac = DMatrix::<f64>::zeros(na + nm, na + nm);
        for (r, &i) in ang_buses.iter().enumerate() {
            for (c, &j) in ang_buses.iter().enumerate() {
                jac[(r, c)] = if i == j {
                    -s[i].im + t[(i, i)].im
                } else {
                    t[(i, j)].im
                };
            }
            for (c, &j) in mag_buses.iter().enumerate() {
                jac[(r, na + c)] = if i == j {
                    (s[i].re + t[(i, i)].re) / vm[i]
                } else {
                    t[(i, j)].re / vm[j]
                };
            }
        }
        for (r, &i) in mag_buses.iter().enumerate() {
            for (c, &j) in ang_buses.iter().enumerate() {
                jac[(na + r, c)] = if i == j {
                    s[i].re - t[(i, i)].re
                } else {
                    -t[(i, j)].re
                };
            }
            for (c, &j) in mag_buses.iter().enumerate() {
                jac[(na + r, na + c)] = if i == j {
                    (s[i].im + t[(i, i)].im) / vm[i]
                } else {
                    t[(i, j)].im / vm[j]
                };
            }
        }

        let lu = jac.lu();
        let dx = lu
            .solve(&f)
            .ok_or(Error::SingularJacobian { iteration: iterations })?;
        for (r, &i) in ang_buses.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in mag_buses.iter().enumerate() {
            vm[i] += dx[na + r];
        }
        iterations += 1;
    }

    let voltages: Vec<Complex64> = (0..nb)
        .map(|i| Complex64::from_polar(vm[i], va[i]))
        .collect();
    let injections = (0..nb).map(|i| s[i]).collect();
    Ok(PowerFlowSolution {
        voltages,
        injections,
        iterations,
        max_mismatch,
        converged: true,
    })
}

/// Fixed machine quantities derived from the operating point.
#[derive(Debug, Clone)]
pub struct MachineInit {
    /// Internal EMF magnitude |E|, pu.
    pub emf_magnitude: f64,
    /// Internal EMF angle at t = 0, rad.
    pub emf_angle: f64,
    /// Mechanical input power, pu; equals electrical output at t = 0.
    pub mech_power: f64,
}

/// A case plus everything the dynamic model derives from its power flow.
#[derive(Debug, Clone)]
pub struct InitializedCase {
    pub case: NetworkCase,
    pub pf: PowerFlowSolution,
    /// Parallel to `case.generators`.
    pub machines: Vec<MachineInit>,
    /// Equivalent load admittances, parallel to `case.loads`.
    pub load_admittances: Vec<Complex64>,
}

/// Fix EMFs, mechanical powers, and load admittances from a solved flow.
pub fn initialize_machine_constants(
    case: NetworkCase,
    pf: PowerFlowSolution,
) -> Result<InitializedCase> {
    if !pf.converged {
        return Err(Error::InvalidConfig(
            "initialization requires a converged power flow".into(),
        ));
    }
    let mut load_admittances = Vec::with_capacity(case.loads.len());
    for l in &case.loads {
        let v = pf.voltages[l.bus];
        let v2 = v.norm_sqr();
        if v2 < 1e-12 {
            return Err(Error::ZeroVoltageLoad { bus: l.bus_id });
        }
        let s = Complex64::new(l.p_mw, l.q_mvar) / case.mva_base;
        load_admittances.push(s.conj() / v2);
    }

    let mut machines = Vec::with_capacity(case.generators.len());
    for g in &case.generators {
        let v_t = pf.voltages[g.bus];
        // Generator output = net injection plus whatever a co-located load draws.
        let mut s_gen = pf.injections[g.bus];
        if let Some(l) = case.load_at(g.bus) {
            s_gen += Complex64::new(l.p_mw, l.q_mvar) / case.mva_base;
        }
        let current = (s_gen / v_t).conj();
        let emf = v_t + Complex64::new(0.0, g.xd_transient) * current;
        machines.push(MachineInit {
            emf_magnitude: emf.norm(),
            emf_angle: emf.arg(),
            mech_power: (emf * current.conj()).re,
        });
    }

    Ok(InitializedCase {
        case,
        pf,
        machines,
        load_admittances,
    })
}

impl InitializedCase {
    /// Convenience: solve the flow and initialize in one step.
    pub fn from_case(case: NetworkCase) -> Result<InitializedCase> {
        let pf = solve_power_flow(&case)?;
        initialize_machine_constants(case, pf)
    }

    /// Y-bus with the equivalent load admittances embedded.
    pub fn admittance_with_loads(&self) -> AdmittanceMatrix {
        assemble_admittance(&self.case, Some(&self.load_admittances))
    }

    /// The pre-disturbance reduced dynamic network.
    pub fn base_reduced_network(&self) -> Result<ReducedNetwork> {
        crate::admittance::augment_and_reduce(&self.admittance_with_loads(), &self.case)
    }

    /// Solved voltages at the ACVG buses, fleet order.
    pub fn acvg_voltages(&self) -> Vec<Complex64> {
        self.case
            .acvg_buses
            .iter()
            .map(|&b| self.pf.voltages[b])
            .collect()
    }
}

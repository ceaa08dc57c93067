//! Bus admittance matrices and reduction to the dynamic (hybrid) network.
//!
//! The full Y-bus is assembled from branch π-equivalents, optionally with
//! load equivalent admittances and fault shunts embedded on the diagonal.
//! For dynamics the network is augmented with one fictitious internal bus
//! per machine (behind its transient reactance) and Kron-reduced onto the
//! internal buses plus the ACVG buses.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::case::NetworkCase;
use crate::error::{Error, Result};

/// A dense bus admittance matrix over the internal bus ordering of a case.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    pub entries: DMatrix<Complex64>,
    /// Original bus id per row, for diagnostics.
    pub bus_ids: Vec<usize>,
}

impl AdmittanceMatrix {
    pub fn order(&self) -> usize {
        self.entries.nrows()
    }
}

/// Extra terms merged into the Y-bus during scenario compilation.
#[derive(Debug, Clone, Default)]
pub struct AssemblyOverrides<'a> {
    /// Branch indices (into `case.branches`) forced out of service.
    pub branches_out: &'a [usize],
    /// Shunt admittances added to the diagonal, per internal bus index.
    pub extra_shunts: &'a [(usize, Complex64)],
}

/// Assemble the bus admittance matrix.
///
/// `load_admittances`, when given, runs parallel to `case.loads` and embeds
/// each load as a constant shunt on its bus diagonal. Pass `None` for the
/// bare network (as used by the power flow, where loads are power injections).
pub fn assemble_admittance(
    case: &NetworkCase,
    load_admittances: Option<&[Complex64]>,
) -> AdmittanceMatrix {
    assemble_with_overrides(case, load_admittances, &AssemblyOverrides::default())
}

/// Assemble the Y-bus with scenario overrides applied.
pub fn assemble_with_overrides(
    case: &NetworkCase,
    load_admittances: Option<&[Complex64]>,
    overrides: &AssemblyOverrides<'_>,
) -> AdmittanceMatrix {
    let n = case.n_buses();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for (idx, br) in case.branches.iter().enumerate() {
        if !br.in_service || overrides.branches_out.contains(&idx) {
            continue;
        }
        let s = br.series_admittance;
        y[(br.from, br.from)] += s + br.shunt_from;
        y[(br.to, br.to)] += s + br.shunt_to;
        y[(br.from, br.to)] -= s;
        y[(br.to, br.from)] -= s;
    }
    if let Some(adm) = load_admittances {
        debug_assert_eq!(adm.len(), case.loads.len());
        for (load, ya) in case.loads.iter().zip(adm) {
            y[(load.bus, load.bus)] += ya;
        }
    }
    for &(bus, shunt) in overrides.extra_shunts {
        y[(bus, bus)] += shunt;
    }
    AdmittanceMatrix {
        entries: y,
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
    }
}

/// Kron-reduce a symmetric admittance matrix onto `retained` rows/columns.
///
/// Returns Y_a - Y_b Y_c⁻¹ Y_bᵀ where the partition follows the retained
/// set. Rows of the result follow the order of `retained`.
pub fn kron_reduce(y: &DMatrix<Complex64>, retained: &[usize]) -> Result<DMatrix<Complex64>> {
    let n = y.nrows();
    let mut keep = vec![false; n];
    for &r in retained {
        assert!(r < n, "retained index {r} out of range");
        assert!(!keep[r], "retained index {r} listed twice");
        keep[r] = true;
    }
    let eliminated: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
    if eliminated.is_empty() {
        let mut out = DMatrix::zeros(retained.len(), retained.len());
        for (i, &ri) in retained.iter().enumerate() {
            for (j, &rj) in retained.iter().enumerate() {
                out[(i, j)] = y[(ri, rj)];
            }
        }
        return Ok(out);
    }

    let k = retained.len();
    let e = eliminated.len();
    let mut y_a = DMatrix::zeros(k, k);
    let mut y_b = DMatrix::zeros(k, e);
    let mut y_c = DMatrix::zeros(e, e);
    for (i, &ri) in retained.iter().enumerate() {
        for (j, &rj) in retained.iter().enumerate() {
            y_a[(i, j)] = y[(ri, rj)];
        }
        for (j, &ej) in eliminated.iter().enumerate() {
            y_b[(i, j)] = y[(ri, ej)];
        }
    }
    for (i, &ei) in eliminated.iter().enumerate() {
        for (j, &ej) in eliminated.iter().enumerate() {
            y_c[(i, j)] = y[(ei, ej)];
        }
    }

    let lu = y_c.clone().lu();
    let solved = lu
        .solve(&y_b.transpose())
        .ok_or_else(|| diagnose_singular(y, &eliminated, retained))?;
    Ok(y_a - y_b * solved)
}

/// Describe which eliminated buses float free of the retained set.
fn diagnose_singular(
    y: &DMatrix<Complex64>,
    eliminated: &[usize],
    retained: &[usize],
) -> Error {
    // An eliminated group is suspect when none of its members couples to any
    // retained bus. Walk connected components of the eliminated subgraph.
    let coupled = |i: usize, j: usize| y[(i, j)].norm() > 0.0;
    let mut component = vec![usize::MAX; eliminated.len()];
    let mut n_comp = 0;
    for start in 0..eliminated.len() {
        if component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = n_comp;
        while let Some(i) = stack.pop() {
            for j in 0..eliminated.len() {
                if component[j] == usize::MAX && coupled(eliminated[i], eliminated[j]) {
                    component[j] = n_comp;
                    stack.push(j);
                }
            }
        }
        n_comp += 1;
    }
    let mut floating: Vec<usize> = Vec::new();
    for comp in 0..n_comp {
        let members: Vec<usize> = eliminated
            .iter()
            .enumerate()
            .filter(|(i, _)| component[*i] == comp)
            .map(|(_, &b)| b)
            .collect();
        let tied = members
            .iter()
            .any(|&m| retained.iter().any(|&r| coupled(m, r)));
        if !tied {
            floating.extend(&members);
        }
    }
    Error::ReductionSingular { buses: floating }
}

/// The reduced dynamic network.
///
/// Row i < n is the fictitious internal bus of machine i; row n + j is the
/// j-th ACVG bus. Orders match `NetworkCase::generators` and
/// `NetworkCase::acvg_buses`.
#[derive(Debug, Clone)]
pub struct ReducedNetwork {
    pub y: DMatrix<Complex64>,
    pub n_gen: usize,
    pub n_acvg: usize,
    /// Original ids of the machine terminal buses, row order.
    pub gen_bus_ids: Vec<usize>,
    /// Original ids of the ACVG buses, row order.
    pub acvg_bus_ids: Vec<usize>,
}

impl ReducedNetwork {
    pub fn order(&self) -> usize {
        self.n_gen + self.n_acvg
    }
}

/// Augment a full Y-bus with machine internal buses and Kron-reduce.
///
/// `y_bus` must already embed load admittances (and any fault shunts); every
/// non-ACVG, non-internal bus is eliminated. Machine terminals themselves are
/// eliminated — the machines are reached through their transient reactances.
pub fn augment_and_reduce(
    y_bus: &AdmittanceMatrix,
    case: &NetworkCase,
) -> Result<ReducedNetwork> {
    let n = case.n_generators();
    let m = case.n_acvg();
    let nb = case.n_buses();
    debug_assert_eq!(y_bus.order(), nb);

    let total = n + nb;
    let mut aug = DMatrix::<Complex64>::zeros(total, total);
    aug.view_mut((n, n), (nb, nb)).copy_from(&y_bus.entries);
    for (i, g) in case.generators.iter().enumerate() {
        let yg = Complex64::new(0.0, g.xd_transient).inv();
        let t = n + g.bus;
        aug[(i, i)] += yg;
        aug[(t, t)] += yg;
        aug[(i, t)] -= yg;
        aug[(t, i)] -= yg;
    }

    let mut retained: Vec<usize> = (0..n).collect();
    retained.extend(case.acvg_buses.iter().map(|&b| n + b));
    let reduced = kron_reduce(&aug, &retained).map_err(|e| match e {
        Error::ReductionSingular { buses } => Error::ReductionSingular {
            // Translate augmented indices back to original bus ids.
            buses: buses
                .into_iter()
                .filter_map(|b| b.checked_sub(n).map(|i| case.buses[i].id))
                .collect(),
        },
        other => other,
    })?;

    Ok(ReducedNetwork {
        y: reduced,
        n_gen: n,
        n_acvg: m,
        gen_bus_ids: case.generator_bus_ids(),
        acvg_bus_ids: case.acvg_bus_ids(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::load_case;
    use approx::assert_relative_eq;

    fn mini_case() -> NetworkCase {
        load_case(
            r#"{
            "name": "mini",
            "mva_base": 100.0,
            "frequency_hz": 60.0,
            "buses": [
                {"id": 1, "base_kv": 345.0},
                {"id": 2, "base_kv": 345.0},
                {"id": 3, "base_kv": 345.0}
            ],
            "branches": [
                {"from": 1, "to": 2, "r": 0.0, "x": 0.1, "b": 0.0},
                {"from": 2, "to": 3, "r": 0.01, "x": 0.2, "b": 0.04}
            ],
            "generators": [
                {"bus": 1, "mva_rating": 100.0, "xd_transient": 0.05,
                 "inertia_h": 10.0, "damping": 1.0, "p_mw": 50.0,
                 "v_setpoint": 1.0, "swing": true}
            ],
            "loads": [{"bus": 3, "p_mw": 50.0, "q_mvar": 10.0}],
            "acvgs": [3]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn assembly_matches_hand_stamp() {
        let case = mini_case();
        let y = assemble_admittance(&case, None);
        let y12 = Complex64::new(0.0, 0.1).inv();
        let y23 = Complex64::new(0.01, 0.2).inv();
        let hb = Complex64::new(0.0, 0.02);
        assert_relative_eq!(y.entries[(0, 0)].im, y12.im, max_relative = 1e-14);
        assert!((y.entries[(0, 1)] + y12).norm() < 1e-14);
        assert!((y.entries[(1, 1)] - (y12 + y23 + hb)).norm() < 1e-14);
        assert!((y.entries[(2, 2)] - (y23 + hb)).norm() < 1e-14);
        assert!((y.entries[(0, 2)]).norm() == 0.0);
    }

    #[test]
    fn load_embedding_adds_only_diagonal() {
        let case = mini_case();
        let bare = assemble_admittance(&case, None);
        let ya = Complex64::new(0.5, -0.1);
        let with = assemble_admittance(&case, Some(&[ya]));
        let diff = &with.entries - &bare.entries;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == 2 && j == 2 { ya } else { Complex64::ZERO };
                assert!((diff[(i, j)] - expect).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn assembly_is_symmetric() {
        let case = crate::ne39::new_england_39();
        let y = assemble_admittance(&case, None);
        for i in 0..y.order() {
            for j in 0..i {
                assert!(
                    (y.entries[(i, j)] - y.entries[(j, i)]).norm() < 1e-12,
                    "Y[{i},{j}] != Y[{j},{i}]"
                );
            }
        }
    }

    #[test]
    fn reduction_reports_floating_buses() {
        // Taking branch 2-3 out of service leaves bus 3 (the only retained
        // bus attachment) fine, but eliminating bus 2... instead build a case
        // where an eliminated bus floats: disconnect bus 3 from the rest and
        // retain nothing there.
        let case = load_case(
            r#"{
            "name": "floating",
            "mva_base": 100.0,
            "frequency_hz": 60.0,
            "buses": [
                {"id": 1, "base_kv": 345.0},
                {"id": 2, "base_kv": 345.0},
                {"id": 3, "base_kv": 345.0}
            ],
            "branches": [
                {"from": 1, "to": 2, "r": 0.0, "x": 0.1},
                {"from": 1, "to": 3, "r": 0.0, "x": 0.1}
            ],
            "generators": [
                {"bus": 1, "mva_rating": 100.0, "xd_transient": 0.05,
                 "inertia_h": 10.0, "damping": 1.0, "p_mw": 0.0,
                 "v_setpoint": 1.0, "swing": true}
            ],
            "loads": [],
            "acvgs": [2]
        }"#,
        )
        .unwrap();
        // Zero out the 1-3 branch after assembly to make bus 3 float.
        let mut y = assemble_admittance(&case, None);
        let k = 2; // internal index of bus 3
        for j in 0..3 {
            y.entries[(k, j)] = Complex64::ZERO;
            y.entries[(j, k)] = Complex64::ZERO;
        }
        let err = augment_and_reduce(&y, &case).unwrap_err();
        match err {
            Error::ReductionSingular { buses } => assert_eq!(buses, vec![3]),
            other => panic!("unexpected error {other}"),
        }
    }
}

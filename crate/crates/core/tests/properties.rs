//! Randomized properties of the network reduction and the fleet control law.
//!
//! The reduction is judged against the unreduced system: for currents
//! injected only at retained buses, the reduced matrix must reproduce the
//! boundary voltage response of the full network. The control law is checked
//! for budget, symmetry, proportionality, and breakpoint placement over
//! arbitrary fleets.

use gridtide::admittance::kron_reduce;
use gridtide::control::{build_fleet, control_power, AcvgFleet};
use gridtide::nalgebra::{DMatrix, DVector};
use gridtide::num_complex::Complex64;
use gridtide::prelude::load_case;
use proptest::prelude::*;

/// A random connected network with a dissipative shunt on every bus.
///
/// The ring keeps it connected; the shunts keep every principal submatrix
/// nonsingular, so both the full solve and any reduction are well posed.
#[derive(Debug, Clone)]
struct RandomNetwork {
    n: usize,
    branches: Vec<(usize, usize, Complex64)>,
    shunts: Vec<Complex64>,
}

impl RandomNetwork {
    fn matrix(&self) -> DMatrix<Complex64> {
        let mut y = DMatrix::<Complex64>::zeros(self.n, self.n);
        for &(a, b, s) in &self.branches {
            y[(a, a)] += s;
            y[(b, b)] += s;
            y[(a, b)] -= s;
            y[(b, a)] -= s;
        }
        for (i, &sh) in self.shunts.iter().enumerate() {
            y[(i, i)] += sh;
        }
        y
    }
}

fn branch_admittance() -> impl Strategy<Value = Complex64> {
    (0.0f64..0.05, 0.05f64..0.5).prop_map(|(r, x)| Complex64::new(r, x).inv())
}

fn bus_shunt() -> impl Strategy<Value = Complex64> {
    (0.05f64..0.5, -0.3f64..0.3).prop_map(|(g, b)| Complex64::new(g, b))
}

fn network(max_n: usize) -> impl Strategy<Value = RandomNetwork> {
    (4..=max_n).prop_flat_map(|n| {
        let ring = prop::collection::vec(branch_admittance(), n);
        let chords = prop::collection::vec((0..n, 0..n, branch_admittance()), 0..=n);
        let shunts = prop::collection::vec(bus_shunt(), n);
        (ring, chords, shunts).prop_map(move |(ring, chords, shunts)| {
            let mut branches: Vec<(usize, usize, Complex64)> = ring
                .into_iter()
                .enumerate()
                .map(|(i, s)| (i, (i + 1) % n, s))
                .collect();
            for (a, b, s) in chords {
                if a != b {
                    branches.push((a, b, s));
                }
            }
            RandomNetwork { n, branches, shunts }
        })
    })
}

/// Network plus a proper retained subset (at least one bus eliminated).
fn network_and_retained() -> impl Strategy<Value = (RandomNetwork, Vec<usize>)> {
    network(10).prop_flat_map(|nw| {
        let n = nw.n;
        let all: Vec<usize> = (0..n).collect();
        (Just(nw), prop::sample::subsequence(all, 1..n))
    })
}

fn network_retained_injection(
) -> impl Strategy<Value = (RandomNetwork, Vec<usize>, Vec<Complex64>)> {
    network_and_retained().prop_flat_map(|(nw, retained)| {
        let k = retained.len();
        let inj = prop::collection::vec(
            (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(re, im)| Complex64::new(re, im)),
            k,
        );
        (Just(nw), Just(retained), inj)
    })
}

proptest! {
    /// Inject current only at retained buses, solve the full network, and
    /// demand that the reduced matrix maps the boundary voltages back onto
    /// the injections. This checks the Schur complement without repeating
    /// its construction.
    #[test]
    fn reduction_reproduces_boundary_response(
        (nw, retained, inj) in network_retained_injection()
    ) {
        let y = nw.matrix();
        let mut i_full = DVector::<Complex64>::zeros(nw.n);
        for (&r, &c) in retained.iter().zip(&inj) {
            i_full[r] = c;
        }
        let v_full = y.clone().lu().solve(&i_full).expect("full network is solvable");
        let y_red = kron_reduce(&y, &retained).expect("reduction is well posed");

        let k = retained.len();
        let v_r = DVector::from_iterator(k, retained.iter().map(|&r| v_full[r]));
        let i_r = DVector::from_iterator(k, inj.iter().copied());
        let residual = (&y_red * &v_r) - &i_r;
        let scale = 1.0 + i_r.norm() + y_red.norm() * v_r.norm();
        prop_assert!(
            residual.norm() <= 1e-8 * scale,
            "residual {} exceeds {}",
            residual.norm(),
            1e-8 * scale
        );
    }

    /// Reducing a symmetric matrix keeps it symmetric.
    #[test]
    fn reduction_preserves_symmetry((nw, retained) in network_and_retained()) {
        let y_red = kron_reduce(&nw.matrix(), &retained).expect("reduction is well posed");
        let magnitude = y_red.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for i in 0..y_red.nrows() {
            for j in 0..i {
                prop_assert!(
                    (y_red[(i, j)] - y_red[(j, i)]).norm() <= 1e-9 * (1.0 + magnitude)
                );
            }
        }
    }

    /// Eliminating buses in two stages lands on the one-shot result.
    #[test]
    fn staged_elimination_matches_one_shot((nw, retained) in network_and_retained()) {
        let y = nw.matrix();
        let eliminated: Vec<usize> = (0..nw.n).filter(|i| !retained.contains(i)).collect();
        // First pass removes every other eliminated bus, second the rest.
        let deferred: Vec<usize> = eliminated
            .iter()
            .enumerate()
            .filter(|(k, _)| k % 2 == 1)
            .map(|(_, &b)| b)
            .collect();
        let mut mid: Vec<usize> = retained.iter().copied().chain(deferred).collect();
        mid.sort_unstable();

        let y_mid = kron_reduce(&y, &mid).expect("first stage");
        let pos: Vec<usize> = retained
            .iter()
            .map(|r| mid.binary_search(r).expect("retained bus kept in first stage"))
            .collect();
        let y_two = kron_reduce(&y_mid, &pos).expect("second stage");
        let y_one = kron_reduce(&y, &retained).expect("one-shot");

        let magnitude = y_one.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for i in 0..y_one.nrows() {
            for j in 0..y_one.ncols() {
                prop_assert!(
                    (y_two[(i, j)] - y_one[(i, j)]).norm() <= 1e-7 * (1.0 + magnitude),
                    "mismatch at ({i},{j}): {} vs {}",
                    y_two[(i, j)],
                    y_one[(i, j)]
                );
            }
        }
    }

    /// Retaining every bus, in any order, is a pure permutation.
    #[test]
    fn full_retention_permutes(
        (nw, perm) in network(8).prop_flat_map(|nw| {
            let n = nw.n;
            let order: Vec<usize> = (0..n).collect();
            (Just(nw), Just(order).prop_shuffle())
        })
    ) {
        let y = nw.matrix();
        let y_red = kron_reduce(&y, &perm).expect("nothing to eliminate");
        for i in 0..nw.n {
            for j in 0..nw.n {
                prop_assert_eq!(y_red[(i, j)], y[(perm[i], perm[j])]);
            }
        }
    }
}

/// A fleet with load-proportional shares, the way the builder lays them out.
fn fleet_strategy() -> impl Strategy<Value = AcvgFleet> {
    (
        prop::collection::vec(0.1f64..1000.0, 1..=20),
        1u64..=2_000_000,
        0.5f64..20.0,
    )
        .prop_map(|(loads, n_pev, kw)| {
            let total: f64 = loads.iter().sum();
            let share: Vec<f64> = loads.iter().map(|l| l / total).collect();
            let fleet_kw = n_pev as f64 * kw;
            AcvgFleet {
                n_pev,
                per_vehicle_kw: kw,
                gain_kw_per_hz: share.iter().map(|s| 10.0 * fleet_kw * s).collect(),
                p_max_kw: share.iter().map(|s| fleet_kw * s).collect(),
                share,
            }
        })
}

/// A star case whose load buses all host fleets, for the builder path.
fn star_case_json(loads: &[f64]) -> String {
    let mut buses = String::from("{\"id\": 1, \"base_kv\": 345.0}");
    let mut branches = String::new();
    let mut load_rows = String::new();
    let mut acvgs = String::new();
    for (i, p) in loads.iter().enumerate() {
        let id = i + 2;
        buses.push_str(&format!(", {{\"id\": {id}, \"base_kv\": 345.0}}"));
        if i > 0 {
            branches.push_str(", ");
            load_rows.push_str(", ");
            acvgs.push_str(", ");
        }
        branches.push_str(&format!("{{\"from\": 1, \"to\": {id}, \"r\": 0.0, \"x\": 0.1}}"));
        load_rows.push_str(&format!("{{\"bus\": {id}, \"p_mw\": {p:?}}}"));
        acvgs.push_str(&format!("{id}"));
    }
    format!(
        r#"{{
        "name": "star",
        "mva_base": 100.0,
        "frequency_hz": 60.0,
        "buses": [{buses}],
        "branches": [{branches}],
        "generators": [
            {{"bus": 1, "mva_rating": 100.0, "xd_transient": 0.05,
             "inertia_h": 10.0, "damping": 1.0, "p_mw": 0.0,
             "v_setpoint": 1.0, "swing": true}}
        ],
        "loads": [{load_rows}],
        "acvgs": [{acvgs}]
    }}"#
    )
}

proptest! {
    /// No bus ever exceeds its power limit, whatever the deviation, and the
    /// saturation flag agrees with the output pinning at the limit.
    #[test]
    fn output_never_exceeds_budget(fleet in fleet_strategy(), dev in -5.0f64..5.0) {
        let out = control_power(&fleet, dev);
        prop_assert_eq!(out.p_mw.len(), fleet.n_buses());
        let mut total = 0.0;
        for i in 0..fleet.n_buses() {
            let lim_mw = fleet.p_max_kw[i] / 1000.0;
            prop_assert!(out.p_mw[i].abs() <= lim_mw * (1.0 + 1e-12));
            prop_assert_eq!(out.saturated[i], out.p_mw[i].abs() == lim_mw);
            total += out.p_mw[i].abs();
        }
        prop_assert!(total <= fleet.total_p_max_mw() * (1.0 + 1e-9));
    }

    /// The law is odd: flipping the deviation flips every bus output.
    #[test]
    fn output_is_odd_in_deviation(fleet in fleet_strategy(), dev in -5.0f64..5.0) {
        let pos = control_power(&fleet, dev);
        let neg = control_power(&fleet, -dev);
        for (a, b) in pos.p_mw.iter().zip(&neg.p_mw) {
            prop_assert_eq!(*a, -*b);
        }
        prop_assert_eq!(pos.saturated, neg.saturated);
    }

    /// Below the breakpoint the law is exactly linear and unsaturated;
    /// beyond it every bus pins at its limit.
    #[test]
    fn breakpoint_splits_linear_and_pinned(
        fleet in fleet_strategy(),
        inside in 0.01f64..0.95,
        beyond in 1.1f64..10.0,
        sign in prop::bool::ANY
    ) {
        let s = if sign { 1.0 } else { -1.0 };
        let linear = control_power(&fleet, s * 0.1 * inside);
        for i in 0..fleet.n_buses() {
            let expect = fleet.gain_kw_per_hz[i] * s * 0.1 * inside / 1000.0;
            prop_assert!(!linear.saturated[i]);
            prop_assert!((linear.p_mw[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
        let pinned = control_power(&fleet, s * 0.1 * beyond);
        for i in 0..fleet.n_buses() {
            prop_assert!(pinned.saturated[i]);
            prop_assert_eq!(pinned.p_mw[i], s * fleet.p_max_kw[i] / 1000.0);
        }
    }

    /// In the linear region the bus powers split along the shares.
    #[test]
    fn linear_output_is_share_proportional(
        fleet in fleet_strategy(),
        dev in 0.005f64..0.095
    ) {
        let out = control_power(&fleet, dev);
        let scale = out.p_mw.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        for i in 0..fleet.n_buses() {
            for j in 0..i {
                let cross = out.p_mw[i] * fleet.share[j] - out.p_mw[j] * fleet.share[i];
                prop_assert!(cross.abs() <= 1e-9 * (1.0 + scale));
            }
        }
    }

    /// Moving the breakpoint rescales the gain but never the limits.
    #[test]
    fn custom_breakpoint_keeps_limits(
        fleet in fleet_strategy(),
        mhz in 10.0f64..1000.0
    ) {
        let moved = fleet.clone().with_saturation_mhz(mhz).expect("positive threshold");
        prop_assert_eq!(&moved.p_max_kw, &fleet.p_max_kw);
        let hz = mhz / 1000.0;
        let under = control_power(&moved, 0.95 * hz);
        let over = control_power(&moved, 1.05 * hz);
        for i in 0..moved.n_buses() {
            prop_assert!(!under.saturated[i]);
            prop_assert!(over.saturated[i]);
        }
    }

    /// The builder distributes vehicles along the loads: shares sum to one,
    /// track the loads pairwise, and the default gain is ten times the limit.
    #[test]
    fn builder_shares_track_loads(
        loads in prop::collection::vec(0.1f64..1000.0, 1..=12),
        n_pev in 1u64..=1_000_000,
        kw in 0.5f64..20.0
    ) {
        let case = load_case(&star_case_json(&loads)).expect("case parses");
        let fleet = build_fleet(&case, n_pev, kw).expect("fleet builds");
        prop_assert_eq!(fleet.n_buses(), loads.len());

        let sum: f64 = fleet.share.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        for i in 0..loads.len() {
            for j in 0..i {
                let cross = fleet.share[i] * loads[j] - fleet.share[j] * loads[i];
                prop_assert!(cross.abs() <= 1e-9 * (loads[i] + loads[j]));
            }
        }

        let total_kw: f64 = fleet.p_max_kw.iter().sum();
        let budget = n_pev as f64 * kw;
        prop_assert!((total_kw - budget).abs() <= 1e-9 * budget);
        for i in 0..loads.len() {
            let ratio = fleet.gain_kw_per_hz[i] / fleet.p_max_kw[i];
            prop_assert!((ratio - 10.0).abs() <= 1e-12 * 10.0);
        }
    }
}

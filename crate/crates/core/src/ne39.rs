//! The bundled New England 10-machine, 39-bus test case.
//!
//! Classical machine constants on the system base, loads consolidated at the
//! 17 non-generator load buses (each of which hosts an ACVG), dispatch
//! rebalanced to match, and the swing machine at bus 31. The operating point
//! and uniform damping are calibrated so a bolted fault at bus 12 with no
//! fleet support has the clearing time recorded in the case's calibration
//! block.

use crate::case::NetworkCase;

/// Raw JSON of the bundled case, byte-identical to `cases/ne39.json`.
pub const CASE_JSON: &str = include_str!("../../../cases/ne39.json");

/// Load the bundled case.
pub fn new_england_39() -> NetworkCase {
    crate::case::load_case(CASE_JSON).expect("bundled case is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_ordering() {
        let case = new_england_39();
        assert_eq!(case.n_buses(), 39);
        assert_eq!(case.branches.len(), 46);
        assert_eq!(case.n_generators(), 10);
        assert_eq!(case.loads.len(), 17);
        assert_eq!(case.n_acvg(), 17);
        assert_eq!(case.generator_bus_ids(), (30..=39).collect::<Vec<_>>());
        assert_eq!(
            case.acvg_bus_ids(),
            vec![3, 4, 7, 8, 12, 15, 16, 18, 20, 21, 23, 24, 25, 26, 27, 28, 29]
        );
        assert_eq!(case.generators[case.swing_index()].bus_id, 31);
    }

    #[test]
    fn fleets_and_generators_are_disjoint() {
        let case = new_england_39();
        for &b in &case.acvg_buses {
            assert!(
                case.generators.iter().all(|g| g.bus != b),
                "fleet at generator bus {}",
                case.bus_id(b)
            );
        }
    }

    #[test]
    fn every_acvg_bus_hosts_a_load() {
        let case = new_england_39();
        for &b in &case.acvg_buses {
            assert!(case.load_at(b).is_some(), "no load at ACVG bus {}", case.bus_id(b));
        }
    }

    #[test]
    fn power_flow_converges() {
        let case = new_england_39();
        let pf = crate::powerflow::solve_power_flow(&case).unwrap();
        assert!(pf.converged);
        assert!(pf.iterations <= 10, "took {} iterations", pf.iterations);
        // All bus voltages are in a credible operating range.
        for (i, v) in pf.voltages.iter().enumerate() {
            let m = v.norm();
            assert!(
                (0.85..1.15).contains(&m),
                "bus {} voltage {m} pu",
                case.bus_id(i)
            );
        }
    }

    #[test]
    fn power_flow_balances_against_line_flows() {
        // Independent audit: per-branch absorbed power summed over the network
        // must equal the sum of net bus injections.
        let case = new_england_39();
        let pf = crate::powerflow::solve_power_flow(&case).unwrap();
        let mut absorbed = num_complex::Complex64::ZERO;
        for br in &case.branches {
            let vf = pf.voltages[br.from];
            let vt = pf.voltages[br.to];
            let i_f = br.series_admittance * (vf - vt) + br.shunt_from * vf;
            let i_t = br.series_admittance * (vt - vf) + br.shunt_to * vt;
            absorbed += vf * i_f.conj() + vt * i_t.conj();
        }
        let injected: num_complex::Complex64 = pf.injections.iter().sum();
        assert!(
            (injected - absorbed).norm() < 1e-8,
            "injections {injected} vs branch absorption {absorbed}"
        );
        // Active losses are a small positive fraction of total load.
        assert!(absorbed.re > 0.0 && absorbed.re < 1.0);
    }

    #[test]
    fn generation_covers_load_plus_losses() {
        let case = new_england_39();
        let pf = crate::powerflow::solve_power_flow(&case).unwrap();
        // Net injection summed over every bus is exactly the series loss.
        let losses: f64 = (0..case.n_buses()).map(|b| pf.injections[b].re).sum();
        assert!(losses > 0.0 && losses < 1.0, "losses {losses} pu");
        // The swing machine's output is positive and modest.
        let swing = &case.generators[case.swing_index()];
        assert!(pf.injections[swing.bus].re > 0.0);
    }
}

//! Sampled trajectories and their CSV serialization.

use std::io::{self, Write};

/// A sampled simulation trajectory.
///
/// Generator columns follow machine order, ACVG columns fleet order; both
/// are labeled by original bus ids. Per-sample blocks are stored row-major.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub gen_bus_ids: Vec<usize>,
    pub acvg_bus_ids: Vec<usize>,
    /// Nominal frequency used to convert speeds to Hz.
    pub frequency_hz: f64,
    pub times: Vec<f64>,
    /// Speed deviations, Hz; `n_samples × n_gen`.
    pub omega_hz: Vec<f64>,
    /// Rotor angles, rad; `n_samples × n_gen`.
    pub phi_rad: Vec<f64>,
    /// ACVG bus voltage magnitudes, pu; `n_samples × n_acvg`.
    pub v_pu: Vec<f64>,
    /// ACVG powers, MW, positive consuming; `n_samples × n_acvg`.
    pub p_acvg_mw: Vec<f64>,
    /// Average speed deviation, Hz; one per sample.
    pub delta_omega_hz: Vec<f64>,
    /// Set when integration stopped early after detecting loss of synchronism.
    pub early_stop: Option<f64>,
}

impl TimeSeries {
    pub fn new(gen_bus_ids: Vec<usize>, acvg_bus_ids: Vec<usize>, frequency_hz: f64) -> Self {
        TimeSeries {
            gen_bus_ids,
            acvg_bus_ids,
            frequency_hz,
            times: Vec::new(),
            omega_hz: Vec::new(),
            phi_rad: Vec::new(),
            v_pu: Vec::new(),
            p_acvg_mw: Vec::new(),
            delta_omega_hz: Vec::new(),
            early_stop: None,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    pub fn n_gen(&self) -> usize {
        self.gen_bus_ids.len()
    }

    pub fn n_acvg(&self) -> usize {
        self.acvg_bus_ids.len()
    }

    pub fn omega_row(&self, sample: usize) -> &[f64] {
        let n = self.n_gen();
        &self.omega_hz[sample * n..(sample + 1) * n]
    }

    pub fn phi_row(&self, sample: usize) -> &[f64] {
        let n = self.n_gen();
        &self.phi_rad[sample * n..(sample + 1) * n]
    }

    pub fn v_row(&self, sample: usize) -> &[f64] {
        let m = self.n_acvg();
        &self.v_pu[sample * m..(sample + 1) * m]
    }

    pub fn p_acvg_row(&self, sample: usize) -> &[f64] {
        let m = self.n_acvg();
        &self.p_acvg_mw[sample * m..(sample + 1) * m]
    }

    /// Final sampled time, or zero for an empty series.
    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Largest rotor-angle spread max φ − min φ over the whole series, rad.
    pub fn max_angle_spread(&self) -> f64 {
        (0..self.n_samples())
            .map(|s| {
                let row = self.phi_row(s);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
                max - min
            })
            .fold(0.0, f64::max)
    }

    /// Write the series as CSV. `comments` become `#`-prefixed lines before
    /// the header so downstream tools can skip provenance.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> io::Result<()> {
        for line in comments {
            writeln!(w, "# {line}")?;
        }
        let mut header = String::from("t");
        for id in &self.gen_bus_ids {
            header.push_str(&format!(",omega_hz_g{id}"));
        }
        for id in &self.gen_bus_ids {
            header.push_str(&format!(",phi_rad_g{id}"));
        }
        for id in &self.acvg_bus_ids {
            header.push_str(&format!(",v_pu_b{id}"));
        }
        for id in &self.acvg_bus_ids {
            header.push_str(&format!(",p_acvg_mw_b{id}"));
        }
        header.push_str(",delta_omega_hz");
        writeln!(w, "{header}")?;

        let mut line = String::new();
        for s in 0..self.n_samples() {
            line.clear();
            line.push_str(&format!("{}", self.times[s]));
            for v in self.omega_row(s) {
                line.push_str(&format!(",{v}"));
            }
            for v in self.phi_row(s) {
                line.push_str(&format!(",{v}"));
            }
            for v in self.v_row(s) {
                line.push_str(&format!(",{v}"));
            }
            for v in self.p_acvg_row(s) {
                line.push_str(&format!(",{v}"));
            }
            line.push_str(&format!(",{}", self.delta_omega_hz[s]));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// The CSV as a string, without comments.
    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, &[])
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }
}

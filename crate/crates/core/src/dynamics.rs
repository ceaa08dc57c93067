//! Time-domain integration of the electromechanical model.
//!
//! Machines follow the swing equation
//!
//! ```text
//! dφ_i/dt = ω_B ω_i
//! M_i dω_i/dt = P_mi − D_i ω_i − P_ei(φ, V)
//! ```
//!
//! with speeds `ω` in per unit of nominal and angles in radians. The ACVG
//! buses retained in the reduced network contribute algebraic power-balance
//! constraints: at each bus the fleet's power plus the network injection must
//! vanish, with zero reactive exchange. Integration is classical fourth-order
//! Runge–Kutta; the algebraic constraints are re-solved by Newton iteration
//! at every stage, warm-started from the previous stage's voltages.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::admittance::ReducedNetwork;
use crate::control::{average_frequency_deviation, Controller};
use crate::error::{Error, Result};
use crate::powerflow::InitializedCase;
use crate::scenario::Scenario;
use crate::timeseries::TimeSeries;

/// Fixed machine data for the dynamic model, in machine (row) order.
#[derive(Debug, Clone)]
pub struct Machines {
    /// Inertia coefficients M_i = 2 H_i, s.
    pub inertia: Vec<f64>,
    /// Damping coefficients D_i, pu power per pu speed.
    pub damping: Vec<f64>,
    /// Mechanical input powers, pu.
    pub mech_power: Vec<f64>,
    /// Internal EMF magnitudes |E_i|, pu.
    pub emf: Vec<f64>,
    pub frequency_hz: f64,
    pub mva_base: f64,
}

impl Machines {
    pub fn from_init(init: &InitializedCase) -> Machines {
        Machines {
            inertia: init.case.generators.iter().map(|g| g.inertia_m).collect(),
            damping: init.case.generators.iter().map(|g| g.damping_d).collect(),
            mech_power: init.machines.iter().map(|m| m.mech_power).collect(),
            emf: init.machines.iter().map(|m| m.emf_magnitude).collect(),
            frequency_hz: init.case.frequency_hz,
            mva_base: init.case.mva_base,
        }
    }

    pub fn n(&self) -> usize {
        self.inertia.len()
    }

    /// Nominal angular frequency ω_B, rad/s.
    pub fn omega_base(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency_hz
    }
}

/// The dynamic state: machine angles and speeds plus the consistent
/// algebraic voltages at the ACVG buses.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub t: f64,
    /// Rotor angles, rad.
    pub phi: Vec<f64>,
    /// Speed deviations, pu of nominal.
    pub omega: Vec<f64>,
    /// ACVG bus voltage phasors, pu.
    pub acvg_voltage: Vec<Complex64>,
}

/// Equilibrium state at the initialized operating point.
pub fn initial_state(init: &InitializedCase) -> SystemState {
    SystemState {
        t: 0.0,
        phi: init.machines.iter().map(|m| m.emf_angle).collect(),
        omega: vec![0.0; init.case.n_generators()],
        acvg_voltage: init.acvg_voltages(),
    }
}

/// Newton settings for the algebraic network solve.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Convergence threshold on the worst power residual, pu.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tolerance: 1e-8, max_iterations: 30 }
    }
}

/// Outcome of one algebraic solve.
#[derive(Debug, Clone, Copy)]
pub struct AlgebraicReport {
    pub converged: bool,
    pub iterations: usize,
    /// Worst residual at exit, pu.
    pub residual: f64,
    /// Whether the warm start failed and the flat-start fallback ran.
    pub used_fallback: bool,
}

/// Machine internal voltages E_i e^{jφ_i} for the reduced network rows.
fn gen_voltages(emf: &[f64], phi: &[f64], out: &mut Vec<Complex64>) {
    out.clear();
    out.extend(
        emf.iter()
            .zip(phi)
            .map(|(&e, &a)| Complex64::from_polar(e, a)),
    );
}

/// Electrical power delivered by each machine, pu.
///
/// `gen_voltage` holds the n internal phasors, `acvg_voltage` the m bus
/// phasors; row order matches the reduced network.
pub fn electrical_power(
    net: &ReducedNetwork,
    gen_voltage: &[Complex64],
    acvg_voltage: &[Complex64],
) -> Vec<f64> {
    let n = net.n_gen;
    let m = net.n_acvg;
    debug_assert_eq!(gen_voltage.len(), n);
    debug_assert_eq!(acvg_voltage.len(), m);
    let volt = |k: usize| {
        if k < n {
            gen_voltage[k]
        } else {
            acvg_voltage[k - n]
        }
    };
    (0..n)
        .map(|i| {
            let vi = gen_voltage[i];
            let mut s = Complex64::ZERO;
            for k in 0..n + m {
                s += vi * (net.y[(i, k)] * volt(k)).conj();
            }
            s.re
        })
        .collect()
}

/// Swing-equation right-hand side: returns (dφ/dt, dω/dt).
pub fn swing_rhs(machines: &Machines, omega: &[f64], p_e: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let wb = machines.omega_base();
    let dphi = omega.iter().map(|&w| wb * w).collect();
    let domega = (0..machines.n())
        .map(|i| {
            (machines.mech_power[i] - machines.damping[i] * omega[i] - p_e[i])
                / machines.inertia[i]
        })
        .collect();
    (dphi, domega)
}

/// Solve the ACVG power-balance equations for the bus voltages.
///
/// `p_acvg_pu` is the fleet consumption per bus, pu (positive charges).
/// The solve warm-starts from `guess`; if Newton stalls or hits a singular
/// Jacobian it restarts from a presmoothed flat profile. The best voltages
/// found are always returned alongside the report.
pub fn solve_network(
    net: &ReducedNetwork,
    gen_voltage: &[Complex64],
    p_acvg_pu: &[f64],
    guess: &[Complex64],
    opts: &NewtonOptions,
) -> (Vec<Complex64>, AlgebraicReport) {
    let m = net.n_acvg;
    debug_assert_eq!(p_acvg_pu.len(), m);
    debug_assert_eq!(guess.len(), m);
    if m == 0 {
        return (
            Vec::new(),
            AlgebraicReport { converged: true, iterations: 0, residual: 0.0, used_fallback: false },
        );
    }
    // With every fleet power at zero the constraints collapse to the linear
    // current balance Y_rr V_r = -Y_rg V_g, which has a unique solution — the
    // power-balance form would also admit a spurious V = 0 branch.
    if p_acvg_pu.iter().all(|&p| p == 0.0) {
        if let Some(result) = solve_linear(net, gen_voltage) {
            return result;
        }
    }

    let mut vm: Vec<f64> = guess.iter().map(|v| v.norm().max(1e-6)).collect();
    let mut va: Vec<f64> = guess.iter().map(|v| v.arg()).collect();

    let first = newton(net, gen_voltage, p_acvg_pu, &mut vm, &mut va, opts);
    if first.converged {
        let v = vm
            .iter()
            .zip(&va)
            .map(|(&r, &a)| Complex64::from_polar(r, a))
            .collect();
        return (v, first);
    }

    // Fallback: flat profile smoothed by a few Gauss–Seidel sweeps, which
    // tolerates the near-short voltages a bolted fault produces.
    vm.iter_mut().for_each(|v| *v = 1.0);
    va.iter_mut().for_each(|a| *a = 0.0);
    gauss_seidel(net, gen_voltage, p_acvg_pu, &mut vm, &mut va, 12);
    let mut second = newton(net, gen_voltage, p_acvg_pu, &mut vm, &mut va, opts);
    second.iterations += first.iterations;
    second.used_fallback = true;
    let v = vm
        .iter()
        .zip(&va)
        .map(|(&r, &a)| Complex64::from_polar(r, a))
        .collect();
    (v, second)
}

/// Direct solve of the zero-power case. Returns `None` if the retained block
/// is singular, letting the caller fall through to the iterative path.
fn solve_linear(
    net: &ReducedNetwork,
    gen_voltage: &[Complex64],
) -> Option<(Vec<Complex64>, AlgebraicReport)> {
    let n = net.n_gen;
    let m = net.n_acvg;
    let mut y_rr = DMatrix::<Complex64>::zeros(m, m);
    let mut rhs = DVector::<Complex64>::zeros(m);
    for j in 0..m {
        for k in 0..m {
            y_rr[(j, k)] = net.y[(n + j, n + k)];
        }
        let mut acc = Complex64::ZERO;
        for (g, &vg) in gen_voltage.iter().enumerate() {
            acc += net.y[(n + j, g)] * vg;
        }
        rhs[j] = -acc;
    }
    let v = y_rr.lu().solve(&rhs)?;
    // Report the worst power residual for uniformity with the Newton path.
    let mut residual = 0.0_f64;
    for j in 0..m {
        let mut yv = Complex64::ZERO;
        for (g, &vg) in gen_voltage.iter().enumerate() {
            yv += net.y[(n + j, g)] * vg;
        }
        for k in 0..m {
            yv += net.y[(n + j, n + k)] * v[k];
        }
        let s = v[j] * yv.conj();
        residual = residual.max(s.re.abs()).max(s.im.abs());
    }
    Some((
        v.iter().copied().collect(),
        AlgebraicReport { converged: true, iterations: 1, residual, used_fallback: false },
    ))
}

/// Newton iteration in polar coordinates on the ACVG voltages.
fn newton(
    net: &ReducedNetwork,
    gen_voltage: &[Complex64],
    p_acvg_pu: &[f64],
    vm: &mut [f64],
    va: &mut [f64],
    opts: &NewtonOptions,
) -> AlgebraicReport {
    let n = net.n_gen;
    let m = net.n_acvg;
    let total = n + m;
    let mut volts = vec![Complex64::ZERO; total];
    volts[..n].copy_from_slice(gen_voltage);
    // T_jk = V_j conj(Y_jk V_k) for ACVG rows j; the residuals and every
    // Jacobian block are cheap functions of T.
    let mut t = DMatrix::<Complex64>::zeros(m, total);
    let mut s = vec![Complex64::ZERO; m];
    let mut f = DVector::<f64>::zeros(2 * m);
    let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);

    let mut iterations = 0;
    loop {
        for j in 0..m {
            volts[n + j] = Complex64::from_polar(vm[j], va[j]);
        }
        for j in 0..m {
            let vj = volts[n + j];
            let mut acc = Complex64::ZERO;
            for k in 0..total {
                let tjk = vj * (net.y[(n + j, k)] * volts[k]).conj();
                t[(j, k)] = tjk;
                acc += tjk;
            }
            s[j] = acc;
        }
        for j in 0..m {
            f[j] = p_acvg_pu[j] + s[j].re;
            f[m + j] = s[j].im;
        }
        let residual = f.amax();
        if residual < opts.tolerance {
            return AlgebraicReport { converged: true, iterations, residual, used_fallback: false };
        }
        if iterations >= opts.max_iterations {
            return AlgebraicReport { converged: false, iterations, residual, used_fallback: false };
        }

        for j in 0..m {
            let tjj = t[(j, n + j)];
            for l in 0..m {
                let tjl = t[(j, n + l)];
                if l == j {
                    jac[(j, l)] = -s[j].im + tjj.im;
                    jac[(j, m + l)] = (s[j].re + tjj.re) / vm[j];
                    jac[(m + j, l)] = s[j].re - tjj.re;
                    jac[(m + j, m + l)] = (s[j].im + tjj.im) / vm[j];
                } else {
                    jac[(j, l)] = tjl.im;
                    jac[(j, m + l)] = tjl.re / vm[l];
                    jac[(m + j, l)] = -tjl.re;
                    jac[(m + j, m + l)] = tjl.im / vm[l];
                }
            }
        }

        // Newton update x -= J⁻¹ f, with safeguards: angle moves capped at
        // one radian, magnitudes kept within a decade per iteration.
        let lu = jac.clone().lu();
        let dx = match lu.solve(&f) {
            Some(dx) => dx,
            None => {
                return AlgebraicReport {
                    converged: false,
                    iterations,
                    residual,
                    used_fallback: false,
                }
            }
        };
        for j in 0..m {
            va[j] -= dx[j].clamp(-1.0, 1.0);
            let proposed = vm[j] - dx[m + j];
            vm[j] = proposed.clamp(vm[j] * 0.1, vm[j] * 10.0);
        }
        iterations += 1;
    }
}

/// Constant-power Gauss–Seidel sweeps used to precondition the fallback.
fn gauss_seidel(
    net: &ReducedNetwork,
    gen_voltage: &[Complex64],
    p_acvg_pu: &[f64],
    vm: &mut [f64],
    va: &mut [f64],
    sweeps: usize,
) {
    let n = net.n_gen;
    let m = net.n_acvg;
    let total = n + m;
    let mut volts = vec![Complex64::ZERO; total];
    volts[..n].copy_from_slice(gen_voltage);
    for j in 0..m {
        volts[n + j] = Complex64::from_polar(vm[j], va[j]);
    }
    for _ in 0..sweeps {
        for j in 0..m {
            let row = n + j;
            let mut sum = Complex64::ZERO;
            for k in 0..total {
                if k != row {
                    sum += net.y[(row, k)] * volts[k];
                }
            }
            let vj = volts[row];
            let injected = Complex64::new(-p_acvg_pu[j], 0.0);
            let source = if vj.norm() > 1e-6 {
                injected.conj() / vj.conj()
            } else {
                Complex64::ZERO
            };
            volts[row] = (source - sum) / net.y[(row, row)];
        }
    }
    for j in 0..m {
        vm[j] = volts[n + j].norm().max(1e-9);
        va[j] = volts[n + j].arg();
    }
}

/// Counters accumulated over a run.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub steps: usize,
    pub newton_iterations: usize,
    /// Solves that needed the flat-start fallback.
    pub fallback_solves: usize,
    /// Times at which a faulted fleet's power was suppressed to keep the
    /// network algebra solvable.
    pub suppressions: Vec<f64>,
    /// Time at which the run was cut short because the network algebra lost
    /// solvability (only with `collapse_is_instability`).
    pub collapse_at: Option<f64>,
}

/// Integration settings.
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Integration step, s.
    pub dt: f64,
    /// Sampling interval for the output series, s; must be a multiple of dt.
    pub output_interval: f64,
    pub newton: NewtonOptions,
    /// Stop integrating once the rotor angles have split by 180°. The
    /// truncated series is marked and always classified unstable.
    pub stop_on_instability: bool,
    /// Treat a post-disturbance solve failure as voltage collapse: truncate
    /// the run at the last good state and mark it unstable instead of
    /// erroring. Near the stability boundary the constant-power demands can
    /// lose their solution shortly before the rotor angles separate; probe
    /// runs in a clearing-time search want that classified, not fatal.
    /// Failures before the first disturbance always stay hard errors.
    pub collapse_is_instability: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: 1e-3,
            output_interval: 1e-2,
            newton: NewtonOptions::default(),
            stop_on_instability: false,
            collapse_is_instability: false,
        }
    }
}

/// Angle spread that counts as loss of synchronism, rad.
pub const INSTABILITY_SPREAD_RAD: f64 = std::f64::consts::PI;

struct StageEval {
    dphi: Vec<f64>,
    domega: Vec<f64>,
    v: Vec<Complex64>,
}

/// Everything a single step needs borrowed together.
struct StepCtx<'a> {
    net: &'a ReducedNetwork,
    machines: &'a Machines,
    controller: &'a Controller,
    suppressed: &'a [usize],
    newton: &'a NewtonOptions,
    /// Frozen deviation for delayed control, Hz; `None` means instantaneous.
    frozen_dev_hz: Option<f64>,
}

impl StepCtx<'_> {
    /// Fleet powers in pu for a given machine speed vector.
    fn acvg_power_pu(&self, omega: &[f64]) -> Vec<f64> {
        let dev = self.frozen_dev_hz.unwrap_or_else(|| {
            average_frequency_deviation(omega, self.machines.frequency_hz)
        });
        let mut out = self.controller.power_mw(dev).p_mw;
        for &j in self.suppressed {
            out[j] = 0.0;
        }
        out.iter_mut()
            .for_each(|p| *p /= self.machines.mva_base);
        out
    }

    fn eval(
        &self,
        t: f64,
        phi: &[f64],
        omega: &[f64],
        warm: &[Complex64],
        gen_v: &mut Vec<Complex64>,
        stats: &mut RunStats,
    ) -> Result<StageEval> {
        gen_voltages(&self.machines.emf, phi, gen_v);
        let p_pu = self.acvg_power_pu(omega);
        let (v, report) = solve_network(self.net, gen_v, &p_pu, warm, self.newton);
        stats.newton_iterations += report.iterations;
        if report.used_fallback {
            stats.fallback_solves += 1;
        }
        if !report.converged {
            return Err(Error::StepFailed {
                t,
                reason: "network algebra did not converge",
                iterations: report.iterations,
                residual: report.residual,
            });
        }
        let p_e = electrical_power(self.net, gen_v, &v);
        let (dphi, domega) = swing_rhs(self.machines, omega, &p_e);
        Ok(StageEval { dphi, domega, v })
    }
}

/// Advance one RK4 step of length `dt` from `state`.
///
/// Each stage re-solves the network algebra, warm-started from the previous
/// stage. The returned state carries voltages consistent with its own angles
/// (a final solve), so chained steps start from a zero-residual guess.
fn rk4_step(state: &SystemState, dt: f64, ctx: &StepCtx<'_>, stats: &mut RunStats) -> Result<SystemState> {
    let n = state.phi.len();
    let mut gen_v: Vec<Complex64> = Vec::with_capacity(n);
    let t = state.t;

    let k1 = ctx.eval(t, &state.phi, &state.omega, &state.acvg_voltage, &mut gen_v, stats)?;

    let mut phi2 = vec![0.0; n];
    let mut omega2 = vec![0.0; n];
    for i in 0..n {
        phi2[i] = state.phi[i] + 0.5 * dt * k1.dphi[i];
        omega2[i] = state.omega[i] + 0.5 * dt * k1.domega[i];
    }
    let k2 = ctx.eval(t + 0.5 * dt, &phi2, &omega2, &k1.v, &mut gen_v, stats)?;

    for i in 0..n {
        phi2[i] = state.phi[i] + 0.5 * dt * k2.dphi[i];
        omega2[i] = state.omega[i] + 0.5 * dt * k2.domega[i];
    }
    let k3 = ctx.eval(t + 0.5 * dt, &phi2, &omega2, &k2.v, &mut gen_v, stats)?;

    for i in 0..n {
        phi2[i] = state.phi[i] + dt * k3.dphi[i];
        omega2[i] = state.omega[i] + dt * k3.domega[i];
    }
    let k4 = ctx.eval(t + dt, &phi2, &omega2, &k3.v, &mut gen_v, stats)?;

    let sixth = dt / 6.0;
    let mut phi = vec![0.0; n];
    let mut omega = vec![0.0; n];
    for i in 0..n {
        phi[i] = state.phi[i]
            + sixth * (k1.dphi[i] + 2.0 * k2.dphi[i] + 2.0 * k3.dphi[i] + k4.dphi[i]);
        omega[i] = state.omega[i]
            + sixth * (k1.domega[i] + 2.0 * k2.domega[i] + 2.0 * k3.domega[i] + k4.domega[i]);
    }

    // Consistency solve at the accepted state.
    gen_voltages(&ctx.machines.emf, &phi, &mut gen_v);
    let p_pu = ctx.acvg_power_pu(&omega);
    let (v, report) = solve_network(ctx.net, &gen_v, &p_pu, &k4.v, ctx.newton);
    stats.newton_iterations += report.iterations;
    if report.used_fallback {
        stats.fallback_solves += 1;
    }
    if !report.converged {
        return Err(Error::StepFailed {
            t: t + dt,
            reason: "network algebra did not converge",
            iterations: report.iterations,
            residual: report.residual,
        });
    }
    Ok(SystemState { t: t + dt, phi, omega, acvg_voltage: v })
}

/// Public single-step entry point, used by convergence studies.
pub fn step(
    state: &SystemState,
    dt: f64,
    net: &ReducedNetwork,
    machines: &Machines,
    controller: &Controller,
    newton: &NewtonOptions,
) -> Result<SystemState> {
    let ctx = StepCtx {
        net,
        machines,
        controller,
        suppressed: &[],
        newton,
        frozen_dev_hz: None,
    };
    let mut stats = RunStats::default();
    rk4_step(state, dt, &ctx, &mut stats)
}

fn is_multiple(value: f64, dt: f64) -> Option<usize> {
    let k = (value / dt).round();
    if k >= 0.0 && (value - k * dt).abs() <= 1e-9 * value.abs().max(1.0) {
        Some(k as usize)
    } else {
        None
    }
}

/// Integrate a compiled scenario from `initial` to the scenario horizon.
pub fn simulate(
    initial: &SystemState,
    scenario: &Scenario,
    machines: &Machines,
    controller: &Controller,
    opts: &SimOptions,
) -> Result<(TimeSeries, RunStats)> {
    let dt = opts.dt;
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let n_steps = is_multiple(scenario.horizon, dt).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "horizon {} s is not a multiple of dt {} s",
            scenario.horizon, dt
        ))
    })?;
    if n_steps == 0 {
        return Err(Error::InvalidConfig("horizon shorter than one step".into()));
    }
    let stride = is_multiple(opts.output_interval, dt)
        .filter(|&s| s > 0)
        .ok_or_else(|| {
            Error::InvalidConfig(format!(
                "output interval {} s is not a positive multiple of dt {} s",
                opts.output_interval, dt
            ))
        })?;
    let delay_steps = is_multiple(controller.delay_s, dt).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "controller delay {} s is not a multiple of dt {} s",
            controller.delay_s, dt
        ))
    })?;
    let mut epoch_steps = Vec::with_capacity(scenario.epochs.len());
    for e in &scenario.epochs {
        let k = is_multiple(e.start, dt)
            .ok_or(Error::EventOffGrid { t: e.start, dt })?;
        epoch_steps.push(k);
    }

    let n = machines.n();
    if initial.phi.len() != n || initial.omega.len() != n {
        return Err(Error::InvalidConfig(
            "initial state does not match machine count".into(),
        ));
    }

    let mut stats = RunStats::default();
    let mut series = TimeSeries::new(
        scenario.epochs[0].net.gen_bus_ids.clone(),
        scenario.epochs[0].net.acvg_bus_ids.clone(),
        machines.frequency_hz,
    );

    let mut state = initial.clone();
    state.t = 0.0;
    let mut epoch_idx = 0usize;
    let mut suppressed: Vec<usize> = Vec::new();
    // Collapse classification never applies while the system is still in its
    // undisturbed epoch; there a failed solve means the model is broken.
    let first_epoch_disturbed = scenario.events.iter().any(|e| e.t == 0.0);
    // Instantaneous deviation measured at the start of every step, for the
    // optional reaction-delay hook.
    let mut dev_history: Vec<f64> = Vec::with_capacity(n_steps + 1);
    let mut gen_v: Vec<Complex64> = Vec::with_capacity(n);

    // Enter the first epoch: make the provided state consistent with it.
    let frozen0 = frozen_deviation(delay_steps, 0, &dev_history);
    enter_epoch(
        &mut state,
        &scenario.epochs[0],
        machines,
        controller,
        &mut suppressed,
        &opts.newton,
        frozen0,
        &mut stats,
        &mut gen_v,
    )?;
    record_sample(&mut series, &state, machines, controller, &suppressed);

    for k in 0..n_steps {
        if epoch_idx + 1 < scenario.epochs.len() && epoch_steps[epoch_idx + 1] == k {
            epoch_idx += 1;
            suppressed.clear();
            let frozen = frozen_deviation(delay_steps, k, &dev_history);
            if let Err(err) = enter_epoch(
                &mut state,
                &scenario.epochs[epoch_idx],
                machines,
                controller,
                &mut suppressed,
                &opts.newton,
                frozen,
                &mut stats,
                &mut gen_v,
            ) {
                if opts.collapse_is_instability && matches!(err, Error::StepFailed { .. }) {
                    series.early_stop = Some(state.t);
                    stats.collapse_at = Some(state.t);
                    break;
                }
                return Err(err);
            }
        }
        let collapse_eligible =
            opts.collapse_is_instability && (epoch_idx >= 1 || first_epoch_disturbed);
        let dev_now = average_frequency_deviation(&state.omega, machines.frequency_hz);
        dev_history.push(dev_now);
        let frozen = frozen_deviation(delay_steps, k, &dev_history);

        let epoch = &scenario.epochs[epoch_idx];
        let attempt = {
            let ctx = StepCtx {
                net: &epoch.net,
                machines,
                controller,
                suppressed: &suppressed,
                newton: &opts.newton,
                frozen_dev_hz: frozen,
            };
            rk4_step(&state, dt, &ctx, &mut stats)
        };
        // A failing solve while a fault is on is retried with one more fleet
        // tripped each time.
        let mut attempt = attempt;
        while attempt.is_err() {
            match next_suppression(epoch, &suppressed, &state.acvg_voltage) {
                Some(batch) => {
                    suppressed.extend(batch);
                    stats.suppressions.push(state.t);
                    let ctx = StepCtx {
                        net: &epoch.net,
                        machines,
                        controller,
                        suppressed: &suppressed,
                        newton: &opts.newton,
                        frozen_dev_hz: frozen,
                    };
                    attempt = rk4_step(&state, dt, &ctx, &mut stats);
                }
                None => break,
            }
        }
        let next = match attempt {
            Ok(next) => Some(next),
            Err(err) => {
                if !collapse_eligible {
                    return Err(err);
                }
                None
            }
        };
        let Some(next) = next else {
            // The algebra has no solution from the last good state: voltage
            // collapse. Close the series there and classify it unstable.
            if k % stride != 0 {
                record_sample(&mut series, &state, machines, controller, &suppressed);
            }
            series.early_stop = Some(state.t);
            stats.collapse_at = Some(state.t);
            break;
        };
        state = next;
        state.t = (k + 1) as f64 * dt;
        stats.steps += 1;

        let sampled = (k + 1) % stride == 0;
        if sampled {
            record_sample(&mut series, &state, machines, controller, &suppressed);
        }
        if opts.stop_on_instability {
            let spread = max_spread(&state.phi);
            if spread >= INSTABILITY_SPREAD_RAD {
                if !sampled {
                    record_sample(&mut series, &state, machines, controller, &suppressed);
                }
                series.early_stop = Some(state.t);
                break;
            }
        }
    }

    Ok((series, stats))
}

/// Next batch of fleets to trip when the network algebra will not converge.
///
/// Fleets at faulted buses go first, all at once. While a fault is on, the
/// remaining fleets then trip one at a time, weakest voltage first, the way
/// charger electronics drop out under a nearby short. Once the fault clears
/// nothing more is tripped: a post-clearing failure means the system itself
/// is collapsing.
fn next_suppression(
    epoch: &crate::scenario::Epoch,
    suppressed: &[usize],
    v: &[Complex64],
) -> Option<Vec<usize>> {
    let fresh: Vec<usize> = epoch
        .faulted_acvg
        .iter()
        .copied()
        .filter(|j| !suppressed.contains(j))
        .collect();
    if !fresh.is_empty() {
        return Some(fresh);
    }
    if !epoch.fault_on {
        return None;
    }
    let mut weakest: Option<(f64, usize)> = None;
    for (j, vj) in v.iter().enumerate() {
        if suppressed.contains(&j) {
            continue;
        }
        let mag = vj.norm();
        if weakest.is_none_or(|(m, _)| mag < m) {
            weakest = Some((mag, j));
        }
    }
    weakest.map(|(_, j)| vec![j])
}

fn frozen_deviation(delay_steps: usize, step: usize, history: &[f64]) -> Option<f64> {
    if delay_steps == 0 {
        None
    } else if step < delay_steps {
        Some(0.0)
    } else {
        Some(history[step - delay_steps])
    }
}

fn max_spread(phi: &[f64]) -> f64 {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &p in phi {
        min = min.min(p);
        max = max.max(p);
    }
    max - min
}

/// Re-solve the algebra after a topology change, suppressing faulted fleets
/// if that is what it takes to keep the network solvable.
#[allow(clippy::too_many_arguments)]
fn enter_epoch(
    state: &mut SystemState,
    epoch: &crate::scenario::Epoch,
    machines: &Machines,
    controller: &Controller,
    suppressed: &mut Vec<usize>,
    newton: &NewtonOptions,
    frozen_dev_hz: Option<f64>,
    stats: &mut RunStats,
    gen_v: &mut Vec<Complex64>,
) -> Result<()> {
    loop {
        let ctx = StepCtx {
            net: &epoch.net,
            machines,
            controller,
            suppressed,
            newton,
            frozen_dev_hz,
        };
        gen_voltages(&machines.emf, &state.phi, gen_v);
        let p_pu = ctx.acvg_power_pu(&state.omega);
        // A topology switch invalidates the previous epoch's voltages as a
        // guide: warm-starting from a just-faulted profile can drag Newton
        // onto the degenerate low-voltage branch of the power-balance
        // equations. Entries are rare, so always restart from flat.
        let flat = vec![Complex64::new(1.0, 0.0); state.acvg_voltage.len()];
        let (v, report) = solve_network(&epoch.net, gen_v, &p_pu, &flat, newton);
        stats.newton_iterations += report.iterations;
        if report.used_fallback {
            stats.fallback_solves += 1;
        }
        if report.converged {
            state.acvg_voltage = v;
            return Ok(());
        }
        // Rank undervoltage trips by the failed attempt's iterate: it shows
        // where the collapse concentrates even though it did not converge.
        let Some(batch) = next_suppression(epoch, suppressed, &v) else {
            return Err(Error::StepFailed {
                t: state.t,
                reason: "network algebra did not converge at epoch entry",
                iterations: report.iterations,
                residual: report.residual,
            });
        };
        suppressed.extend(batch);
        stats.suppressions.push(state.t);
    }
}

fn record_sample(
    series: &mut TimeSeries,
    state: &SystemState,
    machines: &Machines,
    controller: &Controller,
    suppressed: &[usize],
) {
    let dev = average_frequency_deviation(&state.omega, machines.frequency_hz);
    series.times.push(state.t);
    series
        .omega_hz
        .extend(state.omega.iter().map(|&w| w * machines.frequency_hz));
    series.phi_rad.extend_from_slice(&state.phi);
    series
        .v_pu
        .extend(state.acvg_voltage.iter().map(|v| v.norm()));
    let mut p = controller.power_mw(dev).p_mw;
    for &j in suppressed {
        p[j] = 0.0;
    }
    series.p_acvg_mw.extend_from_slice(&p);
    series.delta_omega_hz.push(dev);
}

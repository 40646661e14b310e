//! Time-domain simulation of the switched system, bumpless mode transfer
//! and the switching policies.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::csi::{csi_at_operating_point, csi_map, CsiContext, CsiWeights, DEFAULT_RESOLUTION};
use crate::equilibrium::solve_equilibrium;
use crate::error::{Error, Result};
use crate::gmm::{select_model, GmmModel, DEFAULT_K_MAX};
use crate::linearization::LinearModel;
use crate::model::{
    gfl_signals, gfm_signals, power_outputs, GflState, GfmState, Mode, Plant, PARAM_NAMES,
};
use crate::presets::grid_plane;
use crate::sssr::{fit_sssr, sample_ismd, Region};

pub const DEFAULT_DT: f64 = 2e-5;
pub const POLICY_PERIOD: f64 = 1e-3;
pub const DIVERGENCE_LIMIT: f64 = 1e3;
pub const DEFAULT_HYSTERESIS: f64 = 0.05;
pub const DEFAULT_SCR_THRESHOLD: f64 = 3.5;
/// Log-amplitude slope (1/s) separating decay, sustained oscillation and
/// growth in [`verdict`].
pub const VERDICT_SLOPE: f64 = 0.05;
/// Peak-to-peak power below which a trace counts as flat.
pub const AMPLITUDE_FLOOR: f64 = 1e-9;
/// Fraction of each segment skipped before judging it.
pub const SETTLE_FRACTION: f64 = 0.1;

const SETPOINT_FIELDS: [&str; 4] = ["p_ref", "q_ref", "vd_ref", "vq_ref"];

/// Classical fourth-order Runge-Kutta with reusable buffers.
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Self { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }

    pub fn step(&mut self, f: impl Fn(&[f64], &mut [f64]), x: &mut [f64], dt: f64) {
        let n = x.len();
        f(x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k1[i];
        }
        f(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k2[i];
        }
        f(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        f(&self.tmp, &mut self.k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn diverged(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

/// One RK4 step of the active subsystem.
pub fn integrate(plant: &Plant, mode: Mode, x: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {dt}")));
    }
    if x.len() != mode.order() {
        return Err(Error::Dimension { expected: mode.order(), got: x.len() });
    }
    let mut out = x.to_vec();
    Rk4::new(x.len()).step(|s, d| plant.derivatives_into(mode, s, d), &mut out, dt);
    Ok(out)
}

/// Reference signals compared across a mode change.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferSignals {
    pub omega: f64,
    pub p: f64,
    pub i_ld_ref: f64,
    pub i_lq_ref: f64,
    pub e_d_ref: f64,
    pub e_q_ref: f64,
}

pub fn transfer_signals(plant: &Plant, mode: Mode, x: &[f64]) -> TransferSignals {
    let s = plant.signals(mode, x);
    TransferSignals { omega: s.omega, p: s.p, i_ld_ref: s.i_ld_ref, i_lq_ref: s.i_lq_ref, e_d_ref: s.e_d_ref, e_q_ref: s.e_q_ref }
}

fn solve_gain(name: &str, gain: f64, rhs: f64) -> Result<f64> {
    if gain != 0.0 {
        Ok(rhs / gain)
    } else if rhs == 0.0 {
        Ok(0.0)
    } else {
        Err(Error::TransferSolve(format!("{name} is zero but its integrator must absorb {rhs:e}")))
    }
}

/// Initializes the incoming controller from the outgoing one. Physical
/// states are copied, the frequency state is matched and every integrator
/// is chosen so the current and voltage references are unchanged.
pub fn bumpless_transfer(plant: &Plant, from: Mode, x: &[f64], to: Mode) -> Result<Vec<f64>> {
    if x.len() != from.order() {
        return Err(Error::Dimension { expected: from.order(), got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cannot transfer from a non-finite state".into()));
    }
    if from == to {
        return Ok(x.to_vec());
    }
    let src = transfer_signals(plant, from, x);
    let ph = crate::model::SubsystemState::from_slice(from, x)?.physical();
    let p = &plant.params;
    let sp = &plant.setpoint;
    let w = src.omega;
    let (pw, q) = power_outputs(ph.v_d, ph.v_q, ph.i_d, ph.i_q);
    match to {
        Mode::Gfm => {
            let g = &plant.gfm;
            let mut t = GfmState {
                delta: ph.delta,
                omega: w,
                i_d: ph.i_d,
                i_q: ph.i_q,
                i_ld: ph.i_ld,
                i_lq: ph.i_lq,
                v_d: ph.v_d,
                v_q: ph.v_q,
                ..Default::default()
            };
            // voltage magnitude reference starts at the present d-axis voltage
            let err = g.k_u * (sp.vd_ref - ph.v_d) + g.k_q * (sp.q_ref - q);
            t.e_int = solve_gain("ki_q", g.ki_q, ph.v_d - sp.vd_ref - g.kp_q * err)?;
            let e_ref = ph.v_d;
            t.gamma_d = solve_gain(
                "ki_o2",
                g.ki_o2,
                src.i_ld_ref - (ph.i_d - w * p.c_f * ph.v_q) - g.kp_o2 * (e_ref - ph.v_d),
            )?;
            t.gamma_q = solve_gain(
                "ki_o2",
                g.ki_o2,
                src.i_lq_ref - (ph.i_q + w * p.c_f * ph.v_d) - g.kp_o2 * (sp.vq_ref - ph.v_q),
            )?;
            t.xi_d = solve_gain(
                "ki_i2",
                g.ki_i2,
                src.e_d_ref - (ph.v_d - w * p.l_f * ph.i_lq) - g.kp_i2 * (src.i_ld_ref - ph.i_ld),
            )?;
            t.xi_q = solve_gain(
                "ki_i2",
                g.ki_i2,
                src.e_q_ref - (ph.v_q + w * p.l_f * ph.i_ld) - g.kp_i2 * (src.i_lq_ref - ph.i_lq),
            )?;
            debug_assert!({
                let s = gfm_signals(&t, p, g, sp);
                (s.e_d_ref - src.e_d_ref).abs() < 1e-6
            });
            Ok(t.to_array().to_vec())
        }
        Mode::Gfl => {
            let g = &plant.gfl;
            let mut t = GflState {
                delta: ph.delta,
                i_d: ph.i_d,
                i_q: ph.i_q,
                i_ld: ph.i_ld,
                i_lq: ph.i_lq,
                v_d: ph.v_d,
                v_q: ph.v_q,
                ..Default::default()
            };
            t.zeta = solve_gain("ki_pll", g.ki_pll, w - g.kp_pll * ph.v_q)?;
            t.gamma_d = solve_gain("ki_o1", g.ki_o1, src.i_ld_ref - g.kp_o1 * (sp.p_ref - pw))?;
            t.gamma_q = solve_gain("ki_o1", g.ki_o1, src.i_lq_ref - g.kp_o1 * (q - sp.q_ref))?;
            t.xi_d = solve_gain(
                "ki_i1",
                g.ki_i1,
                src.e_d_ref - (ph.v_d - w * p.l_f * ph.i_lq) - g.kp_i1 * (src.i_ld_ref - ph.i_ld),
            )?;
            t.xi_q = solve_gain(
                "ki_i1",
                g.ki_i1,
                src.e_q_ref - (ph.v_q + w * p.l_f * ph.i_ld) - g.kp_i1 * (src.i_lq_ref - ph.i_lq),
            )?;
            debug_assert!({
                let s = gfl_signals(&t, p, g, sp);
                (s.e_d_ref - src.e_d_ref).abs() < 1e-6
            });
            Ok(t.to_array().to_vec())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Change {
    /// Overwrite a plant parameter.
    Set { param: String, value: f64 },
    /// Add to a setpoint field.
    Step { field: String, delta: f64 },
}

impl Change {
    pub fn parse(key: &str, value: f64) -> Result<Self> {
        if let Some(field) = key.strip_prefix("step_") {
            if SETPOINT_FIELDS.contains(&field) {
                return Ok(Change::Step { field: field.to_string(), delta: value });
            }
        } else if PARAM_NAMES.contains(&key) {
            return Ok(Change::Set { param: key.to_string(), value });
        }
        Err(Error::Config(format!("unknown scenario key `{key}`")))
    }

    pub fn apply(&self, plant: &mut Plant) -> Result<()> {
        match self {
            Change::Set { param, value } => plant.set(param, *value),
            Change::Step { field, delta } => {
                let v = plant.get(field)?;
                plant.set(field, v + delta)
            }
        }
    }

    pub fn key(&self) -> String {
        match self {
            Change::Set { param, .. } => param.clone(),
            Change::Step { field, .. } => format!("step_{field}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub change: Change,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    pub initial_mode: Mode,
    /// Parameter overrides applied before the initial equilibrium.
    pub initial: Vec<(String, f64)>,
    pub events: Vec<Event>,
    /// Keep every n-th step in the trace.
    pub record_every: usize,
    /// Baseline SCR threshold shipped with the scenario, if any.
    pub threshold: Option<f64>,
    /// Index hysteresis shipped with the scenario, if any.
    pub epsilon_h: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    duration: f64,
    dt: Option<f64>,
    initial_mode: Mode,
    record_every: Option<usize>,
    threshold: Option<f64>,
    epsilon_h: Option<f64>,
    #[serde(default)]
    set: BTreeMap<String, f64>,
    #[serde(default)]
    event: Vec<EventFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EventFile {
    time: f64,
    key: String,
    value: f64,
}

const PRESETS: [(&str, &str); 4] = [
    ("fig7", include_str!("../scenarios/fig7.toml")),
    ("fig8-gfl", include_str!("../scenarios/fig8-gfl.toml")),
    ("fig8-gfm", include_str!("../scenarios/fig8-gfm.toml")),
    ("fig11", include_str!("../scenarios/fig11.toml")),
];

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut initial = Vec::new();
        for (k, v) in f.set {
            if !PARAM_NAMES.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown parameter `{k}` in [set]")));
            }
            initial.push((k, v));
        }
        let events = f
            .event
            .into_iter()
            .map(|e| Ok(Event { time: e.time, change: Change::parse(&e.key, e.value)? }))
            .collect::<Result<Vec<_>>>()?;
        let s = Scenario {
            name: f.name.unwrap_or_else(|| "scenario".into()),
            duration: f.duration,
            dt: f.dt.unwrap_or(DEFAULT_DT),
            initial_mode: f.initial_mode,
            initial,
            events,
            record_every: f.record_every.unwrap_or(1),
            threshold: f.threshold,
            epsilon_h: f.epsilon_h,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn preset(name: &str) -> Result<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| Self::parse(t))
            .unwrap_or_else(|| Err(Error::Config(format!("unknown scenario preset `{name}`"))))
    }

    pub fn preset_names() -> Vec<&'static str> {
        PRESETS.iter().map(|(n, _)| *n).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.dt > 0.0) || self.dt > self.duration {
            return Err(Error::Config(format!("dt must be in (0, duration], got {}", self.dt)));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if let Some(e) = self.epsilon_h {
            if !(e >= 0.0) {
                return Err(Error::Config(format!("epsilon_h must be non-negative, got {e}")));
            }
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0) {
                return Err(Error::Config(format!("threshold must be positive, got {t}")));
            }
        }
        let mut last = f64::NEG_INFINITY;
        for e in &self.events {
            if !(e.time >= 0.0 && e.time <= self.duration) {
                return Err(Error::Config(format!("event time {} outside [0, {}]", e.time, self.duration)));
            }
            if e.time <= last {
                return Err(Error::Config("event times must be strictly increasing".into()));
            }
            last = e.time;
        }
        Ok(())
    }

    /// Base plant with the scenario's initial overrides.
    pub fn initial_plant(&self, base: &Plant) -> Result<Plant> {
        let mut p = *base;
        for (k, v) in &self.initial {
            p.set(k, *v)?;
        }
        p.validate()?;
        Ok(p)
    }
}

/// Index evaluation for one subsystem.
#[derive(Clone, Debug)]
pub struct ModeCsi {
    pub region: Region,
    pub model: GmmModel,
    pub context: CsiContext,
}

impl ModeCsi {
    /// Index at the plant's current values of the region's axes.
    pub fn evaluate(&self, plant: &Plant) -> Result<f64> {
        let x: Vec<f64> = self.region.axes.iter().map(|a| plant.get(&a.name)).collect::<Result<_>>()?;
        csi_at_operating_point(&x, &self.region, &self.model, &self.context, self.context.weights)
    }
}

#[derive(Clone, Debug)]
pub struct CsiPolicy {
    pub epsilon_h: f64,
    pub gfl: ModeCsi,
    pub gfm: ModeCsi,
}

impl CsiPolicy {
    pub fn for_mode(&self, mode: Mode) -> &ModeCsi {
        match mode {
            Mode::Gfl => &self.gfl,
            Mode::Gfm => &self.gfm,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsiPolicySetup {
    pub weights: CsiWeights,
    pub epsilon_h: f64,
    pub ismd_samples: usize,
    pub k_max: usize,
    pub resolution: usize,
    pub epsilon_r: f64,
    pub seed: u64,
}

impl Default for CsiPolicySetup {
    fn default() -> Self {
        Self {
            weights: CsiWeights::default(),
            epsilon_h: DEFAULT_HYSTERESIS,
            ismd_samples: 2000,
            k_max: DEFAULT_K_MAX,
            resolution: DEFAULT_RESOLUTION,
            epsilon_r: 1e-3,
            seed: 0,
        }
    }
}

fn build_mode_csi(base: &Plant, mode: Mode, setup: &CsiPolicySetup) -> Result<ModeCsi> {
    let preset = grid_plane(mode);
    let space = preset.space(base)?;
    let region = fit_sssr(&space, &preset.origin, crate::linearization::DEFAULT_EPSILON, setup.epsilon_r)?;
    let ismd = sample_ismd(&space, &region, setup.ismd_samples, setup.seed)?;
    let x: Vec<Vec<f64>> = ismd.samples.iter().map(|s| s.coords.clone()).collect();
    let y: Vec<f64> = ismd.samples.iter().map(|s| s.margin).collect();
    let model = select_model(&x, &y, setup.k_max, setup.seed)?.model;
    let map = csi_map(&region, &model, setup.resolution, setup.weights)?;
    log::info!("{} index context: {} grid points, max J {:.4}", mode.name(), map.points.len(), map.best_j().j);
    Ok(ModeCsi { region, model, context: map.context })
}

/// Fits both grid-strength regions and freezes their index contexts.
pub fn build_csi_policy(base: &Plant, setup: &CsiPolicySetup) -> Result<CsiPolicy> {
    setup.weights.validate()?;
    if !(setup.epsilon_h >= 0.0) {
        return Err(Error::Config(format!("hysteresis must be non-negative, got {}", setup.epsilon_h)));
    }
    let (gfl, gfm) = rayon::join(|| build_mode_csi(base, Mode::Gfl, setup), || build_mode_csi(base, Mode::Gfm, setup));
    Ok(CsiPolicy { epsilon_h: setup.epsilon_h, gfl: gfl?, gfm: gfm? })
}

#[derive(Clone, Debug)]
pub enum SwitchPolicy {
    None,
    /// GFL while SCR is at or above the threshold, GFM below it.
    ScrThreshold(f64),
    CsiBased(Box<CsiPolicy>),
}

impl SwitchPolicy {
    pub fn validate(&self) -> Result<()> {
        match self {
            SwitchPolicy::ScrThreshold(t) if !(*t > 0.0) => Err(Error::Config(format!("threshold must be positive, got {t}"))),
            SwitchPolicy::CsiBased(c) if !(c.epsilon_h >= 0.0) => Err(Error::Config("hysteresis must be non-negative".into())),
            _ => Ok(()),
        }
    }
}

/// Next active subsystem.
pub fn decide_switch(policy: &SwitchPolicy, sigma: Mode, scr: f64, j_active: f64, j_target: f64) -> Mode {
    match policy {
        SwitchPolicy::None => sigma,
        SwitchPolicy::ScrThreshold(t) => {
            if scr >= *t {
                Mode::Gfl
            } else {
                Mode::Gfm
            }
        }
        SwitchPolicy::CsiBased(c) => {
            if j_target > j_active + c.epsilon_h {
                sigma.other()
            } else {
                sigma
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub sigma: Mode,
    pub state: Vec<f64>,
    pub p: f64,
    pub q: f64,
    pub v_a: f64,
    /// NaN unless the index policy is active.
    pub j_active: f64,
    pub j_target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchRecord {
    pub t: f64,
    pub from: Mode,
    pub to: Mode,
    pub before: TransferSignals,
    pub after: TransferSignals,
}

impl SwitchRecord {
    pub fn power_jump(&self) -> f64 {
        (self.after.p - self.before.p).abs()
    }

    /// Largest jump in the inner-loop references.
    pub fn reference_jump(&self) -> f64 {
        [
            self.after.i_ld_ref - self.before.i_ld_ref,
            self.after.i_lq_ref - self.before.i_lq_ref,
            self.after.e_d_ref - self.before.e_d_ref,
            self.after.e_q_ref - self.before.e_q_ref,
        ]
        .iter()
        .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub trace: Vec<TraceRecord>,
    pub switches: Vec<SwitchRecord>,
    pub diverged_at: Option<f64>,
    pub final_mode: Mode,
    pub final_state: Vec<f64>,
    pub final_plant: Plant,
}

impl SimResult {
    pub fn times(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.t).collect()
    }

    pub fn power(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.p).collect()
    }

    /// Rows `t, sigma, P, Q, v_a, J_active, J_target`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,sigma,p,q,v_a,j_active,j_target")?;
        for r in &self.trace {
            writeln!(
                w,
                "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t,
                r.sigma.sigma(),
                r.p,
                r.q,
                r.v_a,
                r.j_active,
                r.j_target
            )?;
        }
        Ok(())
    }
}

struct Sim<'a> {
    policy: &'a SwitchPolicy,
    plant: Plant,
    mode: Mode,
    x: Vec<f64>,
    theta: f64,
    j: (f64, f64),
}

impl Sim<'_> {
    fn record(&self, t: f64) -> TraceRecord {
        let s = self.plant.signals(self.mode, &self.x);
        let ph = crate::model::SubsystemState::from_slice(self.mode, &self.x).expect("length fixed").physical();
        // peak-invariant inverse transform, phase a
        let v_a = ph.v_d * self.theta.cos() - ph.v_q * self.theta.sin();
        TraceRecord {
            t,
            sigma: self.mode,
            state: self.x.clone(),
            p: s.p,
            q: s.q,
            v_a,
            j_active: self.j.0,
            j_target: self.j.1,
        }
    }

    fn decide(&mut self, t: f64) -> Result<Option<SwitchRecord>> {
        let (ja, jt) = match self.policy {
            SwitchPolicy::CsiBased(c) => {
                (c.for_mode(self.mode).evaluate(&self.plant)?, c.for_mode(self.mode.other()).evaluate(&self.plant)?)
            }
            _ => (f64::NAN, f64::NAN),
        };
        self.j = (ja, jt);
        let next = decide_switch(self.policy, self.mode, self.plant.params.scr, ja, jt);
        if next == self.mode {
            return Ok(None);
        }
        let before = transfer_signals(&self.plant, self.mode, &self.x);
        let x = bumpless_transfer(&self.plant, self.mode, &self.x, next)?;
        let after = transfer_signals(&self.plant, next, &x);
        let rec = SwitchRecord { t, from: self.mode, to: next, before, after };
        log::info!("t = {t:.4} s: {} -> {}", self.mode.name(), next.name());
        self.mode = next;
        self.x = x;
        self.j = (jt, ja);
        Ok(Some(rec))
    }
}

/// Runs a scenario from the initial subsystem's equilibrium.
pub fn simulate(scenario: &Scenario, policy: &SwitchPolicy, base: &Plant) -> Result<SimResult> {
    let plant = scenario.initial_plant(base)?;
    let eq = solve_equilibrium(scenario.initial_mode, &plant, None)?;
    simulate_from(scenario, policy, &plant, scenario.initial_mode, &eq.state.to_vec())
}

/// Runs a scenario from an explicit state; `plant` already carries the
/// initial overrides.
pub fn simulate_from(scenario: &Scenario, policy: &SwitchPolicy, plant: &Plant, mode: Mode, x0: &[f64]) -> Result<SimResult> {
    scenario.validate()?;
    policy.validate()?;
    if x0.len() != mode.order() {
        return Err(Error::Dimension { expected: mode.order(), got: x0.len() });
    }
    let dt = scenario.dt;
    let n_steps = (scenario.duration / dt).round() as usize;
    let cadence = ((POLICY_PERIOD / dt).round() as usize).max(1);
    let mut sim = Sim { policy, plant: *plant, mode, x: x0.to_vec(), theta: 0.0, j: (f64::NAN, f64::NAN) };
    let mut trace = Vec::with_capacity(n_steps / scenario.record_every + 2);
    let mut switches = Vec::new();
    let mut next_event = 0;
    let mut diverged_at = None;
    let mut rk = [Rk4::new(12), Rk4::new(13)];
    for k in 0..=n_steps {
        let t = k as f64 * dt;
        while next_event < scenario.events.len() && scenario.events[next_event].time <= t + 0.5 * dt {
            scenario.events[next_event].change.apply(&mut sim.plant)?;
            next_event += 1;
        }
        if k % cadence == 0 && !matches!(policy, SwitchPolicy::None) {
            if let Some(s) = sim.decide(t)? {
                switches.push(s);
            }
        }
        if k % scenario.record_every == 0 || k == n_steps {
            trace.push(sim.record(t));
        }
        if k == n_steps {
            break;
        }
        let omega = sim.plant.signals(sim.mode, &sim.x).omega;
        let (pl, md) = (sim.plant, sim.mode);
        let r = match md {
            Mode::Gfl => &mut rk[0],
            Mode::Gfm => &mut rk[1],
        };
        r.step(|s, d| pl.derivatives_into(md, s, d), &mut sim.x, dt);
        sim.theta = (sim.theta + omega * pl.params.omega_base * dt) % std::f64::consts::TAU;
        if diverged(&sim.x) {
            let t_end = t + dt;
            diverged_at = Some(t_end);
            if sim.x.iter().all(|v| v.is_finite()) {
                trace.push(sim.record(t_end));
            }
            log::info!("divergence at t = {t_end:.4} s");
            break;
        }
    }
    Ok(SimResult { trace, switches, diverged_at, final_mode: sim.mode, final_state: sim.x, final_plant: sim.plant })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Oscillation amplitude decays.
    Stable,
    /// Amplitude neither decays nor grows beyond the slope threshold.
    Sustained,
    Unstable,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Sustained => "sustained-oscillation",
            Verdict::Unstable => "unstable",
        }
    }
}

/// Least-squares slope of log peak-to-peak active power over `windows`
/// equal windows in [`from`, end of trace].
pub fn amplitude_slope(result: &SimResult, from: f64, windows: usize) -> Option<f64> {
    amplitude_slope_between(result, from, f64::INFINITY, windows)
}

/// As [`amplitude_slope`], restricted to records in [`from`, `to`].
pub fn amplitude_slope_between(result: &SimResult, from: f64, to: f64, windows: usize) -> Option<f64> {
    let recs: Vec<&TraceRecord> = result.trace.iter().filter(|r| r.t >= from && r.t <= to).collect();
    let (t0, t1) = (recs.first()?.t, recs.last()?.t);
    if windows < 2 || t1 <= t0 {
        return None;
    }
    let w = (t1 - t0) / windows as f64;
    let mut pts = Vec::new();
    for i in 0..windows {
        let (a, b) = (t0 + i as f64 * w, t0 + (i + 1) as f64 * w);
        let vals: Vec<f64> = recs.iter().filter(|r| r.t >= a && r.t < b).map(|r| r.p).collect();
        if vals.len() < 2 {
            continue;
        }
        let pp = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max) - vals.iter().copied().fold(f64::INFINITY, f64::min);
        pts.push((0.5 * (a + b), (pp + 1e-14).ln()));
    }
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Some(sxy / sxx)
}

/// Stability verdict of the trace after `from`.
pub fn verdict(result: &SimResult, from: f64) -> Verdict {
    verdict_between(result, from, f64::INFINITY)
}

/// Verdict over [`from`, `to`]; a hard divergence before the window
/// closes counts as unstable.
pub fn verdict_between(result: &SimResult, from: f64, to: f64) -> Verdict {
    if result.diverged_at.is_some_and(|t| t <= to + 1e-9) {
        return Verdict::Unstable;
    }
    let peak = result
        .trace
        .iter()
        .filter(|r| r.t >= from && r.t <= to)
        .map(|r| r.p)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)));
    if peak.1 - peak.0 < AMPLITUDE_FLOOR {
        return Verdict::Stable;
    }
    match amplitude_slope_between(result, from, to, 10) {
        Some(s) if s < -VERDICT_SLOPE => Verdict::Stable,
        Some(s) if s > VERDICT_SLOPE => Verdict::Unstable,
        Some(_) => Verdict::Sustained,
        None => Verdict::Stable,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub from: f64,
    pub to: f64,
    pub verdict: Verdict,
}

impl Verdict {
    fn severity(self) -> u8 {
        match self {
            Verdict::Stable => 0,
            Verdict::Sustained => 1,
            Verdict::Unstable => 2,
        }
    }
}

/// Verdict of every interval between consecutive events, each judged
/// after skipping its first [`SETTLE_FRACTION`].
pub fn segment_verdicts(result: &SimResult, scenario: &Scenario) -> Vec<Segment> {
    let mut cuts = vec![0.0];
    cuts.extend(scenario.events.iter().map(|e| e.time).filter(|&t| t > 0.0));
    cuts.push(scenario.duration);
    cuts.dedup();
    cuts.windows(2)
        .map(|w| {
            let from = w[0] + SETTLE_FRACTION * (w[1] - w[0]);
            Segment { from: w[0], to: w[1], verdict: verdict_between(result, from, w[1]) }
        })
        .collect()
}

/// Worst segment verdict.
pub fn overall_verdict(segments: &[Segment]) -> Verdict {
    segments.iter().map(|s| s.verdict).max_by_key(|v| v.severity()).unwrap_or(Verdict::Stable)
}

/// Δx(t) at `steps + 1` samples of spacing `dt` for a constant input
/// `du` applied at t = 0, via the exact zero-order-hold discretization.
pub fn step_response(a: &DMatrix<f64>, b: &DMatrix<f64>, du: &[f64], steps: usize, dt: f64) -> Result<Vec<DVector<f64>>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension { expected: n, got: b.nrows() });
    }
    if du.len() != b.ncols() {
        return Err(Error::Dimension { expected: b.ncols(), got: du.len() });
    }
    let bu = b * DVector::from_column_slice(du);
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, 1)).copy_from(&(&bu * dt));
    let e = aug.exp();
    let phi = e.view((0, 0), (n, n)).into_owned();
    let gamma = e.view((0, n), (n, 1)).column(0).into_owned();
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = DVector::zeros(n);
    out.push(x.clone());
    for _ in 0..steps {
        x = &phi * &x + &gamma;
        out.push(x.clone());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearResponse {
    pub t: Vec<f64>,
    pub dx: Vec<DVector<f64>>,
    /// Equilibrium power plus its first-order deviation.
    pub p: Vec<f64>,
}

pub fn linear_response(model: &LinearModel, du: &[f64], duration: f64, dt: f64) -> Result<LinearResponse> {
    if !(dt > 0.0) || !(duration >= 0.0) {
        return Err(Error::Domain("duration and dt must be positive".into()));
    }
    let steps = (duration / dt).round() as usize;
    let dx = step_response(&model.a, &model.b, du, steps, dt)?;
    let ph = model.equilibrium.physical();
    let (p0, _) = power_outputs(ph.v_d, ph.v_q, ph.i_d, ph.i_q);
    // physical states sit at the tail of both state vectors
    let n = model.a.nrows();
    let (id, iq, vd, vq) = (n - 6, n - 5, n - 2, n - 1);
    let p = dx
        .iter()
        .map(|d| p0 + ph.i_d * d[vd] + ph.v_d * d[id] + ph.i_q * d[vq] + ph.v_q * d[iq])
        .collect();
    Ok(LinearResponse { t: (0..=steps).map(|k| k as f64 * dt).collect(), dx, p })
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok((a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt())
}

/// Nonlinear against linearized active power for a reference step.
#[derive(Clone, Debug)]
pub struct Fidelity {
    pub t: Vec<f64>,
    pub nonlinear: Vec<f64>,
    pub linear: Vec<f64>,
    pub rmse: f64,
}

/// Compares a finished run against the superposed linear responses of
/// its setpoint steps. Every event must be a setpoint step and the run
/// must have started from the equilibrium of `plant` without switching.
pub fn linear_comparison(scenario: &Scenario, plant: &Plant, result: &SimResult) -> Result<Fidelity> {
    let mode = scenario.initial_mode;
    if !result.switches.is_empty() {
        return Err(Error::Config("linear comparison needs a run without mode switches".into()));
    }
    let (_, lin, _) = crate::linearization::analyze(plant, mode)?;
    let rec_dt = scenario.dt * scenario.record_every as f64;
    let mut steps = Vec::new();
    for e in &scenario.events {
        let Change::Step { field, delta } = &e.change else {
            return Err(Error::Config(format!("linear comparison supports setpoint steps only, got `{}`", e.change.key())));
        };
        let idx = SETPOINT_FIELDS.iter().position(|f| f == field).expect("validated field");
        if idx >= mode.input_count() {
            return Err(Error::Config(format!("{field} is not an input of {}", mode.name())));
        }
        let mut du = vec![0.0; mode.input_count()];
        du[idx] = *delta;
        let lr = linear_response(&lin, &du, scenario.duration - e.time, rec_dt)?;
        steps.push((e.time, lr));
    }
    let ph = lin.equilibrium.physical();
    let p0 = power_outputs(ph.v_d, ph.v_q, ph.i_d, ph.i_q).0;
    let t = result.times();
    let linear: Vec<f64> = t
        .iter()
        .map(|&ti| {
            let mut p = p0;
            for (te, lr) in &steps {
                if ti + 1e-12 >= *te {
                    let k = ((ti - te) / rec_dt).round() as usize;
                    p += lr.p[k.min(lr.p.len() - 1)] - p0;
                }
            }
            p
        })
        .collect();
    let nonlinear = result.power();
    let e = rmse(&nonlinear, &linear)?;
    Ok(Fidelity { t, nonlinear, linear, rmse: e })
}

/// Steps `p_ref` by `dp` at `t_step` and compares the nonlinear and
/// linearized responses over `[0, duration]`.
pub fn step_fidelity(plant: &Plant, mode: Mode, dp: f64, t_step: f64, duration: f64) -> Result<Fidelity> {
    let eq = solve_equilibrium(mode, plant, None)?;
    let sc = Scenario {
        name: "step".into(),
        duration,
        dt: DEFAULT_DT,
        initial_mode: mode,
        initial: vec![],
        events: vec![Event { time: t_step, change: Change::Step { field: "p_ref".into(), delta: dp } }],
        record_every: 5,
        threshold: None,
        epsilon_h: None,
    };
    let sim = simulate_from(&sc, &SwitchPolicy::None, plant, mode, &eq.state.to_vec())?;
    if sim.diverged_at.is_some() {
        return Err(Error::Domain("nonlinear response diverged".into()));
    }
    linear_comparison(&sc, plant, &sim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_scalar_decay_and_order() {
        let f = |x: &[f64], d: &mut [f64]| d[0] = -x[0];
        let run = |dt: f64, n: usize| {
            let mut x = [1.0];
            let mut rk = Rk4::new(1);
            for _ in 0..n {
                rk.step(f, &mut x, dt);
            }
            x[0]
        };
        let e1 = (run(1e-3, 1000) - (-1.0f64).exp()).abs();
        assert!(e1 < 1e-9);
        let coarse = (run(0.1, 10) - (-1.0f64).exp()).abs();
        let fine = (run(0.05, 20) - (-1.0f64).exp()).abs();
        let ratio = coarse / fine;
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn equilibrium_does_not_drift() {
        let plant = Plant::default();
        let eq = solve_equilibrium(Mode::Gfl, &plant, None).unwrap();
        let sc = Scenario {
            name: "hold".into(),
            duration: 1.0,
            dt: DEFAULT_DT,
            initial_mode: Mode::Gfl,
            initial: vec![],
            events: vec![],
            record_every: 1000,
            threshold: None,
            epsilon_h: None,
        };
        let x0 = eq.state.to_vec();
        let r = simulate_from(&sc, &SwitchPolicy::None, &plant, Mode::Gfl, &x0).unwrap();
        let drift = r.final_state.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-8, "drift {drift}");
    }

    #[test]
    fn hysteresis_band() {
        let c = CsiPolicy {
            epsilon_h: 0.05,
            gfl: dummy_mode_csi(),
            gfm: dummy_mode_csi(),
        };
        let p = SwitchPolicy::CsiBased(Box::new(c));
        assert_eq!(decide_switch(&p, Mode::Gfl, 5.0, 0.5, 0.525), Mode::Gfl);
        assert_eq!(decide_switch(&p, Mode::Gfl, 5.0, 0.5, 0.6), Mode::Gfm);
        let t = SwitchPolicy::ScrThreshold(3.5);
        assert_eq!(decide_switch(&t, Mode::Gfl, 6.0, 0.0, 0.0), Mode::Gfl);
        assert_eq!(decide_switch(&t, Mode::Gfl, 3.1, 0.0, 0.0), Mode::Gfm);
        assert_eq!(decide_switch(&SwitchPolicy::None, Mode::Gfm, 1.0, 0.0, 9.0), Mode::Gfm);
    }

    fn dummy_mode_csi() -> ModeCsi {
        use crate::csi::Span;
        use crate::sssr::Axis;
        let axes = vec![Axis::new("scr", 0.0, 1.0), Axis::new("x_over_r", 0.0, 1.0)];
        let verts = vec![vec![0.0, 0.5], vec![1.0, 0.5], vec![0.5, 0.0], vec![0.5, 1.0]];
        let region =
            Region::from_parts(axes, vec![0.5, 0.5], verts, vec![vec![0, 2], vec![1, 2], vec![0, 3], vec![1, 3]]).unwrap();
        let model = GmmModel::new(&[1.0], &[vec![0.0, 0.0, 0.0]], &[vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]]).unwrap();
        let s = Span { min: 0.0, max: 1.0 };
        let context = CsiContext {
            axes: vec!["scr".into(), "x_over_r".into()],
            weights: CsiWeights::default(),
            margin: s,
            sensitivity: s,
            distance: s,
        };
        ModeCsi { region, model, context }
    }

    #[test]
    fn linear_response_closed_form() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let r = step_response(&a, &b, &[1.0], 1000, 1e-3).unwrap();
        for (k, x) in r.iter().enumerate() {
            let t = k as f64 * 1e-3;
            assert!((x[0] - (1.0 - (-t).exp())).abs() < 1e-9);
        }
        let z = step_response(&a, &b, &[0.0], 10, 1e-3).unwrap();
        assert!(z.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 3.5], &[2.5, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        let n = 1000;
        let s: Vec<f64> = (0..n).map(|k| (std::f64::consts::TAU * k as f64 / n as f64).sin() * 2.0).collect();
        assert!((rmse(&s, &vec![0.0; n]).unwrap() - 2.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(rmse(&[1.0], &[]).is_err());
    }

    #[test]
    fn scenario_parsing() {
        let s = Scenario::preset("fig11").unwrap();
        assert_eq!(s.events.len(), 3);
        assert_eq!(s.initial_mode, Mode::Gfl);
        assert_eq!(s.threshold, Some(3.0));
        for name in Scenario::preset_names() {
            Scenario::preset(name).unwrap();
        }
        let bad = "duration = 1.0\ninitial_mode = \"gfl\"\n[[event]]\ntime = 0.5\nkey = \"scrr\"\nvalue = 1.0\n";
        assert!(matches!(Scenario::parse(bad), Err(Error::Config(m)) if m.contains("scrr")));
        let order = "duration = 1.0\ninitial_mode = \"gfl\"\n[[event]]\ntime = 0.5\nkey = \"scr\"\nvalue = 1.0\n[[event]]\ntime = 0.5\nkey = \"scr\"\nvalue = 2.0\n";
        assert!(Scenario::parse(order).is_err());
        let late = "duration = 1.0\ninitial_mode = \"gfm\"\n[[event]]\ntime = 1.5\nkey = \"step_p_ref\"\nvalue = 0.1\n";
        assert!(Scenario::parse(late).is_err());
    }

    #[test]
    fn transfer_preserves_references() {
        let plant = Plant::default().with("scr", 3.1).unwrap();
        let eq = solve_equilibrium(Mode::Gfl, &plant, None).unwrap();
        let mut x = eq.state.to_vec();
        // mid-transient: nudge currents and voltages
        x[6] += 0.03;
        x[9] -= 0.02;
        x[11] += 0.01;
        let before = transfer_signals(&plant, Mode::Gfl, &x);
        let y = bumpless_transfer(&plant, Mode::Gfl, &x, Mode::Gfm).unwrap();
        let after = transfer_signals(&plant, Mode::Gfm, &y);
        assert!((after.e_d_ref - before.e_d_ref).abs() < 1e-10);
        assert!((after.e_q_ref - before.e_q_ref).abs() < 1e-10);
        assert!((after.i_ld_ref - before.i_ld_ref).abs() < 1e-10);
        assert_eq!(after.p, before.p);
        assert!((after.omega - before.omega).abs() < 1e-12);
        let z = bumpless_transfer(&plant, Mode::Gfm, &y, Mode::Gfl).unwrap();
        for i in 0..12 {
            assert!((z[i] - x[i]).abs() < 1e-10, "state {i}: {} vs {}", z[i], x[i]);
        }
    }

    #[test]
    fn zero_integral_gain_with_mismatch_fails() {
        let plant = Plant::default();
        let eq = solve_equilibrium(Mode::Gfl, &plant, None).unwrap();
        let mut x = eq.state.to_vec();
        x[6] += 0.05;
        let bad = plant.with("ki_o2", 0.0).unwrap();
        assert!(matches!(bumpless_transfer(&bad, Mode::Gfl, &x, Mode::Gfm), Err(Error::TransferSolve(_))));
    }
}

//! Iterative compensation: fly a period, estimate the disturbance, train a
//! predictor on what is left, stack it onto the command, repeat.

use std::time::Duration;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::actuation::{actuate, pid_term, FallbackConfig, FieldModel, PidGains, PidState};
use crate::disturbance::{
    estimate_from_telemetry, virtual_residual, DisturbanceModel, DisturbanceSeries, SeriesKind,
};
use crate::error::{Error, Result};
use crate::gru::{train, TrainConfig, TrainedModel, TrainingLog};
use crate::rng::{derive_seed, Stream};
use crate::sim::{attitude_error, step_rk4, AttitudeState, InertiaTensor, RotationMatrix};

/// Plant, controller and environment of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub inertia: InertiaTensor,
    pub gains: PidGains,
    pub integral_clamp: f64,
    pub field: FieldModel,
    pub fallback: FallbackConfig,
    pub disturbance: DisturbanceModel,
    /// Initial Z-Y-X Euler error `(φ, θ, ψ)`, rad.
    pub initial_euler: Vector3<f64>,
    /// rad/s
    pub initial_rate: Vector3<f64>,
    /// Control and telemetry cadence, s.
    pub control_dt: f64,
    /// Integrator steps per control interval.
    pub substeps: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            inertia: InertiaTensor::diagonal(120.0, 100.0, 90.0).expect("valid inertia"),
            gains: PidGains::default(),
            integral_clamp: 10.0,
            field: FieldModel::default(),
            fallback: FallbackConfig::default(),
            disturbance: DisturbanceModel::default(),
            initial_euler: Vector3::new(1e-4, -1e-4, 1e-4),
            initial_rate: Vector3::zeros(),
            control_dt: 1.0,
            substeps: 10,
        }
    }
}

impl Scenario {
    pub fn initial_state(&self) -> AttitudeState {
        let e = self.initial_euler;
        AttitudeState {
            rotation: RotationMatrix::from_euler_zyx(e.x, e.y, e.z),
            omega: self.initial_rate,
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// Each correction is generated for the whole period ahead from the end
    /// of the previous period's series.
    Rollout,
    /// Each correction is a one-step prediction from the latest estimates.
    Conditioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    FixedN,
    /// Stop once the mean attitude RMSE improves by less than `tol` (relative).
    RmsePlateau {
        tol: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IterationConfig {
    /// Seconds per iteration.
    pub period: f64,
    pub iterations: usize,
    pub prediction_mode: PredictionMode,
    pub stop_rule: StopRule,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            period: 5400.0,
            iterations: 4,
            prediction_mode: PredictionMode::Conditioned,
            stop_rule: StopRule::FixedN,
        }
    }
}

impl IterationConfig {
    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(self.period >= 100.0 * dt) {
            return Err(Error::Validation(
                "iterations.period must be >= 100 control steps".into(),
            ));
        }
        let steps = self.period / dt;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Validation(
                "iterations.period must be a whole number of control steps".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::Validation(
                "iterations.iterations must be >= 1".into(),
            ));
        }
        if let StopRule::RmsePlateau { tol } = self.stop_rule {
            if !(tol >= 0.0 && tol.is_finite()) {
                return Err(Error::Validation("stop_rule tol must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn steps(&self, dt: f64) -> usize {
        (self.period / dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackEntry {
    pub model: TrainedModel,
    /// Last samples of the series this correction is applied to, used to
    /// start a rollout.
    pub seed_window: Vec<Vector3<f64>>,
}

/// Trained corrections `Δ₁ … Δ_k` in the order they were learned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectionStack {
    pub entries: Vec<StackEntry>,
}

impl CorrectionStack {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Point every seed window at the end of the matching level of `record`:
    /// entry `j` is fed `d̂ − Σ_{m<j} Δ_m`.
    pub fn refresh_seeds(&mut self, record: &IterationRecord) {
        for j in 0..self.entries.len() {
            let w = self.entries[j].model.window;
            let n = record.len();
            self.entries[j].seed_window = (n - w..n).map(|i| record.level(j, i)).collect();
        }
    }
}

/// Controller memory carried from one iteration into the next.
#[derive(Debug, Clone)]
pub struct LoopState {
    pub attitude: AttitudeState,
    pub pid: PidState,
    /// Global control-step index of `attitude`.
    pub step: usize,
    omegas: Vec<Vector3<f64>>,
    taus: Vec<Vector3<f64>>,
    /// Real-time estimates `d̂(t_g)`, available up to the previous step.
    estimates: Vec<Vector3<f64>>,
    /// `applied[j][g]`: correction `j` applied at step `g` (zero before it existed).
    applied: Vec<Vec<Vector3<f64>>>,
}

impl LoopState {
    pub fn new(scenario: &Scenario) -> Self {
        LoopState {
            attitude: scenario.initial_state(),
            pid: PidState::new(scenario.integral_clamp),
            step: 0,
            omegas: Vec::new(),
            taus: Vec::new(),
            estimates: Vec::new(),
            applied: Vec::new(),
        }
    }

    /// Interior-stencil estimate at step `g − 1`, once step `g` is known.
    fn update_estimate(&mut self, inertia: &InertiaTensor, dt: f64) {
        let g = self.omegas.len() - 1;
        if g == 0 {
            return;
        }
        if g == 1 {
            // no sample before the first one; never read by a window
            self.estimates.push(Vector3::zeros());
            return;
        }
        let i = inertia.matrix();
        let w = self.omegas[g - 1];
        let w_dot = (self.omegas[g] - self.omegas[g - 2]) / (2.0 * dt);
        let tau = (self.taus[g - 2] + self.taus[g - 1]) / 2.0;
        self.estimates.push(i * w_dot + w.cross(&(i * w)) - tau);
    }

    /// `d̂ − Σ_{m<j} Δ_m` over the `len` steps ending just before `g`.
    fn level_history(&self, j: usize, g: usize, len: usize) -> Vec<Vector3<f64>> {
        (g - len..g)
            .map(|h| (0..j).fold(self.estimates[h], |acc, m| acc - self.applied[m][h]))
            .collect()
    }
}

/// Everything recorded while flying one period.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub index: usize,
    /// State at the start of each control step.
    pub states: Vec<AttitudeState>,
    pub u_pid: Vec<Vector3<f64>>,
    /// `corrections[j][i]`: output of correction `j` at step `i`.
    pub corrections: Vec<Vec<Vector3<f64>>>,
    /// Command handed to the actuators, `u_pid − Σ Δ`.
    pub u_cmd: Vec<Vector3<f64>>,
    pub tau: Vec<Vector3<f64>>,
    pub thruster: Vec<bool>,
    pub d_true: DisturbanceSeries,
    /// Total disturbance estimated from this period's telemetry.
    pub d_estimated: DisturbanceSeries,
    /// `d̂ − Σ Δ`: what remains for the next correction to learn.
    pub d_virtual: DisturbanceSeries,
    pub training: Option<TrainingLog>,
}

impl IterationRecord {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn correction_total(&self, i: usize) -> Vector3<f64> {
        self.corrections
            .iter()
            .fold(Vector3::zeros(), |acc, c| acc + c[i])
    }

    /// `d̂ − Σ_{m<j} Δ_m` at step `i`.
    pub fn level(&self, j: usize, i: usize) -> Vector3<f64> {
        (0..j).fold(self.d_estimated.samples[i], |acc, m| {
            acc - self.corrections[m][i]
        })
    }

    pub fn euler(&self) -> Vec<Vector3<f64>> {
        self.states
            .iter()
            .map(|s| attitude_error(s).euler)
            .collect()
    }

    pub fn rates(&self) -> Vec<Vector3<f64>> {
        self.states.iter().map(|s| s.omega).collect()
    }

    /// Fraction of steps on thrusters.
    pub fn thruster_duty(&self) -> f64 {
        self.thruster.iter().filter(|&&t| t).count() as f64 / self.len().max(1) as f64
    }
}

/// Fly iteration `k` with the corrections in `stack`, continuing from `carry`.
///
/// `truth` is the ground-truth series on the global control grid; the plant
/// receives each sample held over its control interval.
pub fn run_iteration(
    k: usize,
    stack: &CorrectionStack,
    scenario: &Scenario,
    cfg: &IterationConfig,
    truth: &DisturbanceSeries,
    carry: &mut LoopState,
) -> Result<IterationRecord> {
    let dt = scenario.control_dt;
    let n = cfg.steps(dt);
    let t0 = carry.step as f64 * dt;
    let rollouts: Vec<Option<DisturbanceSeries>> = stack
        .entries
        .iter()
        .map(|e| {
            (cfg.prediction_mode == PredictionMode::Rollout)
                .then(|| e.model.predict_series(&e.seed_window, n, dt, t0))
        })
        .collect();
    fly(
        k,
        stack.len(),
        scenario,
        cfg,
        truth,
        carry,
        |j, i, g, state| match &rollouts[j] {
            Some(series) => series.samples[i],
            None => {
                let model = &stack.entries[j].model;
                model.predict_next(&state.level_history(j, g, model.window))
            }
        },
    )
}

/// [`run_iteration`] with corrections read from fixed series on the global grid.
pub fn run_iteration_with_series(
    k: usize,
    corrections: &[DisturbanceSeries],
    scenario: &Scenario,
    cfg: &IterationConfig,
    truth: &DisturbanceSeries,
    carry: &mut LoopState,
) -> Result<IterationRecord> {
    for c in corrections {
        if c.len() < carry.step + cfg.steps(scenario.control_dt) {
            return Err(Error::GridMismatch("correction series too short".into()));
        }
    }
    fly(
        k,
        corrections.len(),
        scenario,
        cfg,
        truth,
        carry,
        |j, _, g, _| corrections[j].samples[g],
    )
}

fn fly<F>(
    k: usize,
    n_corrections: usize,
    scenario: &Scenario,
    cfg: &IterationConfig,
    truth: &DisturbanceSeries,
    carry: &mut LoopState,
    mut correction: F,
) -> Result<IterationRecord>
where
    F: FnMut(usize, usize, usize, &LoopState) -> Vector3<f64>,
{
    let dt = scenario.control_dt;
    let n = cfg.steps(dt);
    let g0 = carry.step;
    if truth.len() < g0 + n {
        return Err(Error::InsufficientData {
            needed: g0 + n,
            got: truth.len(),
        });
    }
    let h = dt / scenario.substeps as f64;
    while carry.applied.len() < n_corrections {
        carry.applied.push(vec![Vector3::zeros(); g0]);
    }

    let mut rec = IterationRecord {
        index: k,
        states: Vec::with_capacity(n),
        u_pid: Vec::with_capacity(n),
        corrections: vec![Vec::with_capacity(n); n_corrections],
        u_cmd: Vec::with_capacity(n),
        tau: Vec::with_capacity(n),
        thruster: Vec::with_capacity(n),
        d_true: truth.slice(g0, g0 + n),
        d_estimated: DisturbanceSeries::zeros(0, dt, 0.0, SeriesKind::Estimated),
        d_virtual: DisturbanceSeries::zeros(0, dt, 0.0, SeriesKind::Virtual),
        training: None,
    };

    for i in 0..n {
        let g = g0 + i;
        let t = g as f64 * dt;
        let state = carry.attitude;
        carry.omegas.push(state.omega);
        carry.update_estimate(&scenario.inertia, dt);

        let (u_pid, pid) = pid_term(&attitude_error(&state), &carry.pid, &scenario.gains, dt);
        carry.pid = pid;

        let mut u_cmd = u_pid;
        for j in 0..n_corrections {
            let delta = correction(j, i, g, carry);
            carry.applied[j].push(delta);
            rec.corrections[j].push(delta);
            u_cmd -= delta;
        }

        let out = actuate(&u_cmd, &scenario.field.field_at(t), &scenario.fallback);
        carry.taus.push(out.tau);
        rec.states.push(state);
        rec.u_pid.push(u_pid);
        rec.u_cmd.push(u_cmd);
        rec.tau.push(out.tau);
        rec.thruster.push(out.thruster_active);

        let d = truth.samples[g];
        let mut next = state;
        for _ in 0..scenario.substeps {
            next = step_rk4(&next, &scenario.inertia, &out.tau, &d, h);
        }
        next.time = (g + 1) as f64 * dt;
        carry.attitude = next;
        carry.step = g + 1;
    }

    rec.d_estimated = estimate_from_telemetry(&rec.states, &rec.tau, &scenario.inertia)?;
    let total = DisturbanceSeries::new(
        (0..n).map(|i| rec.correction_total(i)).collect(),
        dt,
        rec.d_estimated.t0,
        SeriesKind::Predicted,
    );
    rec.d_virtual = virtual_residual(&rec.d_estimated, &total)?;
    Ok(rec)
}

/// Mean over φ, θ, ψ of the per-axis attitude RMSE.
pub fn mean_attitude_rmse(record: &IterationRecord) -> f64 {
    let euler = record.euler();
    let n = euler.len().max(1) as f64;
    let ms = euler
        .iter()
        .fold(Vector3::zeros(), |acc, e| acc + e.component_mul(e))
        / n;
    ms.map(f64::sqrt).mean()
}

/// Result of a campaign; `error` is set when it was cut short.
#[derive(Debug)]
pub struct CampaignOutcome {
    pub records: Vec<IterationRecord>,
    pub stack: CorrectionStack,
    pub truth: DisturbanceSeries,
    pub stopped_early: bool,
    pub error: Option<Error>,
}

/// Per-iteration training seed.
pub fn training_seed(master: u64, iteration: usize) -> u64 {
    derive_seed(master, Stream::Training, &[iteration as u64])
}

pub fn run_campaign(
    scenario: &Scenario,
    cfg: &IterationConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> CampaignOutcome {
    run_campaign_with(scenario, cfg, |k, series| {
        let cfg = TrainConfig {
            seed: training_seed(seed, k),
            ..*train_cfg
        };
        train(series, &cfg)
    })
}

/// [`run_campaign`] with a caller-supplied trainer `(iteration, virtual series)`.
pub fn run_campaign_with<F>(
    scenario: &Scenario,
    cfg: &IterationConfig,
    mut trainer: F,
) -> CampaignOutcome
where
    F: FnMut(usize, &DisturbanceSeries) -> Result<(TrainedModel, TrainingLog)>,
{
    let dt = scenario.control_dt;
    let n = cfg.steps(dt);
    let truth = scenario
        .disturbance
        .synthesize(n as f64 * dt * cfg.iterations as f64, dt);
    let mut outcome = CampaignOutcome {
        records: Vec::new(),
        stack: CorrectionStack::default(),
        truth,
        stopped_early: false,
        error: None,
    };
    let mut carry = LoopState::new(scenario);
    for k in 0..cfg.iterations {
        let mut record =
            match run_iteration(k, &outcome.stack, scenario, cfg, &outcome.truth, &mut carry) {
                Ok(r) => r,
                Err(e) => {
                    outcome.error = Some(e);
                    return outcome;
                }
            };
        let trained = trainer(k, &record.d_virtual);
        let (model, log) = match trained {
            Ok(x) => x,
            Err(e) => {
                outcome.records.push(record);
                outcome.error = Some(e);
                return outcome;
            }
        };
        let loss = log.final_loss();
        record.training = Some(log);
        if !loss.is_finite() || !model.net.is_finite() {
            outcome.records.push(record);
            outcome.error = Some(Error::TrainingDiverged { iteration: k, loss });
            return outcome;
        }
        outcome.stack.entries.push(StackEntry {
            model,
            seed_window: Vec::new(),
        });
        outcome.stack.refresh_seeds(&record);

        let plateau = match (cfg.stop_rule, outcome.records.last()) {
            (StopRule::RmsePlateau { tol }, Some(prev)) => {
                let before = mean_attitude_rmse(prev);
                let now = mean_attitude_rmse(&record);
                !(before - now > tol * before)
            }
            _ => false,
        };
        outcome.records.push(record);
        if plateau && k + 1 < cfg.iterations {
            outcome.stopped_early = true;
            break;
        }
    }
    outcome
}

/// Training time summed over restarts, per iteration.
pub fn training_times(records: &[IterationRecord]) -> Vec<Duration> {
    records
        .iter()
        .map(|r| r.training.as_ref().map_or(Duration::ZERO, |l| l.wall_time))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::GruNetwork;
    use crate::gru::Normalization;

    fn short(period: f64, iterations: usize) -> IterationConfig {
        IterationConfig {
            period,
            iterations,
            ..IterationConfig::default()
        }
    }

    fn rmse_of(record: &IterationRecord) -> f64 {
        mean_attitude_rmse(record)
    }

    #[test]
    fn empty_stack_is_plain_pid() {
        let sc = Scenario::default();
        let cfg = short(300.0, 1);
        let truth = sc.disturbance.synthesize(300.0, 1.0);
        let mut carry = LoopState::new(&sc);
        let rec = run_iteration(
            0,
            &CorrectionStack::default(),
            &sc,
            &cfg,
            &truth,
            &mut carry,
        )
        .unwrap();
        assert!(rec.corrections.is_empty());
        assert_eq!(rec.u_cmd, rec.u_pid);
        assert_eq!(rec.len(), 300);
        assert_eq!(rec.d_virtual.samples, rec.d_estimated.samples);
        assert_eq!(carry.step, 300);
        assert!((carry.attitude.time - 300.0).abs() < 1e-12);
    }

    #[test]
    fn zero_corrections_reproduce_baseline_bitwise() {
        let sc = Scenario::default();
        let cfg = short(400.0, 1);
        let truth = sc.disturbance.synthesize(400.0, 1.0);
        let mut a = LoopState::new(&sc);
        let base =
            run_iteration(0, &CorrectionStack::default(), &sc, &cfg, &truth, &mut a).unwrap();
        let zeros = vec![DisturbanceSeries::zeros(400, 1.0, 0.0, SeriesKind::Predicted); 2];
        let mut b = LoopState::new(&sc);
        let rec = run_iteration_with_series(0, &zeros, &sc, &cfg, &truth, &mut b).unwrap();
        assert_eq!(base.states, rec.states);
        assert_eq!(base.tau, rec.tau);
    }

    #[test]
    fn command_is_pid_minus_stacked_corrections() {
        let sc = Scenario::default();
        let cfg = short(200.0, 1);
        let truth = sc.disturbance.synthesize(200.0, 1.0);
        let c1 = sc.disturbance.synthesize(200.0, 1.0);
        let c2 = DisturbanceSeries::new(
            c1.samples.iter().map(|v| v * -0.3).collect(),
            1.0,
            0.0,
            SeriesKind::Predicted,
        );
        let mut carry = LoopState::new(&sc);
        let rec =
            run_iteration_with_series(0, &[c1.clone(), c2.clone()], &sc, &cfg, &truth, &mut carry)
                .unwrap();
        for i in 0..rec.len() {
            assert_eq!(rec.u_cmd[i], rec.u_pid[i] - c1.samples[i] - c2.samples[i]);
        }
        // telescoping: virtual + corrections = estimate
        for i in 0..rec.len() {
            let back = rec.d_virtual.samples[i] + rec.correction_total(i);
            assert!((back - rec.d_estimated.samples[i]).amax() < 1e-18);
        }
    }

    #[test]
    fn splicing_periods_matches_one_long_run() {
        let sc = Scenario {
            disturbance: DisturbanceModel::null(0),
            initial_euler: Vector3::new(2e-3, -1e-3, 3e-3),
            ..Scenario::default()
        };
        let truth = sc.disturbance.synthesize(1000.0, 1.0);
        let empty = CorrectionStack::default();
        let mut long_carry = LoopState::new(&sc);
        let long =
            run_iteration(0, &empty, &sc, &short(1000.0, 1), &truth, &mut long_carry).unwrap();
        let mut carry = LoopState::new(&sc);
        let half = short(500.0, 2);
        let a = run_iteration(0, &empty, &sc, &half, &truth, &mut carry).unwrap();
        let b = run_iteration(1, &empty, &sc, &half, &truth, &mut carry).unwrap();
        let long_euler = long.euler();
        for (i, e) in a.euler().iter().chain(b.euler().iter()).enumerate() {
            assert!((e - long_euler[i]).amax() <= 1e-12);
        }
    }

    #[test]
    fn oracle_correction_removes_estimated_disturbance() {
        let sc = Scenario::default();
        let cfg = short(3000.0, 1);
        let truth = sc.disturbance.synthesize(3000.0, 1.0);
        let mut a = LoopState::new(&sc);
        let plain =
            run_iteration(0, &CorrectionStack::default(), &sc, &cfg, &truth, &mut a).unwrap();
        let mut b = LoopState::new(&sc);
        let oracle =
            run_iteration_with_series(0, std::slice::from_ref(&truth), &sc, &cfg, &truth, &mut b).unwrap();
        let rms = |s: &DisturbanceSeries| {
            (s.samples.iter().map(|v| v.norm_squared()).sum::<f64>() / s.len() as f64).sqrt()
        };
        assert!(rms(&oracle.d_virtual) < 0.05 * rms(&plain.d_virtual));
        assert!(rmse_of(&oracle) < 0.5 * rmse_of(&plain));
    }

    #[test]
    fn telescoping_recovers_ground_truth() {
        // band-limited: white noise is not recoverable sample by sample
        let sc = Scenario {
            disturbance: DisturbanceModel {
                noise_sigma: 0.0,
                ..DisturbanceModel::default()
            },
            ..Scenario::default()
        };
        let cfg = short(2000.0, 1);
        let truth = sc.disturbance.synthesize(2000.0, 1.0);
        let corr = DisturbanceSeries::new(
            truth.samples.iter().map(|v| v * 0.6).collect(),
            1.0,
            0.0,
            SeriesKind::Predicted,
        );
        let mut carry = LoopState::new(&sc);
        let rec = run_iteration_with_series(0, &[corr], &sc, &cfg, &truth, &mut carry).unwrap();
        for axis in 0..3 {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..rec.len() {
                let rebuilt = rec.d_virtual.samples[i][axis] + rec.correction_total(i)[axis];
                num += (rebuilt - truth.samples[i][axis]).powi(2);
                den += truth.samples[i][axis].powi(2);
            }
            assert!((num / den).sqrt() < 0.01);
        }
    }

    fn mean_model() -> (TrainedModel, TrainingLog) {
        let model = TrainedModel {
            net: GruNetwork::zeros(3, 2, 1, 3),
            norm: Normalization::identity(),
            window: 5,
        };
        let log = TrainingLog {
            restarts: vec![crate::gru::RestartLog {
                epoch_losses: vec![0.0],
                epochs_run: 1,
                best_loss: 0.0,
                final_loss: 0.0,
                wall_time: Duration::ZERO,
            }],
            selected: 0,
            wall_time: Duration::ZERO,
        };
        (model, log)
    }

    #[test]
    fn single_iteration_campaign() {
        let sc = Scenario::default();
        let mut calls = 0;
        let out = run_campaign_with(&sc, &short(200.0, 1), |_, _| {
            calls += 1;
            Ok(mean_model())
        });
        assert!(out.error.is_none());
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.stack.len(), 1);
        assert_eq!(calls, 1);
        assert!(out.records[0].corrections.is_empty());
        assert_eq!(out.truth.len(), 200);
    }

    #[test]
    fn zero_models_leave_the_trajectory_unchanged() {
        let sc = Scenario::default();
        let cfg = short(200.0, 3);
        let out = run_campaign_with(&sc, &cfg, |_, _| Ok(mean_model()));
        let reference = {
            let mut carry = LoopState::new(&sc);
            (0..3)
                .map(|k| {
                    run_iteration(
                        k,
                        &CorrectionStack::default(),
                        &sc,
                        &cfg,
                        &out.truth,
                        &mut carry,
                    )
                    .unwrap()
                })
                .collect::<Vec<_>>()
        };
        for (a, b) in out.records.iter().zip(&reference) {
            assert_eq!(a.states, b.states);
            assert_eq!(a.corrections.len(), a.index);
        }
        let rollout = IterationConfig {
            prediction_mode: PredictionMode::Rollout,
            ..cfg
        };
        let out = run_campaign_with(&sc, &rollout, |_, _| Ok(mean_model()));
        assert_eq!(out.records[2].states, reference[2].states);
    }

    #[test]
    fn diverged_training_aborts_with_partial_records() {
        let sc = Scenario::default();
        let out = run_campaign_with(&sc, &short(200.0, 3), |k, _| {
            let (m, mut log) = mean_model();
            if k == 1 {
                log.restarts[0].final_loss = f64::NAN;
            }
            Ok((m, log))
        });
        assert!(matches!(
            out.error,
            Some(Error::TrainingDiverged { iteration: 1, .. })
        ));
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.stack.len(), 1);
    }

    #[test]
    fn plateau_rule_stops_early() {
        let sc = Scenario {
            disturbance: DisturbanceModel::null(0),
            initial_euler: Vector3::zeros(),
            ..Scenario::default()
        };
        let cfg = IterationConfig {
            stop_rule: StopRule::RmsePlateau { tol: 0.01 },
            ..short(200.0, 4)
        };
        let out = run_campaign_with(&sc, &cfg, |_, _| Ok(mean_model()));
        // a perfectly still spacecraft never improves
        assert!(out.stopped_early);
        assert_eq!(out.records.len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(IterationConfig::default().validate(1.0).is_ok());
        assert!(short(50.0, 1).validate(1.0).is_err());
        assert!(short(5400.5, 1).validate(1.0).is_err());
        assert!(short(5400.0, 0).validate(1.0).is_err());
    }
}

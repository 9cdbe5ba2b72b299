//! Disturbance torque series: synthetic ground truth, estimation from
//! attitude telemetry, and virtual residuals after stacked corrections.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::Vector3;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::sim::{AttitudeState, InertiaTensor};

/// Maximum deviation of a telemetry timestamp from the uniform grid, seconds.
pub const GRID_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    GroundTruth,
    Estimated,
    Virtual,
    Predicted,
}

impl fmt::Display for SeriesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeriesKind::GroundTruth => "ground_truth",
            SeriesKind::Estimated => "estimated",
            SeriesKind::Virtual => "virtual",
            SeriesKind::Predicted => "predicted",
        })
    }
}

impl FromStr for SeriesKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground_truth" => Ok(SeriesKind::GroundTruth),
            "estimated" => Ok(SeriesKind::Estimated),
            "virtual" => Ok(SeriesKind::Virtual),
            "predicted" => Ok(SeriesKind::Predicted),
            other => Err(Error::Parse {
                path: "series kind".into(),
                message: format!("unknown kind `{other}`"),
            }),
        }
    }
}

/// Uniformly sampled 3-axis torque series, N·m.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSeries {
    pub samples: Vec<Vector3<f64>>,
    pub dt: f64,
    pub t0: f64,
    pub kind: SeriesKind,
}

impl DisturbanceSeries {
    pub fn new(samples: Vec<Vector3<f64>>, dt: f64, t0: f64, kind: SeriesKind) -> Self {
        DisturbanceSeries {
            samples,
            dt,
            t0,
            kind,
        }
    }

    pub fn zeros(len: usize, dt: f64, t0: f64, kind: SeriesKind) -> Self {
        Self::new(vec![Vector3::zeros(); len], dt, t0, kind)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.dt
    }

    /// Sub-series `[start, end)` with its own start time.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self::new(
            self.samples[start..end].to_vec(),
            self.dt,
            self.time(start),
            self.kind,
        )
    }

    pub fn with_kind(mut self, kind: SeriesKind) -> Self {
        self.kind = kind;
        self
    }

    fn check_aligned(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::GridMismatch(format!(
                "lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        if (self.dt - other.dt).abs() > GRID_TOLERANCE
            || (self.t0 - other.t0).abs() > GRID_TOLERANCE
        {
            return Err(Error::GridMismatch(format!(
                "grids (t0 = {}, dt = {}) and (t0 = {}, dt = {})",
                self.t0, self.dt, other.t0, other.dt
            )));
        }
        Ok(())
    }

    /// Element-wise sum of two aligned series.
    pub fn plus(&self, other: &Self) -> Result<Self> {
        self.check_aligned(other)?;
        Ok(Self::new(
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            self.dt,
            self.t0,
            self.kind,
        ))
    }

    /// CSV with header `t,dx,dy,dz,kind`; values printed with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "dx", "dy", "dz", "kind"])?;
        let kind = self.kind.to_string();
        for (i, d) in self.samples.iter().enumerate() {
            w.write_record([
                fmt_f64(self.time(i)),
                fmt_f64(d.x),
                fmt_f64(d.y),
                fmt_f64(d.z),
                kind.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut times = Vec::new();
        let mut samples = Vec::new();
        let mut kind = None;
        for record in r.records() {
            let record = record?;
            let field = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        path: "disturbance csv".into(),
                        message: format!("bad number in column {i}"),
                    })
            };
            times.push(field(0)?);
            samples.push(Vector3::new(field(1)?, field(2)?, field(3)?));
            kind = Some(record.get(4).unwrap_or("").parse()?);
        }
        let t0 = times.first().copied().unwrap_or(0.0);
        let dt = if times.len() > 1 {
            times[1] - times[0]
        } else {
            1.0
        };
        Ok(Self::new(
            samples,
            dt,
            t0,
            kind.unwrap_or(SeriesKind::GroundTruth),
        ))
    }
}

/// Shortest round-trippable decimal with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One sinusoidal component `A·sin(2πft + φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    /// N·m
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
    /// rad
    #[serde(default)]
    pub phase: f64,
}

/// Per-axis sum of sinusoids, linear drift and white Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceModel {
    pub x: Vec<Harmonic>,
    pub y: Vec<Harmonic>,
    pub z: Vec<Harmonic>,
    /// N·m/s per axis.
    pub drift: [f64; 3],
    /// N·m
    pub noise_sigma: f64,
    /// Master seed; the noise is drawn from its dedicated sub-stream.
    #[serde(skip)]
    pub seed: u64,
}

const ORBIT: f64 = 5400.0;

impl Default for DisturbanceModel {
    /// Once- and twice-per-orbit harmonics on every axis, ~1e-4 N·m.
    fn default() -> Self {
        let pair = |a1: f64, p1: f64, a2: f64, p2: f64| {
            vec![
                Harmonic {
                    amplitude: a1,
                    frequency: 1.0 / ORBIT,
                    phase: p1,
                },
                Harmonic {
                    amplitude: a2,
                    frequency: 2.0 / ORBIT,
                    phase: p2,
                },
            ]
        };
        DisturbanceModel {
            x: pair(1.0e-4, 0.3, 0.5e-4, 1.1),
            y: pair(0.8e-4, 2.0, 0.6e-4, 0.4),
            z: pair(0.6e-4, 4.0, 0.4e-4, 2.5),
            drift: [1e-9, -1e-9, 1e-9],
            noise_sigma: 1e-6,
            seed: 42,
        }
    }
}

impl DisturbanceModel {
    /// No disturbance at all.
    pub fn null(seed: u64) -> Self {
        DisturbanceModel {
            x: Vec::new(),
            y: Vec::new(),
            z: Vec::new(),
            drift: [0.0; 3],
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, hs) in [("x", &self.x), ("y", &self.y), ("z", &self.z)] {
            for h in hs {
                if !(h.amplitude >= 0.0 && h.amplitude.is_finite()) {
                    return Err(Error::Validation(format!(
                        "disturbance.{axis} amplitude must be >= 0"
                    )));
                }
                if !(h.frequency > 0.0 && h.frequency.is_finite()) {
                    return Err(Error::Validation(format!(
                        "disturbance.{axis} frequency must be > 0"
                    )));
                }
                if !h.phase.is_finite() {
                    return Err(Error::Validation(format!(
                        "disturbance.{axis} phase must be finite"
                    )));
                }
            }
        }
        if !self.drift.iter().all(|d| d.is_finite()) {
            return Err(Error::Validation("disturbance.drift must be finite".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Validation(
                "disturbance.noise_sigma must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Deterministic part (harmonics + drift) at time `t`.
    pub fn deterministic(&self, t: f64) -> Vector3<f64> {
        let axis = |hs: &[Harmonic], drift: f64| {
            hs.iter()
                .map(|h| h.amplitude * (2.0 * PI * h.frequency * t + h.phase).sin())
                .sum::<f64>()
                + drift * t
        };
        Vector3::new(
            axis(&self.x, self.drift[0]),
            axis(&self.y, self.drift[1]),
            axis(&self.z, self.drift[2]),
        )
    }

    /// Ground-truth series on `t = 0, dt, …` covering `[0, horizon)`.
    pub fn synthesize(&self, horizon: f64, dt: f64) -> DisturbanceSeries {
        debug_assert!(horizon >= dt && dt > 0.0);
        let n = (horizon / dt).round() as usize;
        let mut rng = stream_rng(self.seed, Stream::DisturbanceNoise, &[]);
        let noise = (self.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, self.noise_sigma).expect("sigma validated"));
        let samples = (0..n)
            .map(|i| {
                let mut d = self.deterministic(i as f64 * dt);
                if let Some(normal) = &noise {
                    d += Vector3::from_fn(|_, _| normal.sample(&mut rng));
                }
                d
            })
            .collect();
        DisturbanceSeries::new(samples, dt, 0.0, SeriesKind::GroundTruth)
    }
}

/// Invert the rigid-body dynamics on sampled telemetry:
/// `d̂ = I·ω̇ + ω × (I·ω) − τ̄`.
///
/// `taus[i]` is the torque held over `[t_i, t_{i+1})`. `ω̇` uses central
/// differences (second-order one-sided at the ends) and `τ̄` is the same
/// stencil applied to the accumulated torque impulse, so a held torque that
/// switches at a sample instant is not mistaken for a disturbance.
pub fn estimate_from_telemetry(
    states: &[AttitudeState],
    taus: &[Vector3<f64>],
    inertia: &InertiaTensor,
) -> Result<DisturbanceSeries> {
    let n = states.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    if taus.len() != n {
        return Err(Error::GridMismatch(format!(
            "{} states but {} torques",
            n,
            taus.len()
        )));
    }
    let t0 = states[0].time;
    let h = states[1].time - t0;
    if !(h > 0.0) {
        return Err(Error::NonUniformSampling {
            index: 1,
            expected: t0,
            actual: states[1].time,
        });
    }
    for (i, s) in states.iter().enumerate() {
        let expected = t0 + i as f64 * h;
        if (s.time - expected).abs() > GRID_TOLERANCE {
            return Err(Error::NonUniformSampling {
                index: i,
                expected,
                actual: s.time,
            });
        }
    }

    let w = |i: usize| states[i].omega;
    let samples = (0..n)
        .map(|i| {
            let (w_dot, tau_bar) = if i == 0 {
                (
                    (w(1) * 4.0 - w(0) * 3.0 - w(2)) / (2.0 * h),
                    (taus[0] * 3.0 - taus[1]) / 2.0,
                )
            } else if i == n - 1 {
                (
                    (w(n - 1) * 3.0 - w(n - 2) * 4.0 + w(n - 3)) / (2.0 * h),
                    (taus[n - 2] * 3.0 - taus[n - 3]) / 2.0,
                )
            } else {
                (
                    (w(i + 1) - w(i - 1)) / (2.0 * h),
                    (taus[i - 1] + taus[i]) / 2.0,
                )
            };
            let omega = w(i);
            inertia.matrix() * w_dot + omega.cross(&(inertia.matrix() * omega)) - tau_bar
        })
        .collect();
    Ok(DisturbanceSeries::new(
        samples,
        h,
        t0,
        SeriesKind::Estimated,
    ))
}

/// `d − Δ` on aligned grids.
pub fn virtual_residual(
    ground: &DisturbanceSeries,
    predictions: &DisturbanceSeries,
) -> Result<DisturbanceSeries> {
    ground.check_aligned(predictions)?;
    Ok(DisturbanceSeries::new(
        ground
            .samples
            .iter()
            .zip(&predictions.samples)
            .map(|(d, p)| d - p)
            .collect(),
        ground.dt,
        ground.t0,
        SeriesKind::Virtual,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuation::{actuate, pid_term, FallbackConfig, FieldModel, PidGains, PidState};
    use crate::sim::{attitude_error, step_rk4};
    use proptest::prelude::*;

    fn single(axis: usize, h: Harmonic) -> DisturbanceModel {
        let mut m = DisturbanceModel::null(1);
        match axis {
            0 => m.x.push(h),
            1 => m.y.push(h),
            _ => m.z.push(h),
        }
        m
    }

    /// Closed-loop PID run that records telemetry at 1 s, plant driven by `d`.
    fn closed_loop(
        d: &DisturbanceSeries,
        inertia: &InertiaTensor,
    ) -> (Vec<AttitudeState>, Vec<Vector3<f64>>) {
        let field = FieldModel::default();
        let gains = PidGains::default();
        let fallback = FallbackConfig::default();
        let mut state = AttitudeState::at_rest(0.0);
        let mut pid = PidState::new(10.0);
        let mut states = Vec::new();
        let mut taus = Vec::new();
        for (i, dk) in d.samples.iter().enumerate() {
            let t = i as f64;
            let (u, next) = pid_term(&attitude_error(&state), &pid, &gains, 1.0);
            pid = next;
            let out = actuate(&u, &field.field_at(t), &fallback);
            states.push(state);
            taus.push(out.tau);
            for _ in 0..10 {
                state = step_rk4(&state, inertia, &out.tau, dk, 0.1);
            }
            state.time = t + 1.0;
        }
        (states, taus)
    }

    #[test]
    fn zero_model_gives_zero_series() {
        let s = DisturbanceModel::null(3).synthesize(100.0, 1.0);
        assert_eq!(s.len(), 100);
        assert!(s.samples.iter().all(|d| *d == Vector3::zeros()));
        assert_eq!(s.kind, SeriesKind::GroundTruth);
    }

    #[test]
    fn quarter_period_sample_equals_amplitude() {
        let m = single(
            0,
            Harmonic {
                amplitude: 1e-4,
                frequency: 1.0 / 5400.0,
                phase: 0.0,
            },
        );
        let s = m.synthesize(5400.0, 1.0);
        assert!((s.samples[1350].x - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn noisy_synthesis_is_deterministic() {
        let m = DisturbanceModel {
            noise_sigma: 1e-6,
            ..DisturbanceModel::null(9)
        };
        let a = m.synthesize(500.0, 1.0);
        let b = m.synthesize(500.0, 1.0);
        assert_eq!(a, b);
        assert!(a.samples.iter().any(|d| d.x != 0.0));
    }

    #[test]
    fn constant_spin_estimates_zero() {
        let inertia = InertiaTensor::diagonal(1.0, 1.0, 1.0).unwrap();
        let omega = Vector3::new(0.01, -0.02, 0.03);
        let states: Vec<_> = (0..20)
            .map(|i| AttitudeState {
                omega,
                ..AttitudeState::at_rest(i as f64)
            })
            .collect();
        let taus = vec![Vector3::zeros(); 20];
        let est = estimate_from_telemetry(&states, &taus, &inertia).unwrap();
        assert!(est.samples.iter().all(|d| d.amax() < 1e-9));
        assert_eq!(est.kind, SeriesKind::Estimated);
    }

    #[test]
    fn constant_acceleration_is_exact() {
        let inertia = InertiaTensor::diagonal(120.0, 100.0, 90.0).unwrap();
        let d = Vector3::new(1e-4, 0.0, -5e-5);
        // single-axis motion keeps the gyroscopic term zero
        let states: Vec<_> = (0..5)
            .map(|i| AttitudeState {
                omega: Vector3::new(d.x / 120.0 * i as f64, 0.0, 0.0),
                ..AttitudeState::at_rest(i as f64)
            })
            .collect();
        let taus = vec![Vector3::new(0.0, 0.0, 5e-5); 5];
        let est = estimate_from_telemetry(&states, &taus, &inertia).unwrap();
        for e in &est.samples {
            assert!((e - d).amax() < 1e-15, "{e:?}");
        }
    }

    #[test]
    fn rejects_non_uniform_grid() {
        let inertia = InertiaTensor::diagonal(1.0, 1.0, 1.0).unwrap();
        let mut states: Vec<_> = (0..5).map(|i| AttitudeState::at_rest(i as f64)).collect();
        states[3].time += 1e-6;
        let err = estimate_from_telemetry(&states, &[Vector3::zeros(); 5], &inertia);
        assert!(matches!(
            err,
            Err(Error::NonUniformSampling { index: 3, .. })
        ));
        assert!(matches!(
            estimate_from_telemetry(&states[..2], &[Vector3::zeros(); 2], &inertia),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn round_trip_constant_disturbance() {
        let inertia = InertiaTensor::diagonal(120.0, 100.0, 90.0).unwrap();
        let d = Vector3::new(1e-4, 0.0, -5e-5);
        let series = DisturbanceSeries::new(vec![d; 2000], 1.0, 0.0, SeriesKind::GroundTruth);
        let (states, taus) = closed_loop(&series, &inertia);
        let est = estimate_from_telemetry(&states, &taus, &inertia).unwrap();
        let worst = est
            .samples
            .iter()
            .map(|e| (e - d).amax())
            .fold(0.0, f64::max);
        assert!(worst < 2e-6, "max error {worst:e}");
    }

    #[test]
    fn round_trip_once_per_orbit_sinusoid() {
        let inertia = InertiaTensor::diagonal(120.0, 100.0, 90.0).unwrap();
        let h = |p| Harmonic {
            amplitude: 1e-4,
            frequency: 1.0 / 5400.0,
            phase: p,
        };
        let m = DisturbanceModel {
            x: vec![h(0.0)],
            y: vec![h(1.0)],
            z: vec![h(2.0)],
            ..DisturbanceModel::null(0)
        };
        let truth = m.synthesize(5400.0, 1.0);
        let (states, taus) = closed_loop(&truth, &inertia);
        let est = estimate_from_telemetry(&states, &taus, &inertia).unwrap();
        for axis in 0..3 {
            let (mut num, mut den) = (0.0, 0.0);
            for (e, t) in est.samples.iter().zip(&truth.samples) {
                num += (e[axis] - t[axis]).powi(2);
                den += t[axis].powi(2);
            }
            let rel = (num / den).sqrt();
            assert!(rel < 0.01, "axis {axis}: relative rmse {rel}");
        }
    }

    #[test]
    fn residual_edge_cases() {
        let m = DisturbanceModel::default();
        let g = m.synthesize(50.0, 1.0);
        let zero = DisturbanceSeries::zeros(50, 1.0, 0.0, SeriesKind::Predicted);
        let r = virtual_residual(&g, &zero).unwrap();
        assert_eq!(r.samples, g.samples);
        assert_eq!(r.kind, SeriesKind::Virtual);
        let r = virtual_residual(&g, &g).unwrap();
        assert!(r.samples.iter().all(|d| *d == Vector3::zeros()));

        let short = DisturbanceSeries::zeros(49, 1.0, 0.0, SeriesKind::Predicted);
        assert!(matches!(
            virtual_residual(&g, &short),
            Err(Error::GridMismatch(_))
        ));
        let shifted = DisturbanceSeries::zeros(50, 1.0, 1.0, SeriesKind::Predicted);
        assert!(matches!(
            virtual_residual(&g, &shifted),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let s = DisturbanceModel::default().synthesize(20.0, 1.0);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,dx,dy,dz,kind\n"));
        let back = DisturbanceSeries::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    fn series_strategy(len: usize) -> impl Strategy<Value = DisturbanceSeries> {
        prop::collection::vec(prop::array::uniform3(-1e-3f64..1e-3), len).prop_map(|v| {
            DisturbanceSeries::new(
                v.into_iter().map(Vector3::from).collect(),
                1.0,
                0.0,
                SeriesKind::Estimated,
            )
        })
    }

    proptest! {
        #[test]
        fn residual_plus_prediction_reconstructs_ground(
            g in series_strategy(16),
            p in series_strategy(16),
        ) {
            let r = virtual_residual(&g, &p).unwrap();
            let back = r.plus(&p).unwrap();
            for (a, b) in back.samples.iter().zip(&g.samples) {
                prop_assert!((a - b).amax() <= 1e-15);
            }
        }

        #[test]
        fn residual_composes(
            g in series_strategy(8),
            p1 in series_strategy(8),
            p2 in series_strategy(8),
        ) {
            let twice = virtual_residual(&virtual_residual(&g, &p1).unwrap(), &p2).unwrap();
            let once = virtual_residual(&g, &p1.plus(&p2).unwrap()).unwrap();
            for (a, b) in twice.samples.iter().zip(&once.samples) {
                prop_assert!((a - b).amax() <= 1e-15);
            }
        }
    }
}

//! Campaign execution and the on-disk run directory.
//!
//! Everything except the `timing` line of `manifest.toml` is a pure function
//! of the effective configuration, so two runs with the same config and seed
//! give byte-identical trees.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::analysis::{campaign_report, CampaignReport, IterationChannels, CHANNELS};
use crate::compensator::{run_campaign, training_times, IterationRecord};
use crate::config::RunConfig;
use crate::disturbance::{fmt_f64, DisturbanceSeries, SeriesKind};
use crate::error::{Error, Result};
use crate::gru::save_model;

pub const TELEMETRY_HEADER: [&str; 20] = [
    "t", "phi", "theta", "psi", "p", "q", "r", "u_pid_x", "u_pid_y", "u_pid_z", "delta_x",
    "delta_y", "delta_z", "tau_x", "tau_y", "tau_z", "thruster", "d_x", "d_y", "d_z",
];
pub const REPORT_HEADER: [&str; 12] = [
    "iteration",
    "channel",
    "rmse",
    "mean",
    "median",
    "q1",
    "q3",
    "iqr",
    "min",
    "max",
    "psd_peak_hz",
    "psd_peak",
];
pub const SUMMARY_HEADER: [&str; 3] = ["iteration", "mean_attitude_rmse", "max_psd_peak"];
pub const PSD_HEADER: [&str; 7] = [
    "frequency_hz",
    "phi_rad2_per_hz",
    "theta_rad2_per_hz",
    "psi_rad2_per_hz",
    "p_rad2_per_s2_hz",
    "q_rad2_per_s2_hz",
    "r_rad2_per_s2_hz",
];
/// Allowed growth of the mean attitude RMSE per iteration in `flags.csv`.
pub const RMSE_STEP_ALLOWANCE: f64 = 1.05;
const VERIFY_RTOL: f64 = 1e-9;

pub fn telemetry_path(out: &Path, k: usize) -> PathBuf {
    out.join(format!("iter_{k}_telemetry.csv"))
}

/// What a finished (or failed) run produced.
#[derive(Debug)]
pub struct RunSummary {
    pub out: PathBuf,
    pub iterations: usize,
    pub report: Option<CampaignReport>,
    pub error: Option<Error>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_telemetry(path: &Path, rec: &IterationRecord) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TELEMETRY_HEADER)?;
    let euler = rec.euler();
    for i in 0..rec.len() {
        let s = &rec.states[i];
        let delta = rec.correction_total(i);
        let d = rec.d_true.samples[i];
        let mut row = vec![fmt_f64(s.time)];
        row.extend(euler[i].iter().map(|&x| fmt_f64(x)));
        for v in [s.omega, rec.u_pid[i], delta, rec.tau[i]] {
            row.extend(v.iter().map(|&x| fmt_f64(x)));
        }
        row.push(u8::from(rec.thruster[i]).to_string());
        row.extend(d.iter().map(|&x| fmt_f64(x)));
        w.write_record(&row)?;
    }
    finish(w, path)
}

fn write_disturbances(path: &Path, rec: &IterationRecord) -> Result<()> {
    let predicted = DisturbanceSeries::new(
        (0..rec.len()).map(|i| rec.correction_total(i)).collect(),
        rec.d_true.dt,
        rec.d_true.t0,
        SeriesKind::Predicted,
    );
    let mut w = csv_writer(path)?;
    w.write_record(["t", "dx", "dy", "dz", "kind"])?;
    for series in [
        &rec.d_true.clone().with_kind(SeriesKind::GroundTruth),
        &rec.d_estimated.clone().with_kind(SeriesKind::Estimated),
        &rec.d_virtual.clone().with_kind(SeriesKind::Virtual),
        &predicted,
    ] {
        let kind = series.kind.to_string();
        for (i, d) in series.samples.iter().enumerate() {
            w.write_record([
                fmt_f64(series.time(i)),
                fmt_f64(d.x),
                fmt_f64(d.y),
                fmt_f64(d.z),
                kind.clone(),
            ])?;
        }
    }
    finish(w, path)
}

fn write_training(path: &Path, rec: &IterationRecord) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["restart", "epoch", "loss", "selected"])?;
    if let Some(log) = &rec.training {
        for (r, restart) in log.restarts.iter().enumerate() {
            for (e, loss) in restart.epoch_losses.iter().enumerate() {
                w.write_record([
                    r.to_string(),
                    e.to_string(),
                    fmt_f64(*loss),
                    u8::from(r == log.selected).to_string(),
                ])?;
            }
        }
    }
    finish(w, path)
}

/// `report.csv`, `summary.csv`, `flags.csv` and one `psd_iter_k.csv` per iteration.
pub fn write_report(out: &Path, report: &CampaignReport) -> Result<()> {
    let path = out.join("report.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(REPORT_HEADER)?;
    for it in &report.iterations {
        for (c, name) in CHANNELS.iter().enumerate() {
            let m = &it.metrics[c];
            let mut row = vec![it.iteration.to_string(), name.to_string()];
            row.extend(
                [
                    m.rmse,
                    m.mean,
                    m.median,
                    m.q1,
                    m.q3,
                    m.iqr,
                    m.min,
                    m.max,
                    it.peaks[c].0,
                    it.peaks[c].1,
                ]
                .map(fmt_f64),
            );
            w.write_record(&row)?;
        }
    }
    finish(w, &path)?;

    let path = out.join("summary.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(SUMMARY_HEADER)?;
    for it in &report.iterations {
        w.write_record([
            it.iteration.to_string(),
            fmt_f64(it.mean_attitude_rmse),
            fmt_f64(it.max_psd_peak),
        ])?;
    }
    finish(w, &path)?;

    let path = out.join("flags.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["flag", "value"])?;
    for (name, value) in flags(report) {
        w.write_record([name, value.to_string().as_str()])?;
    }
    finish(w, &path)?;

    for it in &report.iterations {
        let path = out.join(format!("psd_iter_{}.csv", it.iteration));
        let mut w = csv_writer(&path)?;
        w.write_record(PSD_HEADER)?;
        let s = &it.spectrum;
        for (b, f) in s.frequencies.iter().enumerate() {
            let mut row = vec![fmt_f64(*f)];
            row.extend(s.psd.iter().map(|ch| fmt_f64(ch[b])));
            w.write_record(&row)?;
        }
        finish(w, &path)?;
    }
    Ok(())
}

pub fn flags(report: &CampaignReport) -> [(&'static str, bool); 3] {
    [
        ("rmse_non_increasing", report.rmse_non_increasing),
        (
            "rmse_non_increasing_within_allowance",
            report.worst_step_ratio() <= RMSE_STEP_ALLOWANCE,
        ),
        ("max_psd_peak_decreasing", report.peak_decreasing),
    ]
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn write_error(out: &Path, err: &Error, completed: usize) -> Result<()> {
    let mut text = format!("kind = {}\n", toml_string(err.kind()));
    text += &format!("message = {}\n", toml_string(&err.to_string()));
    text += &format!("completed_iterations = {completed}\n");
    if let Error::TrainingDiverged { iteration, .. } = err {
        text += &format!("iteration = {iteration}\n");
    }
    if let Error::VerificationFailed(cells) = err {
        let cells: Vec<String> = cells.iter().map(|c| toml_string(c)).collect();
        text += &format!("cells = [{}]\n", cells.join(", "));
    }
    write_text(&out.join("error.toml"), &text)
}

/// Record of a failure that happened before or outside a run directory.
pub fn write_error_record(out: &Path, err: &Error) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_error(out, err, 0)
}

fn write_manifest(
    out: &Path,
    cfg: &RunConfig,
    records: &[IterationRecord],
    models: usize,
    stopped_early: bool,
    failed: bool,
    wall: f64,
) -> Result<()> {
    let mut files = vec!["effective_config.toml".to_string()];
    for (n, r) in records.iter().enumerate() {
        let k = r.index;
        files.extend([
            format!("iter_{k}_telemetry.csv"),
            format!("iter_{k}_disturbance.csv"),
            format!("iter_{k}_training.csv"),
        ]);
        if n < models {
            files.push(format!("iter_{k}_model.bin"));
        }
        files.push(format!("psd_iter_{k}.csv"));
    }
    if !records.is_empty() {
        files.extend(["report.csv", "summary.csv", "flags.csv"].map(String::from));
    }
    let files: Vec<String> = files.iter().map(|f| toml_string(f)).collect();
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let training: Vec<String> = training_times(records)
        .iter()
        .map(|d| format!("{:.3}", d.as_secs_f64()))
        .collect();
    let text = format!(
        "program = \"gru-attitude\"\nversion = \"{}\"\nseed = {}\niterations_completed = {}\n\
         stopped_early = {}\nfailed = {}\nfiles = [{}]\n\
         timing = {{ unix_time = {}, wall_time_s = {:.3}, training_time_s = [{}] }}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.seed,
        records.len(),
        stopped_early,
        failed,
        files.join(", "),
        stamp,
        wall,
        training.join(", "),
    );
    write_text(&out.join("manifest.toml"), &text)
}

/// Run the campaign described by `cfg` and write every artifact into `out`.
///
/// On a mid-campaign failure the completed iterations are still written,
/// together with `error.toml`, and the error is returned in the summary.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let start = Instant::now();
    cfg.validate()?;
    let scenario = cfg.scenario()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stale = out.join("error.toml");
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    write_text(&out.join("effective_config.toml"), &cfg.to_toml())?;

    let outcome = run_campaign(&scenario, &cfg.iterations, &cfg.train, cfg.seed);
    for (k, rec) in outcome.records.iter().enumerate() {
        write_telemetry(&telemetry_path(out, rec.index), rec)?;
        write_disturbances(
            &out.join(format!("iter_{}_disturbance.csv", rec.index)),
            rec,
        )?;
        write_training(&out.join(format!("iter_{}_training.csv", rec.index)), rec)?;
        if let Some(entry) = outcome.stack.entries.get(k) {
            save_model(
                &entry.model,
                &out.join(format!("iter_{}_model.bin", rec.index)),
            )?;
        }
    }
    let dt = scenario.control_dt;
    let report = if outcome.records.is_empty() {
        None
    } else {
        let channels: Vec<IterationChannels> = outcome
            .records
            .iter()
            .map(|r| IterationChannels::from_record(r, dt))
            .collect();
        let report = campaign_report(&channels)?;
        write_report(out, &report)?;
        Some(report)
    };
    if let Some(err) = &outcome.error {
        write_error(out, err, outcome.records.len())?;
    }
    write_manifest(
        out,
        cfg,
        &outcome.records,
        outcome.stack.len(),
        outcome.stopped_early,
        outcome.error.is_some(),
        start.elapsed().as_secs_f64(),
    )?;
    Ok(RunSummary {
        out: out.to_path_buf(),
        iterations: outcome.records.len(),
        report,
        error: outcome.error,
    })
}

fn read_csv(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    Ok(r.records().collect::<std::result::Result<_, _>>()?)
}

fn parse_cell(path: &Path, rec: &csv::StringRecord, row: usize, col: usize) -> Result<f64> {
    rec.get(col)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            message: format!("row {}, column {col}: expected a number", row + 1),
        })
}

/// Six report channels of iteration `k`, read back from its telemetry CSV.
pub fn read_channels(out: &Path, k: usize, dt: f64) -> Result<IterationChannels> {
    let path = telemetry_path(out, k);
    let rows = read_csv(&path)?;
    let mut channels: [Vec<f64>; 6] = Default::default();
    for (i, rec) in rows.iter().enumerate() {
        for (c, ch) in channels.iter_mut().enumerate() {
            ch.push(parse_cell(&path, rec, i, c + 1)?);
        }
    }
    Ok(IterationChannels {
        iteration: k,
        dt,
        channels,
    })
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= VERIFY_RTOL * a.abs().max(b.abs())
}

/// Recompute every stored metric from the telemetry CSVs of a run directory.
///
/// Fails with [`Error::VerificationFailed`] listing each mismatched cell.
pub fn cmd_verify(out: &Path) -> Result<CampaignReport> {
    let cfg = crate::config::load_config(&out.join("effective_config.toml"))?;
    let dt = cfg.scenario.control_dt;

    let mut iterations = Vec::new();
    while telemetry_path(out, iterations.len()).exists() {
        iterations.push(iterations.len());
    }
    if iterations.is_empty() {
        return Err(Error::VerificationFailed(vec!["no telemetry files".into()]));
    }
    let channels = iterations
        .iter()
        .map(|&k| read_channels(out, k, dt))
        .collect::<Result<Vec<_>>>()?;
    let report = campaign_report(&channels)?;
    let mut bad = Vec::new();

    let path = out.join("report.csv");
    let rows = read_csv(&path)?;
    if rows.len() != report.iterations.len() * CHANNELS.len() {
        bad.push(format!(
            "report.csv: {} rows, expected {}",
            rows.len(),
            report.iterations.len() * CHANNELS.len()
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        let (Some(k), Some(c)) = (
            row.get(0).and_then(|s| s.parse::<usize>().ok()),
            row.get(1)
                .and_then(|s| CHANNELS.iter().position(|n| *n == s)),
        ) else {
            bad.push(format!(
                "report.csv row {}: unknown iteration/channel",
                i + 1
            ));
            continue;
        };
        let Some(it) = report.iterations.iter().find(|it| it.iteration == k) else {
            bad.push(format!(
                "report.csv row {}: no telemetry for iteration {k}",
                i + 1
            ));
            continue;
        };
        let m = &it.metrics[c];
        let expected = [
            m.rmse,
            m.mean,
            m.median,
            m.q1,
            m.q3,
            m.iqr,
            m.min,
            m.max,
            it.peaks[c].0,
            it.peaks[c].1,
        ];
        for (j, want) in expected.iter().enumerate() {
            let got = parse_cell(&path, row, i, j + 2)?;
            if !close(got, *want) {
                bad.push(format!(
                    "report.csv iteration {k} {} {}: stored {got:e}, recomputed {want:e}",
                    CHANNELS[c],
                    REPORT_HEADER[j + 2]
                ));
            }
        }
    }

    let path = out.join("summary.csv");
    let rows = read_csv(&path)?;
    if rows.len() != report.iterations.len() {
        bad.push(format!(
            "summary.csv: {} rows, expected {}",
            rows.len(),
            report.iterations.len()
        ));
    }
    for (i, (row, it)) in rows.iter().zip(&report.iterations).enumerate() {
        for (j, want) in [it.mean_attitude_rmse, it.max_psd_peak].iter().enumerate() {
            let got = parse_cell(&path, row, i, j + 1)?;
            if !close(got, *want) {
                bad.push(format!(
                    "summary.csv iteration {} {}: stored {got:e}, recomputed {want:e}",
                    it.iteration,
                    SUMMARY_HEADER[j + 1]
                ));
            }
        }
    }

    let path = out.join("flags.csv");
    let rows = read_csv(&path)?;
    for (name, want) in flags(&report) {
        let stored = rows
            .iter()
            .find(|r| r.get(0) == Some(name))
            .and_then(|r| r.get(1)?.parse::<bool>().ok());
        match stored {
            Some(got) if got == want => {}
            Some(got) => bad.push(format!("flags.csv {name}: stored {got}, recomputed {want}")),
            None => bad.push(format!("flags.csv {name}: missing")),
        }
    }

    for it in &report.iterations {
        let path = out.join(format!("psd_iter_{}.csv", it.iteration));
        let rows = read_csv(&path)?;
        if rows.len() != it.spectrum.frequencies.len() {
            bad.push(format!(
                "psd_iter_{}.csv: wrong number of bins",
                it.iteration
            ));
            continue;
        }
        'rows: for (b, row) in rows.iter().enumerate() {
            let want = std::iter::once(it.spectrum.frequencies[b])
                .chain(it.spectrum.psd.iter().map(|ch| ch[b]));
            for (j, want) in want.enumerate() {
                let got = parse_cell(&path, row, b, j)?;
                if !close(got, want) {
                    bad.push(format!(
                        "psd_iter_{}.csv bin {b} {}: stored {got:e}, recomputed {want:e}",
                        it.iteration, PSD_HEADER[j]
                    ));
                    break 'rows;
                }
            }
        }
    }

    if bad.is_empty() {
        Ok(report)
    } else {
        Err(Error::VerificationFailed(bad))
    }
}

//! Pipeline stages. Each reads its inputs from the work directory and writes
//! its artifacts back there.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use log::info;

use ftaed::data::{
    assemble_grid, parse_incident_log, parse_sensor_csv, read_grid, split_days, write_grid, write_incident_log,
    write_sensor_csv, DatasetSplit, Feature, IncidentLog, NormalizationStats, SensorGrid,
};
use ftaed::detection::{
    detect_anomalies, evaluate_at_fpr, fpr_sweep, write_detections_csv, write_sweep_csv, DetectionResult,
};
use ftaed::graph::{build_st_topology, build_static_topology, GraphTopology};
use ftaed::imputation::impute_grid;
use ftaed::models::{load_checkpoint, save_checkpoint, Architecture, AutoencoderModel};
use ftaed::synthetic::{generate_scenario, write_ground_truth};
use ftaed::training::{
    calibrate_thresholds, prepare_data, train_model, write_history_csv, PreparedData, ThresholdVector,
};

use crate::config::PipelineConfig;
use crate::heatmap::{self, Overlay};

pub const SENSORS: &str = "sensors.csv";
pub const INCIDENTS: &str = "incidents.csv";
pub const TRUTH: &str = "ground_truth.csv";
pub const GRID: &str = "grid.bin";
pub const IMPUTED: &str = "imputed.bin";
pub const SPLIT: &str = "split.csv";
pub const CHECKPOINT: &str = "model.ckpt";
pub const NORMALIZATION: &str = "normalization.txt";
pub const HISTORY: &str = "history.csv";
pub const THRESHOLDS: &str = "thresholds.txt";
pub const DETECTIONS: &str = "detections.csv";
pub const METRICS: &str = "metrics.txt";
pub const ROC: &str = "roc.csv";
pub const SWEEP: &str = "sweep.csv";
pub const EVENTS: &str = "events.csv";

pub struct Ctx {
    pub work: PathBuf,
    pub config: PipelineConfig,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("writing {}", path.display()))?,
    ))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn read_text(path: &Path, hint: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}; {hint}", path.display()))
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.work.join(name)
    }

    fn model_dir(&self, arch: Architecture) -> PathBuf {
        self.work.join(arch.name())
    }

    fn model_path(&self, arch: Architecture, name: &str) -> PathBuf {
        self.model_dir(arch).join(name)
    }

    fn incidents(&self) -> Result<IncidentLog> {
        let p = self.path(INCIDENTS);
        parse_incident_log(&p).with_context(|| format!("reading {}; run `ftaed ingest` first", p.display()))
    }

    fn split(&self) -> Result<DatasetSplit> {
        let text = read_text(&self.path(SPLIT), "run `ftaed ingest` first")?;
        Ok(DatasetSplit::from_text(&text)?)
    }

    /// The imputed grid, or the ingested one when it has no gaps.
    fn grid(&self) -> Result<SensorGrid> {
        let imputed = self.path(IMPUTED);
        if imputed.exists() {
            return Ok(read_grid(&imputed)?);
        }
        let raw = self.path(GRID);
        let g = read_grid(&raw).with_context(|| format!("reading {}; run `ftaed ingest` first", raw.display()))?;
        if !g.is_complete() {
            bail!("{} has missing cells; run `ftaed impute` first", raw.display());
        }
        Ok(g)
    }

    fn topology(&self, model: &AutoencoderModel, grid: &SensorGrid) -> Result<GraphTopology> {
        let base = build_static_topology(grid.n_milemarkers(), grid.n_lanes());
        let k = model.config().timesteps;
        Ok(if model.config().architecture.is_spatiotemporal() {
            build_st_topology(&base, k)?
        } else {
            base
        })
    }

    fn prepared(&self, grid: &SensorGrid) -> Result<PreparedData> {
        Ok(prepare_data(
            grid,
            &self.incidents()?,
            &self.split()?,
            &self.config.mask,
        )?)
    }

    /// Checkpoint plus the grid normalized with the training statistics.
    fn trained(&self, arch: Architecture) -> Result<(AutoencoderModel, SensorGrid, GraphTopology)> {
        let ckpt = self.model_path(arch, CHECKPOINT);
        let model = load_checkpoint(&ckpt)
            .with_context(|| format!("reading {}; run `ftaed train --model {arch}` first", ckpt.display()))?;
        let stats = NormalizationStats::from_text(&read_text(
            &self.model_path(arch, NORMALIZATION),
            "run `ftaed train` first",
        )?)?;
        let grid = stats.normalize_grid(&self.grid()?);
        let topology = self.topology(&model, &grid)?;
        Ok((model, grid, topology))
    }

    fn thresholds(&self, arch: Architecture) -> Result<ThresholdVector> {
        let p = self.model_path(arch, THRESHOLDS);
        if !p.exists() {
            bail!(
                "MissingThreshold: no thresholds at {}; run `ftaed calibrate --model {arch}` first",
                p.display()
            );
        }
        let t = ThresholdVector::from_text(&read_text(&p, "")?)?;
        Ok(t)
    }
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.config;
    let s = generate_scenario(&cfg.synth, &cfg.incidents, cfg.execution)?;
    let mut w = create(&ctx.path(SENSORS))?;
    write_sensor_csv(&mut w, &s.grid.to_readings())?;
    w.flush()?;
    let mut w = create(&ctx.path(INCIDENTS))?;
    write_incident_log(&mut w, &s.log)?;
    w.flush()?;
    let mut w = create(&ctx.path(TRUTH))?;
    write_ground_truth(&mut w, &s.truth)?;
    w.flush()?;
    println!(
        "synthesized {} days x {} nodes with {} incidents into {}",
        s.grid.days().len(),
        s.grid.n_nodes(),
        s.truth.len(),
        ctx.work.display()
    );
    Ok(())
}

pub fn ingest(ctx: &Ctx, sensors: Option<&Path>, incidents: Option<&Path>) -> Result<()> {
    let sensors = sensors.map_or_else(|| ctx.path(SENSORS), Path::to_path_buf);
    let incidents = incidents.map_or_else(|| ctx.path(INCIDENTS), Path::to_path_buf);
    let readings = parse_sensor_csv(&sensors).with_context(|| format!("reading {}", sensors.display()))?;
    let log = parse_incident_log(&incidents).with_context(|| format!("reading {}", incidents.display()))?;
    let (grid, report) = assemble_grid(&readings, &ctx.config.window)?;
    let split = split_days(&grid, &ctx.config.split)?;
    fs::create_dir_all(&ctx.work)?;
    write_grid(ctx.path(GRID), &grid)?;
    let mut w = create(&ctx.path(INCIDENTS))?;
    write_incident_log(&mut w, &log)?;
    w.flush()?;
    write_text(&ctx.path(SPLIT), &split.to_text())?;
    let _ = fs::remove_file(ctx.path(IMPUTED));
    let missing: usize = Feature::ALL.iter().map(|&f| grid.missing_count(f)).sum();
    println!(
        "ingested {} readings: {} days, {} nodes, {} missing cells, {} duplicates, {} outside the window",
        readings.len(),
        grid.days().len(),
        grid.n_nodes(),
        missing,
        report.duplicates,
        report.outside_window
    );
    println!(
        "split: {} train, {} validation, {} excluded",
        split.train().len(),
        split.validation().len(),
        split.excluded().len()
    );
    Ok(())
}

pub fn impute(ctx: &Ctx) -> Result<()> {
    let raw = ctx.path(GRID);
    let grid = read_grid(&raw).with_context(|| format!("reading {}; run `ftaed ingest` first", raw.display()))?;
    let cfg = &ctx.config;
    let (out, report) = impute_grid(&grid, &cfg.asm, cfg.local_radius, cfg.execution)?;
    write_grid(ctx.path(IMPUTED), &out)?;
    let mut text = format!(
        "imputed={}\nlane_fallbacks={}\nisolated={}\n",
        report.imputed,
        report.lane_fallbacks,
        report.isolated.len()
    );
    for c in &report.isolated {
        text.push_str(&format!(
            "isolated,{},{},{},{}\n",
            c.time_unix,
            c.milemarker,
            c.lane,
            c.feature.name()
        ));
    }
    write_text(&ctx.path("imputation.txt"), &text)?;
    println!(
        "imputed {} cells ({} lane fallbacks, {} isolated)",
        report.imputed,
        report.lane_fallbacks,
        report.isolated.len()
    );
    Ok(())
}

pub fn train(ctx: &Ctx, arch: Architecture) -> Result<()> {
    let cfg = &ctx.config;
    let raw = ctx.grid()?;
    let data = ctx.prepared(&raw)?;
    let model_cfg = cfg.model_config(arch)?;
    let base = build_static_topology(raw.n_milemarkers(), raw.n_lanes());
    let topology = if arch.is_spatiotemporal() {
        build_st_topology(&base, model_cfg.timesteps)?
    } else {
        base
    };
    let model = AutoencoderModel::new(model_cfg, &topology, cfg.seed)?;
    info!("{arch}: {} parameters", model.n_parameters());
    let train_cfg = cfg.train_config(model.config());
    let out = train_model(
        &model,
        &data.grid,
        &data.train_mask,
        &data.val_mask,
        &topology,
        &train_cfg,
    )?;
    let dir = ctx.model_dir(arch);
    fs::create_dir_all(&dir)?;
    save_checkpoint(dir.join(CHECKPOINT), &out.model)?;
    write_text(&dir.join(NORMALIZATION), &data.stats.to_text())?;
    let mut w = create(&dir.join(HISTORY))?;
    write_history_csv(&mut w, &out.history)?;
    w.flush()?;
    let _ = fs::remove_file(dir.join(THRESHOLDS));
    let best = out.best();
    println!(
        "{arch}: {} epochs{}, best epoch {} (train {:.6}, validation {})",
        out.history.len(),
        if out.stopped_early { " (early stop)" } else { "" },
        out.best_epoch,
        best.train_mse,
        best.val_mse.map_or("n/a".into(), |v| format!("{v:.6}"))
    );
    Ok(())
}

pub fn calibrate(ctx: &Ctx, arch: Architecture) -> Result<()> {
    let (model, grid, topology) = ctx.trained(arch)?;
    let data = ctx.prepared(&ctx.grid()?)?;
    let th = calibrate_thresholds(
        &model,
        &grid,
        &data.train_mask,
        &topology,
        ctx.config.threshold_mode,
        ctx.config.execution,
    )?;
    write_text(&ctx.model_path(arch, THRESHOLDS), &th.to_text())?;
    let max = th.values().iter().cloned().fold(0.0, f64::max);
    println!("{arch}: {} thresholds, largest {max:.6}", th.values().len());
    Ok(())
}

fn score(ctx: &Ctx, arch: Architecture, alpha: Option<f64>) -> Result<(DetectionResult, SensorGrid)> {
    let thresholds = ctx.thresholds(arch)?;
    let (model, grid, topology) = ctx.trained(arch)?;
    let alpha = alpha.unwrap_or(thresholds.alpha);
    let result = detect_anomalies(&model, &grid, &topology, &thresholds, alpha, ctx.config.execution)?;
    Ok((result, grid))
}

pub fn detect(ctx: &Ctx, arch: Architecture, alpha: Option<f64>) -> Result<()> {
    let (result, grid) = score(ctx, arch, alpha)?;
    let mut w = create(&ctx.model_path(arch, DETECTIONS))?;
    write_detections_csv(&mut w, &result, &grid)?;
    w.flush()?;
    let times = result.any_flagged().iter().filter(|&&f| f).count();
    println!(
        "{arch}: alpha {}: {} flagged cells at {} of {} times",
        result.alpha(),
        result.flag_count(),
        times,
        result.len()
    );
    Ok(())
}

fn dates_of(grid: &SensorGrid, days: &[NaiveDate]) -> Vec<bool> {
    (0..grid.n_times())
        .map(|t| days.contains(&grid.days()[grid.day_of(t)].date))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

pub fn evaluate(ctx: &Ctx, arch: Architecture, target_fpr: Option<f64>) -> Result<()> {
    let (result, grid) = score(ctx, arch, None)?;
    let log = ctx.incidents()?;
    let split = ctx.split()?;
    let validation = split.validation();
    if validation.is_empty() {
        bail!("the split has no validation days to tune alpha on; set split.validation");
    }
    let on_val = dates_of(&grid, &validation);
    let index: std::collections::HashMap<i64, usize> = grid.times().iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let tuning = result.select(|_, t| on_val[index[&t]]);
    let mut setup = ctx.config.eval.clone();
    if let Some(f) = target_fpr {
        if !(0.0..=1.0).contains(&f) {
            bail!("--target-fpr {f} is not in [0, 1]");
        }
        setup.target_fpr = f;
    }
    let ev = evaluate_at_fpr(&result, &tuning, &log, &setup)?;
    let dir = ctx.model_dir(arch);
    write_text(&dir.join(METRICS), &ev.report.to_text())?;

    let mut w = create(&dir.join(ROC))?;
    writeln!(w, "alpha,fpr,tpr,fdr")?;
    for p in &ev.curve.points {
        writeln!(w, "{},{},{},{}", p.alpha, p.fpr, p.tpr, p.fdr)?;
    }
    w.flush()?;

    let sweep = fpr_sweep(&result, &ev.curve, &log, setup.match_window, &ctx.config.sweep_fprs)?;
    let mut w = create(&dir.join(SWEEP))?;
    write_sweep_csv(&mut w, &sweep)?;
    w.flush()?;

    let mut w = create(&dir.join(EVENTS))?;
    writeln!(
        w,
        "report_time_unix,milemarker,detected_unix,rrd_minutes,covered,truncated"
    )?;
    for o in &ev.events.outcomes {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            o.report_time_unix,
            o.milemarker.map(|m| m.to_string()).unwrap_or_default(),
            o.detected_unix.map(|t| t.to_string()).unwrap_or_default(),
            o.rrd_minutes.map(|t| t.to_string()).unwrap_or_default(),
            o.covered,
            o.truncated
        )?;
    }
    w.flush()?;

    let r = &ev.report;
    println!("| Model | Reporting Delay (min) | Miss % | Recon. Error | FPR | AUC |");
    println!("|---|---|---|---|---|---|");
    println!(
        "| {arch} | {} ± {} | {:.1} | {:.4} | {:.3} | {:.3} |",
        fmt_opt(r.reporting_delay_mean),
        fmt_opt(r.reporting_delay_std),
        r.miss_pct,
        r.recon_mse,
        r.fpr_achieved,
        r.auc
    );
    println!();
    println!("| Target FPR | Reporting Delay (min) | Miss % |");
    println!("|---|---|---|");
    for row in &sweep {
        println!(
            "| {:.0}% | {} ± {} | {:.1} |",
            row.target_fpr * 100.0,
            fmt_opt(row.rrd_mean),
            fmt_opt(row.rrd_std),
            row.miss_pct
        );
    }
    Ok(())
}

pub fn heatmap(
    ctx: &Ctx,
    lane: u8,
    day: Option<NaiveDate>,
    arch: Option<Architecture>,
    out: Option<&Path>,
) -> Result<()> {
    let grid = ctx.grid().or_else(|_| {
        let raw = ctx.path(GRID);
        read_grid(&raw).with_context(|| format!("reading {}; run `ftaed ingest` first", raw.display()))
    })?;
    if lane == 0 || lane as usize > grid.n_lanes() {
        bail!("--lane {lane} is not in 1..={}", grid.n_lanes());
    }
    let day_index = match day {
        Some(d) => grid
            .day_index(d)
            .ok_or_else(|| anyhow!("{d} is not in the grid; available: {:?}", grid.dates()))?,
        None => 0,
    };
    let date = grid.days()[day_index].date;
    let mut overlay = Overlay::default();
    if let Ok(log) = ctx.incidents() {
        overlay.reports = log.crashes().map(|c| (c.report_time_unix, c.milemarker)).collect();
    }
    if let Some(arch) = arch {
        let p = ctx.model_path(arch, DETECTIONS);
        let mut rdr = csv::Reader::from_path(&p)
            .with_context(|| format!("reading {}; run `ftaed detect --model {arch}` first", p.display()))?;
        for rec in rdr.records() {
            let rec = rec?;
            let t: i64 = rec[0].parse()?;
            let node: usize = rec[1].parse()?;
            let (Some(ti), true) = (grid.time_index(t), node < grid.n_nodes()) else {
                continue;
            };
            let id = grid.node_id(node);
            if id.lane == lane {
                overlay.flags.push((ti, node / grid.n_lanes()));
            }
        }
    }
    let svg = heatmap::render(&grid, &ctx.config.window, lane, day_index, &overlay);
    let path = out.map_or_else(
        || ctx.path(&format!("heatmap_lane{lane}_{date}.svg")),
        Path::to_path_buf,
    );
    write_text(&path, &svg)?;
    println!("wrote {}", path.display());
    Ok(())
}

//! `key=value` pipeline configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveTime, Timelike};
use thiserror::Error;

use ftaed::data::{DayWindow, MaskWindows, SplitSpec};
use ftaed::detection::{EvaluationSetup, LabelWindows, ManualPolicy};
use ftaed::exec::Execution;
use ftaed::imputation::{AsmParams, LocalRadius};
use ftaed::models::{Architecture, ModelConfig};
use ftaed::synthetic::{IncidentPlan, SynthConfig};
use ftaed::training::{ThresholdMode, TrainConfig};

pub const SEED_ENV: &str = "FTAED_SEED";

/// Every accepted key with its default and a short description. `auto`
/// model values fall back to the architecture's defaults.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "7", "seed for generation, initialization and shuffling"),
    ("parallel", "true", "use all cores for data-parallel loops"),
    ("window.start_hour", "4", "daily window start, local hours"),
    ("window.end_hour", "12", "daily window end, local hours"),
    ("window.utc_offset_hours", "-5", "local time minus UTC"),
    ("synth.n_milemarkers", "49", "sensor stations"),
    ("synth.n_lanes", "4", "lanes per station"),
    ("synth.n_days", "6", "generated days"),
    ("synth.steps_per_day", "960", "30 s ticks per day"),
    ("synth.first_date", "2023-10-02", "first generated day"),
    ("synth.first_milemarker", "70", "most upstream milemarker"),
    ("synth.spacing", "0.3", "miles between stations"),
    ("synth.free_speed", "65", "mph"),
    ("synth.congested_speed", "25", "mph"),
    ("synth.rush_start", "05:45", "congestion onset, local HH:MM"),
    ("synth.rush_end", "08:30", "congestion release, local HH:MM"),
    ("synth.wave_speed", "-12", "upstream wave speed, mph"),
    ("synth.wave_period", "720", "stop-and-go period, seconds"),
    ("synth.rush_jitter", "600", "daily onset jitter, seconds"),
    ("synth.noise_std", "1.5", "speed noise, mph"),
    ("synth.incidents_per_day", "1,1,1,1,2,2", "incidents on each day"),
    ("synth.severity", "0.55,0.8", "speed drop range"),
    ("synth.duration", "1200,2400", "blockage duration range, seconds"),
    ("synth.backprop_speed", "-14,-8", "queue growth range, mph"),
    ("synth.report_delay", "300,720", "report delay range, seconds"),
    (
        "synth.incident_lead",
        "1200",
        "earliest incident after the day's first tick, seconds",
    ),
    (
        "synth.incident_tail",
        "8100",
        "latest incident before the day's last tick, seconds",
    ),
    (
        "synth.incident_separation",
        "9000",
        "minimum gap between incidents on one day, seconds",
    ),
    (
        "synth.edge_markers",
        "5",
        "stations kept incident-free at each road end",
    ),
    ("split.train", "14", "training days"),
    ("split.validation", "5", "validation days"),
    ("split.excluded", "1", "held-out days"),
    ("mask.crash_before", "1800", "seconds masked before a crash report"),
    ("mask.crash_after", "7200", "seconds masked after a crash report"),
    ("mask.manual_after", "7200", "seconds masked after a manual label"),
    (
        "mask.include_manual_anomalies",
        "false",
        "train on manual-label windows",
    ),
    ("asm.sigma", "0.37", "spatial kernel width, miles"),
    ("asm.tau", "66", "temporal kernel width, seconds"),
    ("asm.c_free", "50", "free-flow characteristic, mph"),
    ("asm.c_cong", "-9.3", "congested characteristic, mph"),
    ("asm.v_crit", "37", "regime crossover speed, mph"),
    ("asm.delta_v", "12.4", "crossover width, mph"),
    ("impute.space_radius", "1", "local average radius, stations"),
    ("impute.time_radius", "2", "local average radius, ticks"),
    ("model.hidden_dim", "auto", "hidden width"),
    ("model.latent_dim", "auto", "latent width"),
    ("model.n_layers", "auto", "graph layers per side"),
    ("model.dropout", "auto", "dropout rate"),
    ("model.gat_heads", "auto", "attention heads"),
    ("model.timesteps", "auto", "previous slices in the spatiotemporal graph"),
    ("model.gat_self_loops", "true", "attention includes self loops"),
    ("model.rgcn_learned_norm", "false", "learned per-relation scale"),
    ("train.learning_rate", "auto", "Adam step size"),
    ("train.batch_size", "32", "windows per step"),
    ("train.max_epochs", "100", "epoch limit"),
    ("train.patience", "10", "epochs without validation improvement"),
    ("threshold.mode", "node", "node (summed features) or feature"),
    ("eval.target_fpr", "0.05", "validation false positive budget"),
    (
        "eval.match_window",
        "900",
        "seconds around a report that count as detection",
    ),
    ("eval.label_before", "900", "positive seconds before a crash report"),
    ("eval.label_after", "7200", "positive seconds after a crash report"),
    ("eval.manual_after", "7200", "seconds after a manual label"),
    ("eval.manual_policy", "exclude", "exclude or positive"),
    ("eval.sweep_fprs", "0.01,0.05,0.1", "budgets for the sweep table"),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}` (run `ftaed defaults` for the full list)")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: expected `key=value`")]
    Syntax { line: usize },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { key: String, line: usize },
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl ConfigError {
    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap().trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.iter().any(|(key, _, _)| *key == k) {
            return Err(ConfigError::UnknownKey {
                key: k.to_string(),
                line,
            });
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ConfigError::Duplicate {
                key: k.to_string(),
                line,
            });
        }
    }
    Ok(out)
}

/// A full config file with every key at its default.
pub fn defaults_text() -> String {
    let mut s = String::new();
    for (k, v, help) in KEYS {
        writeln!(s, "# {help}").unwrap();
        writeln!(s, "{k}={v}").unwrap();
    }
    s
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn raw(&self, key: &str) -> &str {
        match self.0.get(key) {
            Some(v) => v,
            None => KEYS.iter().find(|(k, _, _)| *k == key).expect("known key").1,
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| ConfigError::invalid(key, format!("cannot parse `{v}`")))
    }

    fn auto<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| ConfigError::invalid(key, format!("cannot parse `{x}`")))
            })
            .collect()
    }

    fn range<T: FromStr + PartialOrd + Copy>(&self, key: &str) -> Result<(T, T), ConfigError> {
        match self.list::<T>(key)?[..] {
            [lo, hi] if lo <= hi => Ok((lo, hi)),
            _ => Err(ConfigError::invalid(key, "expected `low,high`")),
        }
    }

    fn clock(&self, key: &str) -> Result<i64, ConfigError> {
        let v = self.raw(key);
        NaiveTime::parse_from_str(v, "%H:%M")
            .map(|t| t.num_seconds_from_midnight() as i64)
            .map_err(|_| ConfigError::invalid(key, format!("expected HH:MM, got `{v}`")))
    }
}

/// Optional per-key overrides of an architecture's defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelOverrides {
    pub hidden_dim: Option<usize>,
    pub latent_dim: Option<usize>,
    pub n_layers: Option<usize>,
    pub dropout: Option<f64>,
    pub gat_heads: Option<usize>,
    pub timesteps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub gat_self_loops: bool,
    pub rgcn_learned_norm: bool,
}

/// Validated settings for every stage.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub execution: Execution,
    pub window: DayWindow,
    pub synth: SynthConfig,
    pub incidents: IncidentPlan,
    pub split: SplitSpec,
    pub mask: MaskWindows,
    pub asm: AsmParams,
    pub local_radius: LocalRadius,
    pub model: ModelOverrides,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub threshold_mode: ThresholdMode,
    pub eval: EvaluationSetup,
    pub sweep_fprs: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::from_pairs(BTreeMap::new(), None).expect("defaults are valid")
    }
}

impl PipelineConfig {
    /// Reads `path` if given, applies the seed override, and validates.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
                    path: p.display().to_string(),
                    source: e,
                })?;
                parse_pairs(&text)?
            }
            None => BTreeMap::new(),
        };
        let env_seed = std::env::var(SEED_ENV).ok();
        PipelineConfig::from_pairs(pairs, env_seed.as_deref())
    }

    #[cfg(test)]
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        PipelineConfig::from_pairs(parse_pairs(text)?, None)
    }

    pub fn from_pairs(pairs: BTreeMap<String, String>, env_seed: Option<&str>) -> Result<Self, ConfigError> {
        let v = Values(pairs);
        let seed = match env_seed {
            Some(s) => s
                .trim()
                .parse()
                .map_err(|_| ConfigError::invalid(SEED_ENV, format!("cannot parse `{s}`")))?,
            None => v.get("seed")?,
        };
        let execution = if v.get("parallel")? {
            Execution::Parallel
        } else {
            Execution::Sequential
        };
        let window = DayWindow::from_hours(
            v.get("window.start_hour")?,
            v.get("window.end_hour")?,
            v.get("window.utc_offset_hours")?,
        );
        if window.steps_per_day() == 0 {
            return Err(ConfigError::invalid(
                "window.end_hour",
                "must be after window.start_hour",
            ));
        }

        let synth = SynthConfig {
            n_milemarkers: v.get("synth.n_milemarkers")?,
            n_lanes: v.get("synth.n_lanes")?,
            n_days: v.get("synth.n_days")?,
            steps_per_day: v.get("synth.steps_per_day")?,
            first_date: v.get::<NaiveDate>("synth.first_date")?,
            first_milemarker: v.get("synth.first_milemarker")?,
            spacing: v.get("synth.spacing")?,
            day_start_seconds: window.start_seconds,
            utc_offset_seconds: window.utc_offset_seconds,
            free_speed: v.get("synth.free_speed")?,
            congested_speed: v.get("synth.congested_speed")?,
            rush_start: v.clock("synth.rush_start")?,
            rush_end: v.clock("synth.rush_end")?,
            wave_speed: v.get("synth.wave_speed")?,
            wave_period: v.get("synth.wave_period")?,
            rush_jitter: v.get("synth.rush_jitter")?,
            noise_std: v.get("synth.noise_std")?,
            seed,
        };
        synth
            .validate()
            .map_err(|e| ConfigError::invalid("synth", e.to_string()))?;
        let incidents = IncidentPlan {
            per_day: v.list("synth.incidents_per_day")?,
            severity: v.range("synth.severity")?,
            duration: v.range("synth.duration")?,
            backprop_speed: v.range("synth.backprop_speed")?,
            report_delay: v.range("synth.report_delay")?,
            lead: v.get("synth.incident_lead")?,
            tail: v.get("synth.incident_tail")?,
            separation: v.get("synth.incident_separation")?,
            edge_markers: v.get("synth.edge_markers")?,
        };
        if incidents.per_day.len() > synth.n_days {
            return Err(ConfigError::invalid(
                "synth.incidents_per_day",
                format!(
                    "lists {} days but synth.n_days is {}",
                    incidents.per_day.len(),
                    synth.n_days
                ),
            ));
        }
        if !(incidents.severity.0 >= 0.0 && incidents.severity.1 <= 1.0) {
            return Err(ConfigError::invalid("synth.severity", "must lie in [0, 1]"));
        }
        if !(incidents.backprop_speed.1 < 0.0) {
            return Err(ConfigError::invalid("synth.backprop_speed", "must be negative"));
        }
        if incidents.report_delay.0 < 0 || incidents.duration.0 < 0 {
            return Err(ConfigError::invalid(
                "synth",
                "durations and delays must be non-negative",
            ));
        }

        let split = SplitSpec {
            train: v.get("split.train")?,
            validation: v.get("split.validation")?,
            excluded: v.get("split.excluded")?,
        };
        if split.train == 0 {
            return Err(ConfigError::invalid("split.train", "need at least one training day"));
        }
        let mask = MaskWindows {
            crash_before: v.get("mask.crash_before")?,
            crash_after: v.get("mask.crash_after")?,
            manual_after: v.get("mask.manual_after")?,
            include_manual_anomalies: v.get("mask.include_manual_anomalies")?,
        };
        let asm = AsmParams {
            sigma: v.get("asm.sigma")?,
            tau: v.get("asm.tau")?,
            c_free: v.get("asm.c_free")?,
            c_cong: v.get("asm.c_cong")?,
            v_crit: v.get("asm.v_crit")?,
            delta_v: v.get("asm.delta_v")?,
            ..AsmParams::default()
        };
        let asm = AsmParams {
            space_radius: 3.0 * asm.sigma,
            time_radius: 3.0 * asm.tau,
            ..asm
        };
        asm.validate().map_err(|e| ConfigError::invalid("asm", e.to_string()))?;
        let local_radius = LocalRadius {
            space: v.get("impute.space_radius")?,
            time: v.get("impute.time_radius")?,
        };
        let model = ModelOverrides {
            hidden_dim: v.auto("model.hidden_dim")?,
            latent_dim: v.auto("model.latent_dim")?,
            n_layers: v.auto("model.n_layers")?,
            dropout: v.auto("model.dropout")?,
            gat_heads: v.auto("model.gat_heads")?,
            timesteps: v.auto("model.timesteps")?,
            learning_rate: v.auto("train.learning_rate")?,
            gat_self_loops: v.get("model.gat_self_loops")?,
            rgcn_learned_norm: v.get("model.rgcn_learned_norm")?,
        };
        let threshold_mode = match v.raw("threshold.mode") {
            "node" => ThresholdMode::NodeSum,
            "feature" => ThresholdMode::PerFeature,
            other => {
                return Err(ConfigError::invalid(
                    "threshold.mode",
                    format!("expected node or feature, got `{other}`"),
                ))
            }
        };
        let manual = match v.raw("eval.manual_policy") {
            "exclude" => ManualPolicy::Exclude,
            "positive" => ManualPolicy::Positive,
            other => {
                return Err(ConfigError::invalid(
                    "eval.manual_policy",
                    format!("expected exclude or positive, got `{other}`"),
                ))
            }
        };
        let eval = EvaluationSetup {
            target_fpr: v.get("eval.target_fpr")?,
            match_window: v.get("eval.match_window")?,
            labels: LabelWindows {
                crash_before: v.get("eval.label_before")?,
                crash_after: v.get("eval.label_after")?,
                manual_after: v.get("eval.manual_after")?,
                manual,
            },
        };
        let sweep_fprs: Vec<f64> = v.list("eval.sweep_fprs")?;
        for (key, f) in std::iter::once(("eval.target_fpr", eval.target_fpr))
            .chain(sweep_fprs.iter().map(|&f| ("eval.sweep_fprs", f)))
        {
            if !(0.0..=1.0).contains(&f) {
                return Err(ConfigError::invalid(key, format!("{f} is not in [0, 1]")));
            }
        }

        let cfg = PipelineConfig {
            seed,
            execution,
            window,
            synth,
            incidents,
            split,
            mask,
            asm,
            local_radius,
            model,
            batch_size: v.get("train.batch_size")?,
            max_epochs: v.get("train.max_epochs")?,
            patience: v.get("train.patience")?,
            threshold_mode,
            eval,
            sweep_fprs,
        };
        cfg.train_config(&ModelConfig::defaults(Architecture::Gcn))
            .validate()
            .map_err(|e| ConfigError::invalid("train", e.to_string()))?;
        Ok(cfg)
    }

    /// Architecture defaults with any configured overrides applied, validated
    /// for that architecture.
    pub fn model_config(&self, arch: Architecture) -> Result<ModelConfig, ConfigError> {
        let m = self.model_config_unchecked(arch);
        m.validate()
            .map_err(|e| ConfigError::invalid("model", format!("{arch}: {e}")))?;
        Ok(m)
    }

    fn model_config_unchecked(&self, arch: Architecture) -> ModelConfig {
        let d = ModelConfig::defaults(arch);
        let o = &self.model;
        ModelConfig {
            hidden_dim: o.hidden_dim.unwrap_or(d.hidden_dim),
            latent_dim: o.latent_dim.unwrap_or(d.latent_dim),
            n_layers: o.n_layers.unwrap_or(d.n_layers),
            dropout: o.dropout.unwrap_or(d.dropout),
            gat_heads: o.gat_heads.unwrap_or(d.gat_heads),
            timesteps: if arch.is_spatiotemporal() {
                o.timesteps.unwrap_or(d.timesteps)
            } else {
                d.timesteps
            },
            learning_rate: o.learning_rate.unwrap_or(d.learning_rate),
            gat_self_loops: o.gat_self_loops,
            rgcn_learned_norm: o.rgcn_learned_norm,
            ..d
        }
    }

    pub fn train_config(&self, model: &ModelConfig) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            execution: self.execution,
            ..TrainConfig::for_model(model, self.seed)
        }
    }
}

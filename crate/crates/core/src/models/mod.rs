//! Autoencoder architectures built from tape primitives.

mod checkpoint;
mod layers;
mod plan;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use layers::{gat_layer, gcn_layer, rgcn_layer, AttentionHead, ATTENTION_SLOPE};
pub use plan::{gcn_messages, AttentionMessages, BatchPlan, RelationalMessages, WeightedMessages};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Element, Tape, Tensor, Var};
use crate::data::N_FEATURES;
use crate::graph::GraphTopology;
use plan::LayerMessages;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Mlp,
    Gcn,
    StgGcn,
    StgGat,
    StgRgcn,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Mlp,
        Architecture::Gcn,
        Architecture::StgGcn,
        Architecture::StgGat,
        Architecture::StgRgcn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Mlp => "mlp",
            Architecture::Gcn => "gcn",
            Architecture::StgGcn => "stg-gcn",
            Architecture::StgGat => "stg-gat",
            Architecture::StgRgcn => "stg-rgcn",
        }
    }

    /// Runs on the spatiotemporal graph.
    pub fn is_spatiotemporal(self) -> bool {
        matches!(
            self,
            Architecture::StgGcn | Architecture::StgGat | Architecture::StgRgcn
        )
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| ModelError::ConfigMismatch(format!("unknown architecture `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub n_layers: usize,
    pub dropout: f64,
    pub gat_heads: usize,
    /// Previous time slices in the window; 0 for static models.
    pub timesteps: usize,
    pub learning_rate: f64,
    pub gat_self_loops: bool,
    /// Learn one scalar per relation on top of the fixed `1/|N_i^r|`.
    pub rgcn_learned_norm: bool,
}

impl ModelConfig {
    /// Tuned defaults. STG-GCN borrows the GCN row with a two-slice history.
    pub fn defaults(architecture: Architecture) -> Self {
        let base = ModelConfig {
            architecture,
            hidden_dim: 64,
            latent_dim: 128,
            n_layers: 2,
            dropout: 0.03,
            gat_heads: 1,
            timesteps: 0,
            learning_rate: 0.0047,
            gat_self_loops: true,
            rgcn_learned_norm: false,
        };
        match architecture {
            Architecture::Gcn => base,
            Architecture::StgGcn => ModelConfig { timesteps: 2, ..base },
            Architecture::StgGat => ModelConfig {
                hidden_dim: 128,
                latent_dim: 256,
                learning_rate: 0.0004,
                n_layers: 1,
                gat_heads: 4,
                timesteps: 2,
                dropout: 0.09,
                ..base
            },
            Architecture::StgRgcn => ModelConfig {
                hidden_dim: 128,
                latent_dim: 32,
                learning_rate: 0.0017,
                n_layers: 1,
                timesteps: 8,
                dropout: 0.45,
                ..base
            },
            Architecture::Mlp => ModelConfig {
                hidden_dim: 128,
                latent_dim: 2,
                learning_rate: 0.0023,
                n_layers: 2,
                dropout: 0.0,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::ConfigMismatch(m));
        if self.latent_dim == 0 || self.hidden_dim == 0 || self.n_layers == 0 {
            return bad("hidden_dim, latent_dim and n_layers must be at least 1".into());
        }
        if self.architecture == Architecture::Mlp && self.latent_dim > 2 {
            return bad("MLP latent_dim must be 1 or 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if self.architecture == Architecture::StgGat
            && (self.gat_heads == 0 || !self.hidden_dim.is_multiple_of(self.gat_heads))
        {
            return bad(format!(
                "hidden_dim {} must be a multiple of gat_heads {}",
                self.hidden_dim, self.gat_heads
            ));
        }
        if !self.architecture.is_spatiotemporal() && self.timesteps != 0 {
            return bad(format!("{} takes no history", self.architecture));
        }
        Ok(())
    }

    pub fn n_slices(&self) -> usize {
        self.timesteps + 1
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("no weight for relation {0}")]
    MissingRelationWeight(usize),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor<f32>,
}

/// Parameters plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderModel {
    config: ModelConfig,
    n_base: usize,
    n_relations: usize,
    params: Vec<Parameter>,
}

struct Spec {
    shapes: Vec<(String, usize, usize, Init)>,
}

#[derive(Clone, Copy)]
enum Init {
    Glorot,
    Zero,
    One,
}

impl Spec {
    fn push(&mut self, name: String, r: usize, c: usize, init: Init) {
        self.shapes.push((name, r, c, init));
    }

    fn linear(&mut self, name: &str, fi: usize, fo: usize) {
        self.push(format!("{name}.w"), fi, fo, Init::Glorot);
        self.push(format!("{name}.b"), 1, fo, Init::Zero);
    }

    fn graph_layer(&mut self, cfg: &ModelConfig, n_relations: usize, name: &str, fi: usize, fo: usize) {
        match cfg.architecture {
            Architecture::Gcn | Architecture::StgGcn => {
                self.push(format!("{name}.w"), fi, fo, Init::Glorot);
            }
            Architecture::StgGat => {
                let f = fo / cfg.gat_heads;
                for h in 0..cfg.gat_heads {
                    self.push(format!("{name}.head{h}.w"), fi, f, Init::Glorot);
                    self.push(format!("{name}.head{h}.a"), 2 * f, 1, Init::Glorot);
                }
            }
            Architecture::StgRgcn => {
                self.push(format!("{name}.w0"), fi, fo, Init::Glorot);
                for r in 0..n_relations {
                    self.push(format!("{name}.rel{r}.w"), fi, fo, Init::Glorot);
                }
                if cfg.rgcn_learned_norm {
                    for r in 0..n_relations {
                        self.push(format!("{name}.rel{r}.scale"), 1, 1, Init::One);
                    }
                }
            }
            Architecture::Mlp => unreachable!(),
        }
        self.push(format!("{name}.b"), 1, fo, Init::Zero);
    }
}

fn layer_dims(first: usize, hidden: usize, n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..n).map(move |l| (l, if l == 0 { first } else { hidden }, hidden))
}

fn spec(cfg: &ModelConfig, n_base: usize, n_relations: usize) -> Spec {
    let mut s = Spec { shapes: Vec::new() };
    let (h, z) = (cfg.hidden_dim, cfg.latent_dim);
    if cfg.architecture == Architecture::Mlp {
        for (l, fi, fo) in layer_dims(N_FEATURES, h, cfg.n_layers) {
            s.linear(&format!("enc.{l}"), fi, fo);
        }
        s.linear("enc.out", h, z);
        for (l, fi, fo) in layer_dims(z, h, cfg.n_layers) {
            s.linear(&format!("dec.{l}"), fi, fo);
        }
        s.linear("dec.out", h, N_FEATURES);
        return s;
    }
    let n_nodes = n_base * cfg.n_slices();
    for (l, fi, fo) in layer_dims(N_FEATURES, h, cfg.n_layers) {
        s.graph_layer(cfg, n_relations, &format!("enc.{l}"), fi, fo);
    }
    s.linear("pool", h, z);
    s.linear("proj", z, z * n_nodes);
    for (l, fi, fo) in layer_dims(z, h, cfg.n_layers) {
        s.graph_layer(cfg, n_relations, &format!("dec.{l}"), fi, fo);
    }
    s.linear("dec.out", h, N_FEATURES);
    s
}

pub(crate) fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hands out named parameter handles in declaration order.
struct Bound<'a> {
    vars: &'a [Var],
    names: Vec<&'a str>,
    next: usize,
}

impl Bound<'_> {
    fn take(&mut self, suffix: &str) -> Var {
        debug_assert!(
            self.names[self.next].ends_with(suffix),
            "{} vs {suffix}",
            self.names[self.next]
        );
        self.next += 1;
        self.vars[self.next - 1]
    }
}

impl AutoencoderModel {
    /// Fresh model with Glorot-uniform weights and zero biases. `topology` is
    /// the graph the model runs on (static for MLP/GCN, spatiotemporal with
    /// `timesteps` history otherwise).
    pub fn new(config: ModelConfig, topology: &GraphTopology, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        check_topology(&config, topology)?;
        let n_base = topology.n_base();
        let n_relations = topology.n_relations();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec(&config, n_base, n_relations)
            .shapes
            .into_iter()
            .map(|(name, r, c, init)| {
                let value = match init {
                    Init::Zero => Tensor::zeros(r, c),
                    Init::One => Tensor::filled(r, c, 1.0),
                    Init::Glorot => {
                        let a = (6.0 / (r + c) as f64).sqrt();
                        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-a..a) as f32).collect())
                    }
                };
                Parameter { name, value }
            })
            .collect();
        Ok(AutoencoderModel {
            config,
            n_base,
            n_relations,
            params,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        n_base: usize,
        n_relations: usize,
        params: Vec<Parameter>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = spec(&config, n_base, n_relations).shapes;
        if expected.len() != params.len() {
            return Err(ModelError::BadCheckpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, r, c, _), p) in expected.iter().zip(&params) {
            if *name != p.name || (*r, *c) != p.value.shape() {
                return Err(ModelError::BadCheckpoint(format!(
                    "tensor `{}` {:?} does not match expected `{name}` ({r}, {c})",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(AutoencoderModel {
            config,
            n_base,
            n_relations,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_base(&self) -> usize {
        self.n_base
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Checks that `topology` is the graph this model was built for.
    pub fn check_topology(&self, topology: &GraphTopology) -> Result<(), ModelError> {
        check_topology(&self.config, topology)?;
        if topology.n_base() != self.n_base || topology.n_relations() != self.n_relations {
            return Err(ModelError::ConfigMismatch(format!(
                "model expects {} nodes per slice and {} relations, topology has {} and {}",
                self.n_base,
                self.n_relations,
                topology.n_base(),
                topology.n_relations()
            )));
        }
        Ok(())
    }

    /// Puts every parameter on `tape`, as trainable leaves or constants.
    pub fn bind<T: Element>(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.cast(), trainable))
            .collect()
    }

    /// Forward pass for a batch of `plan.batch()` windows stacked row-wise,
    /// each `[nodes_per_graph x 3]` in slice-major order. Returns the
    /// reconstruction of the current slice, `[batch * n_base x 3]`.
    /// `dropout_seed` enables dropout.
    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        input: Var,
        plan: &BatchPlan,
        dropout_seed: Option<u64>,
    ) -> Result<Var, ModelError> {
        let cfg = &self.config;
        if vars.len() != self.params.len() {
            return Err(ModelError::ConfigMismatch("parameter count mismatch".into()));
        }
        if plan.n_base != self.n_base || plan.n_slices != cfg.n_slices() {
            return Err(ModelError::ConfigMismatch(format!(
                "plan has {} slices of {} nodes, model expects {} of {}",
                plan.n_slices,
                plan.n_base,
                cfg.n_slices(),
                self.n_base
            )));
        }
        if tape.shape(input) != (plan.input_rows(), N_FEATURES) {
            return Err(ModelError::ConfigMismatch(format!(
                "input shape {:?}, expected ({}, {N_FEATURES})",
                tape.shape(input),
                plan.input_rows()
            )));
        }
        let mut p = Bound {
            vars,
            names: self.params.iter().map(|p| p.name.as_str()).collect(),
            next: 0,
        };
        let mut salt = 0u64;
        let mut drop = |tape: &mut Tape<T>, x: Var| -> Result<Var, ModelError> {
            salt += 1;
            match dropout_seed {
                Some(seed) if cfg.dropout > 0.0 => Ok(tape.dropout(x, cfg.dropout, mix(seed, salt))?),
                _ => Ok(x),
            }
        };

        if cfg.architecture == Architecture::Mlp {
            let mut h = input;
            for _ in 0..cfg.n_layers {
                h = linear(tape, &mut p, h)?;
                h = tape.relu(h);
                h = drop(tape, h)?;
            }
            h = linear(tape, &mut p, h)?;
            for _ in 0..cfg.n_layers {
                h = linear(tape, &mut p, h)?;
                h = tape.relu(h);
                h = drop(tape, h)?;
            }
            return linear(tape, &mut p, h);
        }

        let mut h = input;
        for _ in 0..cfg.n_layers {
            h = self.graph_layer(tape, &mut p, h, plan)?;
            h = tape.relu(h);
            h = drop(tape, h)?;
        }
        let pooled = tape.mean_pool_rows(h, plan.pool_offsets.clone())?;
        let z = linear(tape, &mut p, pooled)?;
        let proj = linear(tape, &mut p, z)?;
        let mut h = tape.reshape(proj, plan.input_rows(), cfg.latent_dim)?;
        for _ in 0..cfg.n_layers {
            h = self.graph_layer(tape, &mut p, h, plan)?;
            h = tape.relu(h);
            h = drop(tape, h)?;
        }
        let out = linear(tape, &mut p, h)?;
        if plan.n_slices == 1 {
            Ok(out)
        } else {
            Ok(tape.gather(out, plan.current.clone())?)
        }
    }

    fn graph_layer<T: Element>(
        &self,
        tape: &mut Tape<T>,
        p: &mut Bound<'_>,
        h: Var,
        plan: &BatchPlan,
    ) -> Result<Var, ModelError> {
        let cfg = &self.config;
        match &plan.messages {
            LayerMessages::Gcn(m) => {
                let w = p.take(".w");
                let b = p.take(".b");
                gcn_layer(tape, h, w, Some(b), m)
            }
            LayerMessages::Gat(m) => {
                let heads: Vec<AttentionHead> = (0..cfg.gat_heads)
                    .map(|_| AttentionHead {
                        w: p.take(".w"),
                        a: p.take(".a"),
                    })
                    .collect();
                let b = p.take(".b");
                Ok(gat_layer(tape, h, &heads, Some(b), m)?.0)
            }
            LayerMessages::Rgcn(m) => {
                let w0 = p.take(".w0");
                let ws: Vec<Var> = (0..self.n_relations).map(|_| p.take(".w")).collect();
                let scales: Option<Vec<Var>> = cfg
                    .rgcn_learned_norm
                    .then(|| (0..self.n_relations).map(|_| p.take(".scale")).collect());
                let b = p.take(".b");
                rgcn_layer(tape, h, w0, &ws, scales.as_deref(), Some(b), m)
            }
            LayerMessages::None => Err(ModelError::ConfigMismatch(
                "plan was built for a different architecture".into(),
            )),
        }
    }

    /// Inference without gradients.
    pub fn reconstruct(&self, plan: &BatchPlan, input: Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        let mut tape = Tape::<f32>::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(input);
        let out = self.forward(&mut tape, &vars, x, plan, None)?;
        Ok(tape.value(out).clone())
    }

    /// A plan for running this model on `topology` with `batch` windows.
    pub fn plan(&self, topology: &GraphTopology, batch: usize) -> Result<BatchPlan, ModelError> {
        self.check_topology(topology)?;
        Ok(BatchPlan::new(
            topology,
            self.config.architecture,
            self.config.gat_self_loops,
            batch,
        ))
    }
}

fn check_topology(cfg: &ModelConfig, top: &GraphTopology) -> Result<(), ModelError> {
    if top.n_slices() != cfg.n_slices() {
        return Err(ModelError::ConfigMismatch(format!(
            "{} with history {} needs {} slices, topology has {}",
            cfg.architecture,
            cfg.timesteps,
            cfg.n_slices(),
            top.n_slices()
        )));
    }
    Ok(())
}

fn linear<T: Element>(tape: &mut Tape<T>, p: &mut Bound<'_>, x: Var) -> Result<Var, ModelError> {
    let w = p.take(".w");
    let b = p.take(".b");
    let xw = tape.matmul(x, w)?;
    Ok(tape.add(xw, b)?)
}

use crate::autodiff::Tape;
use crate::data::{SensorGrid, N_FEATURES};
use crate::exec::Execution;
use crate::graph::GraphTopology;
use crate::models::AutoencoderModel;

use super::windows::{target_batch, window_batch};
use super::TrainError;

/// Windows scored per forward pass. Results do not depend on it.
pub const SCORE_BATCH: usize = 32;

/// Squared reconstruction errors per (time, node, feature).
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionErrors {
    times: Vec<usize>,
    n_nodes: usize,
    sq: Vec<f64>,
}

impl ReconstructionErrors {
    pub fn new(times: Vec<usize>, n_nodes: usize, sq: Vec<f64>) -> Self {
        assert_eq!(sq.len(), times.len() * n_nodes * N_FEATURES);
        ReconstructionErrors { times, n_nodes, sq }
    }

    /// Grid time indices, one per row.
    pub fn times(&self) -> &[usize] {
        &self.times
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    #[inline]
    pub fn feature_error(&self, row: usize, node: usize, f: usize) -> f64 {
        self.sq[(row * self.n_nodes + node) * N_FEATURES + f]
    }

    /// e_i(t): squared error summed over the three features.
    #[inline]
    pub fn node_error(&self, row: usize, node: usize) -> f64 {
        let b = (row * self.n_nodes + node) * N_FEATURES;
        self.sq[b] + self.sq[b + 1] + self.sq[b + 2]
    }

    /// Mean per-node error, the quantity training minimizes.
    pub fn mean(&self) -> f64 {
        let cells = self.times.len() * self.n_nodes;
        if cells == 0 {
            return f64::NAN;
        }
        let s: f64 = (0..self.times.len())
            .flat_map(|r| (0..self.n_nodes).map(move |i| (r, i)))
            .map(|(r, i)| self.node_error(r, i))
            .sum();
        s / cells as f64
    }
}

/// Reconstructs the current slice at each of `times` and records squared
/// errors. Batches are spread over `exec`; values are identical for any
/// execution mode.
pub fn reconstruction_errors(
    model: &AutoencoderModel,
    grid: &SensorGrid,
    topology: &GraphTopology,
    times: &[usize],
    exec: Execution,
) -> Result<ReconstructionErrors, TrainError> {
    model.check_topology(topology)?;
    if grid.n_nodes() != model.n_base() {
        return Err(TrainError::ShapeMismatch(format!(
            "grid has {} nodes, model expects {}",
            grid.n_nodes(),
            model.n_base()
        )));
    }
    let n_slices = model.config().n_slices();
    let n_chunks = times.len().div_ceil(SCORE_BATCH);
    let full = model.plan(topology, SCORE_BATCH.min(times.len().max(1)))?;
    let tail_len = times.len() % SCORE_BATCH;
    let tail = if tail_len > 0 && n_chunks > 1 {
        Some(model.plan(topology, tail_len)?)
    } else {
        None
    };
    let chunks = exec.map(n_chunks, |c| {
        let ts = &times[c * SCORE_BATCH..((c + 1) * SCORE_BATCH).min(times.len())];
        let plan = match &tail {
            Some(p) if ts.len() == tail_len => p,
            _ => &full,
        };
        let mut tape = Tape::<f32>::with_execution(Execution::Sequential);
        let vars = model.bind(&mut tape, false);
        let x = tape.constant(window_batch(grid, ts, n_slices));
        let out = model.forward(&mut tape, &vars, x, plan, None)?;
        let target = target_batch(grid, ts);
        Ok::<_, TrainError>(
            tape.value(out)
                .data()
                .iter()
                .zip(target.data())
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .collect::<Vec<f64>>(),
        )
    });
    let mut sq = Vec::with_capacity(times.len() * grid.n_nodes() * N_FEATURES);
    for c in chunks {
        sq.extend(c?);
    }
    Ok(ReconstructionErrors::new(times.to_vec(), grid.n_nodes(), sq))
}

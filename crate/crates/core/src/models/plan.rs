use std::sync::Arc;

use crate::autodiff::SparseRows;
use crate::graph::GraphTopology;

use super::Architecture;

/// Directed messages `src -> dst` with a fixed coefficient per message.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMessages {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub coef: Arc<[f64]>,
    pub n_nodes: usize,
}

impl WeightedMessages {
    fn from_lists(src: Vec<usize>, dst: Vec<usize>, coef: Vec<f64>, n_nodes: usize) -> Self {
        WeightedMessages {
            src: src.into(),
            dst: dst.into(),
            coef: coef.into(),
            n_nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// The messages as a sparse operator on node rows.
    pub fn operator(&self) -> SparseRows {
        SparseRows {
            src: self.src.clone(),
            dst: self.dst.clone(),
            coef: self.coef.clone(),
            n_out: self.n_nodes,
        }
    }

    /// `batch` disjoint copies.
    pub fn batched(&self, batch: usize) -> Self {
        let n = self.n_nodes;
        let rep = |v: &[usize]| -> Vec<usize> { (0..batch).flat_map(|b| v.iter().map(move |&i| i + b * n)).collect() };
        WeightedMessages::from_lists(
            rep(&self.src),
            rep(&self.dst),
            (0..batch).flat_map(|_| self.coef.iter().copied()).collect(),
            n * batch,
        )
    }
}

fn directed(top: &GraphTopology) -> impl Iterator<Item = (usize, usize, u8)> + '_ {
    top.edges()
        .iter()
        .flat_map(|e| [(e.u, e.v, e.relation), (e.v, e.u, e.relation)])
}

/// Symmetric-normalized messages with self loops: `j -> i` weighted
/// `1 / sqrt(d_i d_j)`, where `d` counts the self loop.
pub fn gcn_messages(top: &GraphTopology) -> WeightedMessages {
    let n = top.n_nodes();
    let deg: Vec<f64> = top.degrees().iter().map(|&d| d as f64 + 1.0).collect();
    let (mut src, mut dst, mut coef) = (Vec::new(), Vec::new(), Vec::new());
    for (i, d) in deg.iter().enumerate() {
        src.push(i);
        dst.push(i);
        coef.push(1.0 / d);
    }
    for (u, v, _) in directed(top) {
        src.push(u);
        dst.push(v);
        coef.push(1.0 / (deg[u] * deg[v]).sqrt());
    }
    WeightedMessages::from_lists(src, dst, coef, n)
}

/// Attention neighborhoods: messages grouped by destination, one contiguous
/// segment per node.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMessages {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub offsets: Arc<[usize]>,
    pub n_nodes: usize,
}

impl AttentionMessages {
    pub fn new(top: &GraphTopology, self_loops: bool) -> Self {
        let n = top.n_nodes();
        let mut incoming = vec![Vec::new(); n];
        for (u, v, _) in directed(top) {
            incoming[v].push(u);
        }
        let (mut src, mut dst, mut offsets) = (Vec::new(), Vec::new(), vec![0]);
        for (i, inc) in incoming.iter_mut().enumerate() {
            if self_loops {
                inc.push(i);
            }
            inc.sort_unstable();
            for &j in inc.iter() {
                src.push(j);
                dst.push(i);
            }
            offsets.push(src.len());
        }
        AttentionMessages {
            src: src.into(),
            dst: dst.into(),
            offsets: offsets.into(),
            n_nodes: n,
        }
    }

    pub fn batched(&self, batch: usize) -> Self {
        let n = self.n_nodes;
        let m = self.src.len();
        let rep = |v: &[usize], step: usize| -> Vec<usize> {
            (0..batch).flat_map(|b| v.iter().map(move |&i| i + b * step)).collect()
        };
        let mut offsets = vec![0];
        for b in 0..batch {
            offsets.extend(self.offsets[1..].iter().map(|&o| o + b * m));
        }
        AttentionMessages {
            src: rep(&self.src, n).into(),
            dst: rep(&self.dst, n).into(),
            offsets: offsets.into(),
            n_nodes: n * batch,
        }
    }
}

/// One message list per relation, weighted `1 / |N_i^r|`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationalMessages {
    pub relations: Vec<WeightedMessages>,
    pub n_nodes: usize,
}

impl RelationalMessages {
    pub fn new(top: &GraphTopology) -> Self {
        let n = top.n_nodes();
        let r = top.n_relations();
        let mut count = vec![0usize; n * r];
        for (_, v, rel) in directed(top) {
            count[v * r + rel as usize] += 1;
        }
        let mut lists = vec![(Vec::new(), Vec::new(), Vec::new()); r];
        for (u, v, rel) in directed(top) {
            let l = &mut lists[rel as usize];
            l.0.push(u);
            l.1.push(v);
            l.2.push(1.0 / count[v * r + rel as usize] as f64);
        }
        RelationalMessages {
            relations: lists
                .into_iter()
                .map(|(s, d, c)| WeightedMessages::from_lists(s, d, c, n))
                .collect(),
            n_nodes: n,
        }
    }

    pub fn batched(&self, batch: usize) -> Self {
        RelationalMessages {
            relations: self.relations.iter().map(|m| m.batched(batch)).collect(),
            n_nodes: self.n_nodes * batch,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum LayerMessages {
    None,
    Gcn(WeightedMessages),
    Gat(AttentionMessages),
    Rgcn(RelationalMessages),
}

/// Index structures for running a model on `batch` disjoint copies of one
/// topology, stacked row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub(crate) batch: usize,
    pub(crate) nodes_per_graph: usize,
    pub(crate) n_base: usize,
    pub(crate) n_slices: usize,
    pub(crate) pool_offsets: Arc<[usize]>,
    /// Current-slice rows of every graph, in order.
    pub(crate) current: Arc<[usize]>,
    pub(crate) messages: LayerMessages,
}

impl BatchPlan {
    pub fn new(top: &GraphTopology, arch: Architecture, gat_self_loops: bool, batch: usize) -> Self {
        let n = top.n_nodes();
        let nb = top.n_base();
        let last = (top.n_slices() - 1) * nb;
        let messages = match arch {
            Architecture::Mlp => LayerMessages::None,
            Architecture::Gcn | Architecture::StgGcn => LayerMessages::Gcn(gcn_messages(top).batched(batch)),
            Architecture::StgGat => LayerMessages::Gat(AttentionMessages::new(top, gat_self_loops).batched(batch)),
            Architecture::StgRgcn => LayerMessages::Rgcn(RelationalMessages::new(top).batched(batch)),
        };
        BatchPlan {
            batch,
            nodes_per_graph: n,
            n_base: nb,
            n_slices: top.n_slices(),
            pool_offsets: (0..=batch).map(|b| b * n).collect::<Vec<_>>().into(),
            current: (0..batch)
                .flat_map(|b| (0..nb).map(move |i| b * n + last + i))
                .collect::<Vec<_>>()
                .into(),
            messages,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn nodes_per_graph(&self) -> usize {
        self.nodes_per_graph
    }

    pub fn n_base(&self) -> usize {
        self.n_base
    }

    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    pub fn input_rows(&self) -> usize {
        self.batch * self.nodes_per_graph
    }
}

//! Static freeway graph and the relational spatiotemporal graph.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationClass {
    SpatialLateral = 0,
    SpatialLongitudinal = 1,
    TemporalSelf = 2,
    TemporalLateral = 3,
    TemporalLongitudinal = 4,
}

impl RelationClass {
    pub const ALL: [RelationClass; 5] = [
        RelationClass::SpatialLateral,
        RelationClass::SpatialLongitudinal,
        RelationClass::TemporalSelf,
        RelationClass::TemporalLateral,
        RelationClass::TemporalLongitudinal,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_temporal(self) -> bool {
        self.index() >= 2
    }
}

/// How edge classes map to relation ids.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RelationScheme {
    /// One relation per [`RelationClass`].
    #[default]
    Full,
    /// Two relations: spatial and temporal.
    SpatialTemporal,
}

impl RelationScheme {
    pub fn n_relations(self) -> usize {
        match self {
            RelationScheme::Full => 5,
            RelationScheme::SpatialTemporal => 2,
        }
    }

    pub fn relation(self, class: RelationClass) -> u8 {
        match self {
            RelationScheme::Full => class.index() as u8,
            RelationScheme::SpatialTemporal => class.is_temporal() as u8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub relation: u8,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("topology is already spatiotemporal")]
    NotStatic,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Undirected graph over `n_slices` copies of a milemarker x lane grid.
///
/// Node `slice * n_base + mm_index * n_lanes + (lane - 1)`; slice 0 is the
/// oldest and slice `n_slices - 1` the current time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphTopology {
    n_milemarkers: usize,
    n_lanes: usize,
    n_slices: usize,
    n_relations: usize,
    edges: Vec<Edge>,
}

impl GraphTopology {
    /// Validates edges and sorts them.
    pub fn new(
        n_milemarkers: usize,
        n_lanes: usize,
        n_slices: usize,
        n_relations: usize,
        mut edges: Vec<Edge>,
    ) -> Result<Self, GraphError> {
        let n = n_milemarkers * n_lanes * n_slices;
        for e in &edges {
            if e.u >= e.v {
                return Err(GraphError::Invalid(format!("edge ({}, {}) must have u < v", e.u, e.v)));
            }
            if e.v >= n {
                return Err(GraphError::Invalid(format!("node {} out of range", e.v)));
            }
            if e.relation as usize >= n_relations {
                return Err(GraphError::Invalid(format!("relation {} out of range", e.relation)));
            }
        }
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(GraphError::Invalid("duplicate edge".into()));
        }
        Ok(GraphTopology {
            n_milemarkers,
            n_lanes,
            n_slices,
            n_relations,
            edges,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_base() * self.n_slices
    }

    /// Nodes per time slice.
    pub fn n_base(&self) -> usize {
        self.n_milemarkers * self.n_lanes
    }

    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    /// History length: number of previous slices.
    pub fn k(&self) -> usize {
        self.n_slices - 1
    }

    pub fn n_lanes(&self) -> usize {
        self.n_lanes
    }

    pub fn n_milemarkers(&self) -> usize {
        self.n_milemarkers
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_static(&self) -> bool {
        self.n_slices == 1
    }

    pub fn slice_of(&self, node: usize) -> usize {
        node / self.n_base()
    }

    /// `(mm_index, lane)` with 1-based lane.
    pub fn base_of(&self, node: usize) -> (usize, u8) {
        let b = node % self.n_base();
        (b / self.n_lanes, (b % self.n_lanes + 1) as u8)
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_nodes()];
        for e in &self.edges {
            d[e.u] += 1;
            d[e.v] += 1;
        }
        d
    }

    /// Edge list text: header `nodes=<n> relations=<r>`, then `u,v,relation`.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("nodes={} relations={}\n", self.n_nodes(), self.n_relations);
        for e in &self.edges {
            writeln!(s, "{},{},{}", e.u, e.v, e.relation).unwrap();
        }
        s
    }

    /// Parses an edge list as written by [`to_edge_list`](Self::to_edge_list).
    /// The result is a single-slice, single-lane topology over `n` nodes.
    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let parse_err = |line, reason: &str| GraphError::Parse {
            line,
            reason: reason.to_string(),
        };
        let mut n = None;
        let mut r = None;
        for part in header.split_whitespace() {
            match part.split_once('=') {
                Some(("nodes", v)) => n = v.parse::<usize>().ok(),
                Some(("relations", v)) => r = v.parse::<usize>().ok(),
                _ => return Err(parse_err(1, "bad header")),
            }
        }
        let (n, r) = n.zip(r).ok_or_else(|| parse_err(1, "bad header"))?;
        let mut edges = Vec::new();
        for (i, l) in lines.enumerate() {
            if l.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = l.split(',').collect();
            let bad = || parse_err(i + 2, "expected `u,v,relation`");
            if f.len() != 3 {
                return Err(bad());
            }
            edges.push(Edge {
                u: f[0].trim().parse().map_err(|_| bad())?,
                v: f[1].trim().parse().map_err(|_| bad())?,
                relation: f[2].trim().parse().map_err(|_| bad())?,
            });
        }
        GraphTopology::new(n, 1, 1, r, edges)
    }
}

fn edge(a: usize, b: usize, relation: u8) -> Edge {
    Edge {
        u: a.min(b),
        v: a.max(b),
        relation,
    }
}

/// Lateral edges between adjacent lanes at each milemarker and longitudinal
/// edges between every lane pair at consecutive milemarkers.
pub fn build_static_topology(n_milemarkers: usize, n_lanes: usize) -> GraphTopology {
    build_static_topology_with(n_milemarkers, n_lanes, RelationScheme::Full)
}

pub fn build_static_topology_with(n_milemarkers: usize, n_lanes: usize, scheme: RelationScheme) -> GraphTopology {
    let lat = scheme.relation(RelationClass::SpatialLateral);
    let lon = scheme.relation(RelationClass::SpatialLongitudinal);
    let id = |m: usize, l: usize| m * n_lanes + l;
    let mut edges = Vec::new();
    for m in 0..n_milemarkers {
        for l in 0..n_lanes.saturating_sub(1) {
            edges.push(edge(id(m, l), id(m, l + 1), lat));
        }
        if m + 1 < n_milemarkers {
            for a in 0..n_lanes {
                for b in 0..n_lanes {
                    edges.push(edge(id(m, a), id(m + 1, b), lon));
                }
            }
        }
    }
    GraphTopology::new(n_milemarkers, n_lanes, 1, scheme.n_relations(), edges).expect("static construction is valid")
}

/// Replicates `base` over slices `t-k ..= t` and links consecutive slices.
pub fn build_st_topology(base: &GraphTopology, k: usize) -> Result<GraphTopology, GraphError> {
    build_st_topology_with(base, k, RelationScheme::Full)
}

pub fn build_st_topology_with(
    base: &GraphTopology,
    k: usize,
    scheme: RelationScheme,
) -> Result<GraphTopology, GraphError> {
    if !base.is_static() {
        return Err(GraphError::NotStatic);
    }
    let nb = base.n_base();
    let n_lanes = base.n_lanes;
    let n_mm = base.n_milemarkers;
    let mut edges = Vec::with_capacity(base.edges.len() * (k + 1));
    for s in 0..=k {
        for e in &base.edges {
            edges.push(Edge {
                u: e.u + s * nb,
                v: e.v + s * nb,
                relation: e.relation,
            });
        }
    }
    let selfr = scheme.relation(RelationClass::TemporalSelf);
    let lat = scheme.relation(RelationClass::TemporalLateral);
    let lon = scheme.relation(RelationClass::TemporalLongitudinal);
    for s in 0..k {
        let (p, q) = (s * nb, (s + 1) * nb);
        for m in 0..n_mm {
            for a in 0..n_lanes {
                let i = m * n_lanes + a;
                edges.push(edge(p + i, q + i, selfr));
                for b in 0..n_lanes {
                    if a.abs_diff(b) == 1 {
                        edges.push(edge(p + i, q + m * n_lanes + b, lat));
                    }
                    for m2 in [m.wrapping_sub(1), m + 1] {
                        if m2 < n_mm {
                            edges.push(edge(p + i, q + m2 * n_lanes + b, lon));
                        }
                    }
                }
            }
        }
    }
    let r = base.n_relations.max(scheme.n_relations());
    GraphTopology::new(n_mm, n_lanes, k + 1, r, edges)
}

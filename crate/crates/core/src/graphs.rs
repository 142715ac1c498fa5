//! Undirected topologies, static combination matrices and spectral diagnostics.
//!
//! Agents are indexed `0..K`. Hypercube vertices are identified with `d`-bit
//! integers, so vertex `v` is adjacent to `v ^ (1 << j)` for every bit `j`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::linalg::{self, Matrix};

/// Default cap on the number of agents; dense eigensolvers are used everywhere.
pub const DEFAULT_MAX_AGENTS: usize = 256;

/// An undirected, simple graph on agents `0..num_agents`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_agents: usize,
    edges: BTreeSet<(usize, usize)>,
    name: String,
}

impl Graph {
    /// Builds a graph from an edge list. Edges are stored as `(min, max)`;
    /// repeated pairs collapse into one edge. Connectivity is not required
    /// here (see [`Graph::is_connected`]); the built-in generators always
    /// produce connected graphs.
    pub fn new<I>(num_agents: usize, edges: I, name: impl Into<String>) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if num_agents == 0 {
            return Err(invalid_param("graph needs at least one agent"));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= num_agents || b >= num_agents {
                return Err(invalid_input(format!(
                    "edge ({a}, {b}) has an endpoint outside [0, {num_agents})"
                )));
            }
            if a == b {
                return Err(invalid_input(format!("self-loop at agent {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            num_agents,
            edges: set,
            name: name.into(),
        })
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Whether entry `(a, b)` of a combination matrix may be nonzero.
    pub fn allows(&self, a: usize, b: usize) -> bool {
        a == b || self.has_edge(a, b)
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_agents];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_agents];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    fn bfs_distances(&self, adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_agents];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap_or(0);
            for &u in &adj[v] {
                if dist[u].is_none() {
                    dist[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.neighbors();
        self.bfs_distances(&adj, 0).iter().all(Option::is_some)
    }

    /// Longest shortest path, or `None` for a disconnected graph.
    pub fn diameter(&self) -> Option<usize> {
        let adj = self.neighbors();
        let mut best = 0;
        for s in 0..self.num_agents {
            for d in self.bfs_distances(&adj, s) {
                best = best.max(d?);
            }
        }
        Some(best)
    }

    pub fn adjacency(&self) -> Matrix {
        let k = self.num_agents;
        let mut a = Matrix::zeros(k, k);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(GraphDoc::from(self)).expect("graph document is plain data")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: GraphDoc = serde_json::from_value(value.clone())?;
        doc.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&GraphDoc::from(self))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let doc: GraphDoc = serde_json::from_str(&text)?;
        doc.try_into()
    }
}

/// On-disk form: `{"K": int, "edges": [[i, j], ...], "name": string}`.
#[derive(Debug, Serialize, Deserialize)]
struct GraphDoc {
    #[serde(rename = "K")]
    k: usize,
    edges: Vec<[usize; 2]>,
    name: String,
}

impl From<&Graph> for GraphDoc {
    fn from(g: &Graph) -> Self {
        Self {
            k: g.num_agents,
            edges: g.edges.iter().map(|&(a, b)| [a, b]).collect(),
            name: g.name.clone(),
        }
    }
}

impl TryFrom<GraphDoc> for Graph {
    type Error = Error;

    fn try_from(doc: GraphDoc) -> Result<Self> {
        Graph::new(doc.k, doc.edges.into_iter().map(|[a, b]| (a, b)), doc.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Path,
    Ring,
    Star,
    Complete,
    /// `size_param` is the dimension `d`; the graph has `2^d` agents.
    Hypercube,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Topology::Path => "path",
            Topology::Ring => "ring",
            Topology::Star => "star",
            Topology::Complete => "complete",
            Topology::Hypercube => "hypercube",
        };
        f.write_str(s)
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path" => Ok(Topology::Path),
            "ring" => Ok(Topology::Ring),
            "star" => Ok(Topology::Star),
            "complete" => Ok(Topology::Complete),
            "hypercube" => Ok(Topology::Hypercube),
            other => Err(invalid_param(format!("unknown topology '{other}'"))),
        }
    }
}

/// A topology family plus its size parameter, written `kind:size`
/// (for example `path:16` or `hypercube:4`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologySpec {
    pub kind: Topology,
    pub size: usize,
}

impl TopologySpec {
    pub fn build(&self) -> Result<Graph> {
        build_topology(self.kind, self.size)
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.size)
    }
}

impl FromStr for TopologySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, size) = s
            .split_once(':')
            .ok_or_else(|| invalid_param(format!("expected kind:size, got '{s}'")))?;
        let size = size
            .trim()
            .parse()
            .map_err(|_| invalid_param(format!("bad size in '{s}'")))?;
        Ok(Self {
            kind: kind.trim().parse()?,
            size,
        })
    }
}

pub fn build_topology(kind: Topology, size_param: usize) -> Result<Graph> {
    build_topology_capped(kind, size_param, DEFAULT_MAX_AGENTS)
}

pub fn build_topology_capped(
    kind: Topology,
    size_param: usize,
    max_agents: usize,
) -> Result<Graph> {
    if size_param == 0 {
        return Err(invalid_param(format!("{kind} needs a size parameter >= 1")));
    }
    let k = match kind {
        Topology::Hypercube => {
            if size_param >= usize::BITS as usize - 1 {
                return Err(invalid_param(format!(
                    "hypercube dimension {size_param} too large"
                )));
            }
            1usize << size_param
        }
        _ => size_param,
    };
    if k > max_agents {
        return Err(invalid_param(format!(
            "{kind}:{size_param} has {k} agents, above the limit of {max_agents}"
        )));
    }
    let edges: Vec<(usize, usize)> = match kind {
        Topology::Path => (1..k).map(|i| (i - 1, i)).collect(),
        Topology::Ring => {
            let mut e: Vec<_> = (1..k).map(|i| (i - 1, i)).collect();
            if k > 2 {
                e.push((0, k - 1));
            }
            e
        }
        Topology::Star => (1..k).map(|i| (0, i)).collect(),
        Topology::Complete => (0..k)
            .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
            .collect(),
        Topology::Hypercube => (0..k)
            .flat_map(|v| (0..size_param).map(move |b| (v, v ^ (1 << b))))
            .filter(|&(v, u)| v < u)
            .collect(),
    };
    let g = Graph::new(k, edges, format!("{kind}:{size_param}"))?;
    debug_assert!(g.is_connected());
    Ok(g)
}

/// Metropolis-Hastings weights: `1 / (1 + max(deg l, deg k))` on every edge,
/// with the diagonal absorbing the remainder of each row.
pub fn metropolis_weights(g: &Graph) -> Matrix {
    let k = g.num_agents();
    let deg = g.degrees();
    let mut a = Matrix::zeros(k, k);
    for (i, j) in g.edges() {
        let w = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    for i in 0..k {
        let off: f64 = (0..k).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        a[(i, i)] = 1.0 - off;
    }
    a
}

/// Combinatorial Laplacian `L = D − Adjacency`.
pub fn laplacian(g: &Graph) -> Matrix {
    let k = g.num_agents();
    let mut l = Matrix::zeros(k, k);
    for (i, j) in g.edges() {
        l[(i, j)] -= 1.0;
        l[(j, i)] -= 1.0;
        l[(i, i)] += 1.0;
        l[(j, j)] += 1.0;
    }
    l
}

/// Second-largest eigenvalue (by signed value) of a symmetric matrix.
pub fn second_eigenvalue(a: &Matrix) -> Result<f64> {
    let values = linalg::symmetric_eigenvalues_desc(a)?;
    values
        .get(1)
        .copied()
        .ok_or_else(|| invalid_input("second eigenvalue needs at least a 2x2 matrix"))
}

//! Interaction graphs: Laplacians, admissibility (connected / leader-rooted
//! spanning tree), follower matrices, spectral quantities, and the
//! relationship matrices tying cost budgets to initial states.

use crate::numkit::{self, Mat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("invalid edge ({i}, {j}): {reason}")]
    InvalidEdge { i: usize, j: usize, reason: String },
    #[error("operation requires a leader-following topology")]
    WrongKind,
    #[error("topology not admissible: {0}")]
    NotAdmissible(String),
    #[error(transparent)]
    Num(#[from] numkit::NumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Leaderless,
    LeaderFollowing,
}

/// Weighted edge with 1-based agent indices. For the leader-following kind,
/// edges touching agent 1 are directed leader -> follower; everything else
/// is undirected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Interaction topology. The edge list is the single source of truth;
/// Laplacians and spectra are always derived from it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Topology {
    kind: TopologyKind,
    agents: usize,
    edges: Vec<Edge>,
}

impl Topology {
    pub fn new(kind: TopologyKind, agents: usize, edges: Vec<Edge>) -> Result<Self, TopologyError> {
        if agents < 2 {
            return Err(TopologyError::TooFewAgents(agents));
        }
        for e in &edges {
            let bad = |reason: &str| TopologyError::InvalidEdge {
                i: e.from,
                j: e.to,
                reason: reason.to_string(),
            };
            if e.from < 1 || e.from > agents || e.to < 1 || e.to > agents {
                return Err(bad("agent index out of range"));
            }
            if e.from == e.to {
                return Err(bad("self-loop"));
            }
            if !(e.weight > 0.0) || !e.weight.is_finite() {
                return Err(bad("weight must be positive and finite"));
            }
            if kind == TopologyKind::LeaderFollowing && e.to == 1 {
                return Err(bad("the leader does not receive information; write leader edges as (1, follower)"));
            }
        }
        Ok(Topology { kind, agents, edges })
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// In-neighbor weight w_ji for each agent j: the agents i whose
    /// information agent j receives. Leaderless edges count both ways;
    /// the leader of a leader-following topology receives nothing.
    pub fn in_neighbors(&self) -> Vec<Vec<(usize, f64)>> {
        let mut nb = vec![Vec::new(); self.agents];
        for e in &self.edges {
            let (i, j, w) = (e.from - 1, e.to - 1, e.weight);
            nb[j].push((i, w));
            if !(self.kind == TopologyKind::LeaderFollowing && i == 0) {
                nb[i].push((j, w));
            }
        }
        nb
    }

    /// Graph Laplacian: degree sums on the diagonal, negated weights off it.
    /// For the leader-following kind the first row is zero.
    pub fn laplacian(&self) -> Mat {
        let n = self.agents;
        let mut l = Mat::zeros(n, n);
        for (j, nbrs) in self.in_neighbors().into_iter().enumerate() {
            for (i, w) in nbrs {
                l[(j, j)] += w;
                l[(j, i)] -= w;
            }
        }
        l
    }

    /// Connectivity (leaderless) or leader-rooted spanning tree
    /// (leader-following), decided exactly by graph search.
    pub fn is_admissible(&self) -> Admissibility {
        match self.kind {
            TopologyKind::Leaderless => {
                // Union-find over undirected edges.
                let mut parent: Vec<usize> = (0..self.agents).collect();
                fn find(parent: &mut [usize], mut x: usize) -> usize {
                    while parent[x] != x {
                        parent[x] = parent[parent[x]];
                        x = parent[x];
                    }
                    x
                }
                for e in &self.edges {
                    let (a, b) = (find(&mut parent, e.from - 1), find(&mut parent, e.to - 1));
                    if a != b {
                        parent[a] = b;
                    }
                }
                let root = find(&mut parent, 0);
                for v in 1..self.agents {
                    if find(&mut parent, v) != root {
                        return Admissibility {
                            admissible: false,
                            diagnosis: format!(
                                "disconnected: agents 1 and {} lie in different components",
                                v + 1
                            ),
                        };
                    }
                }
                Admissibility { admissible: true, diagnosis: "connected".into() }
            }
            TopologyKind::LeaderFollowing => {
                // Breadth-first search from the leader; leader edges are
                // one-way, follower edges two-way.
                let mut seen = vec![false; self.agents];
                seen[0] = true;
                let mut queue = vec![0usize];
                let adj = self.in_neighbors();
                // in_neighbors gives received-from lists; build forward lists.
                let mut fwd = vec![Vec::new(); self.agents];
                for (j, nbrs) in adj.iter().enumerate() {
                    for &(i, _) in nbrs {
                        fwd[i].push(j);
                    }
                }
                while let Some(v) = queue.pop() {
                    for &w in &fwd[v] {
                        if !seen[w] {
                            seen[w] = true;
                            queue.push(w);
                        }
                    }
                }
                match seen.iter().position(|s| !s) {
                    None => Admissibility {
                        admissible: true,
                        diagnosis: "leader reaches every follower".into(),
                    },
                    Some(j) => Admissibility {
                        admissible: false,
                        diagnosis: format!("follower {} is not reachable from the leader", j + 1),
                    },
                }
            }
        }
    }

    /// The follower-to-follower matrix L_ff + Lambda_fl of a leader-following
    /// topology: follower Laplacian plus the diagonal of leader edge weights.
    pub fn follower_matrix(&self) -> Result<Mat, TopologyError> {
        if self.kind != TopologyKind::LeaderFollowing {
            return Err(TopologyError::WrongKind);
        }
        let l = self.laplacian();
        Ok(l.slice(1, 1, self.agents - 1, self.agents - 1))
    }

    /// Spectral data of the structure matrix: eigenvalues with lambda_1 = 0
    /// prepended, the extreme nonzero eigenvalues, and an orthonormal basis.
    pub fn spectrum(&self) -> Result<Spectrum, TopologyError> {
        let adm = self.is_admissible();
        if !adm.admissible {
            return Err(TopologyError::NotAdmissible(adm.diagnosis));
        }
        match self.kind {
            TopologyKind::Leaderless => {
                let l = self.laplacian();
                let eig = numkit::sym_eig(&l)?;
                let n = self.agents;
                // Replace the kernel column with the exact 1/sqrt(N) vector,
                // then re-orthonormalize the rest against it (Gram-Schmidt).
                let mut basis = Mat::zeros(n, n);
                let inv_sqrt_n = 1.0 / (n as f64).sqrt();
                for i in 0..n {
                    basis.set(i, 0, inv_sqrt_n);
                }
                for c in 1..n {
                    let mut col: Vec<f64> = (0..n).map(|i| eig.vectors.get(i, c)).collect();
                    for prev in 0..c {
                        let dot: f64 = (0..n).map(|i| basis.get(i, prev) * col[i]).sum();
                        for i in 0..n {
                            col[i] -= dot * basis.get(i, prev);
                        }
                    }
                    let norm: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                    for i in 0..n {
                        basis.set(i, c, col[i] / norm);
                    }
                }
                let mut values = eig.values.clone();
                values[0] = 0.0;
                Ok(Spectrum {
                    eigenvalues: values.clone(),
                    lambda2: values[1],
                    lambda_n: values[n - 1],
                    basis,
                })
            }
            TopologyKind::LeaderFollowing => {
                let f = self.follower_matrix()?;
                let eig = numkit::sym_eig(&f)?;
                let mut values = vec![0.0];
                values.extend_from_slice(&eig.values);
                Ok(Spectrum {
                    lambda2: eig.values[0],
                    lambda_n: *eig.values.last().unwrap(),
                    eigenvalues: values,
                    basis: eig.vectors,
                })
            }
        }
    }
}

/// Admissibility verdict with a human-readable diagnosis.
#[derive(Clone, Debug)]
pub struct Admissibility {
    pub admissible: bool,
    pub diagnosis: String,
}

/// Structure-matrix spectrum. For leaderless topologies `basis` is the
/// orthonormal U = [1/sqrt(N), U_hat] diagonalizing the Laplacian; for
/// leader-following it diagonalizes the follower matrix.
#[derive(Clone, Debug)]
pub struct Spectrum {
    /// lambda_1 = 0 followed by the structure-matrix eigenvalues ascending.
    pub eigenvalues: Vec<f64>,
    pub lambda2: f64,
    pub lambda_n: f64,
    pub basis: Mat,
}

/// The matrix linking the budget to the initial states: complete-graph
/// Laplacian with weights 1/N (leaderless) or star-graph Laplacian with unit
/// weights (leader-following).
pub fn relationship_matrix(kind: TopologyKind, n: usize) -> Mat {
    assert!(n >= 2, "relationship matrix needs N >= 2");
    match kind {
        TopologyKind::Leaderless => {
            let mut m = Mat::identity(n);
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] -= 1.0 / n as f64;
                }
            }
            m
        }
        TopologyKind::LeaderFollowing => {
            let mut m = Mat::identity(n);
            m[(0, 0)] = (n - 1) as f64;
            for j in 1..n {
                m[(0, j)] = -1.0;
                m[(j, 0)] = -1.0;
            }
            m
        }
    }
}

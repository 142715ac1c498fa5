//! Finite-time consensus (FTC) matrix sequences.
//!
//! A sequence `A_1, …, A_τ` is an exact FTC sequence for a graph when
//! `A_τ ⋯ A_2 A_1 = (1/K) 1 1ᵀ`. Approximate sequences are measured by
//!
//! ```text
//! ε_τ = ‖A_τ ⋯ A_1 − (1/K) 1 1ᵀ‖₂
//! ```
//!
//! Two exact constructions are provided ([`hypercube_sequence`] and
//! [`laplacian_factor_sequence`]) together with two ways of degrading them
//! ([`truncate_sequence`] and [`perturb_sequence`]).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::graphs::{self, build_topology, Graph, Topology};
use crate::linalg::{self, Matrix};
use crate::mtx;

/// Row/column sums must equal one to this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-10;
/// Slack on spectral radius one.
pub const SPECTRAL_RADIUS_TOL: f64 = 1e-10;
/// Laplacian eigenvalues within this relative distance form one factor.
pub const EIGEN_MERGE_TOL: f64 = 1e-8;
const NONNEGATIVE_TOL: f64 = 1e-12;
const PERTURB_REL_TOL: f64 = 0.05;
const PERTURB_MAX_ITERS: usize = 60;

/// Per-matrix checks against the combination-matrix requirements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixCompliance {
    pub symmetric: bool,
    pub nonnegative: bool,
    pub doubly_stochastic: bool,
    pub spectral_radius_ok: bool,
}

impl MatrixCompliance {
    pub fn of(a: &Matrix) -> Self {
        let symmetric = linalg::is_square(a) && linalg::max_asymmetry(a) <= linalg::SYMMETRY_TOL;
        let nonnegative = a.iter().all(|&v| v >= -NONNEGATIVE_TOL);
        let doubly_stochastic = linalg::is_square(a) && stochastic_defect(a) <= STOCHASTIC_TOL;
        let spectral_radius_ok =
            linalg::is_square(a) && linalg::spectral_radius(a) <= 1.0 + SPECTRAL_RADIUS_TOL;
        Self {
            symmetric,
            nonnegative,
            doubly_stochastic,
            spectral_radius_ok,
        }
    }

    pub fn satisfies_assumption4(&self) -> bool {
        self.nonnegative && self.doubly_stochastic && self.spectral_radius_ok
    }
}

/// Compliance of a whole sequence. Primitivity is never tested: individual
/// FTC factors are routinely reducible (each hypercube factor is block
/// diagonal), so `primitive_skipped` is always set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub per_matrix: Vec<MatrixCompliance>,
    pub primitive_skipped: bool,
    pub overall_assumption4: bool,
}

impl ComplianceReport {
    pub fn summary(&self) -> String {
        let bad = self
            .per_matrix
            .iter()
            .filter(|c| !c.satisfies_assumption4())
            .count();
        if bad == 0 {
            "compliant".to_string()
        } else {
            format!("{bad}/{} matrices non-compliant", self.per_matrix.len())
        }
    }
}

pub fn check_assumption4(matrices: &[Matrix]) -> ComplianceReport {
    let per_matrix: Vec<_> = matrices.iter().map(MatrixCompliance::of).collect();
    let overall_assumption4 = per_matrix
        .iter()
        .all(MatrixCompliance::satisfies_assumption4);
    ComplianceReport {
        per_matrix,
        primitive_skipped: true,
        overall_assumption4,
    }
}

fn stochastic_defect(a: &Matrix) -> f64 {
    let rows = a.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = a.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// An ordered sequence of combination matrices over a graph, with its cached
/// `ε_τ` and compliance report.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSeq {
    matrices: Vec<Matrix>,
    graph: Graph,
    eps_tau: f64,
    compliance: ComplianceReport,
}

impl MatrixSeq {
    /// Validates shape, finiteness, sparsity against `graph` and double
    /// stochasticity, then caches `ε_τ` and the compliance report.
    pub fn new(graph: Graph, matrices: Vec<Matrix>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(invalid_param("a sequence needs at least one matrix"));
        }
        let k = graph.num_agents();
        for (idx, a) in matrices.iter().enumerate() {
            let j = idx + 1;
            if a.nrows() != k || a.ncols() != k {
                return Err(invalid_input(format!(
                    "A_{j} is {}x{}, expected {k}x{k}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if !linalg::all_finite(a) {
                return Err(invalid_input(format!("A_{j} has non-finite entries")));
            }
            for r in 0..k {
                for c in 0..k {
                    if a[(r, c)] != 0.0 && !graph.allows(r, c) {
                        return Err(invalid_input(format!(
                            "A_{j} has entry ({r}, {c}) outside the graph's edges"
                        )));
                    }
                }
            }
            let defect = stochastic_defect(a);
            if defect > STOCHASTIC_TOL {
                return Err(invalid_input(format!(
                    "A_{j} is not doubly stochastic (max |sum - 1| = {defect:e})"
                )));
            }
        }
        let eps_tau = epsilon_tau_of(&matrices)?;
        let compliance = check_assumption4(&matrices);
        Ok(Self {
            matrices,
            graph,
            eps_tau,
            compliance,
        })
    }

    pub fn tau(&self) -> usize {
        self.matrices.len()
    }

    pub fn num_agents(&self) -> usize {
        self.graph.num_agents()
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    /// `A_j` with the 1-based index used throughout the docs.
    pub fn matrix(&self, j: usize) -> &Matrix {
        &self.matrices[j - 1]
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn eps_tau(&self) -> f64 {
        self.eps_tau
    }

    pub fn compliance(&self) -> &ComplianceReport {
        &self.compliance
    }

    /// `A_τ ⋯ A_1`.
    pub fn product(&self) -> Matrix {
        linalg::ordered_product(self.num_agents(), &self.matrices)
    }

    /// Writes `meta.json` and `A_1.mtx … A_τ.mtx` (array layout) into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta = SeqMeta {
            tau: self.tau(),
            k: self.num_agents(),
            eps_tau: self.eps_tau,
            graph: self.graph.to_json(),
            compliance: self.compliance.clone(),
        };
        std::fs::write(
            dir.join("meta.json"),
            serde_json::to_string_pretty(&meta)? + "\n",
        )?;
        for (idx, a) in self.matrices.iter().enumerate() {
            mtx::write_array(dir.join(format!("A_{}.mtx", idx + 1)), a)?;
        }
        Ok(())
    }

    /// Reads a directory written by [`MatrixSeq::save`] and re-validates
    /// every invariant, including the cached `ε_τ`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: SeqMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let graph = Graph::from_json(&meta.graph)?;
        if graph.num_agents() != meta.k {
            return Err(Error::Format(format!(
                "meta K = {} but graph has {} agents",
                meta.k,
                graph.num_agents()
            )));
        }
        let matrices = (1..=meta.tau)
            .map(|j| mtx::read(dir.join(format!("A_{j}.mtx"))))
            .collect::<Result<Vec<_>>>()?;
        let seq = Self::new(graph, matrices)?;
        if (seq.eps_tau - meta.eps_tau).abs() > 1e-12 {
            return Err(Error::Format(format!(
                "stored eps_tau {} disagrees with recomputed {}",
                meta.eps_tau, seq.eps_tau
            )));
        }
        Ok(seq)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SeqMeta {
    tau: usize,
    #[serde(rename = "K")]
    k: usize,
    eps_tau: f64,
    graph: serde_json::Value,
    compliance: ComplianceReport,
}

/// `ε_τ` of an arbitrary list of square matrices of equal size.
pub fn epsilon_tau_of(matrices: &[Matrix]) -> Result<f64> {
    let first = matrices
        .first()
        .ok_or_else(|| invalid_input("empty matrix sequence"))?;
    let k = first.nrows();
    for a in matrices {
        if a.nrows() != k || a.ncols() != k {
            return Err(invalid_input(format!(
                "dimension mismatch: {}x{} in a sequence of {k}x{k} matrices",
                a.nrows(),
                a.ncols()
            )));
        }
    }
    let residual = linalg::ordered_product(k, matrices) - linalg::averaging_matrix(k);
    Ok(linalg::spectral_norm(&residual))
}

/// Recomputes `ε_τ` for a sequence (the cached value is [`MatrixSeq::eps_tau`]).
pub fn epsilon_tau(seq: &MatrixSeq) -> f64 {
    epsilon_tau_of(seq.matrices()).expect("MatrixSeq holds equally sized square matrices")
}

/// `A_j = ½ (I + Π_j)` where `Π_j` swaps every vertex with its bit-`j`
/// neighbour. The factors commute and their product is exact averaging.
pub fn hypercube_sequence(d: usize) -> Result<MatrixSeq> {
    if !(1..=8).contains(&d) {
        return Err(invalid_param(format!(
            "hypercube dimension must be in 1..=8, got {d}"
        )));
    }
    let graph = build_topology(Topology::Hypercube, d)?;
    let k = graph.num_agents();
    let matrices = (0..d)
        .map(|bit| {
            let mut a = Matrix::zeros(k, k);
            for v in 0..k {
                a[(v, v)] = 0.5;
                a[(v, v ^ (1 << bit))] = 0.5;
            }
            a
        })
        .collect();
    MatrixSeq::new(graph, matrices)
}

/// Order in which the factors `I − L/λ_j` are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorOrder {
    /// Largest eigenvalue first, then each next eigenvalue maximizes the
    /// product of distances to the ones already placed (ties go to the larger
    /// eigenvalue). Keeps every partial product of the cycle moderate.
    #[default]
    Leja,
    /// Largest eigenvalue first, strictly decreasing.
    Descending,
}

/// Distinct nonzero Laplacian eigenvalues, descending. Eigenvalues within
/// [`EIGEN_MERGE_TOL`] (relative) are merged into their mean.
pub fn distinct_laplacian_eigenvalues(g: &Graph) -> Result<Vec<f64>> {
    if !g.is_connected() {
        return Err(invalid_input(format!(
            "graph '{}' is disconnected",
            g.name()
        )));
    }
    let values = linalg::symmetric_eigenvalues_desc(&graphs::laplacian(g))?;
    let top = values.first().copied().unwrap_or(0.0);
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for v in values.into_iter().filter(|&v| v > EIGEN_MERGE_TOL * top) {
        match clusters.last_mut() {
            Some(c) if (c[0] - v).abs() <= EIGEN_MERGE_TOL * c[0] => c.push(v),
            _ => clusters.push(vec![v]),
        }
    }
    Ok(clusters
        .iter()
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect())
}

fn leja_order(desc: &[f64]) -> Vec<f64> {
    let mut remaining = desc.to_vec();
    let mut out = Vec::with_capacity(desc.len());
    if remaining.is_empty() {
        return out;
    }
    out.push(remaining.remove(0));
    while !remaining.is_empty() {
        // log-distances avoid overflow for long sequences
        let score = |c: f64| out.iter().map(|&o: &f64| (c - o).abs().ln()).sum::<f64>();
        let mut best = 0;
        for i in 1..remaining.len() {
            if score(remaining[i]) > score(remaining[best]) {
                best = i;
            }
        }
        out.push(remaining.remove(best));
    }
    out
}

/// FTC sequence from the Laplacian spectrum: `A_j = I − L/λ_j`, one factor per
/// distinct nonzero eigenvalue, in [`FactorOrder::Leja`] order.
pub fn laplacian_factor_sequence(g: &Graph) -> Result<MatrixSeq> {
    laplacian_factor_sequence_ordered(g, FactorOrder::default())
}

pub fn laplacian_factor_sequence_ordered(g: &Graph, order: FactorOrder) -> Result<MatrixSeq> {
    let desc = distinct_laplacian_eigenvalues(g)?;
    let k = g.num_agents();
    if desc.is_empty() {
        // single agent: averaging is the identity
        return MatrixSeq::new(g.clone(), vec![Matrix::identity(k, k)]);
    }
    let ordered = match order {
        FactorOrder::Leja => leja_order(&desc),
        FactorOrder::Descending => desc,
    };
    let l = graphs::laplacian(g);
    let eye = Matrix::identity(k, k);
    let matrices = ordered.iter().map(|&lam| &eye - &l / lam).collect();
    MatrixSeq::new(g.clone(), matrices)
}

/// Keeps `A_1 … A_{τ'}`.
pub fn truncate_sequence(seq: &MatrixSeq, tau_prime: usize) -> Result<MatrixSeq> {
    if tau_prime == 0 || tau_prime > seq.tau() {
        return Err(invalid_param(format!(
            "tau' must be in 1..={}, got {tau_prime}",
            seq.tau()
        )));
    }
    MatrixSeq::new(seq.graph().clone(), seq.matrices()[..tau_prime].to_vec())
}

/// Which entries a perturbation may touch (always symmetric, zero row sum).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbSupport {
    /// Edges carrying nonzero weight in the matrix being perturbed, plus the
    /// diagonal. Nonnegative factors stay nonnegative for small scales.
    #[default]
    MatrixPattern,
    /// Every graph edge plus the diagonal.
    GraphPattern,
}

/// Adds `s·E_j` to every matrix, where each `E_j` is a random symmetric
/// matrix with `E_j 1 = 0` on the chosen support, and `s` is found by
/// bisection so that `ε_τ` lands within 5% of `target_eps`.
pub fn perturb_sequence(seq: &MatrixSeq, target_eps: f64, seed: u64) -> Result<MatrixSeq> {
    perturb_sequence_with(seq, target_eps, seed, PerturbSupport::default())
}

pub fn perturb_sequence_with(
    seq: &MatrixSeq,
    target_eps: f64,
    seed: u64,
    support: PerturbSupport,
) -> Result<MatrixSeq> {
    let current = seq.eps_tau();
    if !target_eps.is_finite() || target_eps < current {
        return Err(invalid_param(format!(
            "target eps {target_eps} is below the sequence's current eps {current}"
        )));
    }
    if seq
        .matrices()
        .iter()
        .any(|a| linalg::max_asymmetry(a) > linalg::SYMMETRY_TOL)
    {
        return Err(invalid_input("perturbation needs symmetric matrices"));
    }
    if target_eps == current {
        return Ok(seq.clone());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = seq.num_agents();
    let directions: Vec<Matrix> = seq
        .matrices()
        .iter()
        .map(|a| {
            let mut e = Matrix::zeros(k, k);
            for (l, m) in seq.graph().edges() {
                if support == PerturbSupport::MatrixPattern && a[(l, m)] == 0.0 {
                    continue;
                }
                let c: f64 = rng.random_range(-1.0..1.0);
                e[(l, m)] += c;
                e[(m, l)] += c;
                e[(l, l)] -= c;
                e[(m, m)] -= c;
            }
            e
        })
        .collect();
    if directions.iter().all(|e| e.amax() == 0.0) {
        return Err(Error::Convergence(
            "no entries available to perturb on the chosen support".into(),
        ));
    }

    let apply = |s: f64| -> Vec<Matrix> {
        seq.matrices()
            .iter()
            .zip(&directions)
            .map(|(a, e)| a + e * s)
            .collect()
    };
    let eps_at = |s: f64| epsilon_tau_of(&apply(s)).expect("same shapes");

    let within = |v: f64| (v - target_eps).abs() <= PERTURB_REL_TOL * target_eps;
    let mut lo = 0.0;
    let mut hi = 1e-3;
    let mut bracketed = false;
    for _ in 0..PERTURB_MAX_ITERS {
        if eps_at(hi) >= target_eps {
            bracketed = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !bracketed {
        return Err(Error::Convergence(format!(
            "could not reach eps {target_eps} by scaling the perturbation"
        )));
    }
    let mut best = hi;
    for _ in 0..PERTURB_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let v = eps_at(mid);
        best = mid;
        if (v - target_eps).abs() <= 1e-9 * target_eps {
            break;
        }
        if v < target_eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let out = MatrixSeq::new(seq.graph().clone(), apply(best))?;
    if !within(out.eps_tau()) {
        return Err(Error::Convergence(format!(
            "bisection ended at eps {} for target {target_eps}",
            out.eps_tau()
        )));
    }
    Ok(out)
}

/// `‖Â_τ ⋯ Â_1‖₂` with `Â_j = (I − (1/K) 1 1ᵀ) A_j`.
pub fn contraction_norm(seq: &MatrixSeq) -> f64 {
    let k = seq.num_agents();
    let proj = linalg::centering_projector(k);
    let projected: Vec<Matrix> = seq.matrices().iter().map(|a| &proj * a).collect();
    linalg::spectral_norm(&linalg::ordered_product(k, &projected))
}

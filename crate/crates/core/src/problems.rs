//! Regularized logistic regression split across agents.
//!
//! Agent `k` holds `N` samples `(h_{k,n}, γ_{k,n})` with `γ ∈ {−1, +1}` and
//! minimizes
//!
//! ```text
//! J_k(w) = ρ/2 ‖w‖² + (1/N) Σ_n ln(1 + exp(−γ_{k,n} h_{k,n}ᵀ w))
//! ```
//!
//! The network minimizes the average `J(w) = (1/K) Σ_k J_k(w)`.

use std::path::Path;

use nalgebra::{DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::ftc::MatrixSeq;
use crate::linalg::Matrix;

pub type Vector = DVector<f64>;

/// Default centralized-solver iteration cap.
pub const MAX_SOLVER_ITERS: usize = 10_000;
const ARMIJO_C: f64 = 1e-4;
const BACKTRACK_SHRINK: f64 = 0.5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Generation parameters; defaults are the 16-agent experiment dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticSpec {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub rho: f64,
    pub heterogeneity: f64,
    pub seed: u64,
}

impl Default for LogisticSpec {
    fn default() -> Self {
        Self {
            k: 16,
            n: 15,
            m: 10,
            rho: 0.01,
            heterogeneity: 0.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    features: Vec<Matrix>,
    labels: Vec<Vec<f64>>,
    rho: f64,
    seed: Option<u64>,
    heterogeneity: f64,
}

impl Problem {
    /// `features[k]` is agent `k`'s `N × M` block, `labels[k]` its `N` labels.
    pub fn new(features: Vec<Matrix>, labels: Vec<Vec<f64>>, rho: f64) -> Result<Self> {
        if features.is_empty() {
            return Err(invalid_param("problem needs at least one agent"));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(invalid_param(format!("rho must be positive, got {rho}")));
        }
        if labels.len() != features.len() {
            return Err(invalid_input("one label vector per agent is required"));
        }
        let (n, m) = features[0].shape();
        if n == 0 || m == 0 {
            return Err(invalid_param("N and M must be at least 1"));
        }
        for (k, (h, y)) in features.iter().zip(&labels).enumerate() {
            if h.shape() != (n, m) || y.len() != n {
                return Err(invalid_input(format!(
                    "agent {k} has inconsistent data shape"
                )));
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err(invalid_input(format!("agent {k} has non-finite features")));
            }
            if y.iter().any(|&g| g != 1.0 && g != -1.0) {
                return Err(invalid_input(format!(
                    "agent {k} has labels outside {{-1, +1}}"
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            rho,
            seed: None,
            heterogeneity: 0.0,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.features.len()
    }

    pub fn samples_per_agent(&self) -> usize {
        self.features[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.features[0].ncols()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn heterogeneity(&self) -> f64 {
        self.heterogeneity
    }

    pub fn features(&self, k: usize) -> &Matrix {
        &self.features[k]
    }

    pub fn labels(&self, k: usize) -> &[f64] {
        &self.labels[k]
    }

    fn check(&self, k: usize, w: &[f64]) -> Result<()> {
        if k >= self.num_agents() {
            return Err(invalid_input(format!("agent {k} out of range")));
        }
        if w.len() != self.dim() {
            return Err(invalid_input(format!(
                "point has dimension {}, expected {}",
                w.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn margin(&self, k: usize, n: usize, w: &[f64]) -> f64 {
        let h = self.features[k].row(n);
        self.labels[k][n] * h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Adds `scale · ∇ loss_{k,n}(w)` (data term only) to `out`.
    fn add_sample_gradient(&self, k: usize, n: usize, w: &[f64], scale: f64, out: &mut [f64]) {
        let gamma = self.labels[k][n];
        let coef = -scale * gamma * sigmoid(-self.margin(k, n, w));
        for (o, h) in out.iter_mut().zip(self.features[k].row(n).iter()) {
            *o += coef * h;
        }
    }

    /// Writes `∇J_k(w)` (or the single-sample version when `sample` is set)
    /// into `out`. No shape checks; used by the steppers.
    pub(crate) fn gradient_into(
        &self,
        k: usize,
        w: &[f64],
        sample: Option<usize>,
        out: &mut [f64],
    ) {
        for (o, wi) in out.iter_mut().zip(w) {
            *o = self.rho * wi;
        }
        match sample {
            Some(n) => self.add_sample_gradient(k, n, w, 1.0, out),
            None => {
                let n_samples = self.samples_per_agent();
                let scale = 1.0 / n_samples as f64;
                for n in 0..n_samples {
                    self.add_sample_gradient(k, n, w, scale, out);
                }
            }
        }
    }

    pub fn local_cost(&self, k: usize, w: &[f64]) -> Result<f64> {
        self.check(k, w)?;
        Ok(self.local_cost_unchecked(k, w))
    }

    fn local_cost_unchecked(&self, k: usize, w: &[f64]) -> f64 {
        let n_samples = self.samples_per_agent();
        let data: f64 = (0..n_samples)
            .map(|n| softplus(-self.margin(k, n, w)))
            .sum::<f64>()
            / n_samples as f64;
        0.5 * self.rho * w.iter().map(|v| v * v).sum::<f64>() + data
    }

    /// Aggregate cost `J(w)`.
    pub fn cost(&self, w: &[f64]) -> Result<f64> {
        self.check(0, w)?;
        let k = self.num_agents();
        Ok((0..k).map(|a| self.local_cost_unchecked(a, w)).sum::<f64>() / k as f64)
    }

    pub fn local_gradient(&self, k: usize, w: &[f64]) -> Result<Vector> {
        self.check(k, w)?;
        let mut out = Vector::zeros(self.dim());
        self.gradient_into(k, w, None, out.as_mut_slice());
        Ok(out)
    }

    /// Gradient of the regularizer plus the loss of sample `n` alone.
    pub fn sample_gradient(&self, k: usize, n: usize, w: &[f64]) -> Result<Vector> {
        self.check(k, w)?;
        if n >= self.samples_per_agent() {
            return Err(invalid_input(format!("sample {n} out of range")));
        }
        let mut out = Vector::zeros(self.dim());
        self.gradient_into(k, w, Some(n), out.as_mut_slice());
        Ok(out)
    }

    /// One uniformly drawn sample index; the regularizer stays exact.
    pub fn stochastic_gradient<R: Rng + ?Sized>(
        &self,
        k: usize,
        w: &[f64],
        rng: &mut R,
    ) -> Result<Vector> {
        self.check(k, w)?;
        let n = rng.random_range(0..self.samples_per_agent());
        let mut out = Vector::zeros(self.dim());
        self.gradient_into(k, w, Some(n), out.as_mut_slice());
        Ok(out)
    }

    /// `∇J(w) = (1/K) Σ_k ∇J_k(w)`.
    pub fn gradient(&self, w: &[f64]) -> Result<Vector> {
        self.check(0, w)?;
        let k = self.num_agents();
        let mut acc = Vector::zeros(self.dim());
        let mut buf = vec![0.0; self.dim()];
        for a in 0..k {
            self.gradient_into(a, w, None, &mut buf);
            for (s, b) in acc.iter_mut().zip(&buf) {
                *s += b;
            }
        }
        Ok(acc / k as f64)
    }

    /// `∇²J(w)`; no shape checks.
    pub(crate) fn hessian(&self, w: &[f64]) -> Matrix {
        let m = self.dim();
        let mut hess = Matrix::identity(m, m) * self.rho;
        let scale = 1.0 / (self.num_agents() * self.samples_per_agent()) as f64;
        for (k, feats) in self.features.iter().enumerate() {
            for n in 0..feats.nrows() {
                let s = sigmoid(self.margin(k, n, w));
                let c = scale * s * (1.0 - s);
                let h = feats.row(n);
                for i in 0..m {
                    for j in 0..m {
                        hess[(i, j)] += c * h[i] * h[j];
                    }
                }
            }
        }
        hess
    }

    /// Writes `meta.json` (dimensions, ρ, seed, heterogeneity and labels) and
    /// `features.bin` (little-endian f64, agent-major, row-major per agent).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta = ProblemMeta {
            k: self.num_agents(),
            n: self.samples_per_agent(),
            m: self.dim(),
            rho: self.rho,
            seed: self.seed,
            heterogeneity: self.heterogeneity,
            labels: self.labels.clone(),
        };
        std::fs::write(
            dir.join("meta.json"),
            serde_json::to_string_pretty(&meta)? + "\n",
        )?;
        let mut blob = Vec::with_capacity(8 * meta.k * meta.n * meta.m);
        for h in &self.features {
            for r in 0..meta.n {
                for c in 0..meta.m {
                    blob.extend_from_slice(&h[(r, c)].to_le_bytes());
                }
            }
        }
        std::fs::write(dir.join("features.bin"), blob)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: ProblemMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let blob = std::fs::read(dir.join("features.bin"))?;
        let expected = 8 * meta.k * meta.n * meta.m;
        if blob.len() != expected {
            return Err(Error::Format(format!(
                "features.bin has {} bytes, expected {expected}",
                blob.len()
            )));
        }
        let mut values = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let features = (0..meta.k)
            .map(|_| {
                Matrix::from_row_iterator(meta.n, meta.m, values.by_ref().take(meta.n * meta.m))
            })
            .collect();
        let mut p = Problem::new(features, meta.labels, meta.rho)?;
        p.seed = meta.seed;
        p.heterogeneity = meta.heterogeneity;
        Ok(p)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemMeta {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    rho: f64,
    seed: Option<u64>,
    heterogeneity: f64,
    labels: Vec<Vec<f64>>,
}

/// Standard-normal features; labels drawn from a planted logistic model with
/// agent-specific truth `w_k* = w* + heterogeneity · ζ_k`.
pub fn generate_logistic(spec: &LogisticSpec) -> Result<Problem> {
    if spec.k == 0 || spec.n == 0 || spec.m == 0 {
        return Err(invalid_param("K, N and M must be at least 1"));
    }
    if !(spec.heterogeneity >= 0.0 && spec.heterogeneity.is_finite()) {
        return Err(invalid_param("heterogeneity must be a finite value >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let shared: Vec<f64> = (0..spec.m).map(|_| normal(&mut rng)).collect();
    let mut features = Vec::with_capacity(spec.k);
    let mut labels = Vec::with_capacity(spec.k);
    for _ in 0..spec.k {
        let truth: Vec<f64> = shared
            .iter()
            .map(|s| s + spec.heterogeneity * normal(&mut rng))
            .collect();
        let mut h = Matrix::zeros(spec.n, spec.m);
        for r in 0..spec.n {
            for c in 0..spec.m {
                h[(r, c)] = normal(&mut rng);
            }
        }
        let y: Vec<f64> = (0..spec.n)
            .map(|r| {
                let z: f64 = h.row(r).iter().zip(&truth).map(|(a, b)| a * b).sum();
                let u: f64 = rng.random();
                if u < sigmoid(z) {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        features.push(h);
        labels.push(y);
    }
    let mut p = Problem::new(features, labels, spec.rho)?;
    p.seed = Some(spec.seed);
    p.heterogeneity = spec.heterogeneity;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralSolution {
    pub w: Vector,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Minimizes `J` from the origin; see [`solve_centralized_from`].
pub fn solve_centralized(p: &Problem, tol: f64) -> Result<CentralSolution> {
    solve_centralized_from(p, &Vector::zeros(p.dim()), tol, MAX_SOLVER_ITERS)
}

/// Damped Newton with Armijo backtracking (c = 1e-4, shrink 0.5) until
/// `‖∇J(w)‖ ≤ tol`.
pub fn solve_centralized_from(
    p: &Problem,
    start: &Vector,
    tol: f64,
    max_iters: usize,
) -> Result<CentralSolution> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(invalid_param(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut w = start.clone();
    let mut f = p.cost(w.as_slice())?;
    let mut g = p.gradient(w.as_slice())?;
    for iter in 0..max_iters {
        let gn = g.norm();
        if gn <= tol {
            return Ok(CentralSolution {
                w,
                grad_norm: gn,
                iterations: iter,
            });
        }
        let dir = match p.hessian(w.as_slice()).cholesky() {
            Some(ch) => -ch.solve(&g),
            None => -&g,
        };
        let slope = g.dot(&dir);
        let mut t = 1.0_f64;
        loop {
            let cand = &w + &dir * t;
            let fc = p.cost(cand.as_slice())?;
            let armijo = fc <= f + ARMIJO_C * t * slope;
            // Close to the optimum the cost change drops below f64 resolution;
            // fall back to requiring a smaller gradient.
            let flat = (fc - f).abs() <= 1e-14 * f.abs().max(1.0);
            let gc = if armijo || flat {
                Some(p.gradient(cand.as_slice())?)
            } else {
                None
            };
            let accept = armijo || (flat && gc.as_ref().is_some_and(|gc| gc.norm() < gn));
            if accept {
                w = cand;
                f = fc;
                g = gc.expect("computed on acceptance");
                break;
            }
            t *= BACKTRACK_SHRINK;
            if t < 1e-30 {
                return Err(Error::Convergence(format!(
                    "line search failed at iteration {iter} with ||grad|| = {gn:e}"
                )));
            }
        }
    }
    Err(Error::Convergence(format!(
        "no convergence to ||grad|| <= {tol:e} within {max_iters} iterations"
    )))
}

/// Constants entering the convergence bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// strong-convexity modulus
    pub nu: f64,
    /// Lipschitz constant of every local gradient
    pub delta: f64,
    /// gradient heterogeneity bound
    #[serde(rename = "B")]
    pub b: f64,
    /// summed gradient-noise variance
    pub sigma2: f64,
    pub mu: f64,
    pub tau: usize,
    pub eps_tau: f64,
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateOptions {
    /// Whether the run uses single-sample gradients (σ² = 0 otherwise).
    pub stochastic: bool,
    /// Random probe points for B, in addition to w° and 0.
    pub probe_points: usize,
    pub probe_seed: u64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            stochastic: true,
            probe_points: 50,
            probe_seed: 0x5eed,
        }
    }
}

/// Largest eigenvalue of `HᵀH` for agent `k`.
fn gram_top_eigenvalue(h: &Matrix) -> f64 {
    let gram = h.transpose() * h;
    SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Heterogeneity `max_{k,ℓ} ‖∇J_k(w) − ∇J_ℓ(w)‖` at a single point.
pub fn gradient_spread(p: &Problem, w: &[f64]) -> Result<f64> {
    let grads = (0..p.num_agents())
        .map(|k| p.local_gradient(k, w))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0_f64;
    for a in 0..grads.len() {
        for b in (a + 1)..grads.len() {
            worst = worst.max((&grads[a] - &grads[b]).norm());
        }
    }
    Ok(worst)
}

/// Sum over agents of the variance of a uniformly drawn sample gradient at `w`.
pub fn sampling_variance(p: &Problem, w: &[f64]) -> Result<f64> {
    let n = p.samples_per_agent();
    let mut total = 0.0;
    for k in 0..p.num_agents() {
        let mean = p.local_gradient(k, w)?;
        for s in 0..n {
            total += (p.sample_gradient(k, s, w)? - &mean).norm_squared() / n as f64;
        }
    }
    Ok(total)
}

/// Estimates `(ν, δ, B, σ²)` for a problem and copies `τ, ε_τ, K` from `seq`.
///
/// * `δ = ρ + max_k λ_max(H_kᵀH_k)/(4N)` bounds every local Hessian.
/// * `ν = ρ`.
/// * `B` is the largest gradient spread over `w°`, `0` and random points in
///   the ball of radius `2‖w°‖` around the origin.
/// * `σ²` is the summed single-sample variance at `w°` (zero when
///   deterministic).
pub fn estimate_constants(
    p: &Problem,
    w_opt: &Vector,
    mu: f64,
    seq: &MatrixSeq,
    opts: &EstimateOptions,
) -> Result<BoundParams> {
    if seq.num_agents() != p.num_agents() {
        return Err(invalid_input(format!(
            "sequence has {} agents, problem has {}",
            seq.num_agents(),
            p.num_agents()
        )));
    }
    if w_opt.len() != p.dim() {
        return Err(invalid_input("w° has the wrong dimension"));
    }
    let n = p.samples_per_agent() as f64;
    let top = p
        .features
        .iter()
        .map(gram_top_eigenvalue)
        .fold(0.0, f64::max);
    let delta = p.rho + top / (4.0 * n);
    let nu = p.rho;

    let m = p.dim();
    let radius = 2.0 * w_opt.norm();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.probe_seed);
    let mut probes = vec![w_opt.clone(), Vector::zeros(m)];
    for _ in 0..opts.probe_points {
        let dir = Vector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u: f64 = rng.random();
        let r = radius * u.powf(1.0 / m as f64);
        let norm = dir.norm();
        probes.push(if norm > 0.0 {
            dir * (r / norm)
        } else {
            Vector::zeros(m)
        });
    }
    let mut b = 0.0_f64;
    for w in &probes {
        b = b.max(gradient_spread(p, w.as_slice())?);
    }

    let sigma2 = if opts.stochastic {
        sampling_variance(p, w_opt.as_slice())?
    } else {
        0.0
    };

    Ok(BoundParams {
        nu,
        delta,
        b,
        sigma2,
        mu,
        tau: seq.tau(),
        eps_tau: seq.eps_tau(),
        k: p.num_agents(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Problem {
        generate_logistic(&LogisticSpec {
            k: 4,
            n: 6,
            m: 3,
            rho: 0.05,
            heterogeneity: 0.5,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn default_dimensions() {
        let p = generate_logistic(&LogisticSpec::default()).unwrap();
        assert_eq!(
            (p.num_agents(), p.samples_per_agent(), p.dim()),
            (16, 15, 10)
        );
        assert_eq!(p.rho(), 0.01);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = LogisticSpec::default();
        assert_eq!(
            generate_logistic(&spec).unwrap(),
            generate_logistic(&spec).unwrap()
        );
        let other = LogisticSpec { seed: 2, ..spec };
        assert_ne!(
            generate_logistic(&spec).unwrap(),
            generate_logistic(&other).unwrap()
        );
    }

    #[test]
    fn gradient_at_origin() {
        let p = small();
        let w = vec![0.0; 3];
        for k in 0..4 {
            let g = p.local_gradient(k, &w).unwrap();
            let n = p.samples_per_agent();
            let mut expected = Vector::zeros(3);
            for s in 0..n {
                expected += p.features(k).row(s).transpose() * p.labels(k)[s];
            }
            expected *= -1.0 / (2.0 * n as f64);
            assert!((g - expected).amax() < 1e-15);
        }
    }

    #[test]
    fn zero_feature_problem_is_pure_regularizer() {
        let p = Problem::new(vec![Matrix::zeros(1, 2)], vec![vec![1.0]], 0.3).unwrap();
        let g = p.local_gradient(0, &[1.5, -2.0]).unwrap();
        assert!((g - Vector::from_vec(vec![0.45, -0.6])).amax() < 1e-15);
        let sol = solve_centralized(&p, 1e-12).unwrap();
        assert!(sol.w.amax() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let p = small();
        assert!(matches!(
            p.local_gradient(0, &[0.0; 2]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            p.local_gradient(9, &[0.0; 3]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn invalid_problems_rejected() {
        assert!(Problem::new(vec![Matrix::zeros(1, 2)], vec![vec![0.5]], 0.3).is_err());
        assert!(Problem::new(vec![Matrix::zeros(1, 2)], vec![vec![1.0]], 0.0).is_err());
        assert!(Problem::new(vec![], vec![], 0.1).is_err());
        assert!(solve_centralized(&small(), 0.0).is_err());
    }

    #[test]
    fn single_sample_stochastic_equals_full() {
        let p = generate_logistic(&LogisticSpec {
            k: 3,
            n: 1,
            m: 4,
            ..Default::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = [0.3, -0.1, 2.0, 0.0];
        for k in 0..3 {
            let full = p.local_gradient(k, &w).unwrap();
            let sg = p.stochastic_gradient(k, &w, &mut rng).unwrap();
            assert_eq!(full, sg);
        }
    }

    #[test]
    fn restart_from_optimum_takes_no_steps() {
        let p = small();
        let sol = solve_centralized(&p, 1e-10).unwrap();
        assert!(sol.grad_norm <= 1e-10);
        assert!(sol.iterations > 0);
        let again = solve_centralized_from(&p, &sol.w, 1e-10, 10).unwrap();
        assert_eq!(again.iterations, 0);
    }

    #[test]
    fn constants_special_cases() {
        // identical data at every agent: no heterogeneity
        let base = small();
        let h = base.features(0).clone();
        let y = base.labels(0).to_vec();
        let p = Problem::new(
            vec![h.clone(), h.clone(), h],
            vec![y.clone(), y.clone(), y],
            0.05,
        )
        .unwrap();
        let sol = solve_centralized(&p, 1e-10).unwrap();
        let g = crate::graphs::build_topology(crate::graphs::Topology::Path, 3).unwrap();
        let seq = crate::ftc::laplacian_factor_sequence(&g).unwrap();
        let det = EstimateOptions {
            stochastic: false,
            ..Default::default()
        };
        let bp = estimate_constants(&p, &sol.w, 0.1, &seq, &det).unwrap();
        assert!(bp.b <= 1e-12);
        assert_eq!(bp.sigma2, 0.0);
        assert_eq!(bp.nu, 0.05);
        assert!(bp.nu <= bp.delta);
        assert_eq!((bp.tau, bp.k), (2, 3));

        let zero =
            Problem::new(vec![Matrix::zeros(2, 2); 3], vec![vec![1.0, -1.0]; 3], 0.2).unwrap();
        let bp = estimate_constants(
            &zero,
            &Vector::zeros(2),
            0.1,
            &seq,
            &EstimateOptions::default(),
        )
        .unwrap();
        assert_eq!(bp.delta, 0.2);
    }

    #[test]
    fn save_load_round_trip() {
        let p = small();
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        let q = Problem::load(dir.path()).unwrap();
        assert_eq!(p, q);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap())
                .unwrap();
        assert_eq!(meta["K"], 4);
        assert_eq!(meta["seed"], 11);
        let blob = std::fs::read(dir.path().join("features.bin")).unwrap();
        assert_eq!(&blob[..8], &p.features(0)[(0, 0)].to_le_bytes());
        assert_eq!(&blob[8..16], &p.features(0)[(0, 1)].to_le_bytes());
    }
}

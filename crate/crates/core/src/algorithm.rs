//! Aug-DGM gradient tracking with a cyclic combination-matrix sequence.
//!
//! Network form, with `A_i` the matrix used at iteration `i`:
//!
//! ```text
//! W_i = A_i (W_{i-1} − G_{i-1})
//! G_i = A_i (G_{i-1} + μ ∇̂J(W_i) − μ ∇̂J(W_{i-1}))
//! ```
//!
//! The step size sits inside the tracking recursion, so `G` tracks `μ ∇J`.
//! Substituting `Y_i = G_i − μ A_i ∇̂J(W_i)` gives the transformed form
//!
//! ```text
//! W_i = A_i W_{i-1} − A_i Y_{i-1} − μ A_i A_{i-1} ∇̂J(W_{i-1})
//! Y_i = A_i Y_{i-1} − μ A_i (I − A_{i-1}) ∇̂J(W_{i-1})
//! ```
//!
//! With `A_0 = I`, `W_0 = 0` and `G_0 = μ ∇J(W_0)` both start from `Y_0 = 0`
//! and produce the same trajectory.
//!
//! Iteration `i ≥ 1` uses `A_{((i−1) mod τ) + 1}`, so every window starting
//! at `i ≡ 1 (mod τ)` applies the whole sequence in order.
//!
//! Randomness: one sample index per agent per gradient evaluation, drawn in
//! agent order. Each step evaluates `∇̂J(W_i)` once and caches it for the
//! next step, so both forms consume identical draws.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::ftc::MatrixSeq;
use crate::linalg::{self, Matrix};
use crate::metrics::{self, Trace, TraceHeader, TraceRow};
use crate::problems::{BoundParams, Problem, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Original,
    Transformed,
}

/// Initial models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    /// Every agent starts at the origin.
    #[default]
    Zero,
    /// Independent `N(0, scale²)` entries per agent, drawn from the run seed.
    Random { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mu: f64,
    pub num_iters: usize,
    pub stochastic: bool,
    pub seed: u64,
    pub record_every: usize,
    pub init: Init,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mu: 0.1,
            num_iters: 1000,
            stochastic: true,
            seed: 0,
            record_every: 1,
            init: Init::Zero,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(invalid_param(format!(
                "step size must be >= 0, got {}",
                self.mu
            )));
        }
        if self.record_every == 0 {
            return Err(invalid_param("record_every must be >= 1"));
        }
        if let Init::Random { scale } = self.init {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(invalid_param("random init scale must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Stacked per-agent blocks; row `k` belongs to agent `k`.
///
/// `y` is advanced directly by the transformed stepper and reconstructed as
/// `G − μ A_i ∇̂J(W)` by the original one, so it is valid in both modes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub w: Matrix,
    pub g: Matrix,
    pub y: Matrix,
    /// `∇̂J(W_iter)`, reused by the next step.
    pub prev_grad: Matrix,
    pub iter: usize,
    pub mode: Mode,
}

impl NetworkState {
    pub fn num_agents(&self) -> usize {
        self.w.nrows()
    }

    /// Agent average of the models, `w_c`.
    pub fn centroid(&self) -> Vector {
        self.w.row_mean().transpose()
    }
}

/// Random stream for gradient sampling.
pub fn gradient_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Position in the cycle used at iteration `i ≥ 1` (1-based).
pub fn cycle_index(tau: usize, i: usize) -> usize {
    (i - 1) % tau + 1
}

pub fn cycle_matrix(seq: &MatrixSeq, i: usize) -> Result<&Matrix> {
    if i == 0 {
        return Err(invalid_param("iterations are numbered from 1"));
    }
    Ok(seq.matrix(cycle_index(seq.tau(), i)))
}

/// `∇̂J(W)`: exact local gradients, or one sampled index per agent in agent
/// order.
pub fn network_gradient<R: Rng + ?Sized>(
    p: &Problem,
    w: &Matrix,
    stochastic: bool,
    rng: &mut R,
) -> Matrix {
    let (k, m) = w.shape();
    let mut out = Matrix::zeros(k, m);
    let mut wk = vec![0.0; m];
    let mut gk = vec![0.0; m];
    let n = p.samples_per_agent();
    for a in 0..k {
        for (dst, v) in wk.iter_mut().zip(w.row(a).iter()) {
            *dst = *v;
        }
        let sample = stochastic.then(|| rng.random_range(0..n));
        p.gradient_into(a, &wk, sample, &mut gk);
        for (c, v) in gk.iter().enumerate() {
            out[(a, c)] = *v;
        }
    }
    out
}

/// Zero models, `G_0 = μ ∇J(0)`, `Y_0 = 0`.
pub fn init_state(p: &Problem, mu: f64, mode: Mode) -> NetworkState {
    init_state_from(p, mu, mode, Matrix::zeros(p.num_agents(), p.dim()))
}

/// Same as [`init_state`] from arbitrary initial models `w0` (`K × M`).
/// Gradients at initialization are always exact.
pub fn init_state_from(p: &Problem, mu: f64, mode: Mode, w0: Matrix) -> NetworkState {
    let mut unused = gradient_rng(0);
    let prev_grad = network_gradient(p, &w0, false, &mut unused);
    let g = &prev_grad * mu;
    let y = Matrix::zeros(w0.nrows(), w0.ncols());
    NetworkState {
        w: w0,
        g,
        y,
        prev_grad,
        iter: 0,
        mode,
    }
}

/// Initial state for a run configuration (honours [`Init`]).
pub fn initial_state(p: &Problem, cfg: &RunConfig, mode: Mode) -> NetworkState {
    let w0 = match cfg.init {
        Init::Zero => Matrix::zeros(p.num_agents(), p.dim()),
        Init::Random { scale } => {
            let mut rng = init_rng(cfg.seed);
            Matrix::from_fn(p.num_agents(), p.dim(), |_, _| {
                scale * rng.sample::<f64, _>(StandardNormal)
            })
        }
    };
    init_state_from(p, cfg.mu, mode, w0)
}

fn check_shapes(s: &NetworkState, seq: &MatrixSeq, p: &Problem) -> Result<()> {
    let k = s.num_agents();
    if seq.num_agents() != k || p.num_agents() != k || s.w.ncols() != p.dim() {
        return Err(invalid_input(format!(
            "state is {}x{}, sequence has {} agents, problem is {}x{}",
            k,
            s.w.ncols(),
            seq.num_agents(),
            p.num_agents(),
            p.dim()
        )));
    }
    Ok(())
}

fn ensure_finite(m: &Matrix, iter: usize, what: &'static str) -> Result<()> {
    if linalg::all_finite(m) {
        Ok(())
    } else {
        Err(Error::Diverged {
            iter,
            what,
            partial: None,
        })
    }
}

/// One iteration of the original recursion.
pub fn step_original<R: Rng + ?Sized>(
    s: &NetworkState,
    seq: &MatrixSeq,
    p: &Problem,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<NetworkState> {
    check_shapes(s, seq, p)?;
    let i = s.iter + 1;
    let a = cycle_matrix(seq, i)?;
    let mu = cfg.mu;
    let w = a * (&s.w - &s.g);
    ensure_finite(&w, i, "W")?;
    let grad = network_gradient(p, &w, cfg.stochastic, rng);
    let g = a * (&s.g + (&grad - &s.prev_grad) * mu);
    ensure_finite(&g, i, "G")?;
    let y = &g - a * &grad * mu;
    Ok(NetworkState {
        w,
        g,
        y,
        prev_grad: grad,
        iter: i,
        mode: Mode::Original,
    })
}

/// One iteration of the transformed recursion.
pub fn step_transformed<R: Rng + ?Sized>(
    s: &NetworkState,
    seq: &MatrixSeq,
    p: &Problem,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<NetworkState> {
    check_shapes(s, seq, p)?;
    let i = s.iter + 1;
    let a = cycle_matrix(seq, i)?;
    let mu = cfg.mu;
    // A_{i-1} ∇̂J(W_{i-1}), with A_0 = I
    let mixed_prev = if i == 1 {
        s.prev_grad.clone()
    } else {
        cycle_matrix(seq, i - 1)? * &s.prev_grad
    };
    let w = a * (&s.w - &s.y - &mixed_prev * mu);
    ensure_finite(&w, i, "W")?;
    let y = a * (&s.y - (&s.prev_grad - &mixed_prev) * mu);
    ensure_finite(&y, i, "Y")?;
    let grad = network_gradient(p, &w, cfg.stochastic, rng);
    let g = &y + a * &grad * mu;
    Ok(NetworkState {
        w,
        g,
        y,
        prev_grad: grad,
        iter: i,
        mode: Mode::Transformed,
    })
}

pub fn step<R: Rng + ?Sized>(
    s: &NetworkState,
    seq: &MatrixSeq,
    p: &Problem,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<NetworkState> {
    match s.mode {
        Mode::Original => step_original(s, seq, p, cfg, rng),
        Mode::Transformed => step_transformed(s, seq, p, cfg, rng),
    }
}

/// Runs `cfg.num_iters` iterations, recording a row at iteration 0, every
/// `record_every` iterations and at the final iteration. When `bounds` is
/// given, rows carry the consensus bound and, at multiples of `τ`, the
/// centroid bound wherever the constants are admissible.
pub fn run(
    p: &Problem,
    seq: &MatrixSeq,
    cfg: &RunConfig,
    mode: Mode,
    w_opt: &Vector,
    bounds: Option<&BoundParams>,
) -> Result<Trace> {
    cfg.validate()?;
    let state = initial_state(p, cfg, mode);
    let x0_sq = metrics::consensus_error(&state);
    let w0_sq = metrics::centroid_error(&state, w_opt);
    let mut trace = Trace::new(TraceHeader {
        config: *cfg,
        mode,
        bound_params: bounds.copied(),
        eps_tau: seq.eps_tau(),
        seed: cfg.seed,
        x0_sq,
        w0_sq,
    });
    trace.push(record(&state, w_opt, bounds, x0_sq, w0_sq));
    let mut rng = gradient_rng(cfg.seed);
    advance(p, seq, cfg, state, &mut rng, w_opt, bounds, trace).map(|(t, _)| t)
}

#[allow(clippy::too_many_arguments)]
fn advance(
    p: &Problem,
    seq: &MatrixSeq,
    cfg: &RunConfig,
    mut state: NetworkState,
    rng: &mut ChaCha8Rng,
    w_opt: &Vector,
    bounds: Option<&BoundParams>,
    mut trace: Trace,
) -> Result<(Trace, NetworkState)> {
    if w_opt.len() != p.dim() {
        return Err(invalid_input("w° has the wrong dimension"));
    }
    let (x0_sq, w0_sq) = (trace.header.x0_sq, trace.header.w0_sq);
    while state.iter < cfg.num_iters {
        state = match step(&state, seq, p, cfg, rng) {
            Ok(next) => next,
            Err(Error::Diverged { iter, what, .. }) => {
                return Err(Error::Diverged {
                    iter,
                    what,
                    partial: Some(Box::new(trace)),
                })
            }
            Err(e) => return Err(e),
        };
        let i = state.iter;
        if i.is_multiple_of(cfg.record_every) || i == cfg.num_iters {
            trace.push(record(&state, w_opt, bounds, x0_sq, w0_sq));
        }
    }
    Ok((trace, state))
}

fn record(
    s: &NetworkState,
    w_opt: &Vector,
    bounds: Option<&BoundParams>,
    x0_sq: f64,
    w0_sq: f64,
) -> TraceRow {
    let i = s.iter;
    let thm1 = bounds.and_then(|bp| metrics::thm1_bound(bp, i, x0_sq).ok());
    let thm2 = bounds.and_then(|bp| {
        i.is_multiple_of(bp.tau)
            .then(|| metrics::thm2_bound(bp, i / bp.tau, w0_sq, x0_sq).ok())
            .flatten()
    });
    TraceRow {
        iter: i,
        consensus_err: metrics::consensus_error(s),
        centroid_err: metrics::centroid_error(s, w_opt),
        msd: metrics::msd(s, w_opt),
        thm1_bound: thm1,
        thm2_bound: thm2,
    }
}

/// A network state together with the sampling stream position.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: NetworkState,
    pub rng: ChaCha8Rng,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FTCLABCK";
const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    /// Layout (little-endian): magic, version u32, mode u32, iter u64, K u64,
    /// M u64, rng seed [u8; 32], rng stream u64, rng word position u128, then
    /// the `W`, `G`, `Y` and cached-gradient blocks as row-major f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.state;
        let (k, m) = s.w.shape();
        let mut out = Vec::with_capacity(96 + 32 * k * m);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let mode: u32 = match s.mode {
            Mode::Original => 0,
            Mode::Transformed => 1,
        };
        out.extend_from_slice(&mode.to_le_bytes());
        for v in [s.iter as u64, k as u64, m as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        for block in [&s.w, &s.g, &s.y, &s.prev_grad] {
            for r in 0..k {
                for c in 0..m {
                    out.extend_from_slice(&block[(r, c)].to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Format("truncated checkpoint".into()));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        let version = u32_at(take(4)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mode = match u32_at(take(4)?) {
            0 => Mode::Original,
            1 => Mode::Transformed,
            other => return Err(Error::Format(format!("bad mode tag {other}"))),
        };
        let iter = u64_at(take(8)?) as usize;
        let k = u64_at(take(8)?) as usize;
        let m = u64_at(take(8)?) as usize;
        let seed: [u8; 32] = take(32)?.try_into().expect("32 bytes");
        let stream = u64_at(take(8)?);
        let word_pos = u128::from_le_bytes(take(16)?.try_into().expect("16 bytes"));
        let mut blocks = Vec::with_capacity(4);
        for _ in 0..4 {
            let raw = take(8 * k * m)?;
            blocks.push(Matrix::from_row_iterator(
                k,
                m,
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            ));
        }
        if !cur.is_empty() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        let prev_grad = blocks.pop().expect("four blocks");
        let y = blocks.pop().expect("four blocks");
        let g = blocks.pop().expect("four blocks");
        let w = blocks.pop().expect("four blocks");
        Ok(Self {
            state: NetworkState {
                w,
                g,
                y,
                prev_grad,
                iter,
                mode,
            },
            rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

/// Runs like [`run`] but also returns the final checkpoint.
pub fn run_with_checkpoint(
    p: &Problem,
    seq: &MatrixSeq,
    cfg: &RunConfig,
    mode: Mode,
    w_opt: &Vector,
) -> Result<(Trace, Checkpoint)> {
    cfg.validate()?;
    let state = initial_state(p, cfg, mode);
    let x0_sq = metrics::consensus_error(&state);
    let w0_sq = metrics::centroid_error(&state, w_opt);
    let mut trace = Trace::new(TraceHeader {
        config: *cfg,
        mode,
        bound_params: None,
        eps_tau: seq.eps_tau(),
        seed: cfg.seed,
        x0_sq,
        w0_sq,
    });
    trace.push(record(&state, w_opt, None, x0_sq, w0_sq));
    let mut rng = gradient_rng(cfg.seed);
    let (trace, state) = advance(p, seq, cfg, state, &mut rng, w_opt, None, trace)?;
    Ok((trace, Checkpoint { state, rng }))
}

/// Continues from a checkpoint up to `cfg.num_iters` total iterations. The
/// returned trace starts with the checkpoint's own row.
pub fn resume(
    p: &Problem,
    seq: &MatrixSeq,
    cfg: &RunConfig,
    checkpoint: Checkpoint,
    w_opt: &Vector,
) -> Result<Trace> {
    cfg.validate()?;
    let Checkpoint { state, mut rng } = checkpoint;
    check_shapes(&state, seq, p)?;
    let mut trace = Trace::new(TraceHeader {
        config: *cfg,
        mode: state.mode,
        bound_params: None,
        eps_tau: seq.eps_tau(),
        seed: cfg.seed,
        x0_sq: f64::NAN,
        w0_sq: f64::NAN,
    });
    trace.push(record(&state, w_opt, None, 0.0, 0.0));
    advance(p, seq, cfg, state, &mut rng, w_opt, None, trace).map(|(t, _)| t)
}

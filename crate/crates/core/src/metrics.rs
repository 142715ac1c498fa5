//! Error metrics, the two performance bounds and trace serialization.
//!
//! Bound notation: `ε = ε_τ`, `δ` the gradient Lipschitz constant, `ν` the
//! strong-convexity modulus, `B` the gradient-spread bound and `σ²` the summed
//! noise variance.
//!
//! Consensus bound at iteration `i` with `x0 = ‖Î W_0‖² + ‖Î Y_0‖²`:
//!
//! ```text
//! ε > 0:  (3/8 ε (2 + 3ε))^⌊i/τ⌋ x0 + 432 μ² K τ² B² / (1−ε)² + 144 μ² τ² σ² / (1−ε)²
//! ε = 0:  27 μ² τ (2τ−1) K B² + 3 μ² τ (2τ−1) σ²
//! ```
//!
//! Centroid bound after `ℓ` full cycles (`i = ℓτ`) with
//! `γ₁ = √(1 − 2μν + μ²δ²)`, `γ₂ = (3/8 ε (2 + 3ε))^{1/τ}`, `γ₃ = max(γ₁, γ₂)`,
//! `β₁ = 2 / |γ₁ − γ₂|`:
//!
//! ```text
//! ε > 0:  γ₁^i w0 + β₁ μ δ² / (ν K) γ₃^i x0 + 1728 μ² δ² τ B² / (ν² (1−ε)²)
//!         + 576 μ² δ² τ² σ² / (ν² K (1−ε)²) + 2 μ σ² / (ν K)
//! ε = 0:  γ₁^i w0 + 108 μ² δ² τ² B² / ν² + 24 μ² δ² τ² σ² / (ν² K) + 2 μ σ² / (ν K)
//! ```

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algorithm::{Mode, NetworkState, RunConfig};
use crate::error::{invalid_input, Error, Result};
use crate::problems::{BoundParams, Vector};

/// `ε_τ` at or below this is treated as an exact sequence.
pub const EXACT_EPS_TOL: f64 = 1e-12;
/// Consensus bound requires `ε_τ` below this.
pub const THM1_EPS_MAX: f64 = 2.0 / 3.0;
/// Centroid bound requires `ε_τ` below this.
pub const THM2_EPS_MAX: f64 = 3.0 / 5.0;
/// Smallest `|γ₁ − γ₂|` accepted before `β₁` is considered degenerate.
pub const GAMMA_GAP_MIN: f64 = 1e-12;

pub const BETA2: f64 = 1728.0;
pub const BETA3: f64 = 576.0;
pub const BETA4: f64 = 108.0;
pub const BETA5: f64 = 24.0;

fn centered_sq_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    let mean = m.row_mean();
    m.row_iter().map(|r| (r - &mean).norm_squared()).sum()
}

/// `‖Î W‖_F² + ‖Î Y‖_F²`, where `Î` removes the agent average.
pub fn consensus_error(s: &NetworkState) -> f64 {
    centered_sq_norm(&s.w) + centered_sq_norm(&s.y)
}

/// `‖w° − w_c‖²` with `w_c` the agent average.
pub fn centroid_error(s: &NetworkState, w_opt: &Vector) -> f64 {
    (s.centroid() - w_opt).norm_squared()
}

/// Mean squared deviation `(1/K) Σ_k ‖w_k − w°‖²`.
pub fn msd(s: &NetworkState, w_opt: &Vector) -> f64 {
    let wt = w_opt.transpose();
    let total: f64 = s.w.row_iter().map(|r| (r - &wt).norm_squared()).sum();
    total / s.num_agents() as f64
}

/// Euclidean residual of the centroid recursion
/// `w_c,i = w_c,i−1 − (μ/K) Σ_k ∇̂J_k(w_k,i−1)` between consecutive states.
/// Doubly stochastic matrices make it vanish up to rounding.
pub fn centroid_recursion_residual(prev: &NetworkState, next: &NetworkState, mu: f64) -> f64 {
    let k = prev.num_agents() as f64;
    let drift = prev.prev_grad.row_sum().transpose() * (mu / k);
    (next.centroid() - prev.centroid() + drift).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepsizeLimits {
    pub thm1_mu_max: f64,
    pub thm2_mu_max: f64,
}

fn thm1_mu_max(delta: f64, tau: usize, eps: f64) -> f64 {
    let t = tau as f64;
    ((1.0 - eps) / (t * (2.0 * t - 1.0) * (1.0 + eps))).sqrt() / (12.0 * delta * delta)
}

/// Largest step sizes for which each bound applies. Zero when `ε_τ` is
/// already outside a bound's region.
pub fn stepsize_limits(bp: &BoundParams) -> StepsizeLimits {
    let eps = bp.eps_tau;
    let t1 = if eps < THM1_EPS_MAX {
        thm1_mu_max(bp.delta, bp.tau, eps)
    } else {
        0.0
    };
    let t2 = if eps < THM2_EPS_MAX {
        t1.min(bp.nu / (bp.delta * bp.delta))
    } else {
        0.0
    };
    StepsizeLimits {
        thm1_mu_max: t1,
        thm2_mu_max: t2,
    }
}

fn check_constants(bp: &BoundParams) -> Result<()> {
    let positive = bp.nu > 0.0 && bp.delta > 0.0 && bp.tau >= 1 && bp.k >= 1;
    let finite = [bp.nu, bp.delta, bp.b, bp.sigma2, bp.mu, bp.eps_tau]
        .iter()
        .all(|v| v.is_finite());
    if !positive || !finite || bp.b < 0.0 || bp.sigma2 < 0.0 || bp.mu < 0.0 || bp.eps_tau < 0.0 {
        return Err(invalid_input(format!("bad bound constants {bp:?}")));
    }
    Ok(())
}

fn is_exact(eps: f64) -> bool {
    eps <= EXACT_EPS_TOL
}

/// Contraction rate per cycle of the consensus error, `3/8 ε (2 + 3ε)`.
pub fn cycle_rate(eps: f64) -> f64 {
    0.375 * eps * (2.0 + 3.0 * eps)
}

pub fn gamma1(bp: &BoundParams) -> f64 {
    let (mu, nu, d) = (bp.mu, bp.nu, bp.delta);
    (1.0 - 2.0 * mu * nu + mu * mu * d * d).max(0.0).sqrt()
}

pub fn gamma2(bp: &BoundParams) -> f64 {
    cycle_rate(bp.eps_tau).powf(1.0 / bp.tau as f64)
}

/// Upper bound on the consensus error at iteration `i`.
pub fn thm1_bound(bp: &BoundParams, i: usize, x0_sq: f64) -> Result<f64> {
    check_constants(bp)?;
    let eps = bp.eps_tau;
    if eps >= THM1_EPS_MAX {
        return Err(Error::Admissibility(format!(
            "eps_tau = {eps} is not below 2/3"
        )));
    }
    let limit = thm1_mu_max(bp.delta, bp.tau, eps);
    if bp.mu > limit {
        return Err(Error::Admissibility(format!(
            "mu = {} exceeds the consensus step-size limit {limit}",
            bp.mu
        )));
    }
    let (mu2, t, k) = (bp.mu * bp.mu, bp.tau as f64, bp.k as f64);
    let (b2, s2) = (bp.b * bp.b, bp.sigma2);
    if is_exact(eps) {
        let c = mu2 * t * (2.0 * t - 1.0);
        return Ok(27.0 * c * k * b2 + 3.0 * c * s2);
    }
    let cycles = (i / bp.tau) as i32;
    let denom = (1.0 - eps) * (1.0 - eps);
    Ok(cycle_rate(eps).powi(cycles) * x0_sq
        + 432.0 * mu2 * k * t * t * b2 / denom
        + 144.0 * mu2 * t * t * s2 / denom)
}

/// Upper bound on the centroid error after `ell` complete cycles.
pub fn thm2_bound(bp: &BoundParams, ell: usize, w0_sq: f64, x0_sq: f64) -> Result<f64> {
    check_constants(bp)?;
    let eps = bp.eps_tau;
    if eps >= THM2_EPS_MAX {
        return Err(Error::Admissibility(format!(
            "eps_tau = {eps} is not below 3/5"
        )));
    }
    let limits = stepsize_limits(bp);
    if bp.mu > limits.thm2_mu_max {
        return Err(Error::Admissibility(format!(
            "mu = {} exceeds the centroid step-size limit {}",
            bp.mu, limits.thm2_mu_max
        )));
    }
    let (mu, nu, d2) = (bp.mu, bp.nu, bp.delta * bp.delta);
    let (t, k, b2, s2) = (bp.tau as f64, bp.k as f64, bp.b * bp.b, bp.sigma2);
    let i = (ell * bp.tau) as f64;
    let g1 = gamma1(bp);
    let noise_floor = 2.0 * mu * s2 / (nu * k);
    if is_exact(eps) {
        return Ok(g1.powf(i) * w0_sq
            + BETA4 * mu * mu * d2 * t * t * b2 / (nu * nu)
            + BETA5 * mu * mu * d2 * t * t * s2 / (nu * nu * k)
            + noise_floor);
    }
    let g2 = gamma2(bp);
    let gap = (g1 - g2).abs();
    if gap < GAMMA_GAP_MIN {
        return Err(Error::DegenerateConstants(format!(
            "gamma1 = {g1} and gamma2 = {g2} coincide"
        )));
    }
    let beta1 = 2.0 / gap;
    let g3 = g1.max(g2);
    let denom = (1.0 - eps) * (1.0 - eps);
    Ok(g1.powf(i) * w0_sq
        + beta1 * mu * d2 / (nu * k) * g3.powf(i) * x0_sq
        + BETA2 * mu * mu * d2 * t * b2 / (nu * nu * denom)
        + BETA3 * mu * mu * d2 * t * t * s2 / (nu * nu * k * denom)
        + noise_floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub config: RunConfig,
    pub mode: Mode,
    pub bound_params: Option<BoundParams>,
    pub eps_tau: f64,
    pub seed: u64,
    /// Initial consensus error, used by the bound columns.
    #[serde(with = "nan_as_null")]
    pub x0_sq: f64,
    /// Initial centroid error.
    #[serde(with = "nan_as_null")]
    pub w0_sq: f64,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub consensus_err: f64,
    pub centroid_err: f64,
    pub msd: f64,
    pub thm1_bound: Option<f64>,
    pub thm2_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub rows: Vec<TraceRow>,
}

pub const CSV_COLUMNS: &str = "iter,consensus_err,centroid_err,msd,thm1_bound,thm2_bound";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// One `#`-prefixed JSON header line, the column line, then one line per
    /// row. Missing bounds are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header = serde_json::to_string(&self.header).expect("header serializes");
        let _ = writeln!(out, "# {header}");
        let _ = writeln!(out, "{CSV_COLUMNS}");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iter,
                r.consensus_err,
                r.centroid_err,
                r.msd,
                opt(r.thm1_bound),
                opt(r.thm2_bound)
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Self::read_csv(text.as_bytes())
    }

    fn read_csv(reader: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut rows = Vec::new();
        let mut saw_columns = false;
        for line in reader.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(json) = line.strip_prefix('#') {
                if header.is_none() {
                    header = Some(serde_json::from_str::<TraceHeader>(json.trim())?);
                }
                continue;
            }
            if !saw_columns {
                if line != CSV_COLUMNS {
                    return Err(Error::Format(format!("unexpected column line '{line}'")));
                }
                saw_columns = true;
                continue;
            }
            rows.push(parse_row(line)?);
        }
        let header = header.ok_or_else(|| Error::Format("missing trace header".into()))?;
        Ok(Self { header, rows })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

fn parse_row(line: &str) -> Result<TraceRow> {
    let cells: Vec<&str> = line.split(',').collect();
    if cells.len() != 6 {
        return Err(Error::Format(format!("expected 6 cells in '{line}'")));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Format(format!("bad number '{s}'")))
    };
    let maybe = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    Ok(TraceRow {
        iter: cells[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad iteration '{}'", cells[0])))?,
        consensus_err: num(cells[1])?,
        centroid_err: num(cells[2])?,
        msd: num(cells[3])?,
        thm1_bound: maybe(cells[4])?,
        thm2_bound: maybe(cells[5])?,
    })
}

/// Row-wise average of traces recorded on the same iteration grid. The
/// header is taken from the first trace.
pub fn mean_trace(traces: &[Trace]) -> Result<Trace> {
    let first = traces
        .first()
        .ok_or_else(|| invalid_input("no traces to average"))?;
    let n = traces.len() as f64;
    let mut rows = Vec::with_capacity(first.rows.len());
    for (idx, r0) in first.rows.iter().enumerate() {
        let mut acc = TraceRow {
            iter: r0.iter,
            consensus_err: 0.0,
            centroid_err: 0.0,
            msd: 0.0,
            thm1_bound: r0.thm1_bound,
            thm2_bound: r0.thm2_bound,
        };
        for t in traces {
            let r = t
                .rows
                .get(idx)
                .filter(|r| r.iter == r0.iter)
                .ok_or_else(|| invalid_input("traces are recorded on different grids"))?;
            acc.consensus_err += r.consensus_err;
            acc.centroid_err += r.centroid_err;
            acc.msd += r.msd;
        }
        acc.consensus_err /= n;
        acc.centroid_err /= n;
        acc.msd /= n;
        rows.push(acc);
    }
    Ok(Trace {
        header: first.header,
        rows,
    })
}

/// Fraction of trailing rows averaged for steady-state values.
pub const STEADY_STATE_FRACTION: f64 = 0.2;

/// Number of trailing rows making up the steady-state window of a trace
/// with `len` rows (at least one).
pub fn steady_state_window(len: usize) -> usize {
    ((len as f64 * STEADY_STATE_FRACTION).ceil() as usize).max(1)
}

/// Mean MSD over the final `window` recorded rows.
pub fn steady_state_msd(trace: &Trace, window: usize) -> Result<f64> {
    let rows = &trace.rows;
    if window == 0 || rows.len() < window {
        return Err(invalid_input(format!(
            "window of {window} rows on a trace with {} rows",
            rows.len()
        )));
    }
    let tail = &rows[rows.len() - window..];
    Ok(tail.iter().map(|r| r.msd).sum::<f64>() / window as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> BoundParams {
        BoundParams {
            nu: 0.1,
            delta: 1.0,
            b: 0.5,
            sigma2: 0.2,
            mu: 0.005,
            tau: 4,
            eps_tau: 0.0,
            k: 16,
        }
    }

    #[test]
    fn gamma1_value() {
        assert_relative_eq!(gamma1(&params()), 0.999025f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn exact_consensus_bound_is_constant() {
        let bp = params();
        let a = thm1_bound(&bp, 0, 123.0).unwrap();
        let b = thm1_bound(&bp, 1000, 0.0).unwrap();
        assert_eq!(a, b);
        let c = bp.mu * bp.mu * 4.0 * 7.0;
        assert_relative_eq!(
            a,
            27.0 * c * 16.0 * 0.25 + 3.0 * c * 0.2,
            max_relative = 1e-14
        );
    }

    #[test]
    fn inexact_consensus_bound_steps_per_cycle() {
        let bp = BoundParams {
            eps_tau: 0.3,
            ..params()
        };
        let floor = thm1_bound(&bp, 0, 0.0).unwrap();
        let x0 = 10.0;
        let rate = cycle_rate(0.3);
        assert_relative_eq!(
            thm1_bound(&bp, 3, x0).unwrap(),
            x0 + floor,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            thm1_bound(&bp, 9, x0).unwrap(),
            rate * rate * x0 + floor,
            max_relative = 1e-14
        );
    }

    #[test]
    fn admissibility_edges() {
        let bp = BoundParams {
            eps_tau: 2.0 / 3.0,
            ..params()
        };
        assert!(matches!(
            thm1_bound(&bp, 0, 0.0),
            Err(Error::Admissibility(_))
        ));
        let bp = BoundParams {
            eps_tau: 0.6,
            ..params()
        };
        assert!(thm1_bound(&bp, 0, 0.0).is_ok());
        assert!(matches!(
            thm2_bound(&bp, 0, 0.0, 0.0),
            Err(Error::Admissibility(_))
        ));
        let limits = stepsize_limits(&params());
        let bp = BoundParams {
            mu: limits.thm1_mu_max * 1.01,
            ..params()
        };
        assert!(matches!(
            thm1_bound(&bp, 0, 0.0),
            Err(Error::Admissibility(_))
        ));
    }

    #[test]
    fn step_limits() {
        let l = stepsize_limits(&params());
        assert_relative_eq!(
            l.thm1_mu_max,
            (1.0f64 / 28.0).sqrt() / 12.0,
            max_relative = 1e-14
        );
        assert!(l.thm2_mu_max <= l.thm1_mu_max);
        assert!(l.thm2_mu_max <= 0.1);
    }

    #[test]
    fn gamma2_stays_below_gamma1_when_admissible() {
        // the two rates never meet inside the admissible region, so the
        // degenerate-gap error is defensive only
        for tau in [1, 2, 4, 15] {
            for eps in [1e-6, 0.1, 0.3, 0.59] {
                for nu_over_delta in [1e-3, 0.1, 1.0] {
                    let mut bp = BoundParams {
                        tau,
                        eps_tau: eps,
                        nu: nu_over_delta,
                        delta: 1.0,
                        ..params()
                    };
                    bp.mu = stepsize_limits(&bp).thm2_mu_max;
                    assert!(gamma2(&bp) < gamma1(&bp));
                    assert!(thm2_bound(&bp, 3, 1.0, 1.0).is_ok());
                }
            }
        }
    }

    #[test]
    fn centroid_bound_floor_and_decay() {
        let bp = params();
        let at_zero = thm2_bound(&bp, 0, 5.0, 0.0).unwrap();
        let far = thm2_bound(&bp, 100_000, 5.0, 0.0).unwrap();
        let floor = thm2_bound(&bp, 0, 0.0, 0.0).unwrap();
        assert_relative_eq!(at_zero, 5.0 + floor, max_relative = 1e-14);
        assert!(far < at_zero);
        assert!(far >= floor);
    }

    #[test]
    fn csv_round_trip() {
        let header = TraceHeader {
            config: RunConfig::default(),
            mode: Mode::Transformed,
            bound_params: Some(params()),
            eps_tau: 0.25,
            seed: 7,
            x0_sq: 0.0,
            w0_sq: f64::NAN,
        };
        let mut t = Trace::new(header);
        t.push(TraceRow {
            iter: 0,
            consensus_err: 0.1,
            centroid_err: 1.0 / 3.0,
            msd: 2.5e-17,
            thm1_bound: Some(0.7),
            thm2_bound: None,
        });
        let text = t.to_csv();
        assert!(text.lines().nth(1) == Some(CSV_COLUMNS));
        assert!(text.lines().nth(2).unwrap().ends_with(",0.7,"));
        let back = Trace::from_csv(&text).unwrap();
        assert_eq!(back.rows, t.rows);
        assert!(back.header.w0_sq.is_nan());
        assert_eq!(back.header.bound_params, t.header.bound_params);
        assert!(Trace::from_csv("iter\n").is_err());
    }

    #[test]
    fn steady_state_window_mean() {
        let header = TraceHeader {
            config: RunConfig::default(),
            mode: Mode::Original,
            bound_params: None,
            eps_tau: 0.0,
            seed: 0,
            x0_sq: 0.0,
            w0_sq: 0.0,
        };
        let mut t = Trace::new(header);
        for i in 0..10 {
            t.push(TraceRow {
                iter: i,
                consensus_err: 0.0,
                centroid_err: 0.0,
                msd: i as f64,
                thm1_bound: None,
                thm2_bound: None,
            });
        }
        assert_eq!(steady_state_window(10), 2);
        assert_eq!(steady_state_msd(&t, 2).unwrap(), 8.5);
        assert_eq!(steady_state_msd(&t, 10).unwrap(), 4.5);
        assert!(steady_state_msd(&t, 11).is_err());
        t.rows.truncate(1);
        assert_eq!(steady_state_window(1), 1);
        assert_eq!(steady_state_msd(&t, 1).unwrap(), 0.0);
    }
}

//! Wavefront parallelism simulator.
//!
//! Each decoding stage launches once and processes its positions across P
//! lanes, so a decode costs Σ over stages of (t₀ + positions·t₁/P). The
//! two-parameter model deliberately ignores memory traffic: stage count is
//! what separates the context models, and that is the effect being studied.

use crate::error::Error;
use crate::grid::LatentDims;
use crate::Result;

/// Context-model family as seen by the scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    /// One position per stage, h·w stages.
    Ar,
    /// Two stages of h·w/2 positions.
    Checkerboard,
    /// n² stages of h·w/n² positions.
    Multistage { n: usize },
}

impl ScheduleMode {
    pub fn label(&self) -> String {
        match self {
            ScheduleMode::Ar => "ar".to_string(),
            ScheduleMode::Checkerboard => "checkerboard".to_string(),
            ScheduleMode::Multistage { n } => format!("multistage{n}"),
        }
    }
}

/// Stage structure of one decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    mode: ScheduleMode,
    dims: LatentDims,
    positions_per_stage: Vec<usize>,
}

impl Schedule {
    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn dims(&self) -> LatentDims {
        self.dims
    }

    pub fn num_stages(&self) -> usize {
        self.positions_per_stage.len()
    }

    /// Stages serialize; everything within a stage is free to run wide.
    pub fn critical_path(&self) -> usize {
        self.num_stages()
    }

    pub fn positions_per_stage(&self) -> &[usize] {
        &self.positions_per_stage
    }
}

/// Builds the stage structure of `mode` on `dims`.
pub fn build_schedule(mode: ScheduleMode, dims: LatentDims) -> Result<Schedule> {
    let (h, w) = (dims.height(), dims.width());
    let positions_per_stage = match mode {
        ScheduleMode::Ar => vec![1usize; h * w],
        ScheduleMode::Checkerboard => {
            if (h * w) % 2 != 0 {
                return Err(Error::InvalidDims {
                    h,
                    w,
                    reason: "checkerboard needs an even number of positions",
                });
            }
            vec![h * w / 2; 2]
        }
        ScheduleMode::Multistage { n } => {
            if n == 0 || n > 4 {
                return Err(Error::UnsupportedPatchSize { n });
            }
            if h % n != 0 || w % n != 0 {
                return Err(Error::DimsNotDivisible { h, w, n });
            }
            vec![h * w / (n * n); n * n]
        }
    };
    Ok(Schedule {
        mode,
        dims,
        positions_per_stage,
    })
}

/// Per-stage launch overhead t₀ plus throughput term t₁/P.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub lanes: usize,
    pub per_stage_overhead: f64,
    pub per_position_cost: f64,
}

impl LatencyModel {
    pub fn new(lanes: usize, per_stage_overhead: f64, per_position_cost: f64) -> Result<Self> {
        if lanes == 0 {
            return Err(Error::InvalidLatencyModel {
                reason: "lanes must be positive",
            });
        }
        if !(per_stage_overhead > 0.0) || !(per_position_cost > 0.0) {
            return Err(Error::InvalidLatencyModel {
                reason: "t0 and t1 must be positive",
            });
        }
        Ok(Self {
            lanes,
            per_stage_overhead,
            per_position_cost,
        })
    }
}

/// Σ over stages of (t₀ + positions·t₁/P), in the model's time units.
pub fn simulate_latency(schedule: &Schedule, lm: &LatencyModel) -> f64 {
    schedule
        .positions_per_stage()
        .iter()
        .map(|&p| lm.per_stage_overhead + p as f64 * lm.per_position_cost / lm.lanes as f64)
        .sum()
}

/// How residuals are weighted when fitting (t₀, t₁) to measured latencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitObjective {
    /// Ordinary least squares on absolute residuals.
    LeastSquares,
    /// Least squares on relative residuals (weights 1/y²); the natural
    /// choice when the measurements span orders of magnitude.
    RelativeLeastSquares,
    /// Chebyshev fit: minimize the maximum relative error. Answers whether
    /// *any* (t₀, t₁) reproduces all measurements within a tolerance.
    MinimaxRelative,
}

/// A fitted latency model with its per-sample diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: LatencyModel,
    pub objective: FitObjective,
    pub predictions: Vec<f64>,
    /// predicted / measured per sample.
    pub residual_ratios: Vec<f64>,
    pub max_abs_relative_error: f64,
}

/// Fits (t₀, t₁) for fixed `lanes` to measured (schedule, latency) pairs.
///
/// The design has two degrees of freedom: latency = t₀·num_stages +
/// (t₁/P)·total_positions. At least two samples with distinct stage counts
/// are required.
pub fn fit_overhead(
    samples: &[(Schedule, f64)],
    lanes: usize,
    objective: FitObjective,
) -> Result<FitResult> {
    if lanes == 0 {
        return Err(Error::InvalidLatencyModel {
            reason: "lanes must be positive",
        });
    }
    if samples.len() < 2 {
        return Err(Error::UnderdeterminedFit);
    }
    // Design row per sample: (stage count, positions / lanes).
    let rows: Vec<(f64, f64)> = samples
        .iter()
        .map(|(s, _)| {
            (
                s.num_stages() as f64,
                s.positions_per_stage().iter().sum::<usize>() as f64 / lanes as f64,
            )
        })
        .collect();
    let ys: Vec<f64> = samples.iter().map(|&(_, y)| y).collect();
    if ys.iter().any(|&y| !(y > 0.0)) {
        return Err(Error::InvalidLatencyModel {
            reason: "measured latencies must be positive",
        });
    }

    let (t0, t1) = match objective {
        FitObjective::LeastSquares => weighted_ls(&rows, &ys, |_| 1.0)?,
        FitObjective::RelativeLeastSquares => weighted_ls(&rows, &ys, |y| 1.0 / (y * y))?,
        FitObjective::MinimaxRelative => minimax_relative(&rows, &ys)?,
    };

    let predictions: Vec<f64> = rows.iter().map(|&(m, k)| t0 * m + t1 * k).collect();
    let residual_ratios: Vec<f64> = predictions.iter().zip(&ys).map(|(p, y)| p / y).collect();
    let max_abs_relative_error = residual_ratios
        .iter()
        .map(|r| (r - 1.0).abs())
        .fold(0.0, f64::max);
    // Clamp away zero/negative parameters so the result is always a usable
    // LatencyModel; the residuals expose any distortion this introduces.
    let model = LatencyModel::new(lanes, t0.max(1e-12), t1.max(1e-12))?;
    Ok(FitResult {
        model,
        objective,
        predictions,
        residual_ratios,
        max_abs_relative_error,
    })
}

fn weighted_ls(
    rows: &[(f64, f64)],
    ys: &[f64],
    weight: impl Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    let (mut saa, mut sab, mut sbb, mut say, mut sby) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&(a, b), &y) in rows.iter().zip(ys) {
        let w = weight(y);
        saa += w * a * a;
        sab += w * a * b;
        sbb += w * b * b;
        say += w * a * y;
        sby += w * b * y;
    }
    let det = saa * sbb - sab * sab;
    if det.abs() < 1e-12 * saa.max(sbb).max(1.0) {
        return Err(Error::UnderdeterminedFit);
    }
    Ok(((say * sbb - sby * sab) / det, (sby * saa - say * sab) / det))
}

/// Minimizes max_i |t₀·aᵢ + t₁·bᵢ − yᵢ| / yᵢ over t₀, t₁ ≥ 0.
///
/// The objective is convex piecewise-linear in (t₀, t₁), so the optimum is
/// attained where three residual/sign constraints are active (or fewer, on
/// the t₀ ≥ 0 / t₁ ≥ 0 boundary). All candidate active sets are enumerated
/// and the best feasible one wins: exact and deterministic for the handful
/// of samples this is used on.
fn minimax_relative(rows: &[(f64, f64)], ys: &[f64]) -> Result<(f64, f64)> {
    let n = rows.len();
    // Normalized rows: residual_i = t0*u_i + t1*v_i − 1, |residual| ≤ δ.
    let u: Vec<f64> = rows.iter().zip(ys).map(|(&(a, _), &y)| a / y).collect();
    let v: Vec<f64> = rows.iter().zip(ys).map(|(&(_, b), &y)| b / y).collect();

    let objective = |t0: f64, t1: f64| -> f64 {
        (0..n)
            .map(|i| (t0 * u[i] + t1 * v[i] - 1.0).abs())
            .fold(0.0, f64::max)
    };

    let mut best: Option<(f64, f64, f64)> = None;
    let mut consider = |t0: f64, t1: f64| {
        if t0 >= 0.0 && t1 >= 0.0 && t0.is_finite() && t1.is_finite() {
            let d = objective(t0, t1);
            if best.is_none() || d < best.unwrap().2 - 1e-15 {
                best = Some((t0, t1, d));
            }
        }
    };

    // Three active residuals: solve  t0*u_i + t1*v_i − 1 = s_i·δ  for
    // (t0, t1, δ) over all triples and sign patterns.
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                for signs in 0..8u8 {
                    let s = [
                        if signs & 1 != 0 { 1.0 } else { -1.0 },
                        if signs & 2 != 0 { 1.0 } else { -1.0 },
                        if signs & 4 != 0 { 1.0 } else { -1.0 },
                    ];
                    // [u v -s][t0 t1 δ]ᵀ = 1, rows i, j, k.
                    let m = [
                        [u[i], v[i], -s[0]],
                        [u[j], v[j], -s[1]],
                        [u[k], v[k], -s[2]],
                    ];
                    if let Some(sol) = solve3(&m, [1.0, 1.0, 1.0]) {
                        consider(sol[0], sol[1]);
                    }
                }
            }
        }
    }
    // Boundary cases: one parameter pinned at zero, two active residuals.
    for i in 0..n {
        for j in (i + 1)..n {
            for signs in 0..4u8 {
                let si = if signs & 1 != 0 { 1.0 } else { -1.0 };
                let sj = if signs & 2 != 0 { 1.0 } else { -1.0 };
                // t1 = 0: t0*u − 1 = s·δ.
                let det = u[i] * (-sj) - u[j] * (-si);
                if det.abs() > 1e-300 {
                    let t0 = ((-sj) - (-si)) / det;
                    consider(t0, 0.0);
                }
                // t0 = 0: t1*v − 1 = s·δ.
                let det = v[i] * (-sj) - v[j] * (-si);
                if det.abs() > 1e-300 {
                    let t1 = ((-sj) - (-si)) / det;
                    consider(0.0, t1);
                }
            }
        }
    }

    best.map(|(t0, t1, _)| (t0, t1)).ok_or(Error::UnderdeterminedFit)
}

/// 3×3 linear solve by Cramer's rule; None when singular.
fn solve3(m: &[[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |a: &[[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for col in 0..3 {
        let mut mc = *m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        out[col] = det(&mc) / d;
    }
    Some(out)
}

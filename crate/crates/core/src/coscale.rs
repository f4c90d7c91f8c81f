//! `(N, T)` co-scaling: grid sweeps, power-law fits of pass@N, trend fits
//! across temperatures and the per-task optimal `(N*, T*)` map.

use std::fmt::Write as _;

use serde::Serialize;

use crate::bon::{bon_dist, majority_exact, majority_mc, pass_at_n, Benchmark, MajorityMode, Scorer};
use crate::error::{domain, BonError, Result};
use crate::numeric::{fmt17, golden_section_min, spearman};
use crate::policies::{Policy, Temperature};
use crate::rng::stream;

/// Lower and upper clamp for pass values before the double log.
pub const PASS_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub scorer: Scorer,
    /// `None` skips the majority-vote column (written as NaN).
    pub majority: Option<MajorityMode>,
    /// Seed for Monte Carlo majority votes.
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            scorer: Scorer::Verifier,
            majority: Some(MajorityMode::MonteCarlo { samples: 200 }),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellMetrics {
    pub task_id: u64,
    pub n: u64,
    pub t: f64,
    pub pass_at_n: f64,
    pub bon_acc: f64,
    pub majority_acc: f64,
}

/// Per-task metrics over an `n_grid x t_grid` lattice, stored task-major,
/// then by temperature, then by `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoscaleGrid {
    pub n_grid: Vec<u64>,
    pub t_grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub cells: Vec<CellMetrics>,
}

impl CoscaleGrid {
    pub fn num_tasks(&self) -> usize {
        self.weights.len()
    }

    pub fn cell(&self, task: usize, ti: usize, ni: usize) -> &CellMetrics {
        &self.cells[(task * self.t_grid.len() + ti) * self.n_grid.len() + ni]
    }

    fn aggregate<F: Fn(&CellMetrics) -> f64>(&self, ti: usize, f: F) -> Vec<f64> {
        (0..self.n_grid.len())
            .map(|ni| {
                (0..self.num_tasks())
                    .map(|x| self.weights[x] * f(self.cell(x, ti, ni)))
                    .sum()
            })
            .collect()
    }

    /// Task-weighted pass@N along the `N` grid at temperature index `ti`.
    pub fn aggregate_pass(&self, ti: usize) -> Vec<f64> {
        self.aggregate(ti, |c| c.pass_at_n)
    }

    pub fn aggregate_bon(&self, ti: usize) -> Vec<f64> {
        self.aggregate(ti, |c| c.bon_acc)
    }

    pub fn aggregate_majority(&self, ti: usize) -> Vec<f64> {
        self.aggregate(ti, |c| c.majority_acc)
    }

    /// Whether pass@N is nondecreasing in `N` for every task and temperature.
    pub fn pass_monotone(&self) -> bool {
        (0..self.num_tasks()).all(|x| {
            (0..self.t_grid.len()).all(|ti| {
                (1..self.n_grid.len()).all(|ni| self.cell(x, ti, ni).pass_at_n >= self.cell(x, ti, ni - 1).pass_at_n)
            })
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("task_id,N,T,pass_at_n,bon_acc,majority_acc\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.task_id,
                c.n,
                fmt17(c.t),
                fmt17(c.pass_at_n),
                fmt17(c.bon_acc),
                fmt17(c.majority_acc)
            );
        }
        s
    }
}

fn check_grids(n_grid: &[u64], t_grid: &[f64]) -> Result<()> {
    if n_grid.is_empty() || t_grid.is_empty() {
        return domain("sweep needs non-empty N and T grids");
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return domain("N grid must be strictly increasing and start at N >= 1");
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return domain("T grid must be strictly increasing");
    }
    Ok(())
}

/// Exact pass@N and BoN accuracy for every task and grid cell, plus
/// majority-vote accuracy.
pub fn sweep(policy: &Policy, bench: &Benchmark, n_grid: &[u64], t_grid: &[f64], opts: &SweepOptions) -> Result<CoscaleGrid> {
    check_grids(n_grid, t_grid)?;
    bench.check_policy(policy)?;
    let mut cells = Vec::with_capacity(bench.len() * n_grid.len() * t_grid.len());
    for (x, task) in bench.tasks.iter().enumerate() {
        let scores = task.scores(opts.scorer);
        for (ti, &tv) in t_grid.iter().enumerate() {
            let probs = policy.prob_dist(x, Temperature::new(tv)?)?;
            let p_fail = task.p_fail(&probs);
            for &n in n_grid {
                let bon: f64 = bon_dist(&probs, &scores, n)
                    .iter()
                    .zip(&task.reward)
                    .filter(|(_, &r)| r)
                    .map(|(p, _)| p)
                    .sum();
                let majority = match opts.majority {
                    None => f64::NAN,
                    Some(MajorityMode::ExactSmall) => majority_exact(&probs, &task.reward, n)?,
                    Some(MajorityMode::MonteCarlo { samples }) => {
                        let mut rng = stream(opts.seed, "majority", task.id, (ti as u64) << 32 | n);
                        majority_mc(&probs, &task.reward, n, samples, &mut rng)?.0
                    }
                };
                cells.push(CellMetrics {
                    task_id: task.id,
                    n,
                    t: tv,
                    pass_at_n: pass_at_n(p_fail, n),
                    bon_acc: bon,
                    majority_acc: majority,
                });
            }
        }
    }
    Ok(CoscaleGrid {
        n_grid: n_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        weights: bench.weights.clone(),
        cells,
    })
}

// ---------------------------------------------------------------------------
// Fits

/// `1 - SS_res / SS_tot`. With `SS_tot = 0` the value is 1 for an exact fit
/// and negative infinity otherwise.
pub fn r_squared(predicted: &[f64], actual: &[f64]) -> f64 {
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    let ss_res: f64 = predicted.iter().zip(actual).map(|(p, a)| (a - p) * (a - p)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// `pass@N ~ exp(a N^b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    /// R² of `ln(-ln pass)` against `ln N`.
    pub r_squared: f64,
    pub clamped_count: usize,
}

impl PowerLawFit {
    pub fn predict(&self, n: f64) -> f64 {
        (self.a * n.powf(self.b)).exp()
    }

    /// R² of the fitted curve against pass values on the original scale.
    pub fn pass_space_r_squared(&self, ns: &[u64], pass: &[f64]) -> f64 {
        let predicted: Vec<f64> = ns.iter().map(|&n| self.predict(n as f64)).collect();
        r_squared(&predicted, pass)
    }
}

/// Ordinary least squares of `ln(-ln pass)` on `ln N`; slope `b`, intercept
/// `ln(-a)`.
pub fn fit_power_law_points(t: f64, ns: &[u64], pass: &[f64]) -> Result<PowerLawFit> {
    if ns.len() != pass.len() {
        return domain("N and pass vectors differ in length");
    }
    if ns.len() < 3 {
        return Err(BonError::Domain(format!(
            "power-law fit needs at least 3 grid points, got {}",
            ns.len()
        )));
    }
    let mut clamped_count = 0;
    let ys: Vec<f64> = pass
        .iter()
        .map(|&p| {
            let c = p.clamp(PASS_CLAMP, 1.0 - PASS_CLAMP);
            if c != p {
                clamped_count += 1;
            }
            (-c.ln()).ln()
        })
        .collect();
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let k = xs.len() as f64;
    let (b, intercept) = if ys.iter().all(|&y| y == ys[0]) {
        (0.0, ys[0])
    } else {
        let mx = xs.iter().sum::<f64>() / k;
        let my = ys.iter().sum::<f64>() / k;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        if sxx == 0.0 {
            return domain("power-law fit needs at least two distinct N");
        }
        let b = sxy / sxx;
        (b, my - b * mx)
    };
    let fitted: Vec<f64> = xs.iter().map(|x| intercept + b * x).collect();
    Ok(PowerLawFit {
        t,
        a: -intercept.exp(),
        b,
        r_squared: r_squared(&fitted, &ys),
        clamped_count,
    })
}

/// Power-law fit of the aggregate pass@N curve at temperature index `ti`.
pub fn fit_power_law(grid: &CoscaleGrid, ti: usize) -> Result<PowerLawFit> {
    fit_power_law_points(grid.t_grid[ti], &grid.n_grid, &grid.aggregate_pass(ti))
}

pub fn fits_csv(fits: &[PowerLawFit]) -> String {
    let mut s = String::from("T,a,b,r2,clamped_count\n");
    for f in fits {
        let _ = writeln!(s, "{},{},{},{},{}", fmt17(f.t), fmt17(f.a), fmt17(f.b), fmt17(f.r_squared), f.clamped_count);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendForm {
    /// `c T^d`
    PowerLaw,
    /// `c T^d + e T`
    PowerLawPlusLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendFit {
    pub form: TrendForm,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub r_squared: f64,
}

impl TrendFit {
    pub fn predict(&self, t: f64) -> f64 {
        self.c * t.powf(self.d) + self.e * t
    }
}

/// Linear coefficients `(c, e)` and SSE for a fixed exponent.
fn trend_linear(ts: &[f64], vs: &[f64], d: f64, form: TrendForm) -> (f64, f64, f64) {
    let u: Vec<f64> = ts.iter().map(|t| t.powf(d)).collect();
    let (c, e) = match form {
        TrendForm::PowerLaw => {
            let uu: f64 = u.iter().map(|x| x * x).sum();
            let uv: f64 = u.iter().zip(vs).map(|(x, v)| x * v).sum();
            (if uu > 0.0 { uv / uu } else { 0.0 }, 0.0)
        }
        TrendForm::PowerLawPlusLinear => {
            let uu: f64 = u.iter().map(|x| x * x).sum();
            let tt: f64 = ts.iter().map(|x| x * x).sum();
            let ut: f64 = u.iter().zip(ts).map(|(a, b)| a * b).sum();
            let uv: f64 = u.iter().zip(vs).map(|(a, b)| a * b).sum();
            let tv: f64 = ts.iter().zip(vs).map(|(a, b)| a * b).sum();
            let det = uu * tt - ut * ut;
            if det.abs() <= 1e-14 * uu * tt {
                (if uu > 0.0 { uv / uu } else { 0.0 }, 0.0)
            } else {
                ((uv * tt - tv * ut) / det, (tv * uu - uv * ut) / det)
            }
        }
    };
    let sse = ts
        .iter()
        .zip(&u)
        .zip(vs)
        .map(|((t, ui), v)| {
            let r = v - (c * ui + e * t);
            r * r
        })
        .sum();
    (c, e, sse)
}

/// Least-squares trend over temperatures.
///
/// The exponent `d` is found by a grid scan over `[-6, 6]` followed by
/// golden-section refinement; for each `d` the linear coefficients are
/// solved exactly. Constant data returns `d = 0`.
pub fn fit_trend(ts: &[f64], vs: &[f64], form: TrendForm) -> Result<TrendFit> {
    if ts.len() != vs.len() {
        return domain("T and value vectors differ in length");
    }
    let needed = match form {
        TrendForm::PowerLaw => 2,
        TrendForm::PowerLawPlusLinear => 3,
    };
    if ts.len() < needed {
        return domain(format!("trend fit needs at least {needed} points, got {}", ts.len()));
    }
    if ts.iter().any(|&t| !(t > 0.0 && t.is_finite())) || vs.iter().any(|v| !v.is_finite()) {
        return domain("trend fit needs positive temperatures and finite values");
    }
    if vs.iter().all(|&v| v == vs[0]) {
        let fit = TrendFit {
            form,
            c: vs[0],
            d: 0.0,
            e: 0.0,
            r_squared: 1.0,
        };
        return Ok(fit);
    }
    const LO: f64 = -6.0;
    const HI: f64 = 6.0;
    const STEPS: usize = 480;
    let step = (HI - LO) / STEPS as f64;
    let sse = |d: f64| trend_linear(ts, vs, d, form).2;
    let (best_i, _) = (0..=STEPS)
        .map(|i| (i, sse(LO + step * i as f64)))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let centre = LO + step * best_i as f64;
    let (mut d, _) = golden_section_min(sse, centre - step, centre + step, 1e-14);
    // Newton polish on the SSE derivative
    for _ in 0..20 {
        let h = 1e-5 * d.abs().max(1.0);
        let (fm, f0, fp) = (sse(d - h), sse(d), sse(d + h));
        let g = (fp - fm) / (2.0 * h);
        let c2 = (fp - 2.0 * f0 + fm) / (h * h);
        if !(c2 > 0.0) {
            break;
        }
        let next = d - g / c2;
        if !(sse(next) <= f0) {
            break;
        }
        if (next - d).abs() < 1e-15 {
            d = next;
            break;
        }
        d = next;
    }
    let (c, e, _) = trend_linear(ts, vs, d, form);
    let fit = TrendFit {
        form,
        c,
        d,
        e,
        r_squared: 0.0,
    };
    let predicted: Vec<f64> = ts.iter().map(|&t| fit.predict(t)).collect();
    Ok(TrendFit {
        r_squared: r_squared(&predicted, vs),
        ..fit
    })
}

// ---------------------------------------------------------------------------
// Optimal (N, T)

/// Gap below which two BoN accuracies count as tied.
pub const ARGMAX_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalCell {
    pub task_id: u64,
    pub n_star: u64,
    pub t_star: f64,
    pub bon_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyCell {
    pub t: f64,
    pub n: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalMap {
    pub per_task: Vec<OptimalCell>,
    pub frequency: Vec<FrequencyCell>,
}

impl OptimalMap {
    /// Spearman correlation of `T*` and `N*` over tasks.
    pub fn tn_rank_correlation(&self) -> Option<f64> {
        let ts: Vec<f64> = self.per_task.iter().map(|c| c.t_star).collect();
        let ns: Vec<f64> = self.per_task.iter().map(|c| c.n_star as f64).collect();
        spearman(&ts, &ns)
    }

    pub fn frequency_csv(&self) -> String {
        let mut s = String::from("T,N,count\n");
        for c in &self.frequency {
            let _ = writeln!(s, "{},{},{}", fmt17(c.t), c.n, c.count);
        }
        s
    }
}

/// Per task, the cell with the highest exact BoN accuracy; ties go to the
/// smaller `N`, then the smaller `T`.
pub fn optimal_nt(grid: &CoscaleGrid) -> OptimalMap {
    let mut per_task = Vec::with_capacity(grid.num_tasks());
    let mut counts = vec![0usize; grid.n_grid.len() * grid.t_grid.len()];
    for x in 0..grid.num_tasks() {
        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        for ni in 0..grid.n_grid.len() {
            for ti in 0..grid.t_grid.len() {
                let v = grid.cell(x, ti, ni).bon_acc;
                if v > best.2 + ARGMAX_TIE_TOL {
                    best = (ni, ti, v);
                }
            }
        }
        let (ni, ti, v) = best;
        counts[ti * grid.n_grid.len() + ni] += 1;
        per_task.push(OptimalCell {
            task_id: grid.cell(x, 0, 0).task_id,
            n_star: grid.n_grid[ni],
            t_star: grid.t_grid[ti],
            bon_acc: v,
        });
    }
    let mut frequency = Vec::with_capacity(counts.len());
    for (ti, &t) in grid.t_grid.iter().enumerate() {
        for (ni, &n) in grid.n_grid.iter().enumerate() {
            frequency.push(FrequencyCell {
                t,
                n,
                count: counts[ti * grid.n_grid.len() + ni],
            });
        }
    }
    OptimalMap { per_task, frequency }
}

/// Whether the largest entry sits strictly inside the sequence.
pub fn interior_argmax(values: &[f64]) -> bool {
    let (i, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    i > 0 && i + 1 < values.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_squared_examples() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(r_squared(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]), 0.0);
        assert!((r_squared(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]) - 0.5).abs() < 1e-15);
        assert_eq!(r_squared(&[1.0, 1.0], &[1.0, 1.0]), 1.0);
        assert_eq!(r_squared(&[1.0, 2.0], &[1.0, 1.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn power_law_round_trip() {
        let pass = [(-2.0f64).exp(), (-1.0f64).exp(), (-0.5f64).exp()];
        let f = fit_power_law_points(1.0, &[1, 4, 16], &pass).unwrap();
        assert!((f.a + 2.0).abs() < 1e-9 && (f.b + 0.5).abs() < 1e-9);
        assert!(f.r_squared >= 1.0 - 1e-12);
        assert!(fit_power_law_points(1.0, &[1, 4], &pass[..2]).is_err());
    }

    #[test]
    fn constant_pass_has_zero_exponent() {
        let f = fit_power_law_points(1.0, &[1, 2, 4, 8], &[0.3; 4]).unwrap();
        assert_eq!(f.b, 0.0);
        assert!((f.predict(5.0) - 0.3).abs() < 1e-12);
    }

    // Unattainable: ln(-ln(1 - p^N)) is close to linear in N rather than in
    // ln N, so even the best pass-space fit of exp(a N^b) stays below 0.99
    // for p above about 0.55.
    #[test]
    #[ignore = "claimed R^2 >= 0.99 does not hold for this functional form"]
    fn single_task_curves_are_well_described() {
        let ns: Vec<u64> = vec![1, 2, 4, 8, 16, 32, 64];
        for p in [0.3, 0.5, 0.7, 0.9] {
            let pass: Vec<f64> = ns.iter().map(|&n| 1.0 - f64::powi(p, n as i32)).collect();
            let f = fit_power_law_points(1.0, &ns, &pass).unwrap();
            let r2 = f.pass_space_r_squared(&ns, &pass);
            assert!(r2 >= 0.99, "p={p}: {r2}");
        }
    }

    #[test]
    fn trend_round_trips() {
        let ts = [0.25, 0.5, 0.75, 1.0, 1.25];
        let vs: Vec<f64> = ts.iter().map(|t: &f64| -0.7 * t.powf(1.3)).collect();
        let f = fit_trend(&ts, &vs, TrendForm::PowerLaw).unwrap();
        assert!((f.c + 0.7).abs() < 1e-6 && (f.d - 1.3).abs() < 1e-6, "{f:?}");
        let held = 1.5f64;
        assert!((f.predict(held) / (-0.7 * held.powf(1.3)) - 1.0).abs() < 1e-4);

        let vs: Vec<f64> = ts.iter().map(|t: &f64| 2.0 * t.powf(-0.8) + 0.5 * t).collect();
        let f = fit_trend(&ts, &vs, TrendForm::PowerLawPlusLinear).unwrap();
        assert!((f.c - 2.0).abs() < 1e-6 && (f.d + 0.8).abs() < 1e-6 && (f.e - 0.5).abs() < 1e-6, "{f:?}");
        let truth = 2.0 * held.powf(-0.8) + 0.5 * held;
        assert!((f.predict(held) / truth - 1.0).abs() < 1e-4);

        let f = fit_trend(&ts, &[0.4; 5], TrendForm::PowerLaw).unwrap();
        assert_eq!(f.d, 0.0);
    }

    #[test]
    fn interior_argmax_cases() {
        assert!(interior_argmax(&[0.1, 0.5, 0.3]));
        assert!(!interior_argmax(&[0.1, 0.3, 0.5]));
        assert!(!interior_argmax(&[0.5, 0.3, 0.1]));
    }
}

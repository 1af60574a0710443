//! Coupled multi-resolution Monte Carlo experiments: a single noise
//! realization at the reference resolution is aggregated down a ladder of
//! coarser grids, each level is solved with its own smoothing radius, and
//! the L²(D) errors against the reference solve are fitted to a rate in
//! log–log coordinates. Also hosts Hölder structure-function estimates.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::green::{gamma_rate, linear_fit, KernelSpec, Truncation};
use crate::grid::{GridSpec, LatticeField};
use crate::mollifier::{epsilon_of_n, MollifierTable};
use crate::noise::{aggregate, Backend, CorrelationModel, NoiseRealization, NoiseSampler};
use crate::solver::{make_g_n, solve, DriftSpec, Solution, SolveConfig};

/// Deterministic forcing terms selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForcingSpec {
    Zero,
    /// `g(x) = ∏_k cos(πx_k)`
    ProductCosine,
    /// `g(x) = x₁`
    FirstCoordinate,
}

impl ForcingSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ForcingSpec::Zero => 0.0,
            ForcingSpec::ProductCosine => x
                .iter()
                .map(|&v| (std::f64::consts::PI * v).cos())
                .product(),
            ForcingSpec::FirstCoordinate => x[0],
        }
    }
}

fn default_backend() -> Backend {
    Backend::Auto
}

fn default_solve() -> SolveConfig {
    SolveConfig::default()
}

/// Full description of a coupled convergence experiment.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExperimentPlan {
    pub d: usize,
    /// compared resolutions, strictly increasing, each dividing `n_ref`
    pub ladder: Vec<usize>,
    /// reference resolution whose solve stands in for the continuum
    /// solution; its bias is of the order of the finest compared error
    pub n_ref: usize,
    pub theta: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub samples: usize,
    pub seed: u64,
    pub drift: DriftSpec,
    pub model: CorrelationModel,
    pub forcing: ForcingSpec,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default = "default_solve")]
    pub solve: SolveConfig,
}

impl ExperimentPlan {
    /// The benchmark configuration exercised by the test suite.
    pub fn default_benchmark() -> Self {
        ExperimentPlan {
            d: 4,
            ladder: vec![4, 8, 16],
            n_ref: 32,
            theta: 12.0,
            lambda: 0.8,
            alpha: 1.25,
            samples: 100,
            seed: 20260823,
            drift: DriftSpec::ArctanPlusLinear {
                scale: 1.0,
                slope: 0.05,
            },
            model: CorrelationModel::Gaussian { sigma: 0.1 },
            forcing: ForcingSpec::ProductCosine,
            backend: Backend::Auto,
            solve: SolveConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(Error::Config("resolution ladder is empty".into()));
        }
        if !self.ladder.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "resolution ladder must be strictly increasing".into(),
            ));
        }
        for &n in &self.ladder {
            if n < 2 || self.n_ref % n != 0 {
                return Err(Error::Config(format!(
                    "ladder entry {n} must be ≥ 2 and divide the reference resolution {}",
                    self.n_ref
                )));
            }
        }
        if *self.ladder.last().unwrap() >= self.n_ref {
            return Err(Error::Config(
                "reference resolution must exceed every compared one".into(),
            ));
        }
        if self.alpha <= 1.0 {
            return Err(Error::Config(format!("α = {} must exceed 1", self.alpha)));
        }
        if !(0.0 < self.lambda && self.lambda <= 1.0) {
            return Err(Error::Config(format!(
                "λ = {} must lie in (0, 1]",
                self.lambda
            )));
        }
        self.model.validate(self.d)?;
        self.drift.validate_contraction(self.d)?;
        // θ gate: the smoothing radius must shrink with n
        epsilon_of_n(self.n_ref, self.theta, self.d)?;
        Ok(())
    }

    pub fn alpha_prime(&self) -> f64 {
        self.alpha / (self.alpha - 1.0)
    }

    /// Smoothing-rate exponent `γ = λ(θ+4−2d)/θ`.
    pub fn gamma(&self) -> f64 {
        gamma_rate(self.lambda, self.theta, self.d)
    }

    /// Predicted L²-error exponent `r* = γα/(2α′)`.
    pub fn r_star(&self) -> f64 {
        self.gamma() * self.alpha / (2.0 * self.alpha_prime())
    }
}

struct Level {
    n: usize,
    kernel: KernelSpec,
    g_n: LatticeField,
}

/// A plan bound to its mollifier, sampler, and per-level kernels.
pub struct Lab {
    plan: ExperimentPlan,
    sampler: NoiseSampler,
    levels: Vec<Level>,
    reference: Level,
}

impl Lab {
    pub fn new(plan: ExperimentPlan, table: Arc<MollifierTable>) -> Result<Self> {
        plan.validate()?;
        let ref_grid = GridSpec::new(plan.d, plan.n_ref)?;
        let sampler = NoiseSampler::new(ref_grid, plan.model, plan.backend, plan.seed)?;
        let build = |n: usize| -> Result<Level> {
            let grid = GridSpec::new(plan.d, n)?;
            let eps = epsilon_of_n(n, plan.theta, plan.d)?;
            let kernel = KernelSpec::new(grid, eps, table.clone(), Truncation::Lattice)?;
            let g_n = make_g_n(grid, |x| plan.forcing.eval(x));
            Ok(Level { n, kernel, g_n })
        };
        let levels = plan
            .ladder
            .iter()
            .map(|&n| build(n))
            .collect::<Result<Vec<Level>>>()?;
        let reference = build(plan.n_ref)?;
        Ok(Lab {
            plan,
            sampler,
            levels,
            reference,
        })
    }

    pub fn plan(&self) -> &ExperimentPlan {
        &self.plan
    }

    /// Runs one coupled sample: the reference noise is drawn once and
    /// every level sees its exact aggregation.
    pub fn coupled_run(&self, sample_index: u64) -> Result<CoupledSample> {
        let reference_noise = self.sampler.sample(sample_index);
        let mut noises = Vec::with_capacity(self.levels.len());
        let mut solutions = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            let noise = aggregate(&reference_noise, self.plan.n_ref / level.n)?;
            let sol = solve(
                &level.kernel,
                &self.plan.drift,
                Some(&level.g_n),
                Some(&noise),
                &self.plan.solve,
            )?;
            noises.push(noise);
            solutions.push(sol);
        }
        let reference = solve(
            &self.reference.kernel,
            &self.plan.drift,
            Some(&self.reference.g_n),
            Some(&reference_noise),
            &self.plan.solve,
        )?;
        Ok(CoupledSample {
            resolutions: self.plan.ladder.clone(),
            noises,
            solutions,
            reference,
            reference_noise,
        })
    }

    /// L²(D) errors per level per sample.
    pub fn collect_errors(&self) -> Result<Vec<Vec<f64>>> {
        let mut errors = vec![Vec::with_capacity(self.plan.samples); self.levels.len()];
        for s in 0..self.plan.samples as u64 {
            let run = self.coupled_run(s)?;
            for (lv, sol) in run.solutions.iter().enumerate() {
                errors[lv].push(l2_error(&sol.field, &run.reference.field)?);
            }
        }
        Ok(errors)
    }
}

/// Solutions of one coupled sample across the ladder.
pub struct CoupledSample {
    pub resolutions: Vec<usize>,
    pub noises: Vec<NoiseRealization>,
    pub solutions: Vec<Solution>,
    pub reference: Solution,
    pub reference_noise: NoiseRealization,
}

/// Exact L²(D) distance between two step functions on nested grids,
/// accumulated cellwise on the fine grid.
pub fn l2_error(coarse: &LatticeField, fine: &LatticeField) -> Result<f64> {
    let d = coarse.grid().dim();
    if d != fine.grid().dim() {
        return Err(Error::GridMismatch("dimension mismatch".into()));
    }
    let nc = coarse.grid().resolution();
    let nf = fine.grid().resolution();
    if nf % nc != 0 {
        return Err(Error::GridMismatch(format!(
            "coarse resolution {nc} does not divide fine resolution {nf}"
        )));
    }
    let m = nf / nc;
    let vol = fine.grid().cell_volume();
    let mut idx = vec![0usize; d];
    let mut cidx = vec![0usize; d];
    let mut total = 0.0;
    loop {
        let fine_interior = idx.iter().all(|&i| i >= 1 && i <= nf - 1);
        let fv = if fine_interior {
            fine.values()[fine.grid().linear_index(&idx)]
        } else {
            0.0
        };
        for (c, &i) in cidx.iter_mut().zip(&idx) {
            *c = i / m;
        }
        let coarse_interior = cidx.iter().all(|&i| i >= 1 && i <= nc - 1);
        let cv = if coarse_interior {
            coarse.values()[coarse.grid().linear_index(&cidx)]
        } else {
            0.0
        };
        let diff = fv - cv;
        total += diff * diff;
        if !bump(&mut idx, nf) {
            break;
        }
    }
    Ok((total * vol).sqrt())
}

fn bump(idx: &mut [usize], limit: usize) -> bool {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < limit {
            return true;
        }
        idx[a] = 0;
    }
    false
}

/// `(mean(e^p))^{1/p}` with a bootstrap standard error.
pub fn moment_estimate(errors: &[f64], p: f64, seed: u64) -> (f64, f64) {
    let n = errors.len();
    let powered: Vec<f64> = errors.iter().map(|e| e.powf(p)).collect();
    let mean = powered.iter().sum::<f64>() / n as f64;
    let estimate = mean.powf(1.0 / p);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let reps = 400;
    let mut boots = Vec::with_capacity(reps);
    for _ in 0..reps {
        let m: f64 = (0..n).map(|_| powered[rng.gen_range(0..n)]).sum::<f64>() / n as f64;
        boots.push(m.powf(1.0 / p));
    }
    let bm = boots.iter().sum::<f64>() / reps as f64;
    let var = boots.iter().map(|b| (b - bm) * (b - bm)).sum::<f64>() / (reps - 1) as f64;
    (estimate, var.sqrt())
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ErrorEstimate {
    pub n: usize,
    pub p: f64,
    pub estimate: f64,
    pub stderr: f64,
}

/// Per-resolution Monte Carlo estimates of `(E‖u_ref − u_n‖^p)^{1/p}`.
pub fn mc_error_moment(lab: &Lab, p: f64) -> Result<Vec<ErrorEstimate>> {
    estimates_from_errors(lab, &lab.collect_errors()?, p)
}

/// Same as `mc_error_moment` but reusing precomputed per-level errors, so
/// multiple moments share one set of solves.
pub fn estimates_from_errors(
    lab: &Lab,
    errors: &[Vec<f64>],
    p: f64,
) -> Result<Vec<ErrorEstimate>> {
    if !(1.0 <= p && p <= lab.plan.alpha_prime()) {
        return Err(Error::Config(format!(
            "moment order p = {p} must lie in [1, α′ = {}]",
            lab.plan.alpha_prime()
        )));
    }
    if lab.plan.samples < 30 {
        return Err(Error::Config(format!(
            "need at least 30 samples for moment estimates, got {}",
            lab.plan.samples
        )));
    }
    Ok(errors
        .iter()
        .zip(&lab.plan.ladder)
        .map(|(e, &n)| {
            let (estimate, stderr) = moment_estimate(e, p, lab.plan.seed ^ n as u64);
            ErrorEstimate {
                n,
                p,
                estimate,
                stderr,
            }
        })
        .collect())
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    /// bootstrap 95% band on the slope
    pub band: (f64, f64),
}

/// Least squares of log error against log n, with a parametric bootstrap
/// band driven by the reported standard errors.
pub fn fit_rate(estimates: &[ErrorEstimate], seed: u64) -> Result<RateFit> {
    if estimates.len() < 3 {
        return Err(Error::Config(format!(
            "rate fit needs at least 3 resolutions, got {}",
            estimates.len()
        )));
    }
    if estimates.iter().any(|e| e.estimate <= 0.0) {
        return Err(Error::Config("degenerate zero error estimate".into()));
    }
    let xs: Vec<f64> = estimates.iter().map(|e| (e.n as f64).ln()).collect();
    let ys: Vec<f64> = estimates.iter().map(|e| e.estimate.ln()).collect();
    let (slope, intercept, residual) = linear_fit(&xs, &ys);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let reps = 800;
    let mut slopes = Vec::with_capacity(reps);
    for _ in 0..reps {
        let perturbed: Vec<f64> = estimates
            .iter()
            .map(|e| {
                let noise: f64 = rng.sample(StandardNormal);
                (e.estimate + noise * e.stderr).max(1e-300).ln()
            })
            .collect();
        let (s, _, _) = linear_fit(&xs, &perturbed);
        slopes.push(s);
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = slopes[(reps as f64 * 0.025) as usize];
    let hi = slopes[(reps as f64 * 0.975) as usize];
    Ok(RateFit {
        slope,
        intercept,
        residual,
        band: (lo, hi),
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ExperimentReport {
    pub plan: ExperimentPlan,
    pub gamma: f64,
    pub r_star: f64,
    pub estimates: Vec<ErrorEstimate>,
    pub fit: Option<RateFit>,
    pub wall_seconds: f64,
}

/// Runs the full coupled experiment for the given moment orders; the rate
/// fit uses the first one.
pub fn run_experiment(lab: &Lab, ps: &[f64]) -> Result<ExperimentReport> {
    let start = Instant::now();
    let errors = lab.collect_errors()?;
    let mut estimates = Vec::new();
    for &p in ps {
        estimates.extend(estimates_from_errors(lab, &errors, p)?);
    }
    let first: Vec<ErrorEstimate> = estimates
        .iter()
        .filter(|e| e.p == ps[0])
        .cloned()
        .collect();
    let fit = if first.len() >= 3 {
        Some(fit_rate(&first, lab.plan.seed ^ 0xf17)?)
    } else {
        None
    };
    Ok(ExperimentReport {
        plan: lab.plan.clone(),
        gamma: lab.plan.gamma(),
        r_star: lab.plan.r_star(),
        estimates,
        fit,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean squared lattice increments at axis-aligned separations, averaged
/// over all positions, axes, and the given fields.
pub fn structure_function(
    fields: &[LatticeField],
    radii: &[usize],
) -> Result<Vec<(f64, f64)>> {
    let first = fields
        .first()
        .ok_or_else(|| Error::Config("no fields given".into()))?;
    let grid = *first.grid();
    let d = grid.dim();
    let n = grid.resolution();
    let h = 1.0 / n as f64;
    if radii.is_empty() || radii.iter().any(|&r| r == 0 || r >= n - 1) {
        return Err(Error::Config(format!(
            "radii must lie in [1, {}]",
            n.saturating_sub(2)
        )));
    }
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut sum = 0.0;
        let mut count = 0usize;
        for f in fields {
            if f.grid() != &grid {
                return Err(Error::GridMismatch("fields on different grids".into()));
            }
            let vals = f.values();
            let mut idx = vec![1usize; d];
            loop {
                let base = grid.linear_index(&idx);
                for a in 0..d {
                    if idx[a] + r <= n - 1 {
                        let mut shifted = idx.clone();
                        shifted[a] += r;
                        let diff = vals[grid.linear_index(&shifted)] - vals[base];
                        sum += diff * diff;
                        count += 1;
                    }
                }
                if !bump_interior(&mut idx, n) {
                    break;
                }
            }
        }
        if count == 0 {
            return Err(Error::Config(format!("empty increment bin at radius {r}")));
        }
        out.push((r as f64 * h, sum / count as f64));
    }
    Ok(out)
}

fn bump_interior(idx: &mut [usize], n: usize) -> bool {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] <= n - 1 {
            return true;
        }
        idx[a] = 1;
    }
    false
}

/// Log–log slope of the structure function over the given radii.
pub fn structure_slope(fields: &[LatticeField], radii: &[usize]) -> Result<f64> {
    let pts = structure_function(fields, radii)?;
    if pts.iter().any(|&(_, s)| s <= 0.0) {
        return Err(Error::Config("degenerate structure function".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|&(sep, _)| sep.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|&(_, s)| s.ln()).collect();
    Ok(linear_fit(&xs, &ys).0)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct HolderReport {
    pub separations: Vec<f64>,
    pub gaussian_increments: Vec<f64>,
    pub solution_increments: Vec<f64>,
    /// log–log slope of the mean squared increments of the pure Gaussian
    /// integral term; ≈ 2λ for λ-Hölder paths
    pub gaussian_slope: f64,
    pub solution_slope: f64,
}

/// Structure-function slopes at the reference resolution for both the
/// pure Gaussian integral term and the full solution.
pub fn holder_structure(lab: &Lab, samples: usize, radii: &[usize]) -> Result<HolderReport> {
    let mut gaussian = Vec::with_capacity(samples);
    let mut full = Vec::with_capacity(samples);
    for s in 0..samples as u64 {
        let noise = lab.sampler.sample(s);
        gaussian.push(crate::noise::green_noise_field(
            &noise,
            &lab.reference.kernel,
        )?);
        let sol = solve(
            &lab.reference.kernel,
            &lab.plan.drift,
            Some(&lab.reference.g_n),
            Some(&noise),
            &lab.plan.solve,
        )?;
        full.push(sol.field);
    }
    let gpts = structure_function(&gaussian, radii)?;
    let spts = structure_function(&full, radii)?;
    Ok(HolderReport {
        separations: gpts.iter().map(|&(s, _)| s).collect(),
        gaussian_increments: gpts.iter().map(|&(_, v)| v).collect(),
        solution_increments: spts.iter().map(|&(_, v)| v).collect(),
        gaussian_slope: structure_slope(&gaussian, radii)?,
        solution_slope: structure_slope(&full, radii)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpectralCoeffs;
    use approx::assert_abs_diff_eq;

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            d: 2,
            ladder: vec![4, 8, 16],
            n_ref: 32,
            theta: 6.0,
            lambda: 0.8,
            alpha: 1.25,
            samples: 40,
            seed: 99,
            drift: DriftSpec::ArctanPlusLinear {
                scale: 1.0,
                slope: 0.05,
            },
            model: CorrelationModel::Gaussian { sigma: 0.1 },
            forcing: ForcingSpec::ProductCosine,
            backend: Backend::Auto,
            solve: SolveConfig::default(),
        }
    }

    #[test]
    fn plan_validation_and_rates() {
        let plan = ExperimentPlan::default_benchmark();
        plan.validate().unwrap();
        assert_abs_diff_eq!(plan.gamma(), 0.8 * 8.0 / 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.alpha_prime(), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.r_star(), (0.8 * 8.0 / 12.0) * 1.25 / 10.0, epsilon = 1e-12);
        let mut bad = plan.clone();
        bad.ladder = vec![4, 6];
        assert!(bad.validate().is_err());
        let mut bad = plan.clone();
        bad.ladder = vec![8, 4];
        assert!(bad.validate().is_err());
        let mut bad = plan.clone();
        bad.n_ref = 16;
        assert!(bad.validate().is_err());
        let mut bad = plan;
        bad.theta = 3.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn l2_error_identities() {
        let g4 = GridSpec::new(1, 4).unwrap();
        let f = LatticeField::from_values(g4, vec![1.0, -2.0, 0.5]).unwrap();
        assert_abs_diff_eq!(l2_error(&f, &f).unwrap(), 0.0, epsilon = 1e-15);
        let zero = LatticeField::zeros(g4);
        assert_abs_diff_eq!(l2_error(&zero, &f).unwrap(), f.l2_norm(), epsilon = 1e-14);
        // hand computation, n = 2 vs n = 4 in d = 1: coarse value a on
        // [1/2, 1), fine values b₁, b₂, b₃ on [1/4, 1)
        let g2 = GridSpec::new(1, 2).unwrap();
        let coarse = LatticeField::from_values(g2, vec![3.0]).unwrap();
        let fine = LatticeField::from_values(g4, vec![1.0, 2.0, 4.0]).unwrap();
        // cells of width 1/4: (0−0)², (1−0)², (2−3)², (4−3)²
        let exact = ((1.0 + 1.0 + 1.0) / 4.0f64).sqrt();
        assert_abs_diff_eq!(l2_error(&coarse, &fine).unwrap(), exact, epsilon = 1e-14);
        let g3 = GridSpec::new(1, 3).unwrap();
        let odd = LatticeField::zeros(g3);
        assert!(l2_error(&odd, &fine).is_err());
    }

    #[test]
    fn moment_estimates() {
        // identical errors: zero spread
        let (est, se) = moment_estimate(&[0.5; 40], 2.0, 1);
        assert_abs_diff_eq!(est, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(se, 0.0, epsilon = 1e-14);
        // p = 2 is the root mean square
        let errs = [1.0, 2.0, 3.0, 4.0];
        let (est, _) = moment_estimate(&errs, 2.0, 1);
        let rms = (errs.iter().map(|e| e * e).sum::<f64>() / 4.0).sqrt();
        assert_abs_diff_eq!(est, rms, epsilon = 1e-14);
    }

    #[test]
    fn fit_rate_exact_on_power_law() {
        let estimates: Vec<ErrorEstimate> = [4usize, 8, 16, 32]
            .iter()
            .map(|&n| ErrorEstimate {
                n,
                p: 2.0,
                estimate: (n as f64).powf(-0.3),
                stderr: 0.0,
            })
            .collect();
        let fit = fit_rate(&estimates, 5).unwrap();
        assert_abs_diff_eq!(fit.slope, -0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.band.0, -0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.band.1, -0.3, epsilon = 1e-12);
        assert!(fit_rate(&estimates[..2], 5).is_err());
    }

    #[test]
    fn coupling_aggregates_reference_noise() {
        let table = Arc::new(MollifierTable::build_psi(1.0).unwrap());
        let lab = Lab::new(small_plan(), table).unwrap();
        let run = lab.coupled_run(0).unwrap();
        for (noise, &n) in run.noises.iter().zip(&run.resolutions) {
            let direct = aggregate(&run.reference_noise, 32 / n).unwrap();
            assert_eq!(noise.values(), direct.values());
        }
        // residuals met tolerance at every level
        for sol in &run.solutions {
            assert!(*sol.residuals.last().unwrap() <= lab.plan().solve.tol);
        }
    }

    #[test]
    fn experiment_errors_decrease_with_resolution() {
        let table = Arc::new(MollifierTable::build_psi(1.0).unwrap());
        let lab = Lab::new(small_plan(), table).unwrap();
        let report = run_experiment(&lab, &[2.0]).unwrap();
        assert_eq!(report.estimates.len(), 3);
        let fit = report.fit.as_ref().unwrap();
        assert!(fit.slope < 0.0, "slope {}", fit.slope);
        let coarse = &report.estimates[0];
        let fine = &report.estimates[2];
        assert!(
            coarse.estimate - fine.estimate
                >= 2.0 * (coarse.stderr + fine.stderr),
            "coarse {} ± {} vs fine {} ± {}",
            coarse.estimate,
            coarse.stderr,
            fine.estimate,
            fine.stderr
        );
    }

    #[test]
    fn estimates_reproducible_and_seed_stable() {
        let table = Arc::new(MollifierTable::build_psi(1.0).unwrap());
        let mut plan = small_plan();
        plan.ladder = vec![4, 8];
        plan.n_ref = 16;
        plan.samples = 30;
        let lab = Lab::new(plan.clone(), table.clone()).unwrap();
        let a = mc_error_moment(&lab, 2.0).unwrap();
        let b = mc_error_moment(&lab, 2.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.estimate, y.estimate);
        }
        plan.seed = 1234;
        let other = Lab::new(plan, table).unwrap();
        let c = mc_error_moment(&other, 2.0).unwrap();
        for (x, y) in a.iter().zip(&c) {
            let gap = (x.estimate - y.estimate).abs();
            assert!(
                gap <= 3.0 * (x.stderr + y.stderr),
                "{} vs {} (se {} + {})",
                x.estimate,
                y.estimate,
                x.stderr,
                y.stderr
            );
        }
    }

    #[test]
    fn moment_preconditions() {
        let table = Arc::new(MollifierTable::build_psi(1.0).unwrap());
        let mut plan = small_plan();
        plan.samples = 10;
        let lab = Lab::new(plan, table.clone()).unwrap();
        assert!(mc_error_moment(&lab, 2.0).is_err());
        let lab = Lab::new(small_plan(), table).unwrap();
        let errs = vec![vec![0.1; 40]; 3];
        assert!(estimates_from_errors(&lab, &errs, 0.5).is_err());
        assert!(estimates_from_errors(&lab, &errs, 9.0).is_err());
    }

    #[test]
    fn structure_function_basics() {
        let grid = GridSpec::new(2, 16).unwrap();
        let constant = LatticeField::from_values(grid, vec![2.5; grid.interior_len()]).unwrap();
        let pts = structure_function(&[constant], &[1, 2, 4]).unwrap();
        for (_, s) in pts {
            assert_abs_diff_eq!(s, 0.0, epsilon = 1e-30);
        }
        let f = LatticeField::from_fn(grid, |i| i[0] as f64);
        assert!(structure_function(&[f.clone()], &[0]).is_err());
        assert!(structure_function(&[f], &[20]).is_err());
    }

    /// Synthetic spectral field with variance |β|^{−(2H+d)}: increments
    /// should scale as |x−z|^{2H}.
    #[test]
    fn structure_slope_recovers_fractional_smoothness() {
        let hurst = 0.5;
        let grid = GridSpec::new(2, 64).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let mut fields = Vec::new();
        for _ in 0..40 {
            let mut coeffs = SpectralCoeffs::zeros(grid);
            let mut pos = 0usize;
            grid.for_each_interior(|beta| {
                let b2: f64 = beta.iter().map(|&b| (b * b) as f64).sum();
                let sigma = b2.powf(-(2.0 * hurst + 2.0) / 4.0);
                let z: f64 = rng.sample(StandardNormal);
                coeffs.coeffs_mut()[pos] = sigma * z;
                pos += 1;
            });
            fields.push(coeffs.to_field());
        }
        // radii skip r = 1, where the spectral cutoff suppresses
        // sub-grid variance, and stay under a decade
        let slope = structure_slope(&fields, &[2, 3, 4, 6]).unwrap();
        assert!(
            (slope - 2.0 * hurst).abs() <= 0.1,
            "slope {slope} vs {}",
            2.0 * hurst
        );
    }

    #[test]
    fn holder_report_on_small_benchmark() {
        let table = Arc::new(MollifierTable::build_psi(1.0).unwrap());
        let mut plan = small_plan();
        plan.ladder = vec![4];
        plan.n_ref = 32;
        let lab = Lab::new(plan, table).unwrap();
        let report = holder_structure(&lab, 20, &[1, 2, 3, 4]).unwrap();
        assert!(report.gaussian_slope > 0.0);
        assert!(report.solution_slope > 0.0);
        assert_eq!(report.separations.len(), 4);
    }
}

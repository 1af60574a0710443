//! Fixed-point solver for the lattice scheme of the semilinear problem
//! `Δu − f(u) = g + noise` with Dirichlet boundary.
//!
//! The discrete mild form is `u = G(f(u) + g_n + n^d F)`, where `G` is the
//! smoothed Green operator and `n^d F` turns cell masses into densities.
//! With drift split as `f = f₁ + f₂` (`f₁` bounded non-decreasing, `f₂`
//! Lipschitz with constant `L`) the Picard map contracts at rate at most
//! `L·‖G‖ ≤ L/(4d)`, so iteration converges whenever `L < 4d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::green::KernelSpec;
use crate::grid::{GridSpec, LatticeField};
use crate::noise::NoiseRealization;

/// Drift nonlinearities with a bounded non-decreasing part and a
/// Lipschitz part, each with its constants available in closed form.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    Zero,
    /// `f(u) = value` (bounded part only)
    Constant { value: f64 },
    /// `f(u) = slope·u` (Lipschitz part only)
    Linear { slope: f64 },
    /// `f(u) = scale·arctan(u) + slope·u`
    ArctanPlusLinear { scale: f64, slope: f64 },
}

impl DriftSpec {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            DriftSpec::Zero => 0.0,
            DriftSpec::Constant { value } => value,
            DriftSpec::Linear { slope } => slope * u,
            DriftSpec::ArctanPlusLinear { scale, slope } => scale * u.atan() + slope * u,
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            DriftSpec::Zero | DriftSpec::Constant { .. } => 0.0,
            DriftSpec::Linear { slope } => slope,
            DriftSpec::ArctanPlusLinear { scale, slope } => scale / (1.0 + u * u) + slope,
        }
    }

    /// Sup bound `M` on the bounded part.
    pub fn bound(&self) -> f64 {
        match *self {
            DriftSpec::Zero | DriftSpec::Linear { .. } => 0.0,
            DriftSpec::Constant { value } => value.abs(),
            DriftSpec::ArctanPlusLinear { scale, .. } => {
                scale.abs() * std::f64::consts::FRAC_PI_2
            }
        }
    }

    /// Lipschitz constant `L` of the Lipschitz part.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            DriftSpec::Zero | DriftSpec::Constant { .. } => 0.0,
            DriftSpec::Linear { slope } | DriftSpec::ArctanPlusLinear { slope, .. } => {
                slope.abs()
            }
        }
    }

    /// `|f₂(0)|`; zero for every kind here since the Lipschitz parts are
    /// linear, kept explicit for the a-priori constant.
    pub fn lipschitz_part_at_zero(&self) -> f64 {
        0.0
    }

    /// The bounded part alone, for monotonicity audits.
    pub fn bounded_part(&self, u: f64) -> f64 {
        match *self {
            DriftSpec::Zero | DriftSpec::Linear { .. } => 0.0,
            DriftSpec::Constant { value } => value,
            DriftSpec::ArctanPlusLinear { scale, .. } => scale * u.atan(),
        }
    }

    /// Contraction gate: the Picard map is a strict contraction only when
    /// `L < 4d`.
    pub fn validate_contraction(&self, d: usize) -> Result<()> {
        let l = self.lipschitz();
        let cap = 4.0 * d as f64;
        if l >= cap {
            return Err(Error::Config(format!(
                "Lipschitz constant L = {l} must stay below 4d = {cap} for the fixed-point \
                 iteration to contract"
            )));
        }
        // arctan scaled negatively would break monotonicity of the bounded part
        if let DriftSpec::ArctanPlusLinear { scale, .. } = *self {
            if scale < 0.0 {
                return Err(Error::Config(
                    "bounded drift part must be non-decreasing (scale ≥ 0)".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Checks `f` is non-decreasing on random ordered pairs in `[−range, range]`.
pub fn audit_monotone(f: impl Fn(f64) -> f64, pairs: usize, range: f64, seed: u64) -> bool {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..pairs {
        let a = rng.gen_range(-range..range);
        let b = rng.gen_range(-range..range);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if f(hi) < f(lo) {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SolveConfig {
    /// sup-norm tolerance on successive iterates
    pub tol: f64,
    pub max_iter: usize,
    /// relaxation weight ω in `u ← (1−ω)u + ωΦ(u)`
    pub relaxation: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol: 1e-10,
            max_iter: 200,
            relaxation: 1.0,
        }
    }
}

/// A converged lattice solution with its iteration diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub field: LatticeField,
    pub iterations: usize,
    /// sup-norm increments per iteration
    pub residuals: Vec<f64>,
}

impl Solution {
    /// Largest ratio of successive increments above the noise floor; the
    /// empirical contraction rate.
    pub fn max_contraction_ratio(&self, floor: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for w in self.residuals.windows(2) {
            if w[0] > floor && w[1] > floor {
                let r = w[1] / w[0];
                best = Some(best.map_or(r, |b: f64| b.max(r)));
            }
        }
        best
    }
}

/// Midpoint sampling of a deterministic forcing term onto the interior
/// cells.
pub fn make_g_n(grid: GridSpec, mut g: impl FnMut(&[f64]) -> f64) -> LatticeField {
    let n = grid.resolution() as f64;
    let mut mid = vec![0.0; grid.dim()];
    LatticeField::from_fn(grid, |idx| {
        for (m, &i) in mid.iter_mut().zip(idx) {
            *m = (i as f64 + 0.5) / n;
        }
        g(&mid)
    })
}

/// `L²(D)` distance between `g` and its midpoint step approximation,
/// sampled on every cell (boundary cells included). Per-cell quadrature
/// uses a tensor Gauss rule of the given order.
pub fn midpoint_projection_error(
    grid: &GridSpec,
    order: usize,
    mut g: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let d = grid.dim();
    let n = grid.resolution();
    let h = 1.0 / n as f64;
    let rule = gauss_quad::GaussLegendre::new(order).expect("quadrature order");
    let nodes: Vec<f64> = rule.nodes().copied().collect();
    let weights: Vec<f64> = rule.weights().copied().collect();
    let mut cell = vec![0usize; d];
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut mid = vec![0.0; d];
    let mut total = 0.0;
    loop {
        for (m, &c) in mid.iter_mut().zip(&cell) {
            *m = (c as f64 + 0.5) * h;
        }
        let step = g(&mid);
        idx.iter_mut().for_each(|i| *i = 0);
        loop {
            let mut jac = 1.0;
            for a in 0..d {
                x[a] = (cell[a] as f64 + 0.5 + nodes[idx[a]] / 2.0) * h;
                jac *= weights[idx[a]] * h / 2.0;
            }
            let diff = g(&x) - step;
            total += jac * diff * diff;
            if !bump(&mut idx, order) {
                break;
            }
        }
        if !bump(&mut cell, n) {
            break;
        }
    }
    total.sqrt()
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

/// Assembles the forcing densities `g_n + n^d F` on the interior cells.
fn forcing(
    grid: &GridSpec,
    g: Option<&LatticeField>,
    noise: Option<&NoiseRealization>,
) -> Result<Vec<f64>> {
    let mut rhs = vec![0.0; grid.interior_len()];
    if let Some(g) = g {
        if g.grid() != grid {
            return Err(Error::GridMismatch("forcing grid differs".into()));
        }
        for (r, v) in rhs.iter_mut().zip(g.values()) {
            *r += v;
        }
    }
    if let Some(f) = noise {
        if f.grid() != grid {
            return Err(Error::GridMismatch("noise grid differs".into()));
        }
        let nd = (grid.resolution() as f64).powi(grid.dim() as i32);
        for (r, v) in rhs.iter_mut().zip(f.values()) {
            *r += nd * v;
        }
    }
    Ok(rhs)
}

/// Relaxed Picard iteration on the mild form.
pub fn solve(
    kernel: &KernelSpec,
    drift: &DriftSpec,
    g: Option<&LatticeField>,
    noise: Option<&NoiseRealization>,
    cfg: &SolveConfig,
) -> Result<Solution> {
    let grid = *kernel.grid();
    drift.validate_contraction(grid.dim())?;
    if !(cfg.relaxation > 0.0 && cfg.relaxation <= 1.0) {
        return Err(Error::Config(format!(
            "relaxation ω = {} must lie in (0, 1]",
            cfg.relaxation
        )));
    }
    let rhs = forcing(&grid, g, noise)?;
    let mut u = LatticeField::zeros(grid);
    let mut residuals = Vec::new();
    let mut work = vec![0.0; grid.interior_len()];
    for iter in 0..cfg.max_iter {
        for (w, (&uv, &rv)) in work.iter_mut().zip(u.values().iter().zip(&rhs)) {
            *w = drift.eval(uv) + rv;
        }
        let mapped = kernel.apply_green(&LatticeField::from_values(grid, work.clone())?)?;
        let mut next = u.values().to_vec();
        let om = cfg.relaxation;
        let mut inc = 0.0f64;
        for (nv, &mv) in next.iter_mut().zip(mapped.values()) {
            let new = (1.0 - om) * *nv + om * mv;
            inc = inc.max((new - *nv).abs());
            *nv = new;
        }
        u = LatticeField::from_values(grid, next)?;
        residuals.push(inc);
        if inc <= cfg.tol {
            return Ok(Solution {
                field: u,
                iterations: iter + 1,
                residuals,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iter,
        residual: *residuals.last().unwrap_or(&f64::NAN),
        history: residuals,
    })
}

/// Grid-point count above which the dense oracle refuses to materialize
/// the system.
pub const DENSE_ORACLE_LIMIT: usize = 1000;

/// Independent reference solve: materializes the Green operator as a
/// dense matrix and runs damped Newton on `u − G(f(u) + rhs) = 0`.
pub fn dense_solve_oracle(
    kernel: &KernelSpec,
    drift: &DriftSpec,
    g: Option<&LatticeField>,
    noise: Option<&NoiseRealization>,
) -> Result<LatticeField> {
    let grid = *kernel.grid();
    let len = grid.interior_len();
    if len > DENSE_ORACLE_LIMIT {
        return Err(Error::Config(format!(
            "dense oracle limited to {DENSE_ORACLE_LIMIT} points, grid has {len}"
        )));
    }
    drift.validate_contraction(grid.dim())?;
    let rhs = forcing(&grid, g, noise)?;
    // columns of G from unit impulses
    let mut gmat = nalgebra::DMatrix::zeros(len, len);
    for c in 0..len {
        let mut e = vec![0.0; len];
        e[c] = 1.0;
        let col = kernel.apply_green(&LatticeField::from_values(grid, e)?)?;
        for (r, &v) in col.values().iter().enumerate() {
            gmat[(r, c)] = v;
        }
    }
    let rhs_v = nalgebra::DVector::from_vec(rhs);
    let mut u = nalgebra::DVector::zeros(len);
    let residual = |u: &nalgebra::DVector<f64>| -> nalgebra::DVector<f64> {
        let fu = nalgebra::DVector::from_iterator(len, u.iter().map(|&v| drift.eval(v)));
        u - &gmat * (fu + &rhs_v)
    };
    let mut r = residual(&u);
    for _ in 0..100 {
        if r.amax() <= 1e-14 {
            break;
        }
        let jdiag =
            nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                len,
                u.iter().map(|&v| drift.derivative(v)),
            ));
        let jac = nalgebra::DMatrix::identity(len, len) - &gmat * jdiag;
        let step = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Config("singular Newton system".into()))?;
        // backtracking damping
        let mut t = 1.0;
        loop {
            let trial = &u - t * &step;
            let rt = residual(&trial);
            if rt.amax() < r.amax() || t < 1e-8 {
                u = trial;
                r = rt;
                break;
            }
            t /= 2.0;
        }
    }
    if r.amax() > 1e-12 {
        return Err(Error::NonConvergence {
            iterations: 100,
            residual: r.amax(),
            history: vec![],
        });
    }
    LatticeField::from_values(grid, u.as_slice().to_vec())
}

/// Largest cellwise excess of the solution driven by `drift_hi` over the
/// one driven by `drift_lo`, on a shared realization. When
/// `drift_hi ≥ drift_lo` pointwise the excess should be non-positive:
/// larger drift pushes the solution down.
pub fn comparison_gap(
    kernel: &KernelSpec,
    drift_hi: &DriftSpec,
    drift_lo: &DriftSpec,
    g: Option<&LatticeField>,
    noise: Option<&NoiseRealization>,
    cfg: &SolveConfig,
) -> Result<f64> {
    let hi = solve(kernel, drift_hi, g, noise, cfg)?;
    let lo = solve(kernel, drift_lo, g, noise, cfg)?;
    Ok(hi
        .field
        .values()
        .iter()
        .zip(lo.field.values())
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AprioriReport {
    pub resolutions: Vec<usize>,
    pub sup_norms: Vec<f64>,
    /// measured sup over lattice points of `∫|G(x,y)|dy`
    pub green_l1_bound: f64,
    /// a-priori sup-norm constant `((M+|f₂(0)|)Ĉ₁ + ‖Gg‖∞)/(1−LĈ₁)`
    pub kappa: f64,
}

/// Solves the deterministic problem on a resolution ladder and reports
/// sup norms together with the a-priori bound they should respect.
pub fn apriori_norm_check(
    d: usize,
    resolutions: &[usize],
    theta: f64,
    table: &std::sync::Arc<crate::mollifier::MollifierTable>,
    drift: &DriftSpec,
    g: impl Fn(&[f64]) -> f64 + Copy,
    cfg: &SolveConfig,
) -> Result<AprioriReport> {
    if resolutions.is_empty() {
        return Err(Error::Config("empty resolution ladder".into()));
    }
    let mut sups = Vec::new();
    let mut c1_max = 0.0f64;
    let mut kappa = 0.0f64;
    for &n in resolutions {
        let grid = GridSpec::new(d, n)?;
        let eps = crate::mollifier::epsilon_of_n(n, theta, d)?;
        let kernel = KernelSpec::new(
            grid,
            eps,
            table.clone(),
            crate::green::Truncation::Lattice,
        )?;
        let g_n = make_g_n(grid, g);
        let sol = solve(&kernel, drift, Some(&g_n), None, cfg)?;
        sups.push(sol.field.sup_norm());
        // |G|·1: the kernel has one sign on this problem, so the Green
        // image of the constant one measures its L¹ norm in y
        let ones = LatticeField::from_values(grid, vec![1.0; grid.interior_len()])?;
        let c1 = kernel.apply_green(&ones)?.sup_norm();
        c1_max = c1_max.max(c1);
        let b = kernel.apply_green(&g_n)?.sup_norm();
        let l = drift.lipschitz();
        if l * c1 < 1.0 {
            let k = ((drift.bound() + drift.lipschitz_part_at_zero()) * c1 + b)
                / (1.0 - l * c1);
            kappa = kappa.max(k);
        }
    }
    Ok(AprioriReport {
        resolutions: resolutions.to_vec(),
        sup_norms: sups,
        green_l1_bound: c1_max,
        kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::Truncation;
    use crate::grid::GridSpec;
    use crate::mollifier::{epsilon_of_n, MollifierTable};
    use crate::noise::{Backend, CorrelationModel, NoiseSampler};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn kernel(d: usize, n: usize, eps: f64) -> KernelSpec {
        let t = Arc::new(MollifierTable::build_psi(1.0).unwrap());
        KernelSpec::new(GridSpec::new(d, n).unwrap(), eps, t, Truncation::Lattice).unwrap()
    }

    #[test]
    fn zero_drift_reduces_to_green_image() {
        let k = kernel(2, 4, 0.3);
        let g = make_g_n(*k.grid(), |x| (std::f64::consts::PI * x[0]).sin());
        let sol = solve(&k, &DriftSpec::Zero, Some(&g), None, &SolveConfig::default()).unwrap();
        let direct = k.apply_green(&g).unwrap();
        for (a, b) in sol.field.values().iter().zip(direct.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        assert!(sol.iterations <= 2);
    }

    #[test]
    fn picard_matches_dense_newton_linear() {
        let k = kernel(2, 4, 0.25);
        let g = make_g_n(*k.grid(), |x| x[0] + 0.3 * x[1]);
        let drift = DriftSpec::Linear { slope: 0.05 };
        let sol = solve(&k, &drift, Some(&g), None, &SolveConfig::default()).unwrap();
        let oracle = dense_solve_oracle(&k, &drift, Some(&g), None).unwrap();
        let scale = oracle.sup_norm();
        for (a, b) in sol.field.values().iter().zip(oracle.values()) {
            assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn picard_matches_dense_newton_arctan() {
        let k = kernel(2, 4, 0.25);
        let g = make_g_n(*k.grid(), |x| (2.0 * x[0] - 1.0) * x[1]);
        let drift = DriftSpec::ArctanPlusLinear {
            scale: 1.0,
            slope: 0.1,
        };
        let sol = solve(&k, &drift, Some(&g), None, &SolveConfig::default()).unwrap();
        let oracle = dense_solve_oracle(&k, &drift, Some(&g), None).unwrap();
        let scale = oracle.sup_norm();
        for (a, b) in sol.field.values().iter().zip(oracle.values()) {
            assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn contraction_ratio_bounded_by_lipschitz_over_4d() {
        let d = 2usize;
        let k = kernel(d, 6, 0.2);
        let drift = DriftSpec::Linear { slope: 2.0 };
        let s = NoiseSampler::new(
            *k.grid(),
            CorrelationModel::Gaussian { sigma: 0.2 },
            Backend::Auto,
            11,
        )
        .unwrap();
        let noise = s.sample(0);
        let g = make_g_n(*k.grid(), |x| x[0]);
        let sol = solve(&k, &drift, Some(&g), Some(&noise), &SolveConfig::default()).unwrap();
        let ratio = sol.max_contraction_ratio(1e-13).unwrap();
        let bound = drift.lipschitz() / (4.0 * d as f64) + 0.05;
        assert!(ratio <= bound, "ratio {ratio} vs bound {bound}");
    }

    #[test]
    fn comparison_orders_solutions() {
        let k = kernel(2, 5, 0.25);
        let g = make_g_n(*k.grid(), |x| x[0] - x[1]);
        let s = NoiseSampler::new(
            *k.grid(),
            CorrelationModel::Gaussian { sigma: 0.15 },
            Backend::Auto,
            23,
        )
        .unwrap();
        let hi = DriftSpec::Constant { value: 1.0 };
        let lo = DriftSpec::Constant { value: -0.5 };
        for i in 0..5u64 {
            let noise = s.sample(i);
            let gap = comparison_gap(&k, &hi, &lo, Some(&g), Some(&noise), &SolveConfig::default())
                .unwrap();
            assert!(gap <= 1e-8, "ordering violated by {gap}");
        }
    }

    #[test]
    fn midpoint_error_closed_form() {
        // for g(x) = x₁ in d = 1 the step error is exactly n^{−1}/√12
        for n in [4usize, 8, 16] {
            let grid = GridSpec::new(1, n).unwrap();
            let err = midpoint_projection_error(&grid, 8, |x| x[0]);
            let exact = 1.0 / (n as f64 * 12f64.sqrt());
            assert_abs_diff_eq!(err, exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn make_g_n_samples_midpoints() {
        let grid = GridSpec::new(2, 4).unwrap();
        let f = make_g_n(grid, |x| x[0] + 10.0 * x[1]);
        assert_abs_diff_eq!(
            f.get(&[1, 2]).unwrap(),
            1.5 / 4.0 + 10.0 * 2.5 / 4.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn monotonicity_audit() {
        assert!(audit_monotone(|u| u.atan(), 10_000, 50.0, 3));
        assert!(!audit_monotone(|u| -u.atan(), 10_000, 50.0, 3));
        let d = DriftSpec::ArctanPlusLinear {
            scale: 2.0,
            slope: 0.1,
        };
        assert!(audit_monotone(|u| d.bounded_part(u), 10_000, 50.0, 7));
    }

    #[test]
    fn contraction_gate_refuses_large_lipschitz() {
        let drift = DriftSpec::Linear { slope: 100.0 };
        assert!(drift.validate_contraction(4).is_err());
        assert!(drift.validate_contraction(30).is_ok());
        let neg = DriftSpec::ArctanPlusLinear {
            scale: -1.0,
            slope: 0.0,
        };
        assert!(neg.validate_contraction(4).is_err());
    }

    #[test]
    fn non_convergence_reports_history() {
        let k = kernel(2, 4, 0.3);
        let g = make_g_n(*k.grid(), |x| x[0]);
        let drift = DriftSpec::Linear { slope: 7.9 };
        let cfg = SolveConfig {
            tol: 1e-14,
            max_iter: 3,
            relaxation: 1.0,
        };
        match solve(&k, &drift, Some(&g), None, &cfg) {
            Err(Error::NonConvergence {
                iterations,
                history,
                ..
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn apriori_norms_stay_bounded_across_resolutions() {
        let table = Arc::new(MollifierTable::build_psi(1.0).unwrap());
        let drift = DriftSpec::ArctanPlusLinear {
            scale: 1.0,
            slope: 0.05,
        };
        let report = apriori_norm_check(
            2,
            &[4, 8, 16],
            6.0,
            &table,
            &drift,
            |x| (std::f64::consts::PI * x[0]).cos(),
            &SolveConfig::default(),
        )
        .unwrap();
        let lo = report.sup_norms.first().unwrap();
        let hi = report.sup_norms.last().unwrap();
        assert!(hi <= &(1.25 * lo), "norms {:?}", report.sup_norms);
        assert!(report.kappa.is_finite() && report.kappa > 0.0);
        // every measured norm sits under the a-priori constant
        for s in &report.sup_norms {
            assert!(*s <= report.kappa, "{s} vs κ = {}", report.kappa);
        }
        let _ = epsilon_of_n(4, 6.0, 2).unwrap();
    }
}

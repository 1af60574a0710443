//! Smoothed and discrete Green kernels for the Dirichlet problem on the
//! unit cube, their application to lattice fields, kernel norms, and
//! empirical smoothing/truncation error rates.
//!
//! Two kernels share one spectral skeleton:
//!
//! * the smoothed continuum kernel, a sine series over `β ∈ I^d_N` with
//!   coefficients `−2^d Ψ̂(εβ)/(π²|β|²)`;
//! * the lattice kernel, a finite sum over `β ∈ I^d_n` with coefficients
//!   `2^d Ψ̂(εβ)/λ_β` evaluated through the cell map `κ_n`.
//!
//! Applying the lattice kernel to a step field is a diagonal operation in
//! the orthonormal sine basis with multiplier `Ψ̂(εβ)/λ_β`; the `2^d` in
//! the kernel coefficient and the cell volume of the integral cancel
//! against the basis normalization. That constant was audited once against
//! the dense inverse and is frozen here.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{kappa_n, norm_sq, GridSpec, LatticeField, SineTransform};
use crate::mollifier::MollifierTable;

/// Below this value of `Ψ̂(εβ)` a kernel coefficient is set to exactly 0.
pub const UNDERFLOW_GUARD: f64 = 1e-300;

/// Which index set and evaluation rule a kernel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// `β ∈ I^d_n`, evaluated through the cell map (step-function kernel).
    Lattice,
    /// `β ∈ I^d_N` for a stated `N > n`, evaluated at the points themselves.
    Series { n_ref: usize },
}

/// A Green kernel tied to a grid, a smoothing parameter, and a mollifier.
#[derive(Clone)]
pub struct KernelSpec {
    grid: GridSpec,
    epsilon: f64,
    mollifier: Arc<MollifierTable>,
    truncation: Truncation,
}

/// Series coefficient `−2^d Ψ̂(εβ)/(π²|β|²)` for `β ∈ I^d`.
pub fn smoothed_coefficient(
    beta: &[usize],
    epsilon: f64,
    table: &MollifierTable,
) -> f64 {
    let d = beta.len() as i32;
    let psi = table.big_psi_hat(beta, epsilon);
    if psi < UNDERFLOW_GUARD {
        return 0.0;
    }
    -(2f64.powi(d)) * psi / (PI * PI * norm_sq(beta))
}

/// Lattice coefficient `2^d Ψ̂(εβ)/λ_β` for `β ∈ I^d_n`.
pub fn discrete_coefficient(
    beta: &[usize],
    epsilon: f64,
    grid: &GridSpec,
    table: &MollifierTable,
) -> Result<f64> {
    let lambda = crate::grid::eigenvalue(beta, grid)?;
    let psi = table.big_psi_hat(beta, epsilon);
    Ok(guarded_ratio(psi, lambda) * 2f64.powi(grid.dim() as i32))
}

/// `Ψ̂/λ` with the underflow guard applied.
fn guarded_ratio(big_psi_hat: f64, lambda: f64) -> f64 {
    if big_psi_hat < UNDERFLOW_GUARD {
        0.0
    } else {
        big_psi_hat / lambda
    }
}

impl KernelSpec {
    pub fn new(
        grid: GridSpec,
        epsilon: f64,
        mollifier: Arc<MollifierTable>,
        truncation: Truncation,
    ) -> Result<Self> {
        if epsilon < 0.0 {
            return Err(Error::Config(format!(
                "smoothing parameter must be nonnegative, got {epsilon}"
            )));
        }
        if let Truncation::Series { n_ref } = truncation {
            if n_ref <= grid.resolution() {
                return Err(Error::Config(format!(
                    "series truncation {n_ref} must exceed the grid resolution {}",
                    grid.resolution()
                )));
            }
        }
        Ok(KernelSpec {
            grid,
            epsilon,
            mollifier,
            truncation,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mollifier(&self) -> &MollifierTable {
        &self.mollifier
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    /// The coefficient of `β` under this kernel's truncation rule.
    pub fn coefficient(&self, beta: &[usize]) -> Result<f64> {
        match self.truncation {
            Truncation::Lattice => {
                discrete_coefficient(beta, self.epsilon, &self.grid, &self.mollifier)
            }
            Truncation::Series { n_ref } => {
                if beta.len() != self.grid.dim() || beta.iter().any(|&b| b == 0 || b >= n_ref) {
                    return Err(Error::IndexOutOfRange {
                        index: beta.to_vec(),
                        n: n_ref,
                    });
                }
                Ok(smoothed_coefficient(beta, self.epsilon, &self.mollifier))
            }
        }
    }

    /// `x ↦ ∫_D G(x,y) h(y) dy` for a step field `h` on the same grid.
    ///
    /// Diagonal in the orthonormal sine basis with multiplier `Ψ̂(εβ)/λ_β`.
    pub fn apply_green(&self, h: &LatticeField) -> Result<LatticeField> {
        if self.truncation != Truncation::Lattice {
            return Err(Error::Config(
                "apply_green requires the lattice truncation".into(),
            ));
        }
        if h.grid() != &self.grid {
            return Err(Error::GridMismatch(
                "field grid differs from kernel grid".into(),
            ));
        }
        let transform = SineTransform::new(self.grid);
        let mut spec = transform.forward(h);
        let n = self.grid.resolution();
        let mut pos = 0;
        let coeffs = spec.coeffs_mut();
        self.grid.for_each_interior(|beta| {
            let lambda = crate::grid::eigenvalue_unchecked(beta, n);
            let psi = self.mollifier.big_psi_hat(beta, self.epsilon);
            coeffs[pos] *= guarded_ratio(psi, lambda);
            pos += 1;
        });
        Ok(transform.inverse(&spec))
    }

    /// Pointwise kernel value `G(x,y)`.
    pub fn eval_kernel(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let d = self.grid.dim();
        let n = self.grid.resolution() as f64;
        match self.truncation {
            Truncation::Lattice => {
                let kx = kappa_n(x, &self.grid)?;
                let ky = kappa_n(y, &self.grid)?;
                let sx: Vec<f64> = kx.iter().map(|&k| k as f64 / n).collect();
                let sy: Vec<f64> = ky.iter().map(|&k| k as f64 / n).collect();
                let mut total = 0.0;
                self.grid.for_each_interior(|beta| {
                    let lambda = crate::grid::eigenvalue_unchecked(beta, n as usize);
                    let psi = self.mollifier.big_psi_hat(beta, self.epsilon);
                    let c = guarded_ratio(psi, lambda) * 2f64.powi(d as i32);
                    total += c
                        * crate::grid::sine_basis(beta, &sx)
                        * crate::grid::sine_basis(beta, &sy);
                });
                Ok(total)
            }
            Truncation::Series { n_ref } => {
                for (coord, &v) in x.iter().chain(y).enumerate() {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::OutOfDomain {
                            coord: coord % d,
                            value: v,
                        });
                    }
                }
                let mut total = 0.0;
                let series_grid = GridSpec::new(d, n_ref)?;
                series_grid.for_each_interior(|beta| {
                    total += smoothed_coefficient(beta, self.epsilon, &self.mollifier)
                        * crate::grid::sine_basis(beta, x)
                        * crate::grid::sine_basis(beta, y);
                });
                Ok(total)
            }
        }
    }

    /// `‖G(x,·)‖_{L²(D)}` by Parseval over the kernel's index set.
    pub fn l2_norm_in_y(&self, x: &[f64]) -> Result<f64> {
        let d = self.grid.dim() as i32;
        let basis_sq = 0.5f64.powi(d);
        match self.truncation {
            Truncation::Lattice => {
                let kx = kappa_n(x, &self.grid)?;
                if kx.iter().any(|&k| k == 0 || k >= self.grid.resolution()) {
                    return Ok(0.0);
                }
                let n = self.grid.resolution();
                let sx: Vec<f64> = kx.iter().map(|&k| k as f64 / n as f64).collect();
                let mut total = 0.0;
                self.grid.for_each_interior(|beta| {
                    let lambda = crate::grid::eigenvalue_unchecked(beta, n);
                    let psi = self.mollifier.big_psi_hat(beta, self.epsilon);
                    let c = guarded_ratio(psi, lambda) * 2f64.powi(d);
                    let v = crate::grid::sine_basis(beta, &sx);
                    total += c * c * v * v * basis_sq;
                });
                Ok(total.sqrt())
            }
            Truncation::Series { n_ref } => {
                let series_grid = GridSpec::new(self.grid.dim(), n_ref)?;
                let mut total = 0.0;
                series_grid.for_each_interior(|beta| {
                    let a = smoothed_coefficient(beta, self.epsilon, &self.mollifier);
                    let v = crate::grid::sine_basis(beta, x);
                    total += a * a * v * v * basis_sq;
                });
                Ok(total.sqrt())
            }
        }
    }

    /// `‖G(x,·)‖²_{L²(D)}` for every interior cell at once, so the sup over
    /// `x` is exact rather than sampled.
    ///
    /// `Σ_β c_β² ∏_k sin²(β_k π κ_k/n)` is a chain of per-axis matrix
    /// contractions of the (non-factorizing) coefficient-square tensor.
    pub fn l2_norm_sq_all_cells(&self) -> Result<LatticeField> {
        if self.truncation != Truncation::Lattice {
            return Err(Error::Config(
                "cellwise norms require the lattice truncation".into(),
            ));
        }
        let d = self.grid.dim();
        let n = self.grid.resolution();
        let m = n - 1;
        // per-axis mollifier factors, shared by every axis
        let psi1: Vec<f64> = (1..n)
            .map(|b| self.mollifier.psi_hat(self.epsilon * b as f64))
            .collect();
        let mut c2 = Vec::with_capacity(self.grid.interior_len());
        self.grid.for_each_interior(|beta| {
            let lambda = crate::grid::eigenvalue_unchecked(beta, n);
            let psi: f64 = beta.iter().map(|&b| psi1[b - 1]).product();
            let c = guarded_ratio(psi, lambda) * 2f64.powi(d as i32);
            c2.push(c * c);
        });
        // T[κ][β] = sin²(βπκ/n), identical on every axis
        let mut t = vec![0.0; m * m];
        for k in 1..n {
            for b in 1..n {
                let s = (b as f64 * k as f64 * PI / n as f64).sin();
                t[(k - 1) * m + (b - 1)] = s * s;
            }
        }
        let mut data = c2;
        for _ in 0..d {
            data = contract_leading(&data, m, &t, m);
        }
        for v in &mut data {
            *v *= 0.5f64.powi(d as i32);
        }
        LatticeField::from_values(self.grid, data)
    }

    /// Exact `sup_x ‖G(x,·)‖_{L²(D)}` for the lattice kernel.
    pub fn sup_l2_norm(&self) -> Result<f64> {
        let cells = self.l2_norm_sq_all_cells()?;
        Ok(cells.values().iter().fold(0.0f64, |a, &v| a.max(v)).sqrt())
    }
}

/// Leading-axis tensor contraction: input shape `(lead, rest)`, output
/// shape `(rest, rows)` with `out[r, b] = Σ_l mat[b, l]·in[l, r]`. Applying
/// it once per axis cycles the axis order back to the original.
fn contract_leading(data: &[f64], lead: usize, mat: &[f64], rows: usize) -> Vec<f64> {
    let rest = data.len() / lead;
    let mut out = vec![0.0; rest * rows];
    for r in 0..rest {
        let dst = &mut out[r * rows..(r + 1) * rows];
        for l in 0..lead {
            let v = data[l * rest + r];
            if v == 0.0 {
                continue;
            }
            for (b, o) in dst.iter_mut().enumerate() {
                *o += mat[b * lead + l] * v;
            }
        }
    }
    out
}

/// Dense reference for `apply_green`: materialize the stencil operator by
/// columns, materialize the smoothing operator from explicit sine vectors,
/// and solve the linear system by LU. Shares no code with the spectral
/// fast path beyond the stencil itself.
pub fn dense_green_oracle(kernel: &KernelSpec, h: &LatticeField) -> Result<LatticeField> {
    if kernel.truncation != Truncation::Lattice {
        return Err(Error::Config("dense oracle is lattice-only".into()));
    }
    let grid = *kernel.grid();
    if h.grid() != &grid {
        return Err(Error::GridMismatch("field grid differs".into()));
    }
    let len = grid.interior_len();
    let n = grid.resolution();
    let d = grid.dim();
    // stencil operator, column by column
    let mut a = nalgebra::DMatrix::<f64>::zeros(len, len);
    for j in 0..len {
        let mut e = LatticeField::zeros(grid);
        e.values_mut()[j] = 1.0;
        let col = crate::grid::apply_a(&e);
        for (i, &v) in col.values().iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    // smoothing operator S = Bᵗ diag(Ψ̂(εβ)) B with orthonormal sine rows
    let scale = (2.0 / n as f64).powf(d as f64 / 2.0);
    let mut b = nalgebra::DMatrix::<f64>::zeros(len, len);
    let betas = grid.interior_indices();
    for (r, beta) in betas.iter().enumerate() {
        let mut c = 0;
        grid.for_each_interior(|idx| {
            let v: f64 = beta
                .components()
                .iter()
                .zip(idx)
                .map(|(&bb, &ii)| (bb as f64 * ii as f64 * PI / n as f64).sin())
                .product();
            b[(r, c)] = scale * v;
            c += 1;
        });
    }
    let mut diag = nalgebra::DVector::<f64>::zeros(len);
    for (r, beta) in betas.iter().enumerate() {
        diag[r] = kernel
            .mollifier
            .big_psi_hat(beta.components(), kernel.epsilon);
    }
    let s = b.transpose() * nalgebra::DMatrix::from_diagonal(&diag) * &b;
    let rhs = s * nalgebra::DVector::from_column_slice(h.values());
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Config("singular stencil matrix".into()))?;
    LatticeField::from_values(grid, sol.as_slice().to_vec())
}

/// Pointwise evaluator for the full smoothed series kernel (`β ∈ ℕ^d`),
/// through the heat representation
/// `1/(π²|β|²) = ∫_0^∞ exp(−π²|β|² t) dt`:
///
/// `G(x,y) = −2^d ∫_0^∞ ∏_k S(t; x_k, y_k) dt` with
/// `S(t;a,b) = ½[h_t(|a−b|) − h_t(a+b)]` and
/// `h_t(u) = Σ_l ψ̂(εl) e^{−π²l²t} cos(lπu)`.
///
/// Each `h_t` is a single FFT onto a fine periodic grid, read back by
/// cubic interpolation; the `t` integral is a composite Gauss rule on a
/// log scale. Makes large Monte Carlo sweeps over `D×D` affordable in
/// `d = 4`, where direct index sums are out of reach.
pub struct SeriesEvaluator {
    d: usize,
    epsilon: f64,
    m: usize,
    /// quadrature weight × t (log-scale jacobian), one per node
    weights: Vec<f64>,
    /// `h_t` sampled on `u_j = 2j/m`, one table per node
    tables: Vec<Vec<f64>>,
}

const HEAT_PANELS: usize = 48;
const HEAT_NODES_PER_PANEL: usize = 8;
const HEAT_LOG_T_MIN: f64 = -45.0;
const HEAT_T_MAX: f64 = 6.0;
/// Per-term threshold below which series terms are dropped.
const SERIES_TERM_TOL: f64 = 1e-14;

impl SeriesEvaluator {
    pub fn new(d: usize, epsilon: f64, table: &MollifierTable) -> Result<Self> {
        if d < 3 {
            return Err(Error::Config(
                "heat-representation evaluator needs d ≥ 3 for an integrable diagonal".into(),
            ));
        }
        if epsilon <= 0.0 {
            return Err(Error::Config("evaluator needs ε > 0".into()));
        }
        // frequency cutoff: last ξ (on a fine scan, capped at the cache
        // range) where ψ̂ is above the term tolerance
        let mut xi_star: f64 = 1.0;
        let mut xi = 0.0;
        while xi <= 96.0 {
            if table.psi_hat(xi) >= SERIES_TERM_TOL {
                xi_star = xi;
            }
            xi += 1.0 / 64.0;
        }
        let l_max = ((xi_star / epsilon).ceil() as usize).max(4);
        let m = (8 * l_max).next_power_of_two().max(4096);
        let psi1: Vec<f64> = (1..=l_max)
            .map(|l| table.psi_hat(epsilon * l as f64))
            .collect();

        // Gauss–Legendre nodes on u = ln t, reused per panel
        let rule = gauss_quad::GaussLegendre::new(HEAT_NODES_PER_PANEL).expect("order");
        let base_nodes: Vec<f64> = rule.nodes().copied().collect();
        let base_weights: Vec<f64> = rule.weights().copied().collect();
        let u_max = HEAT_T_MAX.ln();
        let panel_w = (u_max - HEAT_LOG_T_MIN) / HEAT_PANELS as f64;

        let mut t_nodes = Vec::new();
        let mut weights = Vec::new();
        for p in 0..HEAT_PANELS {
            let a = HEAT_LOG_T_MIN + p as f64 * panel_w;
            for (&z, &w) in base_nodes.iter().zip(&base_weights) {
                // gauss-quad uses nodes on (−1,1); map to the panel
                let u = a + panel_w * (z + 1.0) / 2.0;
                let t = u.exp();
                t_nodes.push(t);
                weights.push(w * panel_w / 2.0 * t);
            }
        }

        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(m);
        let tables: Vec<Vec<f64>> = t_nodes
            .par_iter()
            .map(|&t| {
                let mut buf = vec![Complex::new(0.0, 0.0); m];
                for (l, &p) in psi1.iter().enumerate() {
                    let l1 = l + 1;
                    let c = p * (-PI * PI * (l1 * l1) as f64 * t).exp();
                    if c > 0.0 {
                        buf[l1].re = c;
                    }
                }
                fft.process(&mut buf);
                buf.into_iter().map(|z| z.re).collect()
            })
            .collect();

        Ok(SeriesEvaluator {
            d,
            epsilon,
            m,
            weights,
            tables,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Periodic cubic interpolation of one table at `u ∈ [0,2]`.
    fn interp(table: &[f64], m: usize, u: f64) -> f64 {
        let pos = u * (m as f64) / 2.0;
        let j = pos.floor();
        let t = pos - j;
        let j = j as isize;
        let wrap = |k: isize| -> f64 { table[(k.rem_euclid(m as isize)) as usize] };
        let (ym1, y0, y1, y2) = (wrap(j - 1), wrap(j), wrap(j + 1), wrap(j + 2));
        let c0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let c1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let c2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let c3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        c0 * ym1 + c1 * y0 + c2 * y1 + c3 * y2
    }

    /// `G(x,y)` for `x, y ∈ [0,1]^d`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.d);
        debug_assert_eq!(y.len(), self.d);
        let mut total = 0.0;
        for (table, &w) in self.tables.iter().zip(&self.weights) {
            let mut prod = 1.0;
            for k in 0..self.d {
                let diff = (x[k] - y[k]).abs();
                let sum = x[k] + y[k];
                let s = 0.5
                    * (Self::interp(table, self.m, diff) - Self::interp(table, self.m, sum));
                prod *= s;
                if prod == 0.0 {
                    break;
                }
            }
            total += w * prod;
        }
        -(2f64.powi(self.d as i32)) * total
    }
}

/// Stratified (Latin hypercube) sample of `count` points in `[0,1)^dim`.
fn latin_hypercube(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; count];
    for axis in 0..dim {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(axis as u64 + 1)));
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(&mut rng);
        for (p, &s) in points.iter_mut().zip(&strata) {
            p[axis] = (s as f64 + rng.gen::<f64>()) / count as f64;
        }
    }
    points
}

/// `‖G^{ε₁} − G^{ε₂}‖_{L^α(D×D)}` by stratified Monte Carlo; returns the
/// norm and its delta-method standard error.
pub fn smoothing_proxy_norm(
    d: usize,
    eps_coarse: f64,
    eps_fine: f64,
    alpha: f64,
    table: &MollifierTable,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if eps_coarse == eps_fine {
        return Ok((0.0, 0.0));
    }
    let coarse = SeriesEvaluator::new(d, eps_coarse, table)?;
    let fine = SeriesEvaluator::new(d, eps_fine, table)?;
    let points = latin_hypercube(2 * d, samples, seed);
    let sums: Vec<(f64, f64)> = points
        .par_chunks(1024)
        .map(|chunk| {
            let mut s = 0.0;
            let mut s2 = 0.0;
            for p in chunk {
                let (x, y) = p.split_at(d);
                let z = (coarse.eval(x, y) - fine.eval(x, y)).abs().powf(alpha);
                s += z;
                s2 += z * z;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums
        .iter()
        .fold((0.0, 0.0), |(a, b), &(c, d2)| (a + c, b + d2));
    let mean = s / samples as f64;
    let var = (s2 / samples as f64 - mean * mean).max(0.0) / samples as f64;
    let norm = mean.powf(1.0 / alpha);
    let se = if mean > 0.0 {
        var.sqrt() * norm / (alpha * mean)
    } else {
        0.0
    };
    Ok((norm, se))
}

/// Result of a log–log rate fit of the smoothing proxy.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SmoothingRate {
    pub epsilons: Vec<f64>,
    pub norms: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub slope: f64,
    pub residual: f64,
}

/// Upper end of the admissible `α` interval for a given `(d, λ)`.
pub fn alpha_upper_bound(d: usize, lambda: f64) -> f64 {
    let d = d as f64;
    d / ((d - 2.0) * (2.0 - lambda)).max((d - 1.0) * lambda)
}

/// Fits the decay of `‖G^ε − G^{ε/2}‖_{L^α(D×D)}` against `ε` and returns
/// the slope with its fit residual; the smoothing theory predicts a slope
/// of at least `λ` for admissible `α`.
pub fn smoothing_error_rate(
    d: usize,
    epsilons: &[f64],
    alpha: f64,
    lambda: f64,
    table: &MollifierTable,
    samples: usize,
    seed: u64,
) -> Result<SmoothingRate> {
    if epsilons.len() < 3 {
        return Err(Error::Config(
            "rate fit needs at least 3 smoothing parameters".into(),
        ));
    }
    if !(0.0 < lambda && lambda <= 1.0) {
        return Err(Error::Config(format!("λ = {lambda} must lie in (0,1]")));
    }
    let bound = alpha_upper_bound(d, lambda);
    if !(alpha > 0.0 && alpha < bound) {
        return Err(Error::Config(format!(
            "α = {alpha} outside the admissible interval (0, {bound:.4})"
        )));
    }
    let mut norms = Vec::new();
    let mut stderrs = Vec::new();
    for &eps in epsilons {
        let (norm, se) = smoothing_proxy_norm(d, eps, eps / 2.0, alpha, table, samples, seed)?;
        norms.push(norm);
        stderrs.push(se);
    }
    let xs: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let (slope, _, residual) = linear_fit(&xs, &ys);
    Ok(SmoothingRate {
        epsilons: epsilons.to_vec(),
        norms,
        stderrs,
        slope,
        residual,
    })
}

/// Least-squares line through `(x, y)`: returns (slope, intercept, RMS
/// residual).
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - slope * x - intercept;
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

/// The truncation/discretization rate exponent `γ = λ(θ + 4 − 2d)/θ`.
pub fn gamma_rate(lambda: f64, theta: f64, d: usize) -> f64 {
    lambda * (theta + 4.0 - 2.0 * d as f64) / theta
}

/// `‖G_ser(x,·) − G_lat(x,·)‖_{L²(D)}` at a single `x`, where the series
/// kernel runs over `I^d_{N}` and the lattice kernel over `I^d_n`, both at
/// the same `ε`.
///
/// Expanded exactly as `T₁ − 2T₃ + T₂`: the two diagonal Parseval sums and
/// a cross term whose inner products `⟨v_β, step v_μ⟩` factorize per axis
/// into a matrix `W`, so the cross term is a chain of tensor contractions
/// instead of an `(N·n)^d` sum.
pub fn truncation_error_norm(
    grid: &GridSpec,
    epsilon: f64,
    n_ref: usize,
    table: &MollifierTable,
    x: &[f64],
) -> Result<f64> {
    let n = grid.resolution();
    let d = grid.dim();
    if n_ref < n {
        return Err(Error::Config(format!(
            "series truncation {n_ref} is below the lattice resolution {n}"
        )));
    }
    let kx = kappa_n(x, grid)?;
    let two_d = 2f64.powi(d as i32);
    let basis_sq = 0.5f64.powi(d as i32);

    // per-axis factor tables
    let psi_n: Vec<f64> = (1..n).map(|b| table.psi_hat(epsilon * b as f64)).collect();
    let psi_ref: Vec<f64> = (1..n_ref)
        .map(|b| table.psi_hat(epsilon * b as f64))
        .collect();
    // g_k[b] = ψ̂(εb)·sin(bπx_k), per axis, for the series side
    let g: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            (1..n_ref)
                .map(|b| psi_ref[b - 1] * (b as f64 * PI * x[k]).sin())
                .collect()
        })
        .collect();

    // T1: series diagonal
    let series_grid = GridSpec::new(d, n_ref)?;
    let mut t1 = 0.0;
    series_grid.for_each_interior(|beta| {
        let p: f64 = beta.iter().enumerate().map(|(k, &b)| g[k][b - 1]).product();
        if p == 0.0 {
            return;
        }
        let b2 = norm_sq(beta);
        let a = two_d * p / (PI * PI * b2);
        t1 += a * a * basis_sq;
    });

    // lattice side vanishes if x sits in a boundary cell
    let interior_x = kx.iter().all(|&k| k > 0 && k < n);
    let mut t2 = 0.0;
    let mut t3 = 0.0;
    if interior_x {
        let sx: Vec<f64> = kx.iter().map(|&k| k as f64 / n as f64).collect();
        grid.for_each_interior(|mu| {
            let psi: f64 = mu.iter().map(|&b| psi_n[b - 1]).product();
            let lambda = crate::grid::eigenvalue_unchecked(mu, n);
            let c = guarded_ratio(psi, lambda) * two_d;
            let v = crate::grid::sine_basis(mu, &sx);
            t2 += c * c * v * v * basis_sq;
        });

        // W[b][μ] = Σ_j sin(μπj/n)·∫_{cell j} sin(bπy)dy, shared by axes
        let mn = n - 1;
        let mr = n_ref - 1;
        let mut w = vec![0.0; mr * mn];
        for b in 1..n_ref {
            for mu in 1..n {
                let mut acc = 0.0;
                for j in 1..n {
                    let e = ((b as f64 * PI * j as f64 / n as f64).cos()
                        - (b as f64 * PI * (j + 1) as f64 / n as f64).cos())
                        / (b as f64 * PI);
                    acc += (mu as f64 * PI * j as f64 / n as f64).sin() * e;
                }
                w[(b - 1) * mn + (mu - 1)] = acc;
            }
        }

        // Q_μ = c_μ·v_μ(κ_n(x)/n)
        let mut q = Vec::with_capacity(grid.interior_len());
        grid.for_each_interior(|mu| {
            let psi: f64 = mu.iter().map(|&b| psi_n[b - 1]).product();
            let lambda = crate::grid::eigenvalue_unchecked(mu, n);
            q.push(guarded_ratio(psi, lambda) * two_d * crate::grid::sine_basis(mu, &sx));
        });
        // contract the first d−1 axes into the series index set
        let mut data = q;
        for _ in 0..d - 1 {
            data = contract_leading(&data, mn, &w, mr);
        }
        // fused final axis: contract and dot with a_β·v_β(x); layout of
        // `data` is (μ_d, b_1, …, b_{d−1}) with b_{d−1} fastest
        let rest = data.len() / mn;
        let mut b_head = vec![1usize; d - 1];
        let mut first = true;
        for r in 0..rest {
            if !first {
                let mut a = d - 1;
                loop {
                    a -= 1;
                    if b_head[a] + 1 < n_ref {
                        b_head[a] += 1;
                        break;
                    }
                    b_head[a] = 1;
                }
            }
            first = false;
            let mut head_prod = 1.0;
            let mut head_sq = 0.0;
            for (k, &b) in b_head.iter().enumerate() {
                head_prod *= g[k][b - 1];
                head_sq += (b * b) as f64;
            }
            if head_prod == 0.0 {
                continue;
            }
            for b_last in 1..n_ref {
                let mut s = 0.0;
                for mu in 0..mn {
                    s += w[(b_last - 1) * mn + mu] * data[mu * rest + r];
                }
                if s == 0.0 {
                    continue;
                }
                let b2 = head_sq + (b_last * b_last) as f64;
                // series coefficient × basis at x: −2^d·(∏g)/(π²|β|²);
                // lattice side carries +2^d Ψ̂/λ with λ < 0, so the signs
                // match and the cross term is ⟨series, lattice⟩ directly
                let a_v = -two_d * head_prod * g[d - 1][b_last - 1] / (PI * PI * b2);
                t3 += a_v * s;
            }
        }
    }
    Ok((t1 - 2.0 * t3 + t2).max(0.0).sqrt())
}

/// Sup of the truncation error over stratified sample points in `D`.
pub fn truncation_error_sup(
    grid: &GridSpec,
    epsilon: f64,
    n_ref: usize,
    table: &MollifierTable,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let points = latin_hypercube(grid.dim(), samples, seed);
    let vals: Result<Vec<f64>> = points
        .par_iter()
        .map(|x| truncation_error_norm(grid, epsilon, n_ref, table, x))
        .collect();
    Ok(vals?.into_iter().fold(0.0f64, f64::max))
}

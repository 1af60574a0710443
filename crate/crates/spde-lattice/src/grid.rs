//! Grids on the unit cube, multi-indices, the cell map `κ_n`, the discrete
//! sine eigenbasis of the weighted difference operator `A`, and fast
//! transforms to and from that basis.
//!
//! The interior index set is `I^d_n = {1,…,n−1}^d`; grid vectors are stored
//! in lexicographic order (first component most significant). A grid vector
//! is identified with the step function that takes the value of its
//! lower-left lattice point on each cell `D_j = ∏ [j_k/n, (j_k+1)/n)` and
//! zero on cells whose lower-left corner touches the boundary.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Dimension and resolution of the uniform grid on `[0,1]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    d: usize,
    n: usize,
}

impl GridSpec {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d < 1 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if n < 2 {
            return Err(Error::Config("resolution must be at least 2".into()));
        }
        Ok(GridSpec { d, n })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    /// Number of interior lattice points, `(n−1)^d`.
    pub fn interior_len(&self) -> usize {
        (self.n - 1).pow(self.d as u32)
    }

    /// Volume of one grid cell, `n^{−d}`.
    pub fn cell_volume(&self) -> f64 {
        (self.n as f64).powi(-(self.d as i32))
    }

    /// Linear position of an interior multi-index in lexicographic order.
    pub fn linear_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.d);
        let m = self.n - 1;
        let mut pos = 0;
        for &i in index {
            debug_assert!((1..self.n).contains(&i));
            pos = pos * m + (i - 1);
        }
        pos
    }

    /// Visits every interior multi-index in lexicographic order.
    ///
    /// The same buffer is passed to the closure on each call; copy it if
    /// it must outlive the visit.
    pub fn for_each_interior(&self, mut f: impl FnMut(&[usize])) {
        let mut idx = vec![1usize; self.d];
        loop {
            f(&idx);
            let mut axis = self.d;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if idx[axis] + 1 < self.n {
                    idx[axis] += 1;
                    break;
                }
                idx[axis] = 1;
            }
        }
    }

    /// All interior multi-indices, lexicographically ordered.
    pub fn interior_indices(&self) -> Vec<MultiIndex> {
        let mut out = Vec::with_capacity(self.interior_len());
        self.for_each_interior(|idx| out.push(MultiIndex(idx.to_vec())));
        out
    }

    fn check_interior(&self, index: &[usize]) -> Result<()> {
        if index.len() != self.d || index.iter().any(|&i| i == 0 || i >= self.n) {
            return Err(Error::IndexOutOfRange {
                index: index.to_vec(),
                n: self.n,
            });
        }
        Ok(())
    }
}

/// A multi-index `β ∈ I^d` with positive integer components.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn new(components: Vec<usize>) -> Result<Self> {
        if components.is_empty() || components.iter().any(|&c| c == 0) {
            return Err(Error::Config(
                "multi-index components must be positive".into(),
            ));
        }
        Ok(MultiIndex(components))
    }

    pub fn components(&self) -> &[usize] {
        &self.0
    }

    /// Squared Hilbert–Schmidt norm `|β|² = Σ β_k²`.
    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.0)
    }
}

pub(crate) fn norm_sq(index: &[usize]) -> f64 {
    index.iter().map(|&b| (b * b) as f64).sum()
}

/// The cell map: `κ_n(x) = j` with `x ∈ D_j = ∏ [j_k/n, (j_k+1)/n)`.
///
/// Components of the returned index lie in `0..n`; a zero component means
/// the point sits in a boundary cell.
pub fn kappa_n(x: &[f64], grid: &GridSpec) -> Result<Vec<usize>> {
    if x.len() != grid.d {
        return Err(Error::GridMismatch(format!(
            "point has {} coordinates, grid dimension is {}",
            x.len(),
            grid.d
        )));
    }
    let n = grid.n as f64;
    x.iter()
        .enumerate()
        .map(|(coord, &v)| {
            if !(0.0..1.0).contains(&v) {
                Err(Error::OutOfDomain { coord, value: v })
            } else {
                Ok((n * v).floor() as usize)
            }
        })
        .collect()
}

/// The Dirichlet sine basis `v_β(x) = ∏ sin(β_k π x_k)`.
pub fn sine_basis(beta: &[usize], x: &[f64]) -> f64 {
    beta.iter()
        .zip(x)
        .map(|(&b, &xk)| (b as f64 * PI * xk).sin())
        .product()
}

/// Eigenvalue of `A` for `β ∈ I^d_n`:
/// `λ_β = −π² Σ β_k² c_{β_k} = −Σ 4n² sin²(β_k π / 2n)`, with
/// `c_l = sin²(lπ/2n) / (lπ/2n)²` and `4/π² ≤ c_l ≤ 1`.
pub fn eigenvalue(beta: &[usize], grid: &GridSpec) -> Result<f64> {
    grid.check_interior(beta)?;
    Ok(eigenvalue_unchecked(beta, grid.n))
}

pub(crate) fn eigenvalue_unchecked(beta: &[usize], n: usize) -> f64 {
    let n_f = n as f64;
    -beta
        .iter()
        .map(|&b| {
            let s = (b as f64 * PI / (2.0 * n_f)).sin();
            4.0 * n_f * n_f * s * s
        })
        .sum::<f64>()
}

/// A step-function field on `D`: values on the interior lattice, zero
/// extension on boundary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn zeros(grid: GridSpec) -> Self {
        LatticeField {
            grid,
            values: vec![0.0; grid.interior_len()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.interior_len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.interior_len(),
                values.len()
            )));
        }
        Ok(LatticeField { grid, values })
    }

    /// Builds a field from a function of the interior multi-index.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.interior_len());
        grid.for_each_interior(|idx| values.push(f(idx)));
        LatticeField { grid, values }
    }

    /// Samples `v_β` on the lattice: `(U_β)_i = v_β(i/n)`.
    pub fn sampled_basis(grid: GridSpec, beta: &[usize]) -> Self {
        let n = grid.resolution() as f64;
        LatticeField::from_fn(grid, |idx| {
            idx.iter()
                .zip(beta)
                .map(|(&i, &b)| (b as f64 * PI * i as f64 / n).sin())
                .product()
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        self.grid.check_interior(index)?;
        Ok(self.values[self.grid.linear_index(index)])
    }

    /// Evaluates the step function at `x ∈ [0,1)^d`.
    ///
    /// Points whose cell touches the boundary (`κ_n(x)` has a zero
    /// component) evaluate to zero.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let j = kappa_n(x, &self.grid)?;
        if j.iter().any(|&c| c == 0 || c >= self.grid.n) {
            return Ok(0.0);
        }
        Ok(self.values[self.grid.linear_index(&j)])
    }

    /// `L²(D)` norm of the step function: `n^{−d/2}` times the
    /// Hilbert–Schmidt norm of the value array.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// `L^p(D)` norm of the step function.
    pub fn lp_norm(&self, p: f64) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>())
            .powf(1.0 / p)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn to_spectral(&self) -> SpectralCoeffs {
        SineTransform::new(self.grid).forward(self)
    }
}

/// Coefficients of a field in the orthonormal basis `(2/n)^{d/2} U_β`,
/// `β ∈ I^d_n`, lexicographically ordered.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    grid: GridSpec,
    coeffs: Vec<f64>,
}

impl SpectralCoeffs {
    pub fn zeros(grid: GridSpec) -> Self {
        SpectralCoeffs {
            grid,
            coeffs: vec![0.0; grid.interior_len()],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn get(&self, beta: &[usize]) -> Result<f64> {
        self.grid.check_interior(beta)?;
        Ok(self.coeffs[self.grid.linear_index(beta)])
    }

    pub fn to_field(&self) -> LatticeField {
        SineTransform::new(self.grid).inverse(self)
    }
}

/// The type-I discrete sine transform on the interior lattice, applied
/// separably along every axis.
///
/// The per-axis matrix `S[b][i] = (2/n)^{1/2} sin(bπi/n)` is orthogonal and
/// symmetric, hence its own inverse; forward and inverse transforms are the
/// same sweep. Direct `O(n²)`-per-axis application keeps the transform
/// exact for every resolution.
pub struct SineTransform {
    grid: GridSpec,
    matrix: Vec<f64>, // (n−1) × (n−1), row b−1, column i−1
}

impl SineTransform {
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.n;
        let m = n - 1;
        let scale = (2.0 / n as f64).sqrt();
        let mut matrix = vec![0.0; m * m];
        for b in 1..n {
            for i in 1..n {
                matrix[(b - 1) * m + (i - 1)] = scale * (b as f64 * i as f64 * PI / n as f64).sin();
            }
        }
        SineTransform { grid, matrix }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn apply_all_axes(&self, data: &mut [f64]) {
        let d = self.grid.d;
        let m = self.grid.n - 1;
        let mut x = vec![0.0; m];
        let mut y = vec![0.0; m];
        let mut inner = m.pow((d - 1) as u32);
        let mut outer = 1usize;
        for _axis in 0..d {
            for o in 0..outer {
                let block = o * m * inner;
                for i in 0..inner {
                    let base = block + i;
                    for (k, xv) in x.iter_mut().enumerate() {
                        *xv = data[base + k * inner];
                    }
                    for (b, yv) in y.iter_mut().enumerate() {
                        let row = &self.matrix[b * m..(b + 1) * m];
                        *yv = row.iter().zip(&x).map(|(s, v)| s * v).sum();
                    }
                    for (k, yv) in y.iter().enumerate() {
                        data[base + k * inner] = *yv;
                    }
                }
            }
            outer *= m;
            inner /= m;
        }
    }

    pub fn forward(&self, field: &LatticeField) -> SpectralCoeffs {
        assert_eq!(&field.grid, &self.grid, "transform grid mismatch");
        let mut coeffs = field.values.clone();
        self.apply_all_axes(&mut coeffs);
        SpectralCoeffs {
            grid: self.grid,
            coeffs,
        }
    }

    pub fn inverse(&self, coeffs: &SpectralCoeffs) -> LatticeField {
        assert_eq!(&coeffs.grid, &self.grid, "transform grid mismatch");
        let mut values = coeffs.coeffs.clone();
        self.apply_all_axes(&mut values);
        LatticeField {
            grid: self.grid,
            values,
        }
    }

    /// In-place sweep on a raw lexicographic array (forward = inverse).
    pub fn apply_raw(&self, data: &mut [f64]) {
        assert_eq!(data.len(), self.grid.interior_len());
        self.apply_all_axes(data);
    }
}

/// The weighted second-order difference operator
/// `(Au)_i = Σ_j n² [u_{i−e_j} − 2u_i + u_{i+e_j}]` with zero boundary
/// extension.
pub fn apply_a(field: &LatticeField) -> LatticeField {
    let grid = field.grid;
    let n2 = (grid.n * grid.n) as f64;
    let m = grid.n - 1;
    let d = grid.d;
    let mut strides = vec![1usize; d];
    for a in (0..d.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * m;
    }
    let mut out = vec![0.0; field.values.len()];
    let mut pos = 0usize;
    grid.for_each_interior(|idx| {
        let u = field.values[pos];
        let mut acc = -2.0 * (d as f64) * u;
        for a in 0..d {
            if idx[a] > 1 {
                acc += field.values[pos - strides[a]];
            }
            if idx[a] + 1 < grid.n {
                acc += field.values[pos + strides[a]];
            }
        }
        out[pos] = n2 * acc;
        pos += 1;
    });
    LatticeField {
        grid,
        values: out,
    }
}

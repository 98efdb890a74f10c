//! Cell-centered periodic grids and finite-difference operators.
//!
//! Cells on an axis sit at x_i = (i + 1/2) h, i = 0..n, with h = L/n; every
//! axis has the same n and L. Fields are flat row-major with x fastest, so
//! cell (i,j,k) lives at index (k n + j) n + i. Face values along axis `a`
//! are stored at the index of the cell on their negative side: axes[a][c] is
//! the face between cell c and its +a neighbor.
//!
//! Differences follow the usual staggered composition: cell->face averages
//! and differences (face_average, gradient), face->cell differences
//! (divergence), and laplacian is literally divergence(gradient(u)) so the
//! two evaluation paths agree bitwise. Inner products carry the h^dim weight;
//! face inner products use the per-cell average of the two face values.

use crate::error::{Error, Result};

/// Uniform periodic grid: `dim` in {2,3}, `n` cells per axis, physical
/// length `length` per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    length: f64,
}

impl GridSpec {
    /// A user-facing grid. Requires dim in {2,3}, n >= 4, finite length > 0.
    /// Multigrid additionally needs n to coarsen by halving down to its
    /// coarsest size; that is checked where the hierarchy is built.
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: format!("must be 2 or 3, got {dim}"),
            });
        }
        if n < 4 {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: format!("must be >= 4, got {n}"),
            });
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidParameter {
                name: "length",
                reason: format!("must be positive and finite, got {length}"),
            });
        }
        Ok(GridSpec { dim, n, length })
    }

    /// Internal constructor for coarse multigrid levels (allows n >= 2).
    pub(crate) fn coarse(dim: usize, n: usize, length: f64) -> Self {
        debug_assert!(n >= 2);
        GridSpec { dim, n, length }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Mesh spacing h = L/n.
    #[inline]
    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Total cell count n^dim.
    #[inline]
    pub fn cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Cell volume h^dim.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Domain volume L^dim.
    #[inline]
    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Extent of the z loop: n for 3-D, 1 for 2-D.
    #[inline]
    pub(crate) fn nz(&self) -> usize {
        if self.dim == 3 {
            self.n
        } else {
            1
        }
    }

    /// Cell-center coordinate along one axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h()
    }

    #[inline]
    pub fn idx2(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn idx3(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.n + j) * self.n + i
    }

    /// Grid with half the cells per axis (same physical length).
    pub(crate) fn coarsened(&self) -> GridSpec {
        debug_assert!(self.n % 2 == 0);
        GridSpec::coarse(self.dim, self.n / 2, self.length)
    }
}

/// Scalar field of cell-center values.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    spec: GridSpec,
    data: Vec<f64>,
}

impl CellField {
    pub fn zeros(spec: GridSpec) -> Self {
        CellField {
            spec,
            data: vec![0.0; spec.cells()],
        }
    }

    pub fn constant(spec: GridSpec, value: f64) -> Self {
        CellField {
            spec,
            data: vec![value; spec.cells()],
        }
    }

    /// Build from a function of the cell-center coordinates; 2-D grids pass
    /// z = 0.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(f64, f64, f64) -> f64) -> Self {
        let n = spec.n();
        let mut data = Vec::with_capacity(spec.cells());
        for k in 0..spec.nz() {
            let z = if spec.dim() == 3 { spec.coord(k) } else { 0.0 };
            for j in 0..n {
                let y = spec.coord(j);
                for i in 0..n {
                    data.push(f(spec.coord(i), y, z));
                }
            }
        }
        CellField { spec, data }
    }

    pub fn from_vec(spec: GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.cells() {
            return Err(Error::GridMismatch {
                expected: spec.cells(),
                got: data.len(),
            });
        }
        Ok(CellField { spec, data })
    }

    #[inline]
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// h^dim-weighted inner product <u,v>.
    pub fn inner_product(&self, other: &CellField) -> Result<f64> {
        check_same(self.spec, other.spec)?;
        let mut s = Kahan::new();
        for (a, b) in self.data.iter().zip(&other.data) {
            s.add(a * b);
        }
        Ok(s.sum() * self.spec.cell_volume())
    }

    /// ||u||_2 = <u,u>^(1/2).
    pub fn norm_l2(&self) -> f64 {
        let mut s = Kahan::new();
        for a in &self.data {
            s.add(a * a);
        }
        (s.sum() * self.spec.cell_volume()).sqrt()
    }

    /// ||u||_p = <|u|^p, 1>^(1/p) for 1 <= p < inf.
    pub fn norm_lp(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter {
                name: "p",
                reason: format!("norm order must be >= 1, got {p}"),
            });
        }
        let mut s = Kahan::new();
        for a in &self.data {
            s.add(a.abs().powf(p));
        }
        Ok((s.sum() * self.spec.cell_volume()).powf(1.0 / p))
    }

    pub fn norm_linf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    /// <u,1>/|Omega|.
    pub fn mean(&self) -> f64 {
        let mut s = Kahan::new();
        for a in &self.data {
            s.add(*a);
        }
        s.sum() * self.spec.cell_volume() / self.spec.volume()
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for a in &self.data {
            lo = lo.min(*a);
            hi = hi.max(*a);
        }
        (lo, hi)
    }

    /// self += c * other, entrywise.
    pub fn add_scaled(&mut self, c: f64, other: &CellField) {
        debug_assert_eq!(self.spec, other.spec);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// self += constant, entrywise.
    pub fn shift(&mut self, c: f64) {
        for a in self.data.iter_mut() {
            *a += c;
        }
    }
}

/// Per-axis face values; axes[a] has one entry per cell (the face on the
/// cell's +a side).
#[derive(Clone, Debug, PartialEq)]
pub struct FaceField {
    spec: GridSpec,
    axes: Vec<Vec<f64>>,
}

impl FaceField {
    pub fn zeros(spec: GridSpec) -> Self {
        FaceField {
            spec,
            axes: (0..spec.dim()).map(|_| vec![0.0; spec.cells()]).collect(),
        }
    }

    pub fn constant(spec: GridSpec, value: f64) -> Self {
        FaceField {
            spec,
            axes: (0..spec.dim()).map(|_| vec![value; spec.cells()]).collect(),
        }
    }

    #[inline]
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    #[inline]
    pub fn axis(&self, a: usize) -> &[f64] {
        &self.axes[a]
    }

    #[inline]
    pub fn axis_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.axes[a]
    }
}

fn check_same(a: GridSpec, b: GridSpec) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch {
            expected: a.cells(),
            got: b.cells(),
        });
    }
    Ok(())
}

/// Applies `f(cell, plus_neighbors, minus_neighbors)` at every cell, where
/// the neighbor arrays hold flat indices along each axis (x, y, z order).
/// Wrap-around is periodic. This is the single source of neighbor indexing
/// for all stencil code.
#[inline]
pub(crate) fn for_each_cell<F: FnMut(usize, &[usize; 3], &[usize; 3])>(spec: GridSpec, mut f: F) {
    let n = spec.n;
    let dim = spec.dim;
    for k in 0..spec.nz() {
        let kp = if k + 1 == n { 0 } else { k + 1 };
        let km = if k == 0 { n - 1 } else { k - 1 };
        for j in 0..n {
            let jp = if j + 1 == n { 0 } else { j + 1 };
            let jm = if j == 0 { n - 1 } else { j - 1 };
            let row = (k * n + j) * n;
            let row_jp = (k * n + jp) * n;
            let row_jm = (k * n + jm) * n;
            let row_kp = (kp * n + j) * n;
            let row_km = (km * n + j) * n;
            for i in 0..n {
                let c = row + i;
                let ip = row + if i + 1 == n { 0 } else { i + 1 };
                let im = row + if i == 0 { n - 1 } else { i - 1 };
                let plus = [ip, row_jp + i, if dim == 3 { row_kp + i } else { 0 }];
                let minus = [im, row_jm + i, if dim == 3 { row_km + i } else { 0 }];
                f(c, &plus, &minus);
            }
        }
    }
}

/// Cell-to-face average: axes[a][c] = (u[c] + u[c+a]) / 2.
pub fn face_average(u: &CellField) -> FaceField {
    let spec = u.spec;
    let mut out = FaceField::zeros(spec);
    let d = u.data();
    for_each_cell(spec, |c, plus, _| {
        for a in 0..spec.dim() {
            out.axes[a][c] = 0.5 * (d[c] + d[plus[a]]);
        }
    });
    out
}

/// Cell-to-face difference: axes[a][c] = (u[c+a] - u[c]) / h.
pub fn gradient(u: &CellField) -> FaceField {
    let spec = u.spec;
    let hinv = 1.0 / spec.h();
    let mut out = FaceField::zeros(spec);
    let d = u.data();
    for_each_cell(spec, |c, plus, _| {
        for a in 0..spec.dim() {
            out.axes[a][c] = (d[plus[a]] - d[c]) * hinv;
        }
    });
    out
}

/// Face-to-cell difference: out[c] = sum_a (f_a[c] - f_a[c-a]) / h.
pub fn divergence(f: &FaceField) -> CellField {
    let spec = f.spec;
    let hinv = 1.0 / spec.h();
    let mut out = CellField::zeros(spec);
    for_each_cell(spec, |c, _, minus| {
        let mut acc = 0.0;
        for a in 0..spec.dim() {
            acc += (f.axes[a][c] - f.axes[a][minus[a]]) * hinv;
        }
        out.data[c] = acc;
    });
    out
}

/// divergence(gradient(u)), evaluated with the identical arithmetic so the
/// composed and fused paths agree bitwise.
pub fn laplacian(u: &CellField) -> CellField {
    let spec = u.spec;
    let hinv = 1.0 / spec.h();
    let mut out = CellField::zeros(spec);
    let d = u.data();
    for_each_cell(spec, |c, plus, minus| {
        let mut acc = 0.0;
        for a in 0..spec.dim() {
            let fp = (d[plus[a]] - d[c]) * hinv;
            let fm = (d[c] - d[minus[a]]) * hinv;
            acc += (fp - fm) * hinv;
        }
        out.data[c] = acc;
    });
    out
}

/// divergence(m . gradient(u)) with face mobilities m. Rejects nonpositive
/// or non-finite mobility entries. With m = 1 this equals `laplacian`
/// bitwise (multiplication by 1.0 is exact).
pub fn div_mobility_grad(m: &FaceField, u: &CellField) -> Result<CellField> {
    check_same(m.spec, u.spec)?;
    for a in 0..m.spec.dim() {
        for (idx, v) in m.axes[a].iter().enumerate() {
            if !(*v > 0.0) || !v.is_finite() {
                return Err(Error::NonPositiveMobility {
                    value: *v,
                    index: idx,
                });
            }
        }
    }
    let spec = u.spec;
    let hinv = 1.0 / spec.h();
    let mut out = CellField::zeros(spec);
    let d = u.data();
    for_each_cell(spec, |c, plus, minus| {
        let mut acc = 0.0;
        for a in 0..spec.dim() {
            let fp = m.axes[a][c] * ((d[plus[a]] - d[c]) * hinv);
            let fm = m.axes[a][minus[a]] * ((d[c] - d[minus[a]]) * hinv);
            acc += (fp - fm) * hinv;
        }
        out.data[c] = acc;
    });
    Ok(out)
}

/// Face inner product [f,g] = <a_x(f g) + a_y(f g) (+ a_z(f g)), 1>: each
/// cell contributes the average of its two face products per axis, then the
/// h^dim weight. Under periodicity this equals the plain face-wise sum.
pub fn face_inner_product(f: &FaceField, g: &FaceField) -> Result<f64> {
    check_same(f.spec, g.spec)?;
    let spec = f.spec;
    let mut s = Kahan::new();
    for_each_cell(spec, |c, _, minus| {
        for a in 0..spec.dim() {
            s.add(0.5 * (f.axes[a][c] * g.axes[a][c] + f.axes[a][minus[a]] * g.axes[a][minus[a]]));
        }
    });
    Ok(s.sum() * spec.cell_volume())
}

/// ||grad u||_2 = [grad u, grad u]^(1/2).
pub fn norm_grad_l2(u: &CellField) -> f64 {
    let g = gradient(u);
    face_inner_product(&g, &g)
        .expect("same grid by construction")
        .max(0.0)
        .sqrt()
}

/// Solves -laplacian(psi) = rhs - mean(rhs) with mean(psi) = 0, via linear
/// multigrid V-cycles, to combined residual tol * ||rhs||_2 (h-weighted).
/// The rhs must already be compatible: |mean(rhs)| <= 1e-8 * max(1, ||rhs||_inf).
pub fn solve_poisson_zero_mean(rhs: &CellField, tol: f64) -> Result<CellField> {
    let m = rhs.mean();
    if m.abs() > 1e-8 * rhs.norm_linf().max(1.0) {
        return Err(Error::NonZeroMean { mean: m });
    }
    crate::multigrid::poisson_solve(rhs, tol)
}

/// ||u||_{-1,h} = <u, (-laplacian)^{-1} u>^(1/2); requires mean(u) ~ 0.
pub fn norm_h_minus_one(u: &CellField, tol: f64) -> Result<f64> {
    let psi = solve_poisson_zero_mean(u, tol)?;
    Ok(u.inner_product(&psi)?.max(0.0).sqrt())
}

/// Compensated (Kahan) accumulator; all reductions run through this so sums
/// are deterministic and accurate to O(eps) independent of field size.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Kahan {
    s: f64,
    c: f64,
}

impl Kahan {
    #[inline]
    pub fn new() -> Self {
        Kahan { s: 0.0, c: 0.0 }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.s + y;
        self.c = (t - self.s) - y;
        self.s = t;
    }

    #[inline]
    pub fn sum(&self) -> f64 {
        self.s
    }
}

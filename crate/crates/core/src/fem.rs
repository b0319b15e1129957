//! Linear finite elements on a uniform 1D grid.
//!
//! Every field in the crate is a plain nodal vector on a [`Mesh1D`]. The
//! assembled mass and stiffness matrices are symmetric tridiagonal; integrals
//! of nodal data use the lumped (trapezoidal) weights, which coincide with the
//! row sums of the consistent mass matrix.
//!
//! The zero-mean constraint `∫v dx = 0` is imposed through a single bordered
//! row, i.e. the solvers in this module solve
//!
//! ```text
//! [ A   w ] [x]   [r]
//! [ wᵀ  0 ] [μ] = [0]
//! ```
//!
//! with `w = M·1`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    a: f64,
    b: f64,
    n_nodes: usize,
    h: f64,
}

impl Mesh1D {
    pub fn new(a: f64, b: f64, n_nodes: usize) -> Result<Self> {
        if n_nodes < 3 {
            return Err(Error::InvalidMesh(format!(
                "need at least 3 nodes, got {n_nodes}"
            )));
        }
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::InvalidMesh(format!(
                "domain [{a}, {b}] must be a finite interval with a < b"
            )));
        }
        let h = (b - a) / (n_nodes - 1) as f64;
        Ok(Self { a, b, n_nodes, h })
    }

    /// The unit interval with `n_nodes` uniformly spaced nodes.
    pub fn unit(n_nodes: usize) -> Result<Self> {
        Self::new(0.0, 1.0, n_nodes)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.n_nodes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn measure(&self) -> f64 {
        self.b - self.a
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_nodes {
            self.b
        } else {
            self.a + i as f64 * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.node(i)).collect()
    }

    /// Samples `f` at every node.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.n_nodes).map(|i| f(self.node(i))).collect()
    }

    pub fn check(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.n_nodes {
            return Err(Error::MeshMismatch {
                expected: self.n_nodes,
                found: field.len(),
            });
        }
        Ok(())
    }
}

/// Symmetric tridiagonal matrix stored by its diagonal and first off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(
            off.len() + 1,
            diag.len(),
            "off-diagonal length must be n - 1"
        );
        Self { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(x.len(), n);
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            y[i] = s;
        }
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.len();
        let mut s = 0.0;
        for i in 0..n {
            s += x[i] * self.diag[i] * y[i];
        }
        for i in 0..n - 1 {
            s += self.off[i] * (x[i] * y[i + 1] + x[i + 1] * y[i]);
        }
        s
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// `alpha·self + diag(d)`
    pub fn scaled_plus_diag(&self, alpha: f64, d: &[f64]) -> SymTridiag {
        SymTridiag {
            diag: self
                .diag
                .iter()
                .zip(d)
                .map(|(a, d)| alpha * a + d)
                .collect(),
            off: self.off.iter().map(|o| alpha * o).collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct AssembledForms {
    pub mesh: Mesh1D,
    /// Consistent P1 mass matrix.
    pub mass: SymTridiag,
    /// P1 stiffness matrix; constants span its kernel.
    pub stiffness: SymTridiag,
    /// Lumped quadrature weights, `w = M·1`.
    pub weights: Vec<f64>,
}

pub fn assemble(mesh: &Mesh1D) -> AssembledForms {
    let n = mesh.len();
    let h = mesh.h();
    let mut m_diag = vec![0.0; n];
    let mut s_diag = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for e in 0..n - 1 {
        for i in [e, e + 1] {
            m_diag[i] += h / 3.0;
            s_diag[i] += 1.0 / h;
            weights[i] += h / 2.0;
        }
    }
    let forms = AssembledForms {
        mesh: mesh.clone(),
        mass: SymTridiag::new(m_diag, vec![h / 6.0; n - 1]),
        stiffness: SymTridiag::new(s_diag, vec![-1.0 / h; n - 1]),
        weights,
    };
    debug_assert!(forms
        .stiffness
        .mul_vec(&vec![1.0; n])
        .iter()
        .all(|v| v.abs() <= 1e-12 / h));
    forms
}

impl AssembledForms {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Trapezoidal quadrature `wᵀ f`.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        self.mesh.check(f)?;
        Ok(self.integral(f))
    }

    /// Unchecked `wᵀ f`; callers guarantee matching lengths.
    pub(crate) fn integral(&self, f: &[f64]) -> f64 {
        dot(&self.weights, f)
    }

    /// `∫ f·g dx` with lumped quadrature.
    pub(crate) fn integral_prod(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    pub fn mean(&self, f: &[f64]) -> f64 {
        self.integral(f) / self.mesh.measure()
    }

    pub fn subtract_mean(&self, f: &mut [f64]) {
        let m = self.mean(f);
        f.iter_mut().for_each(|v| *v -= m);
    }

    /// Removes the component of a load vector along `w`, so that `1ᵀr = 0`.
    /// Leaves `hᵀr` unchanged for every zero-mean `h`.
    pub fn project_load(&self, r: &mut [f64]) {
        let c = r.iter().sum::<f64>() / self.mesh.measure();
        r.iter_mut()
            .zip(&self.weights)
            .for_each(|(v, w)| *v -= c * w);
    }

    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.mass.quad_form(v).max(0.0).sqrt()
    }

    pub fn h1_seminorm(&self, v: &[f64]) -> f64 {
        self.stiffness.quad_form(v).max(0.0).sqrt()
    }

    pub fn h1_norm(&self, v: &[f64]) -> f64 {
        (self.stiffness.quad_form(v) + self.mass.quad_form(v))
            .max(0.0)
            .sqrt()
    }

    /// `(∫|v|⁴ dx)^{1/4}` with lumped quadrature.
    pub fn l4_norm(&self, v: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(v)
            .map(|(w, x)| w * x.powi(4))
            .sum::<f64>()
            .powf(0.25)
    }

    /// Bordered solve with the zero-mean constraint `wᵀx = 0`.
    pub fn solve_bordered<A: BorderedSolve + ?Sized>(
        &self,
        a: &A,
        rhs: &[f64],
    ) -> Result<BorderedSolution> {
        self.mesh.check(rhs)?;
        let mut sol = a.solve_bordered(&self.weights, rhs)?;
        self.subtract_mean(&mut sol.x);
        Ok(sol)
    }
}

#[derive(Debug, Clone)]
pub struct BorderedSolution {
    pub x: Vec<f64>,
    pub multiplier: f64,
}

/// Symmetric operators that can solve `A x + μ w = r`, `wᵀ x = 0`.
///
/// When constants lie in the kernel of `A` the right-hand side must satisfy
/// `1ᵀ r = 0`; otherwise [`Error::Incompatible`] is returned.
pub trait BorderedSolve {
    fn solve_bordered(&self, border: &[f64], rhs: &[f64]) -> Result<BorderedSolution>;
}

const COMPAT_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-14;

fn check_compat(has_const_kernel: bool, rhs: &[f64]) -> Result<()> {
    if !has_const_kernel {
        return Ok(());
    }
    let sum: f64 = rhs.iter().sum();
    let scale: f64 = rhs.iter().map(|v| v.abs()).sum();
    if sum.abs() > COMPAT_TOL * scale.max(f64::MIN_POSITIVE) && sum.abs() > 1e-300 {
        return Err(Error::Incompatible {
            defect: sum.abs() / scale,
        });
    }
    Ok(())
}

impl BorderedSolve for SymTridiag {
    /// Arrow-shaped Gaussian elimination: unknowns `0..n-1` are eliminated in
    /// order (fill-in only touches the border), the trailing 2×2 block
    /// `(x[n-1], μ)` is solved with pivoting. The leading `(n-1)×(n-1)` block
    /// must be nonsingular, which holds for `λ²S + diag(d)` with `d ≥ 0`.
    fn solve_bordered(&self, border: &[f64], rhs: &[f64]) -> Result<BorderedSolution> {
        let n = self.len();
        assert_eq!(border.len(), n);
        assert_eq!(rhs.len(), n);
        let scale = self
            .diag
            .iter()
            .chain(&self.off)
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return Err(Error::Singular("zero matrix".into()));
        }
        let row_sum_max = (0..n)
            .map(|i| {
                let mut s = self.diag[i];
                if i > 0 {
                    s += self.off[i - 1];
                }
                if i + 1 < n {
                    s += self.off[i];
                }
                s.abs()
            })
            .fold(0.0, f64::max);
        check_compat(row_sum_max <= 1e-12 * scale, rhs)?;

        let mut d = self.diag.clone();
        let mut b = border.to_vec(); // column coupling each row to μ
        let mut r = rhs.to_vec();
        let mut c = border.to_vec(); // constraint row
        let mut c_mu = 0.0;
        let mut s = 0.0;
        for i in 0..n - 1 {
            if d[i].abs() <= PIVOT_TOL * scale {
                return Err(Error::Singular(format!("zero pivot at row {i}")));
            }
            let g = self.off[i] / d[i];
            d[i + 1] -= g * self.off[i];
            b[i + 1] -= g * b[i];
            r[i + 1] -= g * r[i];
            let f = c[i] / d[i];
            c[i + 1] -= f * self.off[i];
            c_mu -= f * b[i];
            s -= f * r[i];
        }
        let (a11, a12, a21, a22) = (d[n - 1], b[n - 1], c[n - 1], c_mu);
        let det = a11 * a22 - a12 * a21;
        let block_scale = (a11.abs() + a12.abs()) * (a21.abs() + a22.abs());
        if det.abs() <= 1e-13 * block_scale || block_scale == 0.0 {
            return Err(Error::Singular("bordered block is singular".into()));
        }
        let mut x = vec![0.0; n];
        x[n - 1] = (r[n - 1] * a22 - a12 * s) / det;
        let mu = (a11 * s - a21 * r[n - 1]) / det;
        for i in (0..n - 1).rev() {
            x[i] = (r[i] - self.off[i] * x[i + 1] - b[i] * mu) / d[i];
        }
        if x.iter().any(|v| !v.is_finite()) || !mu.is_finite() {
            return Err(Error::NonFinite("tridiagonal bordered solve"));
        }
        Ok(BorderedSolution { x, multiplier: mu })
    }
}

impl BorderedSolve for DMatrix<f64> {
    fn solve_bordered(&self, border: &[f64], rhs: &[f64]) -> Result<BorderedSolution> {
        let n = self.nrows();
        assert_eq!(self.ncols(), n);
        assert_eq!(border.len(), n);
        assert_eq!(rhs.len(), n);
        let scale = self.amax();
        if scale == 0.0 {
            return Err(Error::Singular("zero matrix".into()));
        }
        let row_sum_max = self.column_sum().amax();
        check_compat(row_sum_max <= 1e-12 * scale * n as f64, rhs)?;

        let mut k = DMatrix::zeros(n + 1, n + 1);
        k.view_mut((0, 0), (n, n)).copy_from(self);
        for i in 0..n {
            k[(i, n)] = border[i];
            k[(n, i)] = border[i];
        }
        let mut f = DVector::zeros(n + 1);
        f.rows_mut(0, n).copy_from_slice(rhs);
        let lu = k.full_piv_lu();
        let u = lu.u();
        let diag = u.diagonal();
        let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| {
            (lo.min(v.abs()), hi.max(v.abs()))
        });
        if dmax == 0.0 || dmin <= 1e-13 * dmax {
            return Err(Error::Singular(format!(
                "rank deficiency beyond the constant kernel (pivot ratio {:.2e})",
                dmin / dmax.max(f64::MIN_POSITIVE)
            )));
        }
        let sol = lu
            .solve(&f)
            .ok_or_else(|| Error::Singular("LU solve failed".into()))?;
        Ok(BorderedSolution {
            x: sol.rows(0, n).iter().copied().collect(),
            multiplier: sol[n],
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

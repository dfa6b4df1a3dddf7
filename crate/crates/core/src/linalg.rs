//! Five-point operators on a logically rectangular node set, a
//! preconditioned conjugate-gradient solver for them, and a direct
//! cosine-transform solver for the constant-coefficient Neumann case.

use crate::par;
use crate::{Error, Result};

/// Symmetric operator `(A x)_k = diag_k x_k - cx * (x_W + x_E) - cy * (x_S + x_N)`
/// on an `mx x my` node array, where neighbours outside the array are absent.
#[derive(Clone, Debug)]
pub struct FivePoint {
    mx: usize,
    my: usize,
    cx: f64,
    cy: f64,
    diag: Vec<f64>,
    /// Constant vectors span the kernel (pure Neumann).
    singular: bool,
    /// Reciprocal IC(0) pivots.
    ic_inv_pivots: Vec<f64>,
}

impl FivePoint {
    /// `extra_diag` is added to the neighbour-count diagonal
    /// `cx * (#x-neighbours) + cy * (#y-neighbours)`.
    pub fn new(mx: usize, my: usize, cx: f64, cy: f64, extra_diag: Vec<f64>, singular: bool) -> Self {
        assert_eq!(extra_diag.len(), mx * my);
        let mut diag = extra_diag;
        for j in 0..my {
            for i in 0..mx {
                let nbx = (i > 0) as usize + (i + 1 < mx) as usize;
                let nby = (j > 0) as usize + (j + 1 < my) as usize;
                diag[j * mx + i] += cx * nbx as f64 + cy * nby as f64;
            }
        }
        let ic_inv_pivots = incomplete_cholesky(mx, my, cx, cy, &diag)
            .into_iter()
            .map(|p| 1.0 / p)
            .collect();
        Self {
            mx,
            my,
            cx,
            cy,
            diag,
            singular,
            ic_inv_pivots,
        }
    }

    pub fn len(&self) -> usize {
        self.mx * self.my
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (mx, my, cx, cy) = (self.mx, self.my, self.cx, self.cy);
        par::for_each_row(y, mx, |j, row| {
            let base = j * mx;
            let xr = &x[base..base + mx];
            let dr = &self.diag[base..base + mx];
            for i in 0..mx {
                row[i] = dr[i] * xr[i];
            }
            if mx > 1 {
                row[0] -= cx * xr[1];
                row[mx - 1] -= cx * xr[mx - 2];
                for ((o, w), e) in row[1..mx - 1].iter_mut().zip(&xr[..mx - 2]).zip(&xr[2..]) {
                    *o -= cx * (w + e);
                }
            }
            if j > 0 {
                let xs = &x[base - mx..base];
                for i in 0..mx {
                    row[i] -= cy * xs[i];
                }
            }
            if j + 1 < my {
                let xn = &x[base + mx..base + 2 * mx];
                for i in 0..mx {
                    row[i] -= cy * xn[i];
                }
            }
        });
    }

    /// `z = M^{-1} r` with the IC(0) factorisation `(D + L) D^{-1} (D + L^T)`.
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let (mx, my, cx, cy) = (self.mx, self.my, self.cx, self.cy);
        let d = &self.ic_inv_pivots;
        // Forward sweep; the row coupling is vectorisable, only the x-recurrence is serial.
        for j in 0..my {
            let base = j * mx;
            let (prev, cur) = z.split_at_mut(base);
            let row = &mut cur[..mx];
            row.copy_from_slice(&r[base..base + mx]);
            if j > 0 {
                let below = &prev[base - mx..];
                for i in 0..mx {
                    row[i] += cy * below[i];
                }
            }
            let dr = &d[base..base + mx];
            let mut left = 0.0;
            for i in 0..mx {
                left = (row[i] + cx * left) * dr[i];
                row[i] = left;
            }
        }
        for j in (0..my).rev() {
            let base = j * mx;
            let (head, tail) = z.split_at_mut(base + mx);
            let row = &mut head[base..];
            let dr = &d[base..base + mx];
            // row currently holds y = (D + L)^{-1} r; add D^{-1} L^T z.
            let mut right = 0.0;
            if j + 1 < my {
                let above = &tail[..mx];
                for i in (0..mx).rev() {
                    right = row[i] + (cx * right + cy * above[i]) * dr[i];
                    row[i] = right;
                }
            } else {
                for i in (0..mx).rev() {
                    right = row[i] + cx * right * dr[i];
                    row[i] = right;
                }
            }
        }
    }
}

fn incomplete_cholesky(mx: usize, my: usize, cx: f64, cy: f64, diag: &[f64]) -> Vec<f64> {
    let n = mx * my;
    let mut d = vec![0.0; n];
    for k in 0..n {
        let mut p = diag[k];
        if k % mx > 0 {
            p -= cx * cx / d[k - 1];
        }
        if k >= mx {
            p -= cy * cy / d[k - mx];
        }
        // The last pivot of a singular operator can vanish; a tiny floor keeps
        // the preconditioner SPD on the mean-free subspace.
        d[k] = p.max(1e-12 * diag[k]);
    }
    d
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    /// Relative residual target `||b - A x|| <= tol * ||b||`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CgReport {
    pub iterations: usize,
    /// Relative residual after each iteration, starting with the initial guess.
    pub residuals: Vec<f64>,
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Preconditioned conjugate gradients. `x` holds the initial guess on entry.
///
/// For singular operators `b` must be (numerically) mean-free; the iteration
/// runs on the mean-free subspace and the returned `x` has zero mean.
pub fn pcg(
    op: &FivePoint,
    b: &[f64],
    x: &mut [f64],
    opts: CgOptions,
    solver: &'static str,
) -> Result<CgReport> {
    let n = op.len();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let mut b = b.to_vec();
    if op.singular {
        remove_mean(&mut b);
        remove_mean(x);
    }
    let bnorm = par::dot(&b, &b).sqrt();
    let mut report = CgReport::default();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        report.residuals.push(0.0);
        return Ok(report);
    }

    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(&b) {
        *ri = bi - *ri;
    }
    let mut rel = par::dot(&r, &r).sqrt() / bnorm;
    report.residuals.push(rel);
    if rel <= opts.tol {
        return Ok(report);
    }

    let mut z = vec![0.0; n];
    op.precondition(&r, &mut z);
    if op.singular {
        remove_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = par::dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 1..=opts.max_iter {
        op.apply(&p, &mut ap);
        let pap = par::dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        par::axpy(alpha, &p, x);
        par::axpy(-alpha, &ap, &mut r);
        rel = par::dot(&r, &r).sqrt() / bnorm;
        report.residuals.push(rel);
        report.iterations = it;
        if rel <= opts.tol {
            if op.singular {
                remove_mean(x);
            }
            return Ok(report);
        }
        op.precondition(&r, &mut z);
        if op.singular {
            remove_mean(&mut z);
        }
        let rz_new = par::dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::Solver {
        solver,
        residuals: report.residuals,
    })
}

/// Orthonormal DCT-II matrix, row `p` holding `s_p cos(pi p (i + 1/2) / m)`.
fn dct_matrix(m: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * m];
    for p in 0..m {
        let s = if p == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
        for i in 0..m {
            c[p * m + i] = s * (std::f64::consts::PI * p as f64 * (i as f64 + 0.5) / m as f64).cos();
        }
    }
    c
}

/// Direct solver for the pure-Neumann operator `FivePoint::new(mx, my, cx, cy, 0, true)`.
///
/// Cosine modes diagonalise the operator, so a solve costs two separable
/// transforms, `O(mx my (mx + my))`, and is exact to rounding.
#[derive(Clone, Debug)]
pub struct NeumannDct {
    mx: usize,
    my: usize,
    cx_mat: Vec<f64>,
    cy_mat: Vec<f64>,
    /// Reciprocal eigenvalues, zero for the constant mode.
    inv_eig: Vec<f64>,
}

impl NeumannDct {
    pub fn new(mx: usize, my: usize, cx: f64, cy: f64) -> Self {
        let lam = |p: usize, m: usize| 2.0 - 2.0 * (std::f64::consts::PI * p as f64 / m as f64).cos();
        let mut inv_eig = vec![0.0; mx * my];
        for q in 0..my {
            for p in 0..mx {
                let e = cx * lam(p, mx) + cy * lam(q, my);
                if p + q > 0 {
                    inv_eig[q * mx + p] = 1.0 / e;
                }
            }
        }
        Self {
            mx,
            my,
            cx_mat: dct_matrix(mx),
            cy_mat: dct_matrix(my),
            inv_eig,
        }
    }

    pub fn len(&self) -> usize {
        self.mx * self.my
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `out = (Cy (x) Cx) v` when `forward`, the transpose otherwise.
    fn transform(&self, v: &[f64], forward: bool) -> Vec<f64> {
        let (mx, my) = (self.mx, self.my);
        // along x, row by row
        let mut rows = vec![0.0; mx * my];
        par::for_each_row(&mut rows, mx, |j, out| {
            let src = &v[j * mx..(j + 1) * mx];
            if forward {
                for (p, o) in out.iter_mut().enumerate() {
                    let c = &self.cx_mat[p * mx..(p + 1) * mx];
                    *o = c.iter().zip(src).map(|(a, b)| a * b).sum();
                }
            } else {
                for (p, &sp) in src.iter().enumerate() {
                    let c = &self.cx_mat[p * mx..(p + 1) * mx];
                    out.iter_mut().zip(c).for_each(|(o, a)| *o += sp * a);
                }
            }
        });
        // along y, as combinations of whole rows
        let mut out = vec![0.0; mx * my];
        par::for_each_row(&mut out, mx, |q, row| {
            for j in 0..my {
                let w = if forward {
                    self.cy_mat[q * my + j]
                } else {
                    self.cy_mat[j * my + q]
                };
                row.iter_mut().zip(&rows[j * mx..(j + 1) * mx]).for_each(|(o, r)| *o += w * r);
            }
        });
        out
    }

    /// Mean-free solution of `A x = b - mean(b)`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.len());
        let mut hat = self.transform(b, true);
        hat.iter_mut().zip(&self.inv_eig).for_each(|(h, l)| *h *= l);
        self.transform(&hat, false)
    }
}

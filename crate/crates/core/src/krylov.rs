//! Matrix-free Krylov solvers for complex square systems `A x = b`.
//!
//! Both solvers start from a zero initial guess and report the true relative
//! residual `‖b - A x‖ / ‖b‖`, recomputed from scratch on return.

use num_complex::Complex64;

use crate::vecops::{axpy, dotc, norm};

/// A square complex linear operator.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]);
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[Complex64], &mut [Complex64])> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        (self.f)(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovOptions {
    pub rel_tol: f64,
    pub max_iters: usize,
    /// GMRES restart length.
    pub restart: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, max_iters: 2000, restart: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct KrylovResult {
    pub x: Vec<Complex64>,
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `‖b - A x‖ / ‖b‖`.
pub fn true_rel_residual<A: LinearOperator + ?Sized>(op: &A, x: &[Complex64], b: &[Complex64]) -> f64 {
    let mut ax = vec![ZERO; b.len()];
    op.apply(x, &mut ax);
    let r: f64 = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).norm_sqr()).sum::<f64>().sqrt();
    let bn = norm(b);
    if bn == 0.0 {
        r
    } else {
        r / bn
    }
}

fn finish<A: LinearOperator + ?Sized>(op: &A, b: &[Complex64], x: Vec<Complex64>, iterations: usize, tol: f64) -> KrylovResult {
    let rel_residual = true_rel_residual(op, &x, b);
    KrylovResult { x, iterations, rel_residual, converged: rel_residual <= tol }
}

/// Restarted GMRES with modified Gram–Schmidt and Givens rotations.
pub fn gmres<A: LinearOperator + ?Sized>(op: &A, b: &[Complex64], opts: &KrylovOptions) -> KrylovResult {
    let n = op.dim();
    assert_eq!(b.len(), n, "rhs length must match operator dimension");
    let bn = norm(b);
    if bn == 0.0 {
        return KrylovResult { x: vec![ZERO; n], iterations: 0, rel_residual: 0.0, converged: true };
    }
    let m = opts.restart.max(1).min(n.max(1));
    let mut x = vec![ZERO; n];
    let mut total = 0usize;
    let mut ax = vec![ZERO; n];

    while total < opts.max_iters {
        op.apply(&x, &mut ax);
        let r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta / bn <= opts.rel_tol {
            break;
        }

        let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        // h[j] holds column j of the Hessenberg matrix (length j + 2)
        let mut h: Vec<Vec<Complex64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<Complex64> = Vec::with_capacity(m);
        let mut g = vec![ZERO; m + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut steps = 0;

        for j in 0..m {
            if total >= opts.max_iters {
                break;
            }
            let mut w = vec![ZERO; n];
            op.apply(&basis[j], &mut w);
            let mut col = vec![ZERO; j + 2];
            for (i, vi) in basis.iter().enumerate() {
                let hij = dotc(vi, &w);
                col[i] = hij;
                axpy(-hij, vi, &mut w);
            }
            let wn = norm(&w);
            col[j + 1] = Complex64::new(wn, 0.0);

            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i].conj() * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let (c, s) = givens(col[j], col[j + 1]);
            col[j] = c * col[j] + s * col[j + 1];
            col[j + 1] = ZERO;
            g[j + 1] = -s.conj() * g[j];
            g[j] *= c;
            cs.push(c);
            sn.push(s);
            h.push(col);

            total += 1;
            steps = j + 1;
            let breakdown = wn <= 1e-300 * beta.max(1.0);
            if g[j + 1].norm() / bn <= opts.rel_tol || breakdown {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }

        // back substitution on the upper-triangular system
        let mut y = vec![ZERO; steps];
        for i in (0..steps).rev() {
            let mut acc = g[i];
            for (k, yk) in y.iter().enumerate().skip(i + 1) {
                acc -= h[k][i] * yk;
            }
            y[i] = acc / h[i][i];
        }
        for (yi, vi) in y.iter().zip(&basis) {
            axpy(*yi, vi, &mut x);
        }
        if steps == 0 {
            break;
        }
        // the next cycle starts by checking the true residual
    }
    finish(op, b, x, total, opts.rel_tol)
}

/// Complex Givens rotation zeroing `b` in `(a, b)`.
fn givens(a: Complex64, b: Complex64) -> (f64, Complex64) {
    let (an, bn) = (a.norm(), b.norm());
    if bn == 0.0 {
        return (1.0, ZERO);
    }
    if an == 0.0 {
        return (0.0, b.conj() / bn);
    }
    let r = an.hypot(bn);
    let c = an / r;
    let s = (a / an) * b.conj() / r;
    (c, s)
}

/// BiCGSTAB; restarts the shadow residual on breakdown.
pub fn bicgstab<A: LinearOperator + ?Sized>(op: &A, b: &[Complex64], opts: &KrylovOptions) -> KrylovResult {
    let n = op.dim();
    assert_eq!(b.len(), n, "rhs length must match operator dimension");
    let bn = norm(b);
    if bn == 0.0 {
        return KrylovResult { x: vec![ZERO; n], iterations: 0, rel_residual: 0.0, converged: true };
    }
    let mut x = vec![ZERO; n];
    let mut r = b.to_vec();
    let mut shadow = r.clone();
    let mut rho = Complex64::new(1.0, 0.0);
    let mut alpha = Complex64::new(1.0, 0.0);
    let mut omega = Complex64::new(1.0, 0.0);
    let mut v = vec![ZERO; n];
    let mut p = vec![ZERO; n];
    let mut s = vec![ZERO; n];
    let mut t = vec![ZERO; n];
    let mut iters = 0;

    while iters < opts.max_iters {
        iters += 1;
        let rho_new = dotc(&shadow, &r);
        if rho_new.norm() <= 1e-300 {
            // breakdown: restart from the current residual
            shadow.copy_from_slice(&r);
            rho = Complex64::new(1.0, 0.0);
            alpha = rho;
            omega = rho;
            v.iter_mut().for_each(|e| *e = ZERO);
            p.iter_mut().for_each(|e| *e = ZERO);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        op.apply(&p, &mut v);
        let sv = dotc(&shadow, &v);
        if sv.norm() == 0.0 {
            break;
        }
        alpha = rho_new / sv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bn <= opts.rel_tol * 0.5 {
            axpy(alpha, &p, &mut x);
            let res = true_rel_residual(op, &x, b);
            if res <= opts.rel_tol {
                break;
            }
            r = b.to_vec();
            let mut ax = vec![ZERO; n];
            op.apply(&x, &mut ax);
            axpy(Complex64::new(-1.0, 0.0), &ax, &mut r);
            rho = rho_new;
            continue;
        }
        op.apply(&s, &mut t);
        let tt = norm(&t).powi(2);
        omega = if tt == 0.0 { ZERO } else { dotc(&t, &s) / tt };
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        rho = rho_new;
        if norm(&r) / bn <= opts.rel_tol * 0.5 {
            if true_rel_residual(op, &x, b) <= opts.rel_tol {
                break;
            }
            // drift between recursive and true residual: resync
            let mut ax = vec![ZERO; n];
            op.apply(&x, &mut ax);
            r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        }
        if omega.norm() == 0.0 {
            shadow.copy_from_slice(&r);
            rho = Complex64::new(1.0, 0.0);
            alpha = rho;
            omega = rho;
        }
    }
    finish(op, b, x, iters, opts.rel_tol)
}

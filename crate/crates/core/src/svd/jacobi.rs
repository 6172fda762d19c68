//! One-sided (Hestenes) Jacobi SVD in `f64`.
//!
//! Columns of a working copy are rotated pairwise until mutually orthogonal;
//! their norms are then the singular values. The method is slower than
//! bidiagonalization but computes small singular values to high relative
//! accuracy, which the truncation error accounting relies on.

/// Thin SVD `A = U diag(s) Vᵀ` with `r = min(m, n)` columns, singular
/// values sorted non-increasing. Matrices are column-major.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub rows: usize,
    pub cols: usize,
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

impl ThinSvd {
    pub fn rank_bound(&self) -> usize {
        self.s.len()
    }

    pub fn u_col(&self, i: usize) -> &[f64] {
        &self.u[i * self.rows..(i + 1) * self.rows]
    }

    pub fn v_col(&self, i: usize) -> &[f64] {
        &self.v[i * self.cols..(i + 1) * self.cols]
    }
}

const MAX_SWEEPS: usize = 80;
const TOL: f64 = 1e-15;

/// Full thin SVD of the row-major `rows × cols` matrix `a`.
pub fn thin_svd(a: &[f64], rows: usize, cols: usize) -> ThinSvd {
    assert_eq!(a.len(), rows * cols);
    let transposed = rows < cols;
    let (p, q) = if transposed { (cols, rows) } else { (rows, cols) };
    // Working columns: column j of A (or of Aᵀ), each of length p.
    let mut w = vec![0.0; p * q];
    for r in 0..rows {
        for c in 0..cols {
            let (col, idx) = if transposed { (r, c) } else { (c, r) };
            w[col * p + idx] = a[r * cols + c];
        }
    }
    let mut rot = vec![0.0; q * q];
    for j in 0..q {
        rot[j * q + j] = 1.0;
    }
    orthogonalize(&mut w, p, q, Some(&mut rot));

    let mut norms: Vec<(usize, f64)> = (0..q)
        .map(|j| (j, dot(&w[j * p..(j + 1) * p], &w[j * p..(j + 1) * p]).sqrt()))
        .collect();
    norms.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));

    let mut left = vec![0.0; p * q];
    let mut right = vec![0.0; q * q];
    let mut s = Vec::with_capacity(q);
    for (dst, &(j, sigma)) in norms.iter().enumerate() {
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..p {
                left[dst * p + i] = w[j * p + i] / sigma;
            }
        }
        right[dst * q..(dst + 1) * q].copy_from_slice(&rot[j * q..(j + 1) * q]);
    }
    let (u, v) = if transposed { (right, left) } else { (left, right) };
    ThinSvd {
        rows,
        cols,
        u,
        s,
        v,
    }
}

/// Singular values only, sorted non-increasing.
pub fn singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols);
    let transposed = rows < cols;
    let (p, q) = if transposed { (cols, rows) } else { (rows, cols) };
    let mut w = vec![0.0; p * q];
    for r in 0..rows {
        for c in 0..cols {
            let (col, idx) = if transposed { (r, c) } else { (c, r) };
            w[col * p + idx] = a[r * cols + c];
        }
    }
    orthogonalize(&mut w, p, q, None);
    let mut s: Vec<f64> = (0..q)
        .map(|j| dot(&w[j * p..(j + 1) * p], &w[j * p..(j + 1) * p]).sqrt())
        .collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

fn orthogonalize(w: &mut [f64], p: usize, q: usize, mut rot: Option<&mut [f64]>) {
    let mut norms2: Vec<f64> = (0..q)
        .map(|j| dot(&w[j * p..(j + 1) * p], &w[j * p..(j + 1) * p]))
        .collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..q {
            for j in (i + 1)..q {
                let alpha = norms2[i];
                let beta = norms2[j];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let (ci, cj) = column_pair(w, p, i, j);
                let gamma = dot(ci, cj);
                if gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                apply_rotation(ci, cj, c, s);
                // Exact update of the squared norms for this rotation.
                norms2[i] = alpha - t * gamma;
                norms2[j] = beta + t * gamma;
                if let Some(r) = rot.as_deref_mut() {
                    let (ri, rj) = column_pair(r, q, i, j);
                    apply_rotation(ri, rj, c, s);
                }
            }
        }
        // Refresh the norms to stop drift from the incremental updates.
        for j in 0..q {
            norms2[j] = dot(&w[j * p..(j + 1) * p], &w[j * p..(j + 1) * p]);
        }
        if !rotated {
            break;
        }
    }
}

fn column_pair(m: &mut [f64], len: usize, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(i < j);
    let (head, tail) = m.split_at_mut(j * len);
    (&mut head[i * len..(i + 1) * len], &mut tail[..len])
}

fn apply_rotation(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let xa = *a;
        let yb = *b;
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

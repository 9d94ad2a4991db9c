//! Householder QR with column pivoting, used for every least-squares fit.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Factorization `X P = Q R` of a tall design matrix.
#[derive(Debug, Clone)]
pub(crate) struct PivotedQr {
    rows: usize,
    cols: usize,
    /// Householder vectors; `reflectors[k]` acts on rows `k..rows`.
    reflectors: Vec<Vec<f64>>,
    betas: Vec<f64>,
    /// Upper-triangular R, `cols × cols`, in pivoted column order.
    r: Array2<f64>,
    /// `perm[k]` is the original column placed at position `k`.
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub(crate) fn new(x: ArrayView2<'_, f64>) -> Self {
        let (m, n) = x.dim();
        // column-major working copy
        let mut cols: Vec<Vec<f64>> = (0..n).map(|j| x.column(j).to_vec()).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut reflectors = Vec::with_capacity(n.min(m));
        let mut betas = Vec::with_capacity(n.min(m));
        let mut r = Array2::zeros((n, n));
        let steps = n.min(m);

        for k in 0..steps {
            // Exact trailing norms each step; n is small so this is cheap and
            // avoids the downdating drift of the incremental variant.
            let (best, _) = (k..n)
                .map(|j| (j, cols[j][k..].iter().map(|v| v * v).sum::<f64>()))
                .fold((k, -1.0), |acc, (j, s)| if s > acc.1 { (j, s) } else { acc });
            if best != k {
                cols.swap(k, best);
                perm.swap(k, best);
                for i in 0..k {
                    let tmp = r[[i, k]];
                    r[[i, k]] = r[[i, best]];
                    r[[i, best]] = tmp;
                }
            }
            let x0 = &cols[k][k..];
            let norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut v = x0.to_vec();
            let (alpha, beta) = if norm == 0.0 {
                (0.0, 0.0)
            } else {
                let alpha = if v[0] >= 0.0 { -norm } else { norm };
                v[0] -= alpha;
                let vv: f64 = v.iter().map(|a| a * a).sum();
                (alpha, if vv > 0.0 { 2.0 / vv } else { 0.0 })
            };
            r[[k, k]] = alpha;
            for j in (k + 1)..n {
                let col = &mut cols[j][k..];
                let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
                let s = beta * dot;
                for (c, vi) in col.iter_mut().zip(&v) {
                    *c -= s * vi;
                }
                r[[k, j]] = col[0];
            }
            reflectors.push(v);
            betas.push(beta);
        }

        let scale = if steps > 0 { r[[0, 0]].abs() } else { 0.0 };
        let tol = scale * f64::EPSILON * (m.max(n) as f64) * 10.0;
        let rank = (0..steps).take_while(|&k| r[[k, k]].abs() > tol).count();

        PivotedQr {
            rows: m,
            cols: n,
            reflectors,
            betas,
            r,
            perm,
            rank,
        }
    }

    pub(crate) fn is_full_rank(&self) -> bool {
        self.rank == self.cols && self.cols <= self.rows
    }

    /// Original indices of the columns judged linearly dependent.
    pub(crate) fn dependent_columns(&self) -> Vec<usize> {
        let mut cols: Vec<usize> = self.perm[self.rank..].to_vec();
        cols.sort_unstable();
        cols
    }

    /// `Qᵀ y`.
    fn apply_qt(&self, y: ArrayView1<'_, f64>) -> Vec<f64> {
        let mut w = y.to_vec();
        for (k, (v, &beta)) in self.reflectors.iter().zip(&self.betas).enumerate() {
            let seg = &mut w[k..];
            let dot: f64 = v.iter().zip(seg.iter()).map(|(a, b)| a * b).sum();
            let s = beta * dot;
            for (c, vi) in seg.iter_mut().zip(v) {
                *c -= s * vi;
            }
        }
        w
    }

    /// `Q w`.
    fn apply_q(&self, mut w: Vec<f64>) -> Vec<f64> {
        for (k, (v, &beta)) in self.reflectors.iter().zip(&self.betas).enumerate().rev() {
            let seg = &mut w[k..];
            let dot: f64 = v.iter().zip(seg.iter()).map(|(a, b)| a * b).sum();
            let s = beta * dot;
            for (c, vi) in seg.iter_mut().zip(v) {
                *c -= s * vi;
            }
        }
        w
    }

    /// Residual sum of squares of the least-squares fit of `y`.
    pub(crate) fn rss(&self, y: ArrayView1<'_, f64>) -> f64 {
        let w = self.apply_qt(y);
        w[self.cols.min(self.rows)..].iter().map(|v| v * v).sum()
    }

    /// Coefficients (original column order) and residual vector. Requires full rank.
    pub(crate) fn solve(&self, y: ArrayView1<'_, f64>) -> (Array1<f64>, Array1<f64>) {
        debug_assert!(self.is_full_rank());
        let n = self.cols;
        let w = self.apply_qt(y);
        let mut z = vec![0.0; n];
        for k in (0..n).rev() {
            let mut s = w[k];
            for j in (k + 1)..n {
                s -= self.r[[k, j]] * z[j];
            }
            z[k] = s / self.r[[k, k]];
        }
        let mut coef = Array1::zeros(n);
        for (k, &c) in self.perm.iter().enumerate() {
            coef[c] = z[k];
        }
        let mut tail = w;
        tail[..n].iter_mut().for_each(|v| *v = 0.0);
        let resid = Array1::from(self.apply_q(tail));
        (coef, resid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_small_system() {
        let x = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]];
        let y = array![1.0, 3.0, 5.0, 7.0];
        let qr = PivotedQr::new(x.view());
        assert!(qr.is_full_rank());
        let (b, e) = qr.solve(y.view());
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
        assert!(e.iter().all(|v| v.abs() < 1e-12));
        assert!(qr.rss(y.view()) < 1e-24);
    }

    #[test]
    fn detects_collinearity() {
        let x = array![[1.0, 2.0, 0.5], [1.0, 2.0, 1.5], [1.0, 2.0, 2.0], [1.0, 2.0, 7.0]];
        let qr = PivotedQr::new(x.view());
        assert!(!qr.is_full_rank());
        let dep = qr.dependent_columns();
        assert_eq!(dep.len(), 1);
        assert!(dep[0] == 0 || dep[0] == 1);
    }

    #[test]
    fn rss_matches_residuals() {
        let x = array![[1.0, 0.3], [1.0, -1.2], [1.0, 2.2], [1.0, 0.1], [1.0, 0.9]];
        let y = array![0.4, -0.7, 2.5, 0.0, 1.7];
        let qr = PivotedQr::new(x.view());
        let (_, e) = qr.solve(y.view());
        let direct: f64 = e.iter().map(|v| v * v).sum();
        assert!((direct - qr.rss(y.view())).abs() < 1e-14);
        // residual orthogonal to columns
        for j in 0..2 {
            assert!(x.column(j).dot(&e).abs() < 1e-12);
        }
    }
}

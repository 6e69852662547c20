//! Small dense least squares for the pooled and neighbour-augmented fits.

/// Relative norm below which a column counts as linearly dependent on the
/// columns before it.
const DEPENDENCE_TOL: f64 = 1e-9;

/// Least squares solution of `X b ≈ y`, where `columns[j]` is column `j` of
/// `X`.
///
/// Uses modified Gram-Schmidt with reorthogonalisation. A column that is
/// (numerically) a combination of earlier ones is dropped and its
/// coefficient reported as `None`, so callers can tell a rank-deficient
/// design from a genuine zero.
pub(crate) fn solve(columns: &[Vec<f64>], y: &[f64]) -> Vec<Option<f64>> {
    let n = y.len();
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    // r[i][j]: projection of kept column j onto q_i
    let mut r: Vec<Vec<f64>> = Vec::new();

    for (j, col) in columns.iter().enumerate() {
        debug_assert_eq!(col.len(), n);
        let norm0 = norm(col);
        if norm0 == 0.0 || !norm0.is_finite() {
            continue;
        }
        let mut v = col.clone();
        let mut coeffs = vec![0.0; q.len()];
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let p = dot(qi, &v);
                coeffs[i] += p;
                for (vk, qk) in v.iter_mut().zip(qi) {
                    *vk -= p * qk;
                }
            }
        }
        let nv = norm(&v);
        if nv <= DEPENDENCE_TOL * norm0 {
            continue;
        }
        for vk in v.iter_mut() {
            *vk /= nv;
        }
        for (i, c) in coeffs.into_iter().enumerate() {
            r[i].push(c);
        }
        r.push(vec![0.0; kept.len()]);
        r.last_mut().unwrap().push(nv);
        q.push(v);
        kept.push(j);
    }

    // r is stored row-major with row i holding entries for kept columns 0..;
    // rows were padded as columns arrived so r[i][j] is valid for j >= i.
    let m = kept.len();
    let qty: Vec<f64> = q.iter().map(|qi| dot(qi, y)).collect();
    let mut beta = vec![0.0; m];
    for i in (0..m).rev() {
        let mut s = qty[i];
        for k in i + 1..m {
            s -= r[i][k] * beta[k];
        }
        beta[i] = s / r[i][i];
    }
    let mut out = vec![None; columns.len()];
    for (slot, b) in kept.into_iter().zip(beta) {
        out[slot] = Some(b);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

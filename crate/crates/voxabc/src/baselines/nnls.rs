//! Non-negative least squares (active-set, Lawson–Hanson) for the small
//! dense designs used by the basis-library fits (L frames x <= 4 columns).

/// Solution of min ||A x - b|| subject to x >= 0.
#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    pub rss: f64,
    /// A singular passive-set system was stabilized with a tiny ridge.
    pub ridged: bool,
}

/// Solve the unconstrained least squares on the passive columns via normal
/// equations; near-singular systems retry with a relative 1e-10 ridge.
fn solve_passive(a: &[f64], n: usize, cols: &[usize], b: &[f64], ridged: &mut bool) -> Vec<f64> {
    let m = b.len();
    let k = cols.len();
    let mut g = vec![0.0; k * k];
    let mut c = vec![0.0; k];
    for (i, &ci) in cols.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate().skip(i) {
            let mut s = 0.0;
            for r in 0..m {
                s += a[r * n + ci] * a[r * n + cj];
            }
            g[i * k + j] = s;
            g[j * k + i] = s;
        }
        let mut s = 0.0;
        for r in 0..m {
            s += a[r * n + ci] * b[r];
        }
        c[i] = s;
    }
    match gauss_solve(&g, &c) {
        Some(z) => z,
        None => {
            *ridged = true;
            let trace: f64 = (0..k).map(|i| g[i * k + i]).sum();
            let lambda = 1e-10 * (trace / k as f64).max(f64::MIN_POSITIVE);
            let mut gr = g.clone();
            for i in 0..k {
                gr[i * k + i] += lambda;
            }
            gauss_solve(&gr, &c).unwrap_or_else(|| vec![0.0; k])
        }
    }
}

/// Gaussian elimination with partial pivoting; None when singular.
fn gauss_solve(g: &[f64], c: &[f64]) -> Option<Vec<f64>> {
    let k = c.len();
    let mut m = g.to_vec();
    let mut rhs = c.to_vec();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..k {
        let mut pivot = col;
        for r in col + 1..k {
            if m[r * k + col].abs() > m[pivot * k + col].abs() {
                pivot = r;
            }
        }
        if m[pivot * k + col].abs() < 1e-13 * scale {
            return None;
        }
        if pivot != col {
            for j in 0..k {
                m.swap(col * k + j, pivot * k + j);
            }
            rhs.swap(col, pivot);
        }
        for r in col + 1..k {
            let f = m[r * k + col] / m[col * k + col];
            for j in col..k {
                m[r * k + j] -= f * m[col * k + j];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; k];
    for col in (0..k).rev() {
        let mut s = rhs[col];
        for j in col + 1..k {
            s -= m[col * k + j] * x[j];
        }
        x[col] = s / m[col * k + col];
    }
    Some(x)
}

/// `a` is row-major with `n` columns and `b.len()` rows.
pub fn nnls_solve(a: &[f64], n: usize, b: &[f64]) -> NnlsSolution {
    let m = b.len();
    debug_assert_eq!(a.len(), m * n);
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let mut ridged = false;
    let a_max = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let b_max = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-12 * a_max * b_max.max(1.0) * m as f64;

    for _outer in 0..(3 * n.max(10)) {
        // Dual vector w = A^T (b - A x) over active columns.
        let mut resid = b.to_vec();
        for (r, res) in resid.iter_mut().enumerate() {
            for j in 0..n {
                *res -= a[r * n + j] * x[j];
            }
        }
        let mut best = None;
        let mut best_w = tol;
        for j in 0..n {
            if passive[j] {
                continue;
            }
            let w: f64 = (0..m).map(|r| a[r * n + j] * resid[r]).sum();
            if w > best_w {
                best_w = w;
                best = Some(j);
            }
        }
        let Some(j_new) = best else { break };
        passive[j_new] = true;

        // Inner loop: keep the passive solution feasible.
        for _inner in 0..(3 * n.max(10)) {
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            if cols.is_empty() {
                break;
            }
            let z = solve_passive(a, n, &cols, b, &mut ridged);
            if z.iter().all(|&v| v > 0.0) {
                for j in 0..n {
                    x[j] = 0.0;
                }
                for (&cj, &zj) in cols.iter().zip(&z) {
                    x[cj] = zj;
                }
                break;
            }
            // Step toward z until the first passive coordinate hits zero.
            let mut alpha = f64::INFINITY;
            for (&cj, &zj) in cols.iter().zip(&z) {
                if zj <= 0.0 {
                    let denom = x[cj] - zj;
                    alpha = if denom > 0.0 { alpha.min(x[cj] / denom) } else { 0.0 };
                }
            }
            let alpha = alpha.min(1.0);
            for (&cj, &zj) in cols.iter().zip(&z) {
                x[cj] += alpha * (zj - x[cj]);
                if x[cj] <= 1e-14 {
                    x[cj] = 0.0;
                    passive[cj] = false;
                }
            }
        }
    }

    let mut rss = 0.0;
    for r in 0..m {
        let mut fit = 0.0;
        for j in 0..n {
            fit += a[r * n + j] * x[j];
        }
        rss += (b[r] - fit) * (b[r] - fit);
    }
    NnlsSolution { x, rss, ridged }
}

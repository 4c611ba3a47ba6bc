//! Gauss rules from three-term recurrences (Golub–Welsch).

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a one-dimensional rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

/// Gauss rule for the Jacobi matrix with diagonal `a` and off-diagonal `b`
/// (`b[k]` couples `k` and `k+1`) and total mass `mu0`.
pub fn golub_welsch(a: &[f64], b: &[f64], mu0: f64) -> Rule {
    let n = a.len();
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        j[(k, k)] = a[k];
        if k + 1 < n {
            j[(k, k + 1)] = b[k];
            j[(k + 1, k)] = b[k];
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], mu0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss–Hermite rule for the standard normal density (weights sum to 1).
pub fn gauss_hermite(n: usize) -> Rule {
    let a = vec![0.0; n];
    let b: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let mut r = golub_welsch(&a, &b, 1.0);
    symmetrize(&mut r);
    r
}

/// Gauss–Legendre rule on `[lo, hi]`.
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> Rule {
    let a = vec![0.0; n];
    let b: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let mut r = golub_welsch(&a, &b, 2.0);
    symmetrize(&mut r);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    Rule {
        nodes: r.nodes.iter().map(|x| mid + half * x).collect(),
        weights: r.weights.iter().map(|w| half * w).collect(),
    }
}

// Even-weight rules are symmetric; enforce it exactly.
fn symmetrize(r: &mut Rule) {
    let n = r.len();
    for k in 0..n / 2 {
        let x = 0.5 * (r.nodes[n - 1 - k] - r.nodes[k]);
        let w = 0.5 * (r.weights[k] + r.weights[n - 1 - k]);
        r.nodes[k] = -x;
        r.nodes[n - 1 - k] = x;
        r.weights[k] = w;
        r.weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        r.nodes[n / 2] = 0.0;
    }
}

/// Gauss rule for a weight given by a fine discrete measure, via the
/// discretized Stieltjes procedure.
pub fn gauss_from_discrete(xs: &[f64], ws: &[f64], n: usize) -> Rule {
    let mu0: f64 = ws.iter().sum();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut p_prev = vec![0.0; xs.len()];
    let mut p = vec![1.0; xs.len()];
    let mut norm_prev = 1.0;
    let mut norm: f64 = mu0;
    for k in 0..n {
        let xp: f64 = xs.iter().zip(ws).zip(&p).map(|((x, w), p)| x * w * p * p).sum();
        let ak = xp / norm;
        a.push(ak);
        let bk2 = if k == 0 { 0.0 } else { norm / norm_prev };
        if k > 0 {
            b.push(bk2.sqrt());
        }
        if k + 1 == n {
            break;
        }
        let next: Vec<f64> = (0..xs.len())
            .map(|i| (xs[i] - ak) * p[i] - bk2 * p_prev[i])
            .collect();
        p_prev = std::mem::replace(&mut p, next);
        norm_prev = norm;
        norm = ws.iter().zip(&p).map(|(w, p)| w * p * p).sum();
    }
    golub_welsch(&a, &b, mu0)
}

/// Gauss rule on `[0, inf)` for the weight `r^power exp(-r^2 / scale)`.
pub fn gauss_radial(n: usize, power: u32, scale: f64) -> Rule {
    let cut = (scale * 60.0).sqrt();
    let fine = gauss_legendre(600, 0.0, cut);
    let ws: Vec<f64> = fine
        .nodes
        .iter()
        .zip(&fine.weights)
        .map(|(r, w)| w * r.powi(power as i32) * (-r * r / scale).exp())
        .collect();
    gauss_from_discrete(&fine.nodes, &ws, n)
}

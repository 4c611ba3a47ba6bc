//! Mayer cumulants, the Penrose tree bound, tree counts and small-N
//! partition functions of the hard-sphere gas.

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::dsu::UnionFind;
use crate::par::{self, Execution};
use crate::rng::stream_rng;
use crate::sampler::GrandCanonicalParams;
use crate::stats::Moments;
use crate::torus::{torus_distance, unit_ball_volume, VecD};

/// Largest point set handled by exact graph enumeration.
pub const MAX_POINTS: usize = 7;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CombinatoricsError {
    #[error("{n} points exceed the enumeration cap {max}")]
    TooLarge { n: usize, max: usize },
    #[error("count overflows 128 bits")]
    Overflow,
    #[error("invalid degree sequence: {0}")]
    InvalidDegrees(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointSet<const D: usize> {
    pub points: Vec<VecD<D>>,
    pub eps: f64,
}

impl<const D: usize> PointSet<D> {
    pub fn new(points: Vec<VecD<D>>, eps: f64) -> Result<Self, CombinatoricsError> {
        if points.len() > MAX_POINTS {
            return Err(CombinatoricsError::TooLarge {
                n: points.len(),
                max: MAX_POINTS,
            });
        }
        Ok(Self { points, eps })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Pairs at minimal-image distance at most `eps`.
    pub fn adjacency(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if torus_distance(&self.points[i], &self.points[j]) <= self.eps {
                    edges.push((i, j));
                }
            }
        }
        edges
    }
}

fn connected(n: usize, edges: &[(usize, usize)], subset: u64) -> bool {
    let mut uf = UnionFind::new(n);
    for (k, &(a, b)) in edges.iter().enumerate() {
        if subset >> k & 1 == 1 {
            uf.union(a, b);
        }
    }
    uf.components() <= 1
}

/// `Σ_{G ⊆ edges connected spanning} (-1)^{|G|}`.
pub fn graph_cumulant(n: usize, edges: &[(usize, usize)]) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    if edges.len() < n - 1 {
        return 0.0;
    }
    let mut total: i64 = 0;
    for subset in 0u64..(1u64 << edges.len()) {
        if (subset.count_ones() as usize) < n - 1 {
            continue;
        }
        if connected(n, edges, subset) {
            total += if subset.count_ones() % 2 == 0 { 1 } else { -1 };
        }
    }
    total as f64
}

/// Number of spanning trees of the graph, by enumeration of `(n-1)`-edge
/// subsets.
pub fn spanning_trees_enumerated(n: usize, edges: &[(usize, usize)]) -> u64 {
    if n <= 1 {
        return 1;
    }
    (0u64..(1u64 << edges.len()))
        .filter(|s| s.count_ones() as usize == n - 1 && connected(n, edges, *s))
        .count() as u64
}

/// Number of spanning trees by the matrix-tree theorem.
pub fn spanning_trees_kirchhoff(n: usize, edges: &[(usize, usize)]) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    let mut lap = DMatrix::<f64>::zeros(n - 1, n - 1);
    for &(a, b) in edges {
        for (p, q) in [(a, b), (b, a)] {
            if p + 1 < n {
                lap[(p, p)] += 1.0;
                if q + 1 < n {
                    lap[(p, q)] -= 1.0;
                }
            }
        }
    }
    lap.determinant().round()
}

/// Mayer cumulant: sum over connected graphs on the points of
/// `Π_edges (-1_{|x_i - x_j| ≤ eps})`.
pub fn cumulant_phi<const D: usize>(x: &PointSet<D>) -> Result<f64, CombinatoricsError> {
    if x.len() > MAX_POINTS {
        return Err(CombinatoricsError::TooLarge {
            n: x.len(),
            max: MAX_POINTS,
        });
    }
    Ok(graph_cumulant(x.len(), &x.adjacency()))
}

/// Cumulant where vertex 0 is a block of points: it is linked to `x_i`
/// when any block point is within `eps` of `x_i`.
pub fn cumulant_phi_with_block<const D: usize>(
    block: &[VecD<D>],
    others: &PointSet<D>,
) -> Result<f64, CombinatoricsError> {
    let n = others.len() + 1;
    if n > MAX_POINTS {
        return Err(CombinatoricsError::TooLarge { n, max: MAX_POINTS });
    }
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (i, p) in others.points.iter().enumerate() {
        if block.iter().any(|b| torus_distance(b, p) <= others.eps) {
            edges.push((0, i + 1));
        }
    }
    edges.extend(others.adjacency().into_iter().map(|(a, b)| (a + 1, b + 1)));
    Ok(graph_cumulant(n, &edges))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenroseReport {
    pub phi: f64,
    pub tree_bound: f64,
    pub ok: bool,
}

/// `|phi| ≤ #spanning trees of the adjacency graph`.
pub fn penrose_check<const D: usize>(x: &PointSet<D>) -> Result<PenroseReport, CombinatoricsError> {
    let phi = cumulant_phi(x)?;
    let tree_bound = spanning_trees_kirchhoff(x.len(), &x.adjacency());
    Ok(PenroseReport {
        phi,
        tree_bound,
        ok: phi.abs() <= tree_bound,
    })
}

/// Random point sets checked against the tree bound; returns the number of
/// violations.
pub fn penrose_sweep<const D: usize>(
    samples: usize,
    sizes: &[usize],
    eps_values: &[f64],
    seed: u64,
    exec: Execution,
) -> Result<usize, CombinatoricsError> {
    if sizes.is_empty() || eps_values.is_empty() {
        return Err(CombinatoricsError::InvalidInput("empty sweep".into()));
    }
    let bad = par::try_map_range(exec, samples, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let n = sizes[rng.random_range(0..sizes.len())];
        let eps = eps_values[rng.random_range(0..eps_values.len())];
        // Concentrate points so that adjacency is not trivially empty.
        let centre: [f64; D] = std::array::from_fn(|_| rng.random::<f64>());
        let pts: Vec<VecD<D>> = (0..n)
            .map(|_| VecD::<D>(std::array::from_fn(|k| centre[k] + 3.0 * eps * (rng.random::<f64>() - 0.5))))
            .collect();
        let r = penrose_check(&PointSet::new(pts, eps)?)?;
        Ok::<_, CombinatoricsError>(usize::from(!r.ok))
    })?;
    Ok(bad.into_iter().sum())
}

fn factorial(n: u32) -> Result<u128, CombinatoricsError> {
    (1..=n as u128).try_fold(1u128, |a, k| a.checked_mul(k).ok_or(CombinatoricsError::Overflow))
}

/// Cayley's count `n^{n-2}` of labeled trees on `n` vertices.
pub fn count_labeled_trees(n: u32) -> Result<u128, CombinatoricsError> {
    if n == 0 {
        return Err(CombinatoricsError::InvalidInput("no vertices".into()));
    }
    if n <= 2 {
        return Ok(1);
    }
    (n as u128)
        .checked_pow(n - 2)
        .ok_or(CombinatoricsError::Overflow)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegreeSequence(Vec<u32>);

impl DegreeSequence {
    pub fn new(d: Vec<u32>) -> Result<Self, CombinatoricsError> {
        let p = d.len() as u32;
        if p == 0 {
            return Err(CombinatoricsError::InvalidDegrees("empty".into()));
        }
        if p == 1 {
            if d[0] != 0 {
                return Err(CombinatoricsError::InvalidDegrees("single vertex has degree 0".into()));
            }
            return Ok(Self(d));
        }
        if d.contains(&0) {
            return Err(CombinatoricsError::InvalidDegrees("degrees must be positive".into()));
        }
        let sum: u32 = d.iter().sum();
        if sum != 2 * (p - 1) {
            return Err(CombinatoricsError::InvalidDegrees(format!(
                "degrees sum to {sum}, expected {}",
                2 * (p - 1)
            )));
        }
        Ok(Self(d))
    }

    pub fn degrees(&self) -> &[u32] {
        &self.0
    }
}

/// Labeled trees with prescribed degrees: `(p-2)! / Π (d_i - 1)!`.
pub fn count_trees_with_degrees(ds: &DegreeSequence) -> Result<u128, CombinatoricsError> {
    let d = ds.degrees();
    let p = d.len() as u32;
    if p <= 2 {
        return Ok(1);
    }
    let mut c = factorial(p - 2)?;
    for &x in d {
        c /= factorial(x - 1)?;
    }
    Ok(c)
}

/// All degree sequences of trees on `p` vertices.
pub fn tree_degree_sequences(p: u32) -> Vec<DegreeSequence> {
    let mut out = Vec::new();
    if p == 0 {
        return out;
    }
    if p == 1 {
        out.push(DegreeSequence(vec![0]));
        return out;
    }
    let mut cur = Vec::with_capacity(p as usize);
    fn rec(p: u32, left: u32, cur: &mut Vec<u32>, out: &mut Vec<DegreeSequence>) {
        let k = cur.len() as u32;
        if k == p {
            if left == 0 {
                out.push(DegreeSequence(cur.clone()));
            }
            return;
        }
        let remaining = p - k - 1;
        // Each later vertex needs at least degree 1.
        for d in 1..=left.saturating_sub(remaining) {
            cur.push(d);
            rec(p, left - d, cur, out);
            cur.pop();
        }
    }
    rec(p, 2 * (p - 1), &mut cur, &mut out);
    out
}

/// `|A±_{n,m}| = 2^m (m+n-1)! / (n-1)!`.
pub fn count_collision_trees(n: u32, m: u32) -> Result<u128, CombinatoricsError> {
    if n == 0 {
        return Err(CombinatoricsError::InvalidInput("n must be positive".into()));
    }
    let mut c: u128 = 1u128.checked_shl(m).filter(|_| m < 128).ok_or(CombinatoricsError::Overflow)?;
    for k in n..n + m {
        c = c.checked_mul(k as u128).ok_or(CombinatoricsError::Overflow)?;
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionEstimate {
    pub value: f64,
    pub stderr: f64,
    /// `(N, mu^N/N! * volume fraction, stderr)` per term.
    pub terms: Vec<(usize, f64, f64)>,
    /// Upper bound on the omitted terms, `e^mu - Σ_{N ≤ N_max} mu^N/N!`.
    pub tail_bound: f64,
}

/// Partition function truncated at `n_max` particles; the configurational
/// integral of each term is a Monte Carlo average of the exclusion
/// indicator over `samples` uniform configurations.
pub fn partition_function_small_n<const D: usize>(
    params: &GrandCanonicalParams<D>,
    n_max: usize,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<PartitionEstimate, CombinatoricsError> {
    if n_max > 6 {
        return Err(CombinatoricsError::TooLarge { n: n_max, max: 6 });
    }
    if samples < 2 {
        return Err(CombinatoricsError::InvalidInput("need at least two samples".into()));
    }
    let mu = params.mu;
    let eps = params.eps;
    let mut terms = Vec::with_capacity(n_max + 1);
    let mut value = 0.0;
    let mut var = 0.0;
    let mut coeff = 1.0;
    let mut partial = 0.0;
    for n in 0..=n_max {
        if n > 0 {
            coeff *= mu / n as f64;
        }
        partial += coeff;
        let (frac, err) = if n < 2 || eps == 0.0 {
            (1.0, 0.0)
        } else {
            let hits = par::map_range(exec, samples, |i| {
                let mut rng = stream_rng(seed ^ ((n as u64) << 56), i as u64);
                let xs: Vec<VecD<D>> = (0..n)
                    .map(|_| VecD(std::array::from_fn(|_| rng.random::<f64>())))
                    .collect();
                let ok = (0..n).all(|a| (a + 1..n).all(|b| torus_distance(&xs[a], &xs[b]) > eps));
                f64::from(u8::from(ok))
            });
            let m = Moments::from_slice(&hits);
            (m.mean(), m.stderr())
        };
        value += coeff * frac;
        var += (coeff * err).powi(2);
        terms.push((n, coeff * frac, coeff * err));
    }
    Ok(PartitionEstimate {
        value,
        stderr: var.sqrt(),
        terms,
        tail_bound: (mu.exp() - partial).max(0.0),
    })
}

/// Exact two-particle truncation `1 + mu + mu²/2 (1 - c_d eps^d)`.
pub fn partition_function_two<const D: usize>(params: &GrandCanonicalParams<D>) -> f64 {
    let mu = params.mu;
    1.0 + mu + 0.5 * mu * mu * (1.0 - unit_ball_volume(D) * params.eps.powi(D as i32))
}

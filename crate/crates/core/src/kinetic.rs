//! Linearized Boltzmann equation around the Maxwellian, two ways.
//!
//! The deterministic backend discretizes velocities on a tensor
//! Gauss–Hermite grid and the first spatial axis on a periodic grid. The
//! collision part is the Galerkin matrix of the operator on Hermite
//! polynomials of bounded total degree, assembled from the weak form
//! `<phi, C g> = -1/4 ∫ M M ((v-w)·ω)_+ Δphi Δg`, so it is symmetric and
//! negative semidefinite by construction and annihilates the collision
//! invariants pointwise. Transport uses spectral differentiation; time
//! stepping is classical RK4 with step doubling.
//!
//! The second backend is a Monte Carlo over collision trees at zero
//! diameter (the Boltzmann hierarchy), summing the two hemisphere signs of
//! each creation exactly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use thiserror::Error;

use crate::fields::TestFunction;
use crate::par::{self, Execution};
use crate::pseudo::{build_backward, sample_creation_params, VelocityLaw};
use crate::quadrature::{gauss_hermite, gauss_legendre, gauss_radial, Rule};
use crate::rng::stream_rng;
use crate::sampler::PolarGaussian;
use crate::stats::Moments;
use crate::torus::{ParticleState, VecD};
use crate::trees::{CollisionTree, CreationParams, Sign};

/// Acceptance threshold for step doubling.
pub const STEP_DOUBLING_TOL: f64 = 1e-6;

/// Step halvings tried by the automatic solvers.
pub const AUTO_HALVINGS: u32 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticError {
    #[error("cross-section weights vanish for sphere node {0}")]
    QuadratureDegeneracy(usize),
    #[error("step doubling failed: runs differ by {diff:e} > {tol:e}")]
    StepDoubling { diff: f64, tol: f64 },
    #[error("time step {dt} exceeds the RK4 stability bound {bound}")]
    Unstable { dt: f64, bound: f64 },
    #[error("dimension {0} is not supported by the velocity grid")]
    UnsupportedDimension(usize),
    #[error("test function {name} has mean {mean:e}")]
    NotMeanFree { name: String, mean: f64 },
    #[error("test function {0} depends on a position coordinate other than x1")]
    SpatialDependence(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Orthonormal probabilists' Hermite polynomials `He_n / sqrt(n!)` at `x`.
pub fn hermite_orthonormal(n_max: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if n_max >= 1 {
        out.push(x);
    }
    for n in 1..n_max {
        let next = (x * out[n] - (n as f64).sqrt() * out[n - 1]) / ((n + 1) as f64).sqrt();
        out.push(next);
    }
}

/// Multi-indices of total degree at most `degree`, graded then lexicographic.
pub fn multi_indices<const D: usize>(degree: usize) -> Vec<[u32; D]> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut cur = [0u32; D];
        fn rec<const D: usize>(k: usize, left: u32, cur: &mut [u32; D], out: &mut Vec<[u32; D]>) {
            if k + 1 == D {
                cur[k] = left;
                out.push(*cur);
                return;
            }
            for a in (0..=left).rev() {
                cur[k] = a;
                rec(k + 1, left - a, cur, out);
            }
        }
        rec(0, total as u32, &mut cur, &mut out);
    }
    out
}

/// Evaluates the orthonormal Hermite basis at a point.
#[derive(Clone, Debug)]
pub struct HermiteBasis<const D: usize> {
    pub degree: usize,
    pub indices: Vec<[u32; D]>,
}

impl<const D: usize> HermiteBasis<D> {
    pub fn new(degree: usize) -> Self {
        Self {
            degree,
            indices: multi_indices::<D>(degree),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Write `psi_alpha(v)` for every basis element into `out`.
    pub fn eval_into(&self, v: &VecD<D>, out: &mut [f64]) {
        let mut tables: [Vec<f64>; D] = std::array::from_fn(|_| Vec::with_capacity(self.degree + 1));
        for k in 0..D {
            hermite_orthonormal(self.degree, v.0[k], &mut tables[k]);
        }
        for (o, idx) in out.iter_mut().zip(&self.indices) {
            let mut p = 1.0;
            for k in 0..D {
                p *= tables[k][idx[k] as usize];
            }
            *o = p;
        }
    }
}

/// Rule on the unit sphere: Gauss–Legendre in the polar cosine times
/// uniform azimuths in `d = 3`, uniform angles in `d = 2`.
pub fn sphere_rule<const D: usize>(n: usize) -> Result<(Vec<VecD<D>>, Vec<f64>), KineticError> {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    match D {
        2 => {
            let k = 2 * n;
            for j in 0..k {
                let a = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / k as f64;
                let mut v = VecD::zero();
                v.0[0] = a.cos();
                v.0[1] = a.sin();
                nodes.push(v);
                weights.push(2.0 * std::f64::consts::PI / k as f64);
            }
        }
        3 => {
            let gl = gauss_legendre(n, -1.0, 1.0);
            let k = 2 * n;
            for (z, wz) in gl.nodes.iter().zip(&gl.weights) {
                let s = (1.0 - z * z).max(0.0).sqrt();
                for j in 0..k {
                    let a = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / k as f64;
                    let mut v = VecD::zero();
                    v.0[0] = s * a.cos();
                    v.0[1] = s * a.sin();
                    v.0[2] = *z;
                    nodes.push(v);
                    weights.push(wz * 2.0 * std::f64::consts::PI / k as f64);
                }
            }
        }
        d => return Err(KineticError::UnsupportedDimension(d)),
    }
    Ok((nodes, weights))
}

/// Tensor Gauss–Hermite velocity nodes with Maxwellian weights, plus the
/// Hermite basis the collision matrix acts on.
#[derive(Clone, Debug)]
pub struct VelocityGrid<const D: usize> {
    pub nodes: Vec<VecD<D>>,
    pub weights: Vec<f64>,
    pub basis: HermiteBasis<D>,
    /// `H[(node, alpha)] = psi_alpha(node)`.
    pub values: DMatrix<f64>,
    pub sphere_nodes: Vec<VecD<D>>,
    pub sphere_weights: Vec<f64>,
}

impl<const D: usize> VelocityGrid<D> {
    /// `per_dim` nodes per axis; the basis has total degree `degree`, which
    /// must satisfy `degree < per_dim` so that the grid is exact on it.
    pub fn new(per_dim: usize, degree: usize) -> Result<Self, KineticError> {
        if D != 2 && D != 3 {
            return Err(KineticError::UnsupportedDimension(D));
        }
        if degree >= per_dim {
            return Err(KineticError::InvalidInput(format!(
                "degree {degree} needs more than {per_dim} nodes per axis"
            )));
        }
        let gh = gauss_hermite(per_dim);
        let (nodes, weights) = tensor_rule::<D>(&gh);
        let basis = HermiteBasis::<D>::new(degree);
        let mut values = DMatrix::zeros(nodes.len(), basis.len());
        let mut row = vec![0.0; basis.len()];
        for (i, v) in nodes.iter().enumerate() {
            basis.eval_into(v, &mut row);
            for (a, r) in row.iter().enumerate() {
                values[(i, a)] = *r;
            }
        }
        let (sphere_nodes, sphere_weights) = sphere_rule::<D>(degree + 1)?;
        Ok(Self {
            nodes,
            weights,
            basis,
            values,
            sphere_nodes,
            sphere_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn tensor_rule<const D: usize>(r: &Rule) -> (Vec<VecD<D>>, Vec<f64>) {
    let n = r.len();
    let total = n.pow(D as u32);
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for lin in 0..total {
        let mut rem = lin;
        let mut v = VecD::zero();
        let mut w = 1.0;
        // Last axis varies fastest.
        for k in (0..D).rev() {
            let i = rem % n;
            rem /= n;
            v.0[k] = r.nodes[i];
            w *= r.weights[i];
        }
        nodes.push(v);
        weights.push(w);
    }
    (nodes, weights)
}

/// How the six-dimensional collision integral is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assembly {
    /// Explicit quadrature over `(c, |u|, û, ω)`.
    Direct,
    /// `d = 3` only: hard-sphere scattering is isotropic, so the integral
    /// over `(û, û')` factorizes into sphere averages.
    Isotropic,
}

// F_alpha(c, u) = psi_alpha((c+u)/√2) + psi_alpha((c-u)/√2).
fn pair_sum<const D: usize>(basis: &HermiteBasis<D>, c: &VecD<D>, u: &VecD<D>, a: &mut [f64], b: &mut [f64]) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    basis.eval_into(&((*c + *u) * s), a);
    basis.eval_into(&((*c - *u) * s), b);
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x += *y;
    }
}

/// Galerkin matrix `S[alpha, beta] = <psi_alpha, C psi_beta>_M`.
pub fn assemble_collision<const D: usize>(
    basis: &HermiteBasis<D>,
    assembly: Assembly,
) -> Result<DMatrix<f64>, KineticError> {
    let nb = basis.len();
    let q = basis.degree + 1;
    let gh = gauss_hermite(q);
    let (cs, wcs) = tensor_rule::<D>(&gh);
    // Radial weight r^{d-1} (Jacobian) times r (cross-section).
    let radial = gauss_radial(q, D as u32, 2.0);
    let (us, wus) = sphere_rule::<D>(q)?;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut g = DMatrix::<f64>::zeros(nb, nb);
    let mut fa = vec![0.0; nb];
    let mut fb = vec![0.0; nb];
    match assembly {
        Assembly::Isotropic => {
            if D != 3 {
                return Err(KineticError::InvalidInput("isotropic assembly needs d = 3".into()));
            }
            let area = 4.0 * std::f64::consts::PI;
            let mut fmat = DMatrix::<f64>::zeros(us.len(), nb);
            for (c, wc) in cs.iter().zip(&wcs) {
                for (rho, wr) in radial.nodes.iter().zip(&radial.weights) {
                    let mut avg = DVector::<f64>::zeros(nb);
                    for (j, (uh, wu)) in us.iter().zip(&wus).enumerate() {
                        pair_sum(basis, c, &(*uh * *rho), &mut fa, &mut fb);
                        let sw = wu.sqrt();
                        for a in 0..nb {
                            fmat[(j, a)] = sw * fa[a];
                            avg[a] += wu * fa[a];
                        }
                    }
                    let w = wc * wr;
                    g.gemm_tr(2.0 * area * w, &fmat, &fmat, 1.0);
                    g.ger(-2.0 * w, &avg, &avg, 1.0);
                }
            }
            // -1/4 * sqrt2 * 1/4 * (2 pi)^{-3/2}
            g *= -std::f64::consts::SQRT_2 / 16.0 * two_pi.powf(-1.5);
        }
        Assembly::Direct => {
            let omegas = relative_omega_rule::<D>(2 * q + 2)?;
            let chunk = 2048;
            let mut rows = DMatrix::<f64>::zeros(chunk, nb);
            let mut filled = 0;
            for (c, wc) in cs.iter().zip(&wcs) {
                for (rho, wr) in radial.nodes.iter().zip(&radial.weights) {
                    for (j, (uh, wu)) in us.iter().zip(&wus).enumerate() {
                        let u = *uh * *rho;
                        let frame = tangent_frame(uh);
                        let mut total = 0.0;
                        for &(normal, ref tangent, wo) in &omegas {
                            let mut omega = *uh * normal;
                            for (e, t) in frame.iter().zip(tangent.iter()) {
                                omega += *e * *t;
                            }
                            let up = u - omega * (2.0 * u.dot(&omega));
                            pair_sum(basis, c, &up, &mut fa, &mut fb);
                            let after = fa.clone();
                            pair_sum(basis, c, &u, &mut fa, &mut fb);
                            let w = (wc * wr * wu * wo).sqrt();
                            total += wo;
                            for a in 0..nb {
                                rows[(filled, a)] = w * (after[a] - fa[a]);
                            }
                            filled += 1;
                            if filled == chunk {
                                g.gemm_tr(1.0, &rows, &rows, 1.0);
                                rows.fill(0.0);
                                filled = 0;
                            }
                        }
                        if !(total > 0.0) {
                            return Err(KineticError::QuadratureDegeneracy(j));
                        }
                    }
                }
            }
            if filled > 0 {
                g.gemm_tr(1.0, &rows, &rows, 1.0);
            }
            g *= -0.25 * std::f64::consts::SQRT_2 * two_pi.powf(-(D as f64) / 2.0);
        }
    }
    // Exact symmetry of the accumulated Gram matrix up to roundoff.
    let sym = (&g + g.transpose()) * 0.5;
    Ok(sym)
}

/// Directions `ω = n û + Σ t_k e_k` on the hemisphere `ω·û > 0`, as
/// `(n, [t_k], weight * (ω·û))` with weights for the surface measure.
fn relative_omega_rule<const D: usize>(n: usize) -> Result<Vec<(f64, Vec<f64>, f64)>, KineticError> {
    let mut out = Vec::new();
    match D {
        2 => {
            let half = std::f64::consts::FRAC_PI_2;
            let gl = gauss_legendre(n, -half, half);
            for (chi, w) in gl.nodes.iter().zip(&gl.weights) {
                out.push((chi.cos(), vec![chi.sin()], w * chi.cos()));
            }
        }
        3 => {
            let gl = gauss_legendre(n, 0.0, 1.0);
            let k = 2 * n;
            for (x, wx) in gl.nodes.iter().zip(&gl.weights) {
                let s = (1.0 - x * x).sqrt();
                for j in 0..k {
                    let a = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / k as f64;
                    let wphi = 2.0 * std::f64::consts::PI / k as f64;
                    out.push((*x, vec![s * a.cos(), s * a.sin()], wx * wphi * x));
                }
            }
        }
        d => return Err(KineticError::UnsupportedDimension(d)),
    }
    Ok(out)
}

/// Orthonormal basis of the complement of the unit vector `u` (`d` ≤ 3).
fn tangent_frame<const D: usize>(u: &VecD<D>) -> Vec<VecD<D>> {
    match D {
        2 => {
            let mut e = VecD::zero();
            e.0[0] = -u.0[1];
            e.0[1] = u.0[0];
            vec![e]
        }
        _ => {
            // Pick the axis least aligned with u.
            let mut k = 0;
            for j in 1..D {
                if u.0[j].abs() < u.0[k].abs() {
                    k = j;
                }
            }
            let a = VecD::<D>::axis(k);
            let mut e1 = a - *u * a.dot(u);
            e1 = e1 * (1.0 / e1.norm());
            let mut e2 = VecD::zero();
            e2.0[0] = u.0[1] * e1.0[2] - u.0[2] * e1.0[1];
            e2.0[1] = u.0[2] * e1.0[0] - u.0[0] * e1.0[2];
            e2.0[2] = u.0[0] * e1.0[1] - u.0[1] * e1.0[0];
            vec![e1, e2]
        }
    }
}

/// Periodic spectral differentiation matrix on `n` equispaced points of `[0, 1)`.
pub fn spectral_derivative(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, n);
    if n < 2 {
        return d;
    }
    let h = 2.0 * std::f64::consts::PI / n as f64;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = i as f64 - j as f64;
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            let x = 0.5 * k * h;
            let entry = if n.is_multiple_of(2) {
                0.5 * sign / x.tan()
            } else {
                0.5 * sign / x.sin()
            };
            // Rescale from [0, 2 pi) to [0, 1).
            d[(i, j)] = 2.0 * std::f64::consts::PI * entry;
        }
    }
    d
}

/// Values on `nodes × spatial points` (column `ix` is the velocity profile
/// at `x1 = ix / nx`).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    pub values: DMatrix<f64>,
}

impl DensityField {
    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        (&self.values - &o.values).amax()
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self {
            values: &self.values - &o.values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct KineticSolver<const D: usize> {
    pub grid: VelocityGrid<D>,
    pub nx: usize,
    /// Galerkin collision matrix on the Hermite basis.
    pub s: DMatrix<f64>,
    /// `S Hᵀ W`: nodal values to collision coefficients.
    coeff_map: DMatrix<f64>,
    diff: DMatrix<f64>,
    spectral_radius: f64,
    max_eigenvalue: f64,
}

impl<const D: usize> KineticSolver<D> {
    /// `nx = 1` gives spatially homogeneous fields.
    pub fn new(per_dim: usize, degree: usize, nx: usize) -> Result<Self, KineticError> {
        let grid = VelocityGrid::<D>::new(per_dim, degree)?;
        let assembly = if D == 3 { Assembly::Isotropic } else { Assembly::Direct };
        let s = assemble_collision(&grid.basis, assembly)?;
        Self::with_matrix(grid, s, nx)
    }

    pub fn with_matrix(grid: VelocityGrid<D>, s: DMatrix<f64>, nx: usize) -> Result<Self, KineticError> {
        if nx == 0 {
            return Err(KineticError::InvalidInput("need at least one spatial point".into()));
        }
        let mut ht_w = grid.values.transpose();
        for (j, w) in grid.weights.iter().enumerate() {
            ht_w.column_mut(j).scale_mut(*w);
        }
        let coeff_map = &s * ht_w;
        let eig = SymmetricEigen::new(s.clone());
        let max_eigenvalue = eig.eigenvalues.max();
        let collision_radius = eig.eigenvalues.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let vmax = grid.nodes.iter().fold(0.0f64, |a, v| a.max(v.0[0].abs()));
        let transport_radius = 2.0 * std::f64::consts::PI * (nx / 2) as f64 * vmax;
        Ok(Self {
            grid,
            nx,
            s,
            coeff_map,
            diff: spectral_derivative(nx),
            spectral_radius: collision_radius + transport_radius,
            max_eigenvalue,
        })
    }

    /// Largest eigenvalue of the collision matrix symmetrized in `L²_M`.
    pub fn max_collision_eigenvalue(&self) -> f64 {
        self.max_eigenvalue
    }

    /// Conservative RK4 step bound from the spectral radius.
    pub fn stability_bound(&self) -> f64 {
        2.5 / self.spectral_radius.max(1e-12)
    }

    pub fn x_point(&self, ix: usize) -> VecD<D> {
        let mut x = VecD::zero();
        x.0[0] = ix as f64 / self.nx as f64;
        x
    }

    /// Sample `f` on the grid. Only the first position coordinate is
    /// resolved; dependence on the others is rejected.
    pub fn field(&self, f: &TestFunction<D>) -> Result<DensityField, KineticError> {
        if f.depends_on_x() {
            check_x1_only(f)?;
        }
        let nv = self.grid.len();
        let mut values = DMatrix::zeros(nv, self.nx);
        for ix in 0..self.nx {
            let x = self.x_point(ix);
            for (iv, v) in self.grid.nodes.iter().enumerate() {
                values[(iv, ix)] = f.eval(&x, v);
            }
        }
        Ok(DensityField { values })
    }

    pub fn constant(&self, c: f64) -> DensityField {
        DensityField {
            values: DMatrix::from_element(self.grid.len(), self.nx, c),
        }
    }

    /// `∫ M g h dx dv` on the grid.
    pub fn inner(&self, g: &DensityField, h: &DensityField) -> f64 {
        let mut s = 0.0;
        for ix in 0..self.nx {
            for (iv, w) in self.grid.weights.iter().enumerate() {
                s += w * g.values[(iv, ix)] * h.values[(iv, ix)];
            }
        }
        s / self.nx as f64
    }

    pub fn norm(&self, g: &DensityField) -> f64 {
        self.inner(g, g).sqrt()
    }

    pub fn apply_collision(&self, g: &DensityField) -> DensityField {
        let coeffs = &self.coeff_map * &g.values;
        DensityField {
            values: &self.grid.values * coeffs,
        }
    }

    pub fn apply_transport(&self, g: &DensityField) -> DensityField {
        let mut values = &g.values * self.diff.transpose();
        for (iv, v) in self.grid.nodes.iter().enumerate() {
            values.row_mut(iv).scale_mut(-v.0[0]);
        }
        DensityField { values }
    }

    pub fn apply_l(&self, g: &DensityField) -> DensityField {
        let mut out = self.apply_transport(g);
        out.values += self.apply_collision(g).values;
        out
    }

    /// Nodal collision matrix `H S Hᵀ W`.
    pub fn nodal_collision_matrix(&self) -> DMatrix<f64> {
        &self.grid.values * &self.coeff_map
    }

    fn steps(&self, t: f64, dt: f64) -> Result<(usize, f64), KineticError> {
        if !(t >= 0.0) || !(dt > 0.0) {
            return Err(KineticError::InvalidInput(format!("t = {t}, dt = {dt}")));
        }
        let bound = self.stability_bound();
        if dt > bound {
            return Err(KineticError::Unstable { dt, bound });
        }
        let n = (t / dt).ceil().max(if t > 0.0 { 1.0 } else { 0.0 }) as usize;
        Ok((n, if n > 0 { t / n as f64 } else { 0.0 }))
    }

    /// RK4 with `ceil(t/dt)` equal steps, no error control.
    pub fn solve_fixed(&self, g0: &DensityField, t: f64, dt: f64) -> Result<DensityField, KineticError> {
        let (n, h) = self.steps(t, dt)?;
        let mut g = g0.clone();
        for _ in 0..n {
            let k1 = self.apply_l(&g).values;
            let k2 = self.apply_l(&DensityField { values: &g.values + &k1 * (0.5 * h) }).values;
            let k3 = self.apply_l(&DensityField { values: &g.values + &k2 * (0.5 * h) }).values;
            let k4 = self.apply_l(&DensityField { values: &g.values + &k3 * h }).values;
            g.values += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        Ok(g)
    }

    /// `g(t)` from runs with `dt` and `dt/2`; fails if they differ by more
    /// than [`STEP_DOUBLING_TOL`] in grid max-norm. Returns the finer run.
    pub fn solve_deterministic(&self, g0: &DensityField, t: f64, dt: f64) -> Result<DensityField, KineticError> {
        let coarse = self.solve_fixed(g0, t, dt)?;
        let fine = self.solve_fixed(g0, t, dt / 2.0)?;
        let diff = coarse.max_abs_diff(&fine);
        if !(diff <= STEP_DOUBLING_TOL) {
            return Err(KineticError::StepDoubling {
                diff,
                tol: STEP_DOUBLING_TOL,
            });
        }
        Ok(fine)
    }

    /// [`Self::solve_deterministic`] starting from [`Self::default_dt`] and
    /// halving the step until step doubling accepts, at most `halvings` times.
    pub fn solve_auto(&self, g0: &DensityField, t: f64, halvings: u32) -> Result<DensityField, KineticError> {
        let mut dt = self.default_dt().min(t.max(f64::MIN_POSITIVE));
        let mut last = None;
        for _ in 0..=halvings {
            match self.solve_deterministic(g0, t, dt) {
                Err(e @ KineticError::StepDoubling { .. }) => last = Some(e),
                other => return other,
            }
            dt /= 2.0;
        }
        Err(last.expect("at least one attempt"))
    }

    /// Dyson terms with the same step search as [`Self::solve_auto`].
    pub fn dyson_auto(&self, g0: &DensityField, t: f64, m_max: usize, halvings: u32) -> Result<Vec<DensityField>, KineticError> {
        let mut dt = self.default_dt().min(t.max(f64::MIN_POSITIVE));
        let mut last = None;
        for _ in 0..=halvings {
            match self.dyson_terms(g0, t, dt, m_max) {
                Err(e @ KineticError::StepDoubling { .. }) => last = Some(e),
                other => return other,
            }
            dt /= 2.0;
        }
        Err(last.expect("at least one attempt"))
    }

    /// Terms `g^(0..=m_max)` of the collision expansion around free
    /// transport: `∂t g^(0) = T g^(0)`, `∂t g^(k) = T g^(k) + C g^(k-1)`,
    /// `g^(k)(0) = 0` for `k ≥ 1`. Step-doubled like the full solve.
    pub fn dyson_terms(
        &self,
        g0: &DensityField,
        t: f64,
        dt: f64,
        m_max: usize,
    ) -> Result<Vec<DensityField>, KineticError> {
        let coarse = self.dyson_fixed(g0, t, dt, m_max)?;
        let fine = self.dyson_fixed(g0, t, dt / 2.0, m_max)?;
        let diff = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max);
        if !(diff <= STEP_DOUBLING_TOL) {
            return Err(KineticError::StepDoubling {
                diff,
                tol: STEP_DOUBLING_TOL,
            });
        }
        Ok(fine)
    }

    fn dyson_rhs(&self, gs: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        (0..gs.len())
            .map(|k| {
                let mut r = self.apply_transport(&DensityField { values: gs[k].clone() }).values;
                if k > 0 {
                    r += self.apply_collision(&DensityField { values: gs[k - 1].clone() }).values;
                }
                r
            })
            .collect()
    }

    fn dyson_fixed(&self, g0: &DensityField, t: f64, dt: f64, m_max: usize) -> Result<Vec<DensityField>, KineticError> {
        let (n, h) = self.steps(t, dt)?;
        let zero = DMatrix::zeros(g0.values.nrows(), g0.values.ncols());
        let mut gs: Vec<DMatrix<f64>> = (0..=m_max)
            .map(|k| if k == 0 { g0.values.clone() } else { zero.clone() })
            .collect();
        let axpy = |a: &[DMatrix<f64>], b: &[DMatrix<f64>], s: f64| -> Vec<DMatrix<f64>> {
            a.iter().zip(b).map(|(x, y)| x + y * s).collect()
        };
        for _ in 0..n {
            let k1 = self.dyson_rhs(&gs);
            let k2 = self.dyson_rhs(&axpy(&gs, &k1, 0.5 * h));
            let k3 = self.dyson_rhs(&axpy(&gs, &k2, 0.5 * h));
            let k4 = self.dyson_rhs(&axpy(&gs, &k3, h));
            for k in 0..gs.len() {
                gs[k] += (&k1[k] + &k2[k] * 2.0 + &k3[k] * 2.0 + &k4[k]) * (h / 6.0);
            }
        }
        Ok(gs.into_iter().map(|values| DensityField { values }).collect())
    }

    /// Default step: a fraction of the stability bound, at most 0.005.
    pub fn default_dt(&self) -> f64 {
        (0.25 * self.stability_bound()).min(0.005)
    }
}

fn check_x1_only<const D: usize>(f: &TestFunction<D>) -> Result<(), KineticError> {
    let probes = [0.13, 0.41, 0.77];
    let vs = [0.3, -1.1, 0.7];
    let mut v = VecD::zero();
    for k in 0..D {
        v.0[k] = vs[k % 3];
    }
    for &x1 in &probes {
        let mut base = VecD::zero();
        base.0[0] = x1;
        let f0 = f.eval(&base, &v);
        for k in 1..D {
            for &y in &probes {
                let mut x = base;
                x.0[k] = y;
                if (f.eval(&x, &v) - f0).abs() > 1e-12 * (1.0 + f0.abs()) {
                    return Err(KineticError::SpatialDependence(f.name().to_string()));
                }
            }
        }
    }
    Ok(())
}

/// Limit covariance `∫ M h g(t)` with `g` solving the linearized equation
/// from `g0`.
pub fn covariance_prediction<const D: usize>(
    solver: &KineticSolver<D>,
    g0: &TestFunction<D>,
    h: &TestFunction<D>,
    t: f64,
) -> Result<f64, KineticError> {
    for f in [g0, h] {
        if !f.is_mean_free() {
            return Err(KineticError::NotMeanFree {
                name: f.name().to_string(),
                mean: f.mean(),
            });
        }
    }
    let g = solver.field(g0)?;
    let hh = solver.field(h)?;
    let gt = if t == 0.0 {
        g
    } else {
        solver.solve_auto(&g, t, AUTO_HALVINGS)?
    };
    Ok(solver.inner(&hh, &gt))
}

/// Zero-diameter pseudo-trajectory of one tree: the particle states at time 0.
#[derive(Clone, Debug, PartialEq)]
pub struct BoltzmannTreeSample<const D: usize> {
    pub tree: CollisionTree,
    pub params: CreationParams<D>,
    pub endpoint: Vec<ParticleState<D>>,
    /// `Π s_i ((v_new - v_parent)·ω_i)_+`.
    pub weight: f64,
}

impl<const D: usize> BoltzmannTreeSample<D> {
    /// `None` when a creation falls on the wrong hemisphere.
    pub fn build(z1: &ParticleState<D>, tree: CollisionTree, params: CreationParams<D>, theta: f64) -> Option<Self> {
        let traj = build_backward(z1, &tree, &params, 0.0, theta).ok()?;
        let weight = traj
            .creations
            .iter()
            .map(|c| c.sign.value() * c.cross_section)
            .product();
        Some(Self {
            tree,
            params,
            endpoint: traj.terminal.particles,
            weight,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeMcEstimate {
    pub value: f64,
    pub stderr: f64,
    /// `(mean, stderr)` of each order `m = 0..=m_max`.
    pub per_order: Vec<(f64, f64)>,
    pub samples: usize,
    /// Relative standard error above 50%.
    pub blow_up: bool,
}

/// One tree Monte Carlo sample: order-by-order contributions for a root
/// drawn from `M dx`.
pub fn tree_mc_sample<const D: usize, R: Rng + ?Sized>(
    g0: &TestFunction<D>,
    h: &TestFunction<D>,
    theta: f64,
    m_max: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut g = PolarGaussian::default();
    let x: [f64; D] = std::array::from_fn(|_| rng.random::<f64>());
    let v = g.maxwellian::<D, _>(rng);
    let z1 = ParticleState { x: VecD(x), v };
    let hz = h.eval(&z1.x, &z1.v);
    let mut out = Vec::with_capacity(m_max + 1);
    for m in 0..=m_max {
        // Attachment labels uniformly (m! choices), signs summed exactly.
        let labels: Vec<usize> = (0..m).map(|i| rng.random_range(0..1 + i)).collect();
        let (params, measure) = sample_creation_params(m, theta, &VelocityLaw::Maxwellian, &mut g, rng);
        let labels_count: f64 = (1..=m).map(|i| i as f64).product();
        let mass = labels_count * measure;
        let mut total = 0.0;
        for bits in 0..(1u32 << m) {
            let entries = (0..m)
                .map(|i| (labels[i], Sign::from_bit(bits >> i & 1 == 1)))
                .collect();
            let tree = CollisionTree { n: 1, entries };
            let Some(sample) = BoltzmannTreeSample::build(&z1, tree, params.clone(), theta) else {
                continue;
            };
            let g_sum: f64 = sample.endpoint.iter().map(|p| g0.eval(&p.x, &p.v)).sum();
            total += sample.weight * g_sum;
        }
        out.push(hz * mass * total);
    }
    out
}

/// Monte Carlo estimate of `Σ_{m ≤ m_max} ∫ h Q_{1,m+1}(theta) G^0_{m+1}`.
pub fn solve_tree_mc<const D: usize>(
    g0: &TestFunction<D>,
    h: &TestFunction<D>,
    theta: f64,
    m_max: usize,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<TreeMcEstimate, KineticError> {
    if samples < 2 {
        return Err(KineticError::InvalidInput("need at least two samples".into()));
    }
    if !(theta > 0.0) {
        return Err(KineticError::InvalidInput(format!("theta = {theta}")));
    }
    let rows = par::map_range(exec, samples, |i| {
        let mut rng = stream_rng(seed, i as u64);
        tree_mc_sample(g0, h, theta, m_max, &mut rng)
    });
    let totals: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    let all = Moments::from_slice(&totals);
    let per_order = (0..=m_max)
        .map(|m| {
            let mm = Moments::from_slice(&rows.iter().map(|r| r[m]).collect::<Vec<_>>());
            (mm.mean(), mm.stderr())
        })
        .collect();
    let value = all.mean();
    let stderr = all.stderr();
    Ok(TreeMcEstimate {
        value,
        stderr,
        per_order,
        samples,
        blow_up: !(stderr <= 0.5 * value.abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::catalog;

    #[test]
    fn basis_is_orthonormal_on_the_grid() {
        let g = VelocityGrid::<2>::new(6, 4).unwrap();
        let mut ht_w = g.values.transpose();
        for (j, w) in g.weights.iter().enumerate() {
            ht_w.column_mut(j).scale_mut(*w);
        }
        let gram = ht_w * &g.values;
        let id = DMatrix::<f64>::identity(g.basis.len(), g.basis.len());
        assert!((gram - id).amax() < 1e-12);
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn multi_index_count() {
        assert_eq!(multi_indices::<3>(2).len(), 10);
        assert_eq!(multi_indices::<2>(4).len(), 15);
        assert_eq!(multi_indices::<3>(0), vec![[0, 0, 0]]);
    }

    #[test]
    fn isotropic_and_direct_assembly_agree() {
        let b = HermiteBasis::<3>::new(3);
        let a = assemble_collision(&b, Assembly::Isotropic).unwrap();
        let d = assemble_collision(&b, Assembly::Direct).unwrap();
        assert!((&a - &d).amax() < 1e-10 * a.amax(), "{}", (&a - &d).amax());
    }

    #[test]
    fn spectral_derivative_of_a_sine() {
        for n in [8, 9] {
            let d = spectral_derivative(n);
            let f = DVector::from_fn(n, |i, _| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin());
            let df = &d * f;
            for i in 0..n {
                let x = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                assert!((df[i] - 2.0 * std::f64::consts::PI * x.cos()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn collision_kills_invariants() {
        let s = KineticSolver::<2>::new(6, 4, 1).unwrap();
        for f in [catalog::constant::<2>(1.0), catalog::velocity::<2>(0), catalog::velocity::<2>(1), catalog::energy::<2>()] {
            let g = s.field(&f).unwrap();
            assert!(s.norm(&s.apply_l(&g)) < 1e-10, "{}", f.name());
        }
        assert!(s.max_collision_eigenvalue() < 1e-10);
    }
}

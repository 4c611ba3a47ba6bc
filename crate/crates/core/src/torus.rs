//! Geometry on the unit torus `[0,1)^D`: minimal images, contact-time
//! prediction for hard spheres of diameter `eps`, and specular reflection.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use thiserror::Error;

/// Tolerance on `|omega| - 1` accepted by [`specular_reflect`].
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// Relative discriminant below which a contact counts as grazing.
pub const GRAZING_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("contact direction is not a unit vector (norm {norm})")]
    NonUnitOmega { norm: f64 },
    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(f64),
    #[error("particles overlap: distance {distance} < eps {eps}")]
    Overlap { distance: f64, eps: f64 },
}

/// A point or vector in `R^D`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VecD<const D: usize>(pub [f64; D]);

impl<const D: usize> Default for VecD<D> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<const D: usize> VecD<D> {
    pub const fn zero() -> Self {
        VecD([0.0; D])
    }

    pub fn new(c: [f64; D]) -> Self {
        VecD(c)
    }

    /// Unit vector along axis `k`.
    pub fn axis(k: usize) -> Self {
        let mut v = Self::zero();
        v.0[k] = 1.0;
        v
    }

    pub fn dot(&self, o: &Self) -> f64 {
        let mut s = 0.0;
        for k in 0..D {
            s += self.0[k] * o.0[k];
        }
        s
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// Reduce every component into `[0, 1)`.
    pub fn wrapped(&self) -> Self {
        let mut out = *self;
        for c in out.0.iter_mut() {
            *c = wrap_unit(*c);
        }
        out
    }

    pub fn shifted(&self, shift: &[i64; D]) -> Self {
        let mut out = *self;
        for k in 0..D {
            out.0[k] += shift[k] as f64;
        }
        out
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Reduce a coordinate into `[0, 1)`.
pub fn wrap_unit(c: f64) -> f64 {
    let w = c - c.floor();
    // `c - floor(c)` rounds to 1.0 for tiny negative `c`.
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl<const D: usize> Index<usize> for VecD<D> {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

impl<const D: usize> IndexMut<usize> for VecD<D> {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.0[k]
    }
}

impl<const D: usize> Add for VecD<D> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl<const D: usize> AddAssign for VecD<D> {
    fn add_assign(&mut self, o: Self) {
        for k in 0..D {
            self.0[k] += o.0[k];
        }
    }
}

impl<const D: usize> Sub for VecD<D> {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        self -= o;
        self
    }
}

impl<const D: usize> SubAssign for VecD<D> {
    fn sub_assign(&mut self, o: Self) {
        for k in 0..D {
            self.0[k] -= o.0[k];
        }
    }
}

impl<const D: usize> Mul<f64> for VecD<D> {
    type Output = Self;
    fn mul(mut self, s: f64) -> Self {
        for c in self.0.iter_mut() {
            *c *= s;
        }
        self
    }
}

impl<const D: usize> Neg for VecD<D> {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

/// Position on the torus and velocity.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ParticleState<const D: usize> {
    pub x: VecD<D>,
    pub v: VecD<D>,
}

impl<const D: usize> ParticleState<D> {
    pub fn new(x: [f64; D], v: [f64; D]) -> Self {
        Self {
            x: VecD(x).wrapped(),
            v: VecD(v),
        }
    }
}

/// A predicted contact between two particles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactEvent<const D: usize> {
    pub time: f64,
    /// Unit contact direction pointing from particle 2 (its image) to particle 1.
    pub omega: VecD<D>,
    /// Lattice shift applied to particle 2 to reach the colliding image.
    pub shift: [i64; D],
}

/// Result of a contact search: the earliest contact, if any, plus whether a
/// grazing (measure-zero) contact was skipped along the way.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactPrediction<const D: usize> {
    pub event: Option<ContactEvent<D>>,
    pub grazing: bool,
}

/// Outcome of the contact quadratic for one fixed image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ContactSolve {
    Miss,
    Grazing,
    Hit(f64),
}

/// Shift `k` minimizing `|x_b - x_a + k|`, ties toward the smallest shift.
pub fn minimal_image_shift<const D: usize>(x_a: &VecD<D>, x_b: &VecD<D>) -> [i64; D] {
    let mut shift = [0i64; D];
    for k in 0..D {
        let d = x_b.0[k] - x_a.0[k];
        let mut best = (f64::INFINITY, 0i64);
        // Ascending order keeps the smaller shift on exact ties.
        for s in [-1i64, 0, 1] {
            let a = (d + s as f64).abs();
            if a < best.0 {
                best = (a, s);
            }
        }
        shift[k] = best.1;
    }
    shift
}

/// Smallest representative of `x_b - x_a + Z^D`.
///
/// Because the Euclidean norm is separable, choosing the shift per axis is a
/// global minimum; ties resolve to the lexicographically smallest shift.
pub fn minimal_image<const D: usize>(x_a: &VecD<D>, x_b: &VecD<D>) -> VecD<D> {
    let shift = minimal_image_shift(x_a, x_b);
    (*x_b - *x_a).shifted(&shift)
}

pub fn torus_distance<const D: usize>(x_a: &VecD<D>, x_b: &VecD<D>) -> f64 {
    minimal_image(x_a, x_b).norm()
}

/// Solve `|rel + u t| = eps` for the first approaching root in `[0, horizon]`.
///
/// `rel` is the displacement of particle 2 (image) relative to particle 1 and
/// `u = v2 - v1`.
pub fn solve_contact<const D: usize>(
    rel: &VecD<D>,
    u: &VecD<D>,
    eps: f64,
    horizon: f64,
) -> ContactSolve {
    let b = rel.dot(u);
    if b >= 0.0 {
        return ContactSolve::Miss;
    }
    let a = u.norm2();
    let c = rel.norm2() - eps * eps;
    let disc = b * b - a * c;
    let scale = a * eps * eps;
    if scale > 0.0 && (disc / scale).abs() <= GRAZING_TOLERANCE {
        return ContactSolve::Grazing;
    }
    if disc < 0.0 {
        return ContactSolve::Miss;
    }
    // Stable root: t = c / (-b + sqrt(disc)), equal to (-b - sqrt(disc)) / a.
    let mut t = (c / (-b + disc.sqrt())).max(0.0);
    // The discriminant cancels near grazing; one Newton step on |rel + u t|^2
    // evaluated at the contact restores the lost digits.
    if t > 0.0 {
        let r = *rel + *u * t;
        let slope = 2.0 * r.dot(u);
        if slope < 0.0 {
            let polished = t - (r.norm2() - eps * eps) / slope;
            if polished >= 0.0 && (polished - t).abs() <= 1e-6 * (1.0 + t) {
                t = polished;
            }
        }
    }
    if t <= horizon {
        ContactSolve::Hit(t)
    } else {
        ContactSolve::Miss
    }
}

/// Earliest approaching contact of `rel(t) = rel0 + u t` with any lattice
/// image, for `t` in `[0, horizon]`.
///
/// The relative displacement is traversed cell by cell through the Voronoi
/// cells of `Z^D`; since `eps < 1/2` a contact with image `-n` can only happen
/// while `rel(t)` lies in the cell around `n`, so the first hit along the
/// traversal is the earliest.
pub fn earliest_image_contact<const D: usize>(
    rel0: &VecD<D>,
    u: &VecD<D>,
    eps: f64,
    horizon: f64,
) -> ContactPrediction<D> {
    let mut grazing = false;
    let mut cell = [0i64; D];
    let mut step = [0i64; D];
    let mut t_next = [f64::INFINITY; D];
    let mut t_delta = [f64::INFINITY; D];
    for k in 0..D {
        let s = rel0.0[k] + 0.5;
        let n = s.floor();
        cell[k] = n as i64;
        if u.0[k] > 0.0 {
            step[k] = 1;
            t_delta[k] = 1.0 / u.0[k];
            t_next[k] = (n + 1.0 - s) / u.0[k];
        } else if u.0[k] < 0.0 {
            step[k] = -1;
            t_delta[k] = -1.0 / u.0[k];
            t_next[k] = (n - s) / u.0[k];
        }
    }
    loop {
        let neg: [i64; D] = std::array::from_fn(|k| -cell[k]);
        let rel = rel0.shifted(&neg);
        match solve_contact(&rel, u, eps, horizon) {
            ContactSolve::Hit(t) => {
                let at = rel + *u * t;
                let omega = -(at * (1.0 / at.norm()));
                return ContactPrediction {
                    event: Some(ContactEvent {
                        time: t,
                        omega,
                        shift: neg,
                    }),
                    grazing,
                };
            }
            ContactSolve::Grazing => grazing = true,
            ContactSolve::Miss => {}
        }
        let mut axis = 0;
        for k in 1..D {
            if t_next[k] < t_next[axis] {
                axis = k;
            }
        }
        if !(t_next[axis] <= horizon) {
            return ContactPrediction {
                event: None,
                grazing,
            };
        }
        cell[axis] += step[axis];
        t_next[axis] += t_delta[axis];
    }
}

/// Earliest time in `(0, horizon]` at which the minimal-image distance of the
/// two particles reaches `eps` with approaching relative motion.
pub fn sphere_collision_time<const D: usize>(
    z1: &ParticleState<D>,
    z2: &ParticleState<D>,
    eps: f64,
    horizon: f64,
) -> Result<ContactPrediction<D>, GeometryError> {
    if !(horizon > 0.0) {
        return Err(GeometryError::InvalidHorizon(horizon));
    }
    let rel = minimal_image(&z1.x, &z2.x);
    let distance = rel.norm();
    if distance < eps - 1e-10 {
        return Err(GeometryError::Overlap { distance, eps });
    }
    let base = minimal_image_shift(&z1.x, &z2.x);
    let u = z2.v - z1.v;
    let mut pred = earliest_image_contact(&rel, &u, eps, horizon);
    if let Some(ev) = pred.event.as_mut() {
        for k in 0..D {
            ev.shift[k] += base[k];
        }
    }
    Ok(pred)
}

/// Elastic exchange of the normal velocity components along `omega`.
pub fn specular_reflect<const D: usize>(
    v_i: &VecD<D>,
    v_j: &VecD<D>,
    omega: &VecD<D>,
) -> Result<(VecD<D>, VecD<D>), GeometryError> {
    let norm = omega.norm();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(GeometryError::NonUnitOmega { norm });
    }
    Ok(reflect_unchecked(v_i, v_j, omega))
}

#[inline]
pub(crate) fn reflect_unchecked<const D: usize>(
    v_i: &VecD<D>,
    v_j: &VecD<D>,
    omega: &VecD<D>,
) -> (VecD<D>, VecD<D>) {
    let s = (*v_i - *v_j).dot(omega);
    (*v_i - *omega * s, *v_j + *omega * s)
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    std::f64::consts::PI.powf(h) / statrs::function::gamma::gamma(h + 1.0)
}

/// Surface area of the unit sphere `S^{d-1}`.
pub fn unit_sphere_area(d: usize) -> f64 {
    d as f64 * unit_ball_volume(d)
}

//! Pseudo-trajectories at positive diameter.
//!
//! Construction runs backward from the root at time `theta`, inserting one
//! fresh particle per creation and flowing all existing particles as hard
//! spheres in between. Collisions between pre-existing particles during that
//! flow are recollisions. The forward reconstruction inverts the map from
//! parameters to the terminal configuration when the collision order is
//! known. Positions inside a trajectory are unwrapped (lifted to `R^D`).

use num_rational::Ratio;
use rand::Rng;
use thiserror::Error;

use crate::cells::CellGrid;
use crate::dsu::UnionFind;
use crate::dynamics::TrajectoryLog;
use crate::fewbody::FewBody;
use crate::par::{self, Execution};
use crate::rng::stream_rng;
use crate::sampler::{Configuration, PolarGaussian};
use crate::stats::Moments;
use crate::torus::{minimal_image, reflect_unchecked, unit_sphere_area, ParticleState, VecD};
use crate::trees::{CollisionTree, CreationParams, Sign};

/// Backward recollision budget before a construction is abandoned.
pub const MAX_RECOLLISIONS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("creation {index}: fresh particle overlaps particle {other}")]
    Overlap { index: usize, other: usize },
    #[error("creation {index}: cross-section {cross_section} is not positive")]
    Hemisphere { index: usize, cross_section: f64 },
    #[error("more than {0} recollisions")]
    EventStorm(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("need 0 < delta <= tau <= theta")]
    Order,
    #[error("{0} is not an integer multiple")]
    NotDivisible(&'static str),
    #[error("cluster size bound must be at least 2")]
    Gamma,
    #[error("velocity cut-off must be positive")]
    Speed,
    #[error("trajectory horizon {traj} differs from schedule horizon {schedule}")]
    Mismatch { traj: f64, schedule: f64 },
}

/// Which of the two colliding particles keeps the parent label when a
/// creation is read forward as a collision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Survivor {
    #[default]
    Parent,
    Child,
}

/// Free flight of one particle on `[t_lo, t_hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment<const D: usize> {
    pub t_lo: f64,
    pub t_hi: f64,
    /// Unwrapped position at `t_hi`.
    pub x_hi: VecD<D>,
    pub v: VecD<D>,
}

impl<const D: usize> Segment<D> {
    pub fn position(&self, t: f64) -> VecD<D> {
        self.x_hi - self.v * (self.t_hi - t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CreationEvent<const D: usize> {
    pub index: usize,
    pub time: f64,
    pub parent: usize,
    pub child: usize,
    pub sign: Sign,
    pub omega: VecD<D>,
    /// Velocity of the fresh particle before any scattering.
    pub child_velocity: VecD<D>,
    /// Parent velocity at `t_i^+`.
    pub parent_velocity: VecD<D>,
    pub cross_section: f64,
    /// Unwrapped position of the fresh particle.
    pub position: VecD<D>,
}

/// Collision between pre-existing particles, in forward-time terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recollision<const D: usize> {
    pub time: f64,
    pub pair: (usize, usize),
    /// `x_p - x_q = eps * omega + zeta` at contact, unwrapped, for `pair = (p, q)`.
    pub omega: VecD<D>,
    pub zeta: [i64; D],
    pub pre: (VecD<D>, VecD<D>),
    pub post: (VecD<D>, VecD<D>),
}

impl<const D: usize> Recollision<D> {
    pub fn is_periodic(&self) -> bool {
        self.zeta.iter().any(|&z| z != 0)
    }

    pub fn involves(&self, p: usize) -> bool {
        self.pair.0 == p || self.pair.1 == p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoTrajectory<const D: usize> {
    pub theta: f64,
    pub eps: f64,
    pub tree: CollisionTree,
    pub params: CreationParams<D>,
    pub root: ParticleState<D>,
    /// Per particle, flights in decreasing time order.
    pub histories: Vec<Vec<Segment<D>>>,
    /// Time each particle enters the construction (`theta` for the root).
    pub births: Vec<f64>,
    pub creations: Vec<CreationEvent<D>>,
    /// Recollisions in construction order (decreasing time).
    pub recollisions: Vec<Recollision<D>>,
    pub terminal: Configuration<D>,
    pub terminal_unwrapped: Vec<VecD<D>>,
    pub grazing: u64,
}

impl<const D: usize> PseudoTrajectory<D> {
    pub fn particles(&self) -> usize {
        self.births.len()
    }

    pub fn exists_at(&self, p: usize, t: f64) -> bool {
        t <= self.births[p] && t >= 0.0
    }

    fn segment(&self, p: usize, t: f64) -> Option<&Segment<D>> {
        let h = &self.histories[p];
        h.iter()
            .find(|s| s.t_lo <= t && t < s.t_hi)
            .or_else(|| h.iter().find(|s| s.t_hi == t))
    }

    /// Unwrapped position of `p` at `t`, if it exists then.
    pub fn position(&self, p: usize, t: f64) -> Option<VecD<D>> {
        if !self.exists_at(p, t) {
            return None;
        }
        self.segment(p, t).map(|s| s.position(t))
    }

    /// Velocity of `p` on the flight that starts at `t` (right limit).
    pub fn velocity_after(&self, p: usize, t: f64) -> Option<VecD<D>> {
        if !self.exists_at(p, t) {
            return None;
        }
        self.segment(p, t).map(|s| s.v)
    }

    /// Particles present at time `t`.
    pub fn alive_at(&self, t: f64) -> Vec<usize> {
        (0..self.particles()).filter(|&p| self.exists_at(p, t)).collect()
    }

    /// Euclidean norm of the concatenated velocities present at `t`.
    pub fn speed_norm_at(&self, t: f64) -> f64 {
        self.alive_at(t)
            .into_iter()
            .filter_map(|p| self.velocity_after(p, t))
            .map(|v| v.norm2())
            .sum::<f64>()
            .sqrt()
    }
}

// Per-particle open flight: (t_hi, x at t_hi, forward velocity).
type Anchor<const D: usize> = (f64, VecD<D>, VecD<D>);

fn close_flight<const D: usize>(
    anchors: &mut [Anchor<D>],
    histories: &mut [Vec<Segment<D>>],
    fb: &FewBody<D>,
    p: usize,
    t: f64,
) {
    let (t_hi, x_hi, v) = anchors[p];
    histories[p].push(Segment {
        t_lo: t,
        t_hi,
        x_hi,
        v,
    });
    anchors[p] = (t, fb.x[p], -fb.v[p]);
}

/// Norm of the shortest lattice representative of `d`.
fn periodic_norm<const D: usize>(d: &VecD<D>) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        let c = d.0[k] - d.0[k].round();
        s += c * c;
    }
    s.sqrt()
}

/// Build the backward pseudo-trajectory of `z1` for one tree and parameter
/// set over `[0, theta]`.
///
/// With `eps = 0` particles are points and the flow between creations is
/// free transport.
pub fn build_backward<const D: usize>(
    z1: &ParticleState<D>,
    tree: &CollisionTree,
    params: &CreationParams<D>,
    eps: f64,
    theta: f64,
) -> Result<PseudoTrajectory<D>, BuildError> {
    if tree.n != 1 {
        return Err(BuildError::InvalidInput("pseudo-trajectories start from one particle".into()));
    }
    if !(0.0..0.5).contains(&eps) || !(theta > 0.0) {
        return Err(BuildError::InvalidInput(format!("eps = {eps}, theta = {theta}")));
    }
    params
        .validate(tree.m(), theta)
        .map_err(|e| BuildError::InvalidInput(e.to_string()))?;
    let m = tree.m();
    let mut fb = FewBody::new(eps);
    // The backward flow is run forward in s = theta - t with reversed velocities.
    fb.push(z1.x, -z1.v);
    let mut anchors: Vec<Anchor<D>> = vec![(theta, z1.x, z1.v)];
    let mut histories = vec![Vec::new()];
    let mut births = vec![theta];
    let mut creations = Vec::with_capacity(m);
    let mut recollisions = Vec::new();
    let mut s = 0.0;
    for i in 0..=m {
        let target = if i < m { theta - params.times[i] } else { theta };
        if eps > 0.0 {
            while let Some(c) = fb.next_contact(target - s) {
                if recollisions.len() >= MAX_RECOLLISIONS {
                    return Err(BuildError::EventStorm(MAX_RECOLLISIONS));
                }
                fb.drift(c.dt);
                s += c.dt;
                let t = theta - s;
                let (pre_b, post_b) = fb.reflect(&c);
                close_flight(&mut anchors, &mut histories, &fb, c.i, t);
                close_flight(&mut anchors, &mut histories, &fb, c.j, t);
                // Backward post-collision velocities are the forward pre-collision ones.
                recollisions.push(Recollision {
                    time: t,
                    pair: (c.i, c.j),
                    omega: c.omega,
                    zeta: c.shift,
                    pre: (-post_b.0, -post_b.1),
                    post: (-pre_b.0, -pre_b.1),
                });
            }
        }
        fb.drift(target - s);
        s = target;
        if i == m {
            break;
        }
        let t = params.times[i];
        let (a, sign) = tree.entries[i];
        let omega = params.omegas[i];
        let v_new = params.velocities[i];
        let v_a = -fb.v[a];
        let cs = omega.dot(&(v_new - v_a));
        if !(cs > 0.0) {
            return Err(BuildError::Hemisphere {
                index: i,
                cross_section: cs,
            });
        }
        let x_new = fb.x[a] + omega * (eps * sign.value());
        if eps > 0.0 {
            for other in 0..fb.x.len() {
                if other != a && periodic_norm(&(x_new - fb.x[other])) < eps {
                    return Err(BuildError::Overlap { index: i, other });
                }
            }
        }
        let child = fb.x.len();
        let v_child = match sign {
            Sign::Plus => {
                let (va, vc) = reflect_unchecked(&v_a, &v_new, &omega);
                fb.v[a] = -va;
                close_flight(&mut anchors, &mut histories, &fb, a, t);
                vc
            }
            Sign::Minus => v_new,
        };
        fb.push(x_new, -v_child);
        anchors.push((t, x_new, v_child));
        histories.push(Vec::new());
        births.push(t);
        creations.push(CreationEvent {
            index: i,
            time: t,
            parent: a,
            child,
            sign,
            omega,
            child_velocity: v_new,
            parent_velocity: v_a,
            cross_section: cs,
            position: x_new,
        });
    }
    for p in 0..fb.x.len() {
        close_flight(&mut anchors, &mut histories, &fb, p, 0.0);
    }
    let terminal = Configuration::new(
        (0..fb.x.len())
            .map(|p| ParticleState {
                x: fb.x[p].wrapped(),
                v: -fb.v[p],
            })
            .collect(),
        eps,
    );
    Ok(PseudoTrajectory {
        theta,
        eps,
        tree: tree.clone(),
        params: params.clone(),
        root: *z1,
        histories,
        births,
        creations,
        recollisions,
        terminal,
        terminal_unwrapped: fb.x.clone(),
        grazing: fb.grazing,
    })
}

/// All recollisions of a trajectory, each with its `(k, r)` window when a
/// schedule is given.
pub fn detect_recollisions<const D: usize>(
    traj: &PseudoTrajectory<D>,
    schedule: Option<&SamplingSchedule>,
) -> Vec<(Recollision<D>, Option<(usize, usize)>)> {
    traj.recollisions
        .iter()
        .map(|r| (*r, schedule.and_then(|s| s.window_of(r.time))))
        .collect()
}

/// Per-particle recollision budgets `kappa_i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecollisionIndexSet {
    pub budgets: Vec<u32>,
}

impl RecollisionIndexSet {
    /// Budgets equal to the recollision counts of `traj`.
    pub fn from_trajectory<const D: usize>(traj: &PseudoTrajectory<D>) -> Self {
        let mut budgets = vec![0; traj.particles()];
        for r in &traj.recollisions {
            budgets[r.pair.0] += 1;
            budgets[r.pair.1] += 1;
        }
        Self { budgets }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction<const D: usize> {
    /// Root state at time `theta`.
    pub root: ParticleState<D>,
    pub params: CreationParams<D>,
    pub recollisions: usize,
}

/// Run the forward flow from `z0` (particle `p` carries label `p`) and read
/// each collision as a creation of `tree`, latest creation first.
///
/// With `kappa`, a collision between two particles with positive remaining
/// budgets is a recollision instead and is scattered normally. Returns
/// `None` when the flow does not follow the tree.
pub fn forward_reconstruct<const D: usize>(
    z0: &Configuration<D>,
    tree: &CollisionTree,
    signs: &[(Sign, Survivor)],
    theta: f64,
    kappa: Option<&RecollisionIndexSet>,
) -> Option<Reconstruction<D>> {
    let m = tree.m();
    if tree.n != 1 || z0.len() != 1 + m || signs.len() != m {
        return None;
    }
    if signs.iter().enumerate().any(|(i, s)| s.0 != tree.sign(i)) {
        return None;
    }
    let eps = z0.eps;
    let mut fb = FewBody::new(eps);
    for p in &z0.particles {
        fb.push(p.x, p.v);
    }
    let mut budget = kappa.map(|k| k.budgets.clone());
    if budget.as_ref().is_some_and(|b| b.len() != z0.len()) {
        return None;
    }
    let mut params = CreationParams {
        times: vec![0.0; m],
        omegas: vec![VecD::zero(); m],
        velocities: vec![VecD::zero(); m],
    };
    let mut remaining = m;
    let mut recollisions = 0;
    let mut t = 0.0;
    while let Some(c) = fb.next_contact(theta - t) {
        fb.drift(c.dt);
        t += c.dt;
        if let Some(b) = budget.as_mut() {
            if b[c.i] > 0 && b[c.j] > 0 {
                b[c.i] -= 1;
                b[c.j] -= 1;
                fb.reflect(&c);
                recollisions += 1;
                if recollisions > MAX_RECOLLISIONS {
                    return None;
                }
                continue;
            }
        }
        if remaining == 0 {
            return None;
        }
        let i = remaining - 1;
        let a = tree.parent(i);
        let child = 1 + i;
        if (c.i, c.j) != (a.min(child), a.max(child)) {
            return None;
        }
        // Unit vector from the parent to the colliding image of the child.
        let mut u = if c.i == a { -c.omega } else { c.omega };
        if signs[i].1 == Survivor::Child {
            fb.x.swap(a, child);
            fb.v.swap(a, child);
            u = -u;
        }
        let (omega, v_new) = match signs[i].0 {
            Sign::Minus => (-u, fb.v[child]),
            Sign::Plus => {
                let (va, vc) = reflect_unchecked(&fb.v[a], &fb.v[child], &u);
                fb.v[a] = va;
                (u, vc)
            }
        };
        params.times[i] = t;
        params.omegas[i] = omega;
        params.velocities[i] = v_new;
        fb.active[child] = false;
        remaining -= 1;
    }
    if remaining != 0 {
        return None;
    }
    fb.drift(theta - t);
    Some(Reconstruction {
        root: ParticleState {
            x: fb.x[0].wrapped(),
            v: fb.v[0],
        },
        params,
        recollisions,
    })
}

/// Pruning schedule: horizon `theta` cut into `K` steps of length `tau`,
/// each cut into `R` windows of length `delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingSchedule {
    pub theta: Ratio<i64>,
    pub tau: Ratio<i64>,
    pub delta: Ratio<i64>,
    pub gamma: usize,
    pub v_max: f64,
}

impl SamplingSchedule {
    pub fn new(
        theta: Ratio<i64>,
        tau: Ratio<i64>,
        delta: Ratio<i64>,
        gamma: usize,
        v_max: f64,
    ) -> Result<Self, ScheduleError> {
        let zero = Ratio::from_integer(0);
        if !(delta > zero && delta <= tau && tau <= theta) {
            return Err(ScheduleError::Order);
        }
        if !(theta / tau).is_integer() {
            return Err(ScheduleError::NotDivisible("theta / tau"));
        }
        if !(tau / delta).is_integer() {
            return Err(ScheduleError::NotDivisible("tau / delta"));
        }
        if gamma < 2 {
            return Err(ScheduleError::Gamma);
        }
        if !(v_max > 0.0) {
            return Err(ScheduleError::Speed);
        }
        Ok(Self {
            theta,
            tau,
            delta,
            gamma,
            v_max,
        })
    }

    pub fn k_steps(&self) -> usize {
        (self.theta / self.tau).to_integer() as usize
    }

    pub fn r_windows(&self) -> usize {
        (self.tau / self.delta).to_integer() as usize
    }

    pub fn theta_f64(&self) -> f64 {
        ratio_f64(self.theta)
    }

    pub fn tau_f64(&self) -> f64 {
        ratio_f64(self.tau)
    }

    pub fn delta_f64(&self) -> f64 {
        ratio_f64(self.delta)
    }

    /// Chain radius `2 V delta` of a microscopic cluster.
    pub fn cluster_radius(&self) -> f64 {
        2.0 * self.v_max * self.delta_f64()
    }

    /// Upper end `theta - (k-1) tau - (r-1) delta` of window `(k, r)`.
    pub fn window_top(&self, k: usize, r: usize) -> f64 {
        let t = self.theta
            - self.tau * Ratio::from_integer(k as i64 - 1)
            - self.delta * Ratio::from_integer(r as i64 - 1);
        ratio_f64(t)
    }

    /// Window `(k, r)` containing time `t`, both 1-based.
    pub fn window_of(&self, t: f64) -> Option<(usize, usize)> {
        let theta = self.theta_f64();
        if !(t >= 0.0 && t <= theta) {
            return None;
        }
        let back = theta - t;
        let k = ((back / self.tau_f64()).floor() as usize + 1).min(self.k_steps());
        let within = back - (k - 1) as f64 * self.tau_f64();
        let r = ((within / self.delta_f64()).floor() as usize + 1).min(self.r_windows());
        Some((k, r))
    }

    /// Scheduled times `theta - (k-1) tau - r delta`, in `(k, r)` order.
    pub fn scheduled_times(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.k_steps() * self.r_windows());
        for k in 1..=self.k_steps() {
            for r in 1..=self.r_windows() {
                out.push((k, r, self.window_top(k, r + 1)));
            }
        }
        out
    }
}

fn ratio_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrajectoryClass {
    Main,
    Exp { k: usize },
    Rec { k: usize, r: usize },
    Vel { k: usize, r: usize },
    ClustViolation { k: usize, r: usize },
}

/// Apply the stopping rules step by step, latest step first.
///
/// Within step `k` a recollision stops the expansion at its first
/// `delta`-window (split by the speed cut-off at the window's lower end);
/// otherwise more than `2^k` creations in the step stop it as `Exp`. A
/// trajectory that survives every step is checked for clusters larger than
/// `gamma` among its particles at the scheduled times.
pub fn classify<const D: usize>(
    traj: &PseudoTrajectory<D>,
    schedule: &SamplingSchedule,
) -> Result<TrajectoryClass, ScheduleError> {
    let theta = schedule.theta_f64();
    if (traj.theta - theta).abs() > 1e-12 {
        return Err(ScheduleError::Mismatch {
            traj: traj.theta,
            schedule: theta,
        });
    }
    let delta = schedule.delta_f64();
    for k in 1..=schedule.k_steps() {
        let hi = schedule.window_top(k, 1);
        let lo = schedule.window_top(k + 1, 1);
        let latest = traj
            .recollisions
            .iter()
            .map(|r| r.time)
            .filter(|&t| t > lo && t <= hi)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));
        if let Some(t_rec) = latest {
            let r = (((hi - t_rec) / delta).floor() as usize + 1).min(schedule.r_windows());
            let t_stop = hi - r as f64 * delta;
            return Ok(if traj.speed_norm_at(t_stop) > schedule.v_max {
                TrajectoryClass::Vel { k, r }
            } else {
                TrajectoryClass::Rec { k, r }
            });
        }
        let n_k = traj.creations.iter().filter(|c| c.time > lo && c.time <= hi).count();
        if n_k > 1usize << k.min(63) {
            return Ok(TrajectoryClass::Exp { k });
        }
    }
    let radius = schedule.cluster_radius();
    for (k, r, t) in schedule.scheduled_times() {
        let alive = traj.alive_at(t);
        let xs: Vec<VecD<D>> = alive
            .iter()
            .filter_map(|&p| traj.position(p, t))
            .map(|x| x.wrapped())
            .collect();
        if cluster_components(&xs, radius).iter().any(|c| c.len() > schedule.gamma) {
            return Ok(TrajectoryClass::ClustViolation { k, r });
        }
    }
    Ok(TrajectoryClass::Main)
}

/// Connected components of the graph joining points within `radius`
/// (minimal-image distance).
pub fn cluster_components<const D: usize>(xs: &[VecD<D>], radius: f64) -> Vec<Vec<usize>> {
    let n = xs.len();
    let mut uf = UnionFind::new(n);
    let mut grid = CellGrid::<D>::new(radius, 64);
    for (i, x) in xs.iter().enumerate() {
        grid.insert(i, grid.cell_of(x));
    }
    for (i, x) in xs.iter().enumerate() {
        grid.for_each_near(x, |j| {
            if j > i && minimal_image(x, &xs[j]).norm() <= radius {
                uf.union(i, j);
            }
        });
    }
    uf.groups()
}

pub fn detect_clusters<const D: usize>(config: &Configuration<D>, radius: f64) -> Vec<Vec<usize>> {
    let xs: Vec<VecD<D>> = config.particles.iter().map(|p| p.x).collect();
    cluster_components(&xs, radius)
}

/// Whether every cluster at every scheduled time of the run has at most
/// `gamma` members.
pub fn upsilon_membership<const D: usize>(
    log: &TrajectoryLog<D>,
    schedule: &SamplingSchedule,
    gamma: usize,
) -> bool {
    let mut times: Vec<f64> = schedule.scheduled_times().into_iter().map(|s| s.2).collect();
    times.sort_by(f64::total_cmp);
    let radius = schedule.cluster_radius();
    log.states_at(&times)
        .iter()
        .all(|c| detect_clusters(c, radius).iter().all(|g| g.len() <= gamma))
}

/// The bound `theta (gamma V)^(d gamma) mu^(gamma+1) delta^(d gamma - 1)` on
/// the probability of leaving the cluster-restricted set.
pub fn upsilon_complement_bound(d: usize, schedule: &SamplingSchedule, mu: f64) -> f64 {
    let g = schedule.gamma as f64;
    let dg = (d * schedule.gamma) as f64;
    schedule.theta_f64()
        * (g * schedule.v_max).powf(dg)
        * mu.powf(g + 1.0)
        * schedule.delta_f64().powf(dg - 1.0)
}

/// Collision examined by [`recollision_geometry_probe`]: either a
/// recollision or a creation read forward as a collision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeEvent {
    Recollision(usize),
    Creation(usize),
}

/// Last change of the pair's relative motion before the probed collision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Deflection {
    Creation(usize),
    Recollision(usize),
    /// No deflection after time 0.
    Start,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryRecord<const D: usize> {
    pub time: f64,
    pub pair: (usize, usize),
    pub deflection: Deflection,
    pub deflection_time: f64,
    /// Lattice vector of the contact relative to the deflecting contact when
    /// that one involves both particles.
    pub zeta: [i64; D],
    pub periodic: bool,
    pub relative_speed: f64,
    pub flight_distance: f64,
    /// Angle between the relative velocity and the lattice target.
    pub cone_angle: f64,
    /// `asin(min(1, 2 eps / flight_distance))`.
    pub cap_angle: f64,
    pub in_cap: bool,
}

/// Geometry of the free flight that ends in the given collision: the pair
/// `(q, q')`, the latest deflection of either one below its time, the lattice
/// vector, the cone opening of `v_q - v_q'` around the target displacement.
pub fn recollision_geometry_probe<const D: usize>(
    traj: &PseudoTrajectory<D>,
    event: ProbeEvent,
) -> Option<GeometryRecord<D>> {
    // (time, q, q', zeta of the contact in unwrapped coordinates)
    let (t_rec, q, qp, zeta_rec, skip) = match event {
        ProbeEvent::Recollision(i) => {
            let r = traj.recollisions.get(i)?;
            (r.time, r.pair.0, r.pair.1, r.zeta, Some(i))
        }
        ProbeEvent::Creation(i) => {
            let c = traj.creations.get(i)?;
            (c.time, c.parent, c.child, [0i64; D], None)
        }
    };
    let mut best: Option<(f64, Deflection, Option<[i64; D]>)> = None;
    let mut consider = |t: f64, d: Deflection, both: Option<[i64; D]>| {
        if t < t_rec && best.as_ref().is_none_or(|b| t > b.0) {
            best = Some((t, d, both));
        }
    };
    for (i, r) in traj.recollisions.iter().enumerate() {
        if Some(i) == skip || !(r.involves(q) || r.involves(qp)) {
            continue;
        }
        let both = (r.involves(q) && r.involves(qp)).then(|| {
            // Orient as x_q - x_q'.
            if r.pair.0 == q {
                r.zeta
            } else {
                r.zeta.map(|z| -z)
            }
        });
        consider(r.time, Deflection::Recollision(i), both);
    }
    for c in &traj.creations {
        let deflects = (c.parent == q || c.parent == qp) && c.sign == Sign::Plus;
        if deflects {
            consider(c.time, Deflection::Creation(c.index), None);
        }
    }
    let (t_j, deflection, zeta_j) = best.unwrap_or((0.0, Deflection::Start, None));
    let oriented_rec = match event {
        ProbeEvent::Recollision(_) => zeta_rec,
        ProbeEvent::Creation(_) => [0i64; D],
    };
    let zeta: [i64; D] = match zeta_j {
        Some(zj) => std::array::from_fn(|k| oriented_rec[k] - zj[k]),
        None => oriented_rec,
    };
    let r_j = traj.position(q, t_j)? - traj.position(qp, t_j)?;
    let u = traj.velocity_after(q, t_j)? - traj.velocity_after(qp, t_j)?;
    let target = VecD(oriented_rec.map(|z| z as f64)) - r_j;
    let flight = u.norm() * (t_rec - t_j);
    let cos = (u.dot(&target) / (u.norm() * target.norm())).clamp(-1.0, 1.0);
    let cone_angle = cos.acos();
    let cap_angle = (2.0 * traj.eps / flight).min(1.0).asin();
    Some(GeometryRecord {
        time: t_rec,
        pair: (q, qp),
        deflection,
        deflection_time: t_j,
        zeta,
        periodic: zeta.iter().any(|&z| z != 0),
        relative_speed: u.norm(),
        flight_distance: flight,
        cone_angle,
        cap_angle,
        in_cap: cone_angle <= cap_angle + 1e-12,
    })
}

/// Law of the root and fresh velocities in Monte Carlo studies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VelocityLaw<const D: usize> {
    Maxwellian,
    /// Gaussian multiples of one fixed unit direction.
    Parallel(VecD<D>),
}

impl<const D: usize> VelocityLaw<D> {
    pub fn draw<R: Rng + ?Sized>(&self, g: &mut PolarGaussian, rng: &mut R) -> VecD<D> {
        match self {
            VelocityLaw::Maxwellian => g.maxwellian(rng),
            VelocityLaw::Parallel(e) => *e * g.sample(rng),
        }
    }
}

pub fn uniform_sphere<const D: usize, R: Rng + ?Sized>(g: &mut PolarGaussian, rng: &mut R) -> VecD<D> {
    loop {
        let w: VecD<D> = g.maxwellian(rng);
        let n = w.norm();
        if n > 1e-12 {
            return w * (1.0 / n);
        }
    }
}

/// Draw creation parameters: times uniform on the descending simplex of
/// `(0, theta)`, directions uniform on the sphere, velocities from `law`.
/// Returns the parameters and the total mass `theta^m / m! |S|^m` of the
/// reference measure.
pub fn sample_creation_params<const D: usize, R: Rng + ?Sized>(
    m: usize,
    theta: f64,
    law: &VelocityLaw<D>,
    g: &mut PolarGaussian,
    rng: &mut R,
) -> (CreationParams<D>, f64) {
    let mut times: Vec<f64> = (0..m).map(|_| theta * rng.random::<f64>()).collect();
    times.sort_by(|a, b| b.total_cmp(a));
    let omegas = (0..m).map(|_| uniform_sphere(g, rng)).collect();
    let velocities = (0..m).map(|_| law.draw(g, rng)).collect();
    let mut mass = unit_sphere_area(D).powi(m as i32);
    for i in 1..=m {
        mass *= theta / i as f64;
    }
    (
        CreationParams {
            times,
            omegas,
            velocities,
        },
        mass,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecollisionKind {
    /// `zeta = 0`.
    Direct,
    /// `zeta != 0`.
    Periodic,
    Any,
}

impl RecollisionKind {
    pub fn matches<const D: usize>(self, r: &Recollision<D>) -> bool {
        match self {
            RecollisionKind::Direct => !r.is_periodic(),
            RecollisionKind::Periodic => r.is_periodic(),
            RecollisionKind::Any => true,
        }
    }
}

/// Tree, horizon and sampling law for a recollision-measure study.
#[derive(Clone, Debug, PartialEq)]
pub struct RecollisionRegime<const D: usize> {
    pub tree: CollisionTree,
    pub theta: f64,
    pub kind: RecollisionKind,
    /// Samples whose concatenated velocity norm exceeds this are dropped.
    pub v_max: Option<f64>,
    pub velocities: VelocityLaw<D>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
    pub hits: usize,
    /// Relative standard error above 50%.
    pub underpowered: bool,
}

impl MeasureEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let m = Moments::from_slice(values);
        let value = m.mean();
        let stderr = m.stderr();
        Self {
            value,
            stderr,
            samples: values.len(),
            hits: values.iter().filter(|&&v| v != 0.0).count(),
            underpowered: !(stderr <= 0.5 * value.abs()),
        }
    }
}

/// One Monte Carlo term of the recollision measure: the cross-section
/// weighted indicator that the first recollision has the requested kind.
pub fn recollision_sample<const D: usize, R: Rng + ?Sized>(
    eps: f64,
    regime: &RecollisionRegime<D>,
    rng: &mut R,
) -> f64 {
    let mut g = PolarGaussian::default();
    let x: [f64; D] = std::array::from_fn(|_| rng.random::<f64>());
    let v1 = regime.velocities.draw(&mut g, rng);
    let (params, mass) = sample_creation_params(regime.tree.m(), regime.theta, &regime.velocities, &mut g, rng);
    if let Some(vmax) = regime.v_max {
        let speed2 = v1.norm2() + params.velocities.iter().map(|v| v.norm2()).sum::<f64>();
        if speed2 > vmax * vmax {
            return 0.0;
        }
    }
    let root = ParticleState { x: VecD(x), v: v1 };
    match build_backward(&root, &regime.tree, &params, eps, regime.theta) {
        Ok(traj) => match traj.recollisions.first() {
            Some(r) if regime.kind.matches(r) => {
                mass * traj.creations.iter().map(|c| c.cross_section).product::<f64>()
            }
            _ => 0.0,
        },
        Err(_) => 0.0,
    }
}

/// Monte Carlo measure of the creation parameters whose pseudo-trajectory
/// has a first recollision of the requested kind.
pub fn estimate_recollision_measure<const D: usize>(
    eps: f64,
    regime: &RecollisionRegime<D>,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> MeasureEstimate {
    let values = par::map_range(exec, samples, |i| {
        let mut rng = stream_rng(seed, i as u64);
        recollision_sample(eps, regime, &mut rng)
    });
    MeasureEstimate::from_values(&values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetReport {
    pub windows: usize,
    /// Largest number of collisions of one particle within one window.
    pub max_per_particle: usize,
    /// `histogram[c]` counts windows whose busiest particle had `c` collisions.
    pub histogram: Vec<usize>,
    pub alarm: bool,
}

/// Draw a chain cluster of `gamma` non-overlapping spheres with consecutive
/// gaps at most `radius`, and velocities with concatenated norm at most
/// `v_max`.
pub fn sample_cluster<const D: usize, R: Rng + ?Sized>(
    gamma: usize,
    eps: f64,
    radius: f64,
    v_max: f64,
    g: &mut PolarGaussian,
    rng: &mut R,
) -> (Vec<VecD<D>>, Vec<VecD<D>>) {
    let mut xs: Vec<VecD<D>> = Vec::with_capacity(gamma);
    let x0: [f64; D] = std::array::from_fn(|_| rng.random::<f64>());
    xs.push(VecD(x0));
    while xs.len() < gamma {
        let anchor = xs[rng.random_range(0..xs.len())];
        let dist = eps + (radius - eps) * rng.random::<f64>();
        let cand = anchor + uniform_sphere(g, rng) * dist;
        if xs.iter().all(|y| (cand - *y).norm() >= eps) {
            xs.push(cand);
        }
    }
    loop {
        let vs: Vec<VecD<D>> = (0..gamma).map(|_| g.maxwellian(rng)).collect();
        if vs.iter().map(|v| v.norm2()).sum::<f64>() <= v_max * v_max {
            return (xs, vs);
        }
    }
}

/// Collision counts of `gamma`-particle clusters over windows of length
/// `delta`, against an empirical `budget`.
#[allow(clippy::too_many_arguments)]
pub fn recollision_budget_probe<const D: usize>(
    gamma: usize,
    eps: f64,
    v_max: f64,
    delta: f64,
    windows: usize,
    budget: usize,
    seed: u64,
    exec: Execution,
) -> BudgetReport {
    let radius = 2.0 * v_max * delta;
    let counts = par::map_range(exec, windows, |w| {
        let mut rng = stream_rng(seed, w as u64);
        let mut g = PolarGaussian::default();
        let (xs, vs) = sample_cluster::<D, _>(gamma, eps, radius, v_max, &mut g, &mut rng);
        let mut fb = FewBody::new(eps);
        for (x, v) in xs.into_iter().zip(vs) {
            fb.push(x, v);
        }
        let mut per = vec![0usize; gamma];
        let limit = 100 * budget.max(1);
        let _ = fb.run(delta, limit, |_, c, _, _| {
            per[c.i] += 1;
            per[c.j] += 1;
        });
        per.into_iter().max().unwrap_or(0)
    });
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut histogram = vec![0usize; max + 1];
    for c in counts {
        histogram[c] += 1;
    }
    BudgetReport {
        windows,
        max_per_particle: max,
        histogram,
        alarm: max > budget,
    }
}

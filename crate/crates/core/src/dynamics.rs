//! Event-driven hard-sphere dynamics on the torus.
//!
//! Particles fly freely and reflect specularly at contact. Contacts are
//! predicted pairwise and kept in a binary heap; stale predictions are
//! discarded through per-particle collision counters. A cell grid bounds the
//! set of candidate partners, and cell-crossing events keep it current.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::sampler::Configuration;
use crate::torus::{minimal_image, reflect_unchecked, solve_contact, wrap_unit, ContactSolve, ParticleState, VecD};

/// Events closer than this in time are ordered by pair index.
pub const TIE_WINDOW: f64 = 1e-12;
/// Tolerated undershoot of the contact distance.
pub const OVERLAP_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("overlap at t={time}: pair {pair:?} at distance {distance}")]
    Overlap {
        time: f64,
        pair: (usize, usize),
        distance: f64,
    },
    #[error("event storm: more than {limit} collisions before t={time}")]
    EventStorm { limit: u64, time: f64 },
    #[error("invalid request: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionRecord<const D: usize> {
    pub time: f64,
    pub pair: (usize, usize),
    /// Unit vector from the second particle of `pair` to the first.
    pub omega: VecD<D>,
    pub pre: (VecD<D>, VecD<D>),
    pub post: (VecD<D>, VecD<D>),
}

/// Initial configuration plus the ordered collisions of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog<const D: usize> {
    pub initial: Configuration<D>,
    pub records: Vec<CollisionRecord<D>>,
    pub final_time: f64,
}

impl<const D: usize> TrajectoryLog<D> {
    /// Replay the log up to time `t`.
    pub fn state_at(&self, t: f64) -> Configuration<D> {
        self.states_at(&[t]).pop().expect("one time requested")
    }

    /// Replay the log once, capturing the state at each (sorted) time.
    pub fn states_at(&self, times: &[f64]) -> Vec<Configuration<D>> {
        let mut xs: Vec<VecD<D>> = self.initial.particles.iter().map(|p| p.x).collect();
        let mut vs: Vec<VecD<D>> = self.initial.particles.iter().map(|p| p.v).collect();
        let mut last = vec![0.0; xs.len()];
        let mut out = Vec::with_capacity(times.len());
        let mut r = 0;
        for &t in times {
            while r < self.records.len() && self.records[r].time <= t {
                let rec = &self.records[r];
                for (p, v) in [(rec.pair.0, rec.post.0), (rec.pair.1, rec.post.1)] {
                    xs[p] = (xs[p] + vs[p] * (rec.time - last[p])).wrapped();
                    last[p] = rec.time;
                    vs[p] = v;
                }
                r += 1;
            }
            let particles = (0..xs.len())
                .map(|i| ParticleState {
                    x: (xs[i] + vs[i] * (t - last[i])).wrapped(),
                    v: vs[i],
                })
                .collect();
            out.push(Configuration::new(particles, self.initial.eps));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    /// Collision budget before an event-storm fault.
    pub max_events: u64,
    pub record: bool,
    /// Cells per side; `None` picks about one particle per cell.
    pub cells_per_side: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            max_events: 10_000_000,
            record: true,
            cells_per_side: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimStats {
    pub collisions: u64,
    pub crossings: u64,
    pub grazing: u64,
    /// Largest `|distance - eps|` seen at a collision.
    pub max_contact_error: f64,
}

#[derive(Clone, Copy, Debug)]
enum Kind<const D: usize> {
    Pair { j: usize, ci: u64, cj: u64 },
    Cross { axis: usize, up: bool, c: u64 },
}

#[derive(Clone, Copy, Debug)]
struct Event<const D: usize> {
    time: f64,
    i: usize,
    kind: Kind<D>,
}

impl<const D: usize> Event<D> {
    fn pair_key(&self) -> (usize, usize) {
        match self.kind {
            Kind::Pair { j, .. } => (self.i.min(j), self.i.max(j)),
            Kind::Cross { .. } => (self.i, usize::MAX),
        }
    }
}

impl<const D: usize> PartialEq for Event<D> {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl<const D: usize> Eq for Event<D> {}
impl<const D: usize> PartialOrd for Event<D> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<const D: usize> Ord for Event<D> {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, o: &Self) -> Ordering {
        o.time
            .total_cmp(&self.time)
            .then_with(|| o.pair_key().cmp(&self.pair_key()))
    }
}

#[derive(Clone, Copy, Debug)]
struct Body<const D: usize> {
    /// Position at time `t`; consistent with `cell` up to rounding.
    x: VecD<D>,
    v: VecD<D>,
    t: f64,
    cell: [usize; D],
    count: u64,
}

/// Event-driven hard-sphere simulator.
#[derive(Clone, Debug)]
pub struct EventDrivenSim<const D: usize> {
    eps: f64,
    n: usize,
    bodies: Vec<Body<D>>,
    cells: Vec<Vec<usize>>,
    queue: BinaryHeap<Event<D>>,
    now: f64,
    opts: SimOptions,
    stats: SimStats,
    records: Vec<CollisionRecord<D>>,
}

impl<const D: usize> EventDrivenSim<D> {
    pub fn new(config: &Configuration<D>, opts: SimOptions) -> Result<Self, DynamicsError> {
        let eps = config.eps;
        if !(0.0..0.5).contains(&eps) {
            return Err(DynamicsError::InvalidInput(format!("eps {eps}")));
        }
        if let Some(d) = config.min_pair_distance() {
            if d < eps - OVERLAP_TOLERANCE {
                return Err(DynamicsError::Overlap {
                    time: 0.0,
                    pair: closest_pair(config),
                    distance: d,
                });
            }
        }
        let np = config.len();
        let fit = if eps > 0.0 { (1.0 / eps).floor() as usize } else { usize::MAX };
        let auto = (np.max(1) as f64).powf(1.0 / D as f64).round() as usize;
        let n = opts.cells_per_side.unwrap_or(auto).min(fit).max(1);
        let mut sim = Self {
            eps,
            n,
            bodies: Vec::with_capacity(np),
            cells: vec![Vec::new(); n.pow(D as u32)],
            queue: BinaryHeap::new(),
            now: 0.0,
            opts,
            stats: SimStats::default(),
            records: Vec::new(),
        };
        for (id, p) in config.particles.iter().enumerate() {
            let x = p.x.wrapped();
            let cell = std::array::from_fn(|k| ((x.0[k] * n as f64) as usize).min(n - 1));
            sim.bodies.push(Body {
                x,
                v: p.v,
                t: 0.0,
                cell,
                count: 0,
            });
            let l = sim.linear(&cell);
            sim.cells[l].push(id);
        }
        for i in 0..np {
            sim.predict_crossing(i);
            sim.predict_pairs(i, true);
        }
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.now
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    pub fn cells_per_side(&self) -> usize {
        self.n
    }

    pub fn take_records(&mut self) -> Vec<CollisionRecord<D>> {
        std::mem::take(&mut self.records)
    }

    fn linear(&self, c: &[usize; D]) -> usize {
        let mut idx = 0;
        for k in (0..D).rev() {
            idx = idx * self.n + c[k];
        }
        idx
    }

    fn position_at(&self, i: usize, t: f64) -> VecD<D> {
        let b = &self.bodies[i];
        b.x + b.v * (t - b.t)
    }

    fn advance_body(&mut self, i: usize, t: f64) {
        let b = &mut self.bodies[i];
        b.x += b.v * (t - b.t);
        b.t = t;
    }

    /// Predict contacts of `i` with every particle in the adjacent cells.
    /// With `only_higher`, partners with a smaller index are skipped (used at
    /// start-up so each pair is predicted once).
    fn predict_pairs(&mut self, i: usize, only_higher: bool) {
        let now = self.now;
        let xi = self.position_at(i, now);
        let vi = self.bodies[i].v;
        let ci = self.bodies[i].cell;
        let n = self.n as i64;
        for off in 0..3usize.pow(D as u32) {
            let mut rem = off;
            let mut cc = [0usize; D];
            let mut shift = [0f64; D];
            for k in 0..D {
                let o = (rem % 3) as i64 - 1;
                rem /= 3;
                let u = ci[k] as i64 + o;
                let w = u.rem_euclid(n);
                cc[k] = w as usize;
                // Neighbor cell `w` seen through the boundary sits at `u`.
                shift[k] = ((u - w) / n) as f64;
            }
            let l = self.linear(&cc);
            for idx in 0..self.cells[l].len() {
                let j = self.cells[l][idx];
                if j == i || (only_higher && j < i) {
                    continue;
                }
                let mut rel = self.position_at(j, now) - xi;
                for k in 0..D {
                    rel.0[k] += shift[k];
                }
                let u = self.bodies[j].v - vi;
                match solve_contact(&rel, &u, self.eps, f64::INFINITY) {
                    ContactSolve::Hit(dt) => self.queue.push(Event {
                        time: now + dt,
                        i,
                        kind: Kind::Pair {
                            j,
                            ci: self.bodies[i].count,
                            cj: self.bodies[j].count,
                        },
                    }),
                    ContactSolve::Grazing => self.stats.grazing += 1,
                    ContactSolve::Miss => {}
                }
            }
        }
    }

    fn predict_crossing(&mut self, i: usize) {
        let b = self.bodies[i];
        let n = self.n as f64;
        let mut best: Option<(f64, usize, bool)> = None;
        for k in 0..D {
            let (dt, up) = if b.v.0[k] > 0.0 {
                (((b.cell[k] + 1) as f64 / n - b.x.0[k]) / b.v.0[k], true)
            } else if b.v.0[k] < 0.0 {
                ((b.cell[k] as f64 / n - b.x.0[k]) / b.v.0[k], false)
            } else {
                continue;
            };
            let dt = dt.max(0.0);
            if best.is_none_or(|(t, _, _)| dt < t) {
                best = Some((dt, k, up));
            }
        }
        if let Some((dt, axis, up)) = best {
            self.queue.push(Event {
                time: b.t + dt,
                i,
                kind: Kind::Cross { axis, up, c: b.count },
            });
        }
    }

    fn is_valid(&self, e: &Event<D>) -> bool {
        match e.kind {
            Kind::Pair { j, ci, cj } => self.bodies[e.i].count == ci && self.bodies[j].count == cj,
            Kind::Cross { c, .. } => self.bodies[e.i].count == c,
        }
    }

    /// Pop the next valid event; among valid collisions within
    /// [`TIE_WINDOW`] of it, the lexicographically smallest pair goes first.
    fn next_event(&mut self, t_end: f64) -> Option<Event<D>> {
        let first = loop {
            let e = *self.queue.peek()?;
            if e.time > t_end {
                return None;
            }
            self.queue.pop();
            if self.is_valid(&e) {
                break e;
            }
        };
        if matches!(first.kind, Kind::Cross { .. }) {
            return Some(first);
        }
        let mut held = Vec::new();
        let mut best = first;
        while let Some(e) = self.queue.peek().copied() {
            if e.time > first.time + TIE_WINDOW {
                break;
            }
            self.queue.pop();
            if !self.is_valid(&e) {
                continue;
            }
            if matches!(e.kind, Kind::Pair { .. }) && e.pair_key() < best.pair_key() {
                held.push(best);
                best = e;
            } else {
                held.push(e);
            }
        }
        self.queue.extend(held);
        Some(best)
    }

    /// Run the flow up to time `t`.
    pub fn advance_to(&mut self, t: f64) -> Result<(), DynamicsError> {
        if !(t >= self.now) {
            return Err(DynamicsError::InvalidInput(format!(
                "cannot advance from {} back to {t}",
                self.now
            )));
        }
        while let Some(e) = self.next_event(t) {
            self.now = e.time.max(self.now);
            match e.kind {
                Kind::Cross { axis, up, .. } => self.cross(e.i, axis, up),
                Kind::Pair { j, .. } => self.collide(e.i, j)?,
            }
        }
        self.now = t;
        Ok(())
    }

    fn cross(&mut self, i: usize, axis: usize, up: bool) {
        self.stats.crossings += 1;
        let now = self.now;
        self.advance_body(i, now);
        let n = self.n;
        let old = self.bodies[i].cell;
        let mut cell = old;
        let b = &mut self.bodies[i];
        if up {
            cell[axis] = (old[axis] + 1) % n;
            b.x.0[axis] = (old[axis] + 1) as f64 / n as f64;
            if cell[axis] == 0 {
                b.x.0[axis] = 0.0;
            }
        } else {
            b.x.0[axis] = old[axis] as f64 / n as f64;
            if old[axis] == 0 {
                cell[axis] = n - 1;
                b.x.0[axis] = 1.0;
            } else {
                cell[axis] = old[axis] - 1;
            }
        }
        b.cell = cell;
        let lo = self.linear(&old);
        let ln = self.linear(&cell);
        if let Some(p) = self.cells[lo].iter().position(|&j| j == i) {
            self.cells[lo].swap_remove(p);
        }
        self.cells[ln].push(i);
        self.predict_pairs(i, false);
        self.predict_crossing(i);
    }

    fn collide(&mut self, i: usize, j: usize) -> Result<(), DynamicsError> {
        let now = self.now;
        self.stats.collisions += 1;
        if self.stats.collisions > self.opts.max_events {
            return Err(DynamicsError::EventStorm {
                limit: self.opts.max_events,
                time: now,
            });
        }
        self.advance_body(i, now);
        self.advance_body(j, now);
        let rel = minimal_image(&self.bodies[i].x, &self.bodies[j].x);
        let dist = rel.norm();
        if dist < self.eps - OVERLAP_TOLERANCE {
            return Err(DynamicsError::Overlap {
                time: now,
                pair: (i, j),
                distance: dist,
            });
        }
        self.stats.max_contact_error = self.stats.max_contact_error.max((dist - self.eps).abs());
        let omega = -(rel * (1.0 / dist));
        let pre = (self.bodies[i].v, self.bodies[j].v);
        let post = reflect_unchecked(&pre.0, &pre.1, &omega);
        self.bodies[i].v = post.0;
        self.bodies[j].v = post.1;
        self.bodies[i].count += 1;
        self.bodies[j].count += 1;
        if self.opts.record {
            self.records.push(CollisionRecord {
                time: now,
                pair: (i, j),
                omega,
                pre,
                post,
            });
        }
        for p in [i, j] {
            self.predict_pairs(p, false);
            self.predict_crossing(p);
        }
        Ok(())
    }

    /// Current state with positions reduced into `[0, 1)`.
    pub fn state(&self) -> Configuration<D> {
        let particles = (0..self.bodies.len())
            .map(|i| {
                let mut x = self.position_at(i, self.now);
                for c in x.0.iter_mut() {
                    *c = wrap_unit(*c);
                }
                ParticleState { x, v: self.bodies[i].v }
            })
            .collect();
        Configuration::new(particles, self.eps)
    }
}

fn closest_pair<const D: usize>(config: &Configuration<D>) -> (usize, usize) {
    let mut best = (f64::INFINITY, (0, 0));
    for i in 0..config.len() {
        for j in i + 1..config.len() {
            let d = minimal_image(&config.particles[i].x, &config.particles[j].x).norm();
            if d < best.0 {
                best = (d, (i, j));
            }
        }
    }
    best.1
}

/// State at time `t` and the full collision log.
pub fn evolve<const D: usize>(
    config: &Configuration<D>,
    t: f64,
) -> Result<(Configuration<D>, TrajectoryLog<D>), DynamicsError> {
    let (c, log, _) = evolve_with(config, t, SimOptions::default())?;
    Ok((c, log))
}

pub fn evolve_with<const D: usize>(
    config: &Configuration<D>,
    t: f64,
    opts: SimOptions,
) -> Result<(Configuration<D>, TrajectoryLog<D>, SimStats), DynamicsError> {
    if !(t >= 0.0) {
        return Err(DynamicsError::InvalidInput(format!("negative horizon {t}")));
    }
    let mut sim = EventDrivenSim::new(config, opts)?;
    sim.advance_to(t)?;
    let state = sim.state();
    let log = TrajectoryLog {
        initial: config.clone(),
        records: sim.take_records(),
        final_time: t,
    };
    Ok((state, log, sim.stats()))
}

/// Largest coordinate deviation (torus-aware for positions) between two
/// configurations of equal size.
pub fn max_deviation<const D: usize>(a: &Configuration<D>, b: &Configuration<D>) -> f64 {
    a.particles
        .iter()
        .zip(&b.particles)
        .map(|(p, q)| minimal_image(&p.x, &q.x).max_abs().max((p.v - q.v).max_abs()))
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReverseReport {
    pub deviation: f64,
    pub grazing: u64,
    pub collisions: u64,
}

/// Evolve `t`, reverse velocities, evolve `t`, reverse again, and compare
/// with the start.
pub fn reverse_check<const D: usize>(config: &Configuration<D>, t: f64) -> Result<f64, DynamicsError> {
    Ok(reverse_check_report(config, t)?.deviation)
}

pub fn reverse_check_report<const D: usize>(
    config: &Configuration<D>,
    t: f64,
) -> Result<ReverseReport, DynamicsError> {
    let opts = SimOptions {
        record: false,
        ..Default::default()
    };
    let (mut mid, _, s1) = evolve_with(config, t, opts)?;
    mid.negate_velocities();
    let (mut back, _, s2) = evolve_with(&mid, t, opts)?;
    back.negate_velocities();
    Ok(ReverseReport {
        deviation: max_deviation(config, &back),
        grazing: s1.grazing + s2.grazing,
        collisions: s1.collisions + s2.collisions,
    })
}

/// States at increasing `times` along a single evolution.
pub fn snapshot_at<const D: usize>(
    config: &Configuration<D>,
    times: &[f64],
) -> Result<Vec<Configuration<D>>, DynamicsError> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(DynamicsError::InvalidInput("times must be increasing and non-negative".into()));
    }
    let mut sim = EventDrivenSim::new(
        config,
        SimOptions {
            record: false,
            ..Default::default()
        },
    )?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        sim.advance_to(t)?;
        out.push(sim.state());
    }
    Ok(out)
}

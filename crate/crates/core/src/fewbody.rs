//! Hard-sphere flow for a handful of particles in unwrapped coordinates.
//!
//! Every pair is checked against every lattice image at each step, so the
//! flow is exact without any spatial bookkeeping. Suited to the small
//! systems of pseudo-trajectories and cluster probes.

use crate::torus::{earliest_image_contact, reflect_unchecked, VecD};

/// Events closer than this are ordered by pair index.
const TIE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact<const D: usize> {
    /// Time from the current state to the contact.
    pub dt: f64,
    pub i: usize,
    pub j: usize,
    /// Lattice vector with `x_i - x_j = eps * omega + shift` at contact.
    pub shift: [i64; D],
    /// Unit vector from the image of `j` to `i`.
    pub omega: VecD<D>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FewBody<const D: usize> {
    pub eps: f64,
    /// Unwrapped positions.
    pub x: Vec<VecD<D>>,
    pub v: Vec<VecD<D>>,
    pub active: Vec<bool>,
    pub grazing: u64,
}

impl<const D: usize> FewBody<D> {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            x: Vec::new(),
            v: Vec::new(),
            active: Vec::new(),
            grazing: 0,
        }
    }

    pub fn push(&mut self, x: VecD<D>, v: VecD<D>) -> usize {
        self.x.push(x);
        self.v.push(v);
        self.active.push(true);
        self.x.len() - 1
    }

    /// First contact among active particles within `horizon`.
    pub fn next_contact(&mut self, horizon: f64) -> Option<Contact<D>> {
        let mut best: Option<Contact<D>> = None;
        let n = self.x.len();
        for i in 0..n {
            if !self.active[i] {
                continue;
            }
            for j in i + 1..n {
                if !self.active[j] {
                    continue;
                }
                let rel = self.x[j] - self.x[i];
                let u = self.v[j] - self.v[i];
                let p = earliest_image_contact(&rel, &u, self.eps, horizon);
                if p.grazing {
                    self.grazing += 1;
                }
                if let Some(ev) = p.event {
                    let better = match &best {
                        None => true,
                        // Pairs are visited in lexicographic order, so a
                        // near-tie keeps the earlier pair.
                        Some(b) => ev.time < b.dt - TIE,
                    };
                    if better {
                        best = Some(Contact {
                            dt: ev.time,
                            i,
                            j,
                            shift: ev.shift,
                            omega: ev.omega,
                        });
                    }
                }
            }
        }
        best
    }

    pub fn drift(&mut self, dt: f64) {
        for k in 0..self.x.len() {
            if self.active[k] {
                self.x[k] += self.v[k] * dt;
            }
        }
    }

    /// Apply specular reflection to the pair of `c`; returns `(pre, post)`.
    pub fn reflect(&mut self, c: &Contact<D>) -> ((VecD<D>, VecD<D>), (VecD<D>, VecD<D>)) {
        let pre = (self.v[c.i], self.v[c.j]);
        let post = reflect_unchecked(&pre.0, &pre.1, &c.omega);
        self.v[c.i] = post.0;
        self.v[c.j] = post.1;
        (pre, post)
    }

    /// Run with reflections for `duration`, calling `on_contact` after each
    /// one. Stops early when more than `max_events` contacts occur.
    pub fn run<F>(&mut self, duration: f64, max_events: usize, mut on_contact: F) -> Result<(), usize>
    where
        F: FnMut(f64, &Contact<D>, (VecD<D>, VecD<D>), (VecD<D>, VecD<D>)),
    {
        let mut elapsed = 0.0;
        let mut count = 0;
        while let Some(c) = self.next_contact(duration - elapsed) {
            count += 1;
            if count > max_events {
                return Err(count);
            }
            self.drift(c.dt);
            elapsed += c.dt;
            let (pre, post) = self.reflect(&c);
            on_contact(elapsed, &c, pre, post);
        }
        self.drift(duration - elapsed);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_on_through_the_boundary() {
        let mut fb = FewBody::<2>::new(0.1);
        fb.push(VecD([0.05, 0.5]), VecD([-1.0, 0.0]));
        fb.push(VecD([0.85, 0.5]), VecD([1.0, 0.0]));
        // Gap across the boundary is 0.2, closing at speed 2.
        let c = fb.next_contact(1.0).unwrap();
        assert!((c.dt - 0.05).abs() < 1e-14);
        assert_eq!(c.shift, [-1, 0]);
        fb.drift(c.dt);
        let sep = fb.x[0] - fb.x[1] + VecD([1.0, 0.0]);
        assert!((sep - c.omega * 0.1).max_abs() < 1e-14);
    }
}

//! Signed collision trees and creation parameters.
//!
//! Labels are 0-based: the `n` roots are `0..n`, and creation `i` (also
//! 0-based) adds particle `n + i`, attached to an existing particle
//! `a_i < n + i`.

use rand::Rng;
use thiserror::Error;

use crate::torus::VecD;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("creation {index}: parent {parent} does not exist yet")]
    BadParent { index: usize, parent: usize },
    #[error("tree needs at least one root")]
    NoRoot,
    #[error("invalid creation parameters: {0}")]
    BadParams(String),
}

/// Collision hemisphere: `Plus` scatters the parent (post-collisional),
/// `Minus` leaves it unchanged (pre-collisional).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CollisionTree {
    pub n: usize,
    /// `(a_i, s_i)` for each creation in order.
    pub entries: Vec<(usize, Sign)>,
}

impl CollisionTree {
    pub fn new(n: usize, entries: Vec<(usize, Sign)>) -> Result<Self, TreeError> {
        if n == 0 {
            return Err(TreeError::NoRoot);
        }
        for (i, &(a, _)) in entries.iter().enumerate() {
            if a >= n + i {
                return Err(TreeError::BadParent { index: i, parent: a });
            }
        }
        Ok(Self { n, entries })
    }

    /// Single root, no creations.
    pub fn root() -> Self {
        Self {
            n: 1,
            entries: Vec::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.entries.len()
    }

    pub fn particles(&self) -> usize {
        self.n + self.m()
    }

    pub fn parent(&self, i: usize) -> usize {
        self.entries[i].0
    }

    pub fn sign(&self, i: usize) -> Sign {
        self.entries[i].1
    }

    /// All trees in `A±_{n,m}`, in lexicographic order of `(a_i, s_i)`.
    pub fn enumerate(n: usize, m: usize) -> Vec<CollisionTree> {
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(m);
        fn rec(n: usize, m: usize, cur: &mut Vec<(usize, Sign)>, out: &mut Vec<CollisionTree>) {
            let i = cur.len();
            if i == m {
                out.push(CollisionTree {
                    n,
                    entries: cur.clone(),
                });
                return;
            }
            for a in 0..n + i {
                for s in [Sign::Minus, Sign::Plus] {
                    cur.push((a, s));
                    rec(n, m, cur, out);
                    cur.pop();
                }
            }
        }
        if n > 0 {
            rec(n, m, &mut cur, &mut out);
        }
        out
    }

    /// Uniform draw of the attachment labels with the given signs.
    pub fn random_shape<R: Rng + ?Sized>(n: usize, signs: &[Sign], rng: &mut R) -> Self {
        let entries = signs
            .iter()
            .enumerate()
            .map(|(i, &s)| (rng.random_range(0..n + i), s))
            .collect();
        Self { n, entries }
    }
}

/// Creation times (decreasing), contact directions and fresh velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct CreationParams<const D: usize> {
    pub times: Vec<f64>,
    pub omegas: Vec<VecD<D>>,
    pub velocities: Vec<VecD<D>>,
}

impl<const D: usize> CreationParams<D> {
    pub fn empty() -> Self {
        Self {
            times: Vec::new(),
            omegas: Vec::new(),
            velocities: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Check lengths, strict ordering in `(0, theta)` and unit directions.
    pub fn validate(&self, m: usize, theta: f64) -> Result<(), TreeError> {
        if self.times.len() != m || self.omegas.len() != m || self.velocities.len() != m {
            return Err(TreeError::BadParams(format!("expected {m} creations")));
        }
        let mut prev = theta;
        for &t in &self.times {
            if !(t < prev && t > 0.0) {
                return Err(TreeError::BadParams("times must decrease strictly inside (0, theta)".into()));
            }
            prev = t;
        }
        for w in &self.omegas {
            if (w.norm() - 1.0).abs() > 1e-12 {
                return Err(TreeError::BadParams("non-unit omega".into()));
            }
        }
        Ok(())
    }

    /// Largest component-wise difference to another parameter set.
    pub fn max_difference(&self, o: &Self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.len().min(o.len()) {
            d = d.max((self.times[i] - o.times[i]).abs());
            d = d.max((self.omegas[i] - o.omegas[i]).max_abs());
            d = d.max((self.velocities[i] - o.velocities[i]).max_abs());
        }
        if self.len() != o.len() {
            f64::INFINITY
        } else {
            d
        }
    }
}

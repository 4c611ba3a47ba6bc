//! Uniform cell grid on the torus for neighbor queries at a fixed range.

use crate::torus::VecD;

/// Cubic grid with `n` cells per side. Cells are at least `range` wide, so all
/// points within `range` of a point lie in the 3^D block around its cell.
/// With fewer than three cells per side the grid degenerates to one cell.
#[derive(Clone, Debug)]
pub struct CellGrid<const D: usize> {
    n: usize,
    members: Vec<Vec<usize>>,
}

impl<const D: usize> CellGrid<D> {
    /// Grid whose cells are at least `range` wide, with at most `max_side`
    /// cells per side.
    pub fn new(range: f64, max_side: usize) -> Self {
        let fit = if range > 0.0 {
            (1.0 / range).floor().min(1e6) as usize
        } else {
            max_side
        };
        let mut n = fit.min(max_side).max(1);
        if n < 3 {
            n = 1;
        }
        let total = n.pow(D as u32);
        Self {
            n,
            members: vec![Vec::new(); total],
        }
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn cell_coords(&self, x: &VecD<D>) -> [usize; D] {
        std::array::from_fn(|k| ((x.0[k] * self.n as f64) as usize).min(self.n - 1))
    }

    pub fn linear(&self, c: &[usize; D]) -> usize {
        let mut idx = 0;
        for k in (0..D).rev() {
            idx = idx * self.n + c[k];
        }
        idx
    }

    pub fn cell_of(&self, x: &VecD<D>) -> usize {
        self.linear(&self.cell_coords(x))
    }

    pub fn insert(&mut self, id: usize, cell: usize) {
        self.members[cell].push(id);
    }

    /// Remove `id` from `cell`; returns whether it was present.
    pub fn remove(&mut self, id: usize, cell: usize) -> bool {
        let m = &mut self.members[cell];
        if let Some(p) = m.iter().position(|&j| j == id) {
            m.swap_remove(p);
            true
        } else {
            false
        }
    }

    /// Rename `old` to `new` inside `cell`.
    pub fn relabel(&mut self, old: usize, new: usize, cell: usize) {
        for j in self.members[cell].iter_mut() {
            if *j == old {
                *j = new;
                return;
            }
        }
    }

    pub fn clear(&mut self) {
        for m in self.members.iter_mut() {
            m.clear();
        }
    }

    /// Visit every stored id in the cells adjacent to `x` (each id once).
    pub fn for_each_near<F: FnMut(usize)>(&self, x: &VecD<D>, mut f: F) {
        if self.n == 1 {
            for &j in &self.members[0] {
                f(j);
            }
            return;
        }
        let c = self.cell_coords(x);
        let n = self.n as i64;
        for off in 0..3usize.pow(D as u32) {
            let mut rem = off;
            let mut cc = [0usize; D];
            for k in 0..D {
                let o = (rem % 3) as i64 - 1;
                rem /= 3;
                cc[k] = (c[k] as i64 + o).rem_euclid(n) as usize;
            }
            for &j in &self.members[self.linear(&cc)] {
                f(j);
            }
        }
    }

    /// Like [`Self::for_each_near`], stopping as soon as `f` returns true.
    pub fn any_near<F: FnMut(usize) -> bool>(&self, x: &VecD<D>, mut f: F) -> bool {
        if self.n == 1 {
            return self.members[0].iter().any(|&j| f(j));
        }
        let c = self.cell_coords(x);
        let n = self.n as i64;
        for off in 0..3usize.pow(D as u32) {
            let mut rem = off;
            let mut cc = [0usize; D];
            for k in 0..D {
                let o = (rem % 3) as i64 - 1;
                rem /= 3;
                cc[k] = (c[k] as i64 + o).rem_euclid(n) as usize;
            }
            if self.members[self.linear(&cc)].iter().any(|&j| f(j)) {
                return true;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::torus_distance;

    #[test]
    fn finds_all_points_within_range() {
        let pts: Vec<VecD<2>> = (0..200)
            .map(|i| {
                let a = (i as f64 * 0.618_033_988_7).fract();
                let b = (i as f64 * 0.414_213_562_3).fract();
                VecD([a, b])
            })
            .collect();
        let r = 0.13;
        let mut g = CellGrid::<2>::new(r, 64);
        for (i, p) in pts.iter().enumerate() {
            g.insert(i, g.cell_of(p));
        }
        for p in &pts {
            let mut near = vec![];
            g.for_each_near(p, |j| {
                if torus_distance(p, &pts[j]) <= r {
                    near.push(j)
                }
            });
            near.sort();
            let brute: Vec<usize> = (0..pts.len())
                .filter(|&j| torus_distance(p, &pts[j]) <= r)
                .collect();
            assert_eq!(near, brute);
        }
    }
}

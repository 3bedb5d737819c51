//! Complex banded LU with partial pivoting (the LAPACK `gbtrf`/`gbtrs`
//! layout, unblocked).
//!
//! Entry `A(i, j)` lives at `ab[j * ldab + kv + i - j]` with `kv = kl + ku`
//! and `ldab = 2 kl + ku + 1`; the extra `kl` rows hold pivoting fill-in.

use crate::error::{Error, Result};
use crate::C64;

#[derive(Clone, Debug)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<C64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self { n, kl, ku, ldab, ab: vec![C64::new(0.0, 0.0); ldab * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i <= j + self.kl && j <= i + self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        if self.in_band(i, j) {
            self.ab[self.idx(i, j)]
        } else {
            C64::new(0.0, 0.0)
        }
    }

    /// Panics when `(i, j)` lies outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: C64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band ({}, {})", self.kl, self.ku);
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.ab[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    pub fn factor(mut self) -> Result<BandedLu> {
        let (n, kl) = (self.n, self.kl);
        let mut piv = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = j;
            let mut best = self.ab[self.idx(j, j)].norm();
            for i in j + 1..=j + km {
                let v = self.ab[self.idx(i, j)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[j] = p;
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(j));
            }
            // after the swap row j may reach up to column p + ku
            ju = ju.max((p + self.ku).min(n - 1));
            if p != j {
                for c in j..=ju {
                    let (a, b) = (self.idx(j, c), self.idx(p, c));
                    self.ab.swap(a, b);
                }
            }
            let inv = 1.0 / self.ab[self.idx(j, j)];
            for i in j + 1..=j + km {
                let k = self.idx(i, j);
                self.ab[k] *= inv;
            }
            for c in j + 1..=ju {
                let ujc = self.ab[self.idx(j, c)];
                if ujc == C64::new(0.0, 0.0) {
                    continue;
                }
                for i in j + 1..=j + km {
                    let l = self.ab[self.idx(i, j)];
                    let k = self.idx(i, c);
                    self.ab[k] -= l * ujc;
                }
            }
        }
        Ok(BandedLu { a: self, piv })
    }
}

#[derive(Clone, Debug)]
pub struct BandedLu {
    a: BandedMatrix,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn n(&self) -> usize {
        self.a.n
    }

    /// Overwrite `b` with the solution of `A x = b`.
    pub fn solve_in_place(&self, b: &mut [C64]) {
        let a = &self.a;
        let (n, kl, kv) = (a.n, a.kl, a.kl + a.ku);
        assert_eq!(b.len(), n);
        if kl > 0 {
            for j in 0..n.saturating_sub(1) {
                let lm = kl.min(n - 1 - j);
                let p = self.piv[j];
                if p != j {
                    b.swap(p, j);
                }
                let bj = b[j];
                for i in 1..=lm {
                    b[j + i] -= a.ab[a.idx(j + i, j)] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= a.ab[a.idx(j, j)];
            let bj = b[j];
            for i in j.saturating_sub(kv)..j {
                b[i] -= a.ab[a.idx(i, j)] * bj;
            }
        }
    }
}

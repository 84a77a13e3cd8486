//! Count lattice: all count vectors `n` over an alphabet of size `m` with
//! `Σ n ≤ T`, grouped by depth `t = Σ n` and ordered lexicographically
//! (ascending) within a depth. In the binary case the index of `n` is `n[0]`.

#[derive(Debug, Clone)]
pub struct Lattice {
    m: usize,
    horizon: usize,
    counts: Vec<Vec<u32>>,
    binom: Vec<Vec<u64>>,
}

impl Lattice {
    pub fn new(m: usize, horizon: usize) -> Self {
        assert!(m >= 1, "alphabet must be non-empty");
        let size = horizon + m + 1;
        let mut binom = vec![vec![0u64; m + 1]; size];
        for row in binom.iter_mut() {
            row[0] = 1;
        }
        for n in 1..size {
            for k in 1..=m.min(n) {
                binom[n][k] = binom[n - 1][k - 1].saturating_add(binom[n - 1][k]);
            }
        }
        let counts = (0..=horizon).map(|t| compositions(t as u32, m)).collect();
        Lattice { m, horizon, counts, binom }
    }

    pub fn alphabet(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of nodes at depth `t`.
    pub fn len(&self, t: usize) -> usize {
        self.counts[t].len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn total_nodes(&self) -> usize {
        (0..=self.horizon).map(|t| self.len(t)).sum()
    }

    pub fn node(&self, t: usize, idx: usize) -> &[u32] {
        &self.counts[t][idx * self.m..(idx + 1) * self.m]
    }

    fn c(&self, n: usize, k: usize) -> u64 {
        self.binom[n][k]
    }

    /// Index of count vector `n` within its depth.
    pub fn rank(&self, n: &[u32]) -> usize {
        let mut r: usize = n.iter().map(|&x| x as usize).sum();
        let mut idx = 0u64;
        for (j, &nj) in n.iter().enumerate().take(self.m.saturating_sub(1)) {
            let k = self.m - j - 1;
            let nj = nj as usize;
            idx += self.c(r + k, k) - self.c(r - nj + k, k);
            r -= nj;
        }
        idx as usize
    }

    /// Index at depth `t + 1` of the node reached from `(t, idx)` by observing `y`.
    pub fn child(&self, t: usize, idx: usize, y: usize) -> usize {
        if self.m == 2 {
            return idx + usize::from(y == 0);
        }
        let mut n = self.node(t, idx).to_vec();
        n[y] += 1;
        self.rank(&n)
    }
}

fn compositions(t: u32, m: usize) -> Vec<u32> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; m];
    fill(&mut out, &mut cur, 0, t);
    out
}

fn fill(out: &mut Vec<u32>, cur: &mut [u32], j: usize, remaining: u32) {
    let m = cur.len();
    if j == m - 1 {
        cur[j] = remaining;
        out.extend_from_slice(cur);
        return;
    }
    for v in 0..=remaining {
        cur[j] = v;
        fill(out, cur, j + 1, remaining - v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_match_binomials() {
        let l = Lattice::new(3, 6);
        for t in 0..=6 {
            assert_eq!(l.len(t), (t + 1) * (t + 2) / 2);
        }
        let b = Lattice::new(2, 5);
        for t in 0..=5 {
            assert_eq!(b.len(t), t + 1);
            for i in 0..=t {
                assert_eq!(b.node(t, i)[0] as usize, i);
            }
        }
    }

    #[test]
    fn rank_inverts_enumeration() {
        for m in 1..=4 {
            let l = Lattice::new(m, 7);
            for t in 0..=7 {
                for i in 0..l.len(t) {
                    assert_eq!(l.rank(l.node(t, i)), i);
                }
            }
        }
    }

    #[test]
    fn children_increment_one_symbol() {
        for m in 2..=4 {
            let l = Lattice::new(m, 5);
            for t in 0..5 {
                for i in 0..l.len(t) {
                    for y in 0..m {
                        let c = l.child(t, i, y);
                        let mut n = l.node(t, i).to_vec();
                        n[y] += 1;
                        assert_eq!(l.node(t + 1, c), n.as_slice());
                    }
                }
            }
        }
    }
}

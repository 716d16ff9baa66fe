//! Level-by-level indexing of directed walks. A walk with every step in
//! `V_s` sits after `j` steps on the level `<x, s> = j`; a site there is
//! determined by the step counts `c_1..c_{d-1}` along the first `d - 1`
//! axes (the last axis takes the remaining `j - sum c`).

use crate::lattice::{Direction, SignVector};

/// Number of slots used for level `j` (a dense `(j+1)^{d-1}` box, of which
/// only entries with `sum c <= j` are live).
pub(crate) fn level_len(dm1: usize, j: usize) -> usize {
    (j + 1).pow(dm1 as u32)
}

pub(crate) fn decode(idx: usize, j: usize, dm1: usize, out: &mut [usize]) -> bool {
    let mut r = idx;
    let mut sum = 0;
    for c in out.iter_mut().take(dm1) {
        *c = r % (j + 1);
        r /= j + 1;
        sum += *c;
    }
    sum <= j
}

pub(crate) fn encode(c: &[usize], j: usize) -> usize {
    c.iter().rev().fold(0, |acc, &ci| acc * (j + 1) + ci)
}

/// Lattice site of counts `c` on level `j`.
pub(crate) fn site(s: &SignVector, c: &[usize], j: usize, out: &mut [i64]) {
    let d = s.dim();
    let signs = s.signs();
    let mut used = 0;
    for a in 0..d - 1 {
        out[a] = signs[a] as i64 * c[a] as i64;
        used += c[a];
    }
    out[d - 1] = signs[d - 1] as i64 * (j - used) as i64;
}

/// Index on level `j + 1` reached from counts `c` by the step `s_a e_a`.
pub(crate) fn next_index(c: &mut [usize], a: usize, j: usize) -> usize {
    let dm1 = c.len();
    if a < dm1 {
        c[a] += 1;
        let i = encode(c, j + 1);
        c[a] -= 1;
        i
    } else {
        encode(c, j + 1)
    }
}

/// `V_s` in axis order.
pub(crate) fn steps(s: &SignVector) -> Vec<Direction> {
    s.allowed()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = [0usize; 2];
        for j in 0..5 {
            for idx in 0..level_len(2, j) {
                if decode(idx, j, 2, &mut c) {
                    assert_eq!(encode(&c, j), idx);
                }
            }
        }
        let s = SignVector::new(vec![1, -1, 1]).unwrap();
        let mut x = [0i64; 3];
        site(&s, &[1, 2], 4, &mut x);
        assert_eq!(x, [1, -2, 1]);
    }
}

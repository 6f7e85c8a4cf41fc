use crate::error::{Error, Result};
use crate::estimator::Permutation;

/// Partially matched crossover. The child takes `parent_b` on the 1-indexed
/// inclusive segment `[l, r]` and `parent_a` elsewhere, with clashes resolved
/// through the segment's `b → a` value mapping.
pub fn pmx_crossover(parent_a: &Permutation, parent_b: &Permutation, l: usize, r: usize) -> Result<Permutation> {
    let n = parent_a.len();
    if parent_b.len() != n {
        return Err(Error::Input(format!("parents of length {n} and {}", parent_b.len())));
    }
    if !(1 <= l && l < r && r <= n) {
        return Err(Error::Input(format!("cut points need 1 ≤ l < r ≤ {n}, got l={l} r={r}")));
    }
    let (a, b) = (parent_a.as_slice(), parent_b.as_slice());
    let seg = l - 1..r;
    let mut in_segment = vec![None; n];
    for j in seg.clone() {
        in_segment[b[j]] = Some(j);
    }
    let mut child = a.to_vec();
    child[seg.clone()].copy_from_slice(&b[seg.clone()]);
    for i in (0..n).filter(|i| !seg.contains(i)) {
        let mut v = a[i];
        while let Some(j) = in_segment[v] {
            v = a[j];
        }
        child[i] = v;
    }
    Permutation::new(child)
}

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Contingency counts keyed by (cluster, class).
fn table<A, B>(z: &[A], labels: &[B]) -> Result<BTreeMap<(A, B), usize>>
where
    A: Copy + Ord,
    B: Copy + Ord,
{
    if z.is_empty() || z.len() != labels.len() {
        return Err(Error::Param(format!(
            "cluster metrics need equal nonempty sequences, got {} and {}",
            z.len(),
            labels.len()
        )));
    }
    let mut t = BTreeMap::new();
    for (&a, &b) in z.iter().zip(labels) {
        *t.entry((a, b)).or_insert(0) += 1;
    }
    Ok(t)
}

fn marginal<K: Copy + Ord>(items: &[K]) -> BTreeMap<K, usize> {
    let mut m = BTreeMap::new();
    for &k in items {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

/// Fraction of frames whose class is the majority class of their cluster.
pub fn purity<A, B>(z: &[A], labels: &[B]) -> Result<f64>
where
    A: Copy + Ord,
    B: Copy + Ord,
{
    let t = table(z, labels)?;
    let mut best: BTreeMap<A, usize> = BTreeMap::new();
    for (&(a, _), &c) in &t {
        let e = best.entry(a).or_insert(0);
        *e = (*e).max(c);
    }
    Ok(best.values().sum::<usize>() as f64 / z.len() as f64)
}

fn entropy<K>(m: &BTreeMap<K, usize>, n: f64) -> f64 {
    m.values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `2 I(Z; C) / (H(Z) + H(C))`, natural logs.
///
/// When one partition has zero entropy the value is 0, unless both do, in
/// which case the partitions coincide and the value is 1.
pub fn nmi<A, B>(z: &[A], labels: &[B]) -> Result<f64>
where
    A: Copy + Ord,
    B: Copy + Ord,
{
    let t = table(z, labels)?;
    let n = z.len() as f64;
    let (mz, mc) = (marginal(z), marginal(labels));
    let (hz, hc) = (entropy(&mz, n), entropy(&mc, n));
    if hz == 0.0 && hc == 0.0 {
        return Ok(1.0);
    }
    if hz == 0.0 || hc == 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = t
        .iter()
        .map(|(&(a, b), &c)| {
            let pab = c as f64 / n;
            let pa = mz[&a] as f64 / n;
            let pb = mc[&b] as f64 / n;
            pab * (pab / (pa * pb)).ln()
        })
        .sum();
    Ok((2.0 * mi / (hz + hc)).clamp(0.0, 1.0))
}

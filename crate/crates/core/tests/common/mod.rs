//! Direct tree simulators, independent of the urn machinery.

#![allow(dead_code)]

use mvpp_core::RngStream;

fn uniform_index(rng: &mut RngStream, n: usize) -> usize {
    ((rng.uniform() * n as f64) as usize).min(n - 1)
}

/// Out-degree histogram of a random recursive tree grown from a single root
/// by `steps` node insertions.
pub fn rrt_outdegree_profile(steps: usize, rng: &mut RngStream) -> Vec<u64> {
    let mut outdeg = vec![0u64; 1];
    outdeg.reserve(steps);
    for _ in 0..steps {
        let parent = uniform_index(rng, outdeg.len());
        outdeg[parent] += 1;
        outdeg.push(0);
    }
    histogram(outdeg.into_iter())
}

/// Leaf-children counts of internal nodes of a random recursive tree grown
/// from a root with one child by `steps` insertions.
pub fn rrt_leaf_children_profile(steps: usize, rng: &mut RngStream) -> Vec<u64> {
    let mut parent = vec![usize::MAX, 0];
    let mut internal = vec![true, false];
    let mut leaf_children = vec![1u64, 0];
    for _ in 0..steps {
        let u = uniform_index(rng, parent.len());
        if internal[u] {
            leaf_children[u] += 1;
        } else {
            internal[u] = true;
            leaf_children[u] = 1;
            leaf_children[parent[u]] -= 1;
        }
        parent.push(u);
        internal.push(false);
        leaf_children.push(0);
    }
    histogram(leaf_children.into_iter().zip(internal).filter(|(_, i)| *i).map(|(c, _)| c))
}

pub fn histogram(values: impl Iterator<Item = u64>) -> Vec<u64> {
    let mut h = Vec::new();
    for v in values {
        let v = v as usize;
        if h.len() <= v {
            h.resize(v + 1, 0);
        }
        h[v] += 1;
    }
    h
}

pub fn to_pmf(h: &[u64]) -> Vec<f64> {
    let total: u64 = h.iter().sum();
    h.iter().map(|&c| c as f64 / total as f64).collect()
}

/// TV between two pmfs given as dense vectors.
pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n).map(|i| (p.get(i).unwrap_or(&0.0) - q.get(i).unwrap_or(&0.0)).abs()).sum::<f64>()
}

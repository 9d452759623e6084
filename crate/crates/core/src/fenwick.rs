//! Binary indexed tree over `f64` weights that can grow at the back.

#[derive(Clone, Debug, Default)]
pub(crate) struct Fenwick {
    // 1-based; slot 0 is unused.
    tree: Vec<f64>,
}

#[inline(always)]
fn lsb(i: usize) -> usize {
    i & i.wrapping_neg()
}

impl Fenwick {
    pub fn new() -> Self {
        Self { tree: vec![0.0] }
    }

    pub fn from_weights(weights: &[f64]) -> Self {
        let mut tree = Vec::with_capacity(weights.len() + 1);
        tree.push(0.0);
        tree.extend_from_slice(weights);
        let n = weights.len();
        for i in 1..=n {
            let j = i + lsb(i);
            if j <= n {
                tree[j] += tree[i];
            }
        }
        Self { tree }
    }

    pub fn len(&self) -> usize {
        self.tree.len() - 1
    }

    /// Sum of the first `count` weights.
    pub fn prefix(&self, count: usize) -> f64 {
        let mut i = count;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= lsb(i);
        }
        s
    }

    pub fn total(&self) -> f64 {
        self.prefix(self.len())
    }

    pub fn push(&mut self, w: f64) {
        let i = self.len() + 1;
        let node = w + self.prefix(i - 1) - self.prefix(i - lsb(i));
        self.tree.push(node);
    }

    pub fn add(&mut self, index: usize, delta: f64) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += lsb(i);
        }
    }

    /// Smallest 0-based index `j` whose inclusive prefix sum exceeds `u`.
    /// Requires nonnegative weights. Returns `len()` when `u` is not below the total.
    pub fn search(&self, mut u: f64) -> usize {
        let n = self.len();
        let mut pos = 0;
        let mut step = if n == 0 { 0 } else { 1 << (usize::BITS - 1 - n.leading_zeros()) };
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= u {
                u -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos
    }
}

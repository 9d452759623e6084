//! Atomic measures over a discrete or Euclidean color space.
//!
//! A [`WeightedMeasure`] stores its atoms in a dense array with a Fenwick
//! tree on top, so weighted draws and single-atom updates are both
//! `O(log N)`. Discrete atoms are aggregated by label; Euclidean atoms are
//! appended one per insertion and never merged.

use std::collections::HashMap;
use std::fmt;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fenwick::Fenwick;
use crate::format::{f17, to_json_string};
use crate::rng::RngStream;

/// Aggregated weights down to this value are treated as cancellation noise.
pub const TENABILITY_SLACK: f64 = 1e-12;

/// Number of single-atom updates between two full sampler rebuilds.
pub const REBUILD_INTERVAL: u64 = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub enum ColorPoint {
    Discrete(u64),
    Euclidean(Box<[f64]>),
}

impl ColorPoint {
    pub fn euclidean(coords: impl Into<Box<[f64]>>) -> Result<Self> {
        let coords = coords.into();
        if coords.is_empty() {
            return Err(Error::InvalidParams("euclidean point needs dim >= 1".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParams("euclidean point has a non-finite coordinate".into()));
        }
        Ok(ColorPoint::Euclidean(coords))
    }

    pub fn as_discrete(&self) -> Option<u64> {
        match self {
            ColorPoint::Discrete(x) => Some(*x),
            ColorPoint::Euclidean(_) => None,
        }
    }

    pub fn coords(&self) -> Option<&[f64]> {
        match self {
            ColorPoint::Discrete(_) => None,
            ColorPoint::Euclidean(c) => Some(c),
        }
    }

    /// CSV field: the label, or `;`-joined coordinates at 17 significant digits.
    pub fn csv_field(&self) -> String {
        match self {
            ColorPoint::Discrete(x) => x.to_string(),
            ColorPoint::Euclidean(c) => c.iter().map(|v| f17(*v)).collect::<Vec<_>>().join(";"),
        }
    }

    fn fits(&self, space: Space) -> bool {
        match (self, space) {
            (ColorPoint::Discrete(_), Space::Discrete) => true,
            (ColorPoint::Euclidean(c), Space::Euclidean { dim }) => c.len() == dim,
            _ => false,
        }
    }
}

impl From<u64> for ColorPoint {
    fn from(x: u64) -> Self {
        ColorPoint::Discrete(x)
    }
}

impl fmt::Display for ColorPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColorPoint::Discrete(x) => write!(f, "{x}"),
            ColorPoint::Euclidean(c) => {
                write!(f, "(")?;
                for (i, v) in c.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Discrete,
    Euclidean { dim: usize },
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Discrete => write!(f, "discrete"),
            Space::Euclidean { dim } => write!(f, "euclidean(dim={dim})"),
        }
    }
}

/// A finite list of signed point masses; one realization of a replacement
/// measure.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SignedDelta {
    entries: Vec<(ColorPoint, f64)>,
}

impl SignedDelta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { entries: Vec::with_capacity(n) }
    }

    pub fn dirac(point: impl Into<ColorPoint>, weight: f64) -> Self {
        Self { entries: vec![(point.into(), weight)] }
    }

    pub fn push(&mut self, point: impl Into<ColorPoint>, weight: f64) {
        self.entries.push((point.into(), weight));
    }

    pub fn entries(&self) -> &[(ColorPoint, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }

    pub fn scale(&mut self, c: f64) {
        for (_, w) in &mut self.entries {
            *w *= c;
        }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.scale(c);
        self
    }

    pub fn integrate(&self, f: impl Fn(&ColorPoint) -> f64) -> f64 {
        self.entries.iter().map(|(p, w)| w * f(p)).sum()
    }

    /// Discrete entries merged by label, sorted by label.
    pub fn aggregated(&self) -> Result<Vec<(u64, f64)>> {
        let mut out = Vec::with_capacity(self.entries.len());
        for (p, w) in &self.entries {
            let x = p
                .as_discrete()
                .ok_or_else(|| Error::SpaceMismatch { point: p.clone(), expected: "discrete".into() })?;
            out.push((x, *w));
        }
        out.sort_by_key(|&(x, _)| x);
        out.dedup_by(|later, kept| {
            if later.0 == kept.0 {
                kept.1 += later.1;
                true
            } else {
                false
            }
        });
        Ok(out)
    }
}

impl FromIterator<(ColorPoint, f64)> for SignedDelta {
    fn from_iter<I: IntoIterator<Item = (ColorPoint, f64)>>(iter: I) -> Self {
        Self { entries: iter.into_iter().collect() }
    }
}

/// A validated update, ready to be committed without further checks.
#[derive(Debug)]
pub struct PreparedDelta {
    kind: Prepared,
}

#[derive(Debug)]
enum Prepared {
    Discrete(Vec<(u64, f64)>),
    Euclidean(Vec<(ColorPoint, f64)>),
}

#[derive(Clone, Debug)]
pub struct WeightedMeasure {
    space: Space,
    nonnegative: bool,
    points: Vec<ColorPoint>,
    slots: HashMap<u64, usize>,
    weights: Vec<f64>,
    tree: Fenwick,
    total_mass: f64,
    updates: u64,
}

impl WeightedMeasure {
    /// An empty measure flagged nonnegative.
    pub fn new(space: Space) -> Self {
        Self {
            space,
            nonnegative: true,
            points: Vec::new(),
            slots: HashMap::new(),
            weights: Vec::new(),
            tree: Fenwick::new(),
            total_mass: 0.0,
            updates: 0,
        }
    }

    pub fn discrete() -> Self {
        Self::new(Space::Discrete)
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(Space::Euclidean { dim })
    }

    /// Drop the nonnegativity guard (for signed aggregates such as `νR`).
    pub fn into_signed(mut self) -> Self {
        self.nonnegative = false;
        self
    }

    pub fn from_atoms(space: Space, atoms: impl IntoIterator<Item = (ColorPoint, f64)>) -> Result<Self> {
        let mut m = Self::new(space);
        let delta: SignedDelta = atoms.into_iter().collect();
        m.add_delta(&delta)?;
        Ok(m)
    }

    /// Discrete measure with weight `pmf[x]` on label `x`.
    pub fn from_pmf(pmf: &[f64]) -> Result<Self> {
        Self::from_atoms(Space::Discrete, pmf.iter().enumerate().map(|(x, &w)| (ColorPoint::Discrete(x as u64), w)))
    }

    pub fn dirac(point: ColorPoint, weight: f64) -> Result<Self> {
        let space = match &point {
            ColorPoint::Discrete(_) => Space::Discrete,
            ColorPoint::Euclidean(c) => Space::Euclidean { dim: c.len() },
        };
        Self::from_atoms(space, [(point, weight)])
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn is_nonnegative(&self) -> bool {
        self.nonnegative
    }

    /// Number of stored atoms (including zero-weight discrete atoms).
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cached running total.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Fresh sum of the atom weights.
    pub fn exact_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Total held by the sampler index.
    pub fn sampler_total(&self) -> f64 {
        self.tree.total()
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&ColorPoint, f64)> + '_ {
        self.points.iter().zip(self.weights.iter().copied())
    }

    pub fn point(&self, index: usize) -> &ColorPoint {
        &self.points[index]
    }

    pub fn weight_at(&self, index: usize) -> f64 {
        self.weights[index]
    }

    /// Weight on a discrete label (0 when absent).
    pub fn weight(&self, label: u64) -> f64 {
        self.slots.get(&label).map_or(0.0, |&j| self.weights[j])
    }

    pub fn weight_of(&self, point: &ColorPoint) -> f64 {
        match point {
            ColorPoint::Discrete(x) => self.weight(*x),
            ColorPoint::Euclidean(_) => self.atoms().filter(|(p, _)| *p == point).map(|(_, w)| w).sum(),
        }
    }

    /// Largest discrete label carrying an atom.
    pub fn max_label(&self) -> Option<u64> {
        self.slots.keys().copied().max()
    }

    /// Validate `delta` against this measure without modifying it.
    pub fn prepare(&self, delta: &SignedDelta) -> Result<PreparedDelta> {
        if let Some((p, _)) = delta.entries().iter().find(|(_, w)| !w.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite delta weight at {p}")));
        }
        let kind = match self.space {
            Space::Discrete => {
                let agg = delta.aggregated()?;
                if self.nonnegative {
                    for &(x, dw) in &agg {
                        let w = self.weight(x) + dw;
                        if w < -TENABILITY_SLACK {
                            return Err(Error::TenabilityViolation { point: ColorPoint::Discrete(x), weight: w });
                        }
                    }
                }
                Prepared::Discrete(agg)
            }
            Space::Euclidean { .. } => {
                for (p, w) in delta.entries() {
                    if !p.fits(self.space) {
                        return Err(Error::SpaceMismatch { point: p.clone(), expected: self.space.to_string() });
                    }
                    if self.nonnegative && *w < -TENABILITY_SLACK {
                        return Err(Error::TenabilityViolation { point: p.clone(), weight: *w });
                    }
                }
                Prepared::Euclidean(delta.entries().to_vec())
            }
        };
        Ok(PreparedDelta { kind })
    }

    /// Apply an update produced by [`prepare`](Self::prepare) on this same,
    /// unmodified measure.
    pub fn commit(&mut self, prepared: PreparedDelta) {
        match prepared.kind {
            Prepared::Discrete(agg) => {
                for (x, dw) in agg {
                    match self.slots.get(&x) {
                        Some(&j) => {
                            let old = self.weights[j];
                            let mut new = old + dw;
                            if self.nonnegative && new < 0.0 {
                                new = 0.0;
                            }
                            self.set_slot(j, old, new);
                        }
                        None => {
                            let w = if self.nonnegative && dw < 0.0 { 0.0 } else { dw };
                            self.slots.insert(x, self.points.len());
                            self.push_atom(ColorPoint::Discrete(x), w);
                        }
                    }
                }
            }
            Prepared::Euclidean(entries) => {
                for (p, w) in entries {
                    let w = if self.nonnegative && w < 0.0 { 0.0 } else { w };
                    self.push_atom(p, w);
                }
            }
        }
        if self.updates >= REBUILD_INTERVAL {
            self.rebuild_sampler();
        }
    }

    /// `m ← m + delta`, all-or-nothing.
    pub fn add_delta(&mut self, delta: &SignedDelta) -> Result<()> {
        let prepared = self.prepare(delta)?;
        self.commit(prepared);
        Ok(())
    }

    fn set_slot(&mut self, j: usize, old: f64, new: f64) {
        let applied = new - old;
        self.weights[j] = new;
        self.tree.add(j, if self.nonnegative { applied } else { new.max(0.0) - old.max(0.0) });
        self.total_mass += applied;
        self.updates += 1;
    }

    fn push_atom(&mut self, p: ColorPoint, w: f64) {
        self.points.push(p);
        self.weights.push(w);
        self.tree.push(if self.nonnegative { w } else { w.max(0.0) });
        self.total_mass += w;
        self.updates += 1;
    }

    /// Recompute the sampler index and cached mass from the atom weights.
    pub fn rebuild_sampler(&mut self) {
        if self.nonnegative {
            self.tree = Fenwick::from_weights(&self.weights);
        } else {
            let clipped: Vec<f64> = self.weights.iter().map(|w| w.max(0.0)).collect();
            self.tree = Fenwick::from_weights(&clipped);
        }
        self.total_mass = self.exact_mass();
        self.updates = 0;
    }

    /// Index of an atom drawn with probability `weight / total`.
    pub fn sample_index(&self, rng: &mut RngStream) -> Result<usize> {
        if !self.nonnegative && self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidParams("cannot sample from a measure with negative atoms".into()));
        }
        let total = self.tree.total();
        if !(total > 0.0) || self.total_mass <= 0.0 {
            return Err(Error::EmptyMeasure);
        }
        let n = self.weights.len();
        let j = self.tree.search(rng.uniform() * total);
        if j < n && self.weights[j] > 0.0 {
            return Ok(j);
        }
        // Rounding in the tree landed on an empty slot or past the end.
        let start = j.min(n - 1);
        (0..=start).rev().chain(start + 1..n).find(|&k| self.weights[k] > 0.0).ok_or(Error::EmptyMeasure)
    }

    pub fn sample_atom(&self, rng: &mut RngStream) -> Result<ColorPoint> {
        self.sample_index(rng).map(|j| self.points[j].clone())
    }

    /// `Σ_j w_j f(x_j)`.
    pub fn integrate(&self, f: impl Fn(&ColorPoint) -> f64) -> f64 {
        self.atoms().map(|(p, w)| if w == 0.0 { 0.0 } else { w * f(p) }).sum()
    }

    /// Fresh copy with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for w in &mut out.weights {
            *w *= c;
        }
        out.rebuild_sampler();
        out
    }

    /// Probability measure `m / m(E)`. A measure already of mass one (within
    /// 1e-12) is returned unchanged, so normalizing is idempotent.
    pub fn normalize(&self) -> Result<Self> {
        let total = self.exact_mass();
        if !(total > 0.0) {
            return Err(Error::EmptyMeasure);
        }
        if (total - 1.0).abs() <= 1e-12 {
            return Ok(self.clone());
        }
        Ok(self.scaled(1.0 / total))
    }

    pub fn to_json_value(&self) -> Value {
        let (space, dim) = match self.space {
            Space::Discrete => ("discrete", 1),
            Space::Euclidean { dim } => ("euclidean", dim),
        };
        let atoms: Vec<Value> = self
            .atoms()
            .map(|(p, w)| match p {
                ColorPoint::Discrete(x) => json!([x, w]),
                ColorPoint::Euclidean(c) => json!([c.to_vec(), w]),
            })
            .collect();
        json!({"space": space, "dim": dim, "atoms": atoms, "mass": self.total_mass})
    }

    /// `{"space":..,"dim":..,"atoms":[[point,weight],..],"mass":..}` with
    /// 17-significant-digit floats.
    pub fn to_json(&self) -> String {
        to_json_string(&self.to_json_value())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidParams(format!("measure JSON: {msg}"));
        let v: Value = serde_json::from_str(text).map_err(|e| bad(&e.to_string()))?;
        let space = match v["space"].as_str() {
            Some("discrete") => Space::Discrete,
            Some("euclidean") => {
                Space::Euclidean { dim: v["dim"].as_u64().ok_or_else(|| bad("missing dim"))? as usize }
            }
            _ => return Err(bad("space must be \"discrete\" or \"euclidean\"")),
        };
        let atoms = v["atoms"].as_array().ok_or_else(|| bad("missing atoms"))?;
        let mut m = Self::new(space);
        for a in atoms {
            let w = a[1].as_f64().ok_or_else(|| bad("atom weight"))?;
            let p = match space {
                Space::Discrete => ColorPoint::Discrete(a[0].as_u64().ok_or_else(|| bad("atom label"))?),
                Space::Euclidean { .. } => {
                    let c: Option<Vec<f64>> = a[0].as_array().map(|xs| xs.iter().filter_map(Value::as_f64).collect());
                    ColorPoint::euclidean(c.ok_or_else(|| bad("atom coordinates"))?)?
                }
            };
            m.add_delta(&SignedDelta::dirac(p, w))?;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn disc(atoms: &[(u64, f64)]) -> WeightedMeasure {
        WeightedMeasure::from_atoms(Space::Discrete, atoms.iter().map(|&(x, w)| (ColorPoint::Discrete(x), w))).unwrap()
    }

    fn delta(entries: &[(u64, f64)]) -> SignedDelta {
        entries.iter().map(|&(x, w)| (ColorPoint::Discrete(x), w)).collect()
    }

    #[test]
    fn disjoint_addition() {
        let mut m = disc(&[(0, 1.0)]);
        m.add_delta(&delta(&[(1, 1.0)])).unwrap();
        assert_eq!(m.weight(0), 1.0);
        assert_eq!(m.weight(1), 1.0);
        assert_eq!(m.total_mass(), 2.0);
    }

    #[test]
    fn cancelling_delta_leaves_zero_atom() {
        let mut m = disc(&[(0, 1.0)]);
        m.add_delta(&delta(&[(0, -1.0), (1, 1.0)])).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.weight(0), 0.0);
        assert_eq!(m.weight(1), 1.0);
        assert_eq!(m.total_mass(), 1.0);
    }

    #[test]
    fn negative_mass_is_rejected_and_measure_untouched() {
        let mut m = disc(&[(0, 0.5)]);
        let before = m.to_json();
        let err = m.add_delta(&delta(&[(1, 3.0), (0, -1.0)])).unwrap_err();
        assert!(matches!(err, Error::TenabilityViolation { .. }));
        assert_eq!(m.to_json(), before);
    }

    #[test]
    fn slack_absorbs_float_noise() {
        let mut m = disc(&[(0, 0.1 + 0.2)]);
        m.add_delta(&delta(&[(0, -0.3), (0, -1e-13)])).unwrap();
        assert_eq!(m.weight(0), 0.0);
    }

    #[test]
    fn single_atom_always_drawn() {
        let m = disc(&[(5, 2.0)]);
        let mut rng = RngStream::new(3);
        for _ in 0..1000 {
            assert_eq!(m.sample_atom(&mut rng).unwrap(), ColorPoint::Discrete(5));
        }
    }

    #[test]
    fn zero_weight_atoms_never_drawn() {
        let mut m = disc(&[(0, 1.0), (1, 1.0), (2, 1.0)]);
        m.add_delta(&delta(&[(1, -1.0)])).unwrap();
        let mut rng = RngStream::new(4);
        for _ in 0..10_000 {
            assert_ne!(m.sample_atom(&mut rng).unwrap(), ColorPoint::Discrete(1));
        }
    }

    #[test]
    fn three_to_one_frequency() {
        // 3-sigma binomial interval for p = 0.75 at n = 1e6 is [0.7487, 0.7513].
        let m = disc(&[(0, 1.0), (1, 3.0)]);
        let mut rng = RngStream::new(11);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| m.sample_atom(&mut rng).unwrap() == ColorPoint::Discrete(1)).count();
        let freq = hits as f64 / n as f64;
        assert!((0.7485..=0.7515).contains(&freq), "{freq}");
    }

    #[test]
    fn empty_measure_errors() {
        let m = WeightedMeasure::discrete();
        assert!(matches!(m.sample_atom(&mut RngStream::new(0)), Err(Error::EmptyMeasure)));
        assert!(matches!(m.normalize(), Err(Error::EmptyMeasure)));
        let mut m = m;
        m.rebuild_sampler();
        assert_eq!(m.total_mass(), 0.0);
    }

    #[test]
    fn integrate_examples() {
        let m = disc(&[(0, 1.0), (1, 1.0)]);
        assert_eq!(m.integrate(|_| 1.0), 2.0);
        assert_eq!(m.integrate(|p| p.as_discrete().unwrap() as f64), 1.0);

        let raw: Vec<f64> = (0..=20).map(|x| 0.5f64.powi(x + 1)).collect();
        let geo = WeightedMeasure::from_pmf(&raw).unwrap().normalize().unwrap();
        let mean = geo.integrate(|p| p.as_discrete().unwrap() as f64);
        // Truncating at 20 costs 22·2⁻²¹ ≈ 1.0e-5 of the untruncated mean 1.
        let head: f64 = (0..=20).map(|x| x as f64 * 0.5f64.powi(x + 1)).sum();
        let exact = head / (1.0 - 0.5f64.powi(21));
        assert!((mean - exact).abs() < 1e-14, "{mean} vs {exact}");
        assert!((mean - 1.0).abs() < 1.1e-5, "{mean}");
    }

    #[test]
    fn normalize_examples() {
        let n = disc(&[(0, 2.0)]).normalize().unwrap();
        assert_eq!(n.weight(0), 1.0);
        let n = disc(&[(0, 1.0), (1, 3.0)]).normalize().unwrap();
        assert_eq!(n.weight(0), 0.25);
        assert_eq!(n.weight(1), 0.75);
        let m = disc(&[(0, 0.3), (3, 0.7), (9, 1.9), (2, 1e-3)]);
        let once = m.normalize().unwrap();
        let twice = once.normalize().unwrap();
        assert!((once.exact_mass() - 1.0).abs() < 1e-12);
        let a: Vec<f64> = once.atoms().map(|(_, w)| w).collect();
        let b: Vec<f64> = twice.atoms().map(|(_, w)| w).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn rebuild_matches_fresh_sum() {
        let mut m = disc(&[(0, 0.1), (1, 0.2), (2, 0.3)]);
        m.rebuild_sampler();
        assert_eq!(m.sampler_total(), Fenwick::from_weights(&[0.1, 0.2, 0.3]).total());
        assert_eq!(m.total_mass(), 0.1 + 0.2 + 0.3);
    }

    #[test]
    fn drift_after_a_million_signed_updates() {
        let mut rng = RngStream::new(5);
        let mut m = disc(&[(0, 1.0)]);
        for _ in 0..1_000_000 {
            let x = (rng.uniform() * 50.0) as u64;
            let w = rng.uniform() * 0.7;
            let current = m.weight(x);
            let sign = if rng.uniform() < 0.45 && current > w { -1.0 } else { 1.0 };
            m.add_delta(&SignedDelta::dirac(x, sign * w)).unwrap();
        }
        m.rebuild_sampler();
        let exact = m.exact_mass();
        assert!(((m.total_mass() - exact) / exact).abs() < 1e-9);
        assert!(((m.sampler_total() - exact) / exact).abs() < 1e-9);
    }

    #[test]
    fn euclidean_atoms_are_appended() {
        let p = ColorPoint::euclidean(vec![0.5, -1.0]).unwrap();
        let mut m = WeightedMeasure::euclidean(2);
        m.add_delta(&SignedDelta::dirac(p.clone(), 1.0)).unwrap();
        m.add_delta(&SignedDelta::dirac(p.clone(), 2.0)).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.weight_of(&p), 3.0);
        let wrong = SignedDelta::dirac(ColorPoint::euclidean(vec![1.0]).unwrap(), 1.0);
        assert!(matches!(m.add_delta(&wrong), Err(Error::SpaceMismatch { .. })));
        assert!(ColorPoint::euclidean(vec![f64::NAN]).is_err());
    }

    #[test]
    fn json_dump_round_trips() {
        let m = disc(&[(0, 0.1), (4, 1.0 / 3.0)]);
        let s = m.to_json();
        assert!(
            s.starts_with(
                r#"{"space":"discrete","dim":1,"atoms":[[0,1.0000000000000001e-1],[4,3.3333333333333331e-1]]"#
            ),
            "{s}"
        );
        let back = WeightedMeasure::from_json(&s).unwrap();
        assert_eq!(back.weight(4), 1.0 / 3.0);

        let e = WeightedMeasure::dirac(ColorPoint::euclidean(vec![1.5, 2.0]).unwrap(), 0.25).unwrap();
        let back = WeightedMeasure::from_json(&e.to_json()).unwrap();
        assert_eq!(back.space(), Space::Euclidean { dim: 2 });
        assert_eq!(back.atoms().next().unwrap().1, 0.25);
    }

    proptest! {
        #[test]
        fn mass_is_additive(ws in proptest::collection::vec((0u64..20, 0.0f64..5.0, any::<bool>()), 1..200)) {
            let mut m = disc(&[(0, 1.0)]);
            let mut expected = 1.0;
            for (x, w, neg) in ws {
                let w = if neg { -w.min(m.weight(x)) } else { w };
                m.add_delta(&SignedDelta::dirac(x, w)).unwrap();
                expected += w;
            }
            prop_assert!((m.total_mass() - expected).abs() <= 1e-9 * expected.max(1.0));
            prop_assert!((m.exact_mass() - expected).abs() <= 1e-9 * expected.max(1.0));
        }

        #[test]
        fn aggregation_is_order_invariant(mut ds in proptest::collection::vec((0u64..10, 0.0f64..3.0), 1..50), seed in 0u64..1000) {
            let f = |p: &ColorPoint| (p.as_discrete().unwrap() as f64).sqrt() + 1.0;
            let mut a = WeightedMeasure::discrete();
            for &(x, w) in &ds { a.add_delta(&SignedDelta::dirac(x, w)).unwrap(); }
            let mut rng = RngStream::new(seed);
            for i in (1..ds.len()).rev() {
                let j = (rng.uniform() * (i + 1) as f64) as usize;
                ds.swap(i, j);
            }
            let mut b = WeightedMeasure::discrete();
            for &(x, w) in &ds { b.add_delta(&SignedDelta::dirac(x, w)).unwrap(); }
            assert_relative_eq!(a.integrate(f), b.integrate(f), max_relative = 1e-12);
        }
    }
}

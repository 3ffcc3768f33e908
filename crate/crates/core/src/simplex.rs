//! Probability vectors over actions, action sets, and simplex geometry.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A probability vector over the action set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Scalar")]
pub struct ActionDist<T> {
    weights: Vec<T>,
}

impl<T: Scalar> ActionDist<T> {
    /// Validates nonnegativity and unit mass.
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("no actions".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < T::zero()) {
            return Err(Error::InvalidDistribution(format!("weight {w} is negative or non-finite")));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::sum_tol() {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        Ok(Self { weights })
    }

    /// Wraps weights known to be valid up to rounding.
    pub(crate) fn from_raw(weights: Vec<T>) -> Self {
        Self { weights }
    }

    /// Euclidean projection of an arbitrary vector onto the simplex.
    pub fn project(v: &[T]) -> Self {
        Self { weights: project_to_simplex(v) }
    }

    /// Point mass on action `x`.
    pub fn vertex(n: usize, x: usize) -> Self {
        let mut weights = vec![T::zero(); n];
        weights[x] = T::one();
        Self { weights }
    }

    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![T::one() / T::count(n); n] }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<T> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, x: usize) -> T {
        self.weights[x]
    }

    /// `beta * self + (1 - beta) * other`.
    pub fn mix(&self, other: &Self, beta: T) -> Self {
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(&a, &b)| beta * a + (T::one() - beta) * b)
            .collect();
        Self { weights }
    }

    pub fn distance(&self, other: &Self) -> T {
        euclid(&self.weights, &other.weights)
    }

    /// Indices with positive weight.
    pub fn support(&self) -> ActionSet {
        ActionSet::from_indices(
            self.weights.iter().enumerate().filter(|(_, w)| **w > T::zero()).map(|(i, _)| i),
        )
    }

    /// Distance to the simplex (zero for valid points up to rounding).
    pub fn simplex_residual(&self) -> T {
        euclid(&self.weights, &project_to_simplex(&self.weights))
    }
}

/// A subset of actions stored as a bit mask (at most 64 actions).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ActionSet(u64);

pub const MAX_ACTIONS: usize = 64;

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);

    pub fn singleton(x: usize) -> Self {
        ActionSet(1u64 << x)
    }

    pub fn full(n: usize) -> Self {
        if n >= 64 {
            ActionSet(u64::MAX)
        } else {
            ActionSet((1u64 << n) - 1)
        }
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(items: I) -> Self {
        let mut s = ActionSet::EMPTY;
        for x in items {
            s.insert(x);
        }
        s
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn insert(&mut self, x: usize) {
        self.0 |= 1u64 << x;
    }

    pub fn contains(self, x: usize) -> bool {
        x < 64 && self.0 & (1u64 << x) != 0
    }

    pub fn union(self, other: Self) -> Self {
        ActionSet(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        ActionSet(self.0 & other.0)
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Smallest member.
    pub fn first(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    /// Largest member.
    pub fn last(self) -> Option<usize> {
        (self.0 != 0).then(|| 63 - self.0.leading_zeros() as usize)
    }

    /// Members in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let x = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(x)
            }
        })
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }

    /// Renders members with the given labels, e.g. `{x1,x2}`.
    pub fn label(self, names: &[String]) -> String {
        let parts: Vec<&str> = self.iter().map(|x| names[x].as_str()).collect();
        format!("{{{}}}", parts.join(","))
    }
}

impl fmt::Debug for ActionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for ActionSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_vec().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActionSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        if let Some(x) = v.iter().find(|x| **x >= MAX_ACTIONS) {
            return Err(serde::de::Error::custom(format!("action index {x} exceeds {MAX_ACTIONS}")));
        }
        Ok(ActionSet::from_indices(v))
    }
}

pub fn euclid<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// Sort-based exact Euclidean projection onto the probability simplex.
pub fn project_to_simplex<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut u: Vec<T> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumulative = T::zero();
    let mut lambda = T::zero();
    for (j, &uj) in u.iter().enumerate() {
        cumulative += uj;
        let candidate = (cumulative - T::one()) / T::count(j + 1);
        if uj - candidate > T::zero() {
            lambda = candidate;
        }
    }
    v.iter().map(|&x| (x - lambda).max(T::zero())).collect()
}

/// Distance from `sigma` to the convex hull of the vertices in `set`.
pub fn hull_distance<T: Scalar>(sigma: &[T], set: ActionSet) -> T {
    let inside: Vec<T> = set.iter().map(|x| sigma[x]).collect();
    let mut off = T::zero();
    for (x, &w) in sigma.iter().enumerate() {
        if !set.contains(x) {
            off += w * w;
        }
    }
    if inside.is_empty() {
        return T::infinity();
    }
    let proj = project_to_simplex(&inside);
    let on: T = inside.iter().zip(&proj).map(|(&a, &b)| (a - b) * (a - b)).sum();
    (off + on).sqrt()
}

/// All compositions of `resolution` into `dim` nonnegative parts, in lexicographic order.
pub fn lattice_counts(dim: usize, resolution: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if dim == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=left).rev() {
            prefix.push(k);
            rec(dim - 1, left - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim > 0 {
        rec(dim, resolution, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

/// Barycentric lattice points `counts / resolution`.
pub fn lattice_points<T: Scalar>(dim: usize, resolution: usize) -> Vec<Vec<T>> {
    let r = T::count(resolution);
    lattice_counts(dim, resolution)
        .into_iter()
        .map(|c| c.into_iter().map(|k| T::count(k) / r).collect())
        .collect()
}

/// Index of a composition within `lattice_counts(3, resolution)`.
pub(crate) fn lattice3_index(resolution: usize, i: usize, j: usize) -> usize {
    // Rows are ordered by decreasing first coordinate; row with first = i has
    // (resolution - i + 1) entries ordered by decreasing second coordinate.
    let rows_before: usize = (i + 1..=resolution).map(|a| resolution - a + 1).sum();
    rows_before + (resolution - i - j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distribution_validation() {
        assert!(ActionDist::new(vec![0.5, 0.5]).is_ok());
        assert!(ActionDist::new(vec![0.5, 0.4]).is_err());
        assert!(ActionDist::new(vec![1.5, -0.5]).is_err());
        assert!(ActionDist::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn action_set_basics() {
        let s = ActionSet::from_indices([2, 0, 5]);
        assert_eq!(s.to_vec(), vec![0, 2, 5]);
        assert_eq!(s.first(), Some(0));
        assert_eq!(s.last(), Some(5));
        assert!(s.contains(2) && !s.contains(1));
        assert_eq!(ActionSet::full(3).len(), 3);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "[0,2,5]");
        assert_eq!(serde_json::from_str::<ActionSet>(&json).unwrap(), s);
    }

    #[test]
    fn projection_known_values() {
        let p = project_to_simplex(&[1.0, 1.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = project_to_simplex(&[2.0, 0.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_to_simplex::<f64>(&[0.2, 0.3, 0.5]);
        assert!((p[0] - 0.2).abs() < 1e-15 && (p[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hull_distance_examples() {
        let d = hull_distance(&[1.0, 0.0], ActionSet::singleton(1));
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(hull_distance(&[0.5, 0.5], ActionSet::full(2)), 0.0);
        let d = hull_distance(&[0.5, 0.25, 0.25], ActionSet::from_indices([0, 1]));
        // nearest point on edge e1-e2 is (0.625, 0.375, 0)
        let expected = (2.0 * 0.125f64.powi(2) + 0.25f64.powi(2)).sqrt();
        assert!((d - expected).abs() < 1e-15);
    }

    #[test]
    fn lattice_enumeration_and_index() {
        let c = lattice_counts(3, 4);
        assert_eq!(c.len(), 15);
        for (k, v) in c.iter().enumerate() {
            assert_eq!(lattice3_index(4, v[0], v[1]), k);
            assert_eq!(v.iter().sum::<usize>(), 4);
        }
        assert_eq!(lattice_counts(2, 3), vec![vec![3, 0], vec![2, 1], vec![1, 2], vec![0, 3]]);
    }

    proptest! {
        #[test]
        fn projection_lands_on_simplex_and_is_idempotent(v in proptest::collection::vec(-3.0f64..3.0, 1..6)) {
            let p = project_to_simplex(&v);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            let q = project_to_simplex(&p);
            prop_assert!(euclid(&p, &q) < 1e-12);
        }

        #[test]
        fn projection_is_nearest_among_vertices(v in proptest::collection::vec(-2.0f64..2.0, 2..5)) {
            let p = project_to_simplex(&v);
            let dp = euclid(&v, &p);
            for x in 0..v.len() {
                let e = ActionDist::<f64>::vertex(v.len(), x);
                prop_assert!(dp <= euclid(&v, e.weights()) + 1e-12);
            }
        }
    }
}

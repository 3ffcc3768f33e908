//! Exogenous policies given by tables over the parameter space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::simplex::{lattice_points, ActionSet};

/// Distance within which a parameter counts as lying on a boundary.
pub const SNAP_TOL: f64 = 1e-9;

/// [`SNAP_TOL`], widened for low-precision scalars.
fn snap_tol<T: Scalar>() -> T {
    T::lit(SNAP_TOL).max(T::epsilon() * T::lit(64.0))
}

/// A step policy on `[0, 1]`: one action set per open interval and per breakpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Table1D<T> {
    breakpoints: Vec<T>,
    interval_actions: Vec<ActionSet>,
    breakpoint_actions: Vec<ActionSet>,
}

impl<T: Scalar> Table1D<T> {
    /// Validates ordering, nonempty sets and upper hemicontinuity at breakpoints.
    pub fn new(breakpoints: Vec<T>, interval_actions: Vec<ActionSet>, breakpoint_actions: Vec<ActionSet>) -> Result<Self> {
        if interval_actions.len() != breakpoints.len() + 1 || breakpoint_actions.len() != breakpoints.len() {
            return Err(Error::validation(
                "table_partition",
                format!(
                    "{} breakpoints need {} interval sets and {} breakpoint sets",
                    breakpoints.len(),
                    breakpoints.len() + 1,
                    breakpoints.len()
                ),
            ));
        }
        if breakpoints.iter().any(|b| !(*b >= T::zero() && *b <= T::one()))
            || breakpoints.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::validation("table_partition", "breakpoints must be strictly increasing in [0,1]"));
        }
        if interval_actions.iter().chain(&breakpoint_actions).any(|s| s.is_empty()) {
            return Err(Error::validation("table_partition", "empty action set"));
        }
        for (k, b) in breakpoint_actions.iter().enumerate() {
            let adjacent = interval_actions[k].union(interval_actions[k + 1]);
            if !adjacent.is_subset(*b) {
                return Err(Error::validation(
                    "upper_hemicontinuity",
                    format!("breakpoint {k} set {b:?} misses neighbours {adjacent:?}"),
                ));
            }
        }
        Ok(Self { breakpoints, interval_actions, breakpoint_actions })
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    pub fn interval_actions(&self) -> &[ActionSet] {
        &self.interval_actions
    }

    pub fn breakpoint_actions(&self) -> &[ActionSet] {
        &self.breakpoint_actions
    }

    /// Largest action index referenced.
    pub fn max_action(&self) -> usize {
        self.interval_actions
            .iter()
            .chain(&self.breakpoint_actions)
            .filter_map(|s| s.last())
            .max()
            .unwrap_or(0)
    }

    /// Action set at `theta`, snapping to breakpoints within [`SNAP_TOL`].
    pub fn at(&self, theta: T) -> ActionSet {
        let snap = snap_tol::<T>();
        let mut interval = 0;
        for (k, &b) in self.breakpoints.iter().enumerate() {
            if (theta - b).abs() <= snap {
                return self.breakpoint_actions[k];
            }
            if theta > b {
                interval = k + 1;
            }
        }
        self.interval_actions[interval]
    }
}

/// A convex polygon in barycentric coordinates of the 2-simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Region<T> {
    pub vertices: Vec<[T; 3]>,
    pub actions: ActionSet,
}

/// A policy on the 2-simplex given by convex regions. At a point lying in
/// several closed regions the action set is the union of theirs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TableSimplex<T> {
    regions: Vec<Region<T>>,
    #[serde(skip)]
    planar: Vec<Vec<(T, T)>>,
}

/// Planar embedding of barycentric coordinates (an isometry up to a factor √2).
#[inline]
fn planar<T: Scalar>(p: &[T]) -> (T, T) {
    let half = T::lit(0.5);
    (p[1] + p[2] * half, p[2] * T::lit(3f64.sqrt() * 0.5))
}

impl<T: Scalar> TableSimplex<T> {
    pub fn new(regions: Vec<Region<T>>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::validation("region_cover", "no regions"));
        }
        let mut planar_regions = Vec::with_capacity(regions.len());
        for (k, r) in regions.iter().enumerate() {
            if r.vertices.len() < 3 || r.actions.is_empty() {
                return Err(Error::validation("region_shape", format!("region {k} is degenerate")));
            }
            if r.vertices.iter().any(|v| {
                v.iter().any(|c| *c < T::lit(-1e-12)) || (v.iter().copied().sum::<T>() - T::one()).abs() > T::lit(1e-9)
            }) {
                return Err(Error::validation("region_shape", format!("region {k} has a vertex off the simplex")));
            }
            let mut pts: Vec<(T, T)> = r.vertices.iter().map(|v| planar(v)).collect();
            let area = signed_area(&pts);
            if area < T::zero() {
                pts.reverse();
            }
            if !is_convex(&pts) {
                return Err(Error::validation("region_shape", format!("region {k} is not convex")));
            }
            planar_regions.push(pts);
        }
        let table = Self { regions, planar: planar_regions };
        for p in lattice_points::<T>(3, 60) {
            if table.containing(&p).is_empty() {
                return Err(Error::validation("region_cover", format!("point {p:?} is not covered")));
            }
        }
        Ok(table)
    }

    pub fn regions(&self) -> &[Region<T>] {
        &self.regions
    }

    pub fn max_action(&self) -> usize {
        self.regions.iter().filter_map(|r| r.actions.last()).max().unwrap_or(0)
    }

    fn ensure_planar(&self) -> std::borrow::Cow<'_, [Vec<(T, T)>]> {
        if self.planar.len() == self.regions.len() {
            std::borrow::Cow::Borrowed(&self.planar)
        } else {
            let mut v = Vec::new();
            for r in &self.regions {
                let mut pts: Vec<(T, T)> = r.vertices.iter().map(|v| planar(v)).collect();
                if signed_area(&pts) < T::zero() {
                    pts.reverse();
                }
                v.push(pts);
            }
            std::borrow::Cow::Owned(v)
        }
    }

    /// Union of the action sets of all closed regions containing `theta`.
    fn containing(&self, theta: &[T]) -> ActionSet {
        let q = planar(theta);
        let snap = snap_tol::<T>();
        let planar_regions = self.ensure_planar();
        let mut set = ActionSet::EMPTY;
        for (r, pts) in self.regions.iter().zip(planar_regions.iter()) {
            if min_edge_distance(pts, q) >= -snap {
                set = set.union(r.actions);
            }
        }
        set
    }

    /// Action set at `theta`; points marginally outside every region (rounding)
    /// take the set of the nearest region.
    pub fn at(&self, theta: &[T]) -> ActionSet {
        let set = self.containing(theta);
        if !set.is_empty() {
            return set;
        }
        let q = planar(theta);
        let planar_regions = self.ensure_planar();
        let (best, _) = planar_regions
            .iter()
            .enumerate()
            .map(|(k, pts)| (k, min_edge_distance(pts, q)))
            .fold((0, T::neg_infinity()), |acc, c| if c.1 > acc.1 { c } else { acc });
        self.regions[best].actions
    }

    /// Rebuilds the planar cache after deserialization.
    pub fn rebuild(self) -> Result<Self> {
        Self::new(self.regions)
    }
}

fn signed_area<T: Scalar>(pts: &[(T, T)]) -> T {
    let n = pts.len();
    let mut a = T::zero();
    for i in 0..n {
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[(i + 1) % n];
        a += x0 * y1 - x1 * y0;
    }
    a * T::lit(0.5)
}

fn is_convex<T: Scalar>(pts: &[(T, T)]) -> bool {
    let n = pts.len();
    (0..n).all(|i| {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        let c = pts[(i + 2) % n];
        (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0) >= T::lit(-1e-12)
    })
}

/// Smallest signed distance from `q` to the edge lines of a counter-clockwise
/// polygon; nonnegative iff `q` is inside.
fn min_edge_distance<T: Scalar>(pts: &[(T, T)], q: (T, T)) -> T {
    let n = pts.len();
    let mut worst = T::infinity();
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        let (ex, ey) = (b.0 - a.0, b.1 - a.1);
        let len = (ex * ex + ey * ey).sqrt();
        if len <= T::zero() {
            continue;
        }
        let d = (ex * (q.1 - a.1) - ey * (q.0 - a.0)) / len;
        worst = worst.min(d);
    }
    worst
}

/// Barycentric vertex of the simplex.
pub fn corner<T: Scalar>(k: usize) -> [T; 3] {
    let mut v = [T::zero(); 3];
    v[k] = T::one();
    v
}

fn pt<T: Scalar>(a: f64, b: f64, c: f64) -> [T; 3] {
    [T::lit(a), T::lit(b), T::lit(c)]
}

/// Cyclic rotation policy around the barycenter: the region nearest `e1`
/// plays `x2`, nearest `e2` plays `x3`, nearest `e3` plays `x1`. Region
/// boundaries are segments from the barycenter to `(1/4, 3/4, 0)`,
/// `(0, 1/4, 3/4)` and `(3/4, 0, 1/4)`; with this tilt each lap around the
/// barycenter expands, so the barycenter repels and paths settle on a cycle.
pub fn cyclic_shift<T: Scalar>() -> TableSimplex<T> {
    let third = 1.0 / 3.0;
    let c = pt(third, third, third);
    let p12 = pt(0.25, 0.75, 0.0);
    let p23 = pt(0.0, 0.25, 0.75);
    let p31 = pt(0.75, 0.0, 0.25);
    TableSimplex::new(vec![
        Region { vertices: vec![c, p31, corner(0), p12], actions: ActionSet::singleton(1) },
        Region { vertices: vec![c, p12, corner(1), p23], actions: ActionSet::singleton(2) },
        Region { vertices: vec![c, p23, corner(2), p31], actions: ActionSet::singleton(0) },
    ])
    .expect("built-in regions are valid")
}

/// The boundary points of [`cyclic_shift`] in order `(P12, P23, P31)`.
pub fn cyclic_shift_spokes<T: Scalar>() -> [[T; 3]; 3] {
    [pt(0.25, 0.75, 0.0), pt(0.0, 0.25, 0.75), pt(0.75, 0.0, 0.25)]
}

/// Rotation policy whose inner triangle `A = (2/3, 0, 1/3)`,
/// `B = (1/3, 2/3, 0)`, `C = (0, 1/3, 2/3)` is split into three sectors around
/// the barycenter; the corner triangles outside it allow every action.
pub fn robust_base<T: Scalar>() -> TableSimplex<T> {
    let third = 1.0 / 3.0;
    let c = pt(third, third, third);
    let a = pt(2.0 / 3.0, 0.0, third);
    let b = pt(third, 2.0 / 3.0, 0.0);
    let cc = pt(0.0, third, 2.0 / 3.0);
    let all = ActionSet::full(3);
    TableSimplex::new(vec![
        Region { vertices: vec![a, b, c], actions: ActionSet::singleton(1) },
        Region { vertices: vec![b, cc, c], actions: ActionSet::singleton(2) },
        Region { vertices: vec![cc, a, c], actions: ActionSet::singleton(0) },
        Region { vertices: vec![a, corner(0), b], actions: all },
        Region { vertices: vec![b, corner(1), cc], actions: all },
        Region { vertices: vec![cc, corner(2), a], actions: all },
    ])
    .expect("built-in regions are valid")
}

/// Copies every region, adding action `dup` wherever `orig` appears.
pub fn with_duplicate<T: Scalar>(table: &TableSimplex<T>, orig: usize, dup: usize) -> TableSimplex<T> {
    let regions = table
        .regions()
        .iter()
        .map(|r| {
            let mut actions = r.actions;
            if actions.contains(orig) {
                actions.insert(dup);
            }
            Region { vertices: r.vertices.clone(), actions }
        })
        .collect();
    TableSimplex::new(regions).expect("duplicated regions keep their geometry")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[usize]) -> ActionSet {
        ActionSet::from_indices(v.iter().copied())
    }

    fn example_four() -> Table1D<f64> {
        Table1D::new(vec![1.0 / 3.0, 2.0 / 3.0], vec![s(&[0]), s(&[1]), s(&[0])], vec![s(&[0, 1]), s(&[0, 1])]).unwrap()
    }

    #[test]
    fn one_dimensional_lookup() {
        let t = example_four();
        assert_eq!(t.at(0.5), s(&[1]));
        assert_eq!(t.at(1.0 / 3.0), s(&[0, 1]));
        assert_eq!(t.at(1.0 / 3.0 + 5e-10), s(&[0, 1]));
        assert_eq!(t.at(0.2), s(&[0]));
        assert_eq!(t.at(0.9), s(&[0]));
        assert_eq!(t.at(2.0 / 3.0), s(&[0, 1]));
    }

    #[test]
    fn hemicontinuity_enforced() {
        let err = Table1D::new(vec![0.5], vec![s(&[0]), s(&[1])], vec![s(&[0])]).unwrap_err();
        assert!(matches!(err, Error::Validation { ref invariant, .. } if invariant == "upper_hemicontinuity"));
        assert!(Table1D::new(vec![0.6, 0.5], vec![s(&[0]); 3], vec![s(&[0]); 2]).is_err());
    }

    #[test]
    fn cyclic_shift_regions() {
        let t = cyclic_shift::<f64>();
        assert_eq!(t.at(&[0.9, 0.05, 0.05]), s(&[1]));
        assert_eq!(t.at(&[0.05, 0.9, 0.05]), s(&[2]));
        assert_eq!(t.at(&[0.05, 0.05, 0.9]), s(&[0]));
        assert_eq!(t.at(&[1.0, 0.0, 0.0]), s(&[1]));
        let third = 1.0 / 3.0;
        assert_eq!(t.at(&[third, third, third]), s(&[0, 1, 2]));
        // on the spoke towards (1/4, 3/4, 0)
        let p = [0.5 * (third + 0.25), 0.5 * (third + 0.75), 0.5 * third];
        assert_eq!(t.at(&p), s(&[1, 2]));
    }

    #[test]
    fn robust_base_regions() {
        let t = robust_base::<f64>();
        assert_eq!(t.at(&[0.5, 0.3, 0.2]), s(&[1]));
        assert_eq!(t.at(&[0.95, 0.03, 0.02]), s(&[0, 1, 2]));
        assert_eq!(t.at(&[1.0 / 3.0, 0.5, 1.0 / 6.0]), s(&[1, 2]));
    }

    #[test]
    fn coverage_is_checked() {
        let third = 1.0 / 3.0;
        let r = Region { vertices: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [third, third, third]], actions: s(&[0]) };
        assert!(TableSimplex::new(vec![r]).is_err());
    }

    #[test]
    fn serde_rebuilds_cache() {
        let t = cyclic_shift::<f64>();
        let json = serde_json::to_string(&t).unwrap();
        let back: TableSimplex<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back.at(&[0.9, 0.05, 0.05]), s(&[1]));
        let back = back.rebuild().unwrap();
        assert_eq!(back, t);
    }
}

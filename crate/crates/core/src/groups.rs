//! Overlapping group structures over coefficient space.
//!
//! A [`GroupSet`] is an ordered list of (possibly overlapping) index sets.
//! [`replicate_across_tasks`] stacks a per-task structure into the
//! multitask coordinate space `t * p + j`, and [`DuplicationMap`] lifts
//! an overlapping structure into a disjoint one by giving every
//! (group, member) pair its own coordinate.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Validated collection of index sets over `[0, p)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupSet {
    p: usize,
    groups: Vec<Vec<usize>>,
    max_size: usize,
}

impl GroupSet {
    /// Builds a group set from unsigned indices. Indices inside a group are
    /// sorted; group order is kept as given.
    pub fn new(p: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("coefficient dimension p must be at least 1"));
        }
        if groups.is_empty() {
            return Err(Error::invalid("at least one group is required"));
        }
        let mut checked = Vec::with_capacity(groups.len());
        for (g, mut members) in groups.into_iter().enumerate() {
            if members.is_empty() {
                return Err(Error::EmptyGroup { group: g });
            }
            members.sort_unstable();
            for pair in members.windows(2) {
                if pair[0] == pair[1] {
                    return Err(Error::DuplicateWithinGroup {
                        group: g,
                        index: pair[0],
                    });
                }
            }
            if let Some(&last) = members.last() {
                if last >= p {
                    return Err(Error::IndexOutOfRange {
                        group: g,
                        index: last as i64,
                        p,
                    });
                }
            }
            checked.push(members);
        }
        let max_size = checked.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            p,
            groups: checked,
            max_size,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of groups, `M`.
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Size of the largest group, `B`.
    pub fn max_group_size(&self) -> usize {
        self.max_size
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    /// For every coordinate, the number of groups containing it.
    pub fn coverage(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.p];
        for members in &self.groups {
            for &j in members {
                counts[j] += 1;
            }
        }
        counts
    }

    /// First coordinate contained in no group, if any.
    pub fn first_uncovered(&self) -> Option<usize> {
        self.coverage().iter().position(|&c| c == 0)
    }

    /// Returns the first overlapping pair as `(first, second, index)`.
    pub fn first_overlap(&self) -> Option<(usize, usize, usize)> {
        let mut owner: Vec<Option<usize>> = vec![None; self.p];
        for (g, members) in self.groups.iter().enumerate() {
            for &j in members {
                if let Some(prev) = owner[j] {
                    return Some((prev, g, j));
                }
                owner[j] = Some(g);
            }
        }
        None
    }

    pub fn is_disjoint(&self) -> bool {
        self.first_overlap().is_none()
    }

    /// Same groups in the order given by `order` (a permutation of `0..M`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "group permutation",
                expected: self.len(),
                got: order.len(),
            });
        }
        let mut seen = vec![false; self.len()];
        for &g in order {
            if g >= self.len() || std::mem::replace(&mut seen[g], true) {
                return Err(Error::invalid("group order is not a permutation"));
            }
        }
        Ok(Self {
            p: self.p,
            groups: order.iter().map(|&g| self.groups[g].clone()).collect(),
            max_size: self.max_size,
        })
    }

    /// Singleton groups `{0}, {1}, ..., {p-1}`.
    pub fn singletons(p: usize) -> Result<Self> {
        Self::new(p, (0..p).map(|j| vec![j]).collect())
    }
}

/// Validates raw (signed) group lists, as read from JSON.
pub fn build_group_set(groups: &[Vec<i64>], p: usize) -> Result<GroupSet> {
    let mut converted = Vec::with_capacity(groups.len());
    for (g, members) in groups.iter().enumerate() {
        let mut out = Vec::with_capacity(members.len());
        for &idx in members {
            if idx < 0 || idx as u64 >= p as u64 {
                return Err(Error::IndexOutOfRange {
                    group: g,
                    index: idx,
                    p,
                });
            }
            out.push(idx as usize);
        }
        converted.push(out);
    }
    GroupSet::new(p, converted)
}

/// Contiguous groups `{i*shift, ..., i*shift + size - 1}` for
/// `i = 0..=(p - size) / shift`, ending exactly at `p - 1`.
pub fn chain_groups(p: usize, size: usize, shift: usize) -> Result<GroupSet> {
    if size == 0 || shift == 0 {
        return Err(Error::invalid("chain group size and shift must be at least 1"));
    }
    if size > p {
        return Err(Error::invalid(format!(
            "chain group size {size} exceeds dimension {p}"
        )));
    }
    let span = p - size;
    if span % shift != 0 {
        return Err(Error::GeometryMismatch { span, shift });
    }
    let groups = (0..=span / shift)
        .map(|i| (i * shift..i * shift + size).collect())
        .collect();
    GroupSet::new(p, groups)
}

/// A per-task group structure stacked over `T` tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskLayout {
    tasks: usize,
    base: GroupSet,
    replicated: GroupSet,
}

impl TaskLayout {
    pub fn tasks(&self) -> usize {
        self.tasks
    }

    /// Per-task coefficient dimension.
    pub fn p(&self) -> usize {
        self.base.p()
    }

    pub fn base(&self) -> &GroupSet {
        &self.base
    }

    /// Groups over the stacked `T * p` coordinates.
    pub fn replicated(&self) -> &GroupSet {
        &self.replicated
    }
}

/// Group `g` of the result holds `t * p + j` for every task `t` and every
/// `j` in the per-task group `g`.
pub fn replicate_across_tasks(gs: &GroupSet, tasks: usize) -> Result<TaskLayout> {
    if tasks == 0 {
        return Err(Error::invalid("task count must be at least 1"));
    }
    let p = gs.p();
    let groups = gs
        .groups()
        .iter()
        .map(|members| {
            (0..tasks)
                .flat_map(|t| members.iter().map(move |&j| t * p + j))
                .collect()
        })
        .collect();
    Ok(TaskLayout {
        tasks,
        base: gs.clone(),
        replicated: GroupSet::new(tasks * p, groups)?,
    })
}

/// Correspondence between original coordinates and duplicated
/// per-group coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicationMap {
    source: GroupSet,
    segments: Vec<Range<usize>>,
    origin: Vec<usize>,
}

/// Lays out one duplicated segment per group, in group order.
pub fn duplication_map(gs: &GroupSet) -> DuplicationMap {
    let mut segments = Vec::with_capacity(gs.len());
    let mut origin = Vec::new();
    for members in gs.groups() {
        let start = origin.len();
        origin.extend_from_slice(members);
        segments.push(start..origin.len());
    }
    DuplicationMap {
        source: gs.clone(),
        segments,
        origin,
    }
}

impl DuplicationMap {
    pub fn source(&self) -> &GroupSet {
        &self.source
    }

    /// Dimension of the duplicated space, `sum |G|`.
    pub fn total_dup(&self) -> usize {
        self.origin.len()
    }

    /// Original dimension.
    pub fn p(&self) -> usize {
        self.source.p()
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    /// `x[j] = sum of w_dup[d] over d with origin(d) = j`.
    pub fn expand(&self, w_dup: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dup(w_dup.len())?;
        let mut x = Array1::zeros(self.p());
        for (d, &j) in self.origin.iter().enumerate() {
            x[j] += w_dup[d];
        }
        Ok(x)
    }

    /// Slice form of [`expand`](Self::expand); lengths are debug-checked.
    pub(crate) fn expand_into(&self, w_dup: &[f64], x: &mut [f64]) {
        debug_assert_eq!(w_dup.len(), self.total_dup());
        debug_assert_eq!(x.len(), self.p());
        x.iter_mut().for_each(|v| *v = 0.0);
        for (&j, &w) in self.origin.iter().zip(w_dup) {
            x[j] += w;
        }
    }

    /// Adjoint of `expand`: `w_dup[d] = x[origin(d)]`.
    pub(crate) fn gather_into(&self, x: &[f64], w_dup: &mut [f64]) {
        debug_assert_eq!(w_dup.len(), self.total_dup());
        for (out, &j) in w_dup.iter_mut().zip(&self.origin) {
            *out = x[j];
        }
    }

    pub fn gather(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.p() {
            return Err(Error::DimensionMismatch {
                context: "gather",
                expected: self.p(),
                got: x.len(),
            });
        }
        Ok(self.origin.iter().map(|&j| x[j]).collect())
    }

    /// Column `d` of the result is column `origin(d)` of `design`.
    pub fn lift_design(&self, design: ArrayView2<f64>) -> Result<Array2<f64>> {
        if design.ncols() != self.p() {
            return Err(Error::DimensionMismatch {
                context: "lift_design columns",
                expected: self.p(),
                got: design.ncols(),
            });
        }
        let mut lifted = Array2::zeros((design.nrows(), self.total_dup()));
        for (d, &j) in self.origin.iter().enumerate() {
            lifted.column_mut(d).assign(&design.column(j));
        }
        Ok(lifted)
    }

    fn check_dup(&self, got: usize) -> Result<()> {
        if got != self.total_dup() {
            return Err(Error::DimensionMismatch {
                context: "duplicated vector",
                expected: self.total_dup(),
                got,
            });
        }
        Ok(())
    }
}

/// JSON group source: either explicit lists or a chain generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupSpec {
    Chain { chain: ChainSpec },
    Explicit { p: usize, groups: Vec<Vec<i64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub p: usize,
    #[serde(rename = "B")]
    pub size: usize,
    pub shift: usize,
}

impl GroupSpec {
    pub fn build(&self) -> Result<GroupSet> {
        match self {
            GroupSpec::Chain { chain } => chain_groups(chain.p, chain.size, chain.shift),
            GroupSpec::Explicit { p, groups } => build_group_set(groups, *p),
        }
    }

    pub fn explicit(gs: &GroupSet) -> Self {
        GroupSpec::Explicit {
            p: gs.p(),
            groups: gs
                .groups()
                .iter()
                .map(|g| g.iter().map(|&j| j as i64).collect())
                .collect(),
        }
    }
}

//! Concept filtering and realm selection.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use super::TaxonomyDag;
use crate::error::Result;

/// Filtering rules, checked in this order; a rejection records the first that fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FilterRule {
    Offensive = 1,
    NonVisual = 2,
    NotLeaf = 3,
    TooFewImages = 4,
}

impl FilterRule {
    pub fn code(self) -> &'static str {
        match self {
            FilterRule::Offensive => "rule-1",
            FilterRule::NonVisual => "rule-2",
            FilterRule::NotLeaf => "rule-3",
            FilterRule::TooFewImages => "rule-4",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            FilterRule::Offensive => "offensive content",
            FilterRule::NonVisual => "non-visual concept",
            FilterRule::NotLeaf => "not a leaf node",
            FilterRule::TooFewImages => "too few raw images",
        }
    }
}

impl fmt::Display for FilterRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.code(), self.describe())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterOutcome {
    pub valid: Vec<String>,
    pub rejected: Vec<(String, FilterRule)>,
}

/// Keeps the concepts that pass all four rules, in node order.
pub fn filter_concepts(dag: &TaxonomyDag, min_images: u64) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for (i, node) in dag.nodes().iter().enumerate() {
        let failed = if node.flags.offensive {
            Some(FilterRule::Offensive)
        } else if node.flags.non_visual {
            Some(FilterRule::NonVisual)
        } else if !dag.is_leaf(i) {
            Some(FilterRule::NotLeaf)
        } else if node.image_count < min_images {
            Some(FilterRule::TooFewImages)
        } else {
            None
        };
        match failed {
            Some(rule) => out.rejected.push((node.id.clone(), rule)),
            None => out.valid.push(node.id.clone()),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RealmStatus {
    Selected,
    RejectedTooSmall,
    RejectedCovered,
    RejectedExcluded,
}

impl RealmStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RealmStatus::Selected => "selected",
            RealmStatus::RejectedTooSmall => "rejected_too_small",
            RealmStatus::RejectedCovered => "rejected_covered",
            RealmStatus::RejectedExcluded => "rejected_excluded",
        }
    }
}

impl fmt::Display for RealmStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RealmSubtree {
    pub root_concept: String,
    /// Valid concepts inside the sub-tree, sorted by id.
    pub valid_classes: Vec<String>,
    pub status: RealmStatus,
}

/// Applies the three realm principles in order: size, coverage, exclusion.
///
/// Coverage is judged against candidates that pass the size rule. Output is sorted by
/// candidate id; duplicate candidates are collapsed.
pub fn select_realms(
    dag: &TaxonomyDag,
    valid: &[String],
    candidates: &[String],
    excluded: &[String],
    min_classes: usize,
) -> Result<Vec<RealmSubtree>> {
    let valid_idx: HashSet<usize> = valid
        .iter()
        .map(|id| dag.index_of(id))
        .collect::<Result<_>>()?;
    let excluded_idx: HashSet<usize> = excluded
        .iter()
        .map(|id| dag.index_of(id))
        .collect::<Result<_>>()?;
    let cand_idx: BTreeSet<usize> = candidates
        .iter()
        .map(|id| dag.index_of(id))
        .collect::<Result<_>>()?;

    struct Entry {
        node: usize,
        members: HashSet<usize>,
        valid_classes: Vec<String>,
    }
    let entries: Vec<Entry> = cand_idx
        .iter()
        .map(|&c| {
            let members: HashSet<usize> = dag.subtree(c).into_iter().collect();
            let mut valid_classes: Vec<String> = members
                .iter()
                .filter(|m| valid_idx.contains(m))
                .map(|&m| dag.node(m).id.clone())
                .collect();
            valid_classes.sort();
            Entry { node: c, members, valid_classes }
        })
        .collect();

    let large: Vec<bool> = entries
        .iter()
        .map(|e| e.valid_classes.len() >= min_classes)
        .collect();

    let mut out: Vec<RealmSubtree> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let covered = || {
                entries
                    .iter()
                    .enumerate()
                    .any(|(j, other)| j != i && large[j] && other.members.contains(&e.node))
            };
            let status = if !large[i] {
                RealmStatus::RejectedTooSmall
            } else if covered() {
                RealmStatus::RejectedCovered
            } else if excluded_idx.contains(&e.node) {
                RealmStatus::RejectedExcluded
            } else {
                RealmStatus::Selected
            };
            RealmSubtree {
                root_concept: dag.node(e.node).id.clone(),
                valid_classes: e.valid_classes.clone(),
                status,
            }
        })
        .collect();
    out.sort_by(|a, b| a.root_concept.cmp(&b.root_concept));
    Ok(out)
}

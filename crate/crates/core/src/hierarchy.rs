//! The multi-level label tree and its adjacent-level transition maps.
//!
//! Levels are numbered 1 (coarsest, needs) through `H` (finest, locations);
//! level 0 is the implicit root. Each non-root node has exactly one parent
//! on the next-coarser level, so the structure is a tree and every leaf has
//! a unique root path of length `H`.
//!
//! A hierarchy is built from `H - 1` adjacency lists of
//! `(child_name, parent_name)` pairs ordered fine to coarse. Class indices
//! within a level are assigned by lexicographic name order, so two builds
//! from the same inputs agree bit for bit.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Depth of the taxonomy used throughout the experiments
/// (need, activity, category, location).
pub const DEFAULT_DEPTH: usize = 4;

/// A node address: `level` 0 is the root, `level == depth()` a leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub level: usize,
    pub index: usize,
}

/// The implicit root above the need level.
pub const ROOT: NodeId = NodeId { level: 0, index: 0 };

/// One level of the tree: its 1-based position and its class names in
/// index order (lexicographically sorted).
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyLevel {
    pub index: usize,
    pub class_names: Vec<String>,
}

impl HierarchyLevel {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }
}

/// Binary row-stochastic child-to-parent assignment between adjacent
/// levels, stored in dense-row form: `child_to_parent[c]` is the unique
/// parent of child `c`. Each row of the implied 0/1 matrix sums to one by
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    pub from_level: usize,
    pub to_level: usize,
    pub child_to_parent: Vec<u32>,
}

impl TransitionMatrix {
    /// Expand to the explicit `C^h x C^{h-1}` 0/1 matrix.
    pub fn dense(&self, parent_count: usize) -> Vec<Vec<u8>> {
        let mut rows = Vec::with_capacity(self.child_to_parent.len());
        for &p in &self.child_to_parent {
            let mut row = alloc::vec![0u8; parent_count];
            row[p as usize] = 1;
            rows.push(row);
        }
        rows
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HierarchyError {
    /// A child name appears more than once in one adjacency list.
    DuplicateChild {
        level: usize,
        child: String,
    },
    /// A parent referenced at `level` is absent from the next-coarser list.
    OrphanNode {
        level: usize,
        child: String,
        parent: String,
    },
    /// A level ended up with zero classes.
    EmptyLevel {
        level: usize,
    },
    /// Class counts must not decrease from coarse to fine.
    NonMonotoneCounts {
        coarse_level: usize,
        coarse: usize,
        fine: usize,
    },
    /// No adjacency lists were supplied.
    NoLevels,
    InvalidLeaf {
        index: usize,
    },
    InvalidNode {
        level: usize,
        index: usize,
    },
    /// A leaf name requested during restriction does not exist.
    MissingLeaf {
        name: String,
    },
}

impl fmt::Display for HierarchyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateChild { level, child } => {
                write!(f, "child '{child}' mapped more than once at level {level}")
            }
            Self::OrphanNode {
                level,
                child,
                parent,
            } => write!(
                f,
                "child '{child}' at level {level} references parent '{parent}' \
                 absent from level {}",
                level - 1
            ),
            Self::EmptyLevel { level } => write!(f, "level {level} has no classes"),
            Self::NonMonotoneCounts {
                coarse_level,
                coarse,
                fine,
            } => write!(
                f,
                "level {coarse_level} has {coarse} classes but level {} has only {fine}",
                coarse_level + 1
            ),
            Self::NoLevels => write!(f, "at least one adjacency list is required"),
            Self::InvalidLeaf { index } => write!(f, "leaf index {index} out of range"),
            Self::InvalidNode { level, index } => {
                write!(f, "no node at level {level} index {index}")
            }
            Self::MissingLeaf { name } => write!(f, "leaf '{name}' not in hierarchy"),
        }
    }
}

impl core::error::Error for HierarchyError {}

/// The validated label tree.
///
/// Immutable after construction; the child-to-parent maps are
/// authoritative and the per-node leaf sets are a cache checked against
/// them at build time.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelHierarchy {
    levels: Vec<HierarchyLevel>,
    transitions: Vec<TransitionMatrix>,
    /// `parent[h - 2][c]` = parent index at level `h - 1` of class `c` at
    /// level `h`, for `h` in `2..=H`.
    parent: Vec<Vec<u32>>,
    /// `leaf_sets[h][i]` = sorted leaf indices under node `(h, i)`;
    /// `leaf_sets[0][0]` is the full leaf set under the root.
    leaf_sets: Vec<Vec<Vec<u32>>>,
    /// `ancestors[leaf][h - 1]` = class index at level `h` on the leaf's
    /// root path (the last entry is the leaf itself).
    ancestors: Vec<Vec<u32>>,
}

/// One adjacent-level mapping as `(child name, parent name)` pairs.
pub type LevelMapping = Vec<(String, String)>;

impl LabelHierarchy {
    /// Build and validate a hierarchy from adjacency lists ordered fine to
    /// coarse: `mappings[0]` maps level `H` to `H - 1`, the last maps
    /// level 2 to level 1.
    pub fn build(mappings: &[LevelMapping]) -> Result<Self, HierarchyError> {
        if mappings.is_empty() {
            return Err(HierarchyError::NoLevels);
        }
        let depth = mappings.len() + 1;

        // Name sets per level. Level h (2..=H) names come from the child
        // column of its adjacency list; level 1 names from the parent
        // column of the coarsest list.
        let mut level_names: Vec<Vec<String>> = alloc::vec![Vec::new(); depth];
        for (k, pairs) in mappings.iter().enumerate() {
            let level = depth - k;
            let mut seen = BTreeSet::new();
            for (child, _) in pairs {
                if !seen.insert(child.clone()) {
                    return Err(HierarchyError::DuplicateChild {
                        level,
                        child: child.clone(),
                    });
                }
            }
            level_names[level - 1] = seen.into_iter().collect();
        }
        let coarsest: BTreeSet<String> =
            mappings[depth - 2].iter().map(|(_, p)| p.clone()).collect();
        level_names[0] = coarsest.into_iter().collect();

        for (h, names) in level_names.iter().enumerate() {
            if names.is_empty() {
                return Err(HierarchyError::EmptyLevel { level: h + 1 });
            }
        }
        for h in 1..depth {
            if level_names[h - 1].len() > level_names[h].len() {
                return Err(HierarchyError::NonMonotoneCounts {
                    coarse_level: h,
                    coarse: level_names[h - 1].len(),
                    fine: level_names[h].len(),
                });
            }
        }

        // Child-to-parent index maps. Names are sorted, so index lookup is
        // a binary search.
        let mut parent: Vec<Vec<u32>> = Vec::with_capacity(depth - 1);
        for (k, pairs) in mappings.iter().enumerate() {
            let level = depth - k;
            let child_names = &level_names[level - 1];
            let parent_names = &level_names[level - 2];
            let mut map = alloc::vec![u32::MAX; child_names.len()];
            for (child, par) in pairs {
                let ci = child_names.binary_search(child).expect("child indexed");
                let pi =
                    parent_names
                        .binary_search(par)
                        .map_err(|_| HierarchyError::OrphanNode {
                            level,
                            child: child.clone(),
                            parent: par.clone(),
                        })?;
                map[ci] = pi as u32;
            }
            parent.push(map);
        }
        parent.reverse(); // now parent[h - 2] serves level h

        let transitions = (2..=depth)
            .map(|h| TransitionMatrix {
                from_level: h,
                to_level: h - 1,
                child_to_parent: parent[h - 2].clone(),
            })
            .collect();

        let levels = level_names
            .into_iter()
            .enumerate()
            .map(|(i, class_names)| HierarchyLevel {
                index: i + 1,
                class_names,
            })
            .collect::<Vec<_>>();

        // Ancestor paths, then leaf sets per node.
        let n_leaves = levels[depth - 1].class_count();
        let mut ancestors = Vec::with_capacity(n_leaves);
        for leaf in 0..n_leaves {
            let mut path = alloc::vec![0u32; depth];
            path[depth - 1] = leaf as u32;
            for h in (1..depth).rev() {
                path[h - 1] = parent[h - 1][path[h] as usize];
            }
            ancestors.push(path);
        }

        let mut leaf_sets: Vec<Vec<Vec<u32>>> = Vec::with_capacity(depth + 1);
        leaf_sets.push(alloc::vec![(0..n_leaves as u32).collect()]);
        for level in levels.iter() {
            leaf_sets.push(alloc::vec![Vec::new(); level.class_count()]);
        }
        for (leaf, path) in ancestors.iter().enumerate() {
            for (h, &class) in path.iter().enumerate() {
                leaf_sets[h + 1][class as usize].push(leaf as u32);
            }
        }

        let hierarchy = Self {
            levels,
            transitions,
            parent,
            leaf_sets,
            ancestors,
        };
        hierarchy.validate_leaf_sets();
        Ok(hierarchy)
    }

    /// Leaf sets are a derived cache; confirm they partition correctly
    /// against the authoritative parent maps.
    fn validate_leaf_sets(&self) {
        let depth = self.depth();
        for h in 1..=depth {
            let mut total = 0usize;
            for set in &self.leaf_sets[h] {
                debug_assert!(
                    set.windows(2).all(|w| w[0] < w[1]),
                    "leaf set sorted/unique"
                );
                total += set.len();
            }
            assert_eq!(
                total,
                self.num_leaves(),
                "level {h} leaf sets partition leaves"
            );
        }
        for h in 2..=depth {
            for (child, &p) in self.parent[h - 2].iter().enumerate() {
                for leaf in &self.leaf_sets[h][child] {
                    debug_assert_eq!(self.ancestors[*leaf as usize][h - 2], p);
                }
            }
        }
    }

    /// Tree depth `H` (number of explicit levels).
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.levels[self.depth() - 1].class_count()
    }

    /// Level `h` in `1..=H`.
    pub fn level(&self, h: usize) -> &HierarchyLevel {
        &self.levels[h - 1]
    }

    pub fn levels(&self) -> &[HierarchyLevel] {
        &self.levels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.class_count()).collect()
    }

    /// `T_{h -> h-1}` for `h` in `2..=H`.
    pub fn transition(&self, h: usize) -> &TransitionMatrix {
        &self.transitions[h - 2]
    }

    pub fn transitions(&self) -> &[TransitionMatrix] {
        &self.transitions
    }

    pub fn parent_of(&self, node: NodeId) -> Option<NodeId> {
        match node.level {
            0 => None,
            1 => Some(ROOT),
            h => Some(NodeId {
                level: h - 1,
                index: self.parent[h - 2][node.index] as usize,
            }),
        }
    }

    fn check_leaf(&self, leaf: usize) -> Result<(), HierarchyError> {
        if leaf < self.num_leaves() {
            Ok(())
        } else {
            Err(HierarchyError::InvalidLeaf { index: leaf })
        }
    }

    /// Class indices on the leaf's root path, one per level `1..=H`.
    pub fn ancestor_path(&self, leaf: usize) -> Result<&[u32], HierarchyError> {
        self.check_leaf(leaf)?;
        Ok(&self.ancestors[leaf])
    }

    /// The leaf's ancestor class at `level` (level 0 returns the root).
    pub fn ancestor_at(&self, leaf: usize, level: usize) -> Result<NodeId, HierarchyError> {
        self.check_leaf(leaf)?;
        if level == 0 {
            return Ok(ROOT);
        }
        if level > self.depth() {
            return Err(HierarchyError::InvalidNode { level, index: 0 });
        }
        Ok(NodeId {
            level,
            index: self.ancestors[leaf][level - 1] as usize,
        })
    }

    /// Sorted leaf indices beneath `node`; a leaf yields itself, the root
    /// yields the full location set.
    pub fn leaves_of(&self, node: NodeId) -> Result<&[u32], HierarchyError> {
        let sets = self
            .leaf_sets
            .get(node.level)
            .ok_or(HierarchyError::InvalidNode {
                level: node.level,
                index: node.index,
            })?;
        sets.get(node.index)
            .map(|v| v.as_slice())
            .ok_or(HierarchyError::InvalidNode {
                level: node.level,
                index: node.index,
            })
    }

    /// Deepest node shared by the two leaves' root paths, with its depth
    /// (root = 0, leaf = `H`).
    pub fn lowest_common_ancestor(
        &self,
        leaf_a: usize,
        leaf_b: usize,
    ) -> Result<(NodeId, usize), HierarchyError> {
        self.check_leaf(leaf_a)?;
        self.check_leaf(leaf_b)?;
        let pa = &self.ancestors[leaf_a];
        let pb = &self.ancestors[leaf_b];
        // Paths agree on a prefix and diverge for good after it.
        let mut depth = 0;
        while depth < self.depth() && pa[depth] == pb[depth] {
            depth += 1;
        }
        let node = if depth == 0 {
            ROOT
        } else {
            NodeId {
                level: depth,
                index: pa[depth - 1] as usize,
            }
        };
        Ok((node, depth))
    }

    /// `H - depth(LCA)`: 0 iff the leaves coincide, `H` when even the
    /// need-level classes differ.
    pub fn hierarchical_distance(
        &self,
        truth: usize,
        predicted: usize,
    ) -> Result<usize, HierarchyError> {
        let (_, depth) = self.lowest_common_ancestor(truth, predicted)?;
        Ok(self.depth() - depth)
    }

    /// Index of `name` within level `h`, if present.
    pub fn index_of(&self, level: usize, name: &str) -> Option<usize> {
        self.levels[level - 1]
            .class_names
            .binary_search_by(|n| n.as_str().cmp(name))
            .ok()
    }

    pub fn class_name(&self, node: NodeId) -> Option<&str> {
        if node.level == 0 {
            return Some("<root>");
        }
        self.levels
            .get(node.level - 1)?
            .class_names
            .get(node.index)
            .map(|s| s.as_str())
    }

    /// Reconstruct the fine-to-coarse adjacency lists this tree encodes.
    pub fn to_adjacencies(&self) -> Vec<LevelMapping> {
        let depth = self.depth();
        let mut out = Vec::with_capacity(depth - 1);
        for h in (2..=depth).rev() {
            let children = &self.levels[h - 1].class_names;
            let parents = &self.levels[h - 2].class_names;
            let pairs = children
                .iter()
                .enumerate()
                .map(|(c, name)| {
                    let p = self.parent[h - 2][c] as usize;
                    (name.clone(), parents[p].clone())
                })
                .collect();
            out.push(pairs);
        }
        out
    }

    /// Sub-hierarchy containing exactly the named leaves and their
    /// ancestors; intermediate classes left childless are dropped.
    pub fn restrict_to_leaves(&self, keep: &BTreeSet<String>) -> Result<Self, HierarchyError> {
        let leaf_names = &self.levels[self.depth() - 1].class_names;
        for name in keep {
            if leaf_names.binary_search(name).is_err() {
                return Err(HierarchyError::MissingLeaf { name: name.clone() });
            }
        }
        let mut adjacencies = self.to_adjacencies();
        let mut kept: BTreeSet<&str> = keep.iter().map(|s| s.as_str()).collect();
        for pairs in adjacencies.iter_mut() {
            pairs.retain(|(child, _)| kept.contains(child.as_str()));
            kept = pairs.iter().map(|(_, p)| p.as_str()).collect();
        }
        Self::build(&adjacencies)
    }
}

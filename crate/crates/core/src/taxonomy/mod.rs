//! Concept hierarchy: loading, validation and graph queries.
//!
//! Nodes and edges come from two tab-separated text files. The graph must be a
//! single-rooted DAG; node depth is the length of the shortest root path.

mod curate;
mod similarity;

pub use curate::{
    filter_concepts, select_realms, FilterOutcome, FilterRule, RealmStatus, RealmSubtree,
};
pub use similarity::{raw_similarity, LogBase, Normalization, SimilarityConfig, SimilarityTable};

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConceptFlags {
    pub offensive: bool,
    pub non_visual: bool,
}

impl fmt::Display for ConceptFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.offensive, self.non_visual) {
            (false, false) => f.write_str("-"),
            (true, false) => f.write_str("offensive"),
            (false, true) => f.write_str("non_visual"),
            (true, true) => f.write_str("offensive,non_visual"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptNode {
    pub id: String,
    pub name: String,
    /// Eligible as a classification label.
    pub is_class: bool,
    /// Raw samples available for the concept.
    pub image_count: u64,
    pub flags: ConceptFlags,
}

impl ConceptNode {
    pub fn new(id: impl Into<String>) -> Self {
        let id = id.into();
        Self {
            name: id.clone(),
            id,
            is_class: false,
            image_count: 0,
            flags: ConceptFlags::default(),
        }
    }
}

/// Validated hypernym/hyponym graph. Immutable once built.
#[derive(Debug, Clone)]
pub struct TaxonomyDag {
    nodes: Vec<ConceptNode>,
    index: HashMap<String, usize>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    root: usize,
    depth: Vec<usize>,
}

impl TaxonomyDag {
    /// Builds and validates a taxonomy from explicit nodes and `(parent, child)` edges.
    pub fn new(nodes: Vec<ConceptNode>, edges: &[(String, String)]) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("taxonomy has no nodes".into()));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(node.id.clone()));
            }
        }

        let n = nodes.len();
        let mut children = vec![Vec::new(); n];
        let mut parents = vec![Vec::new(); n];
        let mut seen = HashSet::new();
        for (parent, child) in edges {
            let lookup = |id: &String| {
                index.get(id).copied().ok_or_else(|| Error::DanglingEdge {
                    parent: parent.clone(),
                    child: child.clone(),
                    missing: id.clone(),
                })
            };
            let p = lookup(parent)?;
            let c = lookup(child)?;
            if p == c {
                return Err(Error::Cycle(parent.clone()));
            }
            if seen.insert((p, c)) {
                children[p].push(c);
                parents[c].push(p);
            }
        }

        // Kahn's algorithm: anything left unprocessed sits on a cycle.
        let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let roots: Vec<usize> = queue.iter().copied().collect();
        let mut processed = 0;
        while let Some(u) = queue.pop_front() {
            processed += 1;
            for &c in &children[u] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if processed != n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
            return Err(Error::Cycle(nodes[stuck].id.clone()));
        }
        if roots.len() != 1 {
            return Err(Error::MultipleRoots(
                roots.iter().map(|&r| nodes[r].id.clone()).collect(),
            ));
        }
        let root = roots[0];

        let mut depth = vec![usize::MAX; n];
        depth[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &c in &children[u] {
                if depth[c] == usize::MAX {
                    depth[c] = depth[u] + 1;
                    queue.push_back(c);
                }
            }
        }

        Ok(Self {
            nodes,
            index,
            children,
            parents,
            root,
            depth,
        })
    }

    /// Builds a taxonomy from edges alone. Every leaf becomes a class.
    pub fn from_edges(edges: &[(String, String)]) -> Result<Self> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut has_child = HashSet::new();
        for (p, c) in edges {
            for id in [p, c] {
                if seen.insert(id.clone()) {
                    order.push(id.clone());
                }
            }
            has_child.insert(p.clone());
        }
        let nodes = order
            .into_iter()
            .map(|id| {
                let mut node = ConceptNode::new(id);
                node.is_class = !has_child.contains(&node.id);
                node
            })
            .collect();
        Self::new(nodes, edges)
    }

    /// Loads an edge file and a node file.
    pub fn load(edge_file: impl AsRef<Path>, node_file: impl AsRef<Path>) -> Result<Self> {
        let edges = read_edges(edge_file.as_ref())?;
        let nodes = read_nodes(node_file.as_ref())?;
        Self::new(nodes, &edges)
    }

    /// Loads an edge file alone; see [`TaxonomyDag::from_edges`].
    pub fn load_edges(edge_file: impl AsRef<Path>) -> Result<Self> {
        Self::from_edges(&read_edges(edge_file.as_ref())?)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[ConceptNode] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &ConceptNode {
        &self.nodes[idx]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn children(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub fn parents(&self, idx: usize) -> &[usize] {
        &self.parents[idx]
    }

    pub fn is_leaf(&self, idx: usize) -> bool {
        self.children[idx].is_empty()
    }

    pub fn depth(&self, idx: usize) -> usize {
        self.depth[idx]
    }

    pub fn depth_of(&self, id: &str) -> Result<usize> {
        Ok(self.depth[self.index_of(id)?])
    }

    /// All `(parent, child)` edges, as indices.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.children
            .iter()
            .enumerate()
            .flat_map(|(p, cs)| cs.iter().map(move |&c| (p, c)))
    }

    /// Leaf nodes flagged as classes, in node order.
    pub fn leaf_classes(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.nodes[i].is_class && self.is_leaf(i))
            .collect()
    }

    /// The node itself plus everything reachable through child edges, sorted.
    pub fn subtree(&self, idx: usize) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        seen[idx] = true;
        let mut stack = vec![idx];
        while let Some(u) = stack.pop() {
            for &c in &self.children[u] {
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        (0..self.len()).filter(|&i| seen[i]).collect()
    }

    /// Parent on a minimum-depth root path (first such parent in edge order).
    pub fn primary_parent(&self, idx: usize) -> Option<usize> {
        self.parents[idx]
            .iter()
            .copied()
            .find(|&p| self.depth[p] + 1 == self.depth[idx])
    }

    /// Ancestor of `idx` at `depth` along the primary-parent chain.
    pub fn ancestor_at_depth(&self, idx: usize, depth: usize) -> Option<usize> {
        let mut cur = idx;
        while self.depth[cur] > depth {
            cur = self.primary_parent(cur)?;
        }
        (self.depth[cur] == depth).then_some(cur)
    }

    /// Undirected BFS distances from `source` to every node.
    pub fn distances_from(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let next = dist[u] + 1;
            for &v in self.children[u].iter().chain(&self.parents[u]) {
                if dist[v] == usize::MAX {
                    dist[v] = next;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Fewest undirected edges between two concepts.
    pub fn shortest_path(&self, m: &str, n: &str) -> Result<usize> {
        let a = self.index_of(m)?;
        let b = self.index_of(n)?;
        Ok(self.shortest_path_idx(a, b))
    }

    pub fn shortest_path_idx(&self, a: usize, b: usize) -> usize {
        if a == b {
            return 0;
        }
        self.distances_from(a)[b]
    }
}

fn strip(line: &str) -> Option<&str> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() || line.trim_start().starts_with('#') {
        None
    } else {
        Some(line)
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_edges(path: &Path) -> Result<Vec<(String, String)>> {
    parse_edges(&read_text(path)?, path)
}

fn read_nodes(path: &Path) -> Result<Vec<ConceptNode>> {
    parse_nodes(&read_text(path)?, path)
}

/// Parses `parent<TAB>child` lines; `#` lines and blanks are skipped.
pub fn parse_edges(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let Some(line) = strip(raw) else { continue };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected `parent<TAB>child`, got `{line}`"),
            });
        }
        edges.push((fields[0].trim().to_string(), fields[1].trim().to_string()));
    }
    Ok(edges)
}

/// Parses `id<TAB>name<TAB>is_class<TAB>image_count<TAB>flags` lines.
pub fn parse_nodes(text: &str, path: &Path) -> Result<Vec<ConceptNode>> {
    let mut nodes = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let Some(line) = strip(raw) else { continue };
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, got {}", fields.len())));
        }
        let is_class = match fields[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("is_class must be 0 or 1, got `{other}`"))),
        };
        let image_count = fields[3]
            .trim()
            .parse::<u64>()
            .map_err(|_| bad(format!("image_count must be a non-negative integer, got `{}`", fields[3])))?;
        let mut flags = ConceptFlags::default();
        let flag_field = fields[4].trim();
        if flag_field != "-" {
            for flag in flag_field.split(',') {
                match flag.trim() {
                    "offensive" => flags.offensive = true,
                    "non_visual" => flags.non_visual = true,
                    other => return Err(bad(format!("unknown flag `{other}`"))),
                }
            }
        }
        nodes.push(ConceptNode {
            id: fields[0].trim().to_string(),
            name: fields[1].trim().to_string(),
            is_class,
            image_count,
            flags,
        });
    }
    Ok(nodes)
}

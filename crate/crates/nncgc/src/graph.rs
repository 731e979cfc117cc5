//! Causal DAGs and the variable groups that constrain which covariates a
//! model may let interact. Groups are derived from the graph (one group of
//! outcome parents plus one ancestral group per parent) or, without a
//! graph, from a list of forbidden pairs.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown node name: {0}")]
    UnknownNode(String),
    #[error("duplicate node name: {0}")]
    DuplicateNode(String),
    #[error("invalid node name {0:?}: names must be non-empty and free of whitespace, ',', '#' and '->'")]
    InvalidNodeName(String),
    #[error("self-loop on node {0}")]
    SelfLoop(String),
    #[error("graph contains a directed cycle")]
    Cycle,
    #[error("treatment and outcome must be distinct declared nodes")]
    BadRoles,
    #[error("degenerate grouping: the outcome has no covariate parent, so no covariate information reaches it")]
    DegenerateGrouping,
    #[error("group member {0} is not a declared covariate")]
    UnknownGroupMember(String),
    #[error("forbidden pair ({0}, {0}) relates a covariate to itself")]
    SelfForbidden(String),
    #[error("empty group at position {0}")]
    EmptyGroup(usize),
    #[error("groups {0} and {1} contain the same covariates")]
    DuplicateGroup(usize, usize),
    #[error("mode_graph needs at least one graph")]
    EmptyGraphList,
    #[error("mode_graph inputs disagree on nodes or roles")]
    MixedGraphs,
    #[error("reorienting edges into the outcome would create a cycle")]
    ReorientationCycle,
    #[error("graph file line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.contains(char::is_whitespace)
        && !name.contains(',')
        && !name.contains('#')
        && !name.contains("->")
}

/// Directed acyclic graph over named variables with designated treatment
/// and outcome nodes. Immutable once constructed; all operations return
/// new values.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    /// (parent, child) pairs by node index, kept sorted.
    edges: BTreeSet<(usize, usize)>,
    treatment: usize,
    outcome: usize,
}

impl CausalGraph {
    pub fn new<N, E, S>(nodes: N, edges: E, treatment: &str, outcome: &str) -> Result<Self, GraphError>
    where
        N: IntoIterator<Item = S>,
        E: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let nodes: Vec<String> = nodes.into_iter().map(|s| s.as_ref().to_string()).collect();
        let mut index = HashMap::new();
        for (i, name) in nodes.iter().enumerate() {
            if !valid_name(name) {
                return Err(GraphError::InvalidNodeName(name.clone()));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(name.clone()));
            }
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| GraphError::UnknownNode(name.to_string()))
        };
        let mut edge_set = BTreeSet::new();
        for (p, c) in edges {
            let p = lookup(p.as_ref())?;
            let c = lookup(c.as_ref())?;
            if p == c {
                return Err(GraphError::SelfLoop(nodes[p].clone()));
            }
            edge_set.insert((p, c));
        }
        let treatment = lookup(treatment)?;
        let outcome = lookup(outcome)?;
        if treatment == outcome {
            return Err(GraphError::BadRoles);
        }
        let g = CausalGraph { nodes, index, edges: edge_set, treatment, outcome };
        if g.topological_order().is_none() {
            return Err(GraphError::Cycle);
        }
        Ok(g)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn treatment(&self) -> &str {
        &self.nodes[self.treatment]
    }

    pub fn outcome(&self) -> &str {
        &self.nodes[self.outcome]
    }

    pub fn edge_names(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|&(p, c)| (self.nodes[p].clone(), self.nodes[c].clone()))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Covariates are all declared nodes except treatment and outcome, in
    /// declaration order.
    pub fn covariates(&self) -> Vec<String> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.treatment && *i != self.outcome)
            .map(|(_, n)| n.clone())
            .collect()
    }

    fn node_index(&self, name: &str) -> Result<usize, GraphError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(name.to_string()))
    }

    fn parents_idx(&self, node: usize) -> Vec<usize> {
        self.edges.iter().filter(|&&(_, c)| c == node).map(|&(p, _)| p).collect()
    }

    pub fn parents(&self, node: &str) -> Result<Vec<String>, GraphError> {
        let idx = self.node_index(node)?;
        let mut p = self.parents_idx(idx);
        p.sort_unstable();
        Ok(p.into_iter().map(|i| self.nodes[i].clone()).collect())
    }

    fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for &(_, c) in &self.edges {
            indegree[c] += 1;
        }
        let mut ready: Vec<usize> =
            (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(next) = ready.pop() {
            order.push(next);
            for &(p, c) in &self.edges {
                if p == next {
                    indegree[c] -= 1;
                    if indegree[c] == 0 {
                        ready.push(c);
                    }
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    fn ancestors_idx(&self, node: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = self.parents_idx(node);
        while let Some(next) = stack.pop() {
            if seen.insert(next) {
                stack.extend(self.parents_idx(next));
            }
        }
        seen
    }

    /// All nodes with a directed path to `node`, excluding `node` itself.
    pub fn ancestors(&self, node: &str) -> Result<BTreeSet<String>, GraphError> {
        let idx = self.node_index(node)?;
        Ok(self.ancestors_idx(idx).into_iter().map(|i| self.nodes[i].clone()).collect())
    }

    /// Derives the interaction groups: the outcome's covariate parents form
    /// one group, and each such parent contributes its ancestral closure
    /// (treatment excluded). Duplicate groups are dropped keeping the first
    /// occurrence; covariates left out of every group are appended as one
    /// final group.
    pub fn build_groups(&self) -> Result<VariableGrouping, GraphError> {
        let mut pa_y: Vec<usize> = self.parents_idx(self.outcome);
        pa_y.sort_unstable();
        pa_y.retain(|&i| i != self.treatment);
        if pa_y.is_empty() {
            return Err(GraphError::DegenerateGrouping);
        }

        let mut groups: Vec<BTreeSet<usize>> = Vec::new();
        groups.push(pa_y.iter().copied().collect());
        for &parent in &pa_y {
            let mut g = self.ancestors_idx(parent);
            g.insert(parent);
            g.remove(&self.treatment);
            if !g.is_empty() && !groups.contains(&g) {
                groups.push(g);
            }
        }

        let covered: BTreeSet<usize> = groups.iter().flatten().copied().collect();
        let leftover: BTreeSet<usize> = (0..self.nodes.len())
            .filter(|&i| i != self.treatment && i != self.outcome && !covered.contains(&i))
            .collect();
        if !leftover.is_empty() {
            groups.push(leftover);
        }

        let named: Vec<Vec<String>> = groups
            .into_iter()
            .map(|g| g.into_iter().map(|i| self.nodes[i].clone()).collect())
            .collect();
        VariableGrouping::new(self.covariates(), named)
    }

    /// Reorients every edge incident to the outcome so it points into the
    /// outcome. Idempotent; the result is checked for acyclicity.
    pub fn normalize_discovered(&self) -> Result<CausalGraph, GraphError> {
        let flipped: Vec<(String, String)> = self
            .edges
            .iter()
            .map(|&(p, c)| {
                if p == self.outcome {
                    (self.nodes[c].clone(), self.nodes[p].clone())
                } else {
                    (self.nodes[p].clone(), self.nodes[c].clone())
                }
            })
            .collect();
        CausalGraph::new(
            self.nodes.clone(),
            flipped,
            self.treatment(),
            self.outcome(),
        )
        .map_err(|e| match e {
            GraphError::Cycle => GraphError::ReorientationCycle,
            other => other,
        })
    }

    /// Canonical text form: header lines for nodes and roles, one
    /// `parent -> child` line per edge in node-index order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#nodes {}", self.nodes.join(","));
        let _ = writeln!(out, "#treatment {}", self.treatment());
        let _ = writeln!(out, "#outcome {}", self.outcome());
        for &(p, c) in &self.edges {
            let _ = writeln!(out, "{} -> {}", self.nodes[p], self.nodes[c]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<CausalGraph, GraphError> {
        let mut nodes: Option<Vec<String>> = None;
        let mut treatment: Option<String> = None;
        let mut outcome: Option<String> = None;
        let mut edges: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#nodes") {
                nodes = Some(
                    rest.trim()
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect(),
                );
            } else if let Some(rest) = line.strip_prefix("#treatment") {
                treatment = Some(rest.trim().to_string());
            } else if let Some(rest) = line.strip_prefix("#outcome") {
                outcome = Some(rest.trim().to_string());
            } else if line.starts_with('#') {
                return Err(GraphError::Parse {
                    line: lineno,
                    message: format!("unknown directive {line:?}"),
                });
            } else {
                let mut parts = line.split("->");
                let p = parts.next().map(str::trim).unwrap_or("");
                let c = parts.next().map(str::trim).unwrap_or("");
                if p.is_empty() || c.is_empty() || parts.next().is_some() {
                    return Err(GraphError::Parse {
                        line: lineno,
                        message: format!("expected `parent -> child`, got {line:?}"),
                    });
                }
                edges.push((p.to_string(), c.to_string()));
            }
        }
        let nodes = nodes.ok_or(GraphError::Parse {
            line: 0,
            message: "missing #nodes header".into(),
        })?;
        let treatment = treatment.ok_or(GraphError::Parse {
            line: 0,
            message: "missing #treatment header".into(),
        })?;
        let outcome = outcome.ok_or(GraphError::Parse {
            line: 0,
            message: "missing #outcome header".into(),
        })?;
        CausalGraph::new(nodes, edges, &treatment, &outcome)
    }

    /// Edge set keyed by names, used for graph-frequency comparisons.
    fn edge_name_set(&self) -> BTreeSet<(String, String)> {
        self.edge_names().into_iter().collect()
    }
}

/// The most frequent graph by exact edge-set equality. Ties go to the
/// smallest edge count, then to the lexicographically smallest edge list.
pub fn mode_graph(graphs: &[CausalGraph]) -> Result<CausalGraph, GraphError> {
    if graphs.is_empty() {
        return Err(GraphError::EmptyGraphList);
    }
    let reference: BTreeSet<&String> = graphs[0].nodes.iter().collect();
    for g in &graphs[1..] {
        let s: BTreeSet<&String> = g.nodes.iter().collect();
        if s != reference
            || g.treatment() != graphs[0].treatment()
            || g.outcome() != graphs[0].outcome()
        {
            return Err(GraphError::MixedGraphs);
        }
    }
    let mut counts: Vec<(BTreeSet<(String, String)>, usize, usize)> = Vec::new();
    for g in graphs {
        let key = g.edge_name_set();
        match counts.iter_mut().find(|(k, _, _)| *k == key) {
            Some((_, count, _)) => *count += 1,
            None => counts.push((key, 1, counts.len())),
        }
    }
    let best = counts
        .iter()
        .max_by(|a, b| {
            a.1.cmp(&b.1)
                .then_with(|| b.0.len().cmp(&a.0.len()))
                .then_with(|| {
                    let av: Vec<_> = a.0.iter().collect();
                    let bv: Vec<_> = b.0.iter().collect();
                    bv.cmp(&av)
                })
        })
        .expect("non-empty counts");
    let winner = graphs
        .iter()
        .find(|g| g.edge_name_set() == best.0)
        .expect("winner present");
    Ok(winner.clone())
}

/// Ordered, deduplicated covariate groups. Within a group, members keep
/// the covariate declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableGrouping {
    groups: Vec<Vec<String>>,
    covariates: Vec<String>,
}

impl VariableGrouping {
    /// Validates the groups and appends a final leftover group when some
    /// covariates appear in none of them.
    pub fn new(covariates: Vec<String>, groups: Vec<Vec<String>>) -> Result<Self, GraphError> {
        let declared: HashSet<&String> = covariates.iter().collect();
        let order: HashMap<&String, usize> =
            covariates.iter().enumerate().map(|(i, n)| (n, i)).collect();
        let mut canonical: Vec<Vec<String>> = Vec::with_capacity(groups.len());
        for (gi, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(GraphError::EmptyGroup(gi));
            }
            for member in group {
                if !declared.contains(member) {
                    return Err(GraphError::UnknownGroupMember(member.clone()));
                }
            }
            let mut sorted: Vec<String> = group.clone();
            sorted.sort_by_key(|m| order[m]);
            sorted.dedup();
            canonical.push(sorted);
        }
        for i in 0..canonical.len() {
            for j in (i + 1)..canonical.len() {
                if canonical[i] == canonical[j] {
                    return Err(GraphError::DuplicateGroup(i, j));
                }
            }
        }
        let covered: HashSet<&String> = canonical.iter().flatten().collect();
        let leftover: Vec<String> =
            covariates.iter().filter(|c| !covered.contains(c)).cloned().collect();
        if !leftover.is_empty() {
            canonical.push(leftover);
        }
        Ok(VariableGrouping { groups: canonical, covariates })
    }

    /// Single group containing every covariate (the unconstrained family).
    pub fn fully_connected(covariates: Vec<String>) -> Result<Self, GraphError> {
        let all = covariates.clone();
        VariableGrouping::new(covariates, vec![all])
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }

    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    /// True when the two covariates share at least one group.
    pub fn may_interact(&self, a: &str, b: &str) -> bool {
        self.groups
            .iter()
            .any(|g| g.iter().any(|m| m == a) && g.iter().any(|m| m == b))
    }
}

/// Maximal covariate subsets that contain no forbidden pair: the maximal
/// cliques of the complement of the forbidden-pair graph, found by
/// Bron-Kerbosch. Worst case is exponential; covariate counts from expert
/// knowledge stay small.
pub fn groups_from_forbidden(
    covariates: &[String],
    forbidden: &[(String, String)],
) -> Result<VariableGrouping, GraphError> {
    let order: HashMap<&String, usize> =
        covariates.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let n = covariates.len();
    let mut allowed = vec![vec![true; n]; n];
    for (i, row) in allowed.iter_mut().enumerate() {
        row[i] = false;
    }
    for (a, b) in forbidden {
        let ia = *order.get(a).ok_or_else(|| GraphError::UnknownGroupMember(a.clone()))?;
        let ib = *order.get(b).ok_or_else(|| GraphError::UnknownGroupMember(b.clone()))?;
        if ia == ib {
            return Err(GraphError::SelfForbidden(a.clone()));
        }
        allowed[ia][ib] = false;
        allowed[ib][ia] = false;
    }
    let mut cliques: Vec<Vec<usize>> = Vec::new();
    bron_kerbosch(&allowed, &mut Vec::new(), (0..n).collect(), Vec::new(), &mut cliques);
    for c in &mut cliques {
        c.sort_unstable();
    }
    cliques.sort();
    let named: Vec<Vec<String>> = cliques
        .into_iter()
        .map(|c| c.into_iter().map(|i| covariates[i].clone()).collect())
        .collect();
    VariableGrouping::new(covariates.to_vec(), named)
}

fn bron_kerbosch(
    allowed: &[Vec<bool>],
    current: &mut Vec<usize>,
    mut candidates: Vec<usize>,
    mut excluded: Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if candidates.is_empty() && excluded.is_empty() {
        if !current.is_empty() {
            out.push(current.clone());
        }
        return;
    }
    // Pivot on the candidate/excluded vertex with most candidate neighbours.
    let pivot = candidates
        .iter()
        .chain(excluded.iter())
        .copied()
        .max_by_key(|&u| candidates.iter().filter(|&&v| allowed[u][v]).count())
        .unwrap();
    let branch: Vec<usize> =
        candidates.iter().copied().filter(|&v| !allowed[pivot][v]).collect();
    for v in branch {
        current.push(v);
        let next_candidates: Vec<usize> =
            candidates.iter().copied().filter(|&u| allowed[v][u]).collect();
        let next_excluded: Vec<usize> =
            excluded.iter().copied().filter(|&u| allowed[v][u]).collect();
        bron_kerbosch(allowed, current, next_candidates, next_excluded, out);
        current.pop();
        candidates.retain(|&u| u != v);
        excluded.push(v);
    }
}

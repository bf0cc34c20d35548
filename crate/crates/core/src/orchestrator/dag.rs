//! Conversion of a fixed communication DAG into an agent sequence with
//! per-step context masks.
//!
//! Input format (adjacency list, JSON):
//!
//! ```json
//! {
//!   "nodes": ["a", {"id": "b", "role": "critic"}, "c"],
//!   "adjacency": { "a": ["b"], "b": ["c"] }
//! }
//! ```
//!
//! A node given as a bare string uses its id as its role. `adjacency` maps a
//! node to the nodes that receive its output.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DagNode {
    Bare(String),
    Labeled { id: String, role: String },
}

impl DagNode {
    pub fn id(&self) -> &str {
        match self {
            DagNode::Bare(id) | DagNode::Labeled { id, .. } => id,
        }
    }

    pub fn role(&self) -> &str {
        match self {
            DagNode::Bare(id) => id,
            DagNode::Labeled { role, .. } => role,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dag {
    pub nodes: Vec<DagNode>,
    #[serde(default)]
    pub adjacency: BTreeMap<String, Vec<String>>,
}

impl Dag {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("invalid DAG JSON: {e}")))
    }

    /// Builds a DAG from role labels and `(from, to)` node-index edges.
    pub fn from_edges(roles: &[&str], edges: &[(usize, usize)]) -> Self {
        let nodes: Vec<DagNode> = roles
            .iter()
            .enumerate()
            .map(|(i, r)| DagNode::Labeled { id: format!("n{i}"), role: r.to_string() })
            .collect();
        let mut adjacency: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for &(a, b) in edges {
            adjacency.entry(nodes[a].id().to_string()).or_default().push(nodes[b].id().to_string());
        }
        Dag { nodes, adjacency }
    }

    /// Parent node indices for every node, sorted.
    pub fn parents(&self) -> Result<Vec<BTreeSet<usize>>> {
        let index: BTreeMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.id(), i)).collect();
        if index.len() != self.nodes.len() {
            return Err(Error::Input("duplicate node id in DAG".into()));
        }
        let mut parents = vec![BTreeSet::new(); self.nodes.len()];
        for (from, targets) in &self.adjacency {
            let &f = index
                .get(from.as_str())
                .ok_or_else(|| Error::Input(format!("adjacency references unknown node {from}")))?;
            for to in targets {
                let &t = index
                    .get(to.as_str())
                    .ok_or_else(|| Error::Input(format!("adjacency references unknown node {to}")))?;
                parents[t].insert(f);
            }
        }
        Ok(parents)
    }
}

/// An agent sequence with, for each step, the 1-based prior steps it sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencePlan {
    pub node_ids: Vec<String>,
    pub roles: Vec<String>,
    pub masks: Vec<Vec<usize>>,
}

impl SequencePlan {
    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    /// Step `t` (1-based) mask as booleans over steps `1..t`.
    pub fn bool_mask(&self, step: usize) -> Vec<bool> {
        let mut m = vec![false; step - 1];
        for &s in &self.masks[step - 1] {
            m[s - 1] = true;
        }
        m
    }
}

/// Orders the DAG topologically (ties broken by declaration order) and
/// emits, per step, the steps holding that node's parents.
pub fn dag_to_sequence(dag: &Dag) -> Result<SequencePlan> {
    let parents = dag.parents()?;
    let n = dag.nodes.len();
    let mut children = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    for (child, ps) in parents.iter().enumerate() {
        indegree[child] = ps.len();
        for &p in ps {
            children[p].push(child);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut step_of = vec![0usize; n];
    let mut order = Vec::with_capacity(n);
    while let Some(node) = ready.pop_first() {
        order.push(node);
        step_of[node] = order.len();
        for &c in &children[node] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != n {
        return Err(Error::Input("communication graph contains a cycle".into()));
    }
    Ok(SequencePlan {
        node_ids: order.iter().map(|&i| dag.nodes[i].id().to_string()).collect(),
        roles: order.iter().map(|&i| dag.nodes[i].role().to_string()).collect(),
        masks: order
            .iter()
            .map(|&i| {
                let mut steps: Vec<usize> = parents[i].iter().map(|&p| step_of[p]).collect();
                steps.sort_unstable();
                steps
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain() {
        let dag = Dag::from_json(r#"{"nodes":["a","b","c"],"adjacency":{"a":["b"],"b":["c"]}}"#).unwrap();
        let plan = dag_to_sequence(&dag).unwrap();
        assert_eq!(plan.roles, vec!["a", "b", "c"]);
        assert_eq!(plan.masks, vec![vec![], vec![1], vec![2]]);
        assert_eq!(plan.bool_mask(3), vec![false, true]);
    }

    #[test]
    fn star() {
        let dag = Dag::from_json(r#"{"nodes":["h","x","y"],"adjacency":{"x":["h"],"y":["h"]}}"#).unwrap();
        let plan = dag_to_sequence(&dag).unwrap();
        assert_eq!(plan.roles, vec!["x", "y", "h"]);
        assert_eq!(plan.masks, vec![vec![], vec![], vec![1, 2]]);
    }

    #[test]
    fn cycle_rejected() {
        let dag = Dag::from_json(r#"{"nodes":["a","b"],"adjacency":{"a":["b"],"b":["a"]}}"#).unwrap();
        assert!(matches!(dag_to_sequence(&dag), Err(Error::Input(_))));
        let self_loop = Dag::from_json(r#"{"nodes":["a"],"adjacency":{"a":["a"]}}"#).unwrap();
        assert!(dag_to_sequence(&self_loop).is_err());
    }

    #[test]
    fn unknown_node_rejected() {
        let dag = Dag::from_json(r#"{"nodes":["a"],"adjacency":{"a":["z"]}}"#).unwrap();
        assert!(matches!(dag_to_sequence(&dag), Err(Error::Input(_))));
    }

    #[test]
    fn labeled_nodes_keep_roles() {
        let dag = Dag::from_json(
            r#"{"nodes":[{"id":"n1","role":"critic"},{"id":"n2","role":"critic"}],"adjacency":{"n1":["n2"]}}"#,
        )
        .unwrap();
        let plan = dag_to_sequence(&dag).unwrap();
        assert_eq!(plan.roles, vec!["critic", "critic"]);
        assert_eq!(plan.node_ids, vec!["n1", "n2"]);
    }
}

//! Fixed communication graphs over a catalog.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::orchestrator::{Catalog, Dag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Chain,
    Star,
    Tree,
    Complete,
    Random,
    Learned,
}

impl Topology {
    pub const ALL: [Topology; 6] =
        [Topology::Chain, Topology::Star, Topology::Tree, Topology::Complete, Topology::Random, Topology::Learned];

    pub fn name(self) -> &'static str {
        match self {
            Topology::Chain => "chain",
            Topology::Star => "star",
            Topology::Tree => "tree",
            Topology::Complete => "complete",
            Topology::Random => "random",
            Topology::Learned => "learned",
        }
    }
}

/// DAG over every non-decision role followed by the decision role, or
/// `None` for the learned router. Edges point from sender to receiver.
pub fn topology_dag(topology: Topology, catalog: &Catalog, seed: u64) -> Option<Dag> {
    let d = catalog.decision_index();
    let mut roles: Vec<&str> =
        catalog.roles().iter().enumerate().filter(|(i, _)| *i != d).map(|(_, r)| r.id.as_str()).collect();
    roles.push(catalog.get(d).id.as_str());
    let k = roles.len() - 1;
    let edges: Vec<(usize, usize)> = match topology {
        Topology::Learned => return None,
        Topology::Chain => (0..k).map(|i| (i, i + 1)).collect(),
        Topology::Star => (0..k).map(|i| (i, k)).collect(),
        // Heap layout rooted at the decision node; children report upward.
        Topology::Tree => {
            let heap: Vec<usize> = std::iter::once(k).chain(0..k).collect();
            (1..heap.len()).map(|i| (heap[i], heap[(i - 1) / 2])).collect()
        }
        Topology::Complete => (0..=k).flat_map(|j| (0..j).map(move |i| (i, j))).collect(),
        Topology::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut edges: Vec<(usize, usize)> = Vec::new();
            for j in 1..=k {
                for i in 0..j {
                    if rng.random_bool(0.5) {
                        edges.push((i, j));
                    }
                }
            }
            // Every otherwise silent node reports to the decision node.
            for i in 0..k {
                if !edges.iter().any(|&(a, _)| a == i) {
                    edges.push((i, k));
                }
            }
            edges
        }
    };
    Some(Dag::from_edges(&roles, &edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::{dag_to_sequence, RoleSpec};

    fn catalog() -> Catalog {
        Catalog::new(vec![
            RoleSpec::new("a", "a"),
            RoleSpec::new("b", "b"),
            RoleSpec::decision("d", "d"),
            RoleSpec::new("c", "c"),
        ])
        .unwrap()
    }

    #[test]
    fn every_topology_visits_each_role_once_and_ends_with_decision() {
        for t in Topology::ALL {
            let Some(dag) = topology_dag(t, &catalog(), 1) else {
                continue;
            };
            let plan = dag_to_sequence(&dag).unwrap();
            let mut sorted = plan.roles.clone();
            sorted.sort();
            assert_eq!(sorted, vec!["a", "b", "c", "d"], "{t:?}");
            assert_eq!(plan.roles.last().unwrap(), "d", "{t:?}");
        }
    }

    #[test]
    fn chain_and_star_shapes() {
        let chain = dag_to_sequence(&topology_dag(Topology::Chain, &catalog(), 0).unwrap()).unwrap();
        assert_eq!(chain.roles, vec!["a", "b", "c", "d"]);
        assert_eq!(chain.masks, vec![vec![], vec![1], vec![2], vec![3]]);
        let star = dag_to_sequence(&topology_dag(Topology::Star, &catalog(), 0).unwrap()).unwrap();
        assert_eq!(star.masks[3], vec![1, 2, 3]);
    }
}

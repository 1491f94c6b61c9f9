//! Bipartite tree topology and the shared leaf-elimination engine.
//!
//! The service graph has class nodes on one side, pool nodes on the other,
//! and an edge (i, j) wherever pool j can serve class i. Everything this
//! crate computes exploits the same structural fact: on a tree, a linear
//! system that prescribes one equation per node over one unknown per edge
//! is triangular under leaf elimination. Peeling a leaf forces the value
//! of its single incident edge; substituting shrinks the tree by one node.
//! After I + J - 1 eliminations one node remains, and the residual of its
//! equation measures the (single) consistency requirement of the system.
//!
//! Three systems in this crate share the engine, differing only in the
//! per-edge weight of the class-side equations:
//!
//! ```text
//! fluid allocation   sum_j (mu_ij nu_j) xi_ij = lambda_i   sum_i xi_ij = 1
//! kappa recovery     sum_j  mu_ij kappa_ij   = rhs_i       sum_i kappa_ij = theta_j
//! tree flow map Psi  sum_j        psi_ij     = alpha_i     sum_i psi_ij  = beta_j
//! ```

use crate::error::{Error, Result};

/// A node of the bipartite service graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    /// Job class, indexed 0..I.
    Class(usize),
    /// Server pool, indexed 0..J.
    Pool(usize),
}

impl Node {
    /// Dense node id used for adjacency bookkeeping: classes first.
    fn id(self, n_classes: usize) -> usize {
        match self {
            Node::Class(i) => i,
            Node::Pool(j) => n_classes + j,
        }
    }

    fn from_id(id: usize, n_classes: usize) -> Node {
        if id < n_classes {
            Node::Class(id)
        } else {
            Node::Pool(id - n_classes)
        }
    }
}

/// Validated tree topology with adjacency indices and a precomputed
/// leaf-elimination order.
#[derive(Debug, Clone)]
pub struct Topology {
    n_classes: usize,
    n_pools: usize,
    /// Edges as (class, pool), sorted lexicographically.
    edges: Vec<(usize, usize)>,
    /// Incident edge indices per class, ascending.
    class_edges: Vec<Vec<usize>>,
    /// Incident edge indices per pool, ascending.
    pool_edges: Vec<Vec<usize>>,
    /// Leaf elimination order: (leaf node, its forced edge), length |E|.
    peel: Vec<(Node, usize)>,
    /// The node left over after peeling; its equation is the redundancy.
    root: Node,
}

impl Topology {
    /// Validates that the edge set forms a spanning tree of the bipartite
    /// graph and precomputes adjacency and the elimination order.
    pub fn new(n_classes: usize, n_pools: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        if n_classes == 0 || n_pools == 0 {
            return Err(Error::NotATree("no classes or no pools".into()));
        }
        edges.sort_unstable();
        edges.dedup();
        let n_nodes = n_classes + n_pools;
        if edges.len() != n_nodes - 1 {
            return Err(Error::NotATree(format!(
                "|E| = {} but a spanning tree of {} classes and {} pools needs {}",
                edges.len(),
                n_classes,
                n_pools,
                n_nodes - 1
            )));
        }
        let mut class_edges = vec![Vec::new(); n_classes];
        let mut pool_edges = vec![Vec::new(); n_pools];
        for (e, &(i, j)) in edges.iter().enumerate() {
            if i >= n_classes || j >= n_pools {
                return Err(Error::NotATree(format!(
                    "edge ({i}, {j}) references a node out of range"
                )));
            }
            class_edges[i].push(e);
            pool_edges[j].push(e);
        }

        // Peel leaves in deterministic (node id) order. A graph with
        // |E| = |V| - 1 is a tree iff peeling consumes all but one node.
        let mut degree = vec![0usize; n_nodes];
        for &(i, j) in &edges {
            degree[i] += 1;
            degree[n_classes + j] += 1;
        }
        let mut removed_edge = vec![false; edges.len()];
        let mut removed_node = vec![false; n_nodes];
        let mut queue: std::collections::VecDeque<usize> =
            (0..n_nodes).filter(|&v| degree[v] == 1).collect();
        let mut peel = Vec::with_capacity(edges.len());
        while let Some(v) = queue.pop_front() {
            if removed_node[v] || degree[v] == 0 {
                continue;
            }
            let node = Node::from_id(v, n_classes);
            let incident = match node {
                Node::Class(i) => &class_edges[i],
                Node::Pool(j) => &pool_edges[j],
            };
            let Some(&e) = incident.iter().find(|&&e| !removed_edge[e]) else {
                continue;
            };
            let (i, j) = edges[e];
            let other = if node == Node::Class(i) {
                Node::Pool(j)
            } else {
                Node::Class(i)
            };
            removed_edge[e] = true;
            removed_node[v] = true;
            peel.push((node, e));
            let o = other.id(n_classes);
            degree[o] -= 1;
            degree[v] -= 1;
            if degree[o] == 1 && !removed_node[o] {
                queue.push_back(o);
            }
        }
        if peel.len() != edges.len() {
            return Err(Error::NotATree(
                "edge count matches a tree but the graph contains a cycle or is disconnected"
                    .into(),
            ));
        }
        let root_id = (0..n_nodes)
            .find(|&v| !removed_node[v])
            .expect("peeling |V| - 1 nodes leaves exactly one");
        let root = Node::from_id(root_id, n_classes);

        Ok(Topology {
            n_classes,
            n_pools,
            edges,
            class_edges,
            pool_edges,
            peel,
            root,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_pools(&self) -> usize {
        self.n_pools
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as (class, pool), lexicographically sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// The node whose equation is left over by leaf elimination; its
    /// residual measures system consistency.
    pub fn residual_root(&self) -> Node {
        self.root
    }

    /// Index of edge (class, pool) in the sorted edge list, if present.
    pub fn edge_index(&self, class: usize, pool: usize) -> Option<usize> {
        self.edges.binary_search(&(class, pool)).ok()
    }

    /// Incident edge indices of a class (the pools in J(i)).
    pub fn class_edges(&self, class: usize) -> &[usize] {
        &self.class_edges[class]
    }

    /// Incident edge indices of a pool (the classes in I(j)).
    pub fn pool_edges(&self, pool: usize) -> &[usize] {
        &self.pool_edges[pool]
    }

    /// Pools adjacent to a class, ascending.
    pub fn pools_of(&self, class: usize) -> impl Iterator<Item = usize> + '_ {
        self.class_edges[class].iter().map(|&e| self.edges[e].1)
    }

    /// Classes adjacent to a pool, ascending.
    pub fn classes_of(&self, pool: usize) -> impl Iterator<Item = usize> + '_ {
        self.pool_edges[pool].iter().map(|&e| self.edges[e].0)
    }

    /// The unique simple path between two nodes, as the node sequence and
    /// the edge index taken at each step (`edges.len() == nodes.len() - 1`).
    pub fn path(&self, from: Node, to: Node) -> (Vec<Node>, Vec<usize>) {
        let n_nodes = self.n_classes + self.n_pools;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n_nodes]; // (parent id, edge)
        let mut seen = vec![false; n_nodes];
        let start = from.id(self.n_classes);
        let goal = to.id(self.n_classes);
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            if v == goal {
                break;
            }
            let node = Node::from_id(v, self.n_classes);
            let incident = match node {
                Node::Class(i) => &self.class_edges[i],
                Node::Pool(j) => &self.pool_edges[j],
            };
            for &e in incident {
                let (i, j) = self.edges[e];
                let o = if node == Node::Class(i) {
                    Node::Pool(j).id(self.n_classes)
                } else {
                    Node::Class(i).id(self.n_classes)
                };
                if !seen[o] {
                    seen[o] = true;
                    parent[o] = Some((v, e));
                    queue.push_back(o);
                }
            }
        }
        let mut nodes = vec![to];
        let mut edges = Vec::new();
        let mut cur = goal;
        while cur != start {
            let (p, e) = parent[cur].expect("tree is connected");
            edges.push(e);
            nodes.push(Node::from_id(p, self.n_classes));
            cur = p;
        }
        nodes.reverse();
        edges.reverse();
        (nodes, edges)
    }

    /// Solves the tree-structured linear system
    ///
    /// ```text
    /// sum_{e incident to class i} w_e v_e = a_i      (one equation per class)
    /// sum_{e incident to pool j}      v_e = b_j      (one equation per pool)
    /// ```
    ///
    /// by leaf elimination, returning the edge values and the leftover
    /// residual of the final node's equation. The system has I + J
    /// equations over I + J - 1 unknowns; the residual is the single
    /// consistency requirement and the caller decides its tolerance.
    pub fn solve_tree_system(&self, w: &[f64], a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
        debug_assert_eq!(w.len(), self.edges.len());
        debug_assert_eq!(a.len(), self.n_classes);
        debug_assert_eq!(b.len(), self.n_pools);
        let mut v = vec![0.0; self.edges.len()];
        let mut ra = a.to_vec(); // residual class requirements
        let mut rb = b.to_vec(); // residual pool requirements
        for &(node, e) in &self.peel {
            let (i, j) = self.edges[e];
            match node {
                Node::Class(_) => {
                    let val = ra[i] / w[e];
                    v[e] = val;
                    rb[j] -= val;
                }
                Node::Pool(_) => {
                    let val = rb[j];
                    v[e] = val;
                    ra[i] -= w[e] * val;
                }
            }
        }
        let residual = match self.root {
            Node::Class(i) => ra[i],
            Node::Pool(j) => rb[j],
        };
        (v, residual)
    }
}

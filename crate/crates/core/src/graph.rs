//! Simple undirected connected graphs on dense vertex ids `0..k`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ArwError, Result};

/// An immutable, simple, undirected, connected graph.
///
/// Neighbor lists are kept sorted so that every derived quantity (move
/// supports, matrix rows) comes out in a deterministic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list, rejecting self-loops, duplicate
    /// edges, out-of-range endpoints and disconnected vertex sets.
    pub fn from_edges(k: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::from_edges_with(k, edges, false)
    }

    fn from_edges_with(k: usize, edges: &[(usize, usize)], collapse_duplicates: bool) -> Result<Self> {
        if k == 0 {
            return Err(ArwError::ZeroDimension);
        }
        let mut adjacency = vec![Vec::new(); k];
        for &(a, b) in edges {
            for v in [a, b] {
                if v >= k {
                    return Err(ArwError::VertexOutOfRange { index: v, k });
                }
            }
            if a == b {
                return Err(ArwError::SelfLoop(a));
            }
            if adjacency[a].contains(&b) {
                if collapse_duplicates {
                    continue;
                }
                return Err(ArwError::DuplicateEdge(a.min(b), a.max(b)));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let graph = Graph { adjacency };
        if let Some(unreached) = graph.distances_from(0).iter().position(|&d| d == usize::MAX) {
            return Err(ArwError::Disconnected { unreached });
        }
        Ok(graph)
    }

    /// Parses the edge-list text format: a header line holding `k`, then one
    /// `i j` pair per line. Blank lines and `#` comments are ignored.
    pub fn parse_edge_list(text: &str, collapse_duplicates: bool) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(no, l)| (no + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (header_no, header) =
            lines.next().ok_or(ArwError::MalformedGraph { line: 1, reason: "missing vertex-count header".into() })?;
        let k: usize = header.parse().map_err(|_| ArwError::MalformedGraph {
            line: header_no,
            reason: format!("expected vertex count, found {header:?}"),
        })?;
        let mut edges = Vec::new();
        for (no, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed: Option<Vec<usize>> = fields.iter().map(|f| f.parse().ok()).collect();
            match parsed.as_deref() {
                Some(&[a, b]) => edges.push((a, b)),
                _ => {
                    return Err(ArwError::MalformedGraph {
                        line: no,
                        reason: format!("expected two vertex indices, found {line:?}"),
                    })
                }
            }
        }
        Self::from_edges_with(k, &edges, collapse_duplicates)
    }

    /// The complete graph K_k.
    pub fn complete(k: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for a in 0..k {
            for b in a + 1..k {
                edges.push((a, b));
            }
        }
        Self::from_edges(k, &edges)
    }

    /// The path 0 - 1 - ... - (k-1).
    pub fn path(k: usize) -> Result<Self> {
        let edges: Vec<_> = (1..k).map(|v| (v - 1, v)).collect();
        Self::from_edges(k, &edges)
    }

    /// A rows x cols grid with row-major numbering and 4-neighbor edges.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(ArwError::ZeroDimension);
        }
        let id = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c)));
                }
            }
        }
        Self::from_edges(rows * cols, &edges)
    }

    /// A star with center 0 and leaves `1..k`.
    pub fn star(k: usize) -> Result<Self> {
        let edges: Vec<_> = (1..k).map(|v| (0, v)).collect();
        Self::from_edges(k, &edges)
    }

    pub fn k(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_complete(&self) -> bool {
        let k = self.k();
        self.adjacency.iter().all(|l| l.len() + 1 == k)
    }

    /// Maximum degree.
    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// BFS hop distances from `source`; unreachable vertices get `usize::MAX`.
    pub fn distances_from(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.k()];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            for &w in &self.adjacency[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// All-pairs hop distances.
    pub fn distance_matrix(&self) -> Vec<Vec<usize>> {
        (0..self.k()).map(|v| self.distances_from(v)).collect()
    }

    pub fn diameter(&self) -> usize {
        (0..self.k()).map(|v| self.distances_from(v).into_iter().max().unwrap_or(0)).max().unwrap_or(0)
    }

    /// Serializes back to the edge-list text format.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.k());
        for (a, list) in self.adjacency.iter().enumerate() {
            for &b in list.iter().filter(|&&b| b > a) {
                out.push_str(&format!("{a} {b}\n"));
            }
        }
        out
    }
}

/// Textual graph selector used on the command line and in configs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GraphSpec {
    Complete(usize),
    Path(usize),
    Grid(usize, usize),
    Star(usize),
    File(String),
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        match self {
            GraphSpec::Complete(k) => Graph::complete(*k),
            GraphSpec::Path(k) => Graph::path(*k),
            GraphSpec::Grid(r, c) => Graph::grid(*r, *c),
            GraphSpec::Star(k) => Graph::star(*k),
            GraphSpec::File(path) => {
                let text = std::fs::read_to_string(path)?;
                Graph::parse_edge_list(&text, false)
            }
        }
    }
}

impl fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSpec::Complete(k) => write!(f, "complete:{k}"),
            GraphSpec::Path(k) => write!(f, "path:{k}"),
            GraphSpec::Grid(r, c) => write!(f, "grid:{r}x{c}"),
            GraphSpec::Star(k) => write!(f, "star:{k}"),
            GraphSpec::File(p) => write!(f, "file:{p}"),
        }
    }
}

impl FromStr for GraphSpec {
    type Err = ArwError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || ArwError::GraphSpec(s.to_string());
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        let count = |a: &str| a.trim().parse::<usize>().map_err(|_| bad());
        match kind.trim() {
            "complete" => Ok(GraphSpec::Complete(count(arg)?)),
            "path" => Ok(GraphSpec::Path(count(arg)?)),
            "star" => Ok(GraphSpec::Star(count(arg)?)),
            "grid" => {
                let (r, c) = arg.split_once(['x', 'X']).ok_or_else(bad)?;
                Ok(GraphSpec::Grid(count(r)?, count(c)?))
            }
            "file" if !arg.is_empty() => Ok(GraphSpec::File(arg.to_string())),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for GraphSpec {
    type Error = ArwError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GraphSpec> for String {
    fn from(g: GraphSpec) -> String {
        g.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k2_from_text() {
        let g = Graph::parse_edge_list("2\n0 1", false).unwrap();
        assert_eq!(g.k(), 2);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.distances_from(0), vec![0, 1]);
    }

    #[test]
    fn four_path_from_text() {
        let g = Graph::parse_edge_list("4\n0 1\n1 2\n2 3", false).unwrap();
        assert_eq!(g, Graph::path(4).unwrap());
        assert_eq!(g.max_degree(), 2);
        assert_eq!(g.diameter(), 3);
        assert_eq!(g.distances_from(0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(Graph::parse_edge_list("3\n0 1\n0 2\n1 1", false), Err(ArwError::SelfLoop(1)));
        assert!(matches!(Graph::parse_edge_list("3\n0 1", false), Err(ArwError::Disconnected { unreached: 2 })));
        assert!(matches!(Graph::parse_edge_list("2\n0 5", false), Err(ArwError::VertexOutOfRange { index: 5, k: 2 })));
        assert!(matches!(Graph::parse_edge_list("2\n0 1 2", false), Err(ArwError::MalformedGraph { line: 2, .. })));
        assert!(matches!(Graph::parse_edge_list("two\n0 1", false), Err(ArwError::MalformedGraph { line: 1, .. })));
    }

    #[test]
    fn duplicates_only_with_flag() {
        let text = "2\n0 1\n1 0";
        assert_eq!(Graph::parse_edge_list(text, false), Err(ArwError::DuplicateEdge(0, 1)));
        let g = Graph::parse_edge_list(text, true).unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn builders() {
        let k3 = Graph::complete(3).unwrap();
        assert_eq!((k3.edge_count(), k3.max_degree(), k3.diameter()), (3, 2, 1));
        assert!(k3.is_complete());

        let p4 = Graph::path(4).unwrap();
        assert_eq!((p4.max_degree(), p4.diameter()), (2, 3));
        assert!(!p4.is_complete());

        let g88 = Graph::grid(8, 8).unwrap();
        assert_eq!((g88.k(), g88.edge_count(), g88.diameter()), (64, 112, 14));

        let g23 = Graph::grid(2, 3).unwrap();
        assert_eq!((g23.diameter(), g23.max_degree()), (3, 3));

        assert_eq!(Graph::grid(0, 3), Err(ArwError::ZeroDimension));
        assert_eq!(Graph::complete(0), Err(ArwError::ZeroDimension));
        assert_eq!(Graph::complete(1).unwrap().diameter(), 0);
    }

    #[test]
    fn distance_properties() {
        for g in
            [Graph::grid(3, 4).unwrap(), Graph::path(5).unwrap(), Graph::complete(4).unwrap(), Graph::star(5).unwrap()]
        {
            let dm = g.distance_matrix();
            let mut diam = 0;
            for u in 0..g.k() {
                assert_eq!(dm[u][u], 0);
                for a in 0..g.k() {
                    diam = diam.max(dm[u][a]);
                    for &b in g.neighbors(a) {
                        assert!(dm[u][a].abs_diff(dm[u][b]) <= 1);
                        assert!(g.neighbors(b).contains(&a));
                    }
                }
            }
            assert_eq!(diam, g.diameter());
        }
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["complete:3", "path:4", "grid:8x8", "star:5", "file:/tmp/g.txt"] {
            assert_eq!(s.parse::<GraphSpec>().unwrap().to_string(), s);
        }
        assert!("grid:8".parse::<GraphSpec>().is_err());
        assert!("ring:4".parse::<GraphSpec>().is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = Graph::grid(3, 3).unwrap();
        assert_eq!(Graph::parse_edge_list(&g.to_edge_list(), false).unwrap(), g);
    }
}

//! Chimera graph construction and queries.
//!
//! A Chimera graph is a grid of K4,4 unit cells. Each cell holds eight
//! vertices: slots 0..4 form partition A and slots 4..8 form partition B.
//! Inside a cell every A vertex couples to every B vertex. Between cells,
//! A vertices couple vertically to the same slot in cells (r +/- 1, c) and
//! B vertices couple horizontally to the same slot in cells (r, c +/- 1).
//!
//! Vertices are numbered cell-major in row order with the slot last:
//! `index = ((r * cols) + c) * 8 + slot`.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};

/// Half-cell size of the K4,4 unit cell.
pub const CELL_HALF: usize = 4;
/// Vertices per unit cell.
pub const CELL_SIZE: usize = 2 * CELL_HALF;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Topology {
    Chimera { rows: usize, cols: usize },
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub vertex: u32,
    pub edge: u32,
}

/// Simple undirected graph with canonical edge order and CSR adjacency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    topology: Topology,
    n: usize,
    edges: Vec<(u32, u32)>,
    offsets: Vec<usize>,
    adjacency: Vec<Neighbor>,
}

impl Graph {
    /// Build a graph from an edge list. Edges are canonicalized to `i < j`
    /// and sorted; self-loops and duplicates are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::with_topology(Topology::Custom, n, edges)
    }

    fn with_topology(topology: Topology, n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n > u32::MAX as usize {
            return Err(Error::InvalidParameter(format!("{n} vertices overflow the vertex index")));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) out of range for {n} vertices")));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop at vertex {a}")));
            }
            canon.push((a.min(b) as u32, a.max(b) as u32));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!("duplicate edge ({}, {})", w[0].0, w[0].1)));
        }

        let mut degree = vec![0usize; n];
        for &(a, b) in &canon {
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut adjacency = vec![Neighbor { vertex: 0, edge: 0 }; offsets[n]];
        for (e, &(a, b)) in canon.iter().enumerate() {
            adjacency[fill[a as usize]] = Neighbor { vertex: b, edge: e as u32 };
            fill[a as usize] += 1;
            adjacency[fill[b as usize]] = Neighbor { vertex: a, edge: e as u32 };
            fill[b as usize] += 1;
        }
        for v in 0..n {
            adjacency[offsets[v]..offsets[v + 1]].sort_unstable_by_key(|nb| nb.vertex);
        }

        Ok(Self { topology, n, edges: canon, offsets, adjacency })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// Side length for square Chimera graphs.
    pub fn chimera_m(&self) -> Option<usize> {
        match self.topology {
            Topology::Chimera { rows, cols } if rows == cols => Some(rows),
            _ => None,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[Neighbor] {
        &self.adjacency[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Index of edge `{a, b}` if present.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        if a >= self.n || b >= self.n {
            return None;
        }
        self.neighbors(a)
            .binary_search_by_key(&(b as u32), |nb| nb.vertex)
            .ok()
            .map(|k| self.neighbors(a)[k].edge as usize)
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for nb in self.neighbors(v) {
                let u = nb.vertex as usize;
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count == self.n
    }

    /// Two-coloring of the vertices, or `None` if the graph has an odd cycle.
    pub fn bipartition(&self) -> Option<Vec<bool>> {
        let mut color: Vec<Option<bool>> = vec![None; self.n];
        for start in 0..self.n {
            if color[start].is_some() {
                continue;
            }
            color[start] = Some(false);
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                let cv = color[v].unwrap();
                for nb in self.neighbors(v) {
                    let u = nb.vertex as usize;
                    match color[u] {
                        None => {
                            color[u] = Some(!cv);
                            stack.push(u);
                        }
                        Some(cu) if cu == cv => return None,
                        _ => {}
                    }
                }
            }
        }
        Some(color.into_iter().map(|c| c.unwrap()).collect())
    }

    /// Write the edge list as `i j` lines (0-based, `i < j`).
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for &(a, b) in &self.edges {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    }
}

/// Vertex index of slot `slot` in cell `(r, c)` of a Chimera graph with `cols` columns.
#[inline]
pub fn chimera_index(cols: usize, r: usize, c: usize, slot: usize) -> usize {
    (r * cols + c) * CELL_SIZE + slot
}

/// Inverse of [`chimera_index`]: `(row, col, slot)`.
#[inline]
pub fn chimera_coords(cols: usize, v: usize) -> (usize, usize, usize) {
    let cell = v / CELL_SIZE;
    (cell / cols, cell % cols, v % CELL_SIZE)
}

/// Square Chimera graph with `m x m` cells.
pub fn build_chimera(m: usize) -> Result<Graph> {
    build_chimera_rect(m, m)
}

/// Rectangular Chimera graph with `rows x cols` cells.
pub fn build_chimera_rect(rows: usize, cols: usize) -> Result<Graph> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidParameter(format!("chimera dimensions must be positive, got {rows}x{cols}")));
    }
    let n = rows
        .checked_mul(cols)
        .and_then(|x| x.checked_mul(CELL_SIZE))
        .filter(|&n| n <= u32::MAX as usize)
        .ok_or_else(|| Error::InvalidParameter(format!("{rows}x{cols} chimera overflows the vertex index")))?;

    let mut edges = Vec::with_capacity(16 * rows * cols + 4 * rows * (cols - 1) + 4 * cols * (rows - 1));
    for r in 0..rows {
        for c in 0..cols {
            for a in 0..CELL_HALF {
                for b in CELL_HALF..CELL_SIZE {
                    edges.push((chimera_index(cols, r, c, a), chimera_index(cols, r, c, b)));
                }
            }
            // partition A couples vertically, partition B horizontally
            if r + 1 < rows {
                for t in 0..CELL_HALF {
                    edges.push((chimera_index(cols, r, c, t), chimera_index(cols, r + 1, c, t)));
                }
            }
            if c + 1 < cols {
                for t in CELL_HALF..CELL_SIZE {
                    edges.push((chimera_index(cols, r, c, t), chimera_index(cols, r, c + 1, t)));
                }
            }
        }
    }
    Graph::with_topology(Topology::Chimera { rows, cols }, n, &edges)
}

/// Number of vertices per degree.
pub fn degree_histogram(g: &Graph) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for v in 0..g.n_vertices() {
        *hist.entry(g.degree(v)).or_insert(0) += 1;
    }
    hist
}

pub fn mean_degree(g: &Graph) -> f64 {
    if g.n_vertices() == 0 {
        return 0.0;
    }
    2.0 * g.n_edges() as f64 / g.n_vertices() as f64
}

//! Structured triangulations of the unit square and their dual graph.
//!
//! Every grid square is split along its bottom-left to top-right diagonal.
//! Facets carry a global unit normal obtained by rotating the tangent
//! (lower-indexed vertex towards higher-indexed vertex) by +90 degrees; each
//! cell records, per facet, whether that normal points out of the cell (+1)
//! or into it (-1).

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("cell counts per side must be positive, got {nx} x {ny}")]
    InvalidResolution { nx: usize, ny: usize },
}

/// Side of the unit square a boundary facet lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundarySide {
    Bottom,
    Right,
    Top,
    Left,
}

impl BoundarySide {
    pub const ALL: [BoundarySide; 4] = [
        BoundarySide::Bottom,
        BoundarySide::Right,
        BoundarySide::Top,
        BoundarySide::Left,
    ];
}

impl fmt::Display for BoundarySide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            BoundarySide::Bottom => "bottom",
            BoundarySide::Right => "right",
            BoundarySide::Top => "top",
            BoundarySide::Left => "left",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Counter-clockwise vertex triples.
    pub cells: Vec<[usize; 3]>,
    /// Vertex pairs, lower index first.
    pub facets: Vec<[usize; 2]>,
    /// Local facet `j` of a cell joins local vertices `j` and `j + 1`.
    pub cell_facets: Vec<[usize; 3]>,
    /// +1 when the global facet normal is the outward normal of the cell.
    pub cell_facet_signs: Vec<[f64; 3]>,
    /// Cells adjacent to each facet; the second entry is `None` on the boundary.
    pub facet_cells: Vec<(usize, Option<usize>)>,
    pub boundary_tags: Vec<Option<BoundarySide>>,
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

impl Mesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn num_boundary_facets(&self) -> usize {
        self.boundary_tags.iter().filter(|t| t.is_some()).count()
    }

    pub fn is_boundary(&self, facet: usize) -> bool {
        self.facet_cells[facet].1.is_none()
    }

    /// Signed area; positive for every cell of a valid mesh.
    pub fn cell_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cells[cell].map(|v| self.vertices[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn cell_centroid(&self, cell: usize) -> Point {
        let [a, b, c] = self.cells[cell].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn cell_vertices(&self, cell: usize) -> [Point; 3] {
        self.cells[cell].map(|v| self.vertices[v])
    }

    /// Unnormalized tangent from the lower-indexed to the higher-indexed vertex.
    pub fn facet_tangent(&self, facet: usize) -> Point {
        let [a, b] = self.facets[facet].map(|v| self.vertices[v]);
        [b[0] - a[0], b[1] - a[1]]
    }

    pub fn facet_length(&self, facet: usize) -> f64 {
        let t = self.facet_tangent(facet);
        t[0].hypot(t[1])
    }

    /// Global unit normal: the unit tangent rotated by +90 degrees.
    pub fn facet_normal(&self, facet: usize) -> Point {
        let t = self.facet_tangent(facet);
        let len = t[0].hypot(t[1]);
        [-t[1] / len, t[0] / len]
    }

    /// Point at parameter `t` in [0, 1] along the facet, starting at the
    /// lower-indexed vertex.
    pub fn facet_point(&self, facet: usize, t: f64) -> Point {
        let [a, b] = self.facets[facet].map(|v| self.vertices[v]);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    pub fn facet_midpoint(&self, facet: usize) -> Point {
        self.facet_point(facet, 0.5)
    }

    /// Local position (0..3) of `facet` within `cell`.
    pub fn local_facet_index(&self, cell: usize, facet: usize) -> Option<usize> {
        self.cell_facets[cell].iter().position(|&f| f == facet)
    }

    pub fn boundary_facets(&self) -> impl Iterator<Item = (usize, BoundarySide)> + '_ {
        self.boundary_tags
            .iter()
            .enumerate()
            .filter_map(|(f, t)| t.map(|side| (f, side)))
    }

    /// Checks the topological invariants of the structured mesher.
    pub fn validate(&self) -> Result<(), String> {
        let v = self.num_vertices() as i64;
        let e = self.num_facets() as i64;
        let c = self.num_cells() as i64;
        if v - e + (c + 1) != 2 {
            return Err(format!("Euler relation violated: V={v} E={e} C={c}"));
        }
        for cell in 0..self.num_cells() {
            if self.cell_area(cell) <= 0.0 {
                return Err(format!("cell {cell} has non-positive area"));
            }
        }
        for (facet, &(a, b)) in self.facet_cells.iter().enumerate() {
            let sign_of = |cell: usize| {
                let j = self.local_facet_index(cell, facet).expect("incidence");
                self.cell_facet_signs[cell][j]
            };
            match b {
                Some(b) => {
                    if sign_of(a) * sign_of(b) != -1.0 {
                        return Err(format!("interior facet {facet} lacks opposite orientations"));
                    }
                    if self.boundary_tags[facet].is_some() {
                        return Err(format!("interior facet {facet} carries a boundary tag"));
                    }
                }
                None => {
                    if self.boundary_tags[facet].is_none() {
                        return Err(format!("boundary facet {facet} is untagged"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Plain-text dump (vertices then cells) for debugging.
    pub fn write_plain_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "vertices {}", self.num_vertices())?;
        for p in &self.vertices {
            writeln!(w, "{} {}", p[0], p[1])?;
        }
        writeln!(w, "cells {}", self.num_cells())?;
        for c in &self.cells {
            writeln!(w, "{} {} {}", c[0], c[1], c[2])?;
        }
        Ok(())
    }
}

/// Triangulates the unit square with `nx * ny` squares, each split along the
/// bottom-left to top-right diagonal.
pub fn build_structured_unit_square(nx: usize, ny: usize) -> Result<Mesh, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::InvalidResolution { nx, ny });
    }
    let vid = |i: usize, j: usize| i + (nx + 1) * j;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([i as f64 / nx as f64, j as f64 / ny as f64]);
        }
    }

    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
            cells.push([v00, v10, v11]);
            cells.push([v00, v11, v01]);
        }
    }

    let mut facet_index: HashMap<[usize; 2], usize> = HashMap::new();
    let mut facets = Vec::new();
    let mut facet_cells: Vec<(usize, Option<usize>)> = Vec::new();
    let mut cell_facets = Vec::with_capacity(cells.len());
    for (c, tri) in cells.iter().enumerate() {
        let mut local = [0usize; 3];
        for (j, slot) in local.iter_mut().enumerate() {
            let (a, b) = (tri[j], tri[(j + 1) % 3]);
            let key = [a.min(b), a.max(b)];
            *slot = *facet_index.entry(key).or_insert_with(|| {
                facets.push(key);
                facet_cells.push((c, None));
                facets.len() - 1
            });
            if facet_cells[*slot].0 != c {
                facet_cells[*slot].1 = Some(c);
            }
        }
        cell_facets.push(local);
    }

    let mut mesh = Mesh {
        vertices,
        cells,
        facets,
        cell_facets,
        cell_facet_signs: Vec::new(),
        boundary_tags: Vec::new(),
        facet_cells,
        nx,
        ny,
        h: (1.0 / nx as f64).max(1.0 / ny as f64),
    };

    mesh.cell_facet_signs = (0..mesh.num_cells())
        .map(|c| {
            let centroid = mesh.cell_centroid(c);
            mesh.cell_facets[c].map(|f| {
                let n = mesh.facet_normal(f);
                let m = mesh.facet_midpoint(f);
                if n[0] * (m[0] - centroid[0]) + n[1] * (m[1] - centroid[1]) > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
        })
        .collect();

    let tol = 1e-12;
    mesh.boundary_tags = (0..mesh.num_facets())
        .map(|f| {
            if !mesh.is_boundary(f) {
                return None;
            }
            let m = mesh.facet_midpoint(f);
            Some(if m[1] < tol {
                BoundarySide::Bottom
            } else if m[1] > 1.0 - tol {
                BoundarySide::Top
            } else if m[0] < tol {
                BoundarySide::Left
            } else {
                BoundarySide::Right
            })
        })
        .collect();

    Ok(mesh)
}

/// Cell adjacency through interior facets.
#[derive(Debug, Clone)]
pub struct DualGraph {
    pub num_nodes: usize,
    /// `(cell_a, cell_b, facet)` per interior facet.
    pub edges: Vec<(usize, usize, usize)>,
    /// Per cell, `(neighbor, facet)` sorted by facet index.
    pub adjacency: Vec<Vec<(usize, usize)>>,
}

impl DualGraph {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of connected components, by breadth-first search.
    pub fn connected_components(&self) -> usize {
        let mut seen = vec![false; self.num_nodes];
        let mut components = 0;
        for start in 0..self.num_nodes {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(node) = queue.pop_front() {
                for &(next, _) in &self.adjacency[node] {
                    if !seen[next] {
                        seen[next] = true;
                        queue.push_back(next);
                    }
                }
            }
        }
        components
    }
}

pub fn build_dual_graph(mesh: &Mesh) -> DualGraph {
    let mut edges = Vec::new();
    let mut adjacency = vec![Vec::new(); mesh.num_cells()];
    for (facet, &(a, b)) in mesh.facet_cells.iter().enumerate() {
        if let Some(b) = b {
            edges.push((a, b, facet));
            adjacency[a].push((b, facet));
            adjacency[b].push((a, facet));
        }
    }
    for list in &mut adjacency {
        list.sort_by_key(|&(_, facet)| facet);
    }
    DualGraph {
        num_nodes: mesh.num_cells(),
        edges,
        adjacency,
    }
}

//! Vertices of `Z^d`, hyperedges and partial spin configurations.
//!
//! The dimension `d` (1, 2 or 3) is a model-level parameter. A [`Vertex`]
//! always stores three coordinates; models with `d < 3` keep the trailing
//! coordinates at zero so that lexicographic ordering and hashing work
//! uniformly.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

/// A point of `Z^d`. Ordered lexicographically on its coordinates, which is
/// the total order used everywhere for deterministic tie-breaking.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Vertex {
    coords: [i64; 3],
}

impl Vertex {
    pub fn new(x: i64, y: i64, z: i64) -> Self {
        Vertex { coords: [x, y, z] }
    }

    pub fn origin() -> Self {
        Vertex::new(0, 0, 0)
    }

    /// Builds a vertex from `1..=3` coordinates, zero-padding the rest.
    pub fn from_coords(coords: &[i64]) -> Result<Self> {
        if coords.is_empty() || coords.len() > 3 {
            return Err(CoreError::InvalidModel(format!(
                "vertex must have 1..=3 coordinates, got {}",
                coords.len()
            )));
        }
        let mut c = [0i64; 3];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Vertex { coords: c })
    }

    /// The first `dim` coordinates.
    pub fn coords(&self, dim: usize) -> &[i64] {
        &self.coords[..dim]
    }

    pub fn l1_norm(&self) -> u64 {
        self.coords.iter().map(|c| c.unsigned_abs()).sum()
    }

    pub fn l1_distance(&self, other: &Vertex) -> u64 {
        self.coords
            .iter()
            .zip(other.coords.iter())
            .map(|(a, b)| a.abs_diff(*b))
            .sum()
    }

    pub fn translate(&self, offset: &Vertex) -> Vertex {
        Vertex::new(
            self.coords[0] + offset.coords[0],
            self.coords[1] + offset.coords[1],
            self.coords[2] + offset.coords[2],
        )
    }

    /// `self - other`, as an offset vertex.
    pub fn offset_from(&self, other: &Vertex) -> Vertex {
        Vertex::new(
            self.coords[0] - other.coords[0],
            self.coords[1] - other.coords[1],
            self.coords[2] - other.coords[2],
        )
    }

    /// Coordinate list truncated to `dim`, for serialization.
    pub fn to_vec(&self, dim: usize) -> Vec<i64> {
        self.coords[..dim].to_vec()
    }

    /// Compact display like `0` or `1,-2`, truncated to `dim`.
    pub fn display(&self, dim: usize) -> String {
        self.coords[..dim]
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Debug for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{})",
            self.coords[0], self.coords[1], self.coords[2]
        )
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Enumerates the L1 sphere of radius `r` around the origin in dimension
/// `dim`, in lexicographic order. Radius 0 yields only the origin.
pub fn l1_shell(dim: usize, r: u64) -> Vec<Vertex> {
    let r = r as i64;
    let mut out = Vec::new();
    match dim {
        1 => {
            if r == 0 {
                out.push(Vertex::new(0, 0, 0));
            } else {
                out.push(Vertex::new(-r, 0, 0));
                out.push(Vertex::new(r, 0, 0));
            }
        }
        2 => {
            for x in -r..=r {
                let rem = r - x.abs();
                if rem == 0 {
                    out.push(Vertex::new(x, 0, 0));
                } else {
                    out.push(Vertex::new(x, -rem, 0));
                    out.push(Vertex::new(x, rem, 0));
                }
            }
        }
        3 => {
            for x in -r..=r {
                for y in -(r - x.abs())..=(r - x.abs()) {
                    let rem = r - x.abs() - y.abs();
                    if rem == 0 {
                        out.push(Vertex::new(x, y, 0));
                    } else {
                        out.push(Vertex::new(x, y, -rem));
                        out.push(Vertex::new(x, y, rem));
                    }
                }
            }
        }
        _ => panic!("dimension must be 1, 2 or 3"),
    }
    out.sort_unstable();
    out
}

/// Number of lattice points at L1 distance exactly `r` in dimension `dim`.
pub fn l1_shell_size(dim: usize, r: u64) -> u64 {
    if r == 0 {
        return 1;
    }
    match dim {
        1 => 2,
        2 => 4 * r,
        3 => 4 * r * r + 2,
        _ => panic!("dimension must be 1, 2 or 3"),
    }
}

/// Number of lattice points at L1 distance at most `r` in dimension `dim`.
pub fn l1_ball_size(dim: usize, r: u64) -> u64 {
    (0..=r).map(|k| l1_shell_size(dim, k)).sum()
}

/// A finite set of at least two vertices, stored sorted and duplicate-free.
/// Two hyperedges are equal iff their canonical vertex lists are equal.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Hyperedge {
    vertices: Vec<Vertex>,
}

impl Hyperedge {
    pub fn new(mut vertices: Vec<Vertex>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(CoreError::InvalidModel(format!(
                "hyperedge must have at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        vertices.sort_unstable();
        if vertices.windows(2).any(|w| w[0] == w[1]) {
            return Err(CoreError::InvalidModel(format!(
                "hyperedge contains a duplicate vertex: {vertices:?}"
            )));
        }
        Ok(Hyperedge { vertices })
    }

    pub fn pair(a: Vertex, b: Vertex) -> Result<Self> {
        Hyperedge::new(vec![a, b])
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, v: &Vertex) -> bool {
        self.vertices.binary_search(v).is_ok()
    }

    pub fn is_pair(&self) -> bool {
        self.vertices.len() == 2
    }

    /// For a pair edge containing `v`, the other endpoint.
    pub fn other_end(&self, v: &Vertex) -> Option<Vertex> {
        if !self.is_pair() || !self.contains(v) {
            return None;
        }
        Some(if self.vertices[0] == *v {
            self.vertices[1]
        } else {
            self.vertices[0]
        })
    }

    pub fn translate(&self, offset: &Vertex) -> Hyperedge {
        // Translation preserves order and distinctness.
        Hyperedge {
            vertices: self.vertices.iter().map(|v| v.translate(offset)).collect(),
        }
    }

    /// True iff every vertex of the edge is accepted by `contains`.
    pub fn subset_of(&self, contains: impl Fn(&Vertex) -> bool) -> bool {
        self.vertices.iter().all(contains)
    }
}

/// A spin value.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Spin {
    Minus,
    Plus,
}

impl Spin {
    pub fn value(&self) -> i8 {
        match self {
            Spin::Minus => -1,
            Spin::Plus => 1,
        }
    }

    pub fn flipped(&self) -> Spin {
        match self {
            Spin::Minus => Spin::Plus,
            Spin::Plus => Spin::Minus,
        }
    }

    pub fn from_sign(x: i8) -> Option<Spin> {
        match x {
            -1 => Some(Spin::Minus),
            1 => Some(Spin::Plus),
            _ => None,
        }
    }
}

/// A partial spin configuration. Vertices absent from the map are in the
/// cemetery (unassigned) state.
#[derive(Clone, Debug, Default)]
pub struct SpinConfig {
    assignment: HashMap<Vertex, Spin>,
}

impl SpinConfig {
    pub fn new() -> Self {
        SpinConfig::default()
    }

    pub fn get(&self, v: &Vertex) -> Option<Spin> {
        self.assignment.get(v).copied()
    }

    pub fn set(&mut self, v: Vertex, s: Spin) {
        self.assignment.insert(v, s);
    }

    pub fn unset(&mut self, v: &Vertex) {
        self.assignment.remove(v);
    }

    pub fn is_assigned(&self, v: &Vertex) -> bool {
        self.assignment.contains_key(v)
    }

    pub fn flip(&mut self, v: &Vertex) -> Result<()> {
        match self.assignment.get_mut(v) {
            Some(s) => {
                *s = s.flipped();
                Ok(())
            }
            None => Err(CoreError::UnassignedSpin(*v)),
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vertex, &Spin)> {
        self.assignment.iter()
    }

    /// Product of the spins over a hyperedge.
    pub fn chi(&self, edge: &Hyperedge) -> Result<i8> {
        let mut prod = 1i8;
        for v in edge.vertices() {
            match self.get(v) {
                Some(s) => prod *= s.value(),
                None => return Err(CoreError::UnassignedSpin(*v)),
            }
        }
        Ok(prod)
    }
}

/// Product of spins over `edge` in `config`.
pub fn chi(edge: &Hyperedge, config: &SpinConfig) -> Result<i8> {
    config.chi(edge)
}

/// Lazily enumerates `Z^d` in (L1 norm, lexicographic) order around a center.
#[derive(Debug, Clone)]
pub struct SpiralEnumerator {
    dim: usize,
    center: Vertex,
    radius: u64,
    buffer: Vec<Vertex>,
    next: usize,
}

impl SpiralEnumerator {
    /// Starts at radius 1; the center itself is not produced.
    pub fn new(dim: usize, center: Vertex) -> Self {
        SpiralEnumerator {
            dim,
            center,
            radius: 0,
            buffer: Vec::new(),
            next: 0,
        }
    }
}

impl Iterator for SpiralEnumerator {
    type Item = Vertex;

    fn next(&mut self) -> Option<Vertex> {
        if self.next >= self.buffer.len() {
            self.radius += 1;
            self.buffer = l1_shell(self.dim, self.radius)
                .into_iter()
                .map(|o| self.center.translate(&o))
                .collect();
            self.next = 0;
        }
        let v = self.buffer[self.next];
        self.next += 1;
        Some(v)
    }
}

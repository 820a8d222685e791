//! Periodic lattice geometry.
//!
//! The vertex set is `{0..n-1}^d` with every coordinate reduced modulo `n`. Two
//! distinct vertices are neighbors when the componentwise difference, taken
//! modulo `n`, has `L_p` norm at most `rho`. Sites are numbered row-major with
//! the first coordinate most significant, so site order is lexicographic order
//! on canonical coordinates.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of sites a lattice may have.
pub const MAX_SITES: usize = 1 << 28;

/// A displacement in `Z^d`.
pub type Offset = Vec<i64>;

/// Norm selector for the neighborhood relation. `Infinity` is a distinct
/// selector, never a float.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Norm {
    P(u32),
    Infinity,
}

impl Norm {
    /// Whether `‖offset‖_p <= radius`, using exact integer arithmetic.
    pub fn within(self, offset: &[i64], radius: usize) -> bool {
        match self {
            Norm::Infinity => offset.iter().all(|c| c.unsigned_abs() as usize <= radius),
            Norm::P(p) => {
                let bound = (radius as u128).saturating_pow(p);
                let mut total: u128 = 0;
                for c in offset {
                    total = total.saturating_add((c.unsigned_abs() as u128).saturating_pow(p));
                    if total > bound {
                        return false;
                    }
                }
                true
            }
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::P(p) => write!(f, "{p}"),
            Norm::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "Inf" | "INF" | "infinity" | "∞" => Ok(Norm::Infinity),
            other => match other.parse::<u32>() {
                Ok(p) if p >= 1 => Ok(Norm::P(p)),
                _ => Err(Error::InvalidLattice(format!(
                    "norm must be an integer >= 1 or `inf`, got `{other}`"
                ))),
            },
        }
    }
}

impl Serialize for Norm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Norm::P(p) => s.serialize_u32(*p),
            Norm::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Norm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(p) => Norm::from_str(&p.to_string()).map_err(serde::de::Error::custom),
            Raw::Str(s) => Norm::from_str(&s).map_err(serde::de::Error::custom),
        }
    }
}

/// The `n`-independent part of a lattice: dimension, neighborhood range and norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Signature {
    pub dim: usize,
    pub range: usize,
    pub norm: Norm,
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(d={}, rho={}, p={})", self.dim, self.range, self.norm)
    }
}

impl Signature {
    pub fn new(dim: usize, range: usize, norm: Norm) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidLattice("dimension must be positive".into()));
        }
        if range == 0 {
            return Err(Error::InvalidLattice("neighborhood range must be positive".into()));
        }
        if let Norm::P(0) = norm {
            return Err(Error::InvalidLattice("norm exponent must be >= 1".into()));
        }
        Ok(Signature { dim, range, norm })
    }

    /// Nonzero offsets `o` in `Z^d` with `‖o‖_p <= rho`, lexicographically sorted.
    pub fn neighbor_offsets(&self) -> Vec<Offset> {
        let r = self.range as i64;
        let mut out = Vec::new();
        let mut cur = vec![-r; self.dim];
        loop {
            if cur.iter().any(|&c| c != 0) && self.norm.within(&cur, self.range) {
                out.push(cur.clone());
            }
            // odometer over [-r, r]^d, last coordinate fastest
            let mut i = self.dim;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if cur[i] < r {
                    cur[i] += 1;
                    break;
                }
                cur[i] = -r;
            }
        }
    }

    /// Number of neighbors of a vertex once `n > 2 rho`.
    pub fn degree(&self) -> usize {
        self.neighbor_offsets().len()
    }

    /// Offsets of the ball of graph radius `radius` around the origin of `Z^d`,
    /// each paired with its graph distance, sorted lexicographically by offset.
    pub fn ball_layers(&self, radius: usize) -> Vec<(Offset, usize)> {
        let steps = self.neighbor_offsets();
        let mut seen: std::collections::BTreeMap<Offset, usize> = Default::default();
        let origin = vec![0i64; self.dim];
        seen.insert(origin.clone(), 0);
        let mut frontier = vec![origin];
        for dist in 1..=radius {
            let mut next = Vec::new();
            for v in &frontier {
                for s in &steps {
                    let w: Offset = v.iter().zip(s).map(|(a, b)| a + b).collect();
                    if !seen.contains_key(&w) {
                        seen.insert(w.clone(), dist);
                        next.push(w);
                    }
                }
            }
            frontier = next;
        }
        seen.into_iter().collect()
    }

    /// Offsets of the reference ball `B(0, radius)` in `Z^d`, sorted lexicographically.
    pub fn ball_offsets(&self, radius: usize) -> Vec<Offset> {
        self.ball_layers(radius).into_iter().map(|(o, _)| o).collect()
    }

    /// Graph distance from the origin to `offset` in `Z^d`.
    pub fn distance_from_origin(&self, offset: &[i64]) -> usize {
        // Every step moves each coordinate by at most rho, so the distance is
        // at least ceil(max|c| / rho); search the balls up from there.
        let max = offset.iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0);
        let mut r = max.div_ceil(self.range);
        loop {
            if self.ball_offsets(r).iter().any(|o| o.as_slice() == offset) {
                return r;
            }
            r += 1;
        }
    }
}

/// A vertex of `V_n`, stored with canonical coordinates in `[0, n)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vertex {
    coords: Vec<usize>,
}

impl Vertex {
    pub fn coords(&self) -> &[usize] {
        &self.coords
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// The ball `B(center, radius)` for the graph distance of a torus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ball {
    pub center: Vertex,
    pub radius: usize,
    /// Members in lexicographic order of canonical coordinates.
    pub members: Vec<Vertex>,
    sites: Vec<usize>,
}

impl Ball {
    /// Site indices of the members, ascending.
    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    /// `beta(r)`.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// The torus `G_n = (V_n, E_n)`.
#[derive(Clone, Debug)]
pub struct TorusLattice {
    signature: Signature,
    side: usize,
    sites: usize,
    degree: usize,
    neighbors: Vec<usize>,
}

impl PartialEq for TorusLattice {
    fn eq(&self, other: &Self) -> bool {
        self.signature == other.signature && self.side == other.side
    }
}

impl Eq for TorusLattice {}

impl fmt::Display for TorusLattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "torus(d={}, n={}, rho={}, p={})",
            self.signature.dim, self.side, self.signature.range, self.signature.norm
        )
    }
}

impl TorusLattice {
    pub fn new(dim: usize, side: usize, range: usize, norm: Norm) -> Result<Self> {
        let signature = Signature::new(dim, range, norm)?;
        Self::with_signature(signature, side)
    }

    pub fn with_signature(signature: Signature, side: usize) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidLattice("side length must be positive".into()));
        }
        let sites = (0..signature.dim)
            .try_fold(1usize, |acc, _| acc.checked_mul(side).filter(|&s| s <= MAX_SITES))
            .ok_or_else(|| {
                Error::InvalidLattice(format!("{side}^{} sites exceeds {MAX_SITES}", signature.dim))
            })?;

        let offsets = signature.neighbor_offsets();
        let mut lat = TorusLattice {
            signature,
            side,
            sites,
            degree: 0,
            neighbors: Vec::new(),
        };

        let mut table: Vec<Vec<usize>> = Vec::with_capacity(sites);
        for x in 0..sites {
            let set: BTreeSet<usize> = offsets
                .iter()
                .map(|o| lat.translate_site(x, o))
                .filter(|&y| y != x)
                .collect();
            table.push(set.into_iter().collect());
        }
        let degree = table.first().map_or(0, Vec::len);
        debug_assert!(table.iter().all(|t| t.len() == degree));
        lat.degree = degree;
        lat.neighbors = table.into_iter().flatten().collect();
        Ok(lat)
    }

    pub fn signature(&self) -> Signature {
        self.signature
    }

    pub fn dim(&self) -> usize {
        self.signature.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn range(&self) -> usize {
        self.signature.range
    }

    pub fn norm(&self) -> Norm {
        self.signature.norm
    }

    /// `n^d`.
    pub fn num_sites(&self) -> usize {
        self.sites
    }

    /// Number of neighbors of every vertex.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn vertex(&self, coords: &[usize]) -> Result<Vertex> {
        if coords.len() != self.dim() || coords.iter().any(|&c| c >= self.side) {
            return Err(Error::InvalidVertex {
                coords: coords.to_vec(),
                side: self.side,
            });
        }
        Ok(Vertex {
            coords: coords.to_vec(),
        })
    }

    /// Vertex with coordinates reduced modulo `n`.
    pub fn vertex_wrapping(&self, coords: &[i64]) -> Vertex {
        let n = self.side as i64;
        Vertex {
            coords: coords.iter().map(|c| c.rem_euclid(n) as usize).collect(),
        }
    }

    pub fn origin(&self) -> Vertex {
        Vertex {
            coords: vec![0; self.dim()],
        }
    }

    pub fn site(&self, v: &Vertex) -> usize {
        v.coords.iter().fold(0, |acc, &c| acc * self.side + c)
    }

    pub fn vertex_at(&self, site: usize) -> Vertex {
        let mut coords = vec![0; self.dim()];
        let mut rest = site;
        for c in coords.iter_mut().rev() {
            *c = rest % self.side;
            rest /= self.side;
        }
        Vertex { coords }
    }

    /// Site reached from `site` by the displacement `offset`, modulo `n`.
    pub fn translate_site(&self, site: usize, offset: &[i64]) -> usize {
        let n = self.side as i64;
        let mut rest = site;
        let mut stride = 1usize;
        let mut out = 0usize;
        for o in offset.iter().rev() {
            let c = (rest % self.side) as i64;
            rest /= self.side;
            out += (c + o).rem_euclid(n) as usize * stride;
            stride *= self.side;
        }
        out
    }

    /// Componentwise sum modulo `n`.
    pub fn add(&self, x: &Vertex, y: &Vertex) -> Vertex {
        Vertex {
            coords: x
                .coords
                .iter()
                .zip(&y.coords)
                .map(|(a, b)| (a + b) % self.side)
                .collect(),
        }
    }

    pub fn neighbor_sites(&self, site: usize) -> &[usize] {
        &self.neighbors[site * self.degree..(site + 1) * self.degree]
    }

    /// `V(x)` in lexicographic order.
    pub fn neighbors(&self, x: &Vertex) -> Vec<Vertex> {
        self.neighbor_sites(self.site(x))
            .iter()
            .map(|&s| self.vertex_at(s))
            .collect()
    }

    /// Undirected edges `{x, y}` with `x < y`, each listed once.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.sites)
            .flat_map(|x| {
                self.neighbor_sites(x)
                    .iter()
                    .filter(move |&&y| y > x)
                    .map(move |&y| (x, y))
            })
            .collect()
    }

    /// Graph distance by breadth-first search.
    pub fn distance(&self, x: &Vertex, y: &Vertex) -> usize {
        let (src, dst) = (self.site(x), self.site(y));
        if src == dst {
            return 0;
        }
        let mut dist = vec![usize::MAX; self.sites];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &w in self.neighbor_sites(u) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    if w == dst {
                        return dist[w];
                    }
                    queue.push_back(w);
                }
            }
        }
        unreachable!("the torus is connected")
    }

    fn check_ball_radius(&self, radius: usize) -> Result<()> {
        let bound = 2 * self.range() * radius;
        if self.side <= bound {
            return Err(Error::LatticeTooSmall {
                side: self.side,
                bound,
            });
        }
        Ok(())
    }

    /// `B(x, r)`; requires `n > 2 rho r`.
    pub fn ball(&self, x: &Vertex, radius: usize) -> Result<Ball> {
        self.check_ball_radius(radius)?;
        let base = self.site(x);
        let mut sites: Vec<usize> = self
            .signature
            .ball_offsets(radius)
            .iter()
            .map(|o| self.translate_site(base, o))
            .collect();
        sites.sort_unstable();
        sites.dedup();
        Ok(Ball {
            center: x.clone(),
            radius,
            members: sites.iter().map(|&s| self.vertex_at(s)).collect(),
            sites,
        })
    }

    /// `beta(r)`.
    pub fn ball_size(&self, radius: usize) -> Result<usize> {
        Ok(self.ball(&self.origin(), radius)?.len())
    }

    /// `δB`: vertices outside the ball adjacent to one of its members.
    pub fn boundary(&self, ball: &Ball) -> Vec<Vertex> {
        let inside: BTreeSet<usize> = ball.sites.iter().copied().collect();
        let outside: BTreeSet<usize> = ball
            .sites
            .iter()
            .flat_map(|&s| self.neighbor_sites(s).iter().copied())
            .filter(|s| !inside.contains(s))
            .collect();
        outside.into_iter().map(|s| self.vertex_at(s)).collect()
    }

    /// `B̄ = B(x, r + 1)`.
    pub fn closure(&self, ball: &Ball) -> Result<Ball> {
        self.ball(&ball.center, ball.radius + 1)
    }

    /// `alpha(r)`: edges with both endpoints in the ball.
    pub fn internal_edge_count(&self, ball: &Ball) -> usize {
        let inside: BTreeSet<usize> = ball.sites.iter().copied().collect();
        ball.sites
            .iter()
            .map(|&s| {
                self.neighbor_sites(s)
                    .iter()
                    .filter(|&&t| t > s && inside.contains(&t))
                    .count()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(d: usize, n: usize, rho: usize, norm: Norm) -> TorusLattice {
        TorusLattice::new(d, n, rho, norm).unwrap()
    }

    #[test]
    fn square_lattice_neighbors() {
        let l = lat(2, 8, 1, Norm::P(1));
        let nb = l.neighbors(&l.origin());
        let coords: Vec<Vec<usize>> = nb.iter().map(|v| v.coords().to_vec()).collect();
        assert_eq!(coords, vec![vec![0, 1], vec![0, 7], vec![1, 0], vec![7, 0]]);
    }

    #[test]
    fn sup_norm_adds_diagonals() {
        let l = lat(2, 8, 1, Norm::Infinity);
        assert_eq!(l.neighbors(&l.origin()).len(), 8);
        assert_eq!(l.degree(), 8);
    }

    #[test]
    fn ring_wraps_around() {
        let l = lat(1, 4, 1, Norm::P(1));
        let x = l.vertex(&[3]).unwrap();
        let nb: Vec<usize> = l.neighbors(&x).iter().map(|v| v.coords()[0]).collect();
        assert_eq!(nb, vec![0, 2]);
    }

    #[test]
    fn ball_sizes() {
        assert_eq!(lat(2, 8, 1, Norm::P(1)).ball_size(1).unwrap(), 5);
        assert_eq!(lat(2, 8, 1, Norm::Infinity).ball_size(1).unwrap(), 9);
        assert_eq!(
            lat(1, 4, 1, Norm::P(1)).ball_size(2),
            Err(Error::LatticeTooSmall { side: 4, bound: 4 })
        );
    }

    #[test]
    fn internal_edges() {
        let l = lat(2, 8, 1, Norm::P(1));
        let b = l.ball(&l.origin(), 1).unwrap();
        assert_eq!(l.internal_edge_count(&b), 4);
        let l = lat(1, 8, 1, Norm::P(1));
        let b = l.ball(&l.origin(), 1).unwrap();
        assert_eq!(l.internal_edge_count(&b), 2);
    }

    #[test]
    fn sup_norm_block_edge_count_matches_brute_force() {
        // oracle: every unordered pair of the 3x3 block whose coordinates
        // differ by at most one in each direction
        let block: Vec<(i64, i64)> = (-1..=1).flat_map(|x| (-1..=1).map(move |y| (x, y))).collect();
        let mut brute = 0;
        for i in 0..block.len() {
            for j in i + 1..block.len() {
                let (a, b) = (block[i], block[j]);
                if (a.0 - b.0).abs().max((a.1 - b.1).abs()) == 1 {
                    brute += 1;
                }
            }
        }
        assert_eq!(brute, 20);
        let l = lat(2, 8, 1, Norm::Infinity);
        let ball = l.ball(&l.origin(), 1).unwrap();
        assert_eq!(l.internal_edge_count(&ball), brute);
    }

    #[test]
    fn neighborhood_is_symmetric_irreflexive_and_regular() {
        for (d, n, rho, norm) in [
            (1, 5, 2, Norm::P(1)),
            (2, 5, 1, Norm::P(2)),
            (2, 4, 1, Norm::Infinity),
            (3, 3, 1, Norm::P(1)),
            (2, 3, 2, Norm::P(1)),
        ] {
            let l = lat(d, n, rho, norm);
            for x in 0..l.num_sites() {
                let nb = l.neighbor_sites(x);
                assert_eq!(nb.len(), l.degree());
                assert!(!nb.contains(&x));
                for &y in nb {
                    assert!(l.neighbor_sites(y).contains(&x));
                }
            }
        }
    }

    #[test]
    fn translation_covariance_exhaustive() {
        for (d, n, norm) in [(1, 6, Norm::P(1)), (2, 5, Norm::P(1)), (2, 4, Norm::Infinity)] {
            let l = lat(d, n, 1, norm);
            for xs in 0..l.num_sites() {
                for ys in 0..l.num_sites() {
                    let (x, y) = (l.vertex_at(xs), l.vertex_at(ys));
                    let mut shifted: Vec<Vertex> = l.neighbors(&x).iter().map(|v| l.add(v, &y)).collect();
                    shifted.sort();
                    assert_eq!(l.neighbors(&l.add(&x, &y)), shifted);
                }
            }
        }
    }

    #[test]
    fn ball_constants_do_not_depend_on_side() {
        for (d, rho, norm, r) in [
            (1, 1, Norm::P(1), 2),
            (2, 1, Norm::P(1), 2),
            (2, 1, Norm::Infinity, 1),
            (1, 2, Norm::P(1), 1),
        ] {
            let sig = Signature::new(d, rho, norm).unwrap();
            let small = TorusLattice::with_signature(sig, 2 * rho * r + 1).unwrap();
            let large = TorusLattice::with_signature(sig, 2 * rho * r + 6).unwrap();
            let bs = small.ball(&small.origin(), r).unwrap();
            let bl = large.ball(&large.origin(), r).unwrap();
            assert_eq!(bs.len(), bl.len());
            assert_eq!(bs.len(), sig.ball_offsets(r).len());
            // edges can close around the torus when n <= 2 rho r + rho
            let mid = TorusLattice::with_signature(sig, 2 * rho * r + rho + 1).unwrap();
            let bm = mid.ball(&mid.origin(), r).unwrap();
            assert_eq!(mid.internal_edge_count(&bm), large.internal_edge_count(&bl));
        }
        let l5 = lat(1, 5, 1, Norm::P(1));
        assert_eq!(l5.internal_edge_count(&l5.ball(&l5.origin(), 2).unwrap()), 5);
    }

    #[test]
    fn balls_are_translates_and_match_bfs() {
        let l = lat(2, 7, 1, Norm::P(1));
        let r = 2;
        let b0 = l.ball(&l.origin(), r).unwrap();
        for xs in 0..l.num_sites() {
            let x = l.vertex_at(xs);
            let bx = l.ball(&x, r).unwrap();
            let mut shifted: Vec<Vertex> = b0.members.iter().map(|v| l.add(v, &x)).collect();
            shifted.sort();
            assert_eq!(bx.members, shifted);
            let by_bfs: Vec<Vertex> = (0..l.num_sites())
                .map(|s| l.vertex_at(s))
                .filter(|y| l.distance(&x, y) <= r)
                .collect();
            assert_eq!(bx.members, by_bfs);
        }
    }

    #[test]
    fn graph_distance_is_a_metric() {
        for (d, n) in [(1, 6), (2, 4), (2, 5)] {
            let l = lat(d, n, 1, Norm::P(1));
            let verts: Vec<Vertex> = (0..l.num_sites()).map(|s| l.vertex_at(s)).collect();
            let dist: Vec<Vec<usize>> = verts
                .iter()
                .map(|x| verts.iter().map(|y| l.distance(x, y)).collect())
                .collect();
            for i in 0..verts.len() {
                assert_eq!(dist[i][i], 0);
                for j in 0..verts.len() {
                    assert_eq!(dist[i][j], dist[j][i]);
                    if i != j {
                        assert!(dist[i][j] > 0);
                    }
                    for k in 0..verts.len() {
                        assert!(dist[i][k] <= dist[i][j] + dist[j][k]);
                    }
                }
            }
        }
    }

    #[test]
    fn boundary_and_closure() {
        let l = lat(2, 9, 1, Norm::P(1));
        let b = l.ball(&l.origin(), 1).unwrap();
        let boundary = l.boundary(&b);
        assert_eq!(boundary.len(), 8);
        let closure = l.closure(&b).unwrap();
        assert_eq!(closure.len(), b.len() + boundary.len());
        for v in &boundary {
            assert_eq!(l.distance(&l.origin(), v), 2);
        }
    }

    #[test]
    fn norm_parsing() {
        assert_eq!("inf".parse::<Norm>().unwrap(), Norm::Infinity);
        assert_eq!("2".parse::<Norm>().unwrap(), Norm::P(2));
        assert!("0".parse::<Norm>().is_err());
        assert!("x".parse::<Norm>().is_err());
    }

    #[test]
    fn invalid_construction() {
        assert!(TorusLattice::new(0, 4, 1, Norm::P(1)).is_err());
        assert!(TorusLattice::new(1, 0, 1, Norm::P(1)).is_err());
        assert!(TorusLattice::new(1, 4, 0, Norm::P(1)).is_err());
        let l = lat(2, 4, 1, Norm::P(1));
        assert!(l.vertex(&[4, 0]).is_err());
        assert!(l.vertex(&[1]).is_err());
    }
}

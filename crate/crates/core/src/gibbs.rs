//! The Ising measure on a torus: parameters, configurations, exact enumeration
//! and local conditional probabilities.
//!
//! Weights are kept in the log domain. A configuration of a lattice with at
//! most 64 sites is also addressed by a bitmask whose bit `s` is set when site
//! `s` carries a positive spin.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{TorusLattice, Vertex};
use crate::motif::{enumerate_all, LocalConfig};
use crate::scalar::{log_add_exp, log_sum_exp, Real};

/// Default largest number of sites for exact enumeration.
pub const DEFAULT_EXACT_MAX_SITES: usize = 24;

/// Environment variable overriding [`DEFAULT_EXACT_MAX_SITES`].
pub const EXACT_MAX_SITES_ENV: &str = "ISING_POISSON_MAX_SITES";

/// Hard ceiling: configuration bitmasks are `u64`.
const BITMASK_SITES: usize = 40;

const CHUNK: usize = 1 << 12;

/// Exact-enumeration cap, honoring [`EXACT_MAX_SITES_ENV`].
pub fn exact_site_cap() -> usize {
    std::env::var(EXACT_MAX_SITES_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .map_or(DEFAULT_EXACT_MAX_SITES, |v| v.min(BITMASK_SITES))
}

/// Magnetic field `a` and pair potential `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub field: T,
    pub coupling: T,
}

impl<T: Real> ModelParams<T> {
    pub fn new(field: T, coupling: T) -> Result<Self> {
        if !field.is_finite() || !coupling.is_finite() {
            return Err(Error::InvalidSchedule(format!(
                "parameters must be finite, got a = {field}, b = {coupling}"
            )));
        }
        Ok(ModelParams { field, coupling })
    }

    /// The same measure seen with positive and negative spins swapped.
    pub fn flipped(self) -> Self {
        ModelParams {
            field: -self.field,
            coupling: self.coupling,
        }
    }

    /// Local field `a + b * sum` for a given sum of neighbor spins.
    #[inline]
    pub fn local_field(&self, neighbor_sum: i32) -> T {
        self.field + self.coupling * T::of(neighbor_sum as f64)
    }
}

/// `e^{2 a(n)} = c * n^{-d / k}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSchedule<T> {
    c: T,
    k_target: usize,
    dim: usize,
}

impl<T: Real> FieldSchedule<T> {
    pub fn new(c: T, k_target: usize, dim: usize) -> Result<Self> {
        if c <= T::zero() || !c.is_finite() {
            return Err(Error::InvalidSchedule(format!("c must be a positive real, got {c}")));
        }
        if k_target == 0 {
            return Err(Error::InvalidSchedule(
                "k_target must be at least 1 (the schedule divides by k)".into(),
            ));
        }
        if dim == 0 {
            return Err(Error::InvalidSchedule("dimension must be positive".into()));
        }
        Ok(FieldSchedule { c, k_target, dim })
    }

    pub fn c(&self) -> T {
        self.c
    }

    pub fn k_target(&self) -> usize {
        self.k_target
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `a(n) = 1/2 * log(c * n^{-d/k})`.
    pub fn field_at(&self, n: usize) -> T {
        self.field_with_shift(n, T::zero())
    }

    /// `a = 1/2 * log(c * n^{-d/k - shift})`; a positive shift pushes the field
    /// below the threshold, a negative one above it.
    pub fn field_with_shift(&self, n: usize, shift: T) -> T {
        let exponent = -(T::of_count(self.dim as u64) / T::of_count(self.k_target as u64)) - shift;
        let half = T::of(0.5);
        half * (self.c.ln() + exponent * T::of_count(n as u64).ln())
    }

    pub fn params_at(&self, n: usize, coupling: T) -> Result<ModelParams<T>> {
        ModelParams::new(self.field_at(n), coupling)
    }
}

/// A full configuration `sigma` on a torus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpinConfig {
    lattice: Arc<TorusLattice>,
    spins: Vec<i8>,
}

impl SpinConfig {
    pub fn constant(lattice: Arc<TorusLattice>, spin: i8) -> Self {
        assert!(spin == 1 || spin == -1, "spins are +1 or -1");
        let n = lattice.num_sites();
        SpinConfig {
            lattice,
            spins: vec![spin; n],
        }
    }

    pub fn all_minus(lattice: Arc<TorusLattice>) -> Self {
        Self::constant(lattice, -1)
    }

    pub fn all_plus(lattice: Arc<TorusLattice>) -> Self {
        Self::constant(lattice, 1)
    }

    pub fn from_spins(lattice: Arc<TorusLattice>, spins: Vec<i8>) -> Result<Self> {
        if spins.len() != lattice.num_sites() {
            return Err(Error::InvalidLattice(format!(
                "expected {} spins, got {}",
                lattice.num_sites(),
                spins.len()
            )));
        }
        if let Some(bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidLattice(format!("spin value {bad} is not +1 or -1")));
        }
        Ok(SpinConfig { lattice, spins })
    }

    /// Configuration whose positive sites are the set bits of `bits`.
    pub fn from_bits(lattice: Arc<TorusLattice>, bits: u64) -> Self {
        let spins = (0..lattice.num_sites())
            .map(|s| if bits >> s & 1 == 1 { 1 } else { -1 })
            .collect();
        SpinConfig { lattice, spins }
    }

    /// Bitmask form, when the lattice has at most 64 sites.
    pub fn to_bits(&self) -> Option<u64> {
        if self.spins.len() > 64 {
            return None;
        }
        Some(
            self.spins
                .iter()
                .enumerate()
                .filter(|(_, &s)| s > 0)
                .fold(0u64, |acc, (i, _)| acc | 1 << i),
        )
    }

    pub fn lattice(&self) -> &Arc<TorusLattice> {
        &self.lattice
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub(crate) fn spins_mut(&mut self) -> &mut [i8] {
        &mut self.spins
    }

    pub fn spin(&self, v: &Vertex) -> i8 {
        self.spins[self.lattice.site(v)]
    }

    #[inline]
    pub fn spin_at(&self, site: usize) -> i8 {
        self.spins[site]
    }

    pub fn set(&mut self, v: &Vertex, spin: i8) {
        assert!(spin == 1 || spin == -1, "spins are +1 or -1");
        let s = self.lattice.site(v);
        self.spins[s] = spin;
    }

    pub fn flip_all(&self) -> Self {
        SpinConfig {
            lattice: self.lattice.clone(),
            spins: self.spins.iter().map(|s| -s).collect(),
        }
    }

    /// `sum_x sigma(x)`.
    pub fn magnetization(&self) -> i64 {
        self.spins.iter().map(|&s| s as i64).sum()
    }

    /// `sum_{x,y} sigma(x) sigma(y)` over undirected edges.
    pub fn edge_sum(&self) -> i64 {
        (0..self.spins.len())
            .map(|x| {
                let sx = self.spins[x] as i64;
                self.lattice
                    .neighbor_sites(x)
                    .iter()
                    .filter(|&&y| y > x)
                    .map(|&y| sx * self.spins[y] as i64)
                    .sum::<i64>()
            })
            .sum()
    }

    /// `sigma <= sigma'` coordinatewise.
    pub fn is_below(&self, other: &SpinConfig) -> bool {
        self.spins.iter().zip(&other.spins).all(|(a, b)| a <= b)
    }

    /// Sum of the spins adjacent to `site`.
    #[inline]
    pub fn neighbor_sum(&self, site: usize) -> i32 {
        self.lattice
            .neighbor_sites(site)
            .iter()
            .map(|&y| self.spins[y] as i32)
            .sum()
    }
}

/// Exponent of the Gibbs weight: `a * sum sigma(x) + b * sum_{edges} sigma(x) sigma(y)`.
pub fn hamiltonian<T: Real>(cfg: &SpinConfig, params: &ModelParams<T>) -> T {
    params.field * T::of(cfg.magnetization() as f64) + params.coupling * T::of(cfg.edge_sum() as f64)
}

/// Spins fixed on a subset of sites.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartialSpins {
    values: BTreeMap<usize, i8>,
}

impl PartialSpins {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, lattice: &TorusLattice, v: &Vertex, spin: i8) {
        assert!(spin == 1 || spin == -1, "spins are +1 or -1");
        self.values.insert(lattice.site(v), spin);
    }

    pub fn set_site(&mut self, site: usize, spin: i8) {
        assert!(spin == 1 || spin == -1, "spins are +1 or -1");
        self.values.insert(site, spin);
    }

    pub fn get_site(&self, site: usize) -> Option<i8> {
        self.values.get(&site).copied()
    }

    /// Restriction of a full configuration to `sites`.
    pub fn restrict(cfg: &SpinConfig, sites: &[usize]) -> Self {
        PartialSpins {
            values: sites.iter().map(|&s| (s, cfg.spin_at(s))).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, i8)> + '_ {
        self.values.iter().map(|(&s, &v)| (s, v))
    }
}

/// Sites and edges entering the local energy of a ball.
#[derive(Clone, Debug)]
pub struct LocalGeometry {
    pub ball: Vec<usize>,
    pub boundary: Vec<usize>,
    /// Pairs of indices into `ball`.
    pub internal_edges: Vec<(usize, usize)>,
    /// (index into `ball`, index into `boundary`).
    pub boundary_edges: Vec<(usize, usize)>,
}

impl LocalGeometry {
    pub fn new(lattice: &TorusLattice, center: &Vertex, radius: usize) -> Result<Self> {
        let b = lattice.ball(center, radius)?;
        let ball = b.sites().to_vec();
        let boundary: Vec<usize> = lattice.boundary(&b).iter().map(|v| lattice.site(v)).collect();
        let mut internal_edges = Vec::new();
        let mut boundary_edges = Vec::new();
        for (i, &y) in ball.iter().enumerate() {
            for &z in lattice.neighbor_sites(y) {
                if let Ok(j) = ball.binary_search(&z) {
                    if j > i {
                        internal_edges.push((i, j));
                    }
                } else if let Ok(j) = boundary.binary_search(&z) {
                    boundary_edges.push((i, j));
                }
            }
        }
        Ok(LocalGeometry {
            ball,
            boundary,
            internal_edges,
            boundary_edges,
        })
    }

    /// Local energy from spins on the ball and on its boundary, indexed like
    /// `self.ball` and `self.boundary`.
    pub fn energy<T: Real>(&self, inside: &[i8], outside: &[i8], params: &ModelParams<T>) -> T {
        let field: i32 = inside.iter().map(|&s| s as i32).sum();
        let pairs: i32 = self
            .internal_edges
            .iter()
            .map(|&(i, j)| (inside[i] * inside[j]) as i32)
            .chain(
                self.boundary_edges
                    .iter()
                    .map(|&(i, j)| (inside[i] * outside[j]) as i32),
            )
            .sum();
        params.field * T::of(field as f64) + params.coupling * T::of(pairs as f64)
    }

    fn read_boundary(&self, lattice: &TorusLattice, spins: &PartialSpins) -> Result<Vec<i8>> {
        self.boundary
            .iter()
            .map(|&s| {
                spins
                    .get_site(s)
                    .ok_or_else(|| Error::MissingSpin(lattice.vertex_at(s).coords().to_vec()))
            })
            .collect()
    }
}

/// `H^{B(x,r)}(sigma)`: field over the ball, pair terms over every edge
/// touching the ball. Spins must be given on `B(x, r)` and on its boundary.
pub fn local_energy<T: Real>(
    lattice: &TorusLattice,
    spins: &PartialSpins,
    x: &Vertex,
    radius: usize,
    params: &ModelParams<T>,
) -> Result<T> {
    let geo = LocalGeometry::new(lattice, x, radius)?;
    let inside: Vec<i8> = geo
        .ball
        .iter()
        .map(|&s| {
            spins
                .get_site(s)
                .ok_or_else(|| Error::MissingSpin(lattice.vertex_at(s).coords().to_vec()))
        })
        .collect::<Result<_>>()?;
    let outside = geo.read_boundary(lattice, spins)?;
    Ok(geo.energy(&inside, &outside, params))
}

/// Ball spins of motif `motif` placed at the ball whose sites are `ball`.
fn motif_spins(lattice: &TorusLattice, center_site: usize, motif: &LocalConfig, ball: &[usize]) -> Vec<i8> {
    let mut spins = vec![-1i8; ball.len()];
    for p in motif.positives() {
        let s = lattice.translate_site(center_site, p);
        let i = ball.binary_search(&s).expect("motif positive lies in the ball");
        spins[i] = 1;
    }
    spins
}

/// Log weights `H^B(eta'_x sigma)` of every motif of the ball, together with
/// the index of `motif` among them.
fn local_log_weights<T: Real>(
    lattice: &TorusLattice,
    geo: &LocalGeometry,
    center_site: usize,
    family: &[LocalConfig],
    outside: &[i8],
    params: &ModelParams<T>,
) -> Vec<T> {
    family
        .iter()
        .map(|m| geo.energy(&motif_spins(lattice, center_site, m, &geo.ball), outside, params))
        .collect()
}

/// `mu(I_x^eta = 1 | sigma on δB(x,r))`, by enumeration of all motifs of the ball.
pub fn conditional_motif_probability<T: Real>(
    lattice: &TorusLattice,
    x: &Vertex,
    motif: &LocalConfig,
    boundary: &PartialSpins,
    params: &ModelParams<T>,
    cap: u128,
) -> Result<T> {
    motif.check_lattice(lattice)?;
    let geo = LocalGeometry::new(lattice, x, motif.radius())?;
    let outside = geo.read_boundary(lattice, boundary)?;
    let family = enumerate_all(motif.signature(), motif.radius(), cap)?;
    let center = lattice.site(x);
    let logs = local_log_weights(lattice, &geo, center, &family, &outside, params);
    let own = geo.energy(&motif_spins(lattice, center, motif, &geo.ball), &outside, params);
    Ok((own - log_sum_exp(&logs)).exp())
}

/// Outcome of the exhaustive conditional-probability sandwich check.
#[derive(Clone, Debug, PartialEq)]
pub struct SandwichReport<T> {
    pub side: usize,
    pub field: T,
    /// `c^k e^{-2 b gamma}`.
    pub lambda: T,
    /// Largest `n^d * mu(I = 1 | boundary)` over all boundaries.
    pub max_scaled: T,
    /// Smallest `n^d * mu(I = 1 | boundary)` over all boundaries.
    pub min_scaled: T,
    /// `min_scaled / lambda`.
    pub worst_lower_ratio: T,
    pub upper_bound_holds: bool,
    pub boundaries: usize,
}

/// Checks `n^d mu(I = 1 | sigma) <= c^k e^{-2 b gamma}` over every boundary
/// configuration of the motif's ball and reports the worst lower ratio.
pub fn check_conditional_sandwich<T: Real>(
    lattice: &TorusLattice,
    motif: &LocalConfig,
    schedule: &FieldSchedule<T>,
    coupling: T,
    tolerance: T,
    cap: u128,
) -> Result<SandwichReport<T>> {
    if !motif.is_clean() {
        return Err(Error::NotClean);
    }
    if motif.k() != schedule.k_target() {
        return Err(Error::MotifScheduleMismatch {
            motif_k: motif.k(),
            schedule_k: schedule.k_target(),
        });
    }
    motif.check_lattice(lattice)?;
    let bound = 2 * lattice.range() * (motif.radius() + 1);
    if lattice.side() <= bound {
        return Err(Error::LatticeTooSmall {
            side: lattice.side(),
            bound,
        });
    }

    let params = schedule.params_at(lattice.side(), coupling)?;
    let x = lattice.origin();
    let geo = LocalGeometry::new(lattice, &x, motif.radius())?;
    let family = enumerate_all(motif.signature(), motif.radius(), cap)?;
    let boundaries = 1u128 << geo.boundary.len();
    if boundaries > cap {
        return Err(Error::FamilyTooLarge {
            requested: boundaries,
            cap,
        });
    }
    let center = lattice.site(&x);
    let own_spins = motif_spins(lattice, center, motif, &geo.ball);
    let lambda = schedule.c().powi(motif.k() as i32) * (-T::of(2.0) * coupling * T::of(motif.perimeter() as f64)).exp();
    let volume = T::of_count(lattice.num_sites() as u64);

    let mut max_scaled = T::neg_infinity();
    let mut min_scaled = T::infinity();
    for mask in 0..boundaries as u64 {
        let outside: Vec<i8> = (0..geo.boundary.len())
            .map(|j| if mask >> j & 1 == 1 { 1 } else { -1 })
            .collect();
        let logs = local_log_weights(lattice, &geo, center, &family, &outside, &params);
        let own = geo.energy(&own_spins, &outside, &params);
        let scaled = volume * (own - log_sum_exp(&logs)).exp();
        max_scaled = max_scaled.max(scaled);
        min_scaled = min_scaled.min(scaled);
    }
    Ok(SandwichReport {
        side: lattice.side(),
        field: params.field,
        lambda,
        max_scaled,
        min_scaled,
        worst_lower_ratio: min_scaled / lambda,
        upper_bound_holds: max_scaled <= lambda + tolerance,
        boundaries: boundaries as usize,
    })
}

/// The Gibbs measure of a small torus, tabulated over every configuration.
#[derive(Clone, Debug)]
pub struct ExactMeasure<T> {
    lattice: Arc<TorusLattice>,
    params: ModelParams<T>,
    log_weights: Vec<T>,
    log_z: T,
}

impl<T: Real> ExactMeasure<T> {
    /// Builds the table, capped by [`exact_site_cap`].
    pub fn build(lattice: Arc<TorusLattice>, params: ModelParams<T>) -> Result<Self> {
        Self::build_with_cap(lattice, params, exact_site_cap())
    }

    pub fn build_with_cap(lattice: Arc<TorusLattice>, params: ModelParams<T>, cap: usize) -> Result<Self> {
        let sites = lattice.num_sites();
        let cap = cap.min(BITMASK_SITES);
        if sites > cap {
            return Err(Error::TooLargeForExact { sites, cap });
        }
        let edges = lattice.edges();
        let n_edges = edges.len() as i64;
        let total = 1usize << sites;
        let mut log_weights = vec![T::zero(); total];
        log_weights
            .par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(chunk, out)| {
                let base = chunk * CHUNK;
                for (i, w) in out.iter_mut().enumerate() {
                    let bits = (base + i) as u64;
                    let plus = bits.count_ones() as i64;
                    let disagree = edges
                        .iter()
                        .filter(|&&(x, y)| (bits >> x ^ bits >> y) & 1 == 1)
                        .count() as i64;
                    let magnetization = 2 * plus - sites as i64;
                    let edge_sum = n_edges - 2 * disagree;
                    *w = params.field * T::of(magnetization as f64) + params.coupling * T::of(edge_sum as f64);
                }
            });
        // chunk-wise partial sums merged in a fixed order
        let partial: Vec<T> = log_weights.par_chunks(CHUNK).map(log_sum_exp).collect();
        let log_z = partial.into_iter().fold(T::neg_infinity(), log_add_exp);
        Ok(ExactMeasure {
            lattice,
            params,
            log_weights,
            log_z,
        })
    }

    pub fn lattice(&self) -> &Arc<TorusLattice> {
        &self.lattice
    }

    pub fn params(&self) -> ModelParams<T> {
        self.params
    }

    pub fn log_z(&self) -> T {
        self.log_z
    }

    pub fn num_configs(&self) -> usize {
        self.log_weights.len()
    }

    pub fn log_weight(&self, bits: u64) -> T {
        self.log_weights[bits as usize]
    }

    /// `mu(sigma)` for the configuration with bitmask `bits`.
    pub fn probability(&self, bits: u64) -> T {
        (self.log_weights[bits as usize] - self.log_z).exp()
    }

    pub fn probability_of(&self, cfg: &SpinConfig) -> T {
        self.probability(cfg.to_bits().expect("exact lattices have at most 64 sites"))
    }

    /// Sum of all probabilities; 1 up to rounding.
    pub fn total_mass(&self) -> T {
        self.expectation(|_| T::one())
    }

    /// `E[f]` with `f` evaluated on configuration bitmasks.
    pub fn expectation<F>(&self, f: F) -> T
    where
        F: Fn(u64) -> T + Sync,
    {
        let partial: Vec<T> = self
            .log_weights
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(chunk, lw)| {
                let base = (chunk * CHUNK) as u64;
                lw.iter()
                    .enumerate()
                    .map(|(i, &w)| (w - self.log_z).exp() * f(base + i as u64))
                    .sum::<T>()
            })
            .collect();
        partial.into_iter().sum()
    }

    pub fn variance<F>(&self, f: F) -> T
    where
        F: Fn(u64) -> T + Sync,
    {
        let mean = self.expectation(&f);
        self.expectation(|b| {
            let d = f(b) - mean;
            d * d
        })
    }

    /// Probability of each value of an integer statistic, by direct summation.
    pub fn pushforward<F>(&self, f: F) -> BTreeMap<u64, T>
    where
        F: Fn(u64) -> u64 + Sync,
    {
        let partial: Vec<BTreeMap<u64, T>> = self
            .log_weights
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(chunk, lw)| {
                let base = (chunk * CHUNK) as u64;
                let mut acc: BTreeMap<u64, T> = BTreeMap::new();
                for (i, &w) in lw.iter().enumerate() {
                    *acc.entry(f(base + i as u64)).or_insert_with(T::zero) += (w - self.log_z).exp();
                }
                acc
            })
            .collect();
        let mut out: BTreeMap<u64, T> = BTreeMap::new();
        for acc in partial {
            for (k, v) in acc {
                *out.entry(k).or_insert_with(T::zero) += v;
            }
        }
        out
    }

    /// `mu(event | spins fixed on given sites)` by summation over the free sites.
    pub fn conditional_probability<F>(&self, event: F, given: &PartialSpins) -> T
    where
        F: Fn(u64) -> bool + Sync,
    {
        let (mut mask, mut value) = (0u64, 0u64);
        for (s, v) in given.iter() {
            mask |= 1 << s;
            if v > 0 {
                value |= 1 << s;
            }
        }
        let consistent = |b: u64| b & mask == value;
        let joint = self.expectation(|b| if consistent(b) && event(b) { T::one() } else { T::zero() });
        let marginal = self.expectation(|b| if consistent(b) { T::one() } else { T::zero() });
        joint / marginal
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Norm, Signature};
    use crate::motif::DEFAULT_FAMILY_CAP;

    fn ring(n: usize) -> Arc<TorusLattice> {
        Arc::new(TorusLattice::new(1, n, 1, Norm::P(1)).unwrap())
    }

    fn params(a: f64, b: f64) -> ModelParams<f64> {
        ModelParams::new(a, b).unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let lat = ring(4);
        let minus = SpinConfig::all_minus(lat.clone());
        let p = params(0.7, 0.2);
        assert!((hamiltonian(&minus, &p) - (-4.0 * 0.7 + 4.0 * 0.2)).abs() < 1e-15);
        for bits in 0..16 {
            let cfg = SpinConfig::from_bits(lat.clone(), bits);
            assert_eq!(hamiltonian(&cfg, &params(0.0, 0.0)), 0.0);
        }
        let mut single = minus.clone();
        single.set(&lat.origin(), 1);
        assert_eq!(hamiltonian(&single, &params(0.0, 1.0)), 0.0);
    }

    #[test]
    fn uniform_measure_without_interactions() {
        let m = ExactMeasure::build(ring(4), params(0.0, 0.0)).unwrap();
        assert!((m.log_z() - 16f64.ln()).abs() < 1e-12);
        for b in 0..16 {
            assert!((m.probability(b) - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn product_measure_with_field_only() {
        let m = ExactMeasure::build(ring(3), params(1.0, 0.0)).unwrap();
        let e = std::f64::consts::E;
        let expected = e.powi(3) / (e + 1.0 / e).powi(3);
        assert!((m.probability(0b111) - expected).abs() < 1e-14);
    }

    #[test]
    fn partition_function_matches_naive_double_loop() {
        // oracle: explicit spin vectors and a double loop over site pairs
        let (a, b) = (0.3, 0.5);
        let n = 4usize;
        let mut z = 0.0;
        for bits in 0..(1u32 << n) {
            let s: Vec<f64> = (0..n).map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let mut h = a * s.iter().sum::<f64>();
            for i in 0..n {
                for j in i + 1..n {
                    let gap = j - i;
                    if gap == 1 || gap == n - 1 {
                        h += b * s[i] * s[j];
                    }
                }
            }
            z += h.exp();
        }
        let m = ExactMeasure::build(ring(4), params(a, b)).unwrap();
        assert!((m.log_z() - z.ln()).abs() < 1e-12);
    }

    #[test]
    fn exact_table_agrees_with_hamiltonian() {
        let lat = Arc::new(TorusLattice::new(2, 3, 1, Norm::P(1)).unwrap());
        let p = params(-0.4, 0.35);
        let m = ExactMeasure::build(lat.clone(), p).unwrap();
        for bits in (0..512u64).step_by(7) {
            let cfg = SpinConfig::from_bits(lat.clone(), bits);
            assert!((m.log_weight(bits) - hamiltonian(&cfg, &p)).abs() < 1e-12);
            assert_eq!(cfg.to_bits(), Some(bits));
        }
    }

    #[test]
    fn normalization_and_spin_flip_symmetry() {
        for (d, n) in [(1, 8), (2, 3), (1, 12)] {
            let lat = Arc::new(TorusLattice::new(d, n, 1, Norm::P(1)).unwrap());
            let p = params(-0.6, 0.45);
            let m = ExactMeasure::build(lat.clone(), p).unwrap();
            let f = ExactMeasure::build(lat.clone(), p.flipped()).unwrap();
            assert!((m.total_mass() - 1.0).abs() < 1e-12);
            let full = (1u64 << lat.num_sites()) - 1;
            for bits in 0..m.num_configs() as u64 {
                let a = m.probability(bits);
                let b = f.probability(!bits & full);
                assert!((a - b).abs() <= 1e-12 * a.max(1e-300).max(b), "{bits}");
            }
        }
    }

    #[test]
    fn too_large_for_exact() {
        let lat = Arc::new(TorusLattice::new(1, 30, 1, Norm::P(1)).unwrap());
        assert!(matches!(
            ExactMeasure::build(lat, params(0.0, 0.0)),
            Err(Error::TooLargeForExact { sites: 30, .. })
        ));
    }

    #[test]
    fn f32_measure_is_normalized() {
        let lat = ring(8);
        let m = ExactMeasure::<f32>::build(lat, ModelParams::new(-0.5f32, 0.3).unwrap()).unwrap();
        assert!((m.total_mass() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn local_energy_examples() {
        let lat = TorusLattice::new(1, 7, 1, Norm::P(1)).unwrap();
        let x = lat.origin();
        let mut spins = PartialSpins::new();
        for s in [5usize, 6, 0, 1, 2] {
            spins.set_site(s, -1);
        }
        let (a, b) = (0.8, -0.3);
        let e = local_energy(&lat, &spins, &x, 1, &params(a, b)).unwrap();
        assert!((e - (-3.0 * a + 4.0 * b)).abs() < 1e-15);
        assert_eq!(local_energy(&lat, &spins, &x, 1, &params(0.0, 0.0)).unwrap(), 0.0);

        let mut partial = PartialSpins::new();
        partial.set_site(0, -1);
        assert!(matches!(
            local_energy(&lat, &partial, &x, 1, &params(a, b)),
            Err(Error::MissingSpin(_))
        ));
    }

    #[test]
    fn local_energy_matches_explicit_decomposition() {
        // oracle: a(2k - beta) + b * (internal products + ball/boundary products),
        // summed over explicit coordinate pairs rather than through LocalGeometry
        use rand::{Rng, SeedableRng};
        let lat = TorusLattice::new(2, 7, 1, Norm::P(1)).unwrap();
        let sig = lat.signature();
        let ball = sig.ball_offsets(1);
        let outer: Vec<Vec<i64>> = sig
            .ball_offsets(2)
            .into_iter()
            .filter(|o| !ball.contains(o))
            .collect();
        let adjacent = |u: &[i64], v: &[i64]| u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum::<i64>() == 1;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (-0.9, 0.35);
        for _ in 0..20 {
            let motif_mask: u32 = rng.random_range(0..32);
            let bnd_mask: u32 = rng.random_range(0..256);
            let eta: Vec<f64> = (0..5).map(|i| if motif_mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let sigma: Vec<f64> = (0..8).map(|i| if bnd_mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let k = eta.iter().filter(|&&s| s > 0.0).count() as f64;
            let mut pairs = 0.0;
            for i in 0..5 {
                for j in i + 1..5 {
                    if adjacent(&ball[i], &ball[j]) {
                        pairs += eta[i] * eta[j];
                    }
                }
                for (j, z) in outer.iter().enumerate() {
                    if adjacent(&ball[i], z) {
                        pairs += eta[i] * sigma[j];
                    }
                }
            }
            let expected = a * (2.0 * k - 5.0) + b * pairs;

            let mut spins = PartialSpins::new();
            for (i, o) in ball.iter().enumerate() {
                spins.set(&lat, &lat.vertex_wrapping(o), eta[i] as i8);
            }
            for (j, o) in outer.iter().enumerate() {
                spins.set(&lat, &lat.vertex_wrapping(o), sigma[j] as i8);
            }
            let got = local_energy(&lat, &spins, &lat.origin(), 1, &params(a, b)).unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_probability_uniform_and_normalized() {
        let lat = TorusLattice::new(2, 7, 1, Norm::P(1)).unwrap();
        let sig = lat.signature();
        let x = lat.vertex(&[3, 2]).unwrap();
        let geo = LocalGeometry::new(&lat, &x, 1).unwrap();
        let mut boundary = PartialSpins::new();
        for (j, &s) in geo.boundary.iter().enumerate() {
            boundary.set_site(s, if j % 3 == 0 { 1 } else { -1 });
        }
        let all = enumerate_all(sig, 1, DEFAULT_FAMILY_CAP).unwrap();
        for m in &all {
            let p = conditional_motif_probability(&lat, &x, m, &boundary, &params(0.0, 0.0), DEFAULT_FAMILY_CAP).unwrap();
            assert!((p - 1.0 / 32.0).abs() < 1e-15);
        }
        let p = params(-0.7, 0.4);
        let total: f64 = all
            .iter()
            .map(|m| conditional_motif_probability(&lat, &x, m, &boundary, &p, DEFAULT_FAMILY_CAP).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(matches!(
            conditional_motif_probability(&lat, &x, &all[3], &PartialSpins::new(), &p, DEFAULT_FAMILY_CAP),
            Err(Error::MissingSpin(_))
        ));
    }

    #[test]
    fn markov_property_against_exact_measure() {
        let lat = ring(8);
        let p = params(-1.0, 0.4);
        let measure = ExactMeasure::build(lat.clone(), p).unwrap();
        let sig = lat.signature();
        let x = lat.vertex(&[2]).unwrap();
        let geo = LocalGeometry::new(&lat, &x, 1).unwrap();
        let family = enumerate_all(sig, 1, DEFAULT_FAMILY_CAP).unwrap();
        for motif in &family {
            let spins = motif_spins(&lat, 2, motif, &geo.ball);
            let event = |bits: u64| {
                geo.ball
                    .iter()
                    .zip(&spins)
                    .all(|(&s, &v)| (bits >> s & 1 == 1) == (v > 0))
            };
            for mask in 0..4u32 {
                let mut boundary = PartialSpins::new();
                for (j, &s) in geo.boundary.iter().enumerate() {
                    boundary.set_site(s, if mask >> j & 1 == 1 { 1 } else { -1 });
                }
                let local = conditional_motif_probability(&lat, &x, motif, &boundary, &p, DEFAULT_FAMILY_CAP).unwrap();
                let global = measure.conditional_probability(event, &boundary);
                assert!((local - global).abs() < 1e-12, "{local} vs {global}");
                // conditioning on the whole exterior gives the same answer
                let outside: Vec<usize> = (0..8).filter(|s| geo.ball.binary_search(s).is_err()).collect();
                for ext in 0..(1u32 << outside.len()) {
                    let mut full = PartialSpins::new();
                    for (j, &s) in outside.iter().enumerate() {
                        full.set_site(s, if ext >> j & 1 == 1 { 1 } else { -1 });
                    }
                    if geo.boundary.iter().any(|&s| full.get_site(s) != boundary.get_site(s)) {
                        continue;
                    }
                    let g = measure.conditional_probability(event, &full);
                    assert!((local - g).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn schedule_arithmetic() {
        let s = FieldSchedule::new(1.0, 1, 2).unwrap();
        assert!((s.field_at(16) - 0.5 * (1.0f64 / 256.0).ln()).abs() < 1e-15);
        let s = FieldSchedule::new(2.0f64, 3, 1).unwrap();
        assert!(((2.0 * s.field_at(27)).exp() - 2.0 / 3.0).abs() < 1e-14);
        assert!(FieldSchedule::new(1.0, 0, 1).is_err());
        assert!(FieldSchedule::new(0.0, 1, 1).is_err());
        assert!(FieldSchedule::new(-1.0, 1, 1).is_err());
    }

    #[test]
    fn sandwich_examples() {
        let sig = Signature::new(1, 1, Norm::P(1)).unwrap();
        let motif = LocalConfig::single_center(sig, 1);
        let schedule = FieldSchedule::new(1.0, 1, 1).unwrap();
        let mut prev = 0.0;
        for n in [8, 16, 32] {
            let lat = TorusLattice::new(1, n, 1, Norm::P(1)).unwrap();
            let r = check_conditional_sandwich(&lat, &motif, &schedule, 0.5, 1e-12, DEFAULT_FAMILY_CAP).unwrap();
            assert_eq!(r.boundaries, 4);
            assert!(r.upper_bound_holds);
            assert!(r.worst_lower_ratio > prev && r.worst_lower_ratio < 1.0);
            prev = r.worst_lower_ratio;
        }
        // b = 0: the bound reduces to c^k
        let lat = TorusLattice::new(2, 9, 1, Norm::P(1)).unwrap();
        let sig2 = lat.signature();
        let schedule = FieldSchedule::new(1.7f64, 1, 2).unwrap();
        let r = check_conditional_sandwich(&lat, &LocalConfig::single_center(sig2, 1), &schedule, 0.0, 1e-12, DEFAULT_FAMILY_CAP)
            .unwrap();
        assert!(r.upper_bound_holds);
        assert!((r.lambda - 1.7).abs() < 1e-15);

        let unclean = LocalConfig::single_center(sig, 0);
        let lat = TorusLattice::new(1, 8, 1, Norm::P(1)).unwrap();
        let s1 = FieldSchedule::new(1.0, 1, 1).unwrap();
        assert_eq!(
            check_conditional_sandwich(&lat, &unclean, &s1, 0.5, 1e-12, DEFAULT_FAMILY_CAP),
            Err(Error::NotClean)
        );
        assert!(matches!(
            check_conditional_sandwich(&lat, &LocalConfig::null(sig, 1), &s1, 0.5, 1e-12, DEFAULT_FAMILY_CAP),
            Err(Error::MotifScheduleMismatch { motif_k: 0, .. })
        ));
        let tiny = TorusLattice::new(1, 4, 1, Norm::P(1)).unwrap();
        assert!(matches!(
            check_conditional_sandwich(&tiny, &motif, &s1, 0.5, 1e-12, DEFAULT_FAMILY_CAP),
            Err(Error::LatticeTooSmall { .. })
        ));
    }
}

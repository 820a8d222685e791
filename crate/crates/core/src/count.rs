//! Motif counts `X_n(eta)` and their increasing variant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::CountDistribution;
use crate::error::{Error, Result};
use crate::gibbs::{ExactMeasure, SpinConfig};
use crate::lattice::{TorusLattice, Vertex};
use crate::motif::LocalConfig;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// The ball around `x` equals the motif.
    #[default]
    Exact,
    /// Every positive of the motif is positive around `x`.
    Superset,
}

impl fmt::Display for CountMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CountMode::Exact => "exact",
            CountMode::Superset => "superset",
        })
    }
}

impl FromStr for CountMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(CountMode::Exact),
            "superset" => Ok(CountMode::Superset),
            other => Err(Error::Validation(format!("unknown count mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountObservable {
    pub motif: LocalConfig,
    pub mode: CountMode,
}

impl CountObservable {
    pub fn new(motif: LocalConfig, mode: CountMode) -> Self {
        CountObservable { motif, mode }
    }

    /// Precomputes the site tables for `lattice`.
    pub fn counter(&self, lattice: &TorusLattice) -> Result<Counter> {
        Counter::new(lattice, &self.motif, self.mode)
    }
}

/// Site tables of one observable on one lattice.
#[derive(Clone, Debug)]
pub struct Counter {
    mode: CountMode,
    sites: usize,
    /// Per site: translated positives followed by translated negatives.
    table: Vec<usize>,
    stride: usize,
    k: usize,
    /// Bitmask fast path for lattices with at most 64 sites.
    masks: Option<Vec<(u64, u64)>>,
}

impl Counter {
    pub fn new(lattice: &TorusLattice, motif: &LocalConfig, mode: CountMode) -> Result<Self> {
        motif.check_lattice(lattice)?;
        let positives = motif.positives();
        let negatives: Vec<_> = motif
            .ball_offsets()
            .into_iter()
            .filter(|o| !motif.is_positive(o))
            .collect();
        let stride = match mode {
            CountMode::Exact => positives.len() + negatives.len(),
            CountMode::Superset => positives.len(),
        };
        let sites = lattice.num_sites();
        let mut table = Vec::with_capacity(sites * stride);
        for x in 0..sites {
            table.extend(positives.iter().map(|o| lattice.translate_site(x, o)));
            if mode == CountMode::Exact {
                table.extend(negatives.iter().map(|o| lattice.translate_site(x, o)));
            }
        }
        let k = positives.len();
        let masks = (sites <= 64).then(|| {
            (0..sites)
                .map(|x| {
                    let row = &table[x * stride..(x + 1) * stride];
                    let pos = row[..k].iter().fold(0u64, |m, &s| m | 1 << s);
                    let scope = row.iter().fold(0u64, |m, &s| m | 1 << s);
                    (scope, pos)
                })
                .collect()
        });
        Ok(Counter {
            mode,
            sites,
            table,
            stride,
            k,
            masks,
        })
    }

    pub fn mode(&self) -> CountMode {
        self.mode
    }

    /// `I_x` (or its increasing variant) at site `x`; stops at the first mismatch.
    #[inline]
    pub fn indicator_at(&self, cfg: &SpinConfig, x: usize) -> bool {
        let row = &self.table[x * self.stride..(x + 1) * self.stride];
        let spins = cfg.spins();
        row[..self.k].iter().all(|&s| spins[s] > 0) && row[self.k..].iter().all(|&s| spins[s] < 0)
    }

    pub fn count(&self, cfg: &SpinConfig) -> u64 {
        debug_assert_eq!(cfg.spins().len(), self.sites);
        (0..self.sites).filter(|&x| self.indicator_at(cfg, x)).count() as u64
    }

    #[inline]
    pub fn indicator_bits(&self, bits: u64, x: usize) -> bool {
        let (scope, pos) = self.masks.as_ref().expect("bitmask path needs at most 64 sites")[x];
        bits & scope == pos
    }

    /// Count for a configuration given as a bitmask.
    pub fn count_bits(&self, bits: u64) -> u64 {
        self.masks
            .as_ref()
            .expect("bitmask path needs at most 64 sites")
            .iter()
            .filter(|&&(scope, pos)| bits & scope == pos)
            .count() as u64
    }
}

pub fn indicator(cfg: &SpinConfig, x: &Vertex, motif: &LocalConfig, mode: CountMode) -> Result<bool> {
    let lattice = cfg.lattice();
    motif.check_lattice(lattice)?;
    let base = lattice.site(x);
    let spins = cfg.spins();
    let positives_hold = motif
        .positives()
        .iter()
        .all(|o| spins[lattice.translate_site(base, o)] > 0);
    Ok(match mode {
        CountMode::Superset => positives_hold,
        CountMode::Exact => {
            positives_hold
                && motif
                    .ball_offsets()
                    .iter()
                    .filter(|o| !motif.is_positive(o))
                    .all(|o| spins[lattice.translate_site(base, o)] < 0)
        }
    })
}

pub fn count(cfg: &SpinConfig, motif: &LocalConfig, mode: CountMode) -> Result<u64> {
    Ok(Counter::new(cfg.lattice(), motif, mode)?.count(cfg))
}

/// Exact law of the count under a tabulated measure.
pub fn count_distribution_exact<T: Real>(
    measure: &ExactMeasure<T>,
    motif: &LocalConfig,
    mode: CountMode,
) -> Result<CountDistribution<T>> {
    let counter = Counter::new(measure.lattice(), motif, mode)?;
    let pmf = measure.pushforward(|bits| counter.count_bits(bits));
    CountDistribution::from_pmf(pmf, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::ModelParams;
    use crate::lattice::{Norm, Signature};
    use crate::motif::DEFAULT_FAMILY_CAP;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn lat(d: usize, n: usize) -> Arc<TorusLattice> {
        Arc::new(TorusLattice::new(d, n, 1, Norm::P(1)).unwrap())
    }

    fn sig(d: usize) -> Signature {
        Signature::new(d, 1, Norm::P(1)).unwrap()
    }

    #[test]
    fn indicator_examples() {
        let l = lat(2, 5);
        let minus = SpinConfig::all_minus(l.clone());
        let null = LocalConfig::null(sig(2), 1);
        let single = LocalConfig::single_center(sig(2), 1);
        for s in 0..l.num_sites() {
            let x = l.vertex_at(s);
            assert!(indicator(&minus, &x, &null, CountMode::Exact).unwrap());
            assert!(!indicator(&minus, &x, &single, CountMode::Exact).unwrap());
            assert!(!indicator(&minus, &x, &single, CountMode::Superset).unwrap());
        }
        let mut one = minus.clone();
        one.set(&l.origin(), 1);
        for s in 0..l.num_sites() {
            let x = l.vertex_at(s);
            assert_eq!(indicator(&one, &x, &single, CountMode::Exact).unwrap(), s == 0);
        }
        assert_eq!(count(&minus, &null, CountMode::Exact).unwrap(), 25);
        let small = lat(2, 2);
        assert!(matches!(
            count(&SpinConfig::all_minus(small), &single, CountMode::Exact),
            Err(Error::LatticeTooSmall { .. })
        ));
    }

    /// Oracle: rescan every site, reading each ball spin through vertex coordinates.
    fn naive_count(cfg: &SpinConfig, motif: &LocalConfig, mode: CountMode) -> u64 {
        let l = cfg.lattice();
        let mut total = 0;
        for s in 0..l.num_sites() {
            let x = l.vertex_at(s);
            let hit = motif.ball_offsets().iter().all(|o| {
                let coords: Vec<i64> = x.coords().iter().zip(o).map(|(&c, &d)| c as i64 + d).collect();
                let spin = cfg.spin(&l.vertex_wrapping(&coords));
                match (motif.is_positive(o), mode) {
                    (true, _) => spin == 1,
                    (false, CountMode::Exact) => spin == -1,
                    (false, CountMode::Superset) => true,
                }
            });
            total += u64::from(hit);
        }
        total
    }

    proptest! {
        #[test]
        fn counts_match_naive_rescan(bits in any::<u64>()) {
            let l = lat(1, 12);
            let cfg = SpinConfig::from_bits(l.clone(), bits & 0xfff);
            for motif in [
                LocalConfig::single_center(sig(1), 1),
                LocalConfig::new(sig(1), 2, [vec![0i64], vec![1]]).unwrap(),
            ] {
                for mode in [CountMode::Exact, CountMode::Superset] {
                    let c = Counter::new(&l, &motif, mode).unwrap();
                    let expected = naive_count(&cfg, &motif, mode);
                    prop_assert_eq!(c.count(&cfg), expected);
                    prop_assert_eq!(c.count_bits(bits & 0xfff), expected);
                }
            }
        }

        #[test]
        fn ring_count_never_exceeds_motif_count(bits in any::<u64>()) {
            let l = lat(2, 7);
            let cfg = SpinConfig::from_bits(l.clone(), bits);
            for motif in [
                LocalConfig::single_center(sig(2), 1),
                LocalConfig::new(sig(2), 1, [vec![0i64, 0], vec![1, 0]]).unwrap(),
            ] {
                let x = count(&cfg, &motif, CountMode::Exact).unwrap();
                let ringed = count(&cfg, &motif.ring(), CountMode::Exact).unwrap();
                prop_assert!(ringed <= x);
                prop_assert!(x <= count(&cfg, &motif, CountMode::Superset).unwrap());
            }
        }
    }

    #[test]
    fn superset_count_is_sum_over_family() {
        let l = lat(1, 7);
        let motif = LocalConfig::single_center(sig(1), 1);
        let family = motif.superset_family(DEFAULT_FAMILY_CAP).unwrap();
        let sup = Counter::new(&l, &motif, CountMode::Superset).unwrap();
        let exact: Vec<Counter> = family
            .iter()
            .map(|m| Counter::new(&l, m, CountMode::Exact).unwrap())
            .collect();
        for bits in 0..128u64 {
            let total: u64 = exact.iter().map(|c| c.count_bits(bits)).sum();
            assert_eq!(sup.count_bits(bits), total);
        }
    }

    #[test]
    fn superset_indicator_is_increasing() {
        let l = lat(2, 3);
        let motif = LocalConfig::new(sig(2), 1, [vec![0i64, 0], vec![0, 1]]).unwrap();
        let c = Counter::new(&l, &motif, CountMode::Superset).unwrap();
        for lo in 0..512u64 {
            // supersets of lo, enumerated by the submask trick on the complement
            let free = !lo & 0x1ff;
            let mut add = free;
            loop {
                let hi = lo | add;
                for x in 0..9 {
                    assert!(c.indicator_bits(lo, x) <= c.indicator_bits(hi, x));
                }
                if add == 0 {
                    break;
                }
                add = (add - 1) & free;
            }
        }
    }

    #[test]
    fn expectations_are_translation_invariant() {
        let l = lat(2, 4);
        let m = ExactMeasure::build(l.clone(), ModelParams::new(-0.8f64, 0.3).unwrap()).unwrap();
        let motif = LocalConfig::new(sig(2), 1, [vec![0i64, 0], vec![1, 0]]).unwrap();
        for mode in [CountMode::Exact, CountMode::Superset] {
            let c = Counter::new(&l, &motif, mode).unwrap();
            let e0 = m.expectation(|b| if c.indicator_bits(b, 0) { 1.0 } else { 0.0 });
            for x in 1..16 {
                let ex = m.expectation(|b| if c.indicator_bits(b, x) { 1.0 } else { 0.0 });
                assert!((ex - e0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_distribution_examples() {
        let l = lat(1, 4);
        let m = ExactMeasure::build(l.clone(), ModelParams::new(0.0f64, 0.0).unwrap()).unwrap();
        let null0 = LocalConfig::null(sig(1), 0);
        let dist = count_distribution_exact(&m, &null0, CountMode::Exact).unwrap();
        assert!((dist.prob(4) - 1.0 / 16.0).abs() < 1e-15);
        assert!((dist.prob(2) - 6.0 / 16.0).abs() < 1e-15);

        let l = lat(1, 10);
        let m = ExactMeasure::build(l.clone(), ModelParams::new(-0.6f64, 0.25).unwrap()).unwrap();
        let motif = LocalConfig::single_center(sig(1), 1);
        let dist = count_distribution_exact(&m, &motif, CountMode::Exact).unwrap();
        let mut direct = 0.0;
        for bits in 0..1024u64 {
            let cfg = SpinConfig::from_bits(l.clone(), bits);
            direct += m.probability(bits) * naive_count(&cfg, &motif, CountMode::Exact) as f64;
        }
        assert!((dist.mean() - direct).abs() < 1e-12);
        assert_eq!(dist.factorial_moment(1), dist.mean());
    }
}

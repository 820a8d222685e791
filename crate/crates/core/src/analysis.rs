//! Poisson targets, total variation, factorial moments, the Stein-Chen bound
//! and decay-rate fits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::count::{count_distribution_exact, CountMode};
use crate::error::{Error, Result};
use crate::gibbs::{ExactMeasure, FieldSchedule};
use crate::motif::LocalConfig;
use crate::scalar::Real;

pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;
pub const POISSON_TAIL: f64 = 1e-12;
/// Rate fits drop points below this multiple of their error floor.
pub const FIT_FLOOR_FACTOR: f64 = 10.0;

/// Law of a nonnegative integer count, exact (`sample_size == 0`) or empirical.
#[derive(Clone, Debug, PartialEq)]
pub struct CountDistribution<T> {
    pmf: BTreeMap<u64, T>,
    sample_size: u64,
    moments: [T; 4],
}

impl<T: Real> CountDistribution<T> {
    pub fn from_pmf(pmf: BTreeMap<u64, T>, sample_size: u64) -> Result<Self> {
        let total: T = pmf.values().copied().sum();
        if pmf.values().any(|&p| p < T::zero() || !p.is_finite())
            || (total - T::one()).abs().as_f64() > NORMALIZATION_TOLERANCE.max(T::epsilon().as_f64() * 64.0)
        {
            return Err(Error::NotNormalized(total.as_f64()));
        }
        let mut moments = [T::zero(); 4];
        for (l, m) in moments.iter_mut().enumerate() {
            *m = factorial_moment_of(&pmf, l + 1);
        }
        Ok(CountDistribution {
            pmf,
            sample_size,
            moments,
        })
    }

    pub fn from_samples(samples: &[u64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("empirical law needs at least one sample".into()));
        }
        let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
        for &s in samples {
            *counts.entry(s).or_insert(0) += 1;
        }
        let n = T::of_count(samples.len() as u64);
        let pmf = counts.into_iter().map(|(k, c)| (k, T::of_count(c) / n)).collect();
        Self::from_pmf(pmf, samples.len() as u64)
    }

    /// Point mass at `k`.
    pub fn point(k: u64) -> Self {
        Self::from_pmf(BTreeMap::from([(k, T::one())]), 0).expect("point mass is normalized")
    }

    pub fn pmf(&self) -> &BTreeMap<u64, T> {
        &self.pmf
    }

    pub fn prob(&self, k: u64) -> T {
        self.pmf.get(&k).copied().unwrap_or_else(T::zero)
    }

    pub fn sample_size(&self) -> u64 {
        self.sample_size
    }

    pub fn is_exact(&self) -> bool {
        self.sample_size == 0
    }

    pub fn max_support(&self) -> u64 {
        self.pmf.keys().next_back().copied().unwrap_or(0)
    }

    pub fn mean(&self) -> T {
        self.moments[0]
    }

    pub fn variance(&self) -> T {
        self.moments[1] + self.moments[0] - self.moments[0] * self.moments[0]
    }

    /// `M_l` for `1 <= l <= 4` from the cache, otherwise recomputed.
    pub fn factorial_moment(&self, l: usize) -> T {
        match l {
            1..=4 => self.moments[l - 1],
            _ => factorial_moment_of(&self.pmf, l),
        }
    }
}

fn factorial_moment_of<T: Real>(pmf: &BTreeMap<u64, T>, l: usize) -> T {
    pmf.iter()
        .map(|(&k, &p)| {
            let falling = (0..l as u64).fold(T::one(), |acc, i| {
                if i >= k {
                    T::zero()
                } else {
                    acc * T::of_count(k - i)
                }
            });
            p * falling
        })
        .sum()
}

/// `M_1 .. M_{l_max}`.
pub fn factorial_moments<T: Real>(dist: &CountDistribution<T>, l_max: usize) -> Vec<T> {
    (1..=l_max).map(|l| dist.factorial_moment(l)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonTarget<T> {
    lambda: T,
}

impl<T: Real> PoissonTarget<T> {
    pub fn new(lambda: T) -> Result<Self> {
        if lambda <= T::zero() || !lambda.is_finite() {
            return Err(Error::Validation(format!("Poisson parameter must be positive, got {lambda}")));
        }
        Ok(PoissonTarget { lambda })
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// Probabilities `P(0..=m)` where `m` is the first index at least
    /// `min_len - 1` whose cumulative mass exceeds `1 - POISSON_TAIL`.
    /// Returns the pmf and the neglected upper tail.
    pub fn truncated_pmf(&self, min_len: usize) -> (Vec<T>, T) {
        let ln_lambda = self.lambda.ln();
        let mut log_p = -self.lambda;
        let mut pmf = Vec::new();
        let mut cdf = T::zero();
        let target = T::one() - T::of(POISSON_TAIL);
        let mut m = 0u64;
        loop {
            let p = log_p.exp();
            pmf.push(p);
            cdf += p;
            if pmf.len() >= min_len && (cdf > target || (p == T::zero() && m as f64 > self.lambda.as_f64())) {
                break;
            }
            m += 1;
            log_p = log_p + ln_lambda - T::of_count(m).ln();
        }
        (pmf, (T::one() - cdf).max(T::zero()))
    }

    pub fn as_distribution(&self) -> CountDistribution<T> {
        let (pmf, tail) = self.truncated_pmf(1);
        let mut map: BTreeMap<u64, T> = pmf.into_iter().enumerate().map(|(k, p)| (k as u64, p)).collect();
        *map.get_mut(&0).expect("nonempty") += tail;
        CountDistribution::from_pmf(map, 0).expect("truncated Poisson law is normalized")
    }
}

/// `c^k e^{-2 b gamma}`.
pub fn poisson_target<T: Real>(schedule: &FieldSchedule<T>, coupling: T, motif: &LocalConfig) -> Result<PoissonTarget<T>> {
    if motif.k() != schedule.k_target() {
        return Err(Error::MotifScheduleMismatch {
            motif_k: motif.k(),
            schedule_k: schedule.k_target(),
        });
    }
    PoissonTarget::new(
        schedule.c().powi(motif.k() as i32) * (-T::of(2.0) * coupling * T::of_count(motif.perimeter() as u64)).exp(),
    )
}

/// A total variation distance together with the uncertainty of its evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvResult<T> {
    pub distance: T,
    /// Poisson truncation plus, for empirical laws, the plug-in bias bound
    /// `1/2 * sqrt(support / samples)`.
    pub error_budget: T,
}

fn plug_in_budget<T: Real>(dist: &CountDistribution<T>) -> T {
    if dist.is_exact() {
        T::zero()
    } else {
        T::of(0.5) * (T::of_count(dist.pmf.len() as u64) / T::of_count(dist.sample_size)).sqrt()
    }
}

/// `1/2 sum_m |p(m) - q(m)|`.
pub fn tv_distance<T: Real>(p: &CountDistribution<T>, q: &CountDistribution<T>) -> TvResult<T> {
    let keys: std::collections::BTreeSet<u64> = p.pmf.keys().chain(q.pmf.keys()).copied().collect();
    let distance = T::of(0.5) * keys.into_iter().map(|k| (p.prob(k) - q.prob(k)).abs()).sum::<T>();
    TvResult {
        distance,
        error_budget: plug_in_budget(p) + plug_in_budget(q),
    }
}

/// Distance from a count law to a Poisson law.
pub fn tv_to_poisson<T: Real>(p: &CountDistribution<T>, target: &PoissonTarget<T>) -> TvResult<T> {
    let (q, tail) = target.truncated_pmf(p.max_support() as usize + 1);
    let distance = T::of(0.5)
        * q.iter()
            .enumerate()
            .map(|(k, &qk)| (p.prob(k as u64) - qk).abs())
            .sum::<T>();
    TvResult {
        distance,
        error_budget: T::of(0.5) * tail + plug_in_budget(p),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinChenReport<T> {
    /// `E[Xbar_n]`.
    pub lambda_n: T,
    pub variance: T,
    pub bound: T,
    /// Exact `d_TV(L(Xbar_n), Poisson(lambda_n))`, for comparison with `bound`.
    pub tv: TvResult<T>,
}

/// `(1 - e^{-l}) / l * (Var[Xbar] - l + 2 l^2 / n^d)` with `l = E[Xbar]`.
pub fn stein_chen_bound<T: Real>(measure: &ExactMeasure<T>, motif: &LocalConfig) -> Result<SteinChenReport<T>> {
    let b = measure.params().coupling;
    if b < T::zero() {
        return Err(Error::FerromagneticOnly(b.as_f64()));
    }
    let dist = count_distribution_exact(measure, motif, CountMode::Superset)?;
    let lambda_n = dist.mean();
    let variance = dist.variance();
    let volume = T::of_count(measure.lattice().num_sites() as u64);
    let bound = stein_chen_formula(lambda_n, variance, volume);
    let tv = tv_to_poisson(&dist, &PoissonTarget::new(lambda_n)?);
    Ok(SteinChenReport {
        lambda_n,
        variance,
        bound,
        tv,
    })
}

pub fn stein_chen_formula<T: Real>(lambda_n: T, variance: T, volume: T) -> T {
    let prefactor = -(-lambda_n).exp_m1() / lambda_n;
    prefactor * (variance - lambda_n + T::of(2.0) * lambda_n * lambda_n / volume)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least squares of `log value` on `log n`.
pub fn rate_fit(ns: &[usize], values: &[f64]) -> Result<RateFit> {
    if ns.len() != values.len() {
        return Err(Error::DegenerateFit(format!("{} sizes but {} values", ns.len(), values.len())));
    }
    if ns.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {}", ns.len())));
    }
    if let Some(v) = values.iter().find(|v| **v <= 0.0 || !v.is_finite()) {
        return Err(Error::DegenerateFit(format!("values must be positive, got {v}")));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all sizes are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy <= f64::EPSILON * m { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        points: xs.len(),
    })
}

/// [`rate_fit`] over the points whose value is at least [`FIT_FLOOR_FACTOR`]
/// times its error floor.
pub fn rate_fit_above_floor(ns: &[usize], values: &[f64], floors: &[f64]) -> Result<RateFit> {
    let (kept_n, kept_v): (Vec<usize>, Vec<f64>) = ns
        .iter()
        .zip(values)
        .zip(floors)
        .filter(|((_, &v), &f)| v >= FIT_FLOOR_FACTOR * f)
        .map(|((&n, &v), _)| (n, v))
        .unzip();
    rate_fit(&kept_n, &kept_v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingReport<T> {
    pub tv: T,
    pub mean_motif: T,
    pub mean_ring: T,
    pub mean_gap: T,
}

/// Distance between the laws of `X_n(ring(eta))` and `X_n(eta)`.
pub fn ring_equivalence_check<T: Real>(measure: &ExactMeasure<T>, motif: &LocalConfig) -> Result<RingReport<T>> {
    let ring = motif.ring();
    ring.check_lattice(measure.lattice())?;
    let law = count_distribution_exact(measure, motif, CountMode::Exact)?;
    let ring_law = count_distribution_exact(measure, &ring, CountMode::Exact)?;
    Ok(RingReport {
        tv: tv_distance(&ring_law, &law).distance,
        mean_motif: law.mean(),
        mean_ring: ring_law.mean(),
        mean_gap: (law.mean() - ring_law.mean()).abs(),
    })
}

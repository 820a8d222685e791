//! Markov chain and perfect samplers for the Ising measure.
//!
//! Random streams: replica `i` of a run seeded with `s` draws from a ChaCha8
//! generator whose 32-byte key is `SHA-256(s as u64 LE || i as u64 LE)`.

use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gibbs::{FieldSchedule, ModelParams, SpinConfig};
use crate::lattice::{Norm, TorusLattice};
use crate::scalar::Real;

pub const DEFAULT_BURN_IN_SWEEPS: u64 = 100;
pub const DEFAULT_THINNING_SWEEPS: u64 = 1;
pub const DEFAULT_CHAINS: usize = 8;
pub const DEFAULT_MAX_CFTP_SWEEPS: u64 = 1 << 20;

/// Generator for stream `replica` of seed `seed`.
pub fn stream_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(replica.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// `P(+1)` at a site with local field `h`: `e^h / (e^h + e^{-h})`.
#[inline]
pub fn plus_probability(h: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * h).exp())
}

/// Heat-bath probabilities indexed by `(neighbor_sum + degree) / 2`.
#[derive(Clone, Debug)]
pub struct HeatBathTable {
    degree: i32,
    p_plus: Vec<f64>,
}

impl HeatBathTable {
    pub fn new<T: Real>(degree: usize, params: &ModelParams<T>) -> Self {
        let (a, b) = (params.field.as_f64(), params.coupling.as_f64());
        let degree = degree as i32;
        let p_plus = (0..=degree)
            .map(|j| plus_probability(a + b * (2 * j - degree) as f64))
            .collect();
        HeatBathTable { degree, p_plus }
    }

    #[inline]
    pub fn p_plus(&self, neighbor_sum: i32) -> f64 {
        self.p_plus[((neighbor_sum + self.degree) / 2) as usize]
    }
}

/// Heat-bath update of one site driven by the uniform `u`; monotone in the
/// configuration when `b >= 0`.
#[inline]
pub fn heat_bath_update(cfg: &mut SpinConfig, site: usize, u: f64, table: &HeatBathTable) {
    let s = cfg.neighbor_sum(site);
    cfg.spins_mut()[site] = if u < table.p_plus(s) { 1 } else { -1 };
}

/// Change of the Gibbs exponent when the spin at `site` flips.
#[inline]
pub fn flip_delta<T: Real>(cfg: &SpinConfig, site: usize, params: &ModelParams<T>) -> T {
    let s = T::of(cfg.spin_at(site) as f64);
    -T::of(2.0) * s * params.local_field(cfg.neighbor_sum(site))
}

/// A single-owner Markov chain.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub config: SpinConfig,
    rng: ChaCha8Rng,
    pub sweep_count: u64,
}

impl ChainState {
    pub fn new(config: SpinConfig, seed: u64, replica: u64) -> Self {
        ChainState {
            config,
            rng: stream_rng(seed, replica),
            sweep_count: 0,
        }
    }

    pub fn with_rng(config: SpinConfig, rng: ChaCha8Rng) -> Self {
        ChainState {
            config,
            rng,
            sweep_count: 0,
        }
    }
}

/// One systematic scan of heat-bath updates.
pub fn heat_bath_sweep<T: Real>(state: &mut ChainState, params: &ModelParams<T>) {
    let table = HeatBathTable::new(state.config.lattice().degree(), params);
    heat_bath_sweep_with(state, &table);
}

fn heat_bath_sweep_with(state: &mut ChainState, table: &HeatBathTable) {
    for site in 0..state.config.spins().len() {
        let u: f64 = state.rng.random();
        heat_bath_update(&mut state.config, site, u, table);
    }
    state.sweep_count += 1;
}

/// Acceptance probabilities `min(1, e^{ΔH})` indexed like [`HeatBathTable`],
/// separately for a current spin of -1 and +1.
#[derive(Clone, Debug)]
struct MetropolisTable {
    degree: i32,
    accept: [Vec<f64>; 2],
}

impl MetropolisTable {
    fn new<T: Real>(degree: usize, params: &ModelParams<T>) -> Self {
        let (a, b) = (params.field.as_f64(), params.coupling.as_f64());
        let degree = degree as i32;
        let make = |s: f64| -> Vec<f64> {
            (0..=degree)
                .map(|j| (-2.0 * s * (a + b * (2 * j - degree) as f64)).exp().min(1.0))
                .collect()
        };
        MetropolisTable {
            degree,
            accept: [make(-1.0), make(1.0)],
        }
    }

    #[inline]
    fn accept(&self, spin: i8, neighbor_sum: i32) -> f64 {
        self.accept[(spin > 0) as usize][((neighbor_sum + self.degree) / 2) as usize]
    }
}

/// One systematic scan of single-spin-flip Metropolis updates.
pub fn metropolis_sweep<T: Real>(state: &mut ChainState, params: &ModelParams<T>) {
    let table = MetropolisTable::new(state.config.lattice().degree(), params);
    metropolis_sweep_with(state, &table);
}

fn metropolis_sweep_with(state: &mut ChainState, table: &MetropolisTable) {
    for site in 0..state.config.spins().len() {
        let u: f64 = state.rng.random();
        let spin = state.config.spin_at(site);
        if u < table.accept(spin, state.config.neighbor_sum(site)) {
            state.config.spins_mut()[site] = -spin;
        }
    }
    state.sweep_count += 1;
}

/// Exact draw by monotone coupling from the past, with the default sweep limit.
pub fn cftp_sample<T: Real>(lattice: Arc<TorusLattice>, params: &ModelParams<T>, seed: u64) -> Result<SpinConfig> {
    cftp_sample_stream(lattice, params, seed, 0, DEFAULT_MAX_CFTP_SWEEPS)
}

/// Coupling from the past on stream `replica`.
///
/// Time is split into blocks: block 0 is the sweep at time -1 and block
/// `j >= 1` covers times `-2^j .. -2^{j-1} - 1`. Block `j` always draws from
/// the generator for `(seed, replica, j)`, so restarting further in the past
/// reuses the randomness of the later blocks.
pub fn cftp_sample_stream<T: Real>(
    lattice: Arc<TorusLattice>,
    params: &ModelParams<T>,
    seed: u64,
    replica: u64,
    max_sweeps: u64,
) -> Result<SpinConfig> {
    let b = params.coupling.as_f64();
    if b < 0.0 {
        return Err(Error::AntiferromagneticUnsupported(b));
    }
    let table = HeatBathTable::new(lattice.degree(), params);
    let sites = lattice.num_sites();
    let block_key = stream_rng(seed, replica).random::<u64>();
    let mut uniforms = Vec::with_capacity(sites);
    let mut epoch = 0u32;
    loop {
        let horizon = 1u64 << epoch;
        if horizon > max_sweeps {
            return Err(Error::CoalescenceTimeout(max_sweeps));
        }
        let mut top = SpinConfig::all_plus(lattice.clone());
        let mut bottom = SpinConfig::all_minus(lattice.clone());
        for block in (0..=epoch).rev() {
            let len = if block == 0 { 1 } else { 1u64 << (block - 1) };
            let mut rng = stream_rng(block_key, block as u64);
            for _ in 0..len {
                uniforms.clear();
                uniforms.extend((0..sites).map(|_| rng.random::<f64>()));
                for (site, &u) in uniforms.iter().enumerate() {
                    heat_bath_update(&mut top, site, u, &table);
                    heat_bath_update(&mut bottom, site, u, &table);
                }
            }
        }
        if top == bottom {
            return Ok(top);
        }
        epoch += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    HeatBath,
    Metropolis,
    Cftp,
    /// Independent draws from the exact table; small lattices only.
    Exact,
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heat_bath" => Ok(SamplerKind::HeatBath),
            "metropolis" => Ok(SamplerKind::Metropolis),
            "cftp" => Ok(SamplerKind::Cftp),
            "exact" => Ok(SamplerKind::Exact),
            other => Err(Error::Validation(format!("unknown sampler kind `{other}`"))),
        }
    }
}

/// How draws are produced. Burn-in and thinning apply to the Markov chain
/// kernels only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub burn_in_sweeps: u64,
    pub thinning_sweeps: u64,
    pub seed: u64,
    /// Independent chains for the Markov kernels.
    pub chains: usize,
    pub max_cftp_sweeps: u64,
}

impl SamplerSpec {
    pub fn new(kind: SamplerKind, seed: u64) -> Self {
        SamplerSpec {
            kind,
            burn_in_sweeps: DEFAULT_BURN_IN_SWEEPS,
            thinning_sweeps: DEFAULT_THINNING_SWEEPS,
            seed,
            chains: DEFAULT_CHAINS,
            max_cftp_sweeps: DEFAULT_MAX_CFTP_SWEEPS,
        }
    }
}

/// Draws `count` configurations and maps each through `f` as it is produced.
/// The output depends only on the lattice, parameters and spec, not on the
/// thread count.
pub fn sample_map<T, R, F>(
    lattice: Arc<TorusLattice>,
    params: &ModelParams<T>,
    spec: &SamplerSpec,
    count: usize,
    f: F,
) -> Result<Vec<R>>
where
    T: Real,
    R: Send,
    F: Fn(&SpinConfig) -> R + Sync,
{
    if count == 0 {
        return Err(Error::Validation("sample count must be at least 1".into()));
    }
    match spec.kind {
        SamplerKind::Cftp => (0..count as u64)
            .into_par_iter()
            .map(|i| {
                cftp_sample_stream(lattice.clone(), params, spec.seed, i, spec.max_cftp_sweeps).map(|c| f(&c))
            })
            .collect(),
        SamplerKind::Exact => sample_exact(lattice, params, spec, count, f),
        SamplerKind::HeatBath | SamplerKind::Metropolis => {
            let chains = spec.chains.clamp(1, count);
            let per_chain = |c: usize| count / chains + usize::from(c < count % chains);
            let heat = HeatBathTable::new(lattice.degree(), params);
            let metro = MetropolisTable::new(lattice.degree(), params);
            let sweep = |state: &mut ChainState| match spec.kind {
                SamplerKind::HeatBath => heat_bath_sweep_with(state, &heat),
                _ => metropolis_sweep_with(state, &metro),
            };
            let batches: Vec<Vec<R>> = (0..chains)
                .into_par_iter()
                .map(|c| {
                    let mut state = ChainState::new(SpinConfig::all_minus(lattice.clone()), spec.seed, c as u64);
                    for _ in 0..spec.burn_in_sweeps {
                        sweep(&mut state);
                    }
                    let mut out = Vec::with_capacity(per_chain(c));
                    for i in 0..per_chain(c) {
                        if i > 0 {
                            for _ in 0..spec.thinning_sweeps.max(1) {
                                sweep(&mut state);
                            }
                        }
                        out.push(f(&state.config));
                    }
                    out
                })
                .collect();
            Ok(batches.into_iter().flatten().collect())
        }
    }
}

fn sample_exact<T, R, F>(
    lattice: Arc<TorusLattice>,
    params: &ModelParams<T>,
    spec: &SamplerSpec,
    count: usize,
    f: F,
) -> Result<Vec<R>>
where
    T: Real,
    R: Send,
    F: Fn(&SpinConfig) -> R + Sync,
{
    let measure = crate::gibbs::ExactMeasure::build(lattice.clone(), *params)?;
    let mut cdf = Vec::with_capacity(measure.num_configs());
    let mut acc = 0.0f64;
    for bits in 0..measure.num_configs() as u64 {
        acc += measure.probability(bits).as_f64();
        cdf.push(acc);
    }
    let total = acc;
    const BLOCK: usize = 4096;
    let blocks = count.div_ceil(BLOCK);
    let out: Vec<Vec<R>> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = stream_rng(spec.seed, blk as u64);
            let len = BLOCK.min(count - blk * BLOCK);
            (0..len)
                .map(|_| {
                    let u = rng.random::<f64>() * total;
                    let bits = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                    f(&SpinConfig::from_bits(lattice.clone(), bits as u64))
                })
                .collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// `count` configurations under the schedule's field at the lattice side.
pub fn sample_batch<T: Real>(
    lattice: Arc<TorusLattice>,
    schedule: &FieldSchedule<T>,
    coupling: T,
    spec: &SamplerSpec,
    count: usize,
) -> Result<Vec<SpinConfig>> {
    let params = schedule.params_at(lattice.side(), coupling)?;
    sample_map(lattice, &params, spec, count, SpinConfig::clone)
}

/// Writes `d n rho p\n` followed by the spins as packed bits, most
/// significant bit first, a set bit meaning +1, sites in row-major order.
pub fn write_snapshot<W: Write>(cfg: &SpinConfig, mut out: W) -> Result<()> {
    let lat = cfg.lattice();
    writeln!(out, "{} {} {} {}", lat.dim(), lat.side(), lat.range(), lat.norm())?;
    let bytes: Vec<u8> = cfg
        .spins()
        .chunks(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .filter(|(_, &s)| s > 0)
                .fold(0u8, |b, (i, _)| b | 0x80 >> i)
        })
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_snapshot<R: BufRead>(mut input: R) -> Result<SpinConfig> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || !header.ends_with('\n') {
        return Err(Error::Snapshot(format!("bad header `{}`", header.trim_end())));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Snapshot(format!("bad header field `{s}`")));
    let norm = Norm::from_str(fields[3]).map_err(|e| Error::Snapshot(e.to_string()))?;
    let lattice = Arc::new(TorusLattice::new(num(fields[0])?, num(fields[1])?, num(fields[2])?, norm)?);
    let sites = lattice.num_sites();
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != sites.div_ceil(8) {
        return Err(Error::Snapshot(format!(
            "expected {} payload bytes, found {}",
            sites.div_ceil(8),
            bytes.len()
        )));
    }
    let spins = (0..sites)
        .map(|s| if bytes[s / 8] & (0x80 >> (s % 8)) != 0 { 1 } else { -1 })
        .collect();
    SpinConfig::from_spins(lattice, spins)
}

//! Batch experiments over a grid of lattice sizes, motifs and couplings.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    poisson_target, ring_equivalence_check, stein_chen_formula, tv_to_poisson, CountDistribution,
    PoissonTarget,
};
use crate::count::{count_distribution_exact, CountMode, Counter};
use crate::error::{Error, Result};
use crate::gibbs::{ExactMeasure, FieldSchedule, ModelParams};
use crate::lattice::{Norm, Signature, TorusLattice};
use crate::motif::{LocalConfig, MotifFile};
use crate::sampler::{sample_map, SamplerKind, SamplerSpec, DEFAULT_MAX_CFTP_SWEEPS};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub b_list: Vec<f64>,
    pub motifs: Vec<PathBuf>,
    pub lattice: LatticeSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub d: usize,
    #[serde(default = "one")]
    pub rho: usize,
    #[serde(default = "l1")]
    pub p: Norm,
    pub n_list: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default = "one_f")]
    pub c: f64,
    /// Fixed field overriding the schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection { c: 1.0, a: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    #[default]
    Exact,
    HeatBath,
    Metropolis,
    Cftp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    #[serde(default)]
    pub kind: EngineKind,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in_sweeps: u64,
    #[serde(default = "one_u64")]
    pub thinning_sweeps: u64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_max_cftp")]
    pub max_cftp_sweeps: u64,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            kind: EngineKind::Exact,
            samples: default_samples(),
            burn_in_sweeps: default_burn_in(),
            thinning_sweeps: 1,
            chains: default_chains(),
            max_cftp_sweeps: default_max_cftp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Expectation,
    Tv,
    Moments,
    SteinChen,
    RingCheck,
    ThresholdSweep,
}

impl Target {
    fn name(self) -> &'static str {
        match self {
            Target::Expectation => "expectation",
            Target::Tv => "tv",
            Target::Moments => "moments",
            Target::SteinChen => "stein_chen",
            Target::RingCheck => "ring_check",
            Target::ThresholdSweep => "threshold_sweep",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_targets")]
    pub targets: Vec<Target>,
    #[serde(default)]
    pub mode: CountMode,
    /// Signed offsets of the threshold exponent: `e^{2a} = c n^{-d/k - epsilon}`.
    #[serde(default)]
    pub epsilon: Vec<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            targets: default_targets(),
            mode: CountMode::Exact,
            epsilon: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_csv")]
    pub csv: PathBuf,
    #[serde(default = "default_json")]
    pub json: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            csv: default_csv(),
            json: default_json(),
        }
    }
}

fn one() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}
fn one_f() -> f64 {
    1.0
}
fn l1() -> Norm {
    Norm::P(1)
}
fn default_samples() -> usize {
    10_000
}
fn default_burn_in() -> u64 {
    crate::sampler::DEFAULT_BURN_IN_SWEEPS
}
fn default_chains() -> usize {
    crate::sampler::DEFAULT_CHAINS
}
fn default_max_cftp() -> u64 {
    DEFAULT_MAX_CFTP_SWEEPS
}
fn default_targets() -> Vec<Target> {
    vec![Target::Tv]
}
fn default_csv() -> PathBuf {
    PathBuf::from("results.csv")
}
fn default_json() -> PathBuf {
    PathBuf::from("results.json")
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    /// Parses and checks every invariant that does not need the motif files.
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| {
            let span = e.span();
            let key = span.as_ref().and_then(|s| {
                let raw = text.get(s.clone())?.trim();
                e.message()
                    .starts_with("unknown field")
                    .then(|| raw.trim_matches('"').to_string())
            });
            Error::Parse {
                line: span.map(|s| line_of(text, s.start)),
                key,
                message: e.message().trim_end().to_string(),
            }
        })?;
        config.check()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        Signature::new(self.lattice.d, self.lattice.rho, self.lattice.p)?;
        if self.lattice.n_list.is_empty() {
            return fail("lattice.n_list must not be empty".into());
        }
        if self.lattice.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("lattice.n_list must be strictly increasing, got {:?}", self.lattice.n_list));
        }
        if self.b_list.is_empty() || self.b_list.iter().any(|b| !b.is_finite()) {
            return fail("b_list must hold at least one finite value".into());
        }
        if self.motifs.is_empty() {
            return fail("motifs must list at least one motif file".into());
        }
        if self.schedule.c <= 0.0 || !self.schedule.c.is_finite() {
            return fail(format!("schedule.c must be positive, got {}", self.schedule.c));
        }
        if self.schedule.a.is_some_and(|a| !a.is_finite()) {
            return fail("schedule.a must be finite".into());
        }
        if self.analysis.targets.is_empty() {
            return fail("analysis.targets must not be empty".into());
        }
        let has = |t| self.analysis.targets.contains(&t);
        if has(Target::ThresholdSweep) {
            if self.analysis.epsilon.is_empty() {
                return fail("threshold_sweep needs at least one analysis.epsilon value".into());
            }
            if self.schedule.a.is_some() {
                return fail("threshold_sweep is incompatible with a fixed schedule.a".into());
            }
        }
        if self.engine.kind != EngineKind::Exact {
            for t in [Target::SteinChen, Target::RingCheck] {
                if has(t) {
                    return fail(format!("target {} requires the exact engine", t.name()));
                }
            }
            if self.engine.samples == 0 {
                return fail("engine.samples must be at least 1".into());
            }
            if self.engine.kind == EngineKind::Cftp && self.b_list.iter().any(|&b| b < 0.0) {
                return fail("the cftp engine requires every b >= 0".into());
            }
        }
        Ok(())
    }

    /// Loads the motif files relative to `base`. A file that cannot be read
    /// stays an error and only affects its own cells; a readable motif that
    /// does not fit the lattice grid fails validation.
    pub fn load_motifs(&self, base: &Path) -> Result<Vec<Result<LocalConfig>>> {
        let sig = Signature::new(self.lattice.d, self.lattice.rho, self.lattice.p)?;
        let motifs: Vec<Result<LocalConfig>> = self
            .motifs
            .iter()
            .map(|p| MotifFile::read(base.join(p)).map(|f| f.motif))
            .collect();
        for (path, m) in self.motifs.iter().zip(&motifs) {
            let Ok(m) = m else { continue };
            if m.signature() != sig {
                return Err(Error::Validation(format!(
                    "motif {} is built for {} but the lattice is {}",
                    path.display(),
                    m.signature(),
                    sig
                )));
            }
            let bound = 2 * self.lattice.rho * (m.radius() + 1);
            if let Some(&n) = self.lattice.n_list.iter().find(|&&n| n <= bound) {
                return Err(Error::Validation(format!(
                    "n = {n} violates the ball-overlap rule n > 2 rho (r + 1) = {bound} for motif {}",
                    path.display()
                )));
            }
        }
        Ok(motifs)
    }

    /// Stable identifier of the resolved configuration.
    pub fn run_id(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(format!("{SCHEMA_VERSION}:{text}").as_bytes());
        hex::encode(&digest[..8])
    }
}

/// One output record. Columns that do not apply to a target are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub d: usize,
    pub n: usize,
    pub rho: usize,
    pub p: String,
    pub motif: String,
    pub motif_hash: Option<String>,
    pub k: Option<usize>,
    pub gamma: Option<usize>,
    pub c: f64,
    pub b: f64,
    pub a: Option<f64>,
    pub target: String,
    pub epsilon: Option<f64>,
    pub mode: String,
    pub lambda_target: Option<f64>,
    pub mean: Option<f64>,
    pub var: Option<f64>,
    #[serde(rename = "M2")]
    pub m2: Option<f64>,
    #[serde(rename = "M3")]
    pub m3: Option<f64>,
    pub tv_exact_or_empirical: Option<f64>,
    pub tv_error_budget: Option<f64>,
    pub stein_chen_bound: Option<f64>,
    pub ring_mean_gap: Option<f64>,
    pub sample_size: u64,
    pub seed: Option<u64>,
    pub wall_time_ms: u64,
    pub error: Option<String>,
}

/// Rows of a finished run plus the files written.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub run_id: String,
    pub rows: Vec<ResultRow>,
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
}

impl RunOutcome {
    pub fn any_error(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }
}

#[derive(Serialize)]
struct JsonReport<'a> {
    schema_version: u32,
    run_id: &'a str,
    config: &'a RunConfig,
    rows: &'a [ResultRow],
}

/// A `(motif, n, b)` grid point; all targets of a group share one measure.
struct Group {
    motif_index: usize,
    n: usize,
    b: f64,
}

fn cell_seed(seed: u64, motif: &str, n: usize, b: f64, epsilon: Option<f64>) -> u64 {
    let key = format!("{seed}:{motif}:{n}:{b}:{epsilon:?}");
    let digest = Sha256::digest(key.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Law of the count under either the exact table or a sampler.
struct Law {
    dist: CountDistribution<f64>,
    measure: Option<ExactMeasure<f64>>,
    seed: Option<u64>,
}

struct Runner<'a> {
    config: &'a RunConfig,
    run_id: String,
    motifs: Vec<Result<LocalConfig>>,
}

impl Runner<'_> {
    fn base_row(&self, g: &Group, target: Target, epsilon: Option<f64>) -> ResultRow {
        let lat = &self.config.lattice;
        let motif = self.motifs[g.motif_index].as_ref().ok();
        let mode = match target {
            Target::SteinChen => CountMode::Superset,
            Target::RingCheck => CountMode::Exact,
            _ => self.config.analysis.mode,
        };
        ResultRow {
            run_id: self.run_id.clone(),
            d: lat.d,
            n: g.n,
            rho: lat.rho,
            p: lat.p.to_string(),
            motif: self.config.motifs[g.motif_index].display().to_string(),
            motif_hash: motif.map(LocalConfig::hash_hex),
            k: motif.map(LocalConfig::k),
            gamma: motif.map(LocalConfig::perimeter),
            c: self.config.schedule.c,
            b: g.b,
            a: None,
            target: target.name().to_string(),
            epsilon,
            mode: mode.to_string(),
            lambda_target: None,
            mean: None,
            var: None,
            m2: None,
            m3: None,
            tv_exact_or_empirical: None,
            tv_error_budget: None,
            stein_chen_bound: None,
            ring_mean_gap: None,
            sample_size: 0,
            seed: None,
            wall_time_ms: 0,
            error: None,
        }
    }

    fn field(&self, motif: &LocalConfig, n: usize, epsilon: Option<f64>) -> Result<(f64, Option<FieldSchedule<f64>>)> {
        if let Some(a) = self.config.schedule.a {
            return Ok((a, None));
        }
        let schedule = FieldSchedule::new(self.config.schedule.c, motif.k(), self.config.lattice.d)?;
        Ok((schedule.field_with_shift(n, epsilon.unwrap_or(0.0)), Some(schedule)))
    }

    fn law(&self, lattice: &Arc<TorusLattice>, motif: &LocalConfig, mode: CountMode, params: ModelParams<f64>, seed: u64) -> Result<Law> {
        let engine = &self.config.engine;
        let kind = match engine.kind {
            EngineKind::Exact => {
                let measure = ExactMeasure::build(lattice.clone(), params)?;
                let dist = count_distribution_exact(&measure, motif, mode)?;
                return Ok(Law {
                    dist,
                    measure: Some(measure),
                    seed: None,
                });
            }
            EngineKind::HeatBath => SamplerKind::HeatBath,
            EngineKind::Metropolis => SamplerKind::Metropolis,
            EngineKind::Cftp => SamplerKind::Cftp,
        };
        let spec = SamplerSpec {
            kind,
            burn_in_sweeps: engine.burn_in_sweeps,
            thinning_sweeps: engine.thinning_sweeps,
            seed,
            chains: engine.chains,
            max_cftp_sweeps: engine.max_cftp_sweeps,
        };
        let counter = Counter::new(lattice, motif, mode)?;
        let counts = sample_map(lattice.clone(), &params, &spec, engine.samples, |c| counter.count(c))?;
        Ok(Law {
            dist: CountDistribution::from_samples(&counts)?,
            measure: None,
            seed: Some(seed),
        })
    }

    fn fill_target(&self, row: &mut ResultRow, g: &Group, target: Target) -> Result<()> {
        let motif = self.motifs[g.motif_index].as_ref().map_err(Clone::clone)?;
        let lattice = Arc::new(TorusLattice::new(
            self.config.lattice.d,
            g.n,
            self.config.lattice.rho,
            self.config.lattice.p,
        )?);
        let (a, schedule) = self.field(motif, g.n, row.epsilon)?;
        row.a = Some(a);
        let params = ModelParams::new(a, g.b)?;
        if target != Target::ThresholdSweep {
            if let Some(s) = &schedule {
                row.lambda_target = Some(poisson_target(s, g.b, motif)?.lambda());
            }
        }
        let mode: CountMode = row.mode.parse()?;
        let seed = cell_seed(self.config.seed, &motif.hash_hex(), g.n, g.b, row.epsilon);
        let law = self.law(&lattice, motif, mode, params, seed)?;
        let dist = &law.dist;
        row.seed = law.seed;
        row.sample_size = dist.sample_size();
        row.mean = Some(dist.mean());
        row.var = Some(dist.variance());
        match target {
            Target::Expectation | Target::ThresholdSweep => {}
            Target::Moments => {
                row.m2 = Some(dist.factorial_moment(2));
                row.m3 = Some(dist.factorial_moment(3));
            }
            Target::Tv => {
                row.m2 = Some(dist.factorial_moment(2));
                row.m3 = Some(dist.factorial_moment(3));
                let lambda = row
                    .lambda_target
                    .ok_or_else(|| Error::Validation("tv needs the schedule's Poisson target".into()))?;
                let tv = tv_to_poisson(dist, &PoissonTarget::new(lambda)?);
                row.tv_exact_or_empirical = Some(tv.distance);
                row.tv_error_budget = Some(tv.error_budget);
            }
            Target::SteinChen => {
                if g.b < 0.0 {
                    return Err(Error::FerromagneticOnly(g.b));
                }
                row.m2 = Some(dist.factorial_moment(2));
                row.m3 = Some(dist.factorial_moment(3));
                let tv = tv_to_poisson(dist, &PoissonTarget::new(dist.mean())?);
                row.tv_exact_or_empirical = Some(tv.distance);
                row.tv_error_budget = Some(tv.error_budget);
                row.stein_chen_bound = Some(stein_chen_formula(
                    dist.mean(),
                    dist.variance(),
                    lattice.num_sites() as f64,
                ));
            }
            Target::RingCheck => {
                let measure = law.measure.as_ref().expect("ring_check runs on the exact engine");
                let report = ring_equivalence_check(measure, motif)?;
                row.tv_exact_or_empirical = Some(report.tv);
                row.ring_mean_gap = Some(report.mean_gap);
            }
        }
        Ok(())
    }

    fn run_group(&self, g: &Group) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for &target in &self.config.analysis.targets {
            let epsilons: Vec<Option<f64>> = if target == Target::ThresholdSweep {
                self.config.analysis.epsilon.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for eps in epsilons {
                let start = Instant::now();
                let mut row = self.base_row(g, target, eps);
                if let Err(e) = self.fill_target(&mut row, g, target) {
                    row.error = Some(e.to_string());
                }
                row.wall_time_ms = start.elapsed().as_millis() as u64;
                rows.push(row);
            }
        }
        rows
    }
}

/// Runs every cell of `config`; motif paths resolve against `base`, output
/// paths against `out_dir`.
pub fn run(config: &RunConfig, base: &Path, out_dir: &Path, jobs: Option<usize>) -> Result<RunOutcome> {
    let motifs = config.load_motifs(base)?;
    let runner = Runner {
        config,
        run_id: config.run_id(),
        motifs,
    };
    let mut groups = Vec::new();
    for motif_index in 0..config.motifs.len() {
        for &n in &config.lattice.n_list {
            for &b in &config.b_list {
                groups.push(Group { motif_index, n, b });
            }
        }
    }
    let execute = || -> Vec<ResultRow> { groups.par_iter().flat_map_iter(|g| runner.run_group(g)).collect() };
    let rows = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::Validation(format!("cannot start {j} workers: {e}")))?
            .install(execute),
        None => execute(),
    };

    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(&config.output.csv);
    let json_path = out_dir.join(&config.output.json);
    for p in [&csv_path, &json_path] {
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&csv_path, render_csv(config, &runner.run_id, &rows)?)?;
    let report = JsonReport {
        schema_version: SCHEMA_VERSION,
        run_id: &runner.run_id,
        config,
        rows: &rows,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(&json_path, json + "\n")?;
    Ok(RunOutcome {
        run_id: runner.run_id,
        rows,
        csv_path,
        json_path,
    })
}

/// CSV text: two comment lines (schema version, resolved config) then the table.
pub fn render_csv(config: &RunConfig, run_id: &str, rows: &[ResultRow]) -> Result<String> {
    let mut out = format!(
        "# schema_version={SCHEMA_VERSION} run_id={run_id}\n# config={}\n",
        serde_json::to_string(config).map_err(|e| Error::Io(e.to_string()))?
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    if rows.is_empty() {
        return Ok(out);
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    Ok(out)
}

//! Poisson approximation of local motif counts in Ising models on the torus.

pub mod analysis;
pub mod count;
pub mod error;
pub mod experiment;
pub mod gibbs;
pub mod lattice;
pub mod motif;
pub mod sampler;
pub mod scalar;

pub use analysis::{CountDistribution, PoissonTarget, RateFit, TvResult};
pub use count::{CountMode, CountObservable, Counter};
pub use error::{Error, Result};
pub use experiment::{ResultRow, RunConfig, RunOutcome};
pub use gibbs::{ExactMeasure, FieldSchedule, ModelParams, PartialSpins, SpinConfig};
pub use lattice::{Ball, Norm, Signature, TorusLattice, Vertex};
pub use motif::{LocalConfig, MotifFile};
pub use sampler::{SamplerKind, SamplerSpec};
pub use scalar::Real;

pub type ModelParamsF64 = ModelParams<f64>;
pub type ModelParamsF32 = ModelParams<f32>;
pub type FieldScheduleF64 = FieldSchedule<f64>;
pub type FieldScheduleF32 = FieldSchedule<f32>;
pub type ExactMeasureF64 = ExactMeasure<f64>;
pub type ExactMeasureF32 = ExactMeasure<f32>;
pub type CountDistributionF64 = CountDistribution<f64>;
pub type CountDistributionF32 = CountDistribution<f32>;
pub type PoissonTargetF64 = PoissonTarget<f64>;
pub type PoissonTargetF32 = PoissonTarget<f32>;

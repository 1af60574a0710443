//! Run configuration: one JSON document covering every subcommand, with
//! defaults matching the benchmark experiment. Flags override the
//! top-level seed; everything else comes from the file.

use serde::{Deserialize, Serialize};
use spde_lattice::lab::{ExperimentPlan, ForcingSpec};
use spde_lattice::noise::{Backend, CorrelationModel};
use spde_lattice::solver::{DriftSpec, SolveConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub d: usize,
    /// working resolution for the noise and solve commands
    pub n: usize,
    pub theta: f64,
    pub lambda: f64,
    pub alpha: f64,
    /// mollifier support half-width
    pub half_width: f64,
    pub seed: u64,
    pub samples: usize,
    pub drift: DriftSpec,
    pub model: CorrelationModel,
    pub forcing: ForcingSpec,
    pub backend: Backend,
    pub solve: SolveConfig,
    /// include a noise draw in the solve command
    pub with_noise: bool,
    /// compared resolutions for the converge command
    pub ladder: Vec<usize>,
    /// reference resolution for converge and holder
    pub n_ref: usize,
    /// moment orders reported by converge
    pub ps: Vec<f64>,
    /// lattice separations for structure functions
    pub radii: Vec<usize>,
    /// resolutions tabulated by the kernel command
    pub kernel_resolutions: Vec<usize>,
    /// smoothing radii for the kernel command's rate proxy (≥ 3)
    pub epsilons: Vec<f64>,
    /// Monte Carlo points per smoothing-norm estimate
    pub smoothing_samples: usize,
    /// series truncation reference; enables truncation-error rates
    pub series_n_ref: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bench = ExperimentPlan::default_benchmark();
        RunConfig {
            d: bench.d,
            n: 8,
            theta: bench.theta,
            lambda: bench.lambda,
            alpha: bench.alpha,
            half_width: 1.0,
            seed: bench.seed,
            samples: bench.samples,
            drift: bench.drift,
            model: bench.model,
            forcing: bench.forcing,
            backend: Backend::Auto,
            solve: SolveConfig::default(),
            with_noise: true,
            ladder: bench.ladder,
            n_ref: bench.n_ref,
            ps: vec![2.0],
            radii: vec![2, 3, 4, 6],
            kernel_resolutions: vec![4, 8, 16],
            epsilons: vec![0.4, 0.2, 0.1],
            smoothing_samples: 4000,
            series_n_ref: None,
        }
    }
}

impl RunConfig {
    pub fn plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            d: self.d,
            ladder: self.ladder.clone(),
            n_ref: self.n_ref,
            theta: self.theta,
            lambda: self.lambda,
            alpha: self.alpha,
            samples: self.samples,
            seed: self.seed,
            drift: self.drift,
            model: self.model,
            forcing: self.forcing,
            backend: self.backend,
            solve: self.solve,
        }
    }
}

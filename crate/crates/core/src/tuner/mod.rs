//! Parameter tuning: Gaussian-process surrogate, expected-improvement
//! search, simulated cloud motion and the estimator benchmark.

pub mod bench;
pub mod bo;
pub mod gp;
pub mod sim;

pub use bench::{benchmark, build_cases, mass_center_rmse, tune, BenchConfig, BenchReport, BenchResult, FlowCase};
pub use bo::{bo_minimize, latin_hypercube, BoOptions, BoResult};
pub use gp::{expected_improvement, matern, GpState, Kernel};
pub use sim::{advect_cloud, benchmark_flows, cloud_texture, make_sim_flow, AdvectOptions, CloudSequence, FlowKind, PointFlow, SimFlow};

pub mod audit;
pub mod directions;
pub mod error;
pub mod generate;
pub mod io;
pub mod metrics;
pub mod parallel;
pub(crate) mod pca;
pub mod projection;
pub mod rng;
pub mod scenarios;
pub mod significance;
pub mod space;
pub mod stats;
pub mod synthetic;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/spaces.md")]
    struct Spaces;
    #[doc = include_str!("../../../book/src/directions.md")]
    struct Directions;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/significance.md")]
    struct Significance;
    #[doc = include_str!("../../../book/src/scenarios.md")]
    struct Scenarios;
    #[doc = include_str!("../../../book/src/projection.md")]
    struct Projection;
    #[doc = include_str!("../../../book/src/synthetic.md")]
    struct Synthetic;
    #[doc = include_str!("../../../book/src/audit.md")]
    struct Audit;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}

pub mod asm;
pub mod coupling;
pub mod engine;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod onesite;
pub mod rng;
pub mod stats;
pub mod tracking;
pub mod verify;

pub use error::{Result, SandpileError};
pub use model::{Configuration, ModelParams, SiteLabel};
pub use rng::SimRng;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/avalanches.md")]
    mod avalanches {}
    #[doc = include_str!("../../../book/src/asm.md")]
    mod asm {}
    #[doc = include_str!("../../../book/src/coefficients.md")]
    mod coefficients {}
    #[doc = include_str!("../../../book/src/one-site.md")]
    mod one_site {}
    #[doc = include_str!("../../../book/src/stationary.md")]
    mod stationary {}
    #[doc = include_str!("../../../book/src/couplings.md")]
    mod couplings {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

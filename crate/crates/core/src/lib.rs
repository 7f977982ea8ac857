pub mod amp;
pub mod continuum;
pub mod coupling;
pub mod error;
pub mod priors;
pub mod quadrature;
pub mod state_evolution;

pub use error::{Error, Result};

// The book's code blocks run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/priors.md")]
    mod priors {}
    #[doc = include_str!("../../../book/src/coupling.md")]
    mod coupling {}
    #[doc = include_str!("../../../book/src/state-evolution.md")]
    mod state_evolution {}
    #[doc = include_str!("../../../book/src/amp.md")]
    mod amp {}
    #[doc = include_str!("../../../book/src/continuum.md")]
    mod continuum {}
}

//! Perfect (exact) sampling from Gibbs measures of `{-1, +1}` spin systems
//! on `Z^d` with finite or infinite range interactions.
//!
//! The sampler runs in two phases: a backward sketch pass builds a
//! set-valued chain that shrinks by vertex deletions and grows by random
//! regions, and a forward pass walks the recorded events in reverse to
//! assign spins. Termination, and therefore applicability, is governed by
//! the growing-set sequences attached to each vertex; this crate also ships
//! the machinery to compare, optimize and certify those sequences, plus a
//! simulator for the generalized birth-death processes that underpin the
//! termination argument.
//!
//! ```
//! use gibbs_perfect::optimize::check_h2;
//! use gibbs_perfect::sampler::{perfect_sample, SequenceStore};
//! use gibbs_perfect::{Interaction, SequencePolicy, Vertex};
//! use rand::SeedableRng;
//! use std::sync::Arc;
//!
//! // nearest-neighbor 1D Ising with coupling 0.05
//! let model = Arc::new(Interaction::pair_geometric(1, 0.1, 0.5, Some(1))?);
//!
//! // certify applicability before sampling
//! let report = check_h2(&model, &SequencePolicy::IsingOptimal, 1e-9)?;
//! assert!(report.holds);
//!
//! let store = SequenceStore::new(model, SequencePolicy::IsingOptimal);
//! let window = [Vertex::new(0, 0, 0), Vertex::new(1, 0, 0)];
//! let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
//! let (spins, diagnostics) = perfect_sample(&window, &store, &mut rng, 1_000_000)?;
//! assert!(spins.is_assigned(&window[0]) && spins.is_assigned(&window[1]));
//! assert!(diagnostics.n_stop >= 2);
//! # Ok::<(), gibbs_perfect::CoreError>(())
//! ```

pub mod error;
pub mod extinction;
pub mod interaction;
pub mod lattice;
pub mod model;
pub mod numeric;
pub mod optimize;
pub mod oracle;
pub mod sampler;
pub mod sequence;

pub use error::{CoreError, Result, SequenceViolation};
pub use interaction::Interaction;
pub use lattice::{Hyperedge, Spin, SpinConfig, Vertex};
pub use numeric::Interval;
pub use sequence::{LambdaDistribution, RegionSequence, SequencePolicy};

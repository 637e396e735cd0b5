//! Numerical laboratory for fast-slow gradient systems near a hyperbolic
//! umbilic singularity.
//!
//! The crate covers the full pipeline from the polynomial system definition
//! to the measured transition map:
//!
//! * [`poly`] and [`system`]: sparse polynomials and the fast-slow system,
//! * [`ode`]: adaptive Dormand–Prince integration with section detection,
//! * [`geometry`]: critical manifold, catastrophe map, stratification and
//!   Jacobi-ideal codimension of germs,
//! * [`slow_flow`]: the desingularized slow flow and the trajectory σ,
//! * [`fast`]: equilibria, configurations and jumps of the layer problem,
//! * [`blowup`]: the directional blow-up charts and their vector fields,
//! * [`airy`]: Airy functions and the Riccati dividing solutions,
//! * [`experiments`]: fan-out, scaling sweeps and the alternative unfolding,
//! * [`cli`]: the command-line front end.

pub mod airy;
pub mod blowup;
pub mod cli;
pub mod experiments;
pub mod fast;
pub mod geometry;
pub mod ode;
pub mod poly;
pub mod slow_flow;
pub mod system;

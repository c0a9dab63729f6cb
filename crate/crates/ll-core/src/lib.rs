//! Numerical laboratory for the one-dimensional Landau–Lifshitz(–Gilbert)
//! equation
//!
//! ```text
//! ∂t m = β m × ∂xx m − α m × (m × ∂xx m),          m(x,t) ∈ S²,
//! ```
//! with Gilbert damping α ∈ [0,1], β = √(1−α²), optionally with easy-plane /
//! easy-axis anisotropy. The crate provides:
//!
//! * self-similar profiles (expanders and shrinkers) integrated through the
//!   Serret–Frenet frame, their limit vectors, limit circles and the angle
//!   map c ↦ ϑ(c, α) ([`frenet`]);
//! * explicit easy-plane solitons, their conserved functionals and a
//!   discrete coercivity study of the linearized energy ([`solitons`]);
//! * initial-value solvers for the sphere-valued equation, its
//!   hydrodynamical form and its stereographic (quasilinear Schrödinger)
//!   form, with conservation monitors ([`evolution`]);
//! * the three anisotropy regimes — Sine–Gordon, free wave, cubic NLS — with
//!   convergence-rate studies ([`regimes`]);
//! * the dissipative semigroup, parabolic/BMO seminorms and the Duhamel
//!   fixed point used for rough (jump) initial data ([`rough`]).
//!
//! Fields are sampled on uniform grids ([`Grid1D`]); all state vectors are
//! plain `Vec`s so callers can inspect or serialize them freely.

pub mod error;
pub mod evolution;
pub mod frenet;
pub mod geometry;
pub mod grid;
pub mod numerics;
pub mod ode;
pub mod regimes;
pub mod report;
pub mod rough;
pub mod solitons;

pub use error::{Error, Result};
pub use geometry::{Anisotropy, Vec3};
pub use grid::{Boundary, Grid1D};

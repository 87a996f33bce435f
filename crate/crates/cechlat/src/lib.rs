pub mod dgla;
pub mod exact;
pub mod geometry;
pub mod invariants;
pub mod lattice;
pub mod nerve;
pub mod state;

pub mod harness;
pub mod metasurface;
pub mod polarization;
pub mod povm;
pub mod resource;
pub mod witness;

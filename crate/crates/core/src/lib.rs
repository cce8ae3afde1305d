//! Conditional diffusion for VLSI macro placement.

pub mod autodiff;
pub mod diffusion;
pub mod error;
pub mod guidance;
pub mod metrics;
pub mod model;
pub mod netlist;
pub mod render;
pub mod syngen;
pub mod transfer;

pub use error::{Error, Result};
pub use netlist::bookshelf::{parse_bookshelf, serialize_bookshelf, BookshelfBundle};
pub use netlist::{
    Canvas, Endpoint, Module, ModuleKind, Net, NetKind, Netlist, PinDirection, PinOffset, Placement, Units,
};

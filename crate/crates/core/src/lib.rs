//! Simulation and learning toolkit for a camera-based soft tactile finger.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud;
pub mod contact;
pub mod design;
pub mod error;
pub mod io;
pub mod membrane;
pub mod neural;
pub mod optics;
pub mod par;
pub mod proprio;
pub mod tactile;

pub use cloud::{chamfer_distance, ChamferDistance, Point3, PointCloud};
pub use error::{Error, Result};

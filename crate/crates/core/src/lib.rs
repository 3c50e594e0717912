//! Detection pipeline for aquatic invasive-plant mapping from 5-band drone
//! imagery: band registration, multispectral raster I/O, spectral signature
//! statistics, a small from-scratch segmentation network, and the accuracy
//! metrics used to assess the resulting maps.

pub mod align;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod spectra;
pub mod tensor;

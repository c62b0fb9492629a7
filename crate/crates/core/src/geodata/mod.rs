//! Planar spatial data: regular grids, categorical grids and indexed
//! point/polyline layers. All coordinates are projected meters.

mod categorical;
mod features;
mod raster;

pub use categorical::{read_categorical, CategoricalGrid};
pub use features::{
    point_segment_distance, read_features, read_features_from, write_features, BBox, Feature,
    FeatureKind, FeatureLayer, Geometry, Point,
};
pub use raster::{format_raster, parse_raster, read_raster, write_raster, Lattice, RasterGrid, DEFAULT_NODATA};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::raster::{read_raster, Lattice, RasterGrid};
use crate::error::{Error, Result};

/// Grid of small-integer category codes (land-cover classes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalGrid {
    pub lattice: Lattice,
    pub codes: Vec<i32>,
    pub categories: BTreeSet<i32>,
    pub nodata: i32,
}

impl CategoricalGrid {
    pub fn new(
        lattice: Lattice,
        codes: Vec<i32>,
        categories: impl IntoIterator<Item = i32>,
        nodata: i32,
    ) -> Result<Self> {
        let categories: BTreeSet<i32> = categories.into_iter().collect();
        if codes.len() != lattice.len() {
            return Err(Error::invalid(format!(
                "categorical grid has {} codes, lattice needs {}",
                codes.len(),
                lattice.len()
            )));
        }
        if categories.contains(&nodata) {
            return Err(Error::invalid("nodata code collides with a category"));
        }
        if let Some(bad) = codes
            .iter()
            .find(|c| **c != nodata && !categories.contains(c))
        {
            return Err(Error::invalid(format!("undeclared category code {bad}")));
        }
        Ok(Self {
            lattice,
            codes,
            categories,
            nodata,
        })
    }

    /// Converts a real-valued grid holding integral codes.
    pub fn from_raster(grid: &RasterGrid, categories: impl IntoIterator<Item = i32>) -> Result<Self> {
        let nodata = grid.nodata as i32;
        let codes = grid
            .values
            .iter()
            .map(|&v| {
                if grid.is_nodata(v) {
                    Ok(nodata)
                } else if v.fract() == 0.0 {
                    Ok(v as i32)
                } else {
                    Err(Error::invalid(format!("non-integral category code {v}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid.lattice, codes, categories, nodata)
    }

    pub fn to_raster(&self) -> RasterGrid {
        RasterGrid {
            lattice: self.lattice,
            values: self.codes.iter().map(|&c| c as f64).collect(),
            nodata: self.nodata as f64,
        }
    }

    pub fn is_nodata(&self, code: i32) -> bool {
        code == self.nodata
    }
}

/// Reads an ESRI ASCII grid of category codes. When `categories` is `None`
/// the set is taken from the codes present in the file.
pub fn read_categorical(path: impl AsRef<Path>, categories: Option<&[i32]>) -> Result<CategoricalGrid> {
    let raster = read_raster(path)?;
    match categories {
        Some(c) => CategoricalGrid::from_raster(&raster, c.iter().copied()),
        None => {
            let present: BTreeSet<i32> = raster
                .valid_cells()
                .map(|(_, v)| v as i32)
                .collect();
            CategoricalGrid::from_raster(&raster, present)
        }
    }
}

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sentinel written for nodata cells when a grid does not declare one.
pub const DEFAULT_NODATA: f64 = -9999.0;

// Local coordinates closer than this to an integer are snapped onto the cell
// center so that queries on a grid's own lattice reproduce stored values.
const SNAP_EPS: f64 = 1e-9;

/// Geometry of a regular planar grid.
///
/// Cell `(col, row)` has its center at
/// `(origin_x + (col + 0.5) * cell_size, origin_y + (row + 0.5) * cell_size)`;
/// row 0 is the bottom row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub n_cols: usize,
    pub n_rows: usize,
}

impl Lattice {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        n_cols: usize,
        n_rows: usize,
    ) -> Result<Self> {
        if n_cols < 1 {
            return Err(Error::invalid("ncols must be ≥ 1"));
        }
        if n_rows < 1 {
            return Err(Error::invalid("nrows must be ≥ 1"));
        }
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::invalid("cellsize must be > 0"));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(Self {
            origin_x,
            origin_y,
            cell_size,
            n_cols,
            n_rows,
        })
    }

    pub fn len(&self) -> usize {
        self.n_cols * self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.n_cols + col
    }

    #[inline]
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Center of the cell at a flat row-major index.
    pub fn center_of(&self, index: usize) -> (f64, f64) {
        self.cell_center(index % self.n_cols, index / self.n_cols)
    }

    pub fn x_max(&self) -> f64 {
        self.origin_x + self.n_cols as f64 * self.cell_size
    }

    pub fn y_max(&self) -> f64 {
        self.origin_y + self.n_rows as f64 * self.cell_size
    }

    /// Fractional column/row coordinates where integers fall on cell centers.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() < SNAP_EPS {
                r
            } else {
                v
            }
        };
        (
            snap((x - self.origin_x) / self.cell_size - 0.5),
            snap((y - self.origin_y) / self.cell_size - 0.5),
        )
    }
}

/// Regular grid of one real-valued variable, stored bottom row first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterGrid {
    pub lattice: Lattice,
    pub values: Vec<f64>,
    pub nodata: f64,
}

impl RasterGrid {
    pub fn new(lattice: Lattice, values: Vec<f64>, nodata: f64) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::invalid(format!(
                "grid has {} values, lattice needs {}",
                values.len(),
                lattice.len()
            )));
        }
        Ok(Self {
            lattice,
            values,
            nodata,
        })
    }

    pub fn filled(lattice: Lattice, value: f64) -> Self {
        Self {
            lattice,
            values: vec![value; lattice.len()],
            nodata: DEFAULT_NODATA,
        }
    }

    /// Builds a grid by evaluating `f` at every cell center.
    pub fn from_fn(lattice: Lattice, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = (0..lattice.len())
            .map(|i| {
                let (x, y) = lattice.center_of(i);
                f(x, y)
            })
            .collect();
        Self {
            lattice,
            values,
            nodata: DEFAULT_NODATA,
        }
    }

    #[inline]
    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata || v.is_nan()
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let v = self.values[self.lattice.index(col, row)];
        (!self.is_nodata(v)).then_some(v)
    }

    /// Iterator over `(index, value)` of valid cells.
    pub fn valid_cells(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| !self.is_nodata(v))
    }

    /// Bilinear interpolation between the four cell centers enclosing `(x, y)`.
    ///
    /// Neighbors carrying zero weight are not read, so an exact cell-center
    /// query only needs that one cell to be valid.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> Result<f64> {
        let lat = &self.lattice;
        let (u, v) = lat.local(x, y);
        let max_u = (lat.n_cols - 1) as f64;
        let max_v = (lat.n_rows - 1) as f64;
        if !(u >= 0.0 && u <= max_u && v >= 0.0 && v <= max_v) {
            return Err(Error::OutOfDomain { x, y });
        }
        let c0 = (u.floor() as usize).min(lat.n_cols.saturating_sub(2));
        let r0 = (v.floor() as usize).min(lat.n_rows.saturating_sub(2));
        let fu = u - c0 as f64;
        let fv = v - r0 as f64;
        let corners = [
            (c0, r0, (1.0 - fu) * (1.0 - fv)),
            (c0 + 1, r0, fu * (1.0 - fv)),
            (c0, r0 + 1, (1.0 - fu) * fv),
            (c0 + 1, r0 + 1, fu * fv),
        ];
        let mut acc = 0.0;
        for (c, r, w) in corners {
            if w == 0.0 {
                continue;
            }
            match self.get(c, r) {
                Some(val) => acc += w * val,
                None => {
                    return Err(Error::Nodata(format!(
                        "cell (col {c}, row {r}) neighbors ({x}, {y})"
                    )))
                }
            }
        }
        Ok(acc)
    }

    /// Resamples onto `target`; target centers outside the source hull or
    /// next to nodata become nodata.
    pub fn resample_bilinear(&self, target: &Lattice) -> Result<RasterGrid> {
        if target.is_empty() {
            return Err(Error::invalid("target lattice is empty"));
        }
        let values = (0..target.len())
            .map(|i| {
                let (x, y) = target.center_of(i);
                self.bilinear_sample(x, y).unwrap_or(self.nodata)
            })
            .collect();
        Ok(RasterGrid {
            lattice: *target,
            values,
            nodata: self.nodata,
        })
    }
}

/// Reads an ESRI ASCII grid file.
pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterGrid> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_raster(&text)
}

/// Writes a grid as ESRI ASCII (top row first).
pub fn write_raster(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_raster(grid)).map_err(|e| Error::io(path, e))
}

pub fn format_raster(grid: &RasterGrid) -> String {
    let lat = &grid.lattice;
    let mut out = String::with_capacity(lat.len() * 8 + 128);
    let _ = writeln!(out, "ncols {}", lat.n_cols);
    let _ = writeln!(out, "nrows {}", lat.n_rows);
    let _ = writeln!(out, "xllcorner {}", lat.origin_x);
    let _ = writeln!(out, "yllcorner {}", lat.origin_y);
    let _ = writeln!(out, "cellsize {}", lat.cell_size);
    let _ = writeln!(out, "NODATA_value {}", grid.nodata);
    for row in (0..lat.n_rows).rev() {
        let start = lat.index(0, row);
        for (i, v) in grid.values[start..start + lat.n_cols].iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let v = if v.is_nan() { grid.nodata } else { *v };
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Default)]
struct Header {
    ncols: Option<i64>,
    nrows: Option<i64>,
    xll: Option<f64>,
    yll: Option<f64>,
    center_registered: bool,
    cellsize: Option<f64>,
    nodata: Option<f64>,
}

pub fn parse_raster(text: &str) -> Result<RasterGrid> {
    let mut header = Header::default();
    let mut lines = text.lines().enumerate().peekable();

    while let Some(&(idx, line)) = lines.peek() {
        let line_no = idx + 1;
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else {
            lines.next();
            continue;
        };
        if !key.starts_with(|c: char| c.is_ascii_alphabetic()) {
            break;
        }
        let value = parts.next().ok_or_else(|| Error::Format {
            line: line_no,
            message: format!("header key `{key}` has no value"),
        })?;
        if parts.next().is_some() {
            return Err(Error::Format {
                line: line_no,
                message: format!("header key `{key}` has trailing tokens"),
            });
        }
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|_| Error::Format {
                line: line_no,
                message: format!("`{v}` is not a number for `{key}`"),
            })
        };
        let int = |v: &str| -> Result<i64> {
            v.parse::<i64>().map_err(|_| Error::Format {
                line: line_no,
                message: format!("`{v}` is not an integer for `{key}`"),
            })
        };
        match key.to_ascii_lowercase().as_str() {
            "ncols" => header.ncols = Some(int(value)?),
            "nrows" => header.nrows = Some(int(value)?),
            "xllcorner" => header.xll = Some(num(value)?),
            "yllcorner" => header.yll = Some(num(value)?),
            "xllcenter" => {
                header.xll = Some(num(value)?);
                header.center_registered = true;
            }
            "yllcenter" => {
                header.yll = Some(num(value)?);
                header.center_registered = true;
            }
            "cellsize" => header.cellsize = Some(num(value)?),
            "nodata_value" => header.nodata = Some(num(value)?),
            _ => {
                return Err(Error::Format {
                    line: line_no,
                    message: format!("unknown header key `{key}`"),
                })
            }
        }
        lines.next();
    }

    let missing = |name: &str| Error::Format {
        line: 0,
        message: format!("header is missing `{name}`"),
    };
    let ncols = header.ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = header.nrows.ok_or_else(|| missing("nrows"))?;
    let cellsize = header.cellsize.ok_or_else(|| missing("cellsize"))?;
    let mut xll = header.xll.ok_or_else(|| missing("xllcorner"))?;
    let mut yll = header.yll.ok_or_else(|| missing("yllcorner"))?;
    if ncols < 1 {
        return Err(Error::invalid("ncols must be ≥ 1"));
    }
    if nrows < 1 {
        return Err(Error::invalid("nrows must be ≥ 1"));
    }
    if header.center_registered {
        xll -= 0.5 * cellsize;
        yll -= 0.5 * cellsize;
    }
    let lattice = Lattice::new(xll, yll, cellsize, ncols as usize, nrows as usize)?;
    let nodata = header.nodata.unwrap_or(DEFAULT_NODATA);

    // File rows are top-first; storage is bottom-first.
    let mut file_rows: Vec<Vec<f64>> = Vec::with_capacity(lattice.n_rows);
    let mut pending: Vec<f64> = Vec::with_capacity(lattice.n_cols);
    let mut last_line = 0;
    for (idx, line) in lines {
        last_line = idx + 1;
        for tok in line.split_whitespace() {
            let v = tok.parse::<f64>().map_err(|_| Error::Format {
                line: idx + 1,
                message: format!("`{tok}` is not a number"),
            })?;
            pending.push(v);
            if pending.len() == lattice.n_cols {
                file_rows.push(std::mem::replace(
                    &mut pending,
                    Vec::with_capacity(lattice.n_cols),
                ));
            }
        }
    }
    let count = file_rows.len() * lattice.n_cols + pending.len();
    if count != lattice.len() {
        return Err(Error::Format {
            line: last_line,
            message: format!(
                "expected {} values ({} x {}), found {count}",
                lattice.len(),
                lattice.n_cols,
                lattice.n_rows
            ),
        });
    }
    let values: Vec<f64> = file_rows.into_iter().rev().flatten().collect();
    RasterGrid::new(lattice, values, nodata)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: Vec<f64>, n_cols: usize, n_rows: usize, cell: f64) -> RasterGrid {
        let lat = Lattice::new(0.0, 0.0, cell, n_cols, n_rows).unwrap();
        RasterGrid::new(lat, values, DEFAULT_NODATA).unwrap()
    }

    #[test]
    fn parses_two_by_two_bottom_row_first() {
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1000\nNODATA_value -9999\n1 2\n3 4\n";
        let g = parse_raster(text).unwrap();
        assert_eq!(g.lattice.n_cols, 2);
        assert_eq!(g.lattice.n_rows, 2);
        assert_eq!(g.values, vec![3.0, 4.0, 1.0, 2.0]);
        assert_eq!(g.get(0, 1), Some(1.0));
    }

    #[test]
    fn header_keys_are_case_insensitive() {
        let text = "NCOLS 1\nNRows 1\nXLLCORNER 5\nyllCorner 6\nCELLSIZE 2\nnodata_value -1\n-1\n";
        let g = parse_raster(text).unwrap();
        assert_eq!(g.lattice.origin_x, 5.0);
        assert_eq!(g.get(0, 0), None);
    }

    #[test]
    fn rejects_zero_columns() {
        let text = "ncols 0\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n";
        let err = parse_raster(text).unwrap_err();
        assert!(err.to_string().contains("ncols must be ≥ 1"), "{err}");
    }

    #[test]
    fn malformed_header_names_line() {
        let text = "ncols 2\nnrows x\nxllcorner 0\n";
        match parse_raster(text).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn value_count_mismatch_is_format_error() {
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3\n";
        assert!(matches!(parse_raster(text), Err(Error::Format { .. })));
    }

    #[test]
    fn bilinear_midpoint_averages_corners() {
        let g = grid(vec![0.0, 0.0, 0.0, 4.0], 2, 2, 1.0);
        assert_eq!(g.bilinear_sample(1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn bilinear_cell_center_is_identity() {
        let g = grid(vec![1.0, 7.5, 3.0, 4.0], 2, 2, 10.0);
        assert_eq!(g.bilinear_sample(15.0, 5.0).unwrap(), 7.5);
    }

    #[test]
    fn bilinear_matches_closed_form_polynomial() {
        // corners f(0,0)=1, f(1,0)=2, f(0,1)=3, f(1,1)=4 in local coordinates
        let g = grid(vec![1.0, 2.0, 3.0, 4.0], 2, 2, 1.0);
        let (u, v) = (0.25, 0.75);
        let expected = 1.0 * (1.0 - u) * (1.0 - v) + 2.0 * u * (1.0 - v) + 3.0 * (1.0 - u) * v + 4.0 * u * v;
        let got = g.bilinear_sample(0.5 + u, 0.5 + v).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((expected - 2.75).abs() < 1e-12);
    }

    #[test]
    fn bilinear_outside_hull_errors() {
        let g = grid(vec![1.0; 4], 2, 2, 1.0);
        assert!(matches!(g.bilinear_sample(0.2, 1.0), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn bilinear_nodata_neighbor_errors() {
        let g = grid(vec![1.0, DEFAULT_NODATA, 1.0, 1.0], 2, 2, 1.0);
        assert!(matches!(g.bilinear_sample(1.0, 1.0), Err(Error::Nodata(_))));
        // zero-weight neighbor is not consulted
        assert_eq!(g.bilinear_sample(0.5, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn resample_own_lattice_is_identity() {
        let lat = Lattice::new(100.0, -50.0, 3.0, 5, 4).unwrap();
        let g = RasterGrid::from_fn(lat, |x, y| (x * 0.37).sin() + y * y);
        let r = g.resample_bilinear(&lat).unwrap();
        assert_eq!(r.values, g.values);
    }

    #[test]
    fn resample_linear_ramp_is_exact() {
        let src_lat = Lattice::new(0.0, 0.0, 10_000.0, 12, 12).unwrap();
        let src = RasterGrid::from_fn(src_lat, |x, _| x);
        let target = Lattice::new(5_000.0, 5_000.0, 1_000.0, 110, 110).unwrap();
        let out = src.resample_bilinear(&target).unwrap();
        for (i, v) in out.values.iter().enumerate() {
            let (x, _) = target.center_of(i);
            assert!((v - x).abs() <= 1e-9 * x.abs().max(1.0), "cell {i}: {v} vs {x}");
        }
    }

    #[test]
    fn resample_outside_becomes_nodata() {
        let src = grid(vec![2.0; 4], 2, 2, 1.0);
        let target = Lattice::new(0.0, 0.0, 0.5, 4, 4).unwrap();
        let out = src.resample_bilinear(&target).unwrap();
        assert!(out.is_nodata(out.values[0]));
        assert_eq!(out.get(1, 1), Some(2.0));
    }
}

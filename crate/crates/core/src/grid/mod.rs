//! Spatial/temporal indexing, ingestion formats, and aggregation of raw
//! observation records into the four response tables.
//!
//! Cells are indexed `year_index * n_pixels + pixel`. Pixel ids are
//! contiguous from 0 and double as indices.

mod aggregate;
mod io;
mod projection;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use aggregate::{
    aggregate_checklists, aggregate_occurrences, build_tables, route_intensity_weights, BbsCountRecord,
    ChecklistAggregate, ChecklistRecord, IngestReport, LandCoverRecord, NaoRecord, OccurrenceAggregate,
    OccurrenceRecord, SegmentRecord, LAST_DAY_CLAMP,
};
pub use io::{load_inputs, read_tables_csv, write_inputs, write_tables_csv, InputFiles, Inputs, TableRow};
pub use projection::Projection;

use crate::vecchia::Coord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRow {
    pub pixel_id: usize,
    pub lon: f64,
    pub lat: f64,
    pub area_km2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub id: usize,
    pub lon: f64,
    pub lat: f64,
    pub x_km: f64,
    pub y_km: f64,
    pub area: f64,
}

/// Regular square lattice of pixels over a set of years.
///
/// Coordinates are projected once about the centroid of the pixel
/// barycentres. The lattice is anchored on the largest pixel, whose
/// barycentre is taken as its square's centre; a location belongs to the
/// pixel owning the half-open square `[x0 + i w, x0 + (i+1) w) × [...)`.
#[derive(Debug, Clone)]
pub struct PixelGrid {
    pixels: Vec<Pixel>,
    years: Vec<i32>,
    cell_km: f64,
    projection: Projection,
    origin: (f64, f64),
    lookup: HashMap<(i64, i64), usize>,
}

impl PixelGrid {
    pub fn new(mut rows: Vec<PixelRow>, years: Vec<i32>, cell_km: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("pixel grid is empty".into()));
        }
        if !(cell_km > 0.0) {
            return Err(Error::Validation(format!("cell width {cell_km} must be positive")));
        }
        rows.sort_by_key(|r| r.pixel_id);
        for (i, r) in rows.iter().enumerate() {
            if r.pixel_id != i {
                return Err(Error::Validation(format!(
                    "pixel ids must be unique and contiguous from 0; found {} at position {i}",
                    r.pixel_id
                )));
            }
            if !(r.area_km2 > 0.0) {
                return Err(Error::Validation(format!("pixel {i} has non-positive area {}", r.area_km2)));
            }
        }
        let mut sorted_years = years.clone();
        sorted_years.sort_unstable();
        sorted_years.dedup();
        if sorted_years.len() != years.len() || years.is_empty() {
            return Err(Error::Validation("years must be non-empty and distinct".into()));
        }

        let n = rows.len() as f64;
        let projection = Projection::new(
            rows.iter().map(|r| r.lon).sum::<f64>() / n,
            rows.iter().map(|r| r.lat).sum::<f64>() / n,
        );
        let pixels: Vec<Pixel> = rows
            .iter()
            .map(|r| {
                let (x, y) = projection.forward(r.lon, r.lat);
                Pixel { id: r.pixel_id, lon: r.lon, lat: r.lat, x_km: x, y_km: y, area: r.area_km2 }
            })
            .collect();
        let anchor = pixels
            .iter()
            .fold(&pixels[0], |best, p| if p.area > best.area { p } else { best });
        let origin = (anchor.x_km - 0.5 * cell_km, anchor.y_km - 0.5 * cell_km);

        let mut grid = PixelGrid { pixels, years: sorted_years, cell_km, projection, origin, lookup: HashMap::new() };
        for p in &grid.pixels {
            let key = grid.lattice_key(p.x_km, p.y_km);
            if let Some(other) = grid.lookup.insert(key, p.id) {
                return Err(Error::Validation(format!(
                    "pixels {other} and {} fall in the same {cell_km} km lattice square",
                    p.id
                )));
            }
        }
        Ok(grid)
    }

    fn lattice_key(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin.0) / self.cell_km).floor() as i64,
            ((y - self.origin.1) / self.cell_km).floor() as i64,
        )
    }

    /// Pixel containing a geographic location, if any.
    pub fn locate(&self, lon: f64, lat: f64) -> Option<usize> {
        if !lon.is_finite() || !lat.is_finite() {
            return None;
        }
        let (x, y) = self.projection.forward(lon, lat);
        self.lookup.get(&self.lattice_key(x, y)).copied()
    }

    pub fn n_pixels(&self) -> usize {
        self.pixels.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_pixels() * self.n_years()
    }

    pub fn pixels(&self) -> &[Pixel] {
        &self.pixels
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        self.years.binary_search(&year).ok()
    }

    pub fn cell(&self, pixel: usize, year_idx: usize) -> usize {
        year_idx * self.n_pixels() + pixel
    }

    pub fn cell_km(&self) -> f64 {
        self.cell_km
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    /// Projected km coordinates used for all covariance distances.
    pub fn coords(&self) -> Vec<Coord> {
        self.pixels.iter().map(|p| [p.x_km, p.y_km]).collect()
    }

    /// One-dimensional year coordinates for the temporal field.
    pub fn year_coords(&self) -> Vec<Coord> {
        self.years.iter().map(|&y| [y as f64, 0.0]).collect()
    }

    pub fn rows(&self) -> Vec<PixelRow> {
        self.pixels
            .iter()
            .map(|p| PixelRow { pixel_id: p.id, lon: p.lon, lat: p.lat, area_km2: p.area })
            .collect()
    }
}

/// A survey route in one year: pixel segments with length fractions and the
/// number of stops (out of 50) that were visited.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteDef {
    pub route_id: u64,
    pub year: i32,
    pub segments: Vec<(usize, f64)>,
    pub stops_visited: u32,
}

pub const ROUTE_STOPS: u32 = 50;
const WEIGHT_TOL: f64 = 1e-9;

impl RouteDef {
    pub fn validate(&self, n_pixels: usize) -> Result<()> {
        if !(1..=ROUTE_STOPS).contains(&self.stops_visited) {
            return Err(Error::Validation(format!(
                "route {}: stops visited {} outside [1, {ROUTE_STOPS}]",
                self.route_id, self.stops_visited
            )));
        }
        if self.segments.is_empty() {
            return Err(Error::Validation(format!("route {} has no segments", self.route_id)));
        }
        for &(pixel, w) in &self.segments {
            if pixel >= n_pixels {
                return Err(Error::Validation(format!("route {}: unknown pixel {pixel}", self.route_id)));
            }
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Validation(format!("route {}: weight {w} outside [0, 1]", self.route_id)));
            }
        }
        let total: f64 = self.segments.iter().map(|s| s.1).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Validation(format!("route {}: weights sum {total}", self.route_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandCover {
    pub developed: f64,
    pub forest: f64,
    pub vegetation: f64,
    pub water: f64,
}

impl LandCover {
    pub const CLASSES: [&'static str; 4] = ["developed", "forest", "vegetation", "water"];

    pub fn values(&self) -> [f64; 4] {
        [self.developed, self.forest, self.vegetation, self.water]
    }
}

/// One standardised survey count with its effective per-pixel multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct BbsObservation {
    pub route_id: u64,
    pub year_idx: usize,
    pub count: u64,
    pub stops: u32,
    pub weights: Vec<(usize, f64)>,
}

/// Response variables and covariates, dense over pixel-year cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTables {
    pub n_pixels: usize,
    pub n_years: usize,
    /// Checklist count per cell; `None` where the cell is not covered by a
    /// checklist table at all (aggregated tables cover every cell).
    pub n_ckl: Vec<Option<u64>>,
    /// Median checklist duration in minutes, present iff `n_ckl > 0`.
    pub median_duration: Vec<Option<f64>>,
    /// Presence count, present iff `n_ckl > 0`.
    pub n_spc: Vec<Option<u64>>,
    /// Transformed first-arrival value, present iff `n_spc > 0`.
    pub z: Vec<Option<f64>>,
    pub bbs: Vec<BbsObservation>,
    /// NAO index per year index.
    pub nao: Vec<f64>,
    pub landcover: Option<Vec<LandCover>>,
}

impl ResponseTables {
    /// Tables with no observations at all (prior-only posterior).
    pub fn empty(n_pixels: usize, n_years: usize, nao: Vec<f64>) -> Self {
        let n = n_pixels * n_years;
        ResponseTables {
            n_pixels,
            n_years,
            n_ckl: vec![None; n],
            median_duration: vec![None; n],
            n_spc: vec![None; n],
            z: vec![None; n],
            bbs: Vec::new(),
            nao,
            landcover: None,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_pixels * self.n_years
    }

    /// Checklist count of a cell, zero where absent.
    pub fn checklists(&self, c: usize) -> u64 {
        self.n_ckl[c].unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_cells();
        if [self.n_ckl.len(), self.median_duration.len(), self.n_spc.len(), self.z.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Validation("response columns do not cover every pixel-year".into()));
        }
        if self.nao.len() != self.n_years {
            return Err(Error::Dimension { expected: self.n_years, got: self.nao.len() });
        }
        for c in 0..n {
            let has_ckl = self.checklists(c) > 0;
            if self.median_duration[c].is_some() != has_ckl || self.n_spc[c].is_some() != has_ckl {
                return Err(Error::Validation(format!("cell {c}: duration/presence must be present iff checklists exist")));
            }
            if let Some(d) = self.median_duration[c] {
                if !(d > 0.0) {
                    return Err(Error::Validation(format!("cell {c}: non-positive median duration {d}")));
                }
            }
            let spc = self.n_spc[c].unwrap_or(0);
            if spc > self.checklists(c) {
                return Err(Error::Validation(format!("cell {c}: {spc} presences exceed {} checklists", self.checklists(c))));
            }
            match self.z[c] {
                Some(z) if !(z > 0.0) => return Err(Error::Validation(format!("cell {c}: non-positive z {z}"))),
                Some(_) if spc == 0 => return Err(Error::Validation(format!("cell {c}: z without presences"))),
                None if spc > 0 => return Err(Error::Validation(format!("cell {c}: presences without z"))),
                _ => {}
            }
        }
        for obs in &self.bbs {
            if obs.year_idx >= self.n_years || obs.weights.iter().any(|&(p, _)| p >= self.n_pixels) {
                return Err(Error::Validation(format!("route {} references cells outside the grid", obs.route_id)));
            }
        }
        if let Some(lc) = &self.landcover {
            if lc.len() != self.n_pixels {
                return Err(Error::Dimension { expected: self.n_pixels, got: lc.len() });
            }
            if lc.iter().flat_map(|l| l.values()).any(|v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Validation("land-cover proportions must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Mean of the observed median durations of each pixel across years.
    pub fn pixel_mean_durations(&self) -> Vec<Option<f64>> {
        (0..self.n_pixels)
            .map(|p| {
                let ds: Vec<f64> = (0..self.n_years)
                    .filter_map(|t| self.median_duration[t * self.n_pixels + p])
                    .collect();
                (!ds.is_empty()).then(|| ds.iter().sum::<f64>() / ds.len() as f64)
            })
            .collect()
    }

    /// Mean of all observed median durations.
    pub fn overall_mean_duration(&self) -> Option<f64> {
        let ds: Vec<f64> = self.median_duration.iter().flatten().copied().collect();
        (!ds.is_empty()).then(|| ds.iter().sum::<f64>() / ds.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn square_grid(nx: usize, ny: usize) -> PixelGrid {
        let proj = Projection::new(-74.0, 42.0);
        let mut rows = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let x = (i as f64 - (nx - 1) as f64 / 2.0) * 20.0;
                let y = (j as f64 - (ny - 1) as f64 / 2.0) * 20.0;
                let (lon, lat) = proj.inverse(x, y);
                rows.push(PixelRow { pixel_id: rows.len(), lon, lat, area_km2: 400.0 });
            }
        }
        PixelGrid::new(rows, vec![2001, 2002], 20.0).unwrap()
    }

    #[test]
    fn locate_uses_half_open_squares() {
        let g = square_grid(3, 3);
        for p in g.pixels() {
            assert_eq!(g.locate(p.lon, p.lat), Some(p.id));
        }
        let proj = g.projection();
        let c = g.pixels()[4];
        // just inside the lower-left corner belongs to the centre pixel; the
        // upper-right edge belongs to the neighbour
        let (lon, lat) = proj.inverse(c.x_km - 9.999, c.y_km - 9.999);
        assert_eq!(g.locate(lon, lat), Some(4));
        let (lon, lat) = proj.inverse(c.x_km + 10.001, c.y_km);
        assert_eq!(g.locate(lon, lat), Some(5));
        let (lon, lat) = proj.inverse(c.x_km + 100.0, c.y_km);
        assert_eq!(g.locate(lon, lat), None);
    }

    #[test]
    fn rejects_bad_ids_and_areas() {
        let row = |id, area| PixelRow { pixel_id: id, lon: -74.0 + id as f64, lat: 42.0, area_km2: area };
        assert!(PixelGrid::new(vec![row(0, 400.0), row(2, 400.0)], vec![2001], 20.0).is_err());
        assert!(PixelGrid::new(vec![row(0, 400.0), row(0, 400.0)], vec![2001], 20.0).is_err());
        assert!(PixelGrid::new(vec![row(0, 0.0)], vec![2001], 20.0).is_err());
    }

    #[test]
    fn route_weight_validation() {
        let mut r = RouteDef { route_id: 1, year: 2001, segments: vec![(0, 0.6), (1, 0.4)], stops_visited: 50 };
        assert!(r.validate(2).is_ok());
        r.segments[1].1 = 0.5;
        let msg = r.validate(2).unwrap_err().to_string();
        assert!(msg.contains("weights sum 1.1"), "{msg}");
        r.segments[1].1 = 0.4;
        r.stops_visited = 0;
        assert!(r.validate(2).is_err());
    }
}

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{BbsObservation, Inputs, LandCover, PixelGrid, ResponseTables, RouteDef, ROUTE_STOPS};
use crate::dist::date_to_z;
use crate::stats::median_sorted;
use crate::{Error, Result};

/// Day substituted for a first arrival on day 366, which would give z = 0.
pub const LAST_DAY_CLAMP: f64 = 365.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChecklistRecord {
    pub lon: f64,
    pub lat: f64,
    pub year: i32,
    pub duration_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceRecord {
    pub lon: f64,
    pub lat: f64,
    pub year: i32,
    pub day: f64,
    pub present: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbsCountRecord {
    pub route_id: u64,
    pub year: i32,
    pub count: u64,
    pub stops: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub route_id: u64,
    pub pixel_id: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaoRecord {
    pub year: i32,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandCoverRecord {
    pub pixel_id: usize,
    pub developed: f64,
    pub forest: f64,
    pub vegetation: f64,
    pub water: f64,
}

/// Counts of records accepted and dropped during aggregation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub checklists_accepted: usize,
    pub checklists_outside_grid: usize,
    pub checklists_bad_year: usize,
    pub checklists_bad_duration: usize,
    pub occurrences_accepted: usize,
    pub occurrences_outside_grid: usize,
    pub occurrences_bad_year: usize,
    pub occurrences_bad_flag: usize,
    pub occurrences_bad_day: usize,
    pub occurrences_clamped_day: usize,
    pub bbs_accepted: usize,
    pub bbs_bad_year: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChecklistAggregate {
    pub n_ckl: Vec<u64>,
    pub median_duration: Vec<Option<f64>>,
}

/// Counts checklists per pixel-year and takes the median duration.
///
/// Records outside every pixel, in years not on the grid, or with a
/// non-positive duration are dropped with a warning.
pub fn aggregate_checklists(
    records: &[ChecklistRecord],
    grid: &PixelGrid,
    report: &mut IngestReport,
) -> ChecklistAggregate {
    let n = grid.n_cells();
    let mut durations: Vec<Vec<f64>> = vec![Vec::new(); n];
    for r in records {
        if !(r.duration_min > 0.0) || !r.duration_min.is_finite() {
            report.checklists_bad_duration += 1;
            continue;
        }
        let Some(t) = grid.year_index(r.year) else {
            report.checklists_bad_year += 1;
            continue;
        };
        let Some(p) = grid.locate(r.lon, r.lat) else {
            report.checklists_outside_grid += 1;
            continue;
        };
        durations[grid.cell(p, t)].push(r.duration_min);
        report.checklists_accepted += 1;
    }
    for (what, count) in [
        ("outside the grid", report.checklists_outside_grid),
        ("in years outside the grid", report.checklists_bad_year),
        ("with non-positive duration", report.checklists_bad_duration),
    ] {
        if count > 0 {
            warn!("dropped {count} checklist records {what}");
        }
    }
    let mut n_ckl = vec![0; n];
    let mut median_duration = vec![None; n];
    for (c, ds) in durations.iter_mut().enumerate() {
        if ds.is_empty() {
            continue;
        }
        ds.sort_by(f64::total_cmp);
        n_ckl[c] = ds.len() as u64;
        median_duration[c] = Some(median_sorted(ds));
    }
    ChecklistAggregate { n_ckl, median_duration }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccurrenceAggregate {
    pub n_spc: Vec<Option<u64>>,
    pub z: Vec<Option<f64>>,
}

/// Sums presence flags per pixel-year and converts the earliest presence day
/// into `z = -ln(day / 366)`.
///
/// Errors when an occurrence falls in a cell without checklists or when
/// presences outnumber checklists.
pub fn aggregate_occurrences(
    records: &[OccurrenceRecord],
    grid: &PixelGrid,
    n_ckl: &[u64],
    report: &mut IngestReport,
) -> Result<OccurrenceAggregate> {
    let n = grid.n_cells();
    let mut n_spc: Vec<Option<u64>> = n_ckl.iter().map(|&c| (c > 0).then_some(0)).collect();
    let mut min_day = vec![f64::INFINITY; n];
    for r in records {
        if r.present != 0 && r.present != 1 {
            report.occurrences_bad_flag += 1;
            continue;
        }
        let Some(t) = grid.year_index(r.year) else {
            report.occurrences_bad_year += 1;
            continue;
        };
        let Some(p) = grid.locate(r.lon, r.lat) else {
            report.occurrences_outside_grid += 1;
            continue;
        };
        let c = grid.cell(p, t);
        let Some(count) = n_spc[c].as_mut() else {
            return Err(Error::Validation(format!(
                "occurrence at pixel {p}, year {} has no aggregated checklist",
                r.year
            )));
        };
        if r.present == 1 {
            let mut day = r.day;
            if !(day > 0.0 && day <= 366.0) {
                report.occurrences_bad_day += 1;
                continue;
            }
            if day >= 366.0 {
                day = LAST_DAY_CLAMP;
                report.occurrences_clamped_day += 1;
            }
            *count += 1;
            min_day[c] = min_day[c].min(day);
        }
        report.occurrences_accepted += 1;
    }
    if report.occurrences_clamped_day > 0 {
        warn!(
            "{} presence days equal to 366 clamped to {LAST_DAY_CLAMP}",
            report.occurrences_clamped_day
        );
    }
    for (what, count) in [
        ("with a presence flag outside {0, 1}", report.occurrences_bad_flag),
        ("in years outside the grid", report.occurrences_bad_year),
        ("outside the grid", report.occurrences_outside_grid),
        ("with a day outside (0, 366]", report.occurrences_bad_day),
    ] {
        if count > 0 {
            warn!("dropped {count} occurrence records {what}");
        }
    }
    let mut z = vec![None; n];
    for c in 0..n {
        if let Some(s) = n_spc[c] {
            if s > n_ckl[c] {
                return Err(Error::Validation(format!(
                    "cell {c}: {s} presences exceed {} checklists",
                    n_ckl[c]
                )));
            }
            if s > 0 {
                z[c] = Some(date_to_z(min_day[c])?);
            }
        }
    }
    Ok(OccurrenceAggregate { n_spc, z })
}

/// Per-pixel multipliers `ω_k · stops / 50` of a route's intensity.
pub fn route_intensity_weights(route: &RouteDef) -> Vec<(usize, f64)> {
    let effort = route.stops_visited as f64 / ROUTE_STOPS as f64;
    route.segments.iter().map(|&(p, w)| (p, w * effort)).collect()
}

/// Assembles response tables from raw records. One route-year is built per
/// `bbs` row; counts in years outside the grid are dropped with a warning.
pub fn build_tables(grid: &PixelGrid, routes: &[RouteDef], inputs: &Inputs) -> Result<(ResponseTables, IngestReport)> {
    let mut report = IngestReport::default();
    let ckl = aggregate_checklists(&inputs.checklists, grid, &mut report);
    let occ = aggregate_occurrences(&inputs.occurrences, grid, &ckl.n_ckl, &mut report)?;

    let mut nao_by_year = vec![None; grid.n_years()];
    for r in &inputs.nao {
        if let Some(t) = grid.year_index(r.year) {
            nao_by_year[t] = Some(r.value);
        }
    }
    let nao = nao_by_year
        .iter()
        .enumerate()
        .map(|(t, v)| v.ok_or_else(|| Error::Validation(format!("no NAO value for year {}", grid.years()[t]))))
        .collect::<Result<Vec<_>>>()?;

    let counts: BTreeMap<(u64, i32), u64> = inputs.bbs.iter().map(|r| ((r.route_id, r.year), r.count)).collect();
    let mut bbs = Vec::new();
    for route in routes {
        route.validate(grid.n_pixels())?;
        let Some(t) = grid.year_index(route.year) else {
            report.bbs_bad_year += 1;
            continue;
        };
        let count = *counts.get(&(route.route_id, route.year)).ok_or_else(|| {
            Error::Validation(format!("route {} year {} has no count", route.route_id, route.year))
        })?;
        bbs.push(BbsObservation {
            route_id: route.route_id,
            year_idx: t,
            count,
            stops: route.stops_visited,
            weights: route_intensity_weights(route),
        });
        report.bbs_accepted += 1;
    }
    if report.bbs_bad_year > 0 {
        warn!("dropped {} route counts in years outside the grid", report.bbs_bad_year);
    }

    let landcover = inputs
        .landcover
        .as_ref()
        .map(|rows| {
            let mut lc = vec![None; grid.n_pixels()];
            for r in rows {
                if r.pixel_id >= grid.n_pixels() {
                    return Err(Error::Validation(format!("land cover for unknown pixel {}", r.pixel_id)));
                }
                lc[r.pixel_id] = Some(LandCover {
                    developed: r.developed,
                    forest: r.forest,
                    vegetation: r.vegetation,
                    water: r.water,
                });
            }
            lc.into_iter()
                .enumerate()
                .map(|(p, v)| v.ok_or_else(|| Error::Validation(format!("no land cover for pixel {p}"))))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;

    let tables = ResponseTables {
        n_pixels: grid.n_pixels(),
        n_years: grid.n_years(),
        n_ckl: ckl.n_ckl.into_iter().map(Some).collect(),
        median_duration: ckl.median_duration,
        n_spc: occ.n_spc,
        z: occ.z,
        bbs,
        nao,
        landcover,
    };
    tables.validate()?;
    Ok((tables, report))
}

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    BbsCountRecord, ChecklistRecord, LandCoverRecord, NaoRecord, OccurrenceRecord, PixelGrid, PixelRow,
    ResponseTables, RouteDef, SegmentRecord,
};
use crate::{Error, Result};

/// Locations of the input CSV files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputFiles {
    pub pixels: PathBuf,
    pub checklists: PathBuf,
    pub occurrences: PathBuf,
    pub bbs: PathBuf,
    pub bbs_segments: PathBuf,
    pub nao: PathBuf,
    pub landcover: Option<PathBuf>,
}

impl InputFiles {
    pub const PIXELS: &'static str = "pixels.csv";
    pub const CHECKLISTS: &'static str = "checklists.csv";
    pub const OCCURRENCES: &'static str = "occurrences.csv";
    pub const BBS: &'static str = "bbs.csv";
    pub const BBS_SEGMENTS: &'static str = "bbs_segments.csv";
    pub const NAO: &'static str = "nao.csv";
    pub const LANDCOVER: &'static str = "landcover.csv";

    /// Standard file names inside `dir`; land cover is optional and only
    /// picked up when present.
    pub fn in_dir(dir: &Path) -> Self {
        let lc = dir.join(Self::LANDCOVER);
        InputFiles {
            pixels: dir.join(Self::PIXELS),
            checklists: dir.join(Self::CHECKLISTS),
            occurrences: dir.join(Self::OCCURRENCES),
            bbs: dir.join(Self::BBS),
            bbs_segments: dir.join(Self::BBS_SEGMENTS),
            nao: dir.join(Self::NAO),
            landcover: lc.exists().then_some(lc),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![
            self.pixels.as_path(),
            self.checklists.as_path(),
            self.occurrences.as_path(),
            self.bbs.as_path(),
            self.bbs_segments.as_path(),
            self.nao.as_path(),
        ];
        v.extend(self.landcover.as_deref());
        v
    }
}

/// Raw, schema-checked input tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Inputs {
    pub pixels: Vec<PixelRow>,
    pub checklists: Vec<ChecklistRecord>,
    pub occurrences: Vec<OccurrenceRecord>,
    pub bbs: Vec<BbsCountRecord>,
    pub segments: Vec<SegmentRecord>,
    pub nao: Vec<NaoRecord>,
    pub landcover: Option<Vec<LandCoverRecord>>,
}

impl Inputs {
    /// Modelled years: those with an NAO value, ascending.
    pub fn years(&self) -> Vec<i32> {
        let mut y: Vec<i32> = self.nao.iter().map(|r| r.year).collect();
        y.sort_unstable();
        y.dedup();
        y
    }

    pub fn grid(&self, cell_km: f64) -> Result<PixelGrid> {
        PixelGrid::new(self.pixels.clone(), self.years(), cell_km)
    }

    /// One route definition per `bbs` row, with segments shared across years.
    pub fn routes(&self, n_pixels: usize) -> Result<Vec<RouteDef>> {
        let mut segs: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
        for s in &self.segments {
            segs.entry(s.route_id).or_default().push((s.pixel_id, s.weight));
        }
        self.bbs
            .iter()
            .map(|r| {
                let segments = segs
                    .get(&r.route_id)
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("route {} has no segments", r.route_id)))?;
                let route = RouteDef { route_id: r.route_id, year: r.year, segments, stops_visited: r.stops };
                route.validate(n_pixels)?;
                Ok(route)
            })
            .collect()
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| Error::Io { file: path.to_path_buf(), source })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Reads a CSV file into typed rows paired with their 1-based line numbers.
fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<(u64, T)>> {
    let mut rdr = open_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(path, line, deser_message(&e)))?;
        out.push((line, row));
    }
    Ok(out)
}

fn deser_message(e: &csv::Error) -> String {
    match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => match err.field() {
            Some(f) => format!("field {}: {}", f + 1, err.kind()),
            None => err.kind().to_string(),
        },
        _ => e.to_string(),
    }
}

fn finite(path: &Path, line: u64, name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::parse(path, line, format!("{name} is not finite")))
    }
}

/// Parses and validates all input files.
///
/// Schema violations, duplicate pixel ids, duplicate route-years and route
/// weights that do not sum to one are reported with file and line.
pub fn load_inputs(files: &InputFiles, cell_km: f64) -> Result<(PixelGrid, Vec<RouteDef>, Inputs)> {
    let pixel_rows: Vec<(u64, PixelRow)> = read_rows(&files.pixels)?;
    let mut seen = HashMap::new();
    for (line, r) in &pixel_rows {
        finite(&files.pixels, *line, "lon", r.lon)?;
        finite(&files.pixels, *line, "lat", r.lat)?;
        if let Some(first) = seen.insert(r.pixel_id, *line) {
            return Err(Error::parse(
                &files.pixels,
                *line,
                format!("duplicate pixel_id {} (first on line {first})", r.pixel_id),
            ));
        }
        if !(r.area_km2 > 0.0) {
            return Err(Error::parse(&files.pixels, *line, format!("area_km2 {} must be positive", r.area_km2)));
        }
    }

    let nao_rows: Vec<(u64, NaoRecord)> = read_rows(&files.nao)?;
    let mut nao_years = HashMap::new();
    for (line, r) in &nao_rows {
        finite(&files.nao, *line, "value", r.value)?;
        if nao_years.insert(r.year, *line).is_some() {
            return Err(Error::parse(&files.nao, *line, format!("duplicate year {}", r.year)));
        }
    }

    let seg_rows: Vec<(u64, SegmentRecord)> = read_rows(&files.bbs_segments)?;
    let mut by_route: BTreeMap<u64, (f64, u64)> = BTreeMap::new();
    for (line, s) in &seg_rows {
        if s.pixel_id >= pixel_rows.len() {
            return Err(Error::parse(&files.bbs_segments, *line, format!("unknown pixel_id {}", s.pixel_id)));
        }
        if !(0.0..=1.0).contains(&s.weight) {
            return Err(Error::parse(&files.bbs_segments, *line, format!("weight {} outside [0, 1]", s.weight)));
        }
        let e = by_route.entry(s.route_id).or_insert((0.0, *line));
        e.0 += s.weight;
        e.1 = *line;
    }
    for (route, (total, line)) in &by_route {
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::parse(&files.bbs_segments, *line, format!("route {route}: weights sum {total}")));
        }
    }

    let bbs_rows: Vec<(u64, BbsCountRecord)> = read_rows(&files.bbs)?;
    let mut route_years = HashMap::new();
    for (line, r) in &bbs_rows {
        if !by_route.contains_key(&r.route_id) {
            return Err(Error::parse(&files.bbs, *line, format!("route {} has no segments", r.route_id)));
        }
        if !(1..=super::ROUTE_STOPS).contains(&r.stops) {
            return Err(Error::parse(&files.bbs, *line, format!("stops {} outside [1, 50]", r.stops)));
        }
        if route_years.insert((r.route_id, r.year), *line).is_some() {
            return Err(Error::parse(&files.bbs, *line, format!("duplicate route {} year {}", r.route_id, r.year)));
        }
    }

    let checklists: Vec<(u64, ChecklistRecord)> = read_rows(&files.checklists)?;
    let occurrences: Vec<(u64, OccurrenceRecord)> = read_rows(&files.occurrences)?;
    let landcover = match &files.landcover {
        Some(path) => {
            let rows: Vec<(u64, LandCoverRecord)> = read_rows(path)?;
            for (line, r) in &rows {
                let v = [r.developed, r.forest, r.vegetation, r.water];
                if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err(Error::parse(path, *line, "land-cover proportions must lie in [0, 1]"));
                }
            }
            Some(rows.into_iter().map(|r| r.1).collect())
        }
        None => None,
    };

    let inputs = Inputs {
        pixels: pixel_rows.into_iter().map(|r| r.1).collect(),
        checklists: checklists.into_iter().map(|r| r.1).collect(),
        occurrences: occurrences.into_iter().map(|r| r.1).collect(),
        bbs: bbs_rows.into_iter().map(|r| r.1).collect(),
        segments: seg_rows.into_iter().map(|r| r.1).collect(),
        nao: nao_rows.into_iter().map(|r| r.1).collect(),
        landcover,
    };
    info!(
        "loaded {} pixels, {} checklists, {} occurrences, {} route counts, {} route segments, {} years",
        inputs.pixels.len(),
        inputs.checklists.len(),
        inputs.occurrences.len(),
        inputs.bbs.len(),
        inputs.segments.len(),
        inputs.nao.len()
    );
    let grid = inputs.grid(cell_km)?;
    let routes = inputs.routes(grid.n_pixels())?;
    Ok((grid, routes, inputs))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io = |source| Error::Io { file: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

/// Writes every raw table into `dir` under the standard file names.
pub fn write_inputs(dir: &Path, inputs: &Inputs) -> Result<InputFiles> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { file: dir.to_path_buf(), source })?;
    write_rows(&dir.join(InputFiles::PIXELS), &inputs.pixels)?;
    write_rows(&dir.join(InputFiles::CHECKLISTS), &inputs.checklists)?;
    write_rows(&dir.join(InputFiles::OCCURRENCES), &inputs.occurrences)?;
    write_rows(&dir.join(InputFiles::BBS), &inputs.bbs)?;
    write_rows(&dir.join(InputFiles::BBS_SEGMENTS), &inputs.segments)?;
    write_rows(&dir.join(InputFiles::NAO), &inputs.nao)?;
    if let Some(lc) = &inputs.landcover {
        write_rows(&dir.join(InputFiles::LANDCOVER), lc)?;
    }
    Ok(InputFiles::in_dir(dir))
}

/// One pixel-year of `tables.csv`; absent entries are empty cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub pixel_id: usize,
    pub year: i32,
    pub n_ckl: Option<u64>,
    pub median_duration: Option<f64>,
    pub n_spc: Option<u64>,
    pub z: Option<f64>,
}

pub fn write_tables_csv(path: &Path, grid: &PixelGrid, tables: &ResponseTables) -> Result<()> {
    let mut rows = Vec::with_capacity(tables.n_cells());
    for (t, &year) in grid.years().iter().enumerate() {
        for p in 0..grid.n_pixels() {
            let c = grid.cell(p, t);
            rows.push(TableRow {
                pixel_id: p,
                year,
                n_ckl: tables.n_ckl[c],
                median_duration: tables.median_duration[c],
                n_spc: tables.n_spc[c],
                z: tables.z[c],
            });
        }
    }
    write_rows(path, &rows)
}

/// Reads `tables.csv` back into cell-indexed rows. Every pixel-year of the
/// grid must appear exactly once.
pub fn read_tables_csv(path: &Path, grid: &PixelGrid) -> Result<Vec<TableRow>> {
    let rows: Vec<(u64, TableRow)> = read_rows(path)?;
    let mut out: Vec<Option<TableRow>> = vec![None; grid.n_cells()];
    for (line, r) in rows {
        let t = grid
            .year_index(r.year)
            .ok_or_else(|| Error::parse(path, line, format!("year {} not in grid", r.year)))?;
        if r.pixel_id >= grid.n_pixels() {
            return Err(Error::parse(path, line, format!("unknown pixel_id {}", r.pixel_id)));
        }
        let slot = &mut out[grid.cell(r.pixel_id, t)];
        if slot.replace(r).is_some() {
            return Err(Error::parse(path, line, "duplicate pixel-year"));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(c, r)| r.ok_or_else(|| Error::Validation(format!("{}: missing cell {c}", path.display()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn minimal(dir: &Path) {
        write(dir, "pixels.csv", "pixel_id,lon,lat,area_km2\n0,-74.0,42.0,400\n1,-73.758,42.0,400\n2,-73.516,42.0,350\n");
        write(dir, "checklists.csv", "lon,lat,year,duration_min\n-74.0,42.0,2001,10\n-74.0,42.0,2001,20\n");
        write(dir, "occurrences.csv", "lon,lat,year,day,present\n-74.0,42.0,2001,120,1\n-74.0,42.0,2001,200,0\n");
        write(dir, "bbs.csv", "route_id,year,count,stops\n7,2001,12,50\n");
        write(dir, "bbs_segments.csv", "route_id,pixel_id,weight\n7,0,0.6\n7,1,0.4\n");
        write(dir, "nao.csv", "year,value\n2001,0.5\n2002,-0.3\n");
    }

    #[test]
    fn loads_minimal_inputs() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        let (grid, routes, inputs) = load_inputs(&InputFiles::in_dir(dir.path()), 20.0).unwrap();
        assert_eq!(grid.n_pixels(), 3);
        assert_eq!(grid.years(), &[2001, 2002]);
        assert_eq!(routes.len(), 1);
        assert_eq!(routes[0].segments, vec![(0, 0.6), (1, 0.4)]);
        let (tables, report) = super::super::build_tables(&grid, &routes, &inputs).unwrap();
        assert_eq!(report.checklists_accepted, 2);
        assert_eq!(tables.n_ckl[0], Some(2));
        assert_eq!(tables.median_duration[0], Some(15.0));
        assert_eq!(tables.n_spc[0], Some(1));
        assert_eq!(tables.bbs[0].count, 12);
        assert_eq!(tables.nao, vec![0.5, -0.3]);
    }

    #[test]
    fn weight_sum_error_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        write(dir.path(), "bbs_segments.csv", "route_id,pixel_id,weight\n7,0,0.6\n7,1,0.5\n");
        let msg = load_inputs(&InputFiles::in_dir(dir.path()), 20.0).unwrap_err().to_string();
        assert!(msg.contains("bbs_segments.csv:3:") && msg.contains("weights sum 1.1"), "{msg}");
    }

    #[test]
    fn schema_errors_name_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        write(dir.path(), "pixels.csv", "pixel_id,lon,lat,area_km2\n0,-74.0,42.0,400\n1,abc,42.0,400\n");
        let msg = load_inputs(&InputFiles::in_dir(dir.path()), 20.0).unwrap_err().to_string();
        assert!(msg.contains("pixels.csv:3:"), "{msg}");

        write(dir.path(), "pixels.csv", "pixel_id,lon,area_km2\n0,-74.0,400\n");
        let err = load_inputs(&InputFiles::in_dir(dir.path()), 20.0).unwrap_err();
        assert!(err.to_string().contains("pixels.csv:2:") && err.to_string().contains("lat"), "{err}");
        assert!(err.is_validation());

        write(dir.path(), "pixels.csv", "pixel_id,lon,lat,area_km2\n0,-74.0,42.0,400\n0,-73.0,42.0,400\n");
        let msg = load_inputs(&InputFiles::in_dir(dir.path()), 20.0).unwrap_err().to_string();
        assert!(msg.contains("pixels.csv:3:") && msg.contains("duplicate pixel_id 0"), "{msg}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_inputs(&InputFiles::in_dir(dir.path()), 20.0).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn inputs_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        let (_, _, inputs) = load_inputs(&InputFiles::in_dir(dir.path()), 20.0).unwrap();
        let out = tempfile::tempdir().unwrap();
        let files = write_inputs(out.path(), &inputs).unwrap();
        let (_, _, again) = load_inputs(&files, 20.0).unwrap();
        assert_eq!(inputs, again);
    }

    #[test]
    fn tables_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        let (grid, routes, inputs) = load_inputs(&InputFiles::in_dir(dir.path()), 20.0).unwrap();
        let (tables, _) = super::super::build_tables(&grid, &routes, &inputs).unwrap();
        let path = dir.path().join("tables.csv");
        write_tables_csv(&path, &grid, &tables).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("pixel_id,year,n_ckl,median_duration,n_spc,z\n"));
        assert!(text.contains("\n1,2001,0,,,\n"), "{text}");
        let rows = read_tables_csv(&path, &grid).unwrap();
        for (c, r) in rows.iter().enumerate() {
            assert_eq!(r.n_ckl, tables.n_ckl[c]);
            assert_eq!(r.median_duration, tables.median_duration[c]);
            assert_eq!(r.n_spc, tables.n_spc[c]);
            assert_eq!(r.z, tables.z[c]);
        }
    }
}

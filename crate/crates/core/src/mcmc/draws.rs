//! Thinned posterior states and their binary frame.
//!
//! `draws.bin` layout, all little-endian:
//! magic `ARRDRAWS`, `u32` version, `u64` D, `u64` T, `u32` field count and
//! one `u8` id per field, `u32` scalar count, `u32` hyper count, `u64` draw
//! count, then per draw the fields in id order, the scalars and the
//! `(σ, κ)` pairs as contiguous `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::model::{Field, LatentState, Scalars};
use crate::vecchia::GpHyper;
use crate::{Error, Result};

pub const DRAWS_MAGIC: &[u8; 8] = b"ARRDRAWS";
pub const DRAWS_VERSION: u32 = 1;
const N_SCALARS: u32 = 12;
const N_HYPER: u32 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub n_pixels: usize,
    pub n_years: usize,
    pub draws: Vec<LatentState>,
}

impl PosteriorDraws {
    pub fn new(n_pixels: usize, n_years: usize) -> Self {
        PosteriorDraws { n_pixels, n_years, draws: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Values of one field entry across draws.
    pub fn field_series(&self, f: Field, i: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.field(f)[i]).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e| Error::Io { file: path.to_path_buf(), source: e };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_to(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(DRAWS_MAGIC)?;
        w.write_all(&DRAWS_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_pixels as u64).to_le_bytes())?;
        w.write_all(&(self.n_years as u64).to_le_bytes())?;
        w.write_all(&(Field::ALL.len() as u32).to_le_bytes())?;
        for f in Field::ALL {
            w.write_all(&[f.index() as u8])?;
        }
        w.write_all(&N_SCALARS.to_le_bytes())?;
        w.write_all(&N_HYPER.to_le_bytes())?;
        w.write_all(&(self.draws.len() as u64).to_le_bytes())?;
        for d in &self.draws {
            for x in d.fields.iter().flatten() {
                w.write_all(&x.to_le_bytes())?;
            }
            for x in d.scalars.to_array() {
                w.write_all(&x.to_le_bytes())?;
            }
            for h in &d.hyper {
                w.write_all(&h.sigma.to_le_bytes())?;
                w.write_all(&h.kappa.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::Io { file: path.to_path_buf(), source: e })?;
        let mut r = BufReader::new(file);
        let bad = |m: String| Error::parse(path, 0, m);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic).map_err(|_| bad("file too short for a draws header".into()))?;
        if &magic != DRAWS_MAGIC {
            return Err(bad("not a draws file (bad magic)".into()));
        }
        let next_u32 = |r: &mut BufReader<File>| -> Result<u32> {
            let mut b = [0u8; 4];
            read_exact(r, &mut b).map_err(|_| bad("truncated header".into()))?;
            Ok(u32::from_le_bytes(b))
        };
        let version = next_u32(&mut r)?;
        if version != DRAWS_VERSION {
            return Err(bad(format!("unsupported draws version {version}")));
        }
        let n_pixels = read_u64(&mut r).map_err(|_| bad("truncated header".into()))? as usize;
        let n_years = read_u64(&mut r).map_err(|_| bad("truncated header".into()))? as usize;
        let n_fields = next_u32(&mut r)? as usize;
        let mut ids = vec![0u8; n_fields];
        read_exact(&mut r, &mut ids).map_err(|_| bad("truncated header".into()))?;
        let want: Vec<u8> = Field::ALL.iter().map(|f| f.index() as u8).collect();
        if ids != want {
            return Err(bad(format!("unexpected field ids {ids:?}")));
        }
        let (ns, nh) = (next_u32(&mut r)?, next_u32(&mut r)?);
        if ns != N_SCALARS || nh != N_HYPER {
            return Err(bad(format!("unexpected scalar/hyper counts {ns}/{nh}")));
        }
        let n_draws = read_u64(&mut r).map_err(|_| bad("truncated header".into()))? as usize;
        let mut out = PosteriorDraws::new(n_pixels, n_years);
        let per_draw = 4 * n_pixels + n_years + 22;
        let mut buf = vec![0u8; 8 * per_draw];
        for k in 0..n_draws {
            read_exact(&mut r, &mut buf).map_err(|_| bad(format!("truncated at draw {k} of {n_draws}")))?;
            let v: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let mut off = 0;
            let fields = Field::ALL.map(|f| {
                let len = if f.is_spatial() { n_pixels } else { n_years };
                let x = v[off..off + len].to_vec();
                off += len;
                x
            });
            let scalars = Scalars::from_array(v[off..off + 12].try_into().unwrap());
            off += 12;
            let hyper: [GpHyper; 5] = std::array::from_fn(|j| GpHyper { sigma: v[off + 2 * j], kappa: v[off + 2 * j + 1] });
            out.draws.push(LatentState { fields, scalars, hyper });
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|e| Error::Io { file: path.to_path_buf(), source: e })? != 0 {
            return Err(bad("trailing bytes after the last draw".into()));
        }
        Ok(out)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<()> {
    r.read_exact(buf)
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

//! Grid files (RMG, PGM, CSV) and the small CSV tables used around them.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rmegan_core::grid::{Grid, SparseSamples};
use rmegan_core::mbi::LdplParams;

use crate::error::{read_file, write_file, Error, Result};

pub const RMG_MAGIC: &[u8; 4] = b"RMG1";
const RMG_HEADER: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFormat {
    Rmg,
    Pgm,
    Csv,
}

impl GridFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        match ext.to_ascii_lowercase().as_str() {
            "rmg" => Ok(GridFormat::Rmg),
            "pgm" => Ok(GridFormat::Pgm),
            "csv" => Ok(GridFormat::Csv),
            _ => Err(Error::load(path, format!("unknown grid extension {ext:?}, expected rmg, pgm or csv"))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            GridFormat::Rmg => "rmg",
            GridFormat::Pgm => "pgm",
            GridFormat::Csv => "csv",
        }
    }

    pub fn encode(self, grid: &Grid) -> Result<Vec<u8>> {
        match self {
            GridFormat::Rmg => encode_rmg(grid),
            GridFormat::Pgm => encode_pgm(grid),
            GridFormat::Csv => encode_csv(grid),
        }
    }

    /// Parses `bytes`; `path` only labels errors.
    pub fn decode(self, bytes: &[u8], path: &Path) -> Result<Grid> {
        match self {
            GridFormat::Rmg => decode_rmg(bytes, path),
            GridFormat::Pgm => decode_pgm(bytes, path),
            GridFormat::Csv => decode_csv(bytes, path),
        }
    }
}

pub fn read_grid(path: &Path, format: GridFormat) -> Result<Grid> {
    format.decode(&read_file(path)?, path)
}

pub fn write_grid(path: &Path, grid: &Grid, format: GridFormat) -> Result<()> {
    write_file(path, &format.encode(grid)?)
}

/// Reads a grid, choosing the format from the file extension.
pub fn read_grid_auto(path: &Path) -> Result<Grid> {
    read_grid(path, GridFormat::from_path(path)?)
}

fn finite_check(grid: &Grid) -> Result<()> {
    match grid.values().iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(rmegan_core::Error::InvalidInput(format!(
            "non-finite value at ({}, {})",
            i / grid.width(),
            i % grid.width()
        ))
        .into()),
    }
}

pub fn encode_rmg(grid: &Grid) -> Result<Vec<u8>> {
    finite_check(grid)?;
    let mut out = Vec::with_capacity(RMG_HEADER + 4 * grid.len());
    out.extend_from_slice(RMG_MAGIC);
    for d in [grid.height(), grid.width()] {
        let d = u32::try_from(d).map_err(|_| rmegan_core::Error::InvalidInput(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in grid.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode_rmg(bytes: &[u8], path: &Path) -> Result<Grid> {
    if bytes.len() < 4 || &bytes[..4] != RMG_MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected \"RMG1\""));
    }
    if bytes.len() < RMG_HEADER {
        return Err(Error::format(path, bytes.len() as u64, "truncated header"));
    }
    let (h, w) = (u32_at(bytes, 4) as usize, u32_at(bytes, 8) as usize);
    if h == 0 || w == 0 {
        return Err(Error::format(path, if h == 0 { 4 } else { 8 }, "zero grid dimension"));
    }
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(RMG_HEADER))
        .ok_or_else(|| Error::format(path, 4, format!("dimensions {h}x{w} overflow")))?;
    if bytes.len() < expected {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated: {h}x{w} grid needs {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(path, expected as u64, format!("dimension mismatch: trailing bytes after {h}x{w} grid")));
    }
    let mut values = Vec::with_capacity(h * w);
    for (i, chunk) in bytes[RMG_HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::format(path, (RMG_HEADER + 4 * i) as u64, format!("non-finite value {v}")));
        }
        values.push(v as f64);
    }
    Ok(Grid::new(h, w, values)?)
}

/// 8-bit level of a normalized value.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode_pgm(grid: &Grid) -> Result<Vec<u8>> {
    grid.validate_normalized()?;
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(grid.values().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Header token scanner that skips whitespace and `#` comments.
struct PgmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmHeader<'_> {
    fn token(&mut self, path: &Path, what: &str) -> Result<(usize, u64)> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        let v = text
            .parse::<usize>()
            .map_err(|_| Error::format(path, start as u64, format!("expected {what}")))?;
        Ok((v, start as u64))
    }
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Grid> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(path, 0, "bad magic, expected binary PGM \"P5\""));
    }
    let mut hdr = PgmHeader { bytes, pos: 2 };
    let (w, w_at) = hdr.token(path, "width")?;
    let (h, h_at) = hdr.token(path, "height")?;
    let (maxval, m_at) = hdr.token(path, "maxval")?;
    if w == 0 {
        return Err(Error::format(path, w_at, "zero width"));
    }
    if h == 0 {
        return Err(Error::format(path, h_at, "zero height"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(Error::format(path, m_at, format!("maxval {maxval} unsupported, expected 1..=255")));
    }
    if !bytes.get(hdr.pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::format(path, hdr.pos as u64, "expected whitespace after maxval"));
    }
    let start = hdr.pos + 1;
    let data = &bytes[start..];
    if data.len() != w * h {
        return Err(Error::format(
            path,
            (start + data.len().min(w * h)) as u64,
            format!("dimension mismatch: {w}x{h} image needs {} pixel bytes, found {}", w * h, data.len()),
        ));
    }
    if let Some(i) = data.iter().position(|&b| b as usize > maxval) {
        return Err(Error::format(path, (start + i) as u64, format!("pixel {} exceeds maxval {maxval}", data[i])));
    }
    let scale = maxval as f64;
    Ok(Grid::new(h, w, data.iter().map(|&b| b as f64 / scale).collect())?)
}

pub fn encode_csv(grid: &Grid) -> Result<Vec<u8>> {
    finite_check(grid)?;
    let mut out = String::new();
    for row in grid.values().chunks(grid.width()) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out.into_bytes())
}

pub fn decode_csv(bytes: &[u8], path: &Path) -> Result<Grid> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(path, e.valid_up_to() as u64, "not UTF-8"))?;
    let mut width = None;
    let mut values = Vec::new();
    let mut offset = 0usize;
    let mut rows = 0;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        if body.trim().is_empty() {
            if offset == text.len() {
                break;
            }
            return Err(Error::format(path, line_start as u64, "empty row"));
        }
        let mut field_start = line_start;
        let mut n = 0;
        for field in body.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, field_start as u64, format!("not a number: {:?}", field.trim())))?;
            if !v.is_finite() {
                return Err(Error::format(path, field_start as u64, format!("non-finite value {v}")));
            }
            values.push(v);
            field_start += field.len() + 1;
            n += 1;
        }
        match width {
            None => width = Some(n),
            Some(w) if w != n => {
                return Err(Error::format(
                    path,
                    line_start as u64,
                    format!("dimension mismatch: row {rows} has {n} values, expected {w}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let w = width.ok_or_else(|| Error::format(path, 0, "no rows"))?;
    Ok(Grid::new(rows, w, values)?)
}

/// Parsed CSV rows with the byte offset each one starts at.
struct Table {
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(path: &Path, header: &[&str]) -> Result<Table> {
    let bytes = read_file(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(&bytes[..]);
    let found = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(Error::format(path, 0, format!("header must be {:?}, found {:?}", header.join(","), found.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let at = rec.position().map_or(0, |p| p.byte());
        rows.push((at, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let at = e.position().map_or(0, |p| p.byte());
    Error::format(path, at, e.to_string())
}

fn field<T: FromStr>(path: &Path, at: u64, row: &[String], i: usize, name: &str) -> Result<T> {
    row[i]
        .parse()
        .map_err(|_| Error::format(path, at, format!("column {name}: cannot parse {:?}", row[i])))
}

pub const SAMPLES_HEADER: [&str; 3] = ["row", "col", "psd"];

pub fn write_samples_csv(path: &Path, samples: &SparseSamples) -> Result<()> {
    let mut out = SAMPLES_HEADER.join(",");
    out.push('\n');
    for ((r, c), v) in samples.iter() {
        writeln!(out, "{r},{c},{v}").expect("writing to a String");
    }
    write_file(path, out.as_bytes())
}

pub fn read_samples_csv(path: &Path) -> Result<SparseSamples> {
    let table = read_table(path, &SAMPLES_HEADER)?;
    let (mut coords, mut psd) = (Vec::new(), Vec::new());
    for (at, row) in &table.rows {
        coords.push((field(path, *at, row, 0, "row")?, field(path, *at, row, 1, "col")?));
        let v: f64 = field(path, *at, row, 2, "psd")?;
        if !v.is_finite() {
            return Err(Error::format(path, *at, format!("non-finite psd {v}")));
        }
        psd.push(v);
    }
    Ok(SparseSamples::new(coords, psd)?)
}

pub const PARAMS_HEADER: [&str; 3] = ["k", "alpha", "theta"];

pub fn write_params_csv(path: &Path, params: &LdplParams) -> Result<()> {
    let mut out = PARAMS_HEADER.join(",");
    out.push('\n');
    for (k, (a, t)) in params.alpha.iter().zip(&params.theta).enumerate() {
        writeln!(out, "{k},{a},{t}").expect("writing to a String");
    }
    write_file(path, out.as_bytes())
}

pub fn read_params_csv(path: &Path) -> Result<LdplParams> {
    let table = read_table(path, &PARAMS_HEADER)?;
    let (mut alpha, mut theta) = (Vec::new(), Vec::new());
    for (i, (at, row)) in table.rows.iter().enumerate() {
        let k: usize = field(path, *at, row, 0, "k")?;
        if k != i {
            return Err(Error::format(path, *at, format!("expected k = {i}, found {k}")));
        }
        alpha.push(field(path, *at, row, 1, "alpha")?);
        theta.push(field(path, *at, row, 2, "theta")?);
    }
    Ok(LdplParams::new(alpha, theta)?)
}

/// Generic table reader for the dataset manifest files.
pub(crate) fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, Vec<String>)>> {
    Ok(read_table(path, header)?.rows)
}

pub(crate) fn parse_field<T: FromStr>(path: &Path, at: u64, row: &[String], i: usize, name: &str) -> Result<T> {
    field(path, at, row, i, name)
}

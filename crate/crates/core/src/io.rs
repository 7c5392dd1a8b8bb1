//! File formats: PFM and CSV depth, intrinsics, SWM1 weight maps, cuboid
//! and superquadric lists, JSON reports, OBJ meshes and recall CSVs.
//!
//! Every writer goes through [`write_atomic`], so readers never observe a
//! partially written file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Cuboid, Vec3};
use crate::metrics::Primitives;
use crate::sampling::{SamplingWeights, WeightRaster};
use crate::scene::DepthRaster;
use crate::superquadric::{SqEvalConfig, Superquadric};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthFormat {
    Pfm,
    Csv,
}

impl DepthFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match extension(path).as_deref() {
            Some("pfm") => Ok(DepthFormat::Pfm),
            Some("csv") => Ok(DepthFormat::Csv),
            _ => Err(Error::parse(
                path,
                "file name",
                "expected a .pfm or .csv depth map",
            )),
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| {
        Error::invalid(
            "output path",
            format!("{} has no file name", path.display()),
        )
    })?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

// PFM ----------------------------------------------------------------------

/// Reads one whitespace-delimited header token, returning it and the offset
/// just past the single whitespace byte that ends it.
fn pfm_token<'a>(path: &Path, bytes: &'a [u8], mut pos: usize) -> Result<(&'a str, usize, usize)> {
    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    let start = pos;
    while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    if start == pos || pos >= bytes.len() {
        return Err(Error::parse(
            path,
            format!("byte {start}"),
            "truncated header",
        ));
    }
    let token = std::str::from_utf8(&bytes[start..pos])
        .map_err(|_| Error::parse(path, format!("byte {start}"), "header is not ASCII"))?;
    Ok((token, start, pos + 1))
}

pub fn read_pfm(path: &Path) -> Result<DepthRaster> {
    let bytes = read_bytes(path)?;
    parse_pfm(path, &bytes)
}

fn parse_pfm(path: &Path, bytes: &[u8]) -> Result<DepthRaster> {
    let (magic, at, pos) = pfm_token(path, bytes, 0)?;
    if magic != "Pf" {
        let msg = if magic == "PF" {
            "colour PFM (PF) is not a depth map; expected Pf".to_string()
        } else {
            format!("bad magic {magic:?}, expected Pf")
        };
        return Err(Error::parse(path, format!("byte {at}"), msg));
    }
    let dim = |pos: usize, what: &str| -> Result<(usize, usize)> {
        let (tok, at, next) = pfm_token(path, bytes, pos)?;
        let v: usize = tok
            .parse()
            .map_err(|_| Error::parse(path, format!("byte {at}"), format!("bad {what} {tok:?}")))?;
        if v == 0 {
            return Err(Error::parse(
                path,
                format!("byte {at}"),
                format!("{what} is zero"),
            ));
        }
        Ok((v, next))
    };
    let (width, pos) = dim(pos, "width")?;
    let (height, pos) = dim(pos, "height")?;
    let (scale_tok, at, data) = pfm_token(path, bytes, pos)?;
    let scale: f64 = scale_tok.parse().map_err(|_| {
        Error::parse(
            path,
            format!("byte {at}"),
            format!("bad scale {scale_tok:?}"),
        )
    })?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(
            path,
            format!("byte {at}"),
            "scale must be finite and non-zero",
        ));
    }
    let little = scale < 0.0;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::parse(path, "header", "dimensions overflow"))?;
    let payload = &bytes[data..];
    if payload.len() != expected {
        return Err(Error::parse(
            path,
            format!("byte {data}"),
            format!(
                "expected {expected} payload bytes for {width}x{height}, found {}",
                payload.len()
            ),
        ));
    }
    let mut values = vec![0.0; width * height];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        if !v.is_finite() {
            return Err(Error::parse(
                path,
                format!("byte {}", data + 4 * k),
                "non-finite depth value",
            ));
        }
        // PFM stores the bottom row first.
        let row = height - 1 - k / width;
        values[row * width + k % width] = v as f64;
    }
    DepthRaster::new(height, width, values)
}

/// Little-endian PFM; depths are stored as `f32`.
pub fn pfm_bytes(depth: &DepthRaster) -> Vec<u8> {
    let (h, w) = (depth.height(), depth.width());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for row in (0..h).rev() {
        for col in 0..w {
            out.extend_from_slice(&(depth.get(row, col) as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(depth: &DepthRaster, path: &Path) -> Result<()> {
    write_atomic(path, &pfm_bytes(depth))
}

// CSV depth ----------------------------------------------------------------

/// One raster row per line, comma separated, top row first.
pub fn read_depth_csv(path: &Path) -> Result<DepthRaster> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if width.is_some_and(|w| w != record.len()) {
            return Err(Error::parse(
                path,
                format!("line {line}"),
                format!(
                    "expected {} columns, found {}",
                    width.unwrap_or(0),
                    record.len()
                ),
            ));
        }
        width = Some(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::parse(
                    path,
                    format!("line {line}, column {}", col + 1),
                    format!("bad depth {field:?}"),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    format!("line {line}, column {}", col + 1),
                    "non-finite depth value",
                ));
            }
            values.push(v);
        }
        height += 1;
    }
    let Some(width) = width else {
        return Err(Error::parse(path, "line 1", "no depth rows"));
    };
    DepthRaster::new(height, width, values)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let location = e
        .position()
        .map_or_else(|| "file".to_string(), |p| format!("line {}", p.line()));
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, location, format!("{other:?}")),
    }
}

pub fn write_depth_csv(depth: &DepthRaster, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in 0..depth.height() {
        let line: Vec<String> = (0..depth.width())
            .map(|c| format!("{}", depth.get(row, c)))
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_depth(path: &Path, format: DepthFormat) -> Result<DepthRaster> {
    match format {
        DepthFormat::Pfm => read_pfm(path),
        DepthFormat::Csv => read_depth_csv(path),
    }
}

// Intrinsics ---------------------------------------------------------------

const INTRINSIC_FIELDS: [&str; 4] = ["fx", "fy", "cx", "cy"];

/// Lines that are blank or start with `#` are skipped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// `fx fy cx cy` on one line, or the same fields as `key=value` pairs.
pub fn parse_intrinsics(path: &Path, text: &str) -> Result<CameraModel> {
    let mut lines = content_lines(text);
    let Some((line, body)) = lines.next() else {
        return Err(Error::parse(path, "line 1", "missing field fx"));
    };
    if let Some((extra, _)) = lines.next() {
        return Err(Error::parse(
            path,
            format!("line {extra}"),
            "unexpected extra line",
        ));
    }
    let loc = format!("line {line}");
    let tokens: Vec<&str> = body.split_whitespace().collect();
    let mut values = [None; 4];
    if tokens.iter().any(|t| t.contains('=')) {
        for tok in &tokens {
            let (key, val) = tok.split_once('=').ok_or_else(|| {
                Error::parse(path, &loc, format!("expected key=value, found {tok:?}"))
            })?;
            let k = INTRINSIC_FIELDS
                .iter()
                .position(|f| *f == key)
                .ok_or_else(|| Error::parse(path, &loc, format!("unknown field {key:?}")))?;
            if values[k].is_some() {
                return Err(Error::parse(path, &loc, format!("duplicate field {key}")));
            }
            values[k] = Some(parse_number(path, &loc, INTRINSIC_FIELDS[k], val)?);
        }
    } else {
        if tokens.len() > 4 {
            return Err(Error::parse(
                path,
                &loc,
                format!("expected 4 fields, found {}", tokens.len()),
            ));
        }
        for (k, tok) in tokens.iter().enumerate() {
            values[k] = Some(parse_number(path, &loc, INTRINSIC_FIELDS[k], tok)?);
        }
    }
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = values[k].ok_or_else(|| {
            Error::parse(path, &loc, format!("missing field {}", INTRINSIC_FIELDS[k]))
        })?;
    }
    CameraModel::new(out[0], out[1], out[2], out[3])
}

pub fn load_intrinsics(path: &Path) -> Result<CameraModel> {
    parse_intrinsics(path, &read_text(path)?)
}

pub fn write_intrinsics(camera: &CameraModel, path: &Path) -> Result<()> {
    let text = format!("{} {} {} {}\n", camera.fx, camera.fy, camera.cx, camera.cy);
    write_atomic(path, text.as_bytes())
}

fn parse_number(path: &Path, loc: &str, what: &str, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(path, loc, format!("bad {what} {tok:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, loc, format!("{what} is not finite")));
    }
    Ok(v)
}

// SWM1 weights -------------------------------------------------------------

const SWM_MAGIC: &[u8; 4] = b"SWM1";

fn read_u32(path: &Path, bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(path, format!("byte {at}"), "truncated header"))
}

pub fn load_weights(path: &Path) -> Result<SamplingWeights> {
    let bytes = read_bytes(path)?;
    parse_weights(path, &bytes)
}

fn parse_weights(path: &Path, bytes: &[u8]) -> Result<SamplingWeights> {
    if bytes.get(..4) != Some(SWM_MAGIC.as_slice()) {
        return Err(Error::parse(path, "byte 0", "bad magic, expected SWM1"));
    }
    let h = read_u32(path, bytes, 4)? as usize;
    let w = read_u32(path, bytes, 8)? as usize;
    let q = read_u32(path, bytes, 12)? as usize;
    if h == 0 || w == 0 || q == 0 {
        return Err(Error::parse(
            path,
            "byte 4",
            "height, width and Q must be positive",
        ));
    }
    let floats = q
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .and_then(|n| n.checked_add(q))
        .ok_or_else(|| Error::parse(path, "byte 4", "dimensions overflow"))?;
    let expected = 16 + 4 * floats;
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            "byte 16",
            format!(
                "expected {expected} bytes for {q}x{h}x{w}, found {}",
                bytes.len()
            ),
        ));
    }
    let mut values = Vec::with_capacity(floats);
    for k in 0..floats {
        let at = 16 + 4 * k;
        let v = f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
        if !v.is_finite() {
            return Err(Error::parse(
                path,
                format!("byte {at}"),
                "non-finite weight",
            ));
        }
        values.push(v as f64);
    }
    let cell = h * w;
    let sets = (0..q)
        .map(|s| WeightRaster::new(h, w, values[s * cell..(s + 1) * cell].to_vec()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::parse(path, "payload", e.to_string()))?;
    let selection = values[q * cell..].to_vec();
    SamplingWeights::new(sets, selection).map_err(|e| Error::parse(path, "payload", e.to_string()))
}

pub fn weights_bytes(weights: &SamplingWeights) -> Vec<u8> {
    let first = &weights.sets()[0];
    let mut out = SWM_MAGIC.to_vec();
    for v in [first.height(), first.width(), weights.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for set in weights.sets() {
        for v in set.values() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    for q in weights.selection() {
        out.extend_from_slice(&(*q as f32).to_le_bytes());
    }
    out
}

pub fn write_weights(weights: &SamplingWeights, path: &Path) -> Result<()> {
    write_atomic(path, &weights_bytes(weights))
}

// Primitive lists ----------------------------------------------------------

fn parse_rows<const N: usize>(path: &Path, text: &str) -> Result<Vec<(usize, [f64; N])>> {
    content_lines(text)
        .map(|(line, body)| {
            let loc = format!("line {line}");
            let tokens: Vec<&str> = body.split_whitespace().collect();
            if tokens.len() != N {
                return Err(Error::parse(
                    path,
                    &loc,
                    format!("expected {N} numbers, found {}", tokens.len()),
                ));
            }
            let mut row = [0.0; N];
            for (k, tok) in tokens.iter().enumerate() {
                row[k] = parse_number(path, &loc, "value", tok)?;
            }
            Ok((line, row))
        })
        .collect()
}

/// `.cub`: one cuboid per line as `ax ay az rx ry rz tx ty tz`.
pub fn parse_cuboids(path: &Path, text: &str) -> Result<Vec<Cuboid>> {
    parse_rows::<9>(path, text)?
        .into_iter()
        .map(|(line, p)| {
            Cuboid::from_params(&p)
                .map_err(|e| Error::parse(path, format!("line {line}"), e.to_string()))
        })
        .collect()
}

pub fn load_cuboids(path: &Path) -> Result<Vec<Cuboid>> {
    parse_cuboids(path, &read_text(path)?)
}

pub fn cuboids_text(cuboids: &[Cuboid]) -> String {
    let mut out = String::from("# ax ay az rx ry rz tx ty tz\n");
    for c in cuboids {
        let p = c.params();
        let fields: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", fields.join(" "));
    }
    out
}

pub fn write_cuboids(cuboids: &[Cuboid], path: &Path) -> Result<()> {
    write_atomic(path, cuboids_text(cuboids).as_bytes())
}

/// `.sq`: one superquadric per line as `eps1 eps2 ax ay az rx ry rz tx ty tz`.
pub fn parse_superquadrics(path: &Path, text: &str) -> Result<Vec<Superquadric>> {
    parse_rows::<11>(path, text)?
        .into_iter()
        .map(|(line, p)| {
            let v = |i: usize| Vec3::new(p[i], p[i + 1], p[i + 2]);
            Superquadric::new(p[0], p[1], v(2), v(5), v(8))
                .map_err(|e| Error::parse(path, format!("line {line}"), e.to_string()))
        })
        .collect()
}

pub fn load_superquadrics(path: &Path) -> Result<Vec<Superquadric>> {
    parse_superquadrics(path, &read_text(path)?)
}

/// Cuboids or superquadrics, chosen by extension (`.cub` or `.sq`).
pub fn load_primitives(path: &Path, sq_config: SqEvalConfig) -> Result<Primitives> {
    match extension(path).as_deref() {
        Some("cub") => Ok(Primitives::Cuboids(load_cuboids(path)?)),
        Some("sq") => Ok(Primitives::Superquadrics(
            load_superquadrics(path)?,
            sq_config,
        )),
        _ => Err(Error::parse(
            path,
            "file name",
            "expected a .cub or .sq primitives file",
        )),
    }
}

// Reports and exports ------------------------------------------------------

pub fn report_json<T: Serialize>(report: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Numerical(format!("report serialisation: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn export_report<T: Serialize>(report: &T, path: &Path) -> Result<()> {
    write_atomic(path, report_json(report)?.as_bytes())
}

/// Two columns, `threshold,recall`, with a header row.
pub fn export_recall_csv(curve: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::parse(path, "record", e.to_string());
    writer
        .write_record(["threshold", "recall"])
        .map_err(io_err)?;
    for (t, r) in curve {
        writer
            .write_record([t.to_string(), r.to_string()])
            .map_err(io_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::parse(path, "record", e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Outward-wound triangles over the corner numbering of [`Cuboid::corners`].
fn box_triangles() -> [[usize; 3]; 12] {
    let mut tris = [[0; 3]; 12];
    for (f, (k, positive)) in (0..3).flat_map(|k| [(k, true), (k, false)]).enumerate() {
        let (u, v) = ((k + 1) % 3, (k + 2) % 3);
        let base = if positive { 1 << k } else { 0 };
        let corner = |su: usize, sv: usize| base | su << u | sv << v;
        // Counter-clockwise about +k since u × v = k.
        let mut quad = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
        if !positive {
            quad.reverse();
        }
        tris[2 * f] = [quad[0], quad[1], quad[2]];
        tris[2 * f + 1] = [quad[0], quad[2], quad[3]];
    }
    tris
}

pub fn obj_text(cuboids: &[Cuboid]) -> String {
    let mut out = String::new();
    for (i, c) in cuboids.iter().enumerate() {
        let _ = writeln!(out, "o cuboid_{i}");
        for p in c.corners() {
            let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
        }
        let base = 8 * i + 1;
        for t in box_triangles() {
            let _ = writeln!(out, "f {} {} {}", base + t[0], base + t[1], base + t[2]);
        }
    }
    out
}

pub fn export_obj(cuboids: &[Cuboid], path: &Path) -> Result<()> {
    write_atomic(path, obj_text(cuboids).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::seeded_rng;
    use rand::Rng;

    fn p() -> &'static Path {
        Path::new("test")
    }

    #[test]
    fn pfm_round_trip_is_exact() {
        let mut rng = seeded_rng(4);
        let values: Vec<f64> = (0..6 * 7)
            .map(|_| (rng.random::<f32>() * 5.0) as f64)
            .collect();
        let raster = DepthRaster::new(6, 7, values).unwrap();
        let back = parse_pfm(p(), &pfm_bytes(&raster)).unwrap();
        assert_eq!(back, raster);
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        let raster = DepthRaster::new(2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = pfm_bytes(&raster);
        let data = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(data[..4].try_into().unwrap()), 2.0);
    }

    #[test]
    fn pfm_big_endian_is_accepted() {
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        let r = parse_pfm(p(), &bytes).unwrap();
        assert_eq!(r.values(), &[1.5, 2.5]);
    }

    #[test]
    fn pfm_errors_name_offsets() {
        let err = parse_pfm(p(), b"P6\n1 1\n-1.0\n0000").unwrap_err();
        assert!(err.to_string().contains("byte 0"), "{err}");
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        let header = bytes.len();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        let err = parse_pfm(p(), &bytes).unwrap_err();
        assert!(err.to_string().contains(&format!("byte {header}")), "{err}");
        let err = parse_pfm(p(), b"Pf\n2 2\n-1.0\n0000").unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
    }

    #[test]
    fn intrinsics_forms() {
        let c = parse_intrinsics(p(), "# camera\n60 61 31.5 23.5\n").unwrap();
        assert_eq!((c.fx, c.fy, c.cx, c.cy), (60.0, 61.0, 31.5, 23.5));
        let c = parse_intrinsics(p(), "cy=2 fx=1 cx=4 fy=3").unwrap();
        assert_eq!((c.fx, c.fy, c.cx, c.cy), (1.0, 3.0, 4.0, 2.0));
    }

    #[test]
    fn intrinsics_missing_fy_names_field() {
        let err = parse_intrinsics(p(), "fx=60 cx=31.5 cy=23.5").unwrap_err();
        assert!(err.to_string().contains("missing field fy"), "{err}");
        let err = parse_intrinsics(p(), "60").unwrap_err();
        assert!(err.to_string().contains("missing field fy"), "{err}");
        assert!(parse_intrinsics(p(), "60 60 nan 1").is_err());
    }

    #[test]
    fn weights_round_trip() {
        let a = WeightRaster::new(2, 3, vec![0.0, 1.0, 0.5, 0.25, 2.0, 0.0]).unwrap();
        let b = WeightRaster::new(2, 3, vec![1.0; 6]).unwrap();
        let w = SamplingWeights::new(vec![a, b], vec![0.75, 0.25]).unwrap();
        let back = parse_weights(p(), &weights_bytes(&w)).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn weights_reject_bad_payloads() {
        let a = WeightRaster::new(1, 1, vec![1.0]).unwrap();
        let w = SamplingWeights::new(vec![a], vec![1.0]).unwrap();
        let good = weights_bytes(&w);
        assert!(parse_weights(p(), &good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"SWM2");
        assert!(parse_weights(p(), &bad).is_err());
        let mut bad = good.clone();
        let n = bad.len();
        bad[n - 4..].copy_from_slice(&0.5f32.to_le_bytes());
        assert!(parse_weights(p(), &bad).is_err());
        let mut bad = good;
        bad[16..20].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(parse_weights(p(), &bad).is_err());
    }

    #[test]
    fn cuboid_lists_round_trip() {
        let c = Cuboid::new(
            Vec3::new(0.5, 0.25, 1.0),
            Vec3::new(0.1, -0.2, 0.3),
            Vec3::new(1.0, 2.0, 3.0),
        )
        .unwrap();
        let back = parse_cuboids(p(), &cuboids_text(&[c, c])).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].params(), c.params());
        assert!(parse_cuboids(p(), "# nothing\n\n").unwrap().is_empty());
        let err = parse_cuboids(p(), "1 1 1 0 0 0 0 0\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert!(parse_cuboids(p(), "-1 1 1 0 0 0 0 0 3\n").is_err());
    }

    #[test]
    fn superquadric_lists_parse() {
        let sqs = parse_superquadrics(p(), "1 1 0.5 0.5 0.5 0 0 0 0 0 3\n").unwrap();
        assert_eq!(sqs.len(), 1);
        assert!(parse_superquadrics(p(), "3 1 0.5 0.5 0.5 0 0 0 0 0 3\n").is_err());
    }

    #[test]
    fn obj_counts() {
        let c = Cuboid::axis_aligned(Vec3::new(1.0, 1.0, 1.0), Vec3::zeros()).unwrap();
        let text = obj_text(&[c, c]);
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 16);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 24);
    }

    #[test]
    fn obj_triangles_face_outward() {
        let c = Cuboid::new(
            Vec3::new(0.3, 0.5, 0.7),
            Vec3::new(0.4, 0.1, -0.2),
            Vec3::new(1.0, 0.0, 2.0),
        )
        .unwrap();
        let corners = c.corners();
        for t in box_triangles() {
            let [a, b, d] = t.map(|i| corners[i]);
            let normal = (b - a).cross(&(d - a));
            let centroid = (a + b + d) / 3.0;
            assert!(normal.dot(&(centroid - c.translation())) > 0.0);
        }
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn depth_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let raster = DepthRaster::new(2, 3, vec![0.0, 1.5, 2.0, 3.25, 0.0, 1.0]).unwrap();
        write_depth_csv(&raster, &path).unwrap();
        assert_eq!(read_depth_csv(&path).unwrap(), raster);
        fs::write(&path, "1,2\n3\n").unwrap();
        let err = read_depth_csv(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        fs::write(&path, "1,inf\n").unwrap();
        assert!(read_depth_csv(&path).is_err());
    }
}

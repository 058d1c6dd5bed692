//! On-disk formats.
//!
//! * `OCCV1` local grids: one ASCII header line
//!   `OCCV1 <Dx> <Dy> <Dz> <resolution> <origin_x> <origin_y> <origin_z> <yaw>`
//!   followed by `Dx·Dy·Dz` little-endian `f32` values, x fastest.
//! * `OCCG1` global maps: header line `OCCG1 <resolution> <clamp_min> <clamp_max> <prior>`
//!   then one `<i> <j> <k> <log_odds> <provenance>` line per cell, in key order.
//!
//! Floats in headers use Rust's shortest round-trip formatting, so a save/load
//! cycle is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Cell, GlobalOccupancyMap, LocalGrid, Pose, Provenance, VoxelKey};
use crate::{Error, Result};

pub const GRID_MAGIC: &str = "OCCV1";
pub const MAP_MAGIC: &str = "OCCG1";

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Splits a header line off `bytes` and checks its magic. Magic strings share
/// a four-letter family prefix and a version digit; a known family with a
/// different version is a version mismatch, anything else a bad header.
pub(crate) fn split_header<'a>(bytes: &'a [u8], magic: &str) -> Result<(Vec<&'a str>, &'a [u8])> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("no header line".into()))?;
    let line = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::MalformedHeader("header is not utf-8".into()))?;
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    let found = *fields
        .first()
        .ok_or_else(|| Error::MalformedHeader("empty header".into()))?;
    if found != magic {
        let family = &magic[..magic.len() - 1];
        if found.len() == magic.len() && found.starts_with(family) {
            return Err(Error::VersionMismatch {
                expected: magic.into(),
                found: found.into(),
            });
        }
        return Err(Error::MalformedHeader(format!("bad magic '{found}'")));
    }
    Ok((fields, &bytes[nl + 1..]))
}

pub(crate) fn parse_field<T: std::str::FromStr>(fields: &[&str], i: usize, what: &str) -> Result<T> {
    fields
        .get(i)
        .ok_or_else(|| Error::MalformedHeader(format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("unparsable {what} '{}'", fields[i])))
}

pub fn grid_header(grid: &LocalGrid) -> String {
    let [dx, dy, dz] = grid.dims();
    let p = grid.origin_pose();
    format!(
        "{GRID_MAGIC} {dx} {dy} {dz} {} {} {} {} {}\n",
        grid.resolution(),
        p.x,
        p.y,
        p.z,
        p.yaw
    )
}

pub fn encode_grid(grid: &LocalGrid) -> Vec<u8> {
    let header = grid_header(grid);
    let mut out = Vec::with_capacity(header.len() + grid.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for v in grid.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<LocalGrid> {
    let (fields, payload) = split_header(bytes, GRID_MAGIC)?;
    if fields.len() != 9 {
        return Err(Error::MalformedHeader(format!("expected 9 header fields, found {}", fields.len())));
    }
    let dims = [
        parse_field::<usize>(&fields, 1, "Dx")?,
        parse_field::<usize>(&fields, 2, "Dy")?,
        parse_field::<usize>(&fields, 3, "Dz")?,
    ];
    let resolution: f64 = parse_field(&fields, 4, "resolution")?;
    let pose = Pose::new(
        parse_field(&fields, 5, "origin_x")?,
        parse_field(&fields, 6, "origin_y")?,
        parse_field(&fields, 7, "origin_z")?,
        parse_field(&fields, 8, "yaw")?,
    );
    let n = dims
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or_else(|| Error::MalformedHeader("dims overflow".into()))?;
    let expected = n * 4;
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    LocalGrid::from_values(dims, resolution, pose, values)
}

pub fn save_grid(path: &Path, grid: &LocalGrid) -> Result<()> {
    write_atomic(path, &encode_grid(grid))
}

pub fn load_grid(path: &Path) -> Result<LocalGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes)
}

pub fn encode_map(map: &GlobalOccupancyMap) -> String {
    let mut out = format!(
        "{MAP_MAGIC} {} {} {} {}\n",
        map.resolution(),
        map.clamp_min(),
        map.clamp_max(),
        map.prior()
    );
    for (k, c) in map.sorted_cells() {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            k.i,
            k.j,
            k.k,
            c.log_odds,
            c.provenance.as_str()
        ));
    }
    out
}

pub fn decode_map(bytes: &[u8]) -> Result<GlobalOccupancyMap> {
    let (fields, body) = split_header(bytes, MAP_MAGIC)?;
    if fields.len() != 5 {
        return Err(Error::MalformedHeader(format!("expected 5 header fields, found {}", fields.len())));
    }
    let mut map = GlobalOccupancyMap::new(
        parse_field(&fields, 1, "resolution")?,
        parse_field(&fields, 2, "clamp_min")?,
        parse_field(&fields, 3, "clamp_max")?,
        parse_field(&fields, 4, "prior")?,
    )?;
    let body = std::str::from_utf8(body).map_err(|_| Error::MalformedHeader("body is not utf-8".into()))?;
    for (lineno, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_ascii_whitespace().collect();
        if f.len() != 5 {
            return Err(Error::Truncated {
                expected: 5,
                found: f.len(),
            });
        }
        let bad = |what: &str| Error::MalformedHeader(format!("line {}: bad {what}", lineno + 2));
        let key = VoxelKey::new(
            f[0].parse().map_err(|_| bad("i"))?,
            f[1].parse().map_err(|_| bad("j"))?,
            f[2].parse().map_err(|_| bad("k"))?,
        );
        let log_odds: f64 = f[3].parse().map_err(|_| bad("log_odds"))?;
        let provenance = match f[4] {
            "sensed" => Provenance::Sensed,
            "predicted" => Provenance::Predicted,
            _ => return Err(bad("provenance")),
        };
        map.set_cell(key, Cell { log_odds, provenance });
    }
    Ok(map)
}

pub fn save_map(path: &Path, map: &GlobalOccupancyMap) -> Result<()> {
    write_atomic(path, encode_map(map).as_bytes())
}

pub fn load_map(path: &Path) -> Result<GlobalOccupancyMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_map(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_magic_is_a_header_error() {
        let mut bytes = encode_grid(&LocalGrid::filled([2, 2, 2], 0.2, Pose::new(0.0, 0.0, 0.0, 0.0), 0.5).unwrap());
        bytes[0] = b'X';
        assert!(matches!(decode_grid(&bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn other_version_is_a_version_error() {
        let mut bytes = encode_grid(&LocalGrid::filled([2, 2, 2], 0.2, Pose::new(0.0, 0.0, 0.0, 0.0), 0.5).unwrap());
        bytes[4] = b'2';
        assert!(matches!(decode_grid(&bytes), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn short_payload_is_truncated() {
        let bytes = encode_grid(&LocalGrid::filled([2, 2, 2], 0.2, Pose::new(0.0, 0.0, 0.0, 0.0), 0.5).unwrap());
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_grid(cut), Err(Error::Truncated { expected: 32, found: 29 })));
    }
}

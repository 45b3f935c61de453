//! Binary tile files.
//!
//! Layout, all little-endian:
//! `"LMAP"`, version `u16`, resolution `f64`, dimension `u32`, tile index
//! `i32 x 2`, origin `f64 x 2`, then `dimension^2` records of
//! `(count u32, i_mean f32, i_var f32, a_mean f32, a_var f32)` in row-major
//! order (x fastest), then a CRC32 of every preceding byte.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{GridCellStats, LidarMap};
use crate::error::{Error, Result};

pub const TILE_MAGIC: &[u8; 4] = b"LMAP";
pub const TILE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8 + 4 + 8 + 16;
const RECORD_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct MapTile {
    pub index: (i32, i32),
    pub resolution: f64,
    pub dimension: u32,
    /// Projected coordinate of the tile's lower-left corner.
    pub origin: (f64, f64),
    /// Row-major, `cells[j * dimension + i]`.
    pub cells: Vec<GridCellStats>,
}

impl MapTile {
    pub fn empty(index: (i32, i32), resolution: f64, dimension: u32) -> Self {
        let span = dimension as f64 * resolution;
        Self {
            index,
            resolution,
            dimension,
            origin: (index.0 as f64 * span, index.1 as f64 * span),
            cells: vec![GridCellStats::EMPTY; (dimension as usize).pow(2)],
        }
    }

    /// World coordinate of the centre of local cell `(i, j)`.
    pub fn cell_center(&self, i: u32, j: u32) -> (f64, f64) {
        (
            self.origin.0 + self.resolution * (i as f64 + 0.5),
            self.origin.1 + self.resolution * (j as f64 + 0.5),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.cells.len() * RECORD_LEN + 4);
        buf.extend_from_slice(TILE_MAGIC);
        buf.extend_from_slice(&TILE_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.resolution.to_le_bytes());
        buf.extend_from_slice(&self.dimension.to_le_bytes());
        buf.extend_from_slice(&self.index.0.to_le_bytes());
        buf.extend_from_slice(&self.index.1.to_le_bytes());
        buf.extend_from_slice(&self.origin.0.to_le_bytes());
        buf.extend_from_slice(&self.origin.1.to_le_bytes());
        for c in &self.cells {
            buf.extend_from_slice(&c.count.to_le_bytes());
            buf.extend_from_slice(&c.intensity_mean.to_le_bytes());
            buf.extend_from_slice(&c.intensity_var.to_le_bytes());
            buf.extend_from_slice(&c.altitude_mean.to_le_bytes());
            buf.extend_from_slice(&c.altitude_var.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg);
        if bytes.len() < HEADER_LEN + 4 {
            return Err(bad("truncated header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let crc = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != crc {
            return Err(bad("crc mismatch"));
        }
        if &body[0..4] != TILE_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = u16::from_le_bytes(r.take::<2>());
        if version != TILE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let resolution = f64::from_le_bytes(r.take::<8>());
        let dimension = u32::from_le_bytes(r.take::<4>());
        let index = (i32::from_le_bytes(r.take::<4>()), i32::from_le_bytes(r.take::<4>()));
        let origin = (f64::from_le_bytes(r.take::<8>()), f64::from_le_bytes(r.take::<8>()));
        if !dimension.is_power_of_two() || !(resolution > 0.0) {
            return Err(bad("invalid resolution or dimension"));
        }
        let n = (dimension as usize).pow(2);
        if body.len() != HEADER_LEN + n * RECORD_LEN {
            return Err(bad("payload length does not match dimension"));
        }
        let mut cells = Vec::with_capacity(n);
        for _ in 0..n {
            cells.push(GridCellStats {
                count: u32::from_le_bytes(r.take::<4>()),
                intensity_mean: f32::from_le_bytes(r.take::<4>()),
                intensity_var: f32::from_le_bytes(r.take::<4>()),
                altitude_mean: f32::from_le_bytes(r.take::<4>()),
                altitude_var: f32::from_le_bytes(r.take::<4>()),
            });
        }
        Ok(Self {
            index,
            resolution,
            dimension,
            origin,
            cells,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
}

pub fn write_tile(tile: &MapTile, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&tile.to_bytes())?;
    Ok(())
}

pub fn read_tile(path: &Path) -> Result<MapTile> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    MapTile::from_bytes(&bytes, path)
}

fn tile_file_name(index: (i32, i32)) -> String {
    format!("tile_{}_{}.lmap", index.0, index.1)
}

/// Write every tile of `map` into `dir` (created if missing).
pub fn save_map(map: &LidarMap, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for tile in map.tiles() {
        write_tile(tile, &dir.join(tile_file_name(tile.index)))?;
    }
    Ok(())
}

/// Load all `*.lmap` tiles in `dir`.
pub fn load_map(dir: &Path) -> Result<LidarMap> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "lmap"))
        .collect();
    paths.sort();
    let mut map: Option<LidarMap> = None;
    for p in paths {
        let tile = read_tile(&p)?;
        let m = match map.as_mut() {
            Some(m) => m,
            None => map.insert(LidarMap::new(tile.resolution, tile.dimension)?),
        };
        m.insert_tile(tile)?;
    }
    map.ok_or_else(|| Error::format(dir, "no map tiles found"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tile() -> MapTile {
        let mut t = MapTile::empty((-2, 3), 0.125, 16);
        for (k, c) in t.cells.iter_mut().enumerate().filter(|(k, _)| k % 3 == 0) {
            *c = GridCellStats {
                count: k as u32 + 1,
                intensity_mean: (k % 255) as f32,
                intensity_var: 1.5 + k as f32,
                altitude_mean: -0.25 * k as f32,
                altitude_var: 0.0025,
            };
        }
        t
    }

    #[test]
    fn bytes_round_trip_is_exact() {
        let t = sample_tile();
        let bytes = t.to_bytes();
        let back = MapTile::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupted_payload_rejected() {
        let mut bytes = sample_tile().to_bytes();
        bytes[HEADER_LEN + 7] ^= 0x40;
        assert!(matches!(
            MapTile::from_bytes(&bytes, Path::new("mem")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn header_layout() {
        let bytes = sample_tile().to_bytes();
        assert_eq!(&bytes[0..4], b"LMAP");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes.len(), HEADER_LEN + 256 * RECORD_LEN + 4);
        assert_eq!(f64::from_le_bytes(bytes[6..14].try_into().unwrap()), 0.125);
    }

    #[test]
    fn origin_and_centers() {
        let t = MapTile::empty((1, -1), 0.5, 8);
        assert_eq!(t.origin, (4.0, -4.0));
        assert_eq!(t.cell_center(0, 0), (4.25, -3.75));
    }
}

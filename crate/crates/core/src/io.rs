//! On-disk formats: trajectory and sensor CSV files, the LiDAR scan
//! container and the dataset directory that ties them together.
//!
//! Angles in CSV files are degrees; everything else is SI.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnss::{GnssEpoch, SatObservation};
use crate::map::{load_map, save_map, LidarMap, LidarPoint, LocalProjection};
use crate::pipeline::{GnssArrival, NavRecord, ScanSource, SensorLog};
use crate::sim::{Dataset, LidarFrame};
use crate::sins::{attitude_from_euler, ImuSample, NavState};

pub const TRAJECTORY_HEADER: &str = "t,lon_deg,lat_deg,alt,ve,vn,vu,roll_deg,pitch_deg,yaw_deg,sigma_e,sigma_n,sigma_u";
const IMU_HEADER: &str = "t,wx,wy,wz,fx,fy,fz";
const FRAMES_HEADER: &str = "index,t,t_received";
const GNSS_HEADER: &str =
    "t,t_received,base_x,base_y,base_z,sat,sat_x,sat_y,sat_z,sd_range,sd_phase,wavelength,elevation";
pub const SCAN_MAGIC: [u8; 8] = *b"MSLSCAN1";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Rows of a CSV file with the expected header, split into numbers.
fn read_csv(path: &Path, header: &str) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    if first.trim() != header {
        return Err(Error::format(
            path,
            format!("expected header {header:?}, found {first:?}"),
        ));
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::format(path, format!("line {}: {e}", n + 2)))?;
        if row.len() != width {
            return Err(Error::format(
                path,
                format!("line {}: {} fields, expected {width}", n + 2, row.len()),
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, format!("line {}: non-finite value", n + 2)));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_trajectory(path: &Path, records: &[NavRecord]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.pos.x.to_degrees(),
            r.pos.y.to_degrees(),
            r.pos.z,
            r.vel.x,
            r.vel.y,
            r.vel.z,
            r.roll.to_degrees(),
            r.pitch.to_degrees(),
            r.yaw.to_degrees(),
            r.sigma.x,
            r.sigma.y,
            r.sigma.z
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<NavRecord>> {
    let rows = read_csv(path, TRAJECTORY_HEADER)?;
    Ok(rows
        .into_iter()
        .map(|v| NavRecord {
            t: v[0],
            pos: Vector3::new(v[1].to_radians(), v[2].to_radians(), v[3]),
            vel: Vector3::new(v[4], v[5], v[6]),
            roll: v[7].to_radians(),
            pitch: v[8].to_radians(),
            yaw: v[9].to_radians(),
            sigma: Vector3::new(v[10], v[11], v[12]),
        })
        .collect())
}

pub fn write_imu(path: &Path, samples: &[ImuSample]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{IMU_HEADER}")?;
    for s in samples {
        let (g, a) = (s.gyro, s.accel);
        writeln!(w, "{},{},{},{},{},{},{}", s.t, g.x, g.y, g.z, a.x, a.y, a.z)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>> {
    let rows = read_csv(path, IMU_HEADER)?;
    let s: Vec<ImuSample> = rows
        .into_iter()
        .map(|v| ImuSample::new(v[0], Vector3::new(v[1], v[2], v[3]), Vector3::new(v[4], v[5], v[6])))
        .collect();
    if s.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::format(path, "IMU timestamps not strictly increasing"));
    }
    Ok(s)
}

pub fn write_frames(path: &Path, frames: &[LidarFrame]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{FRAMES_HEADER}")?;
    for f in frames {
        writeln!(w, "{},{},{}", f.index, f.t, f.t_received)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<Vec<LidarFrame>> {
    Ok(read_csv(path, FRAMES_HEADER)?
        .into_iter()
        .map(|v| LidarFrame {
            index: v[0] as usize,
            t: v[1],
            t_received: v[2],
        })
        .collect())
}

pub fn write_gnss(path: &Path, epochs: &[GnssArrival]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{GNSS_HEADER}")?;
    for a in epochs {
        let e = &a.epoch;
        for s in &e.sats {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.t,
                a.t_received,
                e.base.x,
                e.base.y,
                e.base.z,
                s.id,
                s.pos.x,
                s.pos.y,
                s.pos.z,
                s.sd_range,
                s.sd_phase,
                s.wavelength,
                s.elevation
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Epochs are rebuilt from consecutive rows sharing a timestamp.
pub fn read_gnss(path: &Path) -> Result<Vec<GnssArrival>> {
    let mut out: Vec<GnssArrival> = Vec::new();
    for v in read_csv(path, GNSS_HEADER)? {
        let sat = SatObservation {
            id: v[5] as u32,
            pos: Vector3::new(v[6], v[7], v[8]),
            sd_range: v[9],
            sd_phase: v[10],
            wavelength: v[11],
            elevation: v[12],
        };
        match out.last_mut() {
            Some(a) if a.epoch.t == v[0] => a.epoch.sats.push(sat),
            _ => out.push(GnssArrival {
                t_received: v[1],
                epoch: GnssEpoch {
                    t: v[0],
                    base: Vector3::new(v[2], v[3], v[4]),
                    sats: vec![sat],
                },
            }),
        }
    }
    for a in &out {
        a.epoch
            .validate()
            .map_err(|e| Error::format(path, format!("epoch t={}: {e}", a.epoch.t)))?;
    }
    Ok(out)
}

/// Write scans as `magic, u32 count`, then per frame `u32 n`, `n` points of
/// four little-endian `f32` (x, y, z, intensity) and a CRC-32 of the points.
pub fn write_scans<I>(path: &Path, count: usize, scans: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<LidarPoint>>,
{
    let mut w = create(path)?;
    w.write_all(&SCAN_MAGIC)?;
    w.write_all(&(count as u32).to_le_bytes())?;
    let mut written = 0;
    let mut buf = Vec::new();
    for scan in scans {
        buf.clear();
        for p in &scan {
            for v in [p.x, p.y, p.z, p.intensity] {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        w.write_all(&(scan.len() as u32).to_le_bytes())?;
        w.write_all(&buf)?;
        w.write_all(&crc32fast::hash(&buf).to_le_bytes())?;
        written += 1;
    }
    if written != count {
        return Err(Error::InvalidArgument(format!(
            "{written} scans written, {count} announced"
        )));
    }
    w.flush()?;
    Ok(())
}

/// Scan container opened for random access.
#[derive(Debug, Clone)]
pub struct ScanFile {
    path: PathBuf,
    /// Byte offset of each frame's point count.
    offsets: Vec<u64>,
}

impl ScanFile {
    pub fn open(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let bad = |m: String| Error::format(path, m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
        if magic != SCAN_MAGIC {
            return Err(bad("not a scan file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated header".into()))?;
        let count = u32::from_le_bytes(word) as usize;
        let len = fs::metadata(path)?.len();
        let mut offsets = Vec::with_capacity(count);
        let mut pos = 12u64;
        for k in 0..count {
            r.seek(SeekFrom::Start(pos))?;
            r.read_exact(&mut word)
                .map_err(|_| bad(format!("frame {k} truncated")))?;
            let n = u32::from_le_bytes(word) as u64;
            offsets.push(pos);
            pos += 4 + 16 * n + 4;
            if pos > len {
                return Err(bad(format!("frame {k} truncated")));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn read(&self, k: usize) -> Result<Vec<LidarPoint>> {
        let off = *self
            .offsets
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("scan {k} of {}", self.offsets.len())))?;
        let mut f = File::open(&self.path)?;
        f.seek(SeekFrom::Start(off))?;
        let mut word = [0u8; 4];
        f.read_exact(&mut word)?;
        let n = u32::from_le_bytes(word) as usize;
        let mut buf = vec![0u8; 16 * n];
        f.read_exact(&mut buf)?;
        f.read_exact(&mut word)?;
        if crc32fast::hash(&buf) != u32::from_le_bytes(word) {
            return Err(Error::format(&self.path, format!("frame {k}: checksum mismatch")));
        }
        let val = |b: &[u8]| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        let pts: Vec<LidarPoint> = buf
            .chunks_exact(16)
            .map(|c| LidarPoint::new(val(&c[0..4]), val(&c[4..8]), val(&c[8..12]), val(&c[12..16])))
            .collect();
        if pts.iter().any(|p| !p.is_finite()) {
            return Err(Error::format(&self.path, format!("frame {k}: non-finite point")));
        }
        Ok(pts)
    }
}

impl ScanSource for ScanFile {
    fn scan(&self, k: usize) -> Result<Vec<LidarPoint>> {
        self.read(k)
    }
}

/// Initial navigation state as stored on disk; angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub t: f64,
    pub lon: f64,
    pub lat: f64,
    pub alt: f64,
    pub vel: [f64; 3],
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl InitialState {
    pub fn from_nav(n: &NavState) -> Self {
        let (roll, pitch, yaw) = crate::sins::euler_of(&n.dcm());
        Self {
            t: n.t,
            lon: n.pos.x,
            lat: n.pos.y,
            alt: n.pos.z,
            vel: [n.vel.x, n.vel.y, n.vel.z],
            roll,
            pitch,
            yaw,
        }
    }

    pub fn nav(&self) -> NavState {
        NavState::new(
            self.t,
            Vector3::new(self.lon, self.lat, self.alt),
            Vector3::from(self.vel),
            attitude_from_euler(self.roll, self.pitch, self.yaw),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub seed: u64,
    pub projection: LocalProjection,
    pub initial: InitialState,
}

/// File names inside a dataset directory.
pub mod layout {
    pub const INFO: &str = "dataset.toml";
    pub const SCENARIO: &str = "scenario.toml";
    pub const IMU: &str = "imu.csv";
    pub const FRAMES: &str = "lidar_frames.csv";
    pub const SCANS: &str = "lidar_scans.bin";
    pub const GNSS: &str = "gnss.csv";
    pub const TRUTH: &str = "truth.csv";
    pub const MAP: &str = "map";
}

/// Truth at every IMU epoch as trajectory records with zero sigma.
pub fn truth_records(d: &Dataset) -> Vec<NavRecord> {
    d.truth
        .iter()
        .map(|s| NavRecord {
            t: s.t,
            pos: s.pos,
            vel: s.vel,
            roll: s.pose.roll,
            pitch: s.pose.pitch,
            yaw: s.pose.heading,
            sigma: Vector3::zeros(),
        })
        .collect()
}

/// Write a simulated drive; the survey map goes to `map/` unless a map is
/// supplied separately.
pub fn write_dataset(dir: &Path, d: &Dataset, map: Option<&LidarMap>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let log = SensorLog::from_dataset(d);
    let info = DatasetInfo {
        name: d.scenario.name.clone(),
        seed: d.scenario.seed,
        projection: log.projection,
        initial: InitialState::from_nav(&log.initial),
    };
    let text = toml::to_string_pretty(&info).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join(layout::INFO), text)?;
    fs::write(dir.join(layout::SCENARIO), d.scenario.to_toml()?)?;
    write_imu(&dir.join(layout::IMU), &log.imu)?;
    write_frames(&dir.join(layout::FRAMES), &log.lidar)?;
    write_scans(
        &dir.join(layout::SCANS),
        d.lidar.len(),
        (0..d.lidar.len()).map(|k| d.scan(k)),
    )?;
    write_gnss(&dir.join(layout::GNSS), &log.gnss)?;
    write_trajectory(&dir.join(layout::TRUTH), &truth_records(d))?;
    match map {
        Some(m) => save_map(m, &dir.join(layout::MAP))?,
        None => save_map(&d.survey_map()?, &dir.join(layout::MAP))?,
    }
    Ok(())
}

/// A dataset directory opened for replay.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dir: PathBuf,
    pub info: DatasetInfo,
    pub log: SensorLog,
    pub scans: ScanFile,
}

impl LoadedDataset {
    pub fn open(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::InvalidArgument(format!(
                "{} is not a dataset directory",
                dir.display()
            )));
        }
        let info_path = dir.join(layout::INFO);
        let text = fs::read_to_string(&info_path)?;
        let info: DatasetInfo = toml::from_str(&text).map_err(|e| Error::format(&info_path, e.to_string()))?;
        let lidar = read_frames(&dir.join(layout::FRAMES))?;
        let scans = ScanFile::open(&dir.join(layout::SCANS))?;
        if scans.len() != lidar.len() {
            return Err(Error::format(
                dir.join(layout::SCANS),
                format!("{} scans for {} frames", scans.len(), lidar.len()),
            ));
        }
        let log = SensorLog {
            initial: info.initial.nav(),
            projection: info.projection,
            imu: read_imu(&dir.join(layout::IMU))?,
            lidar,
            gnss: read_gnss(&dir.join(layout::GNSS))?,
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            info,
            log,
            scans,
        })
    }

    /// The map stored alongside the data, if any.
    pub fn map(&self) -> Result<Option<LidarMap>> {
        let p = self.dir.join(layout::MAP);
        if p.is_dir() {
            Ok(Some(load_map(&p)?))
        } else {
            Ok(None)
        }
    }

    pub fn truth(&self) -> Result<Vec<NavRecord>> {
        read_trajectory(&self.dir.join(layout::TRUTH))
    }
}

/// Per-epoch error table for plotting.
pub fn write_epoch_errors(path: &Path, report: &crate::eval::EvaluationReport) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,longitudinal,lateral,horizontal")?;
    for e in &report.epochs {
        writeln!(w, "{},{},{},{}", e.t, e.longitudinal, e.lateral, e.horizontal)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<NavRecord> {
        (0..20)
            .map(|k| {
                let t = k as f64 * 0.1;
                NavRecord {
                    t,
                    pos: Vector3::new(2.03 + 1e-7 * t, 0.69 - 3e-8 * t, 50.0 + 0.01 * t),
                    vel: Vector3::new(1.0 / 3.0, -2.5, 0.01),
                    roll: 0.01,
                    pitch: -0.02,
                    yaw: 1.234_567_891,
                    sigma: Vector3::new(0.05, 0.06, 0.2),
                }
            })
            .collect()
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.csv");
        let r = records();
        write_trajectory(&p, &r).unwrap();
        let back = read_trajectory(&p).unwrap();
        assert_eq!(back.len(), r.len());
        for (a, b) in r.iter().zip(&back) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.vel, b.vel);
            assert!((a.pos - b.pos).abs().max() < 1e-15);
            assert!((a.yaw - b.yaw).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_header_and_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_trajectory(&p), Err(Error::Format { .. })));
        fs::write(&p, format!("{TRAJECTORY_HEADER}\n1,2,3\n")).unwrap();
        let e = read_trajectory(&p).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        fs::write(&p, format!("{IMU_HEADER}\n1,0,0,0,0,0,9.8\n1,0,0,0,0,0,9.8\n")).unwrap();
        assert!(matches!(read_imu(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn scan_container_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let scans: Vec<Vec<LidarPoint>> = (0..3)
            .map(|k| {
                (0..10 + k)
                    .map(|i| LidarPoint::new(i as f64 * 0.5, -1.25, 0.125 * k as f64, 40.0 + i as f64))
                    .collect()
            })
            .collect();
        write_scans(&p, 3, scans.clone()).unwrap();
        let f = ScanFile::open(&p).unwrap();
        assert_eq!(f.len(), 3);
        for (k, s) in scans.iter().enumerate() {
            assert_eq!(&f.read(k).unwrap(), s);
        }
        let mut bytes = fs::read(&p).unwrap();
        bytes[12 + 4 + 5] ^= 0x40;
        fs::write(&p, &bytes).unwrap();
        let f = ScanFile::open(&p).unwrap();
        assert!(matches!(f.read(0), Err(Error::Format { .. })));
        assert!(f.read(1).is_ok());
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(ScanFile::open(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn gnss_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        let sat = |id: u32, el: f64| SatObservation {
            id,
            pos: Vector3::new(1.5e7, 1.0e7 + id as f64, 2.0e7),
            sd_range: 12.345678901234,
            sd_phase: -0.1 * id as f64,
            wavelength: crate::gnss::L1_WAVELENGTH,
            elevation: el,
        };
        let epochs: Vec<GnssArrival> = (0..3)
            .map(|k| GnssArrival {
                t_received: k as f64 + 0.2,
                epoch: GnssEpoch {
                    t: k as f64,
                    base: Vector3::new(-2.1e6, 4.4e6, 4.0e6),
                    sats: vec![sat(2, 1.2), sat(5, 0.7), sat(9, 0.3)],
                },
            })
            .collect();
        write_gnss(&p, &epochs).unwrap();
        assert_eq!(read_gnss(&p).unwrap(), epochs);
    }
}

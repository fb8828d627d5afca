//! File formats: the `.pmg` motion container, trajectory CSV, anchor JSON and
//! world-joint CSV (the converter input for externally prepared data).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{AnchorSet, MotionSequence, Trajectory};
use crate::{Error, Result};

pub const PMG_VERSION: u32 = 1;

/// First line of a `.pmg` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PmgHeader {
    pub version: u32,
    pub fps: u32,
    pub joints: usize,
    pub feature_dim: usize,
    pub frames: usize,
}

pub fn write_pmg(motion: &MotionSequence, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pmg_to(motion, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_pmg_to<W: Write>(motion: &MotionSequence, w: &mut W) -> Result<()> {
    let header = PmgHeader {
        version: PMG_VERSION,
        fps: motion.fps,
        joints: motion.feature_dim() / 3,
        feature_dim: motion.feature_dim(),
        frames: motion.frames(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for v in motion.features.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_pmg(path: &Path) -> Result<MotionSequence> {
    read_pmg_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_pmg_from<R: BufRead>(r: &mut R) -> Result<MotionSequence> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: PmgHeader = serde_json::from_str(line.trim_end())?;
    if header.version != PMG_VERSION {
        return Err(Error::Version { expected: PMG_VERSION, found: header.version });
    }
    if header.feature_dim != 3 * header.joints {
        return Err(Error::Format(format!(
            "feature_dim {} inconsistent with {} joints",
            header.feature_dim, header.joints
        )));
    }
    let count = header.frames * header.feature_dim;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated pmg body: {e}")))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after pmg body".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let features = Array2::from_shape_vec((header.frames, header.feature_dim), values)
        .map_err(|e| Error::Format(e.to_string()))?;
    MotionSequence::new(features, header.fps)
}

pub fn write_trajectory_csv(trajectory: &Trajectory, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "frame,x,y,z")?;
    for (i, row) in trajectory.positions.rows().into_iter().enumerate() {
        writeln!(w, "{},{},{},{}", i, row[0], row[1], row[2])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "frame,x,y,z" {
        return Err(Error::Format(format!("unexpected trajectory header `{}`", header.trim())));
    }
    let mut values = Vec::new();
    let mut frames = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(Error::Format(format!("line {}: expected 4 columns", i + 2)));
        }
        let frame: usize = cols[0]
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad frame index", i + 2)))?;
        if frame != frames {
            return Err(Error::Format(format!("line {}: expected frame {frames}", i + 2)));
        }
        for c in &cols[1..] {
            values.push(
                c.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: bad number `{c}`", i + 2)))?,
            );
        }
        frames += 1;
    }
    let positions =
        Array2::from_shape_vec((frames, 3), values).map_err(|e| Error::Format(e.to_string()))?;
    Trajectory::new(positions)
}

pub fn write_anchors_json(anchors: &AnchorSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, anchors)?;
    w.flush()?;
    Ok(())
}

pub fn read_anchors_json(path: &Path) -> Result<AnchorSet> {
    let raw: AnchorSet = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    // Deserialisation bypasses the constructor, so re-validate.
    let (positions, poses) = (raw.positions().to_vec(), raw.poses().clone());
    AnchorSet::new(positions, poses)
}

/// Reads rows of `3 J` comma-separated world coordinates (joint-major, xyz), one row per frame.
/// Lines starting with `#` are ignored.
pub fn read_world_joints_csv(path: &Path, joints: usize) -> Result<Array3<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut values = Vec::new();
    let mut frames = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = t
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("line {}: bad number", i + 1)))?;
        if row.len() != 3 * joints {
            return Err(Error::Format(format!(
                "line {}: expected {} values, got {}",
                i + 1,
                3 * joints,
                row.len()
            )));
        }
        values.extend(row);
        frames += 1;
    }
    Array3::from_shape_vec((frames, joints, 3), values).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::extract_trajectory;
    use std::io::Cursor;

    fn motion() -> MotionSequence {
        let f = Array2::from_shape_fn((5, 66), |(i, j)| (i as f64) * 0.5 - (j as f64) * 0.25);
        MotionSequence::new(f, 20).unwrap()
    }

    #[test]
    fn pmg_layout_is_header_line_then_f32_body() {
        let m = motion();
        let mut buf = Vec::new();
        write_pmg_to(&m, &mut buf).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&buf[..nl]).unwrap(),
            r#"{"version":1,"fps":20,"joints":22,"feature_dim":66,"frames":5}"#
        );
        assert_eq!(buf.len() - nl - 1, 5 * 66 * 4);
        assert_eq!(&buf[nl + 1..nl + 5], &(m.features[[0, 0]] as f32).to_le_bytes());
        assert_eq!(&buf[nl + 5..nl + 9], &(m.features[[0, 1]] as f32).to_le_bytes());

        let back = read_pmg_from(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn pmg_rejects_bad_input() {
        let m = motion();
        let mut buf = Vec::new();
        write_pmg_to(&m, &mut buf).unwrap();
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(read_pmg_from(&mut Cursor::new(truncated)), Err(Error::Format(_))));

        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        let mut v7 = br#"{"version":7,"fps":20,"joints":22,"feature_dim":66,"frames":5}"#.to_vec();
        v7.extend_from_slice(&buf[nl..]);
        assert!(matches!(read_pmg_from(&mut Cursor::new(v7)), Err(Error::Version { found: 7, .. })));
    }

    #[test]
    fn trajectory_csv_and_anchor_json() {
        let dir = tempfile::tempdir().unwrap();
        let m = motion();
        let t = extract_trajectory(&m);
        let p = dir.path().join("t.csv");
        write_trajectory_csv(&t, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("frame,x,y,z\n0,"));
        assert_eq!(read_trajectory_csv(&p).unwrap(), t);

        let a = crate::motion::gather_anchors(&m, &[1, 3]).unwrap();
        let ap = dir.path().join("a.json");
        write_anchors_json(&a, &ap).unwrap();
        assert_eq!(read_anchors_json(&ap).unwrap(), a);

        std::fs::write(&ap, r#"{"positions":[3,1],"poses":[[0.0],[1.0]]}"#).unwrap();
        assert!(matches!(read_anchors_json(&ap), Err(Error::InvalidAnchorPositions(_))));
    }

    #[test]
    fn world_joint_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("j.csv");
        std::fs::write(&p, "# two joints\n0,1,0,0,2,0\n1,1,0,1,2,0\n").unwrap();
        let j = read_world_joints_csv(&p, 2).unwrap();
        let m = MotionSequence::from_world_joints(&j, 20).unwrap();
        assert_eq!(m.features.row(1).to_vec(), vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(read_world_joints_csv(&p, 3).is_err());
    }
}

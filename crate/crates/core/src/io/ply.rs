//! ASCII PLY export and import for fused point clouds.
//!
//! The layout is fixed: float x/y/z positions followed by uchar red/green/
//! blue colors, one vertex per line. Positions are stored at 32-bit float
//! precision with shortest round-trip formatting.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::multiview::PointCloud;

const PROPERTIES: [&str; 6] = [
    "property float x",
    "property float y",
    "property float z",
    "property uchar red",
    "property uchar green",
    "property uchar blue",
];

/// Writes a point cloud as ASCII PLY.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut text = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\n{}\nend_header\n",
        cloud.len(),
        PROPERTIES.join("\n")
    );
    for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
        text.push_str(&format!(
            "{} {} {} {} {} {}\n",
            p.x as f32, p.y as f32, p.z as f32, c[0], c[1], c[2]
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads an ASCII PLY file in the exact layout this crate writes.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    fn expect<'a>(
        name: &str,
        lines: &mut impl Iterator<Item = (usize, &'a str)>,
        want: &str,
    ) -> Result<()> {
        match lines.next() {
            Some((_, got)) if got == want => Ok(()),
            Some((line, got)) => Err(Error::parse(
                name,
                line,
                format!("expected {want:?}, got {got:?}"),
            )),
            None => Err(Error::parse(name, 0, "truncated header")),
        }
    }

    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(name.as_str(), e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    expect(&name, &mut lines, "ply")?;
    expect(&name, &mut lines, "format ascii 1.0")?;
    let count: usize = match lines.next() {
        Some((line, l)) => match l.strip_prefix("element vertex ") {
            Some(n) => n
                .trim()
                .parse()
                .map_err(|_| Error::parse(name.as_str(), line, "bad vertex count"))?,
            None => {
                return Err(Error::parse(
                    name.as_str(),
                    line,
                    format!("expected the vertex element, got {l:?}"),
                ))
            }
        },
        None => return Err(Error::parse(name.as_str(), 0, "truncated header")),
    };
    for want in PROPERTIES {
        expect(&name, &mut lines, want)?;
    }
    expect(&name, &mut lines, "end_header")?;

    let mut cloud = PointCloud::default();
    for _ in 0..count {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(name.as_str(), 0, "missing vertex rows"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                name.as_str(),
                line_no,
                format!("expected 6 vertex fields, got {}", fields.len()),
            ));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f32>()
                .map(f64::from)
                .map_err(|_| Error::parse(name.as_str(), line_no, format!("bad float {s:?}")))
        };
        let byte = |s: &str| -> Result<u8> {
            s.parse()
                .map_err(|_| Error::parse(name.as_str(), line_no, format!("bad color {s:?}")))
        };
        cloud
            .positions
            .push(Vector3::new(num(fields[0])?, num(fields[1])?, num(fields[2])?));
        cloud
            .colors
            .push([byte(fields[3])?, byte(fields[4])?, byte(fields[5])?]);
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample() -> PointCloud {
        PointCloud {
            positions: vec![
                Vector3::new(0.125, -3.5, 2.0),
                Vector3::new(1.0 / 3.0, 0.0, -7.25),
            ],
            colors: vec![[0, 128, 255], [10, 20, 30]],
        }
    }

    #[test]
    fn clouds_round_trip_at_f32_precision() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cloud.ply");
        let cloud = sample();
        write_ply(&path, &cloud).unwrap();
        let back = read_ply(&path).unwrap();
        assert_eq!(back.len(), cloud.len());
        assert_eq!(back.colors, cloud.colors);
        for (a, b) in back.positions.iter().zip(&cloud.positions) {
            for k in 0..3 {
                assert_eq!(a[k], (b[k] as f32) as f64);
            }
        }
    }

    #[test]
    fn rewriting_is_byte_identical() {
        let dir = tempdir().unwrap();
        let first = dir.path().join("a.ply");
        let second = dir.path().join("b.ply");
        write_ply(&first, &sample()).unwrap();
        write_ply(&second, &read_ply(&first).unwrap()).unwrap();
        assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    }

    #[test]
    fn header_mismatches_report_the_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        fs::write(&path, "ply\nformat binary 1.0\n").unwrap();
        match read_ply(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn truncated_vertex_data_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.ply");
        let mut cloud = sample();
        write_ply(&path, &cloud).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let shorter = text.trim_end().rsplit_once('\n').unwrap().0.to_string();
        fs::write(&path, shorter).unwrap();
        assert!(matches!(read_ply(&path), Err(Error::Parse { .. })));
        cloud.positions.clear();
        cloud.colors.clear();
        write_ply(&path, &cloud).unwrap();
        assert!(read_ply(&path).unwrap().is_empty());
    }
}

//! Point cloud file IO: ASCII PLY (vertex x/y/z) and whitespace-separated
//! XYZ text. All lengths in meters.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Reads an ASCII PLY with x/y/z vertex properties. Extra vertex properties
/// and non-vertex elements are ignored.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let mut lines = BufReader::new(File::open(path)?).lines();

    let first = next_line(&mut lines)?;
    if first.trim() != "ply" {
        return Err(Error::Parse(format!("not a PLY file: first line {first:?}")));
    }
    let format = next_line(&mut lines)?;
    if !format.trim().starts_with("format ascii") {
        return Err(Error::Parse(format!("unsupported PLY format: {format:?}")));
    }

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex_element = false;
    let mut columns: Vec<String> = Vec::new();
    loop {
        let line = next_line(&mut lines)?;
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if line.starts_with("comment") {
            continue;
        }
        if let Some(rest) = line.strip_prefix("element ") {
            let mut parts = rest.split_whitespace();
            let name = parts.next().unwrap_or("");
            let count = parts
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::Parse(format!("bad element line: {line:?}")))?;
            in_vertex_element = name == "vertex";
            if in_vertex_element {
                vertex_count = Some(count);
            }
        } else if let Some(rest) = line.strip_prefix("property ") {
            if in_vertex_element {
                let name = rest
                    .split_whitespace()
                    .last()
                    .ok_or_else(|| Error::Parse(format!("bad property line: {line:?}")))?;
                columns.push(name.to_string());
            }
        }
    }

    let count = vertex_count.ok_or_else(|| Error::Parse("no vertex element".into()))?;
    let find = |axis: &str| {
        columns
            .iter()
            .position(|c| c == axis)
            .ok_or_else(|| Error::Parse(format!("vertex element lacks property {axis}")))
    };
    let (ix, iy, iz) = (find("x")?, find("y")?, find("z")?);

    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next_line(&mut lines)?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < columns.len() {
            return Err(Error::Parse(format!(
                "vertex row has {} fields, header declares {}",
                fields.len(),
                columns.len()
            )));
        }
        let parse = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad coordinate {:?}: {e}", fields[i])))
        };
        points.push(Vector3::new(parse(ix)?, parse(iy)?, parse(iz)?));
    }
    PointCloud::new(points)
}

fn next_line(lines: &mut std::io::Lines<BufReader<File>>) -> Result<String> {
    match lines.next() {
        Some(l) => Ok(l?),
        None => Err(Error::Parse("unexpected end of file".into())),
    }
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    writeln!(w, "end_header")?;
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated x y z per line; blank lines and `#` comments skipped.
pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut f = line.split_whitespace().map(|s| s.parse::<f64>());
        let mut get = || -> Result<f64> {
            f.next()
                .ok_or_else(|| Error::Parse(format!("line {}: fewer than 3 fields", lineno + 1)))?
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
        };
        points.push(Vector3::new(get()?, get()?, get()?));
    }
    PointCloud::new(points)
}

pub fn write_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cloud, dispatching on the file extension (`.ply` or anything else
/// treated as XYZ text).
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        _ => read_xyz(path),
    }
}

//! ASCII PLY 1.0 point clouds with `x y z intensity` float properties.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::geometry::Vec3;
use crate::simulate::LidarPoint;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PLY header: {0}")]
    Header(String),
    #[error("unsupported PLY format `{0}` (only ascii 1.0 is read)")]
    Unsupported(String),
    #[error("line {line}: {msg}")]
    Body { line: usize, msg: String },
}

pub fn write_ply<W: Write>(mut out: W, cloud: &[LidarPoint]) -> Result<(), PlyError> {
    let mut text = String::with_capacity(64 * cloud.len() + 160);
    text.push_str("ply\nformat ascii 1.0\n");
    writeln!(text, "element vertex {}", cloud.len()).unwrap();
    text.push_str(
        "property float x\nproperty float y\nproperty float z\nproperty float intensity\nend_header\n",
    );
    for p in cloud {
        let v = p.position;
        writeln!(text, "{} {} {} {}", v.x, v.y, v.z, p.intensity).unwrap();
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

/// Reads the `vertex` element. Extra properties are skipped; a missing
/// `intensity` property reads as 0.
pub fn read_ply<R: BufRead>(input: R) -> Result<Vec<LidarPoint>, PlyError> {
    let mut lines = input.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String), PlyError> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(PlyError::Header(format!("unexpected end of file ({what})"))),
        }
    };

    let (_, magic) = next("magic")?;
    if magic.trim() != "ply" {
        return Err(PlyError::Header("missing `ply` magic".into()));
    }

    // (element name, count, property names)
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    loop {
        let (_, line) = next("header")?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", "1.0"] => {}
            ["format", fmt, ..] => return Err(PlyError::Unsupported((*fmt).to_string())),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| PlyError::Header(format!("bad element count `{count}`")))?;
                elements.push(((*name).to_string(), count, Vec::new()));
            }
            ["property", "list", ..] => {
                return Err(PlyError::Header("list properties are not supported".into()))
            }
            ["property", _ty, name] => match elements.last_mut() {
                Some(e) => e.2.push((*name).to_string()),
                None => return Err(PlyError::Header("property before element".into())),
            },
            _ => return Err(PlyError::Header(format!("unrecognized line `{line}`"))),
        }
    }

    let mut cloud = Vec::new();
    for (name, count, props) in &elements {
        let is_vertex = name == "vertex";
        let col = |p: &str| props.iter().position(|q| q == p);
        let (ix, iy, iz, ii) = (col("x"), col("y"), col("z"), col("intensity"));
        if is_vertex && (ix.is_none() || iy.is_none() || iz.is_none()) {
            return Err(PlyError::Header("vertex element lacks x, y or z".into()));
        }
        for _ in 0..*count {
            let (line_no, line) = next("body")?;
            if !is_vertex {
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| PlyError::Body { line: line_no, msg: e.to_string() })?;
            if values.len() != props.len() {
                return Err(PlyError::Body {
                    line: line_no,
                    msg: format!("expected {} values, found {}", props.len(), values.len()),
                });
            }
            let get = |i: Option<usize>| i.map_or(0.0, |i| values[i]);
            cloud.push(LidarPoint {
                position: Vec3::new(get(ix), get(iy), get(iz)),
                intensity: get(ii),
            });
        }
    }
    Ok(cloud)
}

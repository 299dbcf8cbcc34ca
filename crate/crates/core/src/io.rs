//! Instance and tour file formats.
//!
//! * JSON: `{"n": int, "depot": int, "nodes": [[x, y], ...]}`.
//! * TSPLIB: the `NAME`/`TYPE`/`DIMENSION`/`EDGE_WEIGHT_TYPE`/
//!   `NODE_COORD_SECTION` subset with `EUC_2D` weights only. Coordinates are
//!   rescaled into the unit square by the larger of the two extents.
//! * Tour files: a `LENGTH: <value>` header followed by one node index per
//!   line.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Point, Tour, TspInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsplib,
    Json,
}

impl Format {
    /// Guesses the format from a file extension (`.tsp` or `.json`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "tsp" => Some(Self::Tsplib),
            "json" => Some(Self::Json),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonInstance {
    n: usize,
    depot: usize,
    nodes: Vec<[f64; 2]>,
}

/// Affine map from unit-square coordinates back to the source file's frame:
/// `original = offset + scale * unit`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub offset: Point,
    pub scale: f64,
}

impl Rescale {
    pub const IDENTITY: Rescale = Rescale { offset: Point::new(0.0, 0.0), scale: 1.0 };

    pub fn to_original(&self, p: Point) -> Point {
        Point::new(self.offset.x + self.scale * p.x, self.offset.y + self.scale * p.y)
    }
}

pub fn read_instance(bytes: &[u8], format: Format) -> Result<(TspInstance, Rescale)> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Parse { line: 0, msg: format!("not UTF-8: {e}") })?;
    match format {
        Format::Json => Ok((read_json(text)?, Rescale::IDENTITY)),
        Format::Tsplib => read_tsplib(text),
    }
}

pub fn write_instance(instance: &TspInstance, format: Format, name: &str) -> String {
    match format {
        Format::Json => write_json(instance),
        Format::Tsplib => write_tsplib(instance, name),
    }
}

pub fn read_instance_file(path: &Path) -> Result<(TspInstance, Rescale)> {
    let format = Format::from_path(path)
        .ok_or_else(|| Error::Unsupported(format!("unknown instance extension: {}", path.display())))?;
    read_instance(&std::fs::read(path)?, format)
}

pub fn read_json(text: &str) -> Result<TspInstance> {
    let raw: JsonInstance = serde_json::from_str(text)?;
    if raw.n != raw.nodes.len() {
        return Err(Error::Validation(format!("n = {} but {} nodes listed", raw.n, raw.nodes.len())));
    }
    TspInstance::new(raw.nodes.iter().map(|&[x, y]| Point::new(x, y)).collect(), raw.depot)
}

pub fn write_json(instance: &TspInstance) -> String {
    let raw = JsonInstance {
        n: instance.n(),
        depot: instance.depot(),
        nodes: instance.nodes().iter().map(|p| [p.x, p.y]).collect(),
    };
    serde_json::to_string(&raw).expect("plain data serializes")
}

/// Parses the supported TSPLIB subset. The depot is node 0.
pub fn read_tsplib(text: &str) -> Result<(TspInstance, Rescale)> {
    let mut dimension: Option<usize> = None;
    let mut raw: Vec<Point> = Vec::new();
    let mut in_coords = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        if line == "EOF" {
            break;
        }
        if in_coords {
            let mut it = line.split_whitespace();
            let (Some(_id), Some(x), Some(y)) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse { line: lineno, msg: format!("expected `id x y`, got `{line}`") });
            };
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse { line: lineno, msg: format!("bad coordinate `{s}`: {e}") })
            };
            raw.push(Point::new(parse(x)?, parse(y)?));
            continue;
        }
        if line.starts_with("NODE_COORD_SECTION") {
            in_coords = true;
            continue;
        }
        if line.ends_with("_SECTION") {
            return Err(Error::Unsupported(format!("section {line}")));
        }
        let Some((key, value)) = line.split_once(':') else {
            return Err(Error::Parse { line: lineno, msg: format!("expected `KEY : VALUE`, got `{line}`") });
        };
        let value = value.trim();
        match key.trim() {
            "DIMENSION" => {
                dimension = Some(value.parse().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad dimension `{value}`: {e}"),
                })?)
            }
            "EDGE_WEIGHT_TYPE" if value != "EUC_2D" => {
                return Err(Error::Unsupported(format!("edge weight type {value}")))
            }
            "TYPE" if value != "TSP" => return Err(Error::Unsupported(format!("problem type {value}"))),
            _ => {}
        }
    }
    let dim = dimension.ok_or(Error::Parse { line: 0, msg: "missing DIMENSION".into() })?;
    if raw.len() != dim {
        return Err(Error::Parse { line: 0, msg: format!("DIMENSION {dim} but {} coordinates", raw.len()) });
    }
    let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in &raw {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let extent = (hi.x - lo.x).max(hi.y - lo.y);
    let scale = if extent > 0.0 { extent } else { 1.0 };
    let nodes = raw
        .iter()
        .map(|p| Point::new(((p.x - lo.x) / scale).clamp(0.0, 1.0), ((p.y - lo.y) / scale).clamp(0.0, 1.0)))
        .collect();
    Ok((TspInstance::new(nodes, 0)?, Rescale { offset: lo, scale }))
}

pub fn write_tsplib(instance: &TspInstance, name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "NAME : {name}");
    let _ = writeln!(s, "TYPE : TSP");
    let _ = writeln!(s, "DIMENSION : {}", instance.n());
    let _ = writeln!(s, "EDGE_WEIGHT_TYPE : EUC_2D");
    let _ = writeln!(s, "NODE_COORD_SECTION");
    for (i, p) in instance.nodes().iter().enumerate() {
        let _ = writeln!(s, "{} {} {}", i + 1, p.x, p.y);
    }
    s.push_str("EOF\n");
    s
}

pub fn write_tour(tour: &Tour, length: f64) -> String {
    let mut s = String::with_capacity(tour.order.len() * 6 + 32);
    let _ = writeln!(s, "LENGTH: {length}");
    for v in &tour.order {
        let _ = writeln!(s, "{v}");
    }
    s
}

/// Parses a tour file; returns the tour and the header length.
pub fn read_tour(text: &str) -> Result<(Tour, f64)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty tour file".into() })?;
    let length = header
        .trim()
        .strip_prefix("LENGTH:")
        .and_then(|v| v.trim().parse::<f64>().ok())
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("expected `LENGTH: <value>`, got `{header}`") })?;
    let order = lines
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| Error::Parse { line: i + 1, msg: format!("bad index: {e}") })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Tour::new(order), length))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::generate_uniform;

    const TINY: &str = "NAME : tiny\nTYPE : TSP\nCOMMENT : three cities\nDIMENSION : 3\n\
                        EDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 10 20\n2 30 20\n3 10 60\nEOF\n";

    #[test]
    fn minimal_tsplib() {
        let (inst, scale) = read_instance(TINY.as_bytes(), Format::Tsplib).unwrap();
        assert_eq!(inst.n(), 3);
        assert_eq!(inst.point(2), Point::new(0.0, 1.0));
        assert_eq!(inst.point(1), Point::new(0.5, 0.0));
        assert_eq!(scale.to_original(inst.point(1)), Point::new(30.0, 20.0));
    }

    #[test]
    fn explicit_weights_unsupported() {
        let text = "NAME : x\nTYPE : TSP\nDIMENSION : 3\nEDGE_WEIGHT_TYPE : EXPLICIT\n\
                    EDGE_WEIGHT_FORMAT : FULL_MATRIX\nEDGE_WEIGHT_SECTION\n0 1 2\n1 0 3\n2 3 0\nEOF\n";
        assert!(matches!(read_tsplib(text), Err(Error::Unsupported(_))));
    }

    #[test]
    fn malformed_inputs() {
        assert!(read_tsplib("DIMENSION : 2\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 0 0\n").is_err());
        assert!(read_tsplib("DIMENSION : two\n").is_err());
        assert!(read_tsplib("garbage line\n").is_err());
        assert!(read_json(r#"{"n": 3, "depot": 0, "nodes": [[0,0],[1,1]]}"#).is_err());
        assert!(read_json(r#"{"n": 2, "depot": 0, "nodes": [[0,0],[2,1]]}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let inst = generate_uniform(257, 99).unwrap();
        let text = write_instance(&inst, Format::Json, "x");
        let (back, scale) = read_instance(text.as_bytes(), Format::Json).unwrap();
        assert_eq!(back, inst);
        assert_eq!(scale, Rescale::IDENTITY);
    }

    #[test]
    fn tsplib_round_trip_up_to_rescale() {
        let inst = generate_uniform(100, 5).unwrap();
        let text = write_tsplib(&inst, "r100");
        let (back, scale) = read_tsplib(&text).unwrap();
        for (a, b) in inst.nodes().iter().zip(back.nodes()) {
            let o = scale.to_original(*b);
            assert!((a.x - o.x).abs() < 1e-12 && (a.y - o.y).abs() < 1e-12);
        }
    }

    #[test]
    fn tour_file_round_trip() {
        let t = Tour::new(vec![0, 3, 1, 2]);
        let (back, len) = read_tour(&write_tour(&t, 3.25)).unwrap();
        assert_eq!(back, t);
        assert_eq!(len, 3.25);
        assert!(read_tour("0\n1\n").is_err());
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(Format::from_path(Path::new("a/b.TSP")), Some(Format::Tsplib));
        assert_eq!(Format::from_path(Path::new("a.json")), Some(Format::Json));
        assert_eq!(Format::from_path(Path::new("a.txt")), None);
    }
}

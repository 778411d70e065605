//! CVRPLIB/TSPLIB-style benchmark instance files.
//!
//! Parses the section format (NAME, DIMENSION, CAPACITY, NODE_COORD_SECTION,
//! DEMAND_SECTION, DEPOT_SECTION, EOF). Costs on benchmark instances follow
//! the EUC_2D convention: per-edge Euclidean distances rounded to the nearest
//! integer, in the file's original units.

use crate::vrp::Instance;
use crate::{Error, Result};

/// A benchmark instance in original units plus its unit-square normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkInstance {
    pub name: String,
    pub comment: Option<String>,
    pub dimension: usize,
    pub capacity: f64,
    /// Coordinates in original units, depot first.
    pub coords: Vec<[f64; 2]>,
    pub demands: Vec<f64>,
    pub depot_index: usize,
    /// Best-known cost from an external reference list.
    pub best_known: Option<f64>,
    /// Uniform scale from normalized to original units.
    pub scale: f64,
    offset: [f64; 2],
}

impl BenchmarkInstance {
    /// Tour cost in original units under the EUC_2D rounding convention.
    pub fn tour_cost_original(&self, nodes: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for w in nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a >= self.dimension || b >= self.dimension {
                return Err(Error::invalid_argument(format!("node index out of range: {}", a.max(b))));
            }
            let dx = self.coords[a][0] - self.coords[b][0];
            let dy = self.coords[a][1] - self.coords[b][1];
            total += (dx * dx + dy * dy).sqrt().round();
        }
        Ok(total)
    }

    /// Model-facing CVRP instance with coordinates in the unit square. Node
    /// order is preserved (depot first), so tour indices transfer back
    /// directly.
    pub fn to_instance(&self) -> Result<Instance> {
        let normalized: Vec<[f64; 2]> = self
            .coords
            .iter()
            .map(|c| [(c[0] - self.offset[0]) / self.scale, (c[1] - self.offset[1]) / self.scale])
            .collect();
        Instance::cvrp(normalized, self.demands[1..].to_vec(), self.capacity)
    }
}

fn normalization(coords: &[[f64; 2]]) -> ([f64; 2], f64) {
    let min_x = coords.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
    let min_y = coords.iter().map(|c| c[1]).fold(f64::INFINITY, f64::min);
    let max_x = coords.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max);
    let max_y = coords.iter().map(|c| c[1]).fold(f64::NEG_INFINITY, f64::max);
    let scale = (max_x - min_x).max(max_y - min_y).max(1e-12);
    ([min_x, min_y], scale)
}

/// Parse the text of a CVRPLIB `.vrp` file.
pub fn parse_cvrplib(text: &str) -> Result<BenchmarkInstance> {
    let mut name = None;
    let mut comment = None;
    let mut dimension: Option<usize> = None;
    let mut capacity: Option<f64> = None;
    let mut coords: Vec<Option<[f64; 2]>> = Vec::new();
    let mut demands: Vec<Option<f64>> = Vec::new();
    let mut depot_index: Option<usize> = None;
    let mut saw_coord_section = false;
    let mut saw_demand_section = false;

    #[derive(PartialEq)]
    enum Section {
        Header,
        Coords,
        Demands,
        Depot,
        Done,
    }
    let mut section = Section::Header;

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let keyword = line.split([':', ' ', '\t']).next().unwrap_or("");
        match keyword {
            "NAME" => name = Some(value_of(line)),
            "COMMENT" => comment = Some(value_of(line)),
            "TYPE" | "EDGE_WEIGHT_TYPE" => {} // CVRP / EUC_2D assumed
            "DIMENSION" => {
                dimension = Some(value_of(line).parse().map_err(|_| {
                    Error::parse(format!("bad DIMENSION {:?}", value_of(line)), Some(lineno))
                })?);
            }
            "CAPACITY" => {
                capacity = Some(value_of(line).parse().map_err(|_| {
                    Error::parse(format!("bad CAPACITY {:?}", value_of(line)), Some(lineno))
                })?);
            }
            "NODE_COORD_SECTION" => {
                let dim = dimension
                    .ok_or_else(|| Error::parse("NODE_COORD_SECTION before DIMENSION", Some(lineno)))?;
                coords = vec![None; dim];
                saw_coord_section = true;
                section = Section::Coords;
            }
            "DEMAND_SECTION" => {
                let dim = dimension
                    .ok_or_else(|| Error::parse("DEMAND_SECTION before DIMENSION", Some(lineno)))?;
                demands = vec![None; dim];
                saw_demand_section = true;
                section = Section::Demands;
            }
            "DEPOT_SECTION" => section = Section::Depot,
            "EOF" => section = Section::Done,
            _ => match section {
                Section::Coords => {
                    let mut it = line.split_whitespace();
                    let id: usize = parse_field(it.next(), "node id", lineno)?;
                    let x: f64 = parse_field(it.next(), "x coordinate", lineno)?;
                    let y: f64 = parse_field(it.next(), "y coordinate", lineno)?;
                    let slot = coords
                        .get_mut(id.wrapping_sub(1))
                        .ok_or_else(|| Error::parse(format!("node id {id} out of range"), Some(lineno)))?;
                    *slot = Some([x, y]);
                }
                Section::Demands => {
                    let mut it = line.split_whitespace();
                    let id: usize = parse_field(it.next(), "node id", lineno)?;
                    let demand_text = it
                        .next()
                        .ok_or_else(|| Error::parse("missing demand", Some(lineno)))?;
                    let demand: i64 = demand_text.parse().map_err(|_| {
                        Error::parse(format!("demand {demand_text:?} is not an integer"), Some(lineno))
                    })?;
                    if demand < 0 {
                        return Err(Error::parse("negative demand", Some(lineno)));
                    }
                    let slot = demands
                        .get_mut(id.wrapping_sub(1))
                        .ok_or_else(|| Error::parse(format!("node id {id} out of range"), Some(lineno)))?;
                    *slot = Some(demand as f64);
                }
                Section::Depot => {
                    let id: i64 = line
                        .split_whitespace()
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::parse("bad depot id", Some(lineno)))?;
                    if id > 0 {
                        depot_index = Some((id - 1) as usize);
                    }
                }
                Section::Header | Section::Done => {
                    return Err(Error::parse(format!("unexpected line {line:?}"), Some(lineno)));
                }
            },
        }
    }

    let dimension = dimension.ok_or_else(|| Error::parse("missing DIMENSION section", None))?;
    let capacity = capacity.ok_or_else(|| Error::parse("missing CAPACITY section", None))?;
    if !saw_coord_section {
        return Err(Error::parse("missing NODE_COORD_SECTION", None));
    }
    if !saw_demand_section {
        return Err(Error::parse("missing DEMAND_SECTION", None));
    }
    let coords: Vec<[f64; 2]> = coords
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.ok_or_else(|| Error::parse(format!("node {} has no coordinates", i + 1), None)))
        .collect::<Result<_>>()?;
    let demands: Vec<f64> = demands
        .into_iter()
        .enumerate()
        .map(|(i, d)| d.ok_or_else(|| Error::parse(format!("node {} has no demand", i + 1), None)))
        .collect::<Result<_>>()?;
    let depot_index = depot_index.ok_or_else(|| Error::parse("missing DEPOT_SECTION", None))?;
    if depot_index != 0 {
        return Err(Error::parse(format!("depot must be node 1, got {}", depot_index + 1), None));
    }
    if demands[depot_index] != 0.0 {
        return Err(Error::parse("depot demand must be zero", None));
    }

    let (offset, scale) = normalization(&coords);
    Ok(BenchmarkInstance {
        name: name.unwrap_or_else(|| "unnamed".into()),
        comment,
        dimension,
        capacity,
        coords,
        demands,
        depot_index,
        best_known: None,
        scale,
        offset,
    })
}

/// Render back into the section format; `parse_cvrplib(serialize(x))`
/// reproduces `x`.
pub fn serialize_cvrplib(inst: &BenchmarkInstance) -> String {
    let mut out = String::new();
    out.push_str(&format!("NAME : {}\n", inst.name));
    if let Some(c) = &inst.comment {
        out.push_str(&format!("COMMENT : {c}\n"));
    }
    out.push_str("TYPE : CVRP\n");
    out.push_str(&format!("DIMENSION : {}\n", inst.dimension));
    out.push_str("EDGE_WEIGHT_TYPE : EUC_2D\n");
    out.push_str(&format!("CAPACITY : {}\n", inst.capacity));
    out.push_str("NODE_COORD_SECTION\n");
    for (i, c) in inst.coords.iter().enumerate() {
        out.push_str(&format!("{} {} {}\n", i + 1, c[0], c[1]));
    }
    out.push_str("DEMAND_SECTION\n");
    for (i, d) in inst.demands.iter().enumerate() {
        out.push_str(&format!("{} {}\n", i + 1, d));
    }
    out.push_str("DEPOT_SECTION\n1\n-1\nEOF\n");
    out
}

fn value_of(line: &str) -> String {
    line.splitn(2, ':').nth(1).unwrap_or("").trim().to_string()
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, what: &str, lineno: usize) -> Result<T> {
    tok.ok_or_else(|| Error::parse(format!("missing {what}"), Some(lineno)))?
        .parse()
        .map_err(|_| Error::parse(format!("bad {what}"), Some(lineno)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOUR_NODE: &str = "NAME : toy-4\n\
        COMMENT : 3-4-5 triangles give integer distances\n\
        TYPE : CVRP\n\
        DIMENSION : 4\n\
        EDGE_WEIGHT_TYPE : EUC_2D\n\
        CAPACITY : 10\n\
        NODE_COORD_SECTION\n\
        1 0 0\n\
        2 3 4\n\
        3 6 0\n\
        4 3 -4\n\
        DEMAND_SECTION\n\
        1 0\n\
        2 1\n\
        3 1\n\
        4 1\n\
        DEPOT_SECTION\n\
        1\n\
        -1\n\
        EOF\n";

    #[test]
    fn four_node_fixture_costs_match_hand_arithmetic() {
        let b = parse_cvrplib(FOUR_NODE).unwrap();
        assert_eq!(b.dimension, 4);
        assert_eq!(b.demands[0], 0.0);
        // each leg of 0-1-2-3-0 is a 3-4-5 hypotenuse: 5 + 5 + 5 + 5
        let cost = b.tour_cost_original(&[0, 1, 2, 3, 0]).unwrap();
        assert_eq!(cost, 20.0);
    }

    #[test]
    fn normalized_instance_lands_in_unit_square() {
        let b = parse_cvrplib(FOUR_NODE).unwrap();
        let inst = b.to_instance().unwrap();
        for c in &inst.coords {
            assert!(c[0] >= 0.0 && c[0] <= 1.0 + 1e-12);
            assert!(c[1] >= 0.0 && c[1] <= 1.0 + 1e-12);
        }
        // uniform scale: geometry is preserved up to the single factor
        let d01 = inst.distance(0, 1) * b.scale;
        assert!((d01 - 5.0).abs() < 1e-9);
    }

    #[test]
    fn roundtrip_reparses_identically() {
        let b = parse_cvrplib(FOUR_NODE).unwrap();
        let again = parse_cvrplib(&serialize_cvrplib(&b)).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn missing_section_is_named() {
        let text = FOUR_NODE.replace("CAPACITY : 10\n", "");
        match parse_cvrplib(&text) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("CAPACITY"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_integer_demand_reports_line() {
        let text = FOUR_NODE.replace("2 1\n", "2 1.5\n");
        match parse_cvrplib(&text) {
            Err(Error::Parse { msg, line }) => {
                assert!(msg.contains("integer"), "{msg}");
                assert!(line.is_some());
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}

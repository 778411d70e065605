//! Dataset container: a text header followed by fixed-layout binary records.
//!
//! Header line: `CRDATA1 problem=<p> n=<n> count=<c> distribution=<d> seed=<s>`.
//! Each record stores the instance's coordinates and problem attributes as
//! little-endian f64, so generation roundtrips bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::vrp::{Distribution, Instance, Problem};
use crate::{Error, Result};

const MAGIC: &str = "CRDATA1";

/// A generated dataset with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub problem: Problem,
    pub n_customers: usize,
    pub distribution: Distribution,
    pub seed: u64,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn generate(
        problem: Problem,
        n_customers: usize,
        count: usize,
        distribution: Distribution,
        seed: u64,
    ) -> Result<Dataset> {
        let instances = crate::vrp::generate_instances(problem, n_customers, count, distribution, seed)?;
        Ok(Dataset { problem, n_customers, distribution, seed, instances })
    }
}

fn push_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn f64(&mut self) -> Result<f64> {
        if self.pos + 8 > self.bytes.len() {
            return Err(Error::parse("truncated dataset record", None));
        }
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&self.bytes[self.pos..self.pos + 8]);
        self.pos += 8;
        Ok(f64::from_le_bytes(buf))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut body = Vec::new();
    for inst in &dataset.instances {
        push_f64s(&mut body, inst.coords.iter().flat_map(|c| [c[0], c[1]]));
        match dataset.problem {
            Problem::Tsp => {}
            Problem::Op => {
                push_f64s(&mut body, inst.prizes().iter().copied());
                push_f64s(&mut body, [inst.max_length()]);
            }
            Problem::Pctsp => {
                push_f64s(&mut body, inst.prizes().iter().copied());
                push_f64s(&mut body, inst.penalties().iter().copied());
                push_f64s(&mut body, [inst.min_prize()]);
            }
            Problem::Cvrp => {
                push_f64s(&mut body, inst.demands().iter().copied());
                push_f64s(&mut body, [inst.capacity()]);
            }
        }
    }
    let mut file = std::fs::File::create(path)?;
    writeln!(
        file,
        "{MAGIC} problem={} n={} count={} distribution={} seed={}",
        dataset.problem.name(),
        dataset.n_customers,
        dataset.instances.len(),
        dataset.distribution.name(),
        dataset.seed
    )?;
    file.write_all(&body)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let header_end = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse("missing dataset header", Some(1)))?;
    let header = std::str::from_utf8(&raw[..header_end])
        .map_err(|_| Error::parse("header is not utf-8", Some(1)))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(MAGIC) {
        return Err(Error::parse(format!("bad magic in {header:?}"), Some(1)));
    }
    let mut problem = None;
    let mut n = None;
    let mut count = None;
    let mut distribution = None;
    let mut seed = None;
    for field in fields {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| Error::parse(format!("bad header field {field:?}"), Some(1)))?;
        match k {
            "problem" => problem = Problem::from_name(v),
            "n" => n = v.parse().ok(),
            "count" => count = v.parse().ok(),
            "distribution" => distribution = Distribution::from_name(v),
            "seed" => seed = v.parse().ok(),
            _ => return Err(Error::parse(format!("unknown header field {k:?}"), Some(1))),
        }
    }
    let problem: Problem = problem.ok_or_else(|| Error::parse("missing problem", Some(1)))?;
    let n: usize = n.ok_or_else(|| Error::parse("missing n", Some(1)))?;
    let count: usize = count.ok_or_else(|| Error::parse("missing count", Some(1)))?;
    let distribution = distribution.ok_or_else(|| Error::parse("missing distribution", Some(1)))?;
    let seed: u64 = seed.ok_or_else(|| Error::parse("missing seed", Some(1)))?;

    let n_nodes = if problem.has_depot() { n + 1 } else { n };
    let mut reader = Reader { bytes: &raw[header_end + 1..], pos: 0 };
    let mut instances = Vec::with_capacity(count);
    for _ in 0..count {
        let flat = reader.f64s(n_nodes * 2)?;
        let coords: Vec<[f64; 2]> = flat.chunks(2).map(|c| [c[0], c[1]]).collect();
        let inst = match problem {
            Problem::Tsp => Instance::tsp(coords)?,
            Problem::Op => {
                let prizes = reader.f64s(n_nodes)?;
                let max_length = reader.f64()?;
                Instance::op(coords, prizes[1..].to_vec(), max_length)?
            }
            Problem::Pctsp => {
                let prizes = reader.f64s(n_nodes)?;
                let penalties = reader.f64s(n_nodes)?;
                let min_prize = reader.f64()?;
                Instance::pctsp(coords, prizes[1..].to_vec(), penalties[1..].to_vec(), min_prize)?
            }
            Problem::Cvrp => {
                let demands = reader.f64s(n_nodes)?;
                let capacity = reader.f64()?;
                Instance::cvrp(coords, demands[1..].to_vec(), capacity)?
            }
        };
        instances.push(inst);
    }
    if reader.pos != reader.bytes.len() {
        return Err(Error::parse("trailing bytes after final record", None));
    }
    Ok(Dataset { problem, n_customers: n, distribution, seed, instances })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_all_problems() {
        let dir = tempfile::tempdir().unwrap();
        for problem in [Problem::Tsp, Problem::Op, Problem::Pctsp, Problem::Cvrp] {
            let ds = Dataset::generate(problem, 8, 3, Distribution::Uniform, 17).unwrap();
            let path = dir.path().join(format!("{}.bin", problem.name()));
            write_dataset(&ds, &path).unwrap();
            let back = read_dataset(&path).unwrap();
            assert_eq!(ds, back);
        }
    }

    #[test]
    fn same_seed_writes_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        write_dataset(&Dataset::generate(Problem::Op, 6, 4, Distribution::Uniform, 5).unwrap(), &a).unwrap();
        write_dataset(&Dataset::generate(Problem::Op, 6, 4, Distribution::Uniform, 5).unwrap(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}

//! Plain-text columnar field files.
//!
//! A single `# `-prefixed JSON header line, a `# t x1 … u` column line, then one
//! row per node and level. Numbers use the shortest representation that parses
//! back to the same bits.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MetricDescriptor, MetricSpec};
use crate::solver::{DomainSpec, Lattice, LatticeSpec, Provenance, SolutionField};

const FORMAT: &str = "gradest-field";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    id: String,
    domain: DomainSpec,
    metric: MetricDescriptor,
    lattice: LatticeSpec,
    h: f64,
    dt: f64,
    m_bound: f64,
    scale: f64,
    provenance: Provenance,
    levels: usize,
    nodes: usize,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Format(format!("i/o: {e}"))
}

pub fn write_field<W: Write>(field: &SolutionField, mut out: W) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        id: field.id.clone(),
        domain: field.domain().clone(),
        metric: field.metric().descriptor(),
        lattice: field.lattice().spec(),
        h: field.h(),
        dt: field.dt(),
        m_bound: field.m_bound(),
        scale: field.exact().map_or(1.0, |(_, c)| c),
        provenance: field.provenance().clone(),
        levels: field.times().len(),
        nodes: field.lattice().len(),
    };
    let json = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out, "# {json}").map_err(io_err)?;
    let dim = field.metric().dim();
    let cols: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    writeln!(out, "# t {} u", cols.join(" ")).map_err(io_err)?;
    let lat = field.lattice();
    let mut line = String::new();
    for (k, &t) in field.times().iter().enumerate() {
        for i in 0..lat.len() {
            line.clear();
            line.push_str(&t.to_string());
            for c in lat.coords(i) {
                line.push(' ');
                line.push_str(&c.to_string());
            }
            line.push(' ');
            line.push_str(&field.value(i, k).to_string());
            writeln!(out, "{line}").map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

pub fn read_field<R: BufRead>(input: R) -> Result<SolutionField> {
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines.next().ok_or_else(|| Error::Format("unexpected end of file".into()))?.map_err(io_err)
    };
    let head = next()?;
    let json = head.strip_prefix("# ").ok_or_else(|| Error::Format("missing header line".into()))?;
    let header: Header = serde_json::from_str(json).map_err(|e| Error::Format(format!("header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Format(format!("unsupported format {} v{}", header.format, header.version)));
    }
    let metric = MetricSpec::from_descriptor(&header.metric)?;
    let lattice = Lattice::build(header.lattice, &header.domain, &metric)?;
    if lattice.len() != header.nodes {
        return Err(Error::Format(format!("header lists {} nodes, lattice has {}", header.nodes, lattice.len())));
    }
    if !next()?.starts_with("# t ") {
        return Err(Error::Format("missing column line".into()));
    }
    let dim = metric.dim();
    let mut times = Vec::with_capacity(header.levels);
    let mut values = Vec::with_capacity(header.levels);
    for k in 0..header.levels {
        let mut level = Vec::with_capacity(lattice.len());
        for i in 0..lattice.len() {
            let row = next()?;
            let nums: Vec<f64> = row
                .split_ascii_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("bad number {s:?}: {e}"))))
                .collect::<Result<_>>()?;
            if nums.len() != dim + 2 {
                return Err(Error::Format(format!("row has {} columns, expected {}", nums.len(), dim + 2)));
            }
            if i == 0 {
                times.push(nums[0]);
            } else if nums[0].to_bits() != times[k].to_bits() {
                return Err(Error::Format(format!("time changes inside level {k}")));
            }
            if nums[1..=dim].iter().zip(lattice.coords(i)).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return Err(Error::Format(format!("row {i} of level {k} does not match the lattice")));
            }
            level.push(nums[dim + 1]);
        }
        values.push(level);
    }
    let field = SolutionField::from_parts(
        header.id,
        header.domain,
        metric,
        Arc::new(lattice),
        times,
        values,
        header.dt,
        header.m_bound,
        header.provenance,
    )?;
    Ok(field.with_scale(header.scale))
}

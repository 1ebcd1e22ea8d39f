//! CSV export of paths, measure flows and value fields, and flow import.
//!
//! Floats use Rust's shortest round-trip formatting, so output does not
//! depend on locale and re-reading recovers the exact values.

use std::io::{self, BufRead, Write};

use crate::best_response::ValueField;
use crate::controls::FeedbackTable;
use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, MeasureFlow};
use crate::simulator::PathBundle;

fn header(prefix: &str, d: usize) -> String {
    (1..=d).map(|k| format!("{prefix}{k}")).collect::<Vec<_>>().join(",")
}

/// `t,particle,x1..xd,k1..kd,kvar`, one row per particle and node.
pub fn write_paths<W: Write>(paths: &PathBundle, mut w: W) -> io::Result<()> {
    let d = paths.dim();
    writeln!(w, "t,particle,{},{},kvar", header("x", d), header("k", d))?;
    for step in 0..=paths.steps() {
        let t = paths.time(step);
        for i in 0..paths.particles() {
            write!(w, "{t},{i}")?;
            for v in paths.x(step, i) {
                write!(w, ",{v}")?;
            }
            for v in paths.k(step, i) {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", paths.kvar(step, i))?;
        }
    }
    w.flush()
}

/// `t_index,particle_index,x1..xd`.
pub fn write_flow<W: Write>(flow: &MeasureFlow, mut w: W) -> io::Result<()> {
    writeln!(w, "t_index,particle_index,{}", header("x", flow.dim()))?;
    for (k, frame) in flow.frames().iter().enumerate() {
        for i in 0..frame.len() {
            write!(w, "{k},{i}")?;
            for v in frame.point(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()
}

/// Read a flow written by [`write_flow`]. Rows must be grouped by time
/// index in increasing order.
pub fn read_flow<R: BufRead>(horizon: f64, r: R) -> Result<MeasureFlow> {
    let mut lines = r.lines().enumerate();
    let (_, head) = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty flow file".into()))?;
    let head = head.map_err(|e| Error::InvalidInput(e.to_string()))?;
    let cols: Vec<&str> = head.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "t_index" || cols[1] != "particle_index" {
        return Err(Error::InvalidInput("flow header must start with t_index,particle_index".into()));
    }
    let d = cols.len() - 2;
    let mut frames: Vec<Vec<f64>> = Vec::new();
    for (no, line) in lines {
        let line = line.map_err(|e| Error::InvalidInput(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::InvalidInput(format!("flow line {}: {what}", no + 1));
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != d + 2 {
            return Err(bad("wrong number of columns"));
        }
        let k: usize = fields[0].parse().map_err(|_| bad("bad time index"))?;
        if k == frames.len() {
            frames.push(Vec::new());
        } else if k + 1 != frames.len() {
            return Err(bad("time indices out of order"));
        }
        for f in &fields[2..] {
            frames[k].push(f.parse().map_err(|_| bad("bad coordinate"))?);
        }
    }
    let frames = frames
        .into_iter()
        .map(|pts| EmpiricalMeasure::uniform(d, pts))
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(horizon, frames)
}

/// `t,node,x1..xd,value,argmin_index,u1..um`; the last time node has no
/// control and leaves those columns empty.
pub fn write_value<W: Write>(value: &ValueField, table: &FeedbackTable, mut w: W) -> io::Result<()> {
    let grid = value.grid();
    let d = grid.dim();
    let m = table.controls().dim();
    writeln!(w, "t,node,{},value,argmin,{}", header("x", d), header("u", m))?;
    let dt = value.horizon() / value.steps() as f64;
    for k in 0..=value.steps() {
        let t = k as f64 * dt;
        for node in 0..grid.len() {
            write!(w, "{t},{node}")?;
            for v in grid.node(node) {
                write!(w, ",{v}")?;
            }
            write!(w, ",{}", value.value(k, node))?;
            if k < value.steps() {
                let a = value.argmin(k, node);
                write!(w, ",{a}")?;
                for v in table.controls().atom(a) {
                    write!(w, ",{v}")?;
                }
            } else {
                write!(w, ",{}", ",".repeat(m))?;
            }
            writeln!(w)?;
        }
    }
    w.flush()
}

//! Deterministic result files.
//!
//! Every artifact is a pure function of the effective run
//! configuration: floats are printed with 17 significant digits, JSON
//! objects serialize with sorted keys, rows follow fixed orders, and no
//! artifact embeds wall-clock time (runtime goes to `run.log`, which is
//! exempt from byte-identity). Running the same configuration twice
//! must reproduce every artifact byte for byte.

use crate::hjb::ValueGrid;
use crate::numfmt::fmt_f64;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 hex digest of the effective configuration bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Header block common to every artifact set.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub config_hash: String,
    pub pipeline: String,
    /// Mesh, step and check details; keys sort deterministically.
    pub details: serde_json::Value,
}

impl RunMetadata {
    pub fn new(config_hash: String, pipeline: &str, details: serde_json::Value) -> Self {
        RunMetadata {
            tool_version: TOOL_VERSION.to_string(),
            config_hash,
            pipeline: pipeline.to_string(),
            details,
        }
    }
}

/// Pretty JSON with a trailing newline; the sorted-map representation
/// keeps the bytes stable.
pub fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)
}

/// Value-grid dump, one row per (slice, node):
/// t, x_1[, x_2], w, argmin_control, stop_flag.
pub fn write_grid_csv<W: Write>(grid: &ValueGrid, mut w: W) -> io::Result<()> {
    let d = grid.geometry.dim();
    write!(w, "t")?;
    for k in 1..=d {
        write!(w, ",x_{k}")?;
    }
    writeln!(w, ",w,argmin_control,stop_flag")?;
    let n = grid.geometry.n_nodes();
    let mut x = vec![0.0; d];
    for slice in 0..grid.n_slices() {
        for node in 0..n {
            grid.geometry.node_x(node, &mut x);
            write!(w, "{}", fmt_f64(grid.times[slice]))?;
            for v in &x {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(
                w,
                ",{},{},{}",
                fmt_f64(grid.value(slice, node)),
                grid.policy(slice, node),
                u8::from(grid.stop_flag(slice, node))
            )?;
        }
    }
    Ok(())
}

/// One refinement level of a convergence study at a fixed probe.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub dx: f64,
    pub dt: f64,
    pub probe: Vec<f64>,
    pub value: f64,
    /// value minus the fine-lattice reference.
    pub error: f64,
    /// |previous error| / |error|; empty on the first level and when
    /// both errors sit below the exactness floor.
    pub ratio: Option<f64>,
}

pub fn write_convergence_csv<W: Write>(rows: &[ConvergenceRow], mut w: W) -> io::Result<()> {
    writeln!(w, "dx,dt,probe,value,error,ratio")?;
    for r in rows {
        let probe = r
            .probe
            .iter()
            .map(|v| fmt_f64(*v))
            .collect::<Vec<_>>()
            .join(";");
        write!(
            w,
            "{},{},{},{},{}",
            fmt_f64(r.dx),
            fmt_f64(r.dt),
            probe,
            fmt_f64(r.value),
            fmt_f64(r.error)
        )?;
        match r.ratio {
            Some(q) => writeln!(w, ",{}", fmt_f64(q))?,
            None => writeln!(w, ",")?,
        }
    }
    Ok(())
}

/// Writes one artifact under `dir`, creating the directory if needed,
/// and returns the full path.
pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, bytes)?;
    Ok(path)
}

//! CSV and binary serialization of solved fields.
//!
//! Binary layout (little endian):
//!
//! ```text
//! magic "HJBFIELD" | u32 version | u32 n | u32 d | u64 K | f64 T
//! per axis: f64 lower | f64 upper | u64 nodes
//! f64 a | u8 has_cutoff | f64 cutoff | u64 config hash | u32 len | model name
//! per layer, per node (row-major, last axis fastest): f64 u | f64 u_z[n+d]
//! per layer: u64 nodes with binding cutoff
//! u8 has_policy | per layer, per node: f64 π[n]
//! ```

use std::io::{Read, Write};

use super::diagnostics::PolicyField;
use super::field::{FieldMeta, ValueField};
use super::grid::{Axis, Grid};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HJBFIELD";
const VERSION: u32 = 1;

fn axis_names(n: usize, d: usize) -> Vec<String> {
    let name = |prefix: &str, count: usize, k: usize| {
        if count == 1 {
            prefix.to_string()
        } else {
            format!("{prefix}{}", k + 1)
        }
    };
    (0..n).map(|k| name("x", n, k)).chain((0..d).map(|k| name("y", d, k))).collect()
}

/// One row per node and layer: `t, x…, y…, u, u_x…, u_y…[, pi…]`.
pub fn write_csv(field: &ValueField, policy: Option<&PolicyField>, mut out: impl Write) -> Result<()> {
    let (n, d) = (field.meta.n, field.meta.d);
    let names = axis_names(n, d);
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    header.push("u".into());
    header.extend(names.iter().map(|c| format!("u_{c}")));
    if policy.is_some() {
        header.extend((0..n).map(|k| if n == 1 { "pi".to_string() } else { format!("pi{}", k + 1) }));
    }
    writeln!(out, "{}", header.join(","))?;
    let grid = &field.grid;
    let mut line = String::new();
    for j in 0..grid.layers() {
        let t = grid.time(j);
        for (node, u) in field.layer(j).iter().enumerate() {
            line.clear();
            line.push_str(&t.to_string());
            for c in grid.coords(node) {
                line.push(',');
                line.push_str(&c.to_string());
            }
            line.push(',');
            line.push_str(&u.to_string());
            for g in field.gradient(j, node) {
                line.push(',');
                line.push_str(&g.to_string());
            }
            if let Some(p) = policy {
                for w in p.node_weights(j, node) {
                    line.push(',');
                    line.push_str(&w.to_string());
                }
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

pub fn write_binary(field: &ValueField, policy: Option<&PolicyField>, mut out: impl Write) -> Result<()> {
    let grid = &field.grid;
    let meta = &field.meta;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(meta.n as u32).to_le_bytes())?;
    out.write_all(&(meta.d as u32).to_le_bytes())?;
    out.write_all(&(grid.time_steps as u64).to_le_bytes())?;
    out.write_all(&grid.horizon.to_le_bytes())?;
    for axis in &grid.axes {
        out.write_all(&axis.lower.to_le_bytes())?;
        out.write_all(&axis.upper.to_le_bytes())?;
        out.write_all(&(axis.nodes as u64).to_le_bytes())?;
    }
    out.write_all(&meta.power.to_le_bytes())?;
    out.write_all(&[u8::from(meta.cutoff.is_some())])?;
    out.write_all(&meta.cutoff.unwrap_or(0.0).to_le_bytes())?;
    out.write_all(&meta.config_hash.to_le_bytes())?;
    out.write_all(&(meta.model.len() as u32).to_le_bytes())?;
    out.write_all(meta.model.as_bytes())?;
    let mut buf = Vec::with_capacity(grid.node_count() * (1 + grid.dim()) * 8);
    for j in 0..grid.layers() {
        buf.clear();
        for (node, u) in field.layer(j).iter().enumerate() {
            buf.extend_from_slice(&u.to_le_bytes());
            for g in field.gradient(j, node) {
                buf.extend_from_slice(&g.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    for c in field.cutoff_active() {
        out.write_all(&(*c as u64).to_le_bytes())?;
    }
    match policy {
        None => out.write_all(&[0])?,
        Some(p) => {
            out.write_all(&[1])?;
            for w in p.all_weights() {
                out.write_all(&w.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated field file: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn count(&mut self, what: &str, limit: u64) -> Result<usize> {
        let v = self.u64()?;
        if v > limit {
            return Err(Error::Format(format!("implausible {what}: {v}")));
        }
        Ok(v as usize)
    }
}

/// Reads a field written by [`write_binary`], with the stored policy
/// weights (`n` per node, layer-major) when present.
pub fn read_binary(input: impl Read) -> Result<(ValueField, Option<Vec<f64>>)> {
    let mut r = Reader(input);
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Format("not a field file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported field file version {version}")));
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    if n == 0 || d == 0 || n + d > 16 {
        return Err(Error::Format(format!("implausible dimensions n = {n}, d = {d}")));
    }
    let time_steps = r.count("time step count", 1 << 32)?;
    let horizon = r.f64()?;
    let mut axes = Vec::with_capacity(n + d);
    for _ in 0..n + d {
        let lower = r.f64()?;
        let upper = r.f64()?;
        let nodes = r.count("node count", 1 << 32)?;
        axes.push(Axis { lower, upper, nodes });
    }
    let grid = Grid::new(horizon, time_steps, axes).map_err(|e| Error::Format(e.to_string()))?;
    let power = r.f64()?;
    let has_cutoff = r.u8()? != 0;
    let cutoff = r.f64()?;
    let config_hash = r.u64()?;
    let name_len = r.u32()? as usize;
    if name_len > 4096 {
        return Err(Error::Format(format!("implausible model name length {name_len}")));
    }
    let mut name = vec![0u8; name_len];
    r.0.read_exact(&mut name).map_err(|e| Error::Format(format!("truncated field file: {e}")))?;
    let model = String::from_utf8(name).map_err(|_| Error::Format("model name is not UTF-8".into()))?;

    let total = grid
        .layers()
        .checked_mul(grid.node_count())
        .filter(|t| *t <= 1 << 32)
        .ok_or_else(|| Error::Format("field too large".into()))?;
    let dim = grid.dim();
    let mut values = Vec::with_capacity(total);
    let mut gradients = Vec::with_capacity(total * dim);
    for _ in 0..total {
        values.push(r.f64()?);
        for _ in 0..dim {
            gradients.push(r.f64()?);
        }
    }
    let mut cutoff_active = Vec::with_capacity(grid.layers());
    for _ in 0..grid.layers() {
        cutoff_active.push(r.count("active node count", total as u64)?);
    }
    let policy = if r.u8()? != 0 {
        let mut w = Vec::with_capacity(total * n);
        for _ in 0..total * n {
            w.push(r.f64()?);
        }
        Some(w)
    } else {
        None
    };
    let meta = FieldMeta { model, n, d, power, cutoff: has_cutoff.then_some(cutoff), config_hash };
    let field = ValueField::from_parts(grid, meta, values, gradients, cutoff_active)?;
    Ok((field, policy))
}

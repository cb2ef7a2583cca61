//! Field export: long-format CSV and a small self-describing binary layout.
//!
//! Binary layout (little endian):
//! `b"EQPF"`, `u32` version, `u64` time nodes, `u64` x nodes, `u64` z nodes,
//! six `f64` bounds `t0 t1 x0 x1 z0 z1`, `b"LE"`, then the values as `f64`
//! in row-major `[t][x][z]` order.

use std::io::{self, Read, Write};

use super::solver::PideSolution;

pub const BINARY_MAGIC: &[u8; 4] = b"EQPF";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Theta,
    G,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::Theta => "theta",
            Field::G => "g",
        }
    }

    fn data(self, sol: &PideSolution) -> &[Vec<f64>] {
        match self {
            Field::Theta => &sol.theta,
            Field::G => &sol.g,
        }
    }
}

fn exported_slices(sol: &PideSolution, stride: usize) -> impl Iterator<Item = usize> {
    let nt = sol.grid.n_time();
    let stride = stride.max(1);
    (0..=nt).filter(move |k| k % stride == 0 || *k == nt)
}

fn write_preamble(w: &mut impl Write, preamble: &[String]) -> io::Result<()> {
    for line in preamble {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

/// Columns `t,x,z,<field...>`, one row per node of every `stride`-th time
/// slice (the terminal slice is always included).
pub fn write_csv(sol: &PideSolution, fields: &[Field], mut w: impl Write, preamble: &[String], stride: usize) -> io::Result<()> {
    write_preamble(&mut w, preamble)?;
    write!(w, "t,x,z")?;
    for f in fields {
        write!(w, ",{}", f.name())?;
    }
    writeln!(w)?;
    let grid = &sol.grid;
    let n = grid.n_space();
    for k in exported_slices(sol, stride) {
        let t = grid.time(k);
        for i in 0..n {
            for j in 0..n {
                write!(w, "{:e},{:e},{:e}", t, grid.node(i), grid.node(j))?;
                for f in fields {
                    write!(w, ",{:e}", f.data(sol)[k][grid.index(i, j)])?;
                }
                writeln!(w)?;
            }
        }
    }
    w.flush()
}

pub fn write_binary(sol: &PideSolution, field: Field, mut w: impl Write) -> io::Result<()> {
    let grid = &sol.grid;
    let n = grid.n_space() as u64;
    let (lo, hi) = grid.bounds();
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    for d in [grid.n_time() as u64 + 1, n, n] {
        w.write_all(&d.to_le_bytes())?;
    }
    for b in [0.0, grid.horizon(), lo, hi, lo, hi] {
        w.write_all(&f64::to_le_bytes(b))?;
    }
    w.write_all(b"LE")?;
    for slice in field.data(sol) {
        for v in slice {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryField {
    pub dims: [usize; 3],
    pub bounds: [f64; 6],
    pub values: Vec<f64>,
}

pub fn read_binary(mut r: impl Read) -> io::Result<BinaryField> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != BINARY_VERSION {
        return Err(bad("unsupported version"));
    }
    let mut b8 = [0u8; 8];
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        r.read_exact(&mut b8)?;
        *d = u64::from_le_bytes(b8) as usize;
    }
    let mut bounds = [0.0; 6];
    for b in bounds.iter_mut() {
        r.read_exact(&mut b8)?;
        *b = f64::from_le_bytes(b8);
    }
    let mut tag = [0u8; 2];
    r.read_exact(&mut tag)?;
    if &tag != b"LE" {
        return Err(bad("unsupported endianness tag"));
    }
    let count = dims.iter().product::<usize>();
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    Ok(BinaryField { dims, bounds, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinearStrategy, MarketParams, MarketSpec};
    use crate::pide::{policy_evaluation, StateGrid2D};

    fn sol() -> PideSolution {
        let p = MarketParams::new(MarketSpec::e0()).unwrap();
        let grid = StateGrid2D::new(5, -1.0, 1.0, 4, 1.0).unwrap();
        policy_evaluation(&p, &LinearStrategy::constant(1.0, 0.5), &grid).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let s = sol();
        let mut buf = Vec::new();
        write_binary(&s, Field::Theta, &mut buf).unwrap();
        let back = read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.dims, [5, 5, 5]);
        assert_eq!(back.bounds, [0.0, 1.0, -1.0, 1.0, -1.0, 1.0]);
        assert_eq!(back.values, s.theta.concat());
    }

    #[test]
    fn csv_stride_keeps_terminal_slice() {
        let s = sol();
        let mut buf = Vec::new();
        write_csv(&s, &[Field::Theta, Field::G], &mut buf, &["v1".into()], 3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# v1"));
        assert_eq!(lines.next(), Some("t,x,z,theta,g"));
        // slices 0, 3 and 4
        assert_eq!(lines.count(), 3 * 25);
        let last = text.lines().last().unwrap();
        assert!(last.starts_with("1e0,1e0,1e0,5e-1,1e0"), "{last}");
    }
}

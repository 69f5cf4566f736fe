//! CSV surfaces in shortest round-trip decimal form and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::dual::{Region, ValueSlice};
use crate::engine::{recover_primal, DualSolution};
use crate::error::{Error, Result};

pub const V_HEADER: &str = "t,x,p,v";
pub const W_HEADER: &str = "t,x,q,w";
pub const COVL_HEADER: &str = "t,x,p,covl";
pub const REGION_HEADER: &str = "t,x,region,p_ell";

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// One row per `(x, axis)` node, `x` major, LF line endings.
pub fn slice_csv(header: &str, slice: &ValueSlice) -> String {
    let mut out = String::with_capacity(32 * slice.x_grid.len() * slice.axis_grid.len());
    out.push_str(header);
    out.push('\n');
    let t = slice.time;
    for (j, &x) in slice.x_grid.points().iter().enumerate() {
        let s = slice.section(j);
        for (k, &a) in slice.axis_grid.points().iter().enumerate() {
            out.push_str(&format!("{t},{x},{a},{}\n", s.value(k)));
        }
    }
    out
}

/// `v(t, x, p)`.
pub fn v_csv(sol: &DualSolution, t: f64) -> Result<String> {
    Ok(slice_csv(V_HEADER, recover_primal(sol, t)?))
}

/// `w(t, x, q)`.
pub fn w_csv(sol: &DualSolution, t: f64) -> Result<String> {
    Ok(slice_csv(W_HEADER, sol.dual_at(t)?))
}

/// `co(v v l)(t, x, p)`, defined at exercise dates only.
pub fn covl_csv(sol: &DualSolution, t: f64) -> Result<String> {
    let i = sol.date_index(t)?;
    let co = sol.convexified[i].as_ref().ok_or(Error::UnknownTime(t))?;
    Ok(slice_csv(COVL_HEADER, co))
}

/// Facelift region per x node at an exercise date.
pub fn regions_csv(sol: &DualSolution, t: f64) -> Result<String> {
    let i = sol.date_index(t)?;
    let params = sol.facelift[i].as_ref().ok_or(Error::UnknownTime(t))?;
    let mut out = String::from(REGION_HEADER);
    out.push('\n');
    let t = sol.schedule.dates()[i];
    for (x, p) in sol.x_grid.points().iter().zip(params) {
        let r = match p.region {
            Region::A1 => "A1",
            Region::A2 => "A2",
            Region::A3 => "A3",
        };
        out.push_str(&format!("{t},{x},{r},{}\n", p.p_ell));
    }
    Ok(out)
}

/// Parsed four-column CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: String,
    pub rows: Vec<[f64; 4]>,
}

pub fn parse_csv(text: &str) -> Result<Table> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::InvalidInput("empty csv".into()))?.to_string();
    let rows = lines
        .enumerate()
        .map(|(n, line)| {
            let mut row = [0.0; 4];
            let mut cols = line.split(',');
            for r in row.iter_mut() {
                let c = cols
                    .next()
                    .ok_or_else(|| Error::InvalidInput(format!("line {}: too few columns", n + 2)))?;
                *r = c
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("line {}: bad number `{c}`", n + 2)))?;
            }
            if cols.next().is_some() {
                return Err(Error::InvalidInput(format!("line {}: too many columns", n + 2)));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table { header, rows })
}

/// Writes the `v`, `w` and, at exercise dates, `covl` and region files for
/// date index `i` into `dir`; returns the paths written.
pub fn write_surfaces(sol: &DualSolution, i: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    let t = sol.schedule.dates()[i];
    let mut files = vec![
        (format!("v_{i}.csv"), v_csv(sol, t)?),
        (format!("w_{i}.csv"), w_csv(sol, t)?),
    ];
    if sol.convexified[i].is_some() {
        files.push((format!("covl_{i}.csv"), covl_csv(sol, t)?));
        files.push((format!("regions_{i}.csv"), regions_csv(sol, t)?));
    }
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            write_atomic(&path, body.as_bytes())?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.csv");
        write_atomic(&p, b"one\n").unwrap();
        write_atomic(&p, b"two\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two\n");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn parse_rejects_malformed_rows() {
        assert!(parse_csv("").is_err());
        assert!(parse_csv("t,x,p,v\n1,2,3\n").is_err());
        assert!(parse_csv("t,x,p,v\n1,2,3,4,5\n").is_err());
        assert!(parse_csv("t,x,p,v\n1,2,a,4\n").is_err());
        let t = parse_csv("t,x,p,v\n0,30,0.1,1e-3\n").unwrap();
        assert_eq!(t.rows, vec![[0.0, 30.0, 0.1, 1e-3]]);
    }
}

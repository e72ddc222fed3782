//! Run artifacts: the diagnostics CSV, binary field snapshots with JSON
//! sidecars, and the summary file.
//!
//! A run directory holds
//! - `timeseries.csv` with the columns of [`columns`];
//! - `extras.csv`, per-record series that are not part of the main table;
//! - `fields/step_NNNNNNNN.bin` + `.json` snapshots every `fields_every` steps;
//! - `profile_nf.bin`, `profile_rho.bin` for finalized limit profiles;
//! - `config.toml`, the fully resolved configuration;
//! - `summary.json`, written last, also after a failed run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::diagnostics::DiagnosticsRow;
use crate::error::{Error, Result};
use crate::sim::{ExtraRow, RunOutput, Simulation, Summary};
use crate::spectral::{ScalarField, TorusGrid};

pub const BASE_COLUMNS: [&str; 26] = [
    "t",
    "E",
    "D",
    "H",
    "mass",
    "px",
    "py",
    "mean_ux",
    "mean_uy",
    "uinf_x",
    "uinf_y",
    "energy_residual",
    "modulated_residual",
    "grad_u_L2",
    "grad2_u_L2",
    "grad_P_L2",
    "udot_L2",
    "nf_Linf",
    "jf_Linf",
    "ef_Linf",
    "grad_u_Linf",
    "lip_budget",
    "entropy",
    "w1_bound",
    "nf_profile_Hm1",
    "pressure_cross_term",
];

pub const DENSITY_COLUMNS: [&str; 4] = ["rho_min", "rho_max", "rho_mean", "rho_profile_Hm1"];

pub const EXTRA_COLUMNS: [&str; 7] = [
    "t",
    "u_deviation_L2",
    "particle_spread",
    "thermal_second_moment",
    "entropy_bound",
    "quadrature_error",
    "flux_deficit_L2",
];

/// Header of the time series; the density columns appear only when the
/// rows carry them.
pub fn columns(with_density: bool) -> Vec<&'static str> {
    let mut c = BASE_COLUMNS.to_vec();
    if with_density {
        c.extend(DENSITY_COLUMNS);
    }
    c
}

fn row_values(r: &DiagnosticsRow) -> Vec<f64> {
    let mut v = vec![
        r.t,
        r.energy,
        r.dissipation,
        r.modulated,
        r.mass,
        r.momentum[0],
        r.momentum[1],
        r.mean_u[0],
        r.mean_u[1],
        r.u_inf[0],
        r.u_inf[1],
        r.energy_residual,
        r.modulated_residual,
        r.grad_u_l2,
        r.grad2_u_l2,
        r.grad_p_l2,
        r.udot_l2,
        r.nf_linf,
        r.jf_linf,
        r.ef_linf,
        r.grad_u_linf,
        r.lip_budget,
        r.entropy,
        r.w1_bound,
        r.nf_profile_hm1,
        r.pressure_cross_term,
    ];
    if let Some(d) = r.density {
        v.extend([d.rho_min, d.rho_max, d.rho_mean, d.rho_profile_hm1]);
    }
    v
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.into())
}

fn write_table(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        // `Display` for f64 is the shortest string that parses back exactly
        w.write_record(row.iter().map(|x| x.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timeseries(path: &Path, rows: &[DiagnosticsRow]) -> Result<()> {
    let with_density = rows.first().is_some_and(|r| r.density.is_some());
    write_table(path, &columns(with_density), rows.iter().map(row_values))
}

pub fn write_extras(path: &Path, rows: &[DiagnosticsRow], extras: &[ExtraRow]) -> Result<()> {
    write_table(
        path,
        &EXTRA_COLUMNS,
        rows.iter().zip(extras).map(|(r, e)| {
            vec![
                r.t,
                e.u_deviation_l2,
                e.particle_spread,
                e.thermal_second_moment,
                e.entropy_bound,
                e.quadrature_error,
                e.flux_deficit_l2,
            ]
        }),
    )
}

/// Reads `(t, column)` pairs from a time-series CSV.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column `{name}` not found in {}", path.display())))
    };
    let (it, ic) = (find("t")?, find(column)?);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Config(format!("row {}: `{}` is not a number", line + 1, &rec[i])))
        };
        out.push((parse(it)?, parse(ic)?));
    }
    Ok(out)
}

/// JSON sidecar of a binary snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub time: f64,
    pub grid_n: usize,
    pub length: f64,
    pub field_names: Vec<String>,
    pub dtype: String,
    pub layout: String,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes the fields back to back as row-major little-endian `f64` to `path`
/// and the header to the `.json` next to it.
pub fn write_field_snapshot(path: &Path, fields: &[(&str, &ScalarField)], t: f64) -> Result<SnapshotHeader> {
    let Some((_, first)) = fields.first() else {
        return Err(Error::Config("snapshot needs at least one field".into()));
    };
    let grid = first.grid().clone();
    for (_, f) in fields {
        f.check_grid(first)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for (_, f) in fields {
        for v in f.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    let header = SnapshotHeader {
        time: t,
        grid_n: grid.n(),
        length: grid.length(),
        field_names: fields.iter().map(|(n, _)| n.to_string()).collect(),
        dtype: "f64le".into(),
        layout: "row-major".into(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(header)
}

pub fn read_field_snapshot(path: &Path) -> Result<(SnapshotHeader, Vec<ScalarField>)> {
    let header: SnapshotHeader = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if header.dtype != "f64le" || header.layout != "row-major" {
        return Err(Error::Config(format!(
            "unsupported snapshot encoding {}/{}",
            header.dtype, header.layout
        )));
    }
    let bytes = fs::read(path)?;
    let grid = TorusGrid::new(header.grid_n, header.length)?;
    let per_field = grid.len();
    let expected = per_field * header.field_names.len() * 8;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let fields = bytes
        .chunks_exact(per_field * 8)
        .map(|chunk| {
            let values = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            ScalarField::new(grid.clone(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, fields))
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(summary)?)?;
    Ok(())
}

pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_timeseries(&dir.join("timeseries.csv"), &out.rows)?;
    write_extras(&dir.join("extras.csv"), &out.rows, &out.extras)?;
    let t = out.summary.t_reached;
    if let Some(p) = &out.profile {
        write_field_snapshot(&dir.join("profile_nf.bin"), &[("n_inf", p)], t)?;
    }
    if let Some(p) = &out.rho_profile {
        write_field_snapshot(&dir.join("profile_rho.bin"), &[("rho_inf", p)], t)?;
    }
    write_summary(&dir.join("summary.json"), &out.summary)
}

/// Runs `config`, writing every artifact under `dir`. On a mid-run failure
/// the records gathered so far and a summary carrying the error are written
/// before the error is returned.
pub fn run_to_dir(config: SimConfig, dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), config.to_toml()?)?;
    let mut sim = Simulation::new(config)?;
    let fields_dir = dir.join("fields");
    if sim.config.output.fields_every > 0 {
        fs::create_dir_all(&fields_dir)?;
    }
    let result = sim.run_with(|snap| {
        let path = fields_dir.join(format!("step_{:08}.bin", snap.step));
        write_field_snapshot(&path, &snap.fields, snap.t).map(|_| ())
    });
    let out = sim.finish(result.as_ref().err());
    write_outputs(dir, &out)?;
    result.map(|()| out.summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::TorusGrid;

    #[test]
    fn header_order() {
        let c = columns(true);
        assert_eq!(c.len(), 30);
        assert_eq!(c.join(","), "t,E,D,H,mass,px,py,mean_ux,mean_uy,uinf_x,uinf_y,energy_residual,modulated_residual,grad_u_L2,grad2_u_L2,grad_P_L2,udot_L2,nf_Linf,jf_Linf,ef_Linf,grad_u_Linf,lip_budget,entropy,w1_bound,nf_profile_Hm1,pressure_cross_term,rho_min,rho_max,rho_mean,rho_profile_Hm1");
    }

    #[test]
    fn one_row_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ts.csv");
        let row = DiagnosticsRow {
            t: 0.1,
            modulated: 1.0 / 3.0,
            ..Default::default()
        };
        write_timeseries(&path, std::slice::from_ref(&row)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_column(&path, "H").unwrap(), vec![(0.1, 1.0 / 3.0)]);
        assert!(matches!(read_column(&path, "rho_min"), Err(Error::Config(_))));
    }

    #[test]
    fn zero_snapshot_size() {
        let dir = tempfile::tempdir().unwrap();
        let grid = TorusGrid::unit(16).unwrap();
        let f = ScalarField::zeros(&grid);
        let path = dir.path().join("z.bin");
        write_field_snapshot(&path, &[("z", &f)], 0.0).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 2048);
        assert!(sidecar_path(&path).exists());
    }

    #[test]
    fn snapshot_bitwise_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = TorusGrid::new(8, 2.5).unwrap();
        let a = ScalarField::from_fn(&grid, |x, y| (x * 1.7).sin() * y.exp() + 1e-300);
        let b = a.map(|v| -v / 3.0);
        let path = dir.path().join("s.bin");
        let h = write_field_snapshot(&path, &[("a", &a), ("b", &b)], 1.25).unwrap();
        let (h2, fields) = read_field_snapshot(&path).unwrap();
        assert_eq!(h, h2);
        assert_eq!(h2.field_names, ["a", "b"]);
        for (orig, back) in [&a, &b].into_iter().zip(&fields) {
            let bits = |f: &ScalarField| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(orig), bits(back));
        }
    }
}

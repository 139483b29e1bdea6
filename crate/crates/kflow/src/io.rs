//! JSON snapshots and CSV time series.

use std::fs;
use std::path::{Path, PathBuf};

use kahler_flow_core::flow::{Background, FlowMode, FlowState};
use kahler_flow_core::geometry::{GeometryDescriptor, ModelGeometry, PotentialField};
use serde::{Deserialize, Serialize};

use crate::error::{KflowError, Result};

/// Environment variable naming the directory that receives outputs.
pub const OUTPUT_ROOT_VAR: &str = "KFLOW_OUTPUT_ROOT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("kflow-out"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackgroundRecord {
    pub mode: FlowMode,
    pub field: [f64; 2],
    pub potential: Vec<f64>,
}

/// A flow state together with everything needed to rebuild its context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    pub geometry: GeometryDescriptor,
    pub background: BackgroundRecord,
    pub state: FlowState,
}

impl Snapshot {
    pub fn new(geom: &ModelGeometry, background: &Background, state: FlowState) -> Self {
        Snapshot {
            schema_version: crate::config::SCHEMA_VERSION,
            geometry: geom.descriptor.clone(),
            background: BackgroundRecord { mode: background.mode, field: background.field, potential: background.base.coeffs.clone() },
            state,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s: Snapshot = serde_json::from_str(&fs::read_to_string(path)?)?;
        if s.schema_version != crate::config::SCHEMA_VERSION {
            return Err(KflowError::Config(format!("snapshot schema_version {} is not supported", s.schema_version)));
        }
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Rebuild the geometry and background; the state is checked against both.
    pub fn restore(&self) -> Result<(ModelGeometry, Background)> {
        let geom = self.geometry.build()?;
        geom.check(self.state.phi.geometry)?;
        let base = PotentialField::from_coeffs(&geom, self.background.potential.clone())?;
        let bg = match self.background.mode {
            FlowMode::Ke => Background::ke(&geom),
            FlowMode::Soliton => Background::soliton_from(&geom, self.background.field, &base)?,
        };
        Ok((geom, bg))
    }
}

/// Per-run time series in the layout consumed by plotting scripts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunSeries {
    pub scenario: String,
    pub t: Vec<f64>,
    pub h0: Vec<f64>,
    pub hk: Vec<f64>,
    pub htilde0: Vec<f64>,
    /// NaN where the state was not gauge-fixed.
    pub gauge_norm: Vec<f64>,
    pub c: Vec<f64>,
    pub raw_norm: Vec<f64>,
    pub raw_lambda1: Vec<f64>,
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

/// `t, H0, Hk, Htilde0, gauge_norm, c_t`.
pub fn write_decay_csv(path: &Path, s: &RunSeries) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "H0", "Hk", "Htilde0", "gauge_norm", "c_t"])?;
    for i in 0..s.t.len() {
        w.serialize((s.t[i], s.h0[i], s.hk[i], s.htilde0[i], s.gauge_norm[i], s.c[i]))?;
    }
    w.flush()?;
    Ok(())
}

/// `t, log_H0`.
pub fn write_log_h0_csv(path: &Path, s: &RunSeries) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "log_H0"])?;
    for i in 0..s.t.len() {
        w.serialize((s.t[i], s.h0[i].ln()))?;
    }
    w.flush()?;
    Ok(())
}

/// `t, raw_norm, raw_lambda1, gauge_norm`.
pub fn write_gauge_csv(path: &Path, s: &RunSeries) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "raw_norm", "raw_lambda1", "gauge_norm"])?;
    for i in 0..s.t.len() {
        w.serialize((s.t[i], s.raw_norm[i], s.raw_lambda1[i], s.gauge_norm[i]))?;
    }
    w.flush()?;
    Ok(())
}

/// Long format `scenario, t, quantity, value` over several runs.
pub fn write_long_csv(path: &Path, runs: &[&RunSeries]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["scenario", "t", "quantity", "value"])?;
    for s in runs {
        let columns: [(&str, &Vec<f64>); 8] = [
            ("H0", &s.h0),
            ("Hk", &s.hk),
            ("Htilde0", &s.htilde0),
            ("gauge_norm", &s.gauge_norm),
            ("c_t", &s.c),
            ("raw_norm", &s.raw_norm),
            ("raw_lambda1", &s.raw_lambda1),
            ("log_H0", &s.h0.iter().map(|v| v.ln()).collect()),
        ];
        for i in 0..s.t.len() {
            for (name, col) in &columns {
                w.serialize((&s.scenario, s.t[i], name, col[i]))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write the per-figure CSVs for each run and the combined long table.
pub fn emit_plots_data(dir: &Path, runs: &[&RunSeries]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for s in runs {
        for (suffix, f) in [
            ("decay", write_decay_csv as fn(&Path, &RunSeries) -> Result<()>),
            ("log_h0", write_log_h0_csv),
            ("gauge", write_gauge_csv),
        ] {
            let p = dir.join(format!("{}_{suffix}.csv", s.scenario));
            f(&p, s)?;
            out.push(p);
        }
    }
    let p = dir.join("bundle.csv");
    write_long_csv(&p, runs)?;
    out.push(p);
    Ok(out)
}

//! CSV reports.

use std::io::{Read, Write};

use hisvit_core::analysis::ComplexityQuery;
use hisvit_core::train::{SceneEvaluation, StepLog};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row of the `macs` sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacsRow {
    pub kind: String,
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub d: usize,
    pub t: Option<usize>,
    pub h: Option<usize>,
    pub w: Option<usize>,
    pub rho: Option<usize>,
    pub analytic_macs: u64,
    /// Empty for kinds that are not executable.
    pub instrumented_macs: Option<u64>,
    pub params: Option<usize>,
}

impl MacsRow {
    pub fn new(q: &ComplexityQuery, analytic: u64, instrumented: Option<u64>, params: Option<usize>) -> Self {
        MacsRow {
            kind: q.kind.to_string(),
            frames: q.frames,
            height: q.height,
            width: q.width,
            d: q.d,
            t: q.t,
            h: q.h,
            w: q.w,
            rho: q.rho,
            analytic_macs: analytic,
            instrumented_macs: instrumented,
            params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss: f64,
    pub psnr: Option<f64>,
}

impl From<&StepLog> for TrainLogRow {
    fn from(l: &StepLog) -> Self {
        TrainLogRow {
            step: l.step,
            loss: l.loss,
            psnr: l.psnr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scene: String,
    pub psnr: f64,
    pub ssim: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
    pub margin_db: f64,
}

impl From<&SceneEvaluation> for EvalRow {
    fn from(e: &SceneEvaluation) -> Self {
        EvalRow {
            scene: e.name.clone(),
            psnr: e.model.psnr_db,
            ssim: e.model.ssim,
            baseline_psnr: e.baseline.psnr_db,
            baseline_ssim: e.baseline.ssim,
            margin_db: e.margin_db(),
        }
    }
}

pub fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, T: DeserializeOwned>(r: R) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_reader(r);
    let rows = rd.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok(rows)
}

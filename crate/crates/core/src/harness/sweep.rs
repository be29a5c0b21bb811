use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::loss::AttackGoal;
use crate::nn::Model;
use crate::pm::{pm_run, PmConfig};
use crate::search::AttackError;
use crate::tensor::Tensor;

/// One barycentric grid point: weights `(i, j, k) / R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub loss: f64,
    pub success: bool,
}

impl SweepRow {
    pub fn weights(&self) -> [f64; 3] {
        let r = (self.i + self.j + self.k) as f64;
        [self.i as f64 / r, self.j as f64 / r, self.k as f64 / r]
    }
}

/// Victim loss over the three-model weight simplex at resolution `R`.
/// Every point runs the PM from `δ = 0`.
pub fn triangle_sweep(
    x: &Tensor,
    goal: &AttackGoal,
    surrogates: &[Model],
    victim: &Model,
    resolution: usize,
    pm: &PmConfig,
) -> Result<Vec<SweepRow>, AttackError> {
    if surrogates.len() != 3 {
        return Err(AttackError::Config(format!(
            "the sweep needs exactly 3 surrogates, got {}",
            surrogates.len()
        )));
    }
    if resolution == 0 {
        return Err(AttackError::Config("resolution must be positive".into()));
    }
    let r = resolution;
    let grid: Vec<(usize, usize, usize)> = (0..=r)
        .flat_map(|i| (0..=r - i).map(move |j| (i, j, r - i - j)))
        .collect();
    let zero = Tensor::zeros(x.shape());
    grid.into_par_iter()
        .map(|(i, j, k)| {
            let w = [
                i as f64 / r as f64,
                j as f64 / r as f64,
                k as f64 / r as f64,
            ];
            let out = pm_run(x, goal, surrogates, &w, &zero, pm)?;
            let z = victim.forward(&out.x_star)?;
            Ok(SweepRow {
                i,
                j,
                k,
                loss: pm.loss.value(z.data(), goal)?,
                success: goal.is_met_by_logits(z.data()),
            })
        })
        .collect()
}

/// CSV with columns `i,j,k,loss,success`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "j", "k", "loss", "success"])?;
    for r in rows {
        w.write_record([
            r.i.to_string(),
            r.j.to_string(),
            r.k.to_string(),
            format!("{}", r.loss),
            u8::from(r.success).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

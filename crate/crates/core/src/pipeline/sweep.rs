use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::evaluate::csv_error;
use super::objective::Objective;
use crate::error::{Error, Result};
use crate::volgeom::RigidParams;

/// One of the six rigid parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Tx,
    Ty,
    Tz,
    Rx,
    Ry,
    Rz,
}

impl Axis {
    pub const ALL: [Axis; 6] = [Axis::Tx, Axis::Ty, Axis::Tz, Axis::Rx, Axis::Ry, Axis::Rz];

    pub fn index(self) -> usize {
        Axis::ALL.iter().position(|a| *a == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        ["tx", "ty", "tz", "rx", "ry", "rz"][self.index()]
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown axis '{s}' (expected tx, ty, tz, rx, ry or rz)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: Axis,
    pub offsets: Vec<f64>,
    /// Metric name and its value at each offset.
    pub columns: Vec<(String, Vec<f64>)>,
}

impl SweepTable {
    /// Offset with the lowest value in `column`.
    pub fn argmin(&self, column: usize) -> f64 {
        let values = &self.columns[column].1;
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if *v < values[best] {
                best = i;
            }
        }
        self.offsets[best]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![self.axis.name().to_owned()];
        header.extend(self.columns.iter().map(|c| c.0.clone()));
        w.write_record(&header).map_err(csv_error)?;
        for (i, off) in self.offsets.iter().enumerate() {
            let mut row = vec![off.to_string()];
            row.extend(self.columns.iter().map(|c| c.1[i].to_string()));
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates each objective with `axis` of `base` offset over `steps`
/// evenly spaced values in `[lo, hi]`.
pub fn metric_sweep(
    objectives: &[(String, &Objective<'_>)],
    base: &RigidParams,
    axis: Axis,
    lo: f64,
    hi: f64,
    steps: usize,
) -> Result<SweepTable> {
    if !(hi > lo) || steps < 2 || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid("sweep needs lo < hi and at least two steps"));
    }
    let offsets: Vec<f64> = (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect();
    let mut columns = Vec::with_capacity(objectives.len());
    for (name, objective) in objectives {
        let values = offsets
            .iter()
            .map(|off| {
                let mut p = base.to_array();
                p[axis.index()] += off;
                objective.value(&RigidParams::from_array(p))
            })
            .collect::<Result<Vec<f64>>>()?;
        columns.push((name.clone(), values));
    }
    Ok(SweepTable { axis, offsets, columns })
}

//! Population frames and sample datasets.

use serde::{Deserialize, Serialize};

use crate::design::SampleIndex;
use crate::error::{Error, Result};

/// Full-population values of the response `y`, risk variable `x` and
/// auxiliary variable `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationFrame {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl PopulationFrame {
    pub fn new(y: Vec<f64>, x: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        if y.len() != x.len() || y.len() != z.len() {
            return Err(Error::InvalidArgument(format!(
                "frame columns differ in length: y {}, x {}, z {}",
                y.len(),
                x.len(),
                z.len()
            )));
        }
        Ok(Self { y, x, z })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Sample records for the given units.
    pub fn sample(&self, sample: &SampleIndex) -> SurveyDataset {
        let pick = |v: &[f64]| sample.units().iter().map(|&u| v[u]).collect::<Vec<_>>();
        SurveyDataset {
            y: pick(&self.y),
            x: pick(&self.x),
            z: Some(pick(&self.z)),
            sample: sample.clone(),
        }
    }
}

/// Per-unit `(y, x, z)` records of a sample together with the unit labels
/// the design uses for inclusion probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyDataset {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Option<Vec<f64>>,
    pub sample: SampleIndex,
}

impl SurveyDataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, z: Option<Vec<f64>>) -> Result<Self> {
        let n = y.len();
        if x.len() != n || z.as_ref().is_some_and(|z| z.len() != n) {
            return Err(Error::InvalidArgument("dataset columns differ in length".into()));
        }
        Ok(Self {
            y,
            x,
            z,
            sample: SampleIndex::first(n),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

//! HF/LF model pairs with call accounting, and the two benchmark families.

mod example1;
mod shear_building;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use example1::{example1_hf, example1_pair, Example1Config};
pub use shear_building::{shear_building_pair, ShearBuilding, ShearBuildingConfig};

pub type ResponseFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Hf,
    Lf,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Hf => "HF",
            Side::Lf => "LF",
        })
    }
}

/// Failure indicator: 1 iff the response is at or below zero.
#[inline]
pub fn indicator(response: f64) -> bool {
    response <= 0.0
}

/// HF and LF responses over a shared input space. Counters are atomic, so a
/// pair can be evaluated from several threads.
pub struct ModelPair {
    hf: ResponseFn,
    lf: ResponseFn,
    dim: usize,
    cost_hf: f64,
    cost_lf: f64,
    hf_calls: AtomicU64,
    lf_calls: AtomicU64,
}

impl fmt::Debug for ModelPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelPair")
            .field("dim", &self.dim)
            .field("cost_hf", &self.cost_hf)
            .field("cost_lf", &self.cost_lf)
            .field("hf_calls", &self.calls(Side::Hf))
            .field("lf_calls", &self.calls(Side::Lf))
            .finish()
    }
}

impl ModelPair {
    pub fn new(dim: usize, hf: ResponseFn, lf: ResponseFn, cost_hf: f64, cost_lf: f64) -> Result<Self> {
        if dim == 0 || !(cost_hf > 0.0) || !(cost_lf > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "model pair needs dim >= 1 and positive costs, got dim {dim}, costs ({cost_hf}, {cost_lf})"
            )));
        }
        Ok(Self { hf, lf, dim, cost_hf, cost_lf, hf_calls: AtomicU64::new(0), lf_calls: AtomicU64::new(0) })
    }

    /// Same response functions, counters reset to zero.
    pub fn fresh(&self) -> Self {
        Self {
            hf: Arc::clone(&self.hf),
            lf: Arc::clone(&self.lf),
            dim: self.dim,
            cost_hf: self.cost_hf,
            cost_lf: self.cost_lf,
            hf_calls: AtomicU64::new(0),
            lf_calls: AtomicU64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cost(&self, side: Side) -> f64 {
        match side {
            Side::Hf => self.cost_hf,
            Side::Lf => self.cost_lf,
        }
    }

    pub fn calls(&self, side: Side) -> u64 {
        match side {
            Side::Hf => self.hf_calls.load(Ordering::Relaxed),
            Side::Lf => self.lf_calls.load(Ordering::Relaxed),
        }
    }

    /// Total cost spent so far in model-cost units.
    pub fn spent(&self) -> f64 {
        self.cost_hf * self.calls(Side::Hf) as f64 + self.cost_lf * self.calls(Side::Lf) as f64
    }

    pub fn evaluate(&self, side: Side, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
        let (f, counter) = match side {
            Side::Hf => (&self.hf, &self.hf_calls),
            Side::Lf => (&self.lf, &self.lf_calls),
        };
        counter.fetch_add(1, Ordering::Relaxed);
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteResponse { side, x: x.to_vec() })
        }
    }

    pub fn hf(&self, x: &[f64]) -> Result<f64> {
        self.evaluate(Side::Hf, x)
    }

    pub fn lf(&self, x: &[f64]) -> Result<f64> {
        self.evaluate(Side::Lf, x)
    }
}

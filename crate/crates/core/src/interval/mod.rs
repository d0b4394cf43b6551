//! Interval arithmetic over matrices, and interval bound propagation through
//! networks whose parameters range over a box.
//!
//! All arithmetic is plain `f64` without outward rounding: bounds are sound in
//! real arithmetic, and agree with floating-point evaluation up to rounding.

mod ibp;
mod spec;

pub use ibp::{ibp_forward, worst_case_logits, IbpTape, LidBox};
pub use spec::{point_spec, point_spec_samples, spec_bound, spec_bound_samples, spec_on_logits, SpecKind};

pub(crate) use spec::soft_bound_and_grad;

use crate::nn::Activation;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidArgument(format!("[{lo}, {hi}] is not an interval")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// A row-major matrix of intervals stored as separate bound arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTensor {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl IntervalTensor {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if lower.len() != rows * cols || upper.len() != rows * cols {
            return Err(Error::Shape(format!(
                "bounds of length {}/{} do not form a {rows}×{cols} matrix",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::InvalidArgument(format!(
                "entry {i}: lower {} exceeds upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(IntervalTensor { lower, upper, rows, cols })
    }

    pub fn point(values: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        IntervalTensor::new(values.clone(), values, rows, cols)
    }

    /// A column vector.
    pub fn column(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = lower.len();
        IntervalTensor::new(lower, upper, n, 1)
    }

    pub fn get(&self, r: usize, c: usize) -> Interval {
        let i = r * self.cols + c;
        Interval { lo: self.lower[i], hi: self.upper[i] }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.len()
            && values
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }
}

pub fn imat_add(a: &IntervalTensor, b: &IntervalTensor) -> Result<IntervalTensor> {
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(Error::Shape(format!(
            "cannot add {}×{} and {}×{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(IntervalTensor {
        lower: a.lower.iter().zip(&b.lower).map(|(x, y)| x + y).collect(),
        upper: a.upper.iter().zip(&b.upper).map(|(x, y)| x + y).collect(),
        rows: a.rows,
        cols: a.cols,
    })
}

/// Rump's midpoint-radius product:
/// `C = AμBμ ∓ (|Aμ|Br + Ar|Bμ| + ArBr)`.
pub fn imat_mul(a: &IntervalTensor, b: &IntervalTensor) -> Result<IntervalTensor> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "cannot multiply {}×{} by {}×{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mid = |t: &IntervalTensor| -> (Vec<f64>, Vec<f64>) {
        t.lower
            .iter()
            .zip(&t.upper)
            .map(|(l, u)| ((u + l) / 2.0, (u - l) / 2.0))
            .unzip()
    };
    let (am, ar) = mid(a);
    let (bm, br) = mid(b);
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut lower = vec![0.0; n * m];
    let mut upper = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut c = 0.0;
            let mut r = 0.0;
            for t in 0..k {
                let (x, xr) = (am[i * k + t], ar[i * k + t]);
                let (y, yr) = (bm[t * m + j], br[t * m + j]);
                c += x * y;
                r += x.abs() * yr + xr * y.abs() + xr * yr;
            }
            lower[i * m + j] = c - r;
            upper[i * m + j] = c + r;
        }
    }
    Ok(IntervalTensor { lower, upper, rows: n, cols: m })
}

/// Elementwise monotone activation of both bounds.
pub fn act_prop(z: &IntervalTensor, activation: Activation) -> Result<IntervalTensor> {
    if !activation.is_monotone() {
        return Err(Error::InvalidArgument(format!(
            "activation {activation:?} is not monotone"
        )));
    }
    Ok(IntervalTensor {
        lower: z.lower.iter().map(|&v| activation.apply(v)).collect(),
        upper: z.upper.iter().map(|&v| activation.apply(v)).collect(),
        rows: z.rows,
        cols: z.cols,
    })
}

use serde::{Deserialize, Serialize};

use super::IntervalTensor;
use crate::nn::{NetworkSpec, ParamVector};
use crate::rng::Fnv64;
use crate::{Error, Result};

/// A box `[lower, upper]` in parameter space around nominal parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    nominal: ParamVector,
}

impl LidBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nominal: ParamVector) -> Result<Self> {
        if lower.len() != nominal.len() || upper.len() != nominal.len() {
            return Err(Error::Shape("box bounds and nominal differ in length".into()));
        }
        for i in 0..nominal.len() {
            let (l, u, t) = (lower[i], upper[i], nominal[i]);
            if !(l.is_finite() && u.is_finite() && t.is_finite()) {
                return Err(Error::InvalidArgument(format!("coordinate {i} is not finite")));
            }
            if !(l <= t && t <= u) {
                return Err(Error::OutsideBox { index: i });
            }
        }
        Ok(LidBox { lower, upper, nominal })
    }

    pub fn zero_width(theta: &ParamVector) -> Self {
        LidBox {
            lower: theta.0.clone(),
            upper: theta.0.clone(),
            nominal: theta.clone(),
        }
    }

    /// `[θ − r, θ + r]`.
    pub fn around(theta: &ParamVector, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("radius {radius} is invalid")));
        }
        LidBox::new(
            theta.iter().map(|t| t - radius).collect(),
            theta.iter().map(|t| t + radius).collect(),
            theta.clone(),
        )
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn nominal(&self) -> &ParamVector {
        &self.nominal
    }

    pub fn len(&self) -> usize {
        self.nominal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nominal.is_empty()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.len()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| l <= t && t <= u)
    }

    /// First coordinate outside the box, if any.
    pub fn first_violation(&self, theta: &[f64]) -> Option<usize> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .position(|(t, (l, u))| !(l <= t && t <= u))
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn is_superset_of(&self, other: &LidBox) -> bool {
        self.len() == other.len()
            && (0..self.len()).all(|i| self.lower[i] <= other.lower[i] && other.upper[i] <= self.upper[i])
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        h.write_f64s(&self.lower);
        h.write_f64s(&self.upper);
        h.write_f64s(&self.nominal);
        h.finish()
    }

    pub(crate) fn bounds_mut(&mut self) -> (&mut [f64], &mut [f64], &ParamVector) {
        (&mut self.lower, &mut self.upper, &self.nominal)
    }

    pub(crate) fn from_parts_unchecked(lower: Vec<f64>, upper: Vec<f64>, nominal: ParamVector) -> Self {
        LidBox { lower, upper, nominal }
    }

    pub fn check_layout(&self, net: &NetworkSpec) -> Result<()> {
        if self.len() != net.param_count() {
            return Err(Error::Shape(format!(
                "box has {} coordinates, network has {} parameters",
                self.len(),
                net.param_count()
            )));
        }
        Ok(())
    }
}

const LANES: usize = 4;

/// One layer of the Rump product with bias, fused.
/// Returns pre-activation bounds given input midpoint/radius.
#[inline]
fn layer_bounds(
    wl: &[f64],
    wu: &[f64],
    bl: &[f64],
    bu: &[f64],
    zm: &[f64],
    zr: &[f64],
    lo: &mut Vec<f64>,
    hi: &mut Vec<f64>,
) {
    let n = zm.len();
    // |zμ| + zr, the factor multiplying the weight radius
    let za: Vec<f64> = zm.iter().zip(zr).map(|(m, r)| m.abs() + r).collect();
    lo.clear();
    hi.clear();
    for (i, (rl, ru)) in wl.chunks_exact(n).zip(wu.chunks_exact(n)).enumerate() {
        // four independent accumulators so the loop vectorizes
        let mut c = [0.0; LANES];
        let mut rad = [0.0; LANES];
        let split = n - n % LANES;
        for j in (0..split).step_by(LANES) {
            for k in 0..LANES {
                let m = 0.5 * (ru[j + k] + rl[j + k]);
                let r = 0.5 * (ru[j + k] - rl[j + k]);
                c[k] += m * zm[j + k];
                rad[k] += m.abs() * zr[j + k] + r * za[j + k];
            }
        }
        for j in split..n {
            let m = 0.5 * (ru[j] + rl[j]);
            let r = 0.5 * (ru[j] - rl[j]);
            c[0] += m * zm[j];
            rad[0] += m.abs() * zr[j] + r * za[j];
        }
        let c = (c[0] + c[1]) + (c[2] + c[3]);
        let rad = (rad[0] + rad[1]) + (rad[2] + rad[3]);
        lo.push(c - rad + bl[i]);
        hi.push(c + rad + bu[i]);
    }
}

/// Bounds on the logits of `net` at `x` over every parameter vector in the box.
pub fn ibp_forward(net: &NetworkSpec, domain: &LidBox, x: &[f64]) -> Result<IntervalTensor> {
    domain.check_layout(net)?;
    net.check_input(x)?;
    let (lo, hi) = ibp_bounds(net, domain.lower(), domain.upper(), x);
    let n = lo.len();
    Ok(IntervalTensor { lower: lo, upper: hi, rows: n, cols: 1 })
}

pub(crate) fn ibp_bounds(net: &NetworkSpec, lower: &[f64], upper: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let width = net.max_width();
    let mut zm = x.to_vec();
    let mut zr = vec![0.0; x.len()];
    let mut lo = Vec::with_capacity(width);
    let mut hi = Vec::with_capacity(width);
    let last = net.layers().len() - 1;
    for (k, (l, off)) in net.layers().iter().zip(net.offsets()).enumerate() {
        layer_bounds(
            &lower[off.weights..off.biases],
            &upper[off.weights..off.biases],
            &lower[off.biases..off.end],
            &upper[off.biases..off.end],
            &zm,
            &zr,
            &mut lo,
            &mut hi,
        );
        if k == last {
            break;
        }
        zm.clear();
        zr.clear();
        for (&a, &b) in lo.iter().zip(&hi) {
            let (a, b) = (l.activation.apply(a), l.activation.apply(b));
            zm.push(0.5 * (a + b));
            zr.push(0.5 * (b - a));
        }
    }
    (lo, hi)
}

/// Logits with the true class at its lower bound and every other class at its
/// upper bound.
pub fn worst_case_logits(bounds: &IntervalTensor, y: usize) -> Result<Vec<f64>> {
    if y >= bounds.len() {
        return Err(Error::InvalidArgument(format!(
            "class {y} out of range for {} logits",
            bounds.len()
        )));
    }
    Ok(worst_from(&bounds.lower, &bounds.upper, y))
}

pub(crate) fn worst_from(lo: &[f64], hi: &[f64], y: usize) -> Vec<f64> {
    let mut w = hi.to_vec();
    w[y] = lo[y];
    w
}

/// Per-layer intermediate values of one IBP pass, kept for the backward pass.
pub struct IbpTape {
    /// Input midpoint/radius of each layer.
    zm: Vec<Vec<f64>>,
    zr: Vec<Vec<f64>>,
    /// Pre-activation bounds of each layer.
    lo: Vec<Vec<f64>>,
    hi: Vec<Vec<f64>>,
}

impl IbpTape {
    pub fn logit_lower(&self) -> &[f64] {
        self.lo.last().expect("nonempty tape")
    }

    pub fn logit_upper(&self) -> &[f64] {
        self.hi.last().expect("nonempty tape")
    }

    /// Reverse pass: accumulates `∂f/∂lower` and `∂f/∂upper` of the box given
    /// `∂f/∂(logit lower)` and `∂f/∂(logit upper)`.
    pub fn backward(
        &self,
        net: &NetworkSpec,
        lower: &[f64],
        upper: &[f64],
        mut gl: Vec<f64>,
        mut gu: Vec<f64>,
        grad_lower: &mut [f64],
        grad_upper: &mut [f64],
    ) {
        let offsets = net.offsets();
        for k in (0..net.layers().len()).rev() {
            let l = &net.layers()[k];
            let off = offsets[k];
            let n = l.inputs;
            let zm = &self.zm[k];
            let zr = &self.zr[k];
            let mut dzm = vec![0.0; n];
            let mut dzr = vec![0.0; n];
            for i in 0..l.outputs {
                let (a, b) = (gl[i], gu[i]);
                grad_lower[off.biases + i] += a;
                grad_upper[off.biases + i] += b;
                if a == 0.0 && b == 0.0 {
                    continue;
                }
                let gc = a + b;
                let gr = b - a;
                let row = off.weights + i * n;
                for j in 0..n {
                    let (wl, wu) = (lower[row + j], upper[row + j]);
                    let m = 0.5 * (wu + wl);
                    let r = 0.5 * (wu - wl);
                    let dm = gc * zm[j] + gr * signum(m) * zr[j];
                    let dr = gr * (zm[j].abs() + zr[j]);
                    grad_upper[row + j] += 0.5 * (dm + dr);
                    grad_lower[row + j] += 0.5 * (dm - dr);
                    dzm[j] += gc * m + gr * r * signum(zm[j]);
                    dzr[j] += gr * (m.abs() + r);
                }
            }
            if k == 0 {
                break;
            }
            let act = net.layers()[k - 1].activation;
            let (plo, phi) = (&self.lo[k - 1], &self.hi[k - 1]);
            gl = (0..n).map(|j| 0.5 * (dzm[j] - dzr[j]) * act.derivative(plo[j])).collect();
            gu = (0..n).map(|j| 0.5 * (dzm[j] + dzr[j]) * act.derivative(phi[j])).collect();
        }
    }
}

#[inline]
fn signum(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn ibp_forward_taped(net: &NetworkSpec, lower: &[f64], upper: &[f64], x: &[f64]) -> IbpTape {
    let layers = net.layers().len();
    let mut tape = IbpTape {
        zm: Vec::with_capacity(layers),
        zr: Vec::with_capacity(layers),
        lo: Vec::with_capacity(layers),
        hi: Vec::with_capacity(layers),
    };
    let mut zm = x.to_vec();
    let mut zr = vec![0.0; x.len()];
    for (k, (l, off)) in net.layers().iter().zip(net.offsets()).enumerate() {
        let mut lo = Vec::with_capacity(l.outputs);
        let mut hi = Vec::with_capacity(l.outputs);
        layer_bounds(
            &lower[off.weights..off.biases],
            &upper[off.weights..off.biases],
            &lower[off.biases..off.end],
            &upper[off.biases..off.end],
            &zm,
            &zr,
            &mut lo,
            &mut hi,
        );
        let (nzm, nzr) = if k + 1 < layers {
            lo.iter()
                .zip(&hi)
                .map(|(&a, &b)| {
                    let (a, b) = (l.activation.apply(a), l.activation.apply(b));
                    (0.5 * (a + b), 0.5 * (b - a))
                })
                .unzip()
        } else {
            (Vec::new(), Vec::new())
        };
        tape.zm.push(std::mem::replace(&mut zm, nzm));
        tape.zr.push(std::mem::replace(&mut zr, nzr));
        tape.lo.push(lo);
        tape.hi.push(hi);
    }
    tape
}

/// Splits a gradient with respect to worst-case logits into gradients with
/// respect to the logit bounds.
pub(crate) fn spec_grad_to_bounds(g: &[f64], y: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gl = vec![0.0; g.len()];
    let mut gu = g.to_vec();
    gl[y] = g[y];
    gu[y] = 0.0;
    (gl, gu)
}

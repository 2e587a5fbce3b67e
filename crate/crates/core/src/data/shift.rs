use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    GaussianNoise,
    Brightness,
    Contrast,
}

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_noise" => Ok(Corruption::GaussianNoise),
            "brightness" => Ok(Corruption::Brightness),
            "contrast" => Ok(Corruption::Contrast),
            other => Err(Error::arg(format!("unknown corruption {other:?}"))),
        }
    }
}

impl Corruption {
    fn identity_param(self) -> f64 {
        match self {
            Corruption::Contrast => 1.0,
            _ => 0.0,
        }
    }

    fn check(self, p: f64) -> Result<()> {
        let ok = match self {
            Corruption::GaussianNoise => (0.0..=1.0).contains(&p),
            Corruption::Brightness => (-1.0..=1.0).contains(&p),
            Corruption::Contrast => (0.0..=2.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("{self:?} parameter {p} out of range")))
        }
    }
}

/// Applies a pixel corruption; results are clipped to `[0, 1]`.
///
/// * gaussian noise: `x + σ ε`, σ ∈ [0, 1]
/// * brightness: `x + δ`, δ ∈ [−1, 1]
/// * contrast: `(x − mean) m + mean` with the per-image mean, m ∈ [0, 2]
pub fn corrupt(data: &Dataset, kind: Corruption, param: f64, rng: &mut Rng) -> Result<Dataset> {
    kind.check(param)?;
    if param == kind.identity_param() {
        return Ok(data.clone());
    }
    let mut x = data.inputs.clone();
    let d = x.cols();
    for r in 0..x.rows() {
        let row = x.row_mut(r);
        match kind {
            Corruption::GaussianNoise => row.iter_mut().for_each(|v| *v = (*v + param * rng.normal()).clamp(0.0, 1.0)),
            Corruption::Brightness => row.iter_mut().for_each(|v| *v = (*v + param).clamp(0.0, 1.0)),
            Corruption::Contrast => {
                let mean = row.iter().sum::<f64>() / d.max(1) as f64;
                row.iter_mut().for_each(|v| *v = ((*v - mean) * param + mean).clamp(0.0, 1.0));
            }
        }
    }
    Ok(data.with_inputs(x))
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-12 {
        r
    } else {
        v
    }
}

/// Rotates square images counter-clockwise by `degrees` about the image
/// center, with bilinear interpolation and zero fill outside the frame.
pub fn rotate_images(data: &Dataset, degrees: f64, side: usize) -> Result<Dataset> {
    if side * side != data.dim() {
        return Err(Error::shape(format!("dimension {} is not {side}²", data.dim())));
    }
    if !(0.0..360.0).contains(&degrees) {
        return Err(Error::arg(format!("rotation {degrees}° outside [0, 360)")));
    }
    if degrees == 0.0 {
        return Ok(data.clone());
    }
    let theta = degrees.to_radians();
    let (sin, cos) = (snap(theta.sin()), snap(theta.cos()));
    let c = (side as f64 - 1.0) / 2.0;
    // precomputed bilinear taps per output pixel
    let mut taps: Vec<[(usize, f64); 4]> = Vec::with_capacity(side * side);
    for r in 0..side {
        for col in 0..side {
            let (dy, dx) = (r as f64 - c, col as f64 - c);
            // inverse rotation: where does this output pixel come from
            let sx = snap(cos * dx - sin * dy + c);
            let sy = snap(sin * dx + cos * dy + c);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let mut t = [(0usize, 0.0); 4];
            for (k, (oy, ox, w)) in [
                (0.0, 0.0, (1.0 - fy) * (1.0 - fx)),
                (0.0, 1.0, (1.0 - fy) * fx),
                (1.0, 0.0, fy * (1.0 - fx)),
                (1.0, 1.0, fy * fx),
            ]
            .into_iter()
            .enumerate()
            {
                let (yy, xx) = (y0 + oy, x0 + ox);
                if w != 0.0 && yy >= 0.0 && xx >= 0.0 && yy < side as f64 && xx < side as f64 {
                    t[k] = (yy as usize * side + xx as usize, w);
                }
            }
            taps.push(t);
        }
    }
    let mut out = Matrix::zeros(data.len(), data.dim());
    for i in 0..data.len() {
        let src = data.inputs.row(i);
        for (o, t) in out.row_mut(i).iter_mut().zip(&taps) {
            *o = t.iter().map(|&(j, w)| w * src[j]).sum();
        }
    }
    Ok(data.with_inputs(out))
}

/// Adds copies of every image translated by up to `max_shift` pixels along
/// each axis (zero fill), giving `1 + 4·max_shift` times the data.
pub fn shift_augment(data: &Dataset, side: usize, max_shift: usize) -> Result<Dataset> {
    if side * side != data.dim() {
        return Err(Error::shape(format!("dimension {} is not {side}²", data.dim())));
    }
    let mut offsets = vec![(0isize, 0isize)];
    for k in 1..=max_shift as isize {
        offsets.extend([(-k, 0), (k, 0), (0, -k), (0, k)]);
    }
    let n = data.len();
    let mut out = Matrix::zeros(n * offsets.len(), data.dim());
    let mut labels = Vec::with_capacity(n * offsets.len());
    let s = side as isize;
    for (o, &(dy, dx)) in offsets.iter().enumerate() {
        for i in 0..n {
            let src = data.inputs.row(i);
            let dst = out.row_mut(o * n + i);
            for r in 0..s {
                for c in 0..s {
                    let (sr, sc) = (r - dy, c - dx);
                    if sr >= 0 && sc >= 0 && sr < s && sc < s {
                        dst[(r * s + c) as usize] = src[(sr * s + sc) as usize];
                    }
                }
            }
            labels.push(data.labels[i]);
        }
    }
    Ok(Dataset::new(out, labels, data.class_count)?.with_split(data.split))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Rotation,
    GaussianNoise,
    Brightness,
    Contrast,
}

/// A shift family with an ordered list of severity parameters; level 0 is
/// the clean data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSchedule {
    pub kind: ShiftKind,
    pub severities: Vec<f64>,
}

impl ShiftSchedule {
    pub fn new(kind: ShiftKind, severities: Vec<f64>) -> Result<Self> {
        let s = ShiftSchedule { kind, severities };
        s.validate()?;
        Ok(s)
    }

    /// 0° to 180° in steps of 20°.
    pub fn rotation() -> Self {
        ShiftSchedule { kind: ShiftKind::Rotation, severities: (0..=9).map(|k| 20.0 * k as f64).collect() }
    }

    pub fn gaussian_noise() -> Self {
        ShiftSchedule { kind: ShiftKind::GaussianNoise, severities: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5] }
    }

    pub fn brightness() -> Self {
        ShiftSchedule { kind: ShiftKind::Brightness, severities: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5] }
    }

    pub fn contrast() -> Self {
        ShiftSchedule { kind: ShiftKind::Contrast, severities: vec![1.0, 0.8, 0.6, 0.4, 0.25, 0.15] }
    }

    fn corruption(&self) -> Option<Corruption> {
        match self.kind {
            ShiftKind::Rotation => None,
            ShiftKind::GaussianNoise => Some(Corruption::GaussianNoise),
            ShiftKind::Brightness => Some(Corruption::Brightness),
            ShiftKind::Contrast => Some(Corruption::Contrast),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let identity = self.corruption().map_or(0.0, Corruption::identity_param);
        if self.severities.first() != Some(&identity) {
            return Err(Error::arg(format!("severity 0 of a {:?} schedule must be {identity}", self.kind)));
        }
        for &p in &self.severities {
            match self.corruption() {
                Some(c) => c.check(p)?,
                None if !(0.0..360.0).contains(&p) => return Err(Error::arg(format!("rotation {p}° out of range"))),
                None => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.severities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.severities.is_empty()
    }

    /// The dataset at severity `level`. `side` is the image side length
    /// (needed for rotations only).
    pub fn apply(&self, data: &Dataset, level: usize, side: usize, rng: &mut Rng) -> Result<Dataset> {
        let p = *self
            .severities
            .get(level)
            .ok_or_else(|| Error::arg(format!("severity level {level} beyond schedule of {}", self.len())))?;
        match self.corruption() {
            None => rotate_images(data, p, side),
            Some(c) => corrupt(data, c, p, rng),
        }
    }
}

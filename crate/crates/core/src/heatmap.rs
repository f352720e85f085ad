//! Localized prediction maps.
//!
//! Global average pooling followed by a linear head equals the head applied
//! at every feature location followed by the average. The second order
//! yields one logit vector per location.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::architecture::{compute_receptive_field, Model};
use crate::error::{Error, Result};
use crate::ops::softmax_rows;
use crate::task::Task;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap<T> {
    /// `[output_dim, d, h, w]`.
    pub local_logits: Tensor<T>,
    /// `[output_dim]`, from the ordinary forward pass.
    pub global_logits: Tensor<T>,
    pub stride: usize,
    pub rf: usize,
    pub task: Task,
    pub config_hash: String,
}

/// Applies the head at every pre-pool location of a single input.
pub fn local_predictions<T: Real>(model: &Model<T>, x: Tensor<T>, task: Task) -> Result<PredictionMap<T>> {
    let [n, ..] = x.dims5()?;
    if n != 1 {
        return Err(Error::shape(format!("local predictions take one volume, got batch {n}")));
    }
    if model.output_dim() != task.output_dim() {
        return Err(Error::config(format!(
            "task {task} needs {} outputs, model has {}",
            task.output_dim(),
            model.output_dim()
        )));
    }
    let (logits, features) = model.predict_with_features(x)?;
    let [_, f, d, h, w] = features.dims5()?;
    let k = model.output_dim();
    let weight = model.head_weight().data();
    let bias = model.head_bias().data();
    let feat = features.data();
    let spatial = d * h * w;
    let mut local = vec![T::zero(); k * spatial];
    for ki in 0..k {
        let wk = &weight[ki * f..(ki + 1) * f];
        for p in 0..spatial {
            let mut acc = bias[ki].as_f64();
            for (fi, wv) in wk.iter().enumerate() {
                acc += wv.as_f64() * feat[fi * spatial + p].as_f64();
            }
            local[ki * spatial + p] = T::from_f64(acc);
        }
    }
    Ok(PredictionMap {
        local_logits: Tensor::new([k, d, h, w], local)?,
        global_logits: Tensor::new([k], logits.into_data())?,
        stride: model.config().total_stride(),
        rf: compute_receptive_field(model.config()).rf,
        task,
        config_hash: model.config_hash(),
    })
}

impl<T: Real> PredictionMap<T> {
    pub fn spatial_dims(&self) -> [usize; 3] {
        let s = self.local_logits.shape();
        [s[1], s[2], s[3]]
    }

    /// Per-output mean of the local logits.
    pub fn local_mean(&self) -> Vec<f64> {
        let spatial: usize = self.spatial_dims().iter().product();
        self.local_logits
            .data()
            .chunks(spatial)
            .map(|c| c.iter().map(|v| v.as_f64()).sum::<f64>() / spatial as f64)
            .collect()
    }

    /// `max_k |mean(local_k) - global_k| / max(1, |global_k|)`.
    pub fn exchange_residual(&self) -> f64 {
        self.local_mean()
            .iter()
            .zip(self.global_logits.data())
            .map(|(m, g)| {
                let g = g.as_f64();
                (m - g).abs() / g.abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }

    /// `[d, h, w]` map of output channel `k`.
    pub fn channel(&self, k: usize) -> Result<Tensor<T>> {
        let [d, h, w] = self.spatial_dims();
        let spatial = d * h * w;
        let data = self
            .local_logits
            .data()
            .get(k * spatial..(k + 1) * spatial)
            .ok_or_else(|| Error::config(format!("output channel {k} out of range")))?;
        Tensor::new([d, h, w], data.to_vec())
    }

    /// Map shown for the task: class-1 probability for sex, raw local value for age.
    pub fn display_grid(&self) -> Result<Tensor<T>> {
        match self.task {
            Task::Sex => to_probability_map(self),
            Task::Age => self.channel(0),
        }
    }
}

/// Per-location softmax probability of class 1 (female).
pub fn to_probability_map<T: Real>(map: &PredictionMap<T>) -> Result<Tensor<T>> {
    let k = map.local_logits.shape()[0];
    if map.task != Task::Sex || k != 2 {
        return Err(Error::config(format!(
            "probability maps need the sex task with 2 outputs, got {} with {k}",
            map.task
        )));
    }
    let [d, h, w] = map.spatial_dims();
    let spatial = d * h * w;
    let l = map.local_logits.data();
    let rows = Tensor::from_fn([spatial, 2], |i| l[(i % 2) * spatial + i / 2]);
    let probs = softmax_rows(&rows)?;
    Tensor::new([d, h, w], probs.data().chunks(2).map(|p| p[1]).collect())
}

/// Replicates every voxel into a `factor`-sided cube.
pub fn upsample_nearest<T: Real>(grid: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if grid.rank() != 3 || factor == 0 {
        return Err(Error::config(format!(
            "upsampling needs a rank-3 grid and factor >= 1, got {:?} and {factor}",
            grid.shape()
        )));
    }
    let s = grid.shape();
    let (d, h, w) = (s[0], s[1], s[2]);
    let out = [d * factor, h * factor, w * factor];
    Ok(Tensor::from_fn(out, |i| {
        let x = i % out[2];
        let y = (i / out[2]) % out[1];
        let z = i / (out[2] * out[1]);
        grid.data()[((z / factor) * h + y / factor) * w + x / factor]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceFormat {
    Csv,
    Pgm,
}

impl SliceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            SliceFormat::Csv => "csv",
            SliceFormat::Pgm => "pgm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceIndex {
    Middle,
    At(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsample {
    None,
    Nearest(usize),
}

/// A 2D slice, row-major, with its resolved index along `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice<T> {
    pub axis: usize,
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
}

/// Cuts a `[d, h, w]` grid perpendicular to `axis`.
pub fn extract_slice<T: Real>(grid: &Tensor<T>, axis: usize, index: SliceIndex) -> Result<Slice<T>> {
    if grid.rank() != 3 {
        return Err(Error::shape(format!("expected a [d, h, w] grid, got {:?}", grid.shape())));
    }
    if axis > 2 {
        return Err(Error::config(format!("axis must be 0, 1 or 2, got {axis}")));
    }
    let dims = [grid.shape()[0], grid.shape()[1], grid.shape()[2]];
    let index = match index {
        SliceIndex::Middle => dims[axis] / 2,
        SliceIndex::At(i) if i < dims[axis] => i,
        SliceIndex::At(i) => {
            return Err(Error::config(format!(
                "slice index {i} out of bounds for axis {axis} of extent {}",
                dims[axis]
            )))
        }
    };
    let (ra, ca) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (rows, cols) = (dims[ra], dims[ca]);
    let mut values = Vec::with_capacity(rows * cols);
    let mut at = [0usize; 3];
    at[axis] = index;
    for r in 0..rows {
        for c in 0..cols {
            at[ra] = r;
            at[ca] = c;
            values.push(grid.data()[(at[0] * dims[1] + at[1]) * dims[2] + at[2]]);
        }
    }
    Ok(Slice {
        axis,
        index,
        rows,
        cols,
        values,
    })
}

impl<T: Real> Slice<T> {
    /// One line per row, comma-separated, shortest round-trip decimals.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut out = String::new();
        for row in self.values.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out.into_bytes()
    }

    /// Binary P5 graymap, min-max scaled to 0..=255.
    ///
    /// The header comment records the bounds; a constant slice is written as
    /// uniform gray 128 and flagged `degenerate`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (min, max) = self
            .values
            .iter()
            .map(|v| v.as_f64())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let degenerate = !(max > min);
        let mut header = String::from("P5\n");
        let _ = write!(header, "# min={min} max={max}");
        if degenerate {
            header.push_str(" degenerate");
        }
        let _ = write!(header, "\n{} {}\n255\n", self.cols, self.rows);
        let mut out = header.into_bytes();
        out.extend(self.values.iter().map(|v| {
            if degenerate {
                128
            } else {
                ((v.as_f64() - min) / (max - min) * 255.0).round() as u8
            }
        }));
        out
    }
}

/// Encodes one slice of `grid` after optional upsampling.
pub fn export_slice<T: Real>(
    grid: &Tensor<T>,
    axis: usize,
    index: SliceIndex,
    format: SliceFormat,
    upsample: Upsample,
) -> Result<(Slice<T>, Vec<u8>)> {
    let grid = match upsample {
        Upsample::None => grid.clone(),
        Upsample::Nearest(f) => upsample_nearest(grid, f)?,
    };
    let slice = extract_slice(&grid, axis, index)?;
    let bytes = match format {
        SliceFormat::Csv => slice.to_csv(),
        SliceFormat::Pgm => slice.to_pgm(),
    };
    Ok((slice, bytes))
}

/// File name encoding task, receptive field, axis and slice index.
pub fn slice_filename(task: Task, rf: usize, axis: usize, index: usize, format: SliceFormat) -> String {
    format!("{task}_rf{rf}_axis{axis}_slice{index:03}.{}", format.extension())
}

//! Frozen 2D backbone.
//!
//! Two interchangeable sources behind one type: `seeded` draws the five
//! stride-2 convolution stages once from a documented seeded He-normal
//! distribution; `external` loads the same architecture's weights from a
//! tensor archive. Either way the parameters never join the optimizer
//! and carry no backward pass.

use ndarray::{Array1, Array2, Array3, ArrayView3, ArrayView4, Axis};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{matmul, rng_from_seed, Elem, TensorArchive};

/// Default seed for the fixed random backbone. One documented constant:
/// every run shares the same frozen features.
pub const TINY_CNN_SEED: u64 = 0x7069_6340;

/// Stage output channels; each stage halves the spatial size
/// (3x3 kernel, stride 2, replicate padding 1): 224 -> 112 -> 56 -> 28
/// -> 14 -> 7.
pub const TINY_CNN_CHANNELS: [usize; 5] = [16, 32, 64, 96, 128];

pub const WEIGHTS_FORMAT: &str = "picpoint-2d-weights-v1";

/// Top-level image features: a G x G grid and its spatial mean.
#[derive(Debug, Clone)]
pub struct FeatureMap2d<T: Elem> {
    /// G x G x C2, row-major (row = v/top-down, column = u/left-right).
    pub grid: Array3<T>,
    /// C2; spatial mean over the grid.
    pub global: Array1<T>,
}

#[derive(Debug, Clone)]
struct ConvLayer<T: Elem> {
    /// (c_out, c_in * 9), kernel flattened as (c_in, ky, kx) row-major.
    w: Array2<T>,
    b: Array1<T>,
    c_in: usize,
    c_out: usize,
}

#[derive(Debug, Clone)]
pub struct TinyCnn<T: Elem> {
    layers: Vec<ConvLayer<T>>,
    /// Input size enforced at forward time when set (external weights
    /// record the size they were built for).
    pub expected_size: Option<usize>,
}

impl<T: Elem> TinyCnn<T> {
    /// Fixed random backbone: He-normal weights (`std = sqrt(2/fan_in)`),
    /// zero biases, drawn layer by layer (weights then bias) from a
    /// ChaCha12 stream seeded with `seed`. Draws happen in f64 and are
    /// converted, so the stream is element-type independent.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut layers = Vec::with_capacity(TINY_CNN_CHANNELS.len());
        let mut c_in = 3usize;
        for &c_out in &TINY_CNN_CHANNELS {
            let fan_in = c_in * 9;
            let std = (2.0 / fan_in as f64).sqrt();
            let mut w = Array2::<T>::zeros((c_out, fan_in));
            for v in w.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v = T::from_f64(g * std);
            }
            layers.push(ConvLayer { w, b: Array1::zeros(c_out), c_in, c_out });
            c_in = c_out;
        }
        TinyCnn { layers, expected_size: None }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map(|l| l.c_out).unwrap_or(0)
    }

    /// Spatial size of the output grid for a square input.
    pub fn grid_size(&self, input: usize) -> usize {
        let mut s = input;
        for _ in &self.layers {
            s = (s + 1) / 2;
        }
        s
    }

    /// FNV-1a checksum of all weight bits; the frozen contract asserts
    /// this is identical before and after training.
    pub fn checksum(&self) -> u64 {
        let mut hash = 0xCBF2_9CE4_8422_2325u64;
        let mut eat = |x: T| {
            for b in x.bits_u64().to_le_bytes() {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
            }
        };
        for l in &self.layers {
            l.w.iter().for_each(|&x| eat(x));
            l.b.iter().for_each(|&x| eat(x));
        }
        hash
    }

    /// Forward one H x W x 3 image (values in [0, 1]); gradients never
    /// flow: the output is plain data.
    pub fn forward(&self, image: ArrayView3<'_, T>) -> Result<FeatureMap2d<T>> {
        let (h, w, c) = image.dim();
        if c != 3 {
            return Err(Error::ShapeMismatch(format!("image must have 3 channels, got {c}")));
        }
        if h != w {
            return Err(Error::ShapeMismatch(format!("image must be square, got {h}x{w}")));
        }
        if let Some(expected) = self.expected_size {
            if h != expected {
                return Err(Error::ShapeMismatch(format!(
                    "image size {h} does not match the loaded weights' expected {expected}"
                )));
            }
        }
        if self.grid_size(h) == 0 {
            return Err(Error::ShapeMismatch(format!("image size {h} too small for 5 stages")));
        }
        let mut cur = image.to_owned();
        for layer in &self.layers {
            cur = layer.forward(&cur);
        }
        let (gh, gw, c2) = cur.dim();
        let mut global = Array1::zeros(c2);
        for y in 0..gh {
            for x in 0..gw {
                for ch in 0..c2 {
                    global[ch] += cur[[y, x, ch]];
                }
            }
        }
        let count = T::from_f64((gh * gw) as f64);
        global.mapv_inplace(|v| v / count);
        Ok(FeatureMap2d { grid: cur, global })
    }

    /// Batched forward (m x H x W x 3), images in parallel, ordered out.
    pub fn forward_batch(&self, images: ArrayView4<'_, T>) -> Result<Vec<FeatureMap2d<T>>> {
        let m = images.dim().0;
        (0..m)
            .into_par_iter()
            .map(|s| self.forward(images.index_axis(Axis(0), s)))
            .collect()
    }

    /// Writes weights as a tensor archive (`convN.weight` with shape
    /// `[c_out, c_in, 3, 3]`, `convN.bias` with `[c_out]`).
    pub fn save_weights(&self, path: impl AsRef<Path>, input_size: usize) -> Result<()> {
        let mut ar = TensorArchive::new(serde_json::json!({
            "format": WEIGHTS_FORMAT,
            "channels": TINY_CNN_CHANNELS.to_vec(),
            "input_size": input_size,
        }));
        for (i, l) in self.layers.iter().enumerate() {
            let w4 = l
                .w
                .clone()
                .into_shape_with_order((l.c_out, l.c_in, 3, 3))
                .expect("kernel reshape");
            ar.insert(format!("conv{i}.weight"), w4.into_dyn().view());
            ar.insert(format!("conv{i}.bias"), l.b.clone().into_dyn().view());
        }
        ar.save(path)
    }

    /// Loads external weights, validating format, layer names and shapes
    /// before use.
    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ar = TensorArchive::load(path)?;
        if ar.meta.get("format").and_then(|v| v.as_str()) != Some(WEIGHTS_FORMAT) {
            return Err(Error::parse(format!(
                "{} is not a {WEIGHTS_FORMAT} weight file",
                path.display()
            )));
        }
        let input_size = ar
            .meta
            .get("input_size")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::parse("weight file missing input_size"))?
            as usize;
        let mut layers = Vec::with_capacity(TINY_CNN_CHANNELS.len());
        let mut c_in = 3usize;
        for (i, &c_out) in TINY_CNN_CHANNELS.iter().enumerate() {
            let w4 = ar.get::<T>(&format!("conv{i}.weight"))?;
            if w4.shape() != [c_out, c_in, 3, 3] {
                return Err(Error::ShapeMismatch(format!(
                    "conv{i}.weight has shape {:?}, expected [{c_out}, {c_in}, 3, 3]",
                    w4.shape()
                )));
            }
            let b = ar.get::<T>(&format!("conv{i}.bias"))?;
            if b.shape() != [c_out] {
                return Err(Error::ShapeMismatch(format!(
                    "conv{i}.bias has shape {:?}, expected [{c_out}]",
                    b.shape()
                )));
            }
            layers.push(ConvLayer {
                w: w4
                    .into_shape_with_order((c_out, c_in * 9))
                    .expect("kernel flatten")
                    .into_dimensionality()
                    .expect("2d"),
                b: b.into_dimensionality().expect("1d"),
                c_in,
                c_out,
            });
            c_in = c_out;
        }
        Ok(TinyCnn { layers, expected_size: Some(input_size) })
    }
}

impl<T: Elem> ConvLayer<T> {
    /// 3x3 stride-2 convolution with replicate padding, then ReLU.
    /// Replicate (clamped) padding keeps constant inputs constant across
    /// the whole output grid.
    fn forward(&self, x: &Array3<T>) -> Array3<T> {
        let (h, w, c_in) = x.dim();
        debug_assert_eq!(c_in, self.c_in);
        let oh = (h + 1) / 2;
        let ow = (w + 1) / 2;
        let mut cols = Array2::<T>::zeros((oh * ow, c_in * 9));
        for oy in 0..oh {
            for ox in 0..ow {
                let mut dst = cols.row_mut(oy * ow + ox);
                let base_y = (oy * 2) as isize - 1;
                let base_x = (ox * 2) as isize - 1;
                let mut slot = 0usize;
                for ci in 0..c_in {
                    for ky in 0..3isize {
                        let sy = (base_y + ky).clamp(0, h as isize - 1) as usize;
                        for kx in 0..3isize {
                            let sx = (base_x + kx).clamp(0, w as isize - 1) as usize;
                            dst[slot] = x[[sy, sx, ci]];
                            slot += 1;
                        }
                    }
                }
            }
        }
        let mut out2 = matmul(cols.view(), self.w.t());
        for mut row in out2.rows_mut() {
            for (v, &b) in row.iter_mut().zip(self.b.iter()) {
                let y = *v + b;
                *v = if y > T::zero() { y } else { T::zero() };
            }
        }
        out2.into_shape_with_order((oh, ow, self.c_out)).expect("conv reshape")
    }
}

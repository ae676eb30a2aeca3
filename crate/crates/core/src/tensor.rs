//! Dense feature maps, convolution weights and weight banks.
//!
//! Values are always held as `f64`. A map tagged [`DType::F32`] only ever
//! stores values that are exactly representable in `f32`; every constructor
//! and every kernel output rounds through [`DType::round`]. This gives the
//! "accumulate in f64, store in the tensor's dtype" semantics without
//! duplicating each kernel per element type.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    /// Code used by the binary file formats.
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    /// Round a value to the nearest representable value of this dtype.
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            DType::F32 => v as f32 as f64,
            DType::F64 => v,
        }
    }
}

impl core::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(Error::InvalidArgument(format!("unknown dtype `{other}`"))),
        }
    }
}

/// A dense `h x w x c` tensor, row-major with channels innermost:
/// element `(i, j, k)` lives at `(i * w + j) * c + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    h: usize,
    w: usize,
    c: usize,
    dtype: DType,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, c: usize, dtype: DType, mut data: Vec<f64>) -> Result<Self> {
        check_dims(h, w, c)?;
        let expected = h * w * c;
        if data.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: data.len() });
        }
        if dtype == DType::F32 {
            data.iter_mut().for_each(|v| *v = dtype.round(*v));
        }
        Ok(Self { h, w, c, dtype, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize, dtype: DType) -> Result<Self> {
        Self::filled(h, w, c, dtype, 0.0)
    }

    pub fn filled(h: usize, w: usize, c: usize, dtype: DType, value: f64) -> Result<Self> {
        check_dims(h, w, c)?;
        Ok(Self { h, w, c, dtype, data: vec![dtype.round(value); h * w * c] })
    }

    /// A map holding `1.0` at `(i, j, k)` and zero elsewhere.
    pub fn impulse(h: usize, w: usize, c: usize, at: (usize, usize, usize)) -> Result<Self> {
        let mut m = Self::zeros(h, w, c, DType::F64)?;
        if at.0 >= h || at.1 >= w || at.2 >= c {
            return Err(Error::PixelOutOfBounds { row: at.0, col: at.1, h, w });
        }
        let idx = m.index(at.0, at.1, at.2);
        m.data[idx] = 1.0;
        Ok(m)
    }

    /// Internal constructor for kernel outputs; dims are already validated.
    pub(crate) fn from_parts(h: usize, w: usize, c: usize, dtype: DType, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), h * w * c);
        if dtype == DType::F32 {
            data.iter_mut().for_each(|v| *v = dtype.round(*v));
        }
        Self { h, w, c, dtype, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.w + j) * self.c + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.index(i, j, k);
        self.data[idx] = self.dtype.round(v);
    }

    /// The `c`-dimensional descriptor at `(i, j)`.
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.w + j) * self.c;
        &self.data[start..start + self.c]
    }

    pub fn to_dtype(&self, dtype: DType) -> Self {
        Self::from_parts(self.h, self.w, self.c, dtype, self.data.clone())
    }

    /// Channels `start..start + count` as a new map.
    pub fn channel_block(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.c {
            return Err(Error::InvalidArgument(format!(
                "channel block {start}..{} outside {} channels",
                start + count,
                self.c
            )));
        }
        let mut data = Vec::with_capacity(self.h * self.w * count);
        for px in self.data.chunks_exact(self.c) {
            data.extend_from_slice(&px[start..start + count]);
        }
        Ok(Self { h: self.h, w: self.w, c: count, dtype: self.dtype, data })
    }

    /// Elementwise `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &FeatureMap, b: f64) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Ok(Self::from_parts(self.h, self.w, self.c, self.dtype, data))
    }

    /// Largest absolute elementwise difference. Infinite when shapes differ.
    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data.iter().zip(&other.data).map(|(a, b)| abs(a - b)).fold(0.0, f64::max)
    }

    /// Inner product with compensated summation.
    pub fn dot(&self, other: &FeatureMap) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(compensated_dot(&self.data, &other.data))
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &FeatureMap) -> Result<()> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(Error::SpatialMismatch(self.h, self.w, other.h, other.w));
        }
        if self.c != other.c {
            return Err(Error::ChannelMismatch { expected: self.c, actual: other.c });
        }
        Ok(())
    }
}

fn check_dims(h: usize, w: usize, c: usize) -> Result<()> {
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::ZeroDimension { h, w, c });
    }
    Ok(())
}

#[inline]
pub(crate) fn abs(v: f64) -> f64 {
    if v < 0.0 {
        -v
    } else {
        v
    }
}

/// Neumaier-compensated inner product.
pub(crate) fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let term = x * y;
        let t = sum + term;
        if abs(sum) >= abs(term) {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Concatenate maps along the channel axis, preserving list order.
pub fn concat_channels(maps: &[&FeatureMap]) -> Result<FeatureMap> {
    let first = maps.first().ok_or(Error::EmptyConcat)?;
    for m in &maps[1..] {
        if (m.h, m.w) != (first.h, first.w) {
            return Err(Error::SpatialMismatch(first.h, first.w, m.h, m.w));
        }
        if m.dtype != first.dtype {
            return Err(Error::DTypeMismatch);
        }
    }
    let c: usize = maps.iter().map(|m| m.c).sum();
    let mut data = Vec::with_capacity(first.h * first.w * c);
    for p in 0..first.h * first.w {
        for m in maps {
            data.extend_from_slice(&m.data[p * m.c..(p + 1) * m.c]);
        }
    }
    Ok(FeatureMap { h: first.h, w: first.w, c, dtype: first.dtype, data })
}

/// Convolution filters `out_c x in_c x kh x kw` plus one bias per output
/// channel. Kernel sides are odd so same-padding is symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    out_c: usize,
    in_c: usize,
    kh: usize,
    kw: usize,
    dtype: DType,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl WeightTensor {
    pub fn new(
        out_c: usize,
        in_c: usize,
        kh: usize,
        kw: usize,
        dtype: DType,
        mut weights: Vec<f64>,
        mut bias: Vec<f64>,
    ) -> Result<Self> {
        if out_c == 0 || in_c == 0 || kh == 0 || kw == 0 {
            return Err(Error::InvalidArgument(format!(
                "weight dims must be positive, got {out_c}x{in_c}x{kh}x{kw}"
            )));
        }
        if kh % 2 == 0 {
            return Err(Error::EvenKernel(kh));
        }
        if kw % 2 == 0 {
            return Err(Error::EvenKernel(kw));
        }
        let expected = out_c * in_c * kh * kw;
        if weights.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: weights.len() });
        }
        if bias.len() != out_c {
            return Err(Error::LengthMismatch { expected: out_c, actual: bias.len() });
        }
        weights.iter_mut().chain(bias.iter_mut()).for_each(|v| *v = dtype.round(*v));
        Ok(Self { out_c, in_c, kh, kw, dtype, weights, bias })
    }

    pub fn filled(out_c: usize, in_c: usize, kh: usize, kw: usize, value: f64, bias: f64) -> Result<Self> {
        let n = out_c * in_c * kh * kw;
        Self::new(out_c, in_c, kh, kw, DType::F64, vec![value; n], vec![bias; out_c])
    }

    /// 1x1 weights mapping channel `o` to channel `o`, zero bias.
    pub fn identity(c: usize) -> Result<Self> {
        let mut weights = vec![0.0; c * c];
        for o in 0..c {
            weights[o * c + o] = 1.0;
        }
        Self::new(c, c, 1, 1, DType::F64, weights, vec![0.0; c])
    }

    /// Uniform `[-1, 1)` weights from one splitmix64 stream: all weights in
    /// layout order, then the biases.
    pub fn random(seed: u64, out_c: usize, in_c: usize, kh: usize, kw: usize, dtype: DType) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let weights = (0..out_c * in_c * kh * kw).map(|_| rng.next_signed_unit()).collect();
        let bias = (0..out_c).map(|_| rng.next_signed_unit()).collect();
        Self::new(out_c, in_c, kh, kw, dtype, weights, bias)
    }

    pub fn out_c(&self) -> usize {
        self.out_c
    }

    pub fn in_c(&self) -> usize {
        self.in_c
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    pub fn weight_index(&self, o: usize, ci: usize, a: usize, b: usize) -> usize {
        ((o * self.in_c + ci) * self.kh + a) * self.kw + b
    }

    #[inline]
    pub fn weight(&self, o: usize, ci: usize, a: usize, b: usize) -> f64 {
        self.weights[self.weight_index(o, ci, a, b)]
    }

    /// Same shape, zero weights and bias.
    pub fn zeroed(&self) -> Self {
        Self {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.out_c],
            ..self.clone()
        }
    }

    /// Same shape with the bias cleared.
    pub fn without_bias(&self) -> Self {
        Self { bias: vec![0.0; self.out_c], ..self.clone() }
    }

    /// Replace weights and bias, keeping the shape.
    pub fn with_values(&self, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        Self::new(self.out_c, self.in_c, self.kh, self.kw, self.dtype, weights, bias)
    }
}

/// Weight tensors keyed by branch name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightBank {
    entries: BTreeMap<String, WeightTensor>,
}

impl WeightBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: WeightTensor) -> Option<WeightTensor> {
        self.entries.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&WeightTensor> {
        self.entries.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<WeightTensor> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &WeightTensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Look up `name` and check it against the expected geometry.
    pub fn require(&self, name: &str, in_c: usize, out_c: usize, kernel: usize) -> Result<&WeightTensor> {
        let t = self.get(name).ok_or_else(|| Error::MissingWeights(name.into()))?;
        let shape_err = |reason: String| Error::WeightShape { name: name.into(), reason };
        if t.in_c != in_c {
            return Err(shape_err(format!("in_c {} but input has {in_c} channels", t.in_c)));
        }
        if t.out_c != out_c {
            return Err(shape_err(format!("out_c {} but {out_c} expected", t.out_c)));
        }
        if t.kh != kernel || t.kw != kernel {
            return Err(shape_err(format!("kernel {}x{} but {kernel}x{kernel} expected", t.kh, t.kw)));
        }
        Ok(t)
    }
}

impl FromIterator<(String, WeightTensor)> for WeightBank {
    fn from_iter<I: IntoIterator<Item = (String, WeightTensor)>>(iter: I) -> Self {
        Self { entries: iter.into_iter().collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_probe() {
        let m = FeatureMap::impulse(3, 4, 2, (1, 2, 1)).unwrap();
        let flat = m.data().iter().position(|&v| v == 1.0).unwrap();
        assert_eq!(flat, (1 * 4 + 2) * 2 + 1);
        assert_eq!(m.pixel(1, 2), &[0.0, 1.0]);
    }

    #[test]
    fn zero_dims_rejected() {
        assert_eq!(FeatureMap::zeros(0, 2, 1, DType::F64), Err(Error::ZeroDimension { h: 0, w: 2, c: 1 }));
        assert!(matches!(
            FeatureMap::new(2, 2, 1, DType::F64, vec![0.0; 3]),
            Err(Error::LengthMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn f32_maps_store_rounded_values() {
        let m = FeatureMap::new(1, 1, 1, DType::F32, vec![0.1]).unwrap();
        assert_eq!(m.get(0, 0, 0), 0.1f32 as f64);
    }

    #[test]
    fn concat_appends_channels_in_order() {
        let a = FeatureMap::filled(2, 2, 3, DType::F64, 1.0).unwrap();
        let b = FeatureMap::filled(2, 2, 1, DType::F64, 7.0).unwrap();
        let out = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(out.shape(), (2, 2, 4));
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(out.pixel(i, j), &[1.0, 1.0, 1.0, 7.0]);
            }
        }
        assert_eq!(out.channel_block(3, 1).unwrap(), b);
    }

    #[test]
    fn concat_single_is_identity() {
        let a = crate::rng::rng_fill(4, 3, 2, 2, DType::F64);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn concat_errors() {
        let a = FeatureMap::zeros(2, 2, 1, DType::F64).unwrap();
        let b = FeatureMap::zeros(3, 3, 1, DType::F64).unwrap();
        let c = FeatureMap::zeros(2, 2, 1, DType::F32).unwrap();
        assert_eq!(concat_channels(&[&a, &b]), Err(Error::SpatialMismatch(2, 2, 3, 3)));
        assert_eq!(concat_channels(&[&a, &c]), Err(Error::DTypeMismatch));
        assert_eq!(concat_channels(&[]), Err(Error::EmptyConcat));
    }

    #[test]
    fn even_kernels_rejected() {
        assert_eq!(WeightTensor::filled(1, 1, 2, 3, 1.0, 0.0), Err(Error::EvenKernel(2)));
    }

    #[test]
    fn bank_require_checks_geometry() {
        let mut bank = WeightBank::new();
        bank.insert("a", WeightTensor::filled(4, 2, 3, 3, 1.0, 0.0).unwrap());
        assert!(bank.require("a", 2, 4, 3).is_ok());
        assert!(matches!(bank.require("a", 3, 4, 3), Err(Error::WeightShape { .. })));
        assert!(matches!(bank.require("a", 2, 4, 1), Err(Error::WeightShape { .. })));
        assert_eq!(bank.require("b", 2, 4, 3), Err(Error::MissingWeights("b".into())));
    }

    #[test]
    fn compensated_dot_recovers_cancellation() {
        let a = [1e16, 1.0, -1e16];
        let b = [1.0, 1.0, 1.0];
        assert_eq!(compensated_dot(&a, &b), 1.0);
    }
}

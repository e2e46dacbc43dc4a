//! Dense rank-4 field tensors and the `CPT1` binary format.
//!
//! Every field in the crate (inputs, predictions, truths, scores,
//! quantiles, band edges) is a [`FieldTensor`] with extents
//! `[T, Nx, Ny, Nvar]`. Lower-rank data is padded with unit axes, so a 1D
//! Poisson field is stored as `[1, 32, 1, 1]`.
//!
//! Layout is row-major: element `(t, x, y, v)` lives at
//! `((t * Nx + x) * Ny + y) * Nvar + v`.
//!
//! ## `CPT1` wire format
//!
//! ```text
//! offset  size            field
//! 0       4               magic b"CPT1"
//! 4       1               rank (u8, always 4)
//! 5       16              extents, 4 x u32 little-endian
//! 21      8 * prod(dims)  values, f64 little-endian IEEE-754, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CPT1";
pub const RANK: u8 = 4;
const HEADER_LEN: usize = 4 + 1 + 16;

/// Extents `[T, Nx, Ny, Nvar]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dims(pub [usize; 4]);

impl Dims {
    pub const fn new(t: usize, nx: usize, ny: usize, nvar: usize) -> Self {
        Dims([t, nx, ny, nvar])
    }

    /// A 1D spatial field `[1, n, 1, 1]`.
    pub const fn line(n: usize) -> Self {
        Dims([1, n, 1, 1])
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t(&self) -> usize {
        self.0[0]
    }

    pub fn nx(&self) -> usize {
        self.0[1]
    }

    pub fn ny(&self) -> usize {
        self.0[2]
    }

    pub fn nvar(&self) -> usize {
        self.0[3]
    }

    /// Flat row-major offset of `(t, x, y, v)`, or `None` when out of range.
    pub fn offset(&self, idx: [usize; 4]) -> Option<usize> {
        if idx.iter().zip(self.0.iter()).any(|(i, d)| i >= d) {
            return None;
        }
        let [t, x, y, v] = idx;
        let [_, nx, ny, nv] = self.0;
        Some(((t * nx + x) * ny + y) * nv + v)
    }

    /// Inverse of [`Dims::offset`].
    pub fn index(&self, offset: usize) -> Option<[usize; 4]> {
        if offset >= self.len() {
            return None;
        }
        let [_, nx, ny, nv] = self.0;
        let v = offset % nv;
        let rest = offset / nv;
        let y = rest % ny;
        let rest = rest / ny;
        let x = rest % nx;
        let t = rest / nx;
        Some([t, x, y, v])
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "[{a}, {b}, {c}, {d}]")
    }
}

/// Which non-finite values a tensor may hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finiteness {
    /// Every element finite.
    #[default]
    Finite,
    /// `+Inf` allowed (quantile fields whose rank index overflowed).
    PosInf,
    /// `±Inf` allowed (band edges built from an infinite quantile).
    Infinite,
}

impl Finiteness {
    fn admits(self, v: f64) -> bool {
        match self {
            Finiteness::Finite => v.is_finite(),
            Finiteness::PosInf => v.is_finite() || v == f64::INFINITY,
            Finiteness::Infinite => !v.is_nan(),
        }
    }

    fn check(self, data: &[f64]) -> Result<()> {
        match data.iter().position(|&v| !self.admits(v)) {
            None => Ok(()),
            Some(i) => Err(Error::data(format!(
                "element {i} is {} (policy {self:?})",
                data[i]
            ))),
        }
    }
}

/// Dense field tensor, immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTensor {
    dims: Dims,
    data: Vec<f64>,
    finiteness: Finiteness,
}

impl FieldTensor {
    /// Validated constructor; every element must be finite.
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        Self::with_finiteness(dims, data, Finiteness::Finite)
    }

    pub fn with_finiteness(dims: Dims, data: Vec<f64>, finiteness: Finiteness) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::shape(format!(
                "dims {dims} need {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        finiteness.check(&data)?;
        Ok(FieldTensor {
            dims,
            data,
            finiteness,
        })
    }

    /// Quantile field: `+Inf` cells allowed.
    pub fn quantile(dims: Dims, data: Vec<f64>) -> Result<Self> {
        Self::with_finiteness(dims, data, Finiteness::PosInf)
    }

    pub fn zeros(dims: Dims) -> Self {
        FieldTensor {
            dims,
            data: vec![0.0; dims.len()],
            finiteness: Finiteness::Finite,
        }
    }

    pub fn filled(dims: Dims, value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn finiteness(&self) -> Finiteness {
        self.finiteness
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, idx: [usize; 4]) -> Option<f64> {
        self.dims.offset(idx).map(|o| self.data[o])
    }

    /// Copy of frames `start..start + len` along the time axis.
    pub fn time_slice(&self, start: usize, len: usize) -> Result<FieldTensor> {
        let [t, nx, ny, nv] = self.dims.0;
        if start + len > t {
            return Err(Error::shape(format!(
                "time window {start}..{} exceeds {t} frames",
                start + len
            )));
        }
        let frame = nx * ny * nv;
        let data = self.data[start * frame..(start + len) * frame].to_vec();
        Ok(FieldTensor {
            dims: Dims([len, nx, ny, nv]),
            data,
            finiteness: self.finiteness,
        })
    }

    fn zip_with(&self, other: &FieldTensor, f: impl Fn(f64, f64) -> f64) -> Result<FieldTensor> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "dims differ: {} vs {}",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        FieldTensor::new(self.dims, data)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Result<FieldTensor> {
        FieldTensor::new(self.dims, self.data.iter().map(|&a| f(a)).collect())
    }

    pub fn add(&self, other: &FieldTensor) -> Result<FieldTensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &FieldTensor) -> Result<FieldTensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn abs(&self) -> Result<FieldTensor> {
        self.map(f64::abs)
    }

    pub fn scale(&self, factor: f64) -> Result<FieldTensor> {
        self.map(|a| a * factor)
    }

    /// Summary statistics; `None` for an empty or non-finite tensor.
    pub fn stats(&self) -> Option<TensorStats> {
        if self.data.is_empty() || self.data.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let min = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (pairwise_sum(&self.data) / self.data.len() as f64).clamp(min, max);
        let sq: Vec<f64> = self.data.iter().map(|v| v * v).collect();
        Some(TensorStats {
            mean,
            min,
            max,
            l2norm: pairwise_sum(&sq).sqrt(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub l2norm: f64,
}

/// Fixed-order pairwise summation. The reduction tree depends only on the
/// slice length, so results are reproducible regardless of threading.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// A batch of same-shaped samples stored contiguously, sample-major.
///
/// Calibration and validation sets, score tensors and band edges are
/// stacks. Cell `c` of sample `i` is `data[i * cells + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStack {
    sample_dims: Dims,
    data: Vec<f64>,
    finiteness: Finiteness,
}

impl FieldStack {
    pub fn new(sample_dims: Dims, data: Vec<f64>) -> Result<Self> {
        Self::with_finiteness(sample_dims, data, Finiteness::Finite)
    }

    pub fn with_finiteness(
        sample_dims: Dims,
        data: Vec<f64>,
        finiteness: Finiteness,
    ) -> Result<Self> {
        let cells = sample_dims.len();
        if cells == 0 || !data.len().is_multiple_of(cells) {
            return Err(Error::shape(format!(
                "{} values do not form whole samples of {sample_dims}",
                data.len()
            )));
        }
        finiteness.check(&data)?;
        Ok(FieldStack {
            sample_dims,
            data,
            finiteness,
        })
    }

    /// Stack tensors of identical dims.
    pub fn from_tensors<'a>(tensors: impl IntoIterator<Item = &'a FieldTensor>) -> Result<Self> {
        let mut iter = tensors.into_iter().peekable();
        let first = iter
            .peek()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let dims = first.dims();
        let mut data = Vec::new();
        for t in iter {
            if t.dims() != dims {
                return Err(Error::shape(format!(
                    "stacked tensor dims {} differ from {dims}",
                    t.dims()
                )));
            }
            data.extend_from_slice(t.data());
        }
        Ok(FieldStack {
            sample_dims: dims,
            data,
            finiteness: Finiteness::Finite,
        })
    }

    /// Stack flat vectors that each hold one sample of `sample_dims`.
    pub fn from_rows(sample_dims: Dims, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * sample_dims.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != sample_dims.len() {
                return Err(Error::shape(format!(
                    "row {i} has {} values, expected {}",
                    r.len(),
                    sample_dims.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(sample_dims, data)
    }

    pub fn sample_dims(&self) -> Dims {
        self.sample_dims
    }

    pub fn cells(&self) -> usize {
        self.sample_dims.len()
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.cells()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn finiteness(&self) -> Finiteness {
        self.finiteness
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let c = self.cells();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn sample_tensor(&self, i: usize) -> Result<FieldTensor> {
        FieldTensor::with_finiteness(self.sample_dims, self.sample(i).to_vec(), self.finiteness)
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cells())
    }

    /// Samples at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<FieldStack> {
        let n = self.n_samples();
        let mut data = Vec::with_capacity(indices.len() * self.cells());
        for &i in indices {
            if i >= n {
                return Err(Error::shape(format!("sample {i} out of range (n={n})")));
            }
            data.extend_from_slice(self.sample(i));
        }
        FieldStack::with_finiteness(self.sample_dims, data, self.finiteness)
    }

    pub fn same_shape(&self, other: &FieldStack) -> bool {
        self.sample_dims == other.sample_dims && self.data.len() == other.data.len()
    }

    /// The stack as one tensor with samples concatenated along time,
    /// `[n * T, Nx, Ny, Nvar]`, for persistence.
    pub fn to_tensor(&self) -> FieldTensor {
        let [t, nx, ny, nv] = self.sample_dims.0;
        FieldTensor {
            dims: Dims([self.n_samples() * t, nx, ny, nv]),
            data: self.data.clone(),
            finiteness: self.finiteness,
        }
    }

    /// Inverse of [`FieldStack::to_tensor`].
    pub fn from_tensor(t: FieldTensor, sample_dims: Dims) -> Result<FieldStack> {
        let finiteness = t.finiteness;
        let [_, nx, ny, nv] = t.dims.0;
        if [nx, ny, nv] != [sample_dims.0[1], sample_dims.0[2], sample_dims.0[3]] {
            return Err(Error::shape(format!(
                "tensor {} does not stack samples of {sample_dims}",
                t.dims
            )));
        }
        FieldStack::with_finiteness(sample_dims, t.data, finiteness)
    }
}

/// Serialize `t` in `CPT1` format, returning the number of bytes written.
pub fn write_tensor<W: Write>(t: &FieldTensor, mut sink: W) -> Result<u64> {
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    header.push(RANK);
    for &d in &t.dims.0 {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    let mut body = Vec::with_capacity(t.data.len() * 8);
    for v in &t.data {
        body.extend_from_slice(&v.to_le_bytes());
    }
    let io = |e| Error::io("<stream>", e);
    sink.write_all(&header).map_err(io)?;
    sink.write_all(&body).map_err(io)?;
    sink.flush().map_err(io)?;
    Ok((header.len() + body.len()) as u64)
}

/// Deserialize a `CPT1` stream; all elements must be finite.
pub fn read_tensor<R: Read>(source: R) -> Result<FieldTensor> {
    read_tensor_with(source, Finiteness::Finite)
}

pub fn read_tensor_with<R: Read>(mut source: R, finiteness: Finiteness) -> Result<FieldTensor> {
    let mut header = [0u8; HEADER_LEN];
    source
        .read_exact(&mut header)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&header[..4])
        )));
    }
    if header[4] != RANK {
        return Err(Error::Format(format!("rank {} is not 4", header[4])));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let b = &header[5 + 4 * i..9 + 4 * i];
        *d = u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    }
    let dims = Dims(dims);
    let n = dims.len();
    let mut body = Vec::new();
    source
        .take((n as u64) * 8 + 1)
        .read_to_end(&mut body)
        .map_err(|e| Error::io("<stream>", e))?;
    if body.len() < n * 8 {
        return Err(Error::Format(format!(
            "truncated payload: {} of {} bytes",
            body.len(),
            n * 8
        )));
    }
    if body.len() > n * 8 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    FieldTensor::with_finiteness(dims, data, finiteness)
}

pub fn save_tensor(path: &Path, t: &FieldTensor) -> Result<u64> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensor(t, BufWriter::new(f))
}

pub fn load_tensor(path: &Path, finiteness: Finiteness) -> Result<FieldTensor> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor_with(BufReader::new(f), finiteness)
}

/// JSON sidecar written next to a `.cpt` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub dims: Dims,
    pub axes: [String; 4],
    /// Samples stacked along the time axis, when the file holds a stack.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stack: Option<usize>,
    pub finiteness: Finiteness,
    pub seed: u64,
    pub config_hash: String,
}

impl Sidecar {
    pub fn new(dims: Dims, seed: u64, config_hash: impl Into<String>) -> Self {
        Sidecar {
            dims,
            axes: ["t", "x", "y", "var"].map(String::from),
            stack: None,
            finiteness: Finiteness::Finite,
            seed,
            config_hash: config_hash.into(),
        }
    }
}

/// Write `<stem>.cpt` plus `<stem>.json` for a tensor.
pub fn save_with_sidecar(dir: &Path, stem: &str, t: &FieldTensor, mut sidecar: Sidecar) -> Result<()> {
    sidecar.dims = t.dims();
    sidecar.finiteness = t.finiteness();
    save_tensor(&dir.join(format!("{stem}.cpt")), t)?;
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    let p = dir.join(format!("{stem}.json"));
    std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
}

/// Persist a stack as a single tensor with a sidecar recording the sample dims.
pub fn save_stack(dir: &Path, stem: &str, stack: &FieldStack, seed: u64, config_hash: &str) -> Result<()> {
    let mut sc = Sidecar::new(stack.sample_dims(), seed, config_hash);
    sc.stack = Some(stack.n_samples());
    let t = stack.to_tensor();
    save_tensor(&dir.join(format!("{stem}.cpt")), &t)?;
    sc.finiteness = t.finiteness();
    // Sample dims, not the concatenated ones, are what a reader needs.
    sc.dims = stack.sample_dims();
    let json = serde_json::to_string_pretty(&sc).expect("sidecar serializes");
    let p = dir.join(format!("{stem}.json"));
    std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
}

pub fn load_stack(dir: &Path, stem: &str) -> Result<FieldStack> {
    let p = dir.join(format!("{stem}.json"));
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let sc: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
    let t = load_tensor(&dir.join(format!("{stem}.cpt")), sc.finiteness)?;
    let stack = FieldStack::from_tensor(t, sc.dims)?;
    if sc.stack != Some(stack.n_samples()) {
        return Err(Error::Format(format!(
            "{}: sidecar expects {:?} samples, file holds {}",
            p.display(),
            sc.stack,
            stack.n_samples()
        )));
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_tensor() {
        let t = FieldTensor::new(Dims([1, 1, 1, 1]), vec![0.0]).unwrap();
        assert_eq!(t.get([0, 0, 0, 0]), Some(0.0));
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let err = FieldTensor::new(Dims([2, 3, 1, 1]), vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn non_finite_is_data_error() {
        let err = FieldTensor::new(Dims([1, 2, 1, 1]), vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(FieldTensor::new(Dims::line(1), vec![f64::INFINITY]).is_err());
        assert!(FieldTensor::quantile(Dims::line(1), vec![f64::INFINITY]).is_ok());
        assert!(FieldTensor::quantile(Dims::line(1), vec![f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = FieldTensor::new(Dims([2, 2, 1, 1]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // ((1 * 2 + 0) * 1 + 0) * 1 + 0 = 2
        assert_eq!(t.get([1, 0, 0, 0]), Some(3.0));
        assert_eq!(t.get([2, 0, 0, 0]), None);
    }

    #[test]
    fn negative_zero_round_trips() {
        let t = FieldTensor::new(Dims([1, 1, 1, 1]), vec![-0.0]).unwrap();
        let mut buf = Vec::new();
        let n = write_tensor(&t, &mut buf).unwrap();
        assert_eq!(n as usize, buf.len());
        assert_eq!(buf.len(), HEADER_LEN + 8);
        let back = read_tensor(buf.as_slice()).unwrap();
        assert_eq!(back.data()[0].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn bad_magic_rank_and_truncation() {
        let t = FieldTensor::new(Dims([1, 2, 1, 1]), vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&t, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_tensor(bad.as_slice()), Err(Error::Format(_))));

        let mut bad = buf.clone();
        bad[4] = 3;
        assert!(matches!(read_tensor(bad.as_slice()), Err(Error::Format(_))));

        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_tensor(short), Err(Error::Format(_))));

        assert!(matches!(read_tensor(&buf[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn header_is_little_endian() {
        let t = FieldTensor::new(Dims([1, 258, 1, 1]), vec![0.5; 258]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&t, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"CPT1\x04");
        assert_eq!(&buf[5..9], &[1, 0, 0, 0]);
        assert_eq!(&buf[9..13], &[2, 1, 0, 0]);
        assert_eq!(&buf[21..29], &0.5f64.to_le_bytes());
    }

    #[test]
    fn quantile_infinity_survives_permissive_read() {
        let q = FieldTensor::quantile(Dims::line(2), vec![0.5, f64::INFINITY]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&q, &mut buf).unwrap();
        assert!(read_tensor(buf.as_slice()).is_err());
        let back = read_tensor_with(buf.as_slice(), Finiteness::PosInf).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn stats_bounds() {
        let t = FieldTensor::new(Dims::line(4), vec![3.0, -4.0, 0.0, 1.0]).unwrap();
        let s = t.stats().unwrap();
        assert_eq!(s.min, -4.0);
        assert_eq!(s.max, 3.0);
        assert_eq!(s.mean, 0.0);
        assert!((s.l2norm - 26f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn time_slice_windows() {
        let data: Vec<f64> = (0..12).map(f64::from).collect();
        let t = FieldTensor::new(Dims([4, 3, 1, 1]), data).unwrap();
        let w = t.time_slice(1, 2).unwrap();
        assert_eq!(w.dims(), Dims([2, 3, 1, 1]));
        assert_eq!(w.data(), &[3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert!(t.time_slice(3, 2).is_err());
    }

    #[test]
    fn stack_tensor_round_trip() {
        let dims = Dims([2, 2, 1, 1]);
        let s = FieldStack::new(dims, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(s.n_samples(), 3);
        assert_eq!(s.sample(1), &[4.0, 5.0, 6.0, 7.0]);
        let t = s.to_tensor();
        assert_eq!(t.dims(), Dims([6, 2, 1, 1]));
        assert_eq!(FieldStack::from_tensor(t, dims).unwrap(), s);
    }

    #[test]
    fn stack_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = FieldStack::with_finiteness(
            Dims::line(2),
            vec![1.0, f64::NEG_INFINITY, 3.0, f64::INFINITY],
            Finiteness::Infinite,
        )
        .unwrap();
        save_stack(dir.path(), "band", &s, 7, "abc").unwrap();
        assert_eq!(load_stack(dir.path(), "band").unwrap(), s);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500500.0);
    }
}

//! Dense row-major tensors and the FTEN v1 file format.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::{Dtype, Real};

/// Dense N-dimensional array, row-major, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Tensor<T>> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(format!("zero extent in shape {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor<T> {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![T::ZERO; numel(shape)]),
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Tensor<T> {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![v; numel(shape)]),
        }
    }

    pub fn scalar(v: T) -> Tensor<T> {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![v]),
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Tensor<T> {
        let n = numel(shape);
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new((0..n).map(|i| f(i)).collect()),
        }
    }

    pub fn from_f64_slice(shape: &[usize], vals: &[f64]) -> Result<Tensor<T>> {
        Tensor::new(
            shape.to_vec(),
            vals.iter().map(|&x| T::from_f64(x)).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data, new shape; element count must be conserved.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        if numel(&shape) != self.numel() {
            return Err(Error::dim(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn convert<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| U::from_f64(v.to_f64())).collect()),
        }
    }

    /// Serialize in FTEN v1: `FTEN`, version, dtype, rank, reserved,
    /// rank little-endian u64 extents, row-major little-endian payload.
    pub fn to_ften_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.shape.len() + self.numel() * 8);
        out.extend_from_slice(b"FTEN");
        out.push(1u8);
        out.push(T::DTYPE as u8);
        out.push(self.shape.len() as u8);
        out.push(0u8);
        for &e in &self.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in self.data.iter() {
            v.write_le(&mut out);
        }
        out
    }

    pub fn from_ften_bytes(bytes: &[u8]) -> Result<Tensor<T>> {
        let (dtype, shape, payload) = parse_ften_header(bytes)?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "dtype mismatch: file holds {dtype:?}, requested {:?}",
                T::DTYPE
            )));
        }
        let w = dtype.size_bytes();
        let data: Vec<T> = payload.chunks_exact(w).map(T::read_le).collect();
        Tensor::new(shape, data)
    }

    pub fn write_ften(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_ften_bytes())?;
        Ok(())
    }

    pub fn read_ften(path: &Path) -> Result<Tensor<T>> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Tensor::from_ften_bytes(&bytes)
    }

    /// Read an FTEN file of either dtype, converting elements to `T`.
    pub fn read_ften_convert(path: &Path) -> Result<Tensor<T>> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let (dtype, shape, payload) = parse_ften_header(&bytes)?;
        let data: Vec<T> = match dtype {
            Dtype::F32 => payload
                .chunks_exact(4)
                .map(|c| T::from_f64(f32::read_le(c) as f64))
                .collect(),
            Dtype::F64 => payload.chunks_exact(8).map(|c| T::read_le_f64(c)).collect(),
        };
        Tensor::new(shape, data)
    }
}

trait ReadLeF64 {
    fn read_le_f64(bytes: &[u8]) -> Self;
}

impl<T: Real> ReadLeF64 for T {
    fn read_le_f64(bytes: &[u8]) -> T {
        T::from_f64(f64::read_le(bytes))
    }
}

fn parse_ften_header(bytes: &[u8]) -> Result<(Dtype, Vec<usize>, &[u8])> {
    if bytes.len() < 8 {
        return Err(Error::Format("FTEN file shorter than header".into()));
    }
    if &bytes[0..4] != b"FTEN" {
        return Err(Error::Format("bad magic, expected FTEN".into()));
    }
    if bytes[4] != 1 {
        return Err(Error::Format(format!("unsupported FTEN version {}", bytes[4])));
    }
    let dtype = Dtype::from_u8(bytes[5])
        .ok_or_else(|| Error::Format(format!("unknown dtype tag {}", bytes[5])))?;
    let rank = bytes[6] as usize;
    if bytes[7] != 0 {
        return Err(Error::Format("reserved byte must be zero".into()));
    }
    let header = 8 + 8 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated extents".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[8 + 8 * i..16 + 8 * i]);
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let expected = numel(&shape) * dtype.size_bytes();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, shape {:?} at {:?} needs {}",
            payload.len(),
            shape,
            dtype,
            expected
        )));
    }
    Ok((dtype, shape, payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_length_must_agree() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn ften_round_trip_is_byte_identical() {
        let t = Tensor::<f64>::from_f64_slice(&[2, 3], &[1.5, -2.25, 0.0, 3.5, 1e-12, 7.0])
            .unwrap();
        let bytes = t.to_ften_bytes();
        let back = Tensor::<f64>::from_ften_bytes(&bytes).unwrap();
        assert_eq!(back.to_ften_bytes(), bytes);
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn ften_f32_round_trip() {
        let t = Tensor::<f32>::from_f64_slice(&[4], &[0.1, 0.2, -0.3, 4.0]).unwrap();
        let bytes = t.to_ften_bytes();
        assert_eq!(bytes[5], 0); // dtype tag f32
        let back = Tensor::<f32>::from_ften_bytes(&bytes).unwrap();
        assert_eq!(back.to_ften_bytes(), bytes);
    }

    #[test]
    fn ften_rejects_corruption() {
        let t = Tensor::<f64>::from_f64_slice(&[2], &[1.0, 2.0]).unwrap();
        let mut bytes = t.to_ften_bytes();
        bytes[0] = b'X';
        assert!(Tensor::<f64>::from_ften_bytes(&bytes).is_err());
        let mut bytes2 = t.to_ften_bytes();
        bytes2.truncate(bytes2.len() - 1);
        assert!(Tensor::<f64>::from_ften_bytes(&bytes2).is_err());
    }

    #[test]
    fn convert_reads_f64_files_into_f32() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ften");
        let t = Tensor::<f64>::from_f64_slice(&[3], &[1.0, 2.5, -3.0]).unwrap();
        t.write_ften(&p).unwrap();
        let back: Tensor<f32> = Tensor::read_ften_convert(&p).unwrap();
        assert_eq!(back.data(), &[1.0f32, 2.5, -3.0]);
    }
}

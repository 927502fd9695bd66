//! LRRT raw tensor container.
//!
//! Layout: magic `LRRT`, u8 version (=1), u8 dtype (0 = f32, 1 = f64),
//! u8 rank, little-endian u32 extents, then the row-major payload in
//! little-endian order.

use alloc::vec::Vec;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"LRRT";
pub const VERSION: u8 = 1;

/// A decoded tensor of either supported precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> Shape {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// View as f64 regardless of stored precision.
    pub fn to_f64(&self) -> Tensor<f64> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.clone(),
        }
    }
}

pub fn encode<E: Scalar>(tensor: &Tensor<E>) -> Vec<u8> {
    let shape = tensor.shape();
    let mut out = Vec::with_capacity(7 + 4 * shape.rank() + tensor.numel() * E::BYTES);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(E::DTYPE);
    out.push(shape.rank() as u8);
    for &d in shape.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let payload_start = out.len();
    out.resize(payload_start + tensor.numel() * E::BYTES, 0);
    for (i, &v) in tensor.data().iter().enumerate() {
        v.write_le(&mut out[payload_start + i * E::BYTES..]);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < 7 {
        return Err(crate::invalid_arg!("lrrt: truncated header"));
    }
    if bytes[..4] != MAGIC {
        return Err(crate::invalid_arg!("lrrt: bad magic bytes"));
    }
    if bytes[4] != VERSION {
        return Err(crate::invalid_arg!("lrrt: unsupported version {}", bytes[4]));
    }
    let dtype = bytes[5];
    let rank = bytes[6] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(crate::invalid_arg!("lrrt: rank {rank} out of range 1..=4"));
    }
    let header_len = 7 + 4 * rank;
    if bytes.len() < header_len {
        return Err(crate::invalid_arg!("lrrt: truncated extents"));
    }
    let mut dims = [0usize; MAX_RANK];
    for (i, dim) in dims.iter_mut().take(rank).enumerate() {
        let off = 7 + 4 * i;
        *dim = u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
            as usize;
    }
    let shape = Shape::new(&dims[..rank]);
    let payload = &bytes[header_len..];

    fn read_payload<E: Scalar>(payload: &[u8], shape: Shape) -> Result<Tensor<E>> {
        let want = shape.numel() * E::BYTES;
        if payload.len() != want {
            return Err(crate::invalid_arg!(
                "lrrt: payload length {} does not match shape {shape} ({want} bytes)",
                payload.len()
            ));
        }
        let data = payload
            .chunks_exact(E::BYTES)
            .map(|c| E::read_le(c))
            .collect();
        Tensor::from_vec(shape, data)
    }

    match dtype {
        0 => Ok(AnyTensor::F32(read_payload(payload, shape)?)),
        1 => Ok(AnyTensor::F64(read_payload(payload, shape)?)),
        other => Err(crate::invalid_arg!("lrrt: unknown dtype {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_stable() {
        let t = Tensor::<f32>::from_vec(Shape::d2(2, 3), alloc::vec![0.0; 6]).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..4], b"LRRT");
        assert_eq!(bytes[4], 1); // version
        assert_eq!(bytes[5], 0); // f32
        assert_eq!(bytes[6], 2); // rank
        assert_eq!(&bytes[7..11], &2u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 15 + 6 * 4);
    }

    #[test]
    fn rejects_corrupted_input() {
        let t = Tensor::<f64>::from_vec(Shape::d1(2), alloc::vec![1.0, 2.0]).unwrap();
        let mut bytes = encode(&t);
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());

        let mut bytes = encode(&t);
        bytes[5] = 9; // unknown dtype
        assert!(decode(&bytes).is_err());

        let bytes = encode(&t);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_preserves_bits_f64(values in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
            let t = Tensor::<f64>::from_vec(Shape::d1(values.len()), values).unwrap();
            match decode(&encode(&t)).unwrap() {
                AnyTensor::F64(back) => prop_assert!(back.bit_eq(&t)),
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn round_trip_preserves_bits_f32(values in proptest::collection::vec(-1e6f32..1e6, 1..64)) {
            let t = Tensor::<f32>::from_vec(Shape::d2(1, values.len()), values).unwrap();
            match decode(&encode(&t)).unwrap() {
                AnyTensor::F32(back) => prop_assert!(back.bit_eq(&t)),
                _ => prop_assert!(false),
            }
        }
    }
}

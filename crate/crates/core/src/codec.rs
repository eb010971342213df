//! Bit-exact serde encodings for float arrays: little-endian `f64` bytes in
//! base64 alongside the shape.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct Tensor {
    shape: Vec<usize>,
    data: String,
}

fn encode(values: impl Iterator<Item = f64>, len: usize) -> String {
    let mut bytes = Vec::with_capacity(len * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

fn decode<E: serde::de::Error>(data: &str, expected: usize) -> Result<Vec<f64>, E> {
    let bytes = STANDARD.decode(data).map_err(E::custom)?;
    if bytes.len() != expected * 8 {
        return Err(E::custom(format!(
            "tensor payload holds {} bytes, shape needs {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub mod array2 {
    use super::*;
    use ndarray::Array2;

    pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        Tensor {
            shape: a.shape().to_vec(),
            data: encode(a.iter().copied(), a.len()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let t = Tensor::deserialize(d)?;
        if t.shape.len() != 2 {
            return Err(D::Error::custom("expected a rank-2 tensor"));
        }
        let values = decode(&t.data, t.shape[0] * t.shape[1])?;
        Array2::from_shape_vec((t.shape[0], t.shape[1]), values).map_err(D::Error::custom)
    }
}

pub mod array1 {
    use super::*;
    use ndarray::Array1;

    pub fn serialize<S: Serializer>(a: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        Tensor {
            shape: vec![a.len()],
            data: encode(a.iter().copied(), a.len()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        let t = Tensor::deserialize(d)?;
        if t.shape.len() != 1 {
            return Err(D::Error::custom("expected a rank-1 tensor"));
        }
        Ok(Array1::from(decode(&t.data, t.shape[0])?))
    }
}

pub mod vec_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        Tensor {
            shape: vec![v.len()],
            data: encode(v.iter().copied(), v.len()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let t = Tensor::deserialize(d)?;
        if t.shape.len() != 1 {
            return Err(D::Error::custom("expected a rank-1 tensor"));
        }
        decode(&t.data, t.shape[0])
    }
}

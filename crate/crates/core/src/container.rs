//! `S2A1` binary container: named little-endian f32 tensors plus a JSON
//! metadata blob.
//!
//! ```text
//! "S2A1"            4 bytes magic
//! u32               version (1)
//! u32               tensor count
//! per tensor:
//!   u16             name length (> 0)
//!   [u8]            UTF-8 name
//!   u8              rank
//!   rank × u32      extents
//!   f32 × numel     row-major payload
//! u32               JSON length
//! [u8]              UTF-8 JSON metadata
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use serde_json::Value;

use crate::error::{Result, S2aError};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"S2A1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub meta: Value,
}

impl Container {
    pub fn new(meta: Value) -> Self {
        Container {
            tensors: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name)
            .ok_or_else(|| S2aError::InvalidInput(format!("container has no tensor named {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(self.tensors.len()).map_err(too_big)?.to_le_bytes());
        for (i, (name, t)) in self.tensors.iter().enumerate() {
            if name.is_empty() {
                return Err(S2aError::InvalidInput(format!("tensor {i} has an empty name")));
            }
            if self.tensors[..i].iter().any(|(n, _)| n == name) {
                return Err(S2aError::InvalidInput(format!("duplicate tensor name {name:?}")));
            }
            out.extend_from_slice(&u16::try_from(name.len()).map_err(too_big)?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::try_from(t.rank()).map_err(too_big)?);
            for &e in t.shape() {
                out.extend_from_slice(&u32::try_from(e).map_err(too_big)?.to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let json = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&u32::try_from(json.len()).map_err(too_big)?.to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(S2aError::Format {
                offset: 0,
                msg: format!("bad magic {magic:?}"),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(S2aError::Version(version));
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let at = r.pos;
            let len = r.u16("name length")? as usize;
            if len == 0 {
                return Err(S2aError::Format {
                    offset: at,
                    msg: "empty tensor name".into(),
                });
            }
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|e| S2aError::Format {
                    offset: at + 2,
                    msg: format!("name is not UTF-8: {e}"),
                })?
                .to_string();
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| S2aError::Format {
                    offset: r.pos,
                    msg: "tensor size overflows".into(),
                })?;
            let nbytes = numel.checked_mul(4).ok_or_else(|| S2aError::Format {
                offset: r.pos,
                msg: "tensor size overflows".into(),
            })?;
            let payload = r.take(nbytes, "tensor payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| S2aError::Format {
                offset: at,
                msg: e.to_string(),
            })?;
            tensors.push((name, t));
        }
        let json_len = r.u32("json length")? as usize;
        let json_at = r.pos;
        let meta = serde_json::from_slice(r.take(json_len, "json metadata")?).map_err(|e| S2aError::Format {
            offset: json_at,
            msg: format!("metadata: {e}"),
        })?;
        if r.pos != bytes.len() {
            return Err(S2aError::Format {
                offset: r.pos,
                msg: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Container { tensors, meta })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn too_big<E: std::fmt::Display>(e: E) -> S2aError {
    S2aError::InvalidInput(format!("value too large for container field: {e}"))
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(S2aError::Format {
                offset: self.pos,
                msg: format!("truncated while reading {what} ({n} bytes wanted, {} left)", self.bytes.len() - self.pos),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn sample() -> Container {
        let mut c = Container::new(json!({"kind": "test", "n": 2}));
        c.push("a", Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE]).unwrap());
        c.push("bias", Tensor::new(vec![3], vec![0.0, -0.0, 7.0]).unwrap());
        c
    }

    #[test]
    fn layout_is_bit_exact() {
        let mut c = Container::new(json!({}));
        c.push("x", Tensor::new(vec![1], vec![1.0]).unwrap());
        let b = c.to_bytes().unwrap();
        let mut want = b"S2A1".to_vec();
        want.extend([1, 0, 0, 0, 1, 0, 0, 0, 1, 0, b'x', 1, 1, 0, 0, 0]);
        want.extend(1.0f32.to_le_bytes());
        want.extend([2, 0, 0, 0, b'{', b'}']);
        assert_eq!(b, want);
    }

    #[test]
    fn unknown_version_is_hard_error() {
        let mut b = sample().to_bytes().unwrap();
        b[4] = 2;
        assert!(matches!(Container::from_bytes(&b), Err(S2aError::Version(2))));
    }

    #[test]
    fn truncation_reports_offset() {
        let b = sample().to_bytes().unwrap();
        for cut in [3, 10, 20, b.len() - 1] {
            match Container::from_bytes(&b[..cut]) {
                Err(S2aError::Format { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn empty_names_rejected() {
        let mut c = Container::new(json!(null));
        c.push("", Tensor::new(vec![1], vec![0.0]).unwrap());
        assert!(c.to_bytes().is_err());
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor<f32>> {
        prop::collection::vec(1usize..5, 1..=3).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n)
                .prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn round_trip_bit_exact(
            tensors in prop::collection::vec(("[a-z.0-9]{1,12}", arb_tensor()), 0..6),
            note in ".{0,20}",
        ) {
            let mut c = Container::new(json!({"note": note}));
            let mut seen = std::collections::HashSet::new();
            for (n, t) in tensors {
                if seen.insert(n.clone()) {
                    c.push(n, t);
                }
            }
            let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back.tensors.len(), c.tensors.len());
            for ((n1, t1), (n2, t2)) in c.tensors.iter().zip(&back.tensors) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
            prop_assert_eq!(back.meta, c.meta);
        }
    }
}

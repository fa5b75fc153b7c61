//! Bit-exact binary containers.
//!
//! Spectrogram container: magic "ALIM", u32 LE version = 1, u32 LE kind
//! (0 = complex, 1 = magnitude, 2 = db_normalized), u32 LE rows, u32 LE
//! cols, u32 LE fft_size, u32 LE hop, then a row-major f32 LE payload
//! (complex entries interleaved re, im).
//!
//! Checkpoint container: magic "ALMC", u32 LE version = 1, u32 LE tensor
//! count, then per tensor: u16 LE name length, UTF-8 name, u8 rank,
//! u32 LE dims, f32 LE row-major payload.

use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex64;

use crate::dsp::{Spectrogram, SpectrogramKind, StftConfig};
use crate::{Error, Result};

pub const SPECTROGRAM_MAGIC: &[u8; 4] = b"ALIM";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ALMC";
pub const CONTAINER_VERSION: u32 = 1;

fn kind_code(kind: SpectrogramKind) -> u32 {
    match kind {
        SpectrogramKind::Complex => 0,
        SpectrogramKind::Magnitude => 1,
        SpectrogramKind::DbNormalized => 2,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_payload(&mut self, count: usize) -> Result<Vec<f64>> {
        let b = self.take(4 * count)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}

fn push_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

/// Serialize a spectrogram to the ALIM container.
pub fn spectrogram_bytes(spec: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SPECTROGRAM_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&kind_code(spec.kind()).to_le_bytes());
    out.extend_from_slice(&(spec.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(spec.cols() as u32).to_le_bytes());
    out.extend_from_slice(&(spec.config().fft_size as u32).to_le_bytes());
    out.extend_from_slice(&(spec.config().hop as u32).to_le_bytes());
    match spec.kind() {
        SpectrogramKind::Complex => {
            for c in spec.complex_data().expect("complex data") {
                push_f32(&mut out, c.re);
                push_f32(&mut out, c.im);
            }
        }
        _ => {
            for &v in spec.real_data().expect("real data") {
                push_f32(&mut out, v);
            }
        }
    }
    out
}

pub fn write_spectrogram(path: &Path, spec: &Spectrogram) -> Result<()> {
    fs::write(path, spectrogram_bytes(spec)).map_err(|e| Error::io(path, e))
}

/// Read an ALIM container. The stored header carries only fft_size and
/// hop; window and padding come from the crate defaults.
pub fn read_spectrogram(path: &Path) -> Result<Spectrogram> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != SPECTROGRAM_MAGIC {
        return Err(Error::format(path, "bad magic, not a spectrogram container"));
    }
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let kind = r.u32()?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let fft_size = r.u32()? as usize;
    let hop = r.u32()? as usize;
    let config = StftConfig::new(fft_size, hop);
    match kind {
        0 => {
            let raw = r.f32_payload(rows * cols * 2)?;
            let data: Vec<Complex64> = raw
                .chunks_exact(2)
                .map(|c| Complex64::new(c[0], c[1]))
                .collect();
            Spectrogram::complex(rows, cols, config, data)
        }
        1 => Spectrogram::magnitude(rows, cols, config, r.f32_payload(rows * cols)?),
        2 => Spectrogram::db_normalized(rows, cols, config, r.f32_payload(rows * cols)?),
        other => Err(Error::format(path, format!("unknown spectrogram kind {other}"))),
    }
}

/// One named tensor heading into or out of a checkpoint container.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> NamedTensor {
        NamedTensor {
            name: name.into(),
            dims,
            values,
        }
    }
}

/// Serialize named tensors to the ALMC container.
pub fn checkpoint_bytes(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::InvalidInput(format!("tensor name too long: {}", t.name)));
        }
        if t.dims.len() > u8::MAX as usize {
            return Err(Error::InvalidInput(format!("tensor rank too large: {}", t.name)));
        }
        let numel: usize = t.dims.iter().product();
        if numel != t.values.len() {
            return Err(Error::shape(&t.name, &[numel], &[t.values.len()]));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.values {
            push_f32(&mut out, v);
        }
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    fs::write(path, checkpoint_bytes(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad magic, not a checkpoint container"));
    }
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let numel: usize = dims.iter().product();
        let values = r.f32_payload(numel)?;
        tensors.push(NamedTensor { name, dims, values });
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spectrogram_header_layout_is_pinned() {
        let cfg = StftConfig::new(510, 514);
        let spec = Spectrogram::magnitude(2, 3, cfg, vec![0.5; 6]).unwrap();
        let bytes = spectrogram_bytes(&spec);
        assert_eq!(&bytes[0..4], b"ALIM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1); // version
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1); // magnitude
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2); // rows
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3); // cols
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 510);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 514);
        assert_eq!(bytes.len(), 28 + 6 * 4);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.alim");
        std::fs::write(&path, b"NOPE0000000000000000000000000000").unwrap();
        assert!(read_spectrogram(&path).is_err());
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn complex_payload_interleaves_re_im() {
        let cfg = StftConfig::new(4, 2);
        let spec = Spectrogram::complex(
            1,
            2,
            cfg,
            vec![Complex64::new(1.0, -2.0), Complex64::new(3.0, 4.0)],
        )
        .unwrap();
        let bytes = spectrogram_bytes(&spec);
        let payload = &bytes[28..];
        let vals: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(vals, vec![1.0, -2.0, 3.0, 4.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn spectrogram_round_trip_is_identity_on_f32_values(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cfg = StftConfig::new(510, 514);
            // values quantized to f32 so the container is lossless
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| (rng.gen_range(0.0..10.0f64) as f32) as f64)
                .collect();
            let spec = Spectrogram::magnitude(rows, cols, cfg, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("s.alim");
            write_spectrogram(&path, &spec).unwrap();
            let back = read_spectrogram(&path).unwrap();
            prop_assert_eq!(back.rows(), rows);
            prop_assert_eq!(back.cols(), cols);
            prop_assert_eq!(back.real_data().unwrap(), spec.real_data().unwrap());
            // writing again is byte-identical
            let again = spectrogram_bytes(&back);
            prop_assert_eq!(again, spectrogram_bytes(&spec));
        }

        #[test]
        fn checkpoint_round_trip_preserves_names_dims_values(
            n_tensors in 1usize..5,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let tensors: Vec<NamedTensor> = (0..n_tensors)
                .map(|i| {
                    let rank = rng.gen_range(1..4usize);
                    let dims: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..5usize)).collect();
                    let numel: usize = dims.iter().product();
                    let values: Vec<f64> = (0..numel)
                        .map(|_| (rng.gen_range(-5.0..5.0f64) as f32) as f64)
                        .collect();
                    NamedTensor::new(format!("layer{i}.weight"), dims, values)
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.almc");
            write_checkpoint(&path, &tensors).unwrap();
            let back = read_checkpoint(&path).unwrap();
            prop_assert_eq!(back, tensors);
        }
    }
}

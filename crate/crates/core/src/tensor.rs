//! Minimal binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | offset        | size        | content                               |
//! |---------------|-------------|---------------------------------------|
//! | 0             | 4           | magic `SUQT`                          |
//! | 4             | 1           | version, `0x01`                       |
//! | 5             | 1           | element kind (`0x01` f32, `0x02` u8)  |
//! | 6             | 1           | ndim                                  |
//! | 7             | 4 × ndim    | extents as `u32`                      |
//! | 7 + 4 × ndim  | payload     | row-major elements, last axis fastest |
//!
//! Float payloads must be finite and `u8` payloads must be binary labels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SUQT";
pub const VERSION: u8 = 0x01;

const KIND_F32: u8 = 0x01;
const KIND_U8: u8 = 0x02;

// Payload is streamed through a buffer of this many bytes.
const CHUNK_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Float32,
    Uint8,
}

impl ElementKind {
    fn code(self) -> u8 {
        match self {
            ElementKind::Float32 => KIND_F32,
            ElementKind::Uint8 => KIND_U8,
        }
    }

    fn width(self) -> usize {
        match self {
            ElementKind::Float32 => 4,
            ElementKind::Uint8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Float32(Vec<f32>),
    Uint8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::Float32(v) => v.len(),
            TensorData::Uint8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ElementKind {
        match self {
            TensorData::Float32(_) => ElementKind::Float32,
            TensorData::Uint8(_) => ElementKind::Uint8,
        }
    }
}

/// A dense row-major tensor of `f32` values or binary `u8` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

/// Size in bytes of the header for a tensor with `ndim` axes.
pub fn header_len(ndim: usize) -> usize {
    7 + 4 * ndim
}

fn element_count(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::InvalidTensor("tensor must have at least one axis".into()));
    }
    if dims.len() > u8::MAX as usize {
        return Err(Error::InvalidTensor(format!("{} axes exceed the format limit of 255", dims.len())));
    }
    let mut count = 1usize;
    for &d in dims {
        if d == 0 {
            return Err(Error::InvalidTensor(format!("zero extent in dims {dims:?}")));
        }
        if d > u32::MAX as usize {
            return Err(Error::InvalidTensor(format!("extent {d} does not fit in u32")));
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::InvalidTensor(format!("element count of {dims:?} overflows")))?;
    }
    Ok(count)
}

fn validate_f32(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

fn validate_labels(values: &[u8]) -> Result<()> {
    match values.iter().position(|&v| v > 1) {
        Some(index) => Err(Error::InvalidLabel {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected = element_count(&dims)?;
        if expected != data.len() {
            return Err(Error::SizeMismatch {
                expected,
                actual: data.len(),
            });
        }
        match &data {
            TensorData::Float32(v) => validate_f32(v)?,
            TensorData::Uint8(v) => validate_labels(v)?,
        }
        Ok(Self { dims, data })
    }

    pub fn from_f32(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::Float32(values))
    }

    pub fn from_labels(dims: Vec<usize>, values: Vec<u8>) -> Result<Self> {
        Self::new(dims, TensorData::Uint8(values))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn kind(&self) -> ElementKind {
        self.data.kind()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_parts(self) -> (Vec<usize>, TensorData) {
        (self.dims, self.data)
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::Float32(v) => Some(v),
            TensorData::Uint8(_) => None,
        }
    }

    pub fn as_labels(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::Uint8(v) => Some(v),
            TensorData::Float32(_) => None,
        }
    }

    /// Total encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        header_len(self.dims.len()) + self.len() * self.kind().width()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = Vec::with_capacity(header_len(self.dims.len()));
        header.extend_from_slice(&MAGIC);
        header.push(VERSION);
        header.push(self.kind().code());
        header.push(self.dims.len() as u8);
        for &d in &self.dims {
            header.extend_from_slice(&(d as u32).to_le_bytes());
        }
        w.write_all(&header)?;
        match &self.data {
            TensorData::Uint8(v) => w.write_all(v)?,
            TensorData::Float32(v) => {
                let mut buf = Vec::with_capacity(CHUNK_BYTES);
                for chunk in v.chunks(CHUNK_BYTES / 4) {
                    buf.clear();
                    for x in chunk {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                    w.write_all(&buf)?;
                }
            }
        }
        w.flush()
    }

    /// Decodes a tensor from a byte stream, validating every invariant.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut fixed = [0u8; 7];
        read_header_bytes(&mut r, &mut fixed)?;
        if fixed[..4] != MAGIC {
            return Err(Error::MalformedHeader(format!("bad magic {:?}", &fixed[..4])));
        }
        if fixed[4] != VERSION {
            return Err(Error::MalformedHeader(format!("unsupported version {:#04x}", fixed[4])));
        }
        let kind = match fixed[5] {
            KIND_F32 => ElementKind::Float32,
            KIND_U8 => ElementKind::Uint8,
            other => {
                return Err(Error::MalformedHeader(format!("unknown element kind {other:#04x}")))
            }
        };
        let ndim = fixed[6] as usize;
        if ndim == 0 {
            return Err(Error::MalformedHeader("ndim is zero".into()));
        }
        let mut extents = vec![0u8; 4 * ndim];
        read_header_bytes(&mut r, &mut extents)?;
        let dims: Vec<usize> = extents
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let expected = element_count(&dims).map_err(|e| Error::MalformedHeader(e.to_string()))?;

        let data = match kind {
            ElementKind::Uint8 => {
                let mut v = Vec::new();
                read_payload(&mut r, expected, 1, |bytes| v.extend_from_slice(bytes))?;
                validate_labels(&v)?;
                TensorData::Uint8(v)
            }
            ElementKind::Float32 => {
                let mut v = Vec::new();
                read_payload(&mut r, expected, 4, |bytes| {
                    v.extend(
                        bytes
                            .chunks_exact(4)
                            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
                    )
                })?;
                validate_f32(&v)?;
                TensorData::Float32(v)
            }
        };
        Ok(Self { dims, data })
    }
}

fn read_header_bytes<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::MalformedHeader("truncated header".into()),
        _ => Error::MalformedHeader(e.to_string()),
    })
}

/// Reads exactly `count` elements of `width` bytes and rejects trailing bytes.
fn read_payload<R: Read>(
    r: &mut R,
    count: usize,
    width: usize,
    mut sink: impl FnMut(&[u8]),
) -> Result<()> {
    let total = count * width;
    let mut buf = vec![0u8; CHUNK_BYTES.min(total.max(1))];
    let mut seen = 0usize;
    while seen < total {
        let want = buf.len().min(total - seen);
        let n = read_some(r, &mut buf[..want])?;
        if n == 0 {
            return Err(Error::SizeMismatch {
                expected: count,
                actual: seen / width,
            });
        }
        // keep element boundaries aligned
        let mut got = n;
        while got % width != 0 {
            let m = read_some(r, &mut buf[got..got + (width - got % width)])?;
            if m == 0 {
                return Err(Error::SizeMismatch {
                    expected: count,
                    actual: (seen + got) / width,
                });
            }
            got += m;
        }
        sink(&buf[..got]);
        seen += got;
    }
    let mut trailing = 0usize;
    let mut probe = [0u8; 4096];
    loop {
        let n = read_some(r, &mut probe)?;
        if n == 0 {
            break;
        }
        trailing += n;
    }
    if trailing > 0 {
        return Err(Error::SizeMismatch {
            expected: count,
            actual: count + trailing / width,
        });
    }
    Ok(())
}

fn read_some<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    loop {
        match r.read(buf) {
            Ok(n) => return Ok(n),
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(Error::MalformedHeader(format!("read failed: {e}"))),
        }
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Tensor::read_from(BufReader::new(file))
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    tensor
        .write_to(BufWriter::new(file))
        .map_err(|e| Error::io(path, e))
}

/// Reads only the header of a tensor file and returns its kind and dims.
pub fn read_header(path: impl AsRef<Path>) -> Result<(ElementKind, Vec<usize>)> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut fixed = [0u8; 7];
    read_header_bytes(&mut r, &mut fixed)?;
    if fixed[..4] != MAGIC || fixed[4] != VERSION {
        return Err(Error::MalformedHeader(format!("{} is not a SUQT v1 file", path.display())));
    }
    let kind = match fixed[5] {
        KIND_F32 => ElementKind::Float32,
        KIND_U8 => ElementKind::Uint8,
        other => return Err(Error::MalformedHeader(format!("unknown element kind {other:#04x}"))),
    };
    let mut extents = vec![0u8; 4 * fixed[6] as usize];
    read_header_bytes(&mut r, &mut extents)?;
    let dims: Vec<usize> = extents
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    element_count(&dims).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    Ok((kind, dims))
}

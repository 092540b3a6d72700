//! Binary formats: `.ivl` volumes and label maps, `.ivparams` parameter sets.
//!
//! `.ivl` layout, little-endian throughout:
//!
//! ```text
//! "IVL1" | u32 version = 1 | u8 dtype (0 f32, 1 f64, 2 u8) | u8 rank
//!        | rank × u32 extents | 3 × f32 spacing (mm) | payload
//! ```
//!
//! `.ivparams` layout:
//!
//! ```text
//! "IVP1" | u32 version = 1 | u32 count
//!        | count × (u32 name length | name bytes | u8 dtype | u8 rank | rank × u32 extents | payload)
//! ```

use std::fs;
use std::path::Path;

use invres_core::autodiff::ParamStore;
use invres_core::data::{LabelVolume, Volume};
use invres_core::kernels::invert_matrix;
use invres_core::{DType, Scalar, Tensor};

use crate::error::{Error, FormatError, Result};

pub const IVL_MAGIC: [u8; 4] = *b"IVL1";
pub const IVPARAMS_MAGIC: [u8; 4] = *b"IVP1";
pub const FORMAT_VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
            Payload::U8(_) => DType::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
    }

    fn read(dtype: DType, bytes: &[u8]) -> Payload {
        match dtype {
            DType::F32 => Payload::F32(bytes.chunks_exact(4).map(f32::read_le).collect()),
            DType::F64 => Payload::F64(bytes.chunks_exact(8).map(f64::read_le).collect()),
            DType::U8 => Payload::U8(bytes.to_vec()),
        }
    }
}

/// Decoded contents of one `.ivl` file.
#[derive(Debug, Clone, PartialEq)]
pub struct IvlFile {
    pub extents: Vec<usize>,
    pub spacing: [f32; 3],
    pub payload: Payload,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end
            .ok_or(FormatError::TruncatedPayload { needed: self.pos.saturating_add(n), available: self.bytes.len() })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != magic {
            return Err(FormatError::BadMagic { found, expected: magic });
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        Ok(())
    }

    fn dtype(&mut self) -> Result<DType, FormatError> {
        let code = self.u8()?;
        DType::from_code(code).ok_or_else(|| FormatError::Inconsistent(format!("unknown dtype code {code}")))
    }

    fn extents(&mut self) -> Result<Vec<usize>, FormatError> {
        let rank = self.u8()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(FormatError::Inconsistent(format!("rank {rank} outside 1..={MAX_RANK}")));
        }
        let extents = (0..rank).map(|_| self.u32().map(|e| e as usize)).collect::<Result<Vec<_>, _>>()?;
        if extents.contains(&0) {
            return Err(FormatError::Inconsistent(format!("zero extent in {extents:?}")));
        }
        Ok(extents)
    }

    fn payload(&mut self, dtype: DType, extents: &[usize]) -> Result<Payload, FormatError> {
        let bytes = extents
            .iter()
            .try_fold(dtype.size(), |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| FormatError::Inconsistent(format!("extents {extents:?} overflow")))?;
        Ok(Payload::read(dtype, self.take(bytes)?))
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            extra => Err(FormatError::Inconsistent(format!("{extra} trailing bytes after payload"))),
        }
    }
}

fn write_extents(out: &mut Vec<u8>, extents: &[usize]) {
    out.push(extents.len() as u8);
    extents.iter().for_each(|&e| out.extend_from_slice(&(e as u32).to_le_bytes()));
}

impl IvlFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.payload.len() * self.payload.dtype().size());
        out.extend_from_slice(&IVL_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.payload.dtype() as u8);
        write_extents(&mut out, &self.extents);
        self.spacing.iter().for_each(|s| out.extend_from_slice(&s.to_le_bytes()));
        self.payload.write(&mut out);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        r.header(IVL_MAGIC)?;
        let dtype = r.dtype()?;
        let extents = r.extents()?;
        let mut spacing = [0f32; 3];
        for s in &mut spacing {
            *s = f32::read_le(r.take(4)?);
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(FormatError::Inconsistent(format!("spacing {spacing:?} must be positive")));
        }
        let payload = r.payload(dtype, &extents)?;
        r.finish()?;
        Ok(IvlFile { extents, spacing, payload })
    }
}

impl From<&Volume> for IvlFile {
    fn from(v: &Volume) -> Self {
        IvlFile { extents: v.data.shape().to_vec(), spacing: v.spacing, payload: Payload::F32(v.data.data().to_vec()) }
    }
}

/// Interprets a decoded file as a `[C, D, H, W]` intensity volume.
pub fn volume_from_ivl(id: &str, file: IvlFile) -> Result<Volume, FormatError> {
    if file.extents.len() != 4 {
        return Err(FormatError::Inconsistent(format!("volume needs rank 4, found extents {:?}", file.extents)));
    }
    let data = match file.payload {
        Payload::F32(v) => v,
        Payload::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        Payload::U8(_) => return Err(FormatError::Inconsistent("volume payload has label dtype u8".into())),
    };
    let tensor = Tensor::new(&file.extents, data).map_err(|e| FormatError::Inconsistent(e.to_string()))?;
    Volume::new(id, tensor, file.spacing).map_err(|e| FormatError::Inconsistent(e.to_string()))
}

/// Interprets a decoded file as a `[D, H, W]` label map with `num_classes` classes.
pub fn labels_from_ivl(id: &str, file: IvlFile, num_classes: usize) -> Result<LabelVolume, FormatError> {
    let shape: [usize; 3] =
        file.extents.as_slice().try_into().map_err(|_| {
            FormatError::Inconsistent(format!("label map needs rank 3, found extents {:?}", file.extents))
        })?;
    let Payload::U8(labels) = file.payload else {
        return Err(FormatError::Inconsistent(format!(
            "label payload has dtype {:?}, expected u8",
            file.payload.dtype()
        )));
    };
    LabelVolume::new(id, shape, labels, num_classes).map_err(|e| FormatError::Inconsistent(e.to_string()))
}

pub fn labels_to_ivl(l: &LabelVolume, spacing: [f32; 3]) -> IvlFile {
    IvlFile { extents: l.shape.to_vec(), spacing, payload: Payload::U8(l.labels.clone()) }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(Error::io(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(Error::io(path))
}

fn file_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn at_path(path: &Path) -> impl FnOnce(FormatError) -> Error + '_ {
    move |source| Error::Format { path: path.to_path_buf(), source }
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    write_bytes(path, &IvlFile::from(v).encode())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let file = IvlFile::decode(&read_bytes(path)?).map_err(at_path(path))?;
    volume_from_ivl(&file_id(path), file).map_err(at_path(path))
}

pub fn write_labels(path: &Path, l: &LabelVolume, spacing: [f32; 3]) -> Result<()> {
    write_bytes(path, &labels_to_ivl(l, spacing).encode())
}

pub fn read_labels(path: &Path, num_classes: usize) -> Result<LabelVolume> {
    let file = IvlFile::decode(&read_bytes(path)?).map_err(at_path(path))?;
    labels_from_ivl(&file_id(path), file, num_classes).map_err(at_path(path))
}

/// One named tensor of a parameter file, values widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub dtype: DType,
    pub extents: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn encode_params<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IVPARAMS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE as u8);
        write_extents(&mut out, t.shape());
        t.data().iter().for_each(|v| v.write_le(&mut out));
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<ParamEntry>, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(IVPARAMS_MAGIC)?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| FormatError::Inconsistent("parameter name is not UTF-8".into()))?
            .to_string();
        let dtype = r.dtype()?;
        let extents = r.extents()?;
        let values = match r.payload(dtype, &extents)? {
            Payload::F32(v) => v.into_iter().map(f64::from).collect(),
            Payload::F64(v) => v,
            Payload::U8(_) => return Err(FormatError::Inconsistent(format!("parameter `{name}` has dtype u8"))),
        };
        entries.push(ParamEntry { name, dtype, extents, values });
    }
    r.finish()?;
    Ok(entries)
}

/// Overwrites every parameter of `store` from `entries`. The entries must
/// cover exactly the parameters of the store, with matching shapes, and
/// every mixing matrix must be invertible.
pub fn apply_params<T: Scalar>(store: &mut ParamStore<T>, entries: &[ParamEntry]) -> Result<()> {
    if entries.len() != store.len() {
        return Err(FormatError::Inconsistent(format!(
            "{} parameters in file, model has {}",
            entries.len(),
            store.len()
        ))
        .into());
    }
    for e in entries {
        let t = Tensor::<T>::from_f64(&e.extents, &e.values)?;
        if e.name.ends_with(".mix") {
            invert_matrix(&t, &e.name)?;
        }
        store.set(&e.name, t)?;
    }
    Ok(())
}

impl From<FormatError> for Error {
    fn from(source: FormatError) -> Self {
        Error::Format { path: Default::default(), source }
    }
}

pub fn save_params<T: Scalar>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    write_bytes(path, &encode_params(store))
}

pub fn load_params<T: Scalar>(path: &Path, store: &mut ParamStore<T>) -> Result<()> {
    let entries = decode_params(&read_bytes(path)?).map_err(at_path(path))?;
    apply_params(store, &entries).map_err(|e| match e {
        Error::Format { source, .. } => Error::Format { path: path.to_path_buf(), source },
        other => other,
    })
}

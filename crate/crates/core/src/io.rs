//! VLV volume files, raw-array import and CSV report export.
//!
//! A VLV file is a 60-byte little-endian header followed by the voxel
//! payload in z-major order:
//!
//! | offset | size | field                                               |
//! |-------:|-----:|-----------------------------------------------------|
//! | 0      | 4    | magic `VLV1`                                        |
//! | 4      | 4    | dtype code: 1 u8, 2 u16, 4 u32, 8 u64, 32 f32       |
//! | 8      | 24   | dims `Dz, Dy, Dx` as u64                            |
//! | 32     | 24   | voxel size `sz, sy, sx` in nm as f64                |
//! | 56     | 4    | role: 0 semantic, 1 instance, 2 binary, 3 probability |
//!
//! `f32` is used for, and only for, probability volumes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::InstanceReport;
use crate::metrics::MetricsReport;
use crate::scale::{FragmentationReport, TileIndex};
use crate::volume::{Dims, LabeledVolume, ProbabilityVolume, Role, Volume, VoxelSize};

pub const MAGIC: [u8; 4] = *b"VLV1";
pub const HEADER_LEN: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    U8,
    U16,
    U32,
    U64,
    F32,
}

impl Dtype {
    pub const ALL: [Dtype; 5] = [Dtype::U8, Dtype::U16, Dtype::U32, Dtype::U64, Dtype::F32];

    pub fn code(self) -> u32 {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::U32 => 4,
            Dtype::U64 => 8,
            Dtype::F32 => 32,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Dtype::ALL.into_iter().find(|d| d.code() == code)
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::U32 | Dtype::F32 => 4,
            Dtype::U64 => 8,
        }
    }

    /// Largest label the type can hold; `None` for `f32`.
    pub fn max_label(self) -> Option<u64> {
        match self {
            Dtype::U8 => Some(u8::MAX.into()),
            Dtype::U16 => Some(u16::MAX.into()),
            Dtype::U32 => Some(u32::MAX.into()),
            Dtype::U64 => Some(u64::MAX),
            Dtype::F32 => None,
        }
    }

    /// Narrowest integer type that holds `max`.
    pub fn for_max_label(max: u64) -> Self {
        [Dtype::U8, Dtype::U16, Dtype::U32]
            .into_iter()
            .find(|d| d.max_label().is_some_and(|m| max <= m))
            .unwrap_or(Dtype::U64)
    }
}

impl std::str::FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(Dtype::U8),
            "u16" => Ok(Dtype::U16),
            "u32" => Ok(Dtype::U32),
            "u64" => Ok(Dtype::U64),
            "f32" => Ok(Dtype::F32),
            _ => Err(Error::InvalidParameter(format!(
                "dtype must be one of u8, u16, u32, u64, f32, got {s:?}"
            ))),
        }
    }
}

/// Role field of the header; probability has no [`Role`] counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VlvRole {
    Semantic,
    Instance,
    Binary,
    Probability,
}

impl VlvRole {
    pub fn code(self) -> u32 {
        match self {
            VlvRole::Semantic => 0,
            VlvRole::Instance => 1,
            VlvRole::Binary => 2,
            VlvRole::Probability => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(VlvRole::Semantic),
            1 => Some(VlvRole::Instance),
            2 => Some(VlvRole::Binary),
            3 => Some(VlvRole::Probability),
            _ => None,
        }
    }

    fn label_role(self) -> Option<Role> {
        match self {
            VlvRole::Semantic => Some(Role::Semantic),
            VlvRole::Instance => Some(Role::Instance),
            VlvRole::Binary => Some(Role::Binary),
            VlvRole::Probability => None,
        }
    }
}

impl From<Role> for VlvRole {
    fn from(r: Role) -> Self {
        match r {
            Role::Semantic => VlvRole::Semantic,
            Role::Instance => VlvRole::Instance,
            Role::Binary => VlvRole::Binary,
        }
    }
}

impl std::str::FromStr for VlvRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(VlvRole::Semantic),
            "instance" => Ok(VlvRole::Instance),
            "binary" => Ok(VlvRole::Binary),
            "probability" => Ok(VlvRole::Probability),
            _ => Err(Error::InvalidParameter(format!(
                "role must be semantic, instance, binary or probability, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VlvHeader {
    pub dtype: Dtype,
    pub dims: Dims,
    pub voxel_size: VoxelSize,
    pub role: VlvRole,
}

impl VlvHeader {
    pub fn for_volume(volume: &Volume, dtype: Dtype) -> Self {
        VlvHeader {
            dtype,
            dims: volume.dims(),
            voxel_size: volume.voxel_size(),
            role: match volume {
                Volume::Labels(v) => v.role().into(),
                Volume::Probability(_) => VlvRole::Probability,
            },
        }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&self.dtype.code().to_le_bytes());
        for (k, d) in self.dims.as_array().into_iter().enumerate() {
            out[8 + 8 * k..16 + 8 * k].copy_from_slice(&(d as u64).to_le_bytes());
        }
        for (k, s) in self.voxel_size.as_array().into_iter().enumerate() {
            out[32 + 8 * k..40 + 8 * k].copy_from_slice(&s.to_le_bytes());
        }
        out[56..60].copy_from_slice(&self.role.code().to_le_bytes());
        out
    }

    /// Parses and validates a header. `path` is only used in messages.
    pub fn parse(bytes: &[u8; HEADER_LEN], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, reason);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());

        if bytes[0..4] != MAGIC {
            return Err(bad(format!("bad magic {:?}", &bytes[0..4])));
        }
        let dtype = Dtype::from_code(u32_at(4))
            .ok_or_else(|| bad(format!("unknown dtype code {}", u32_at(4))))?;
        let role = VlvRole::from_code(u32_at(56))
            .ok_or_else(|| bad(format!("unknown role code {}", u32_at(56))))?;
        if (dtype == Dtype::F32) != (role == VlvRole::Probability) {
            return Err(bad(format!(
                "dtype code {} is not valid for role code {}",
                dtype.code(),
                role.code()
            )));
        }
        let mut dims = [0usize; 3];
        for (k, d) in dims.iter_mut().enumerate() {
            *d = usize::try_from(u64_at(8 + 8 * k))
                .map_err(|_| bad("dimension exceeds the address space".into()))?;
        }
        let dims = Dims::from_array(dims).map_err(|e| bad(e.to_string()))?;
        let voxel_size = VoxelSize::new(f64_at(32), f64_at(40), f64_at(48))
            .map_err(|e| bad(e.to_string()))?;
        let header = VlvHeader {
            dtype,
            dims,
            voxel_size,
            role,
        };
        header
            .payload_len()
            .ok_or_else(|| bad(format!("payload size of {} voxels overflows", dims)))?;
        Ok(header)
    }

    /// Payload size in bytes, if it fits in `u64` and `isize`.
    pub fn payload_len(&self) -> Option<u64> {
        let n = self.dims.checked_len()?.checked_mul(self.dtype.size())?;
        isize::try_from(n).ok()?;
        u64::try_from(n).ok()
    }
}

fn encode_payload<W: Write>(w: &mut W, volume: &Volume, dtype: Dtype) -> std::io::Result<()> {
    match volume {
        Volume::Probability(v) => {
            for &p in v.data() {
                w.write_all(&p.to_le_bytes())?;
            }
        }
        Volume::Labels(v) => {
            for &l in v.data() {
                match dtype {
                    Dtype::U8 => w.write_all(&(l as u8).to_le_bytes())?,
                    Dtype::U16 => w.write_all(&(l as u16).to_le_bytes())?,
                    Dtype::U32 => w.write_all(&(l as u32).to_le_bytes())?,
                    Dtype::U64 => w.write_all(&l.to_le_bytes())?,
                    Dtype::F32 => unreachable!("label volumes are never stored as f32"),
                }
            }
        }
    }
    Ok(())
}

fn check_dtype(volume: &Volume, dtype: Dtype) -> Result<()> {
    match (volume, dtype) {
        (Volume::Probability(_), Dtype::F32) => Ok(()),
        (Volume::Probability(_), _) => Err(Error::InvalidParameter(
            "probability volumes are stored as f32".into(),
        )),
        (Volume::Labels(v), Dtype::F32) => Err(Error::InvalidParameter(format!(
            "{} volumes cannot be stored as f32",
            v.role()
        ))),
        (Volume::Labels(v), d) => {
            let max = v.max_label();
            if d.max_label().is_some_and(|m| max <= m) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "label {max} does not fit in {d:?}"
                )))
            }
        }
    }
}

/// Storage type used by [`write_vlv`]: f32 for probabilities, otherwise the
/// narrowest unsigned type that holds the largest label.
pub fn default_dtype(volume: &Volume) -> Dtype {
    match volume {
        Volume::Probability(_) => Dtype::F32,
        Volume::Labels(v) => Dtype::for_max_label(v.max_label()),
    }
}

pub fn write_vlv_to<W: Write>(w: &mut W, volume: &Volume, dtype: Dtype) -> Result<()> {
    check_dtype(volume, dtype)?;
    let header = VlvHeader::for_volume(volume, dtype);
    let io = |e| Error::io("<stream>", e);
    w.write_all(&header.to_bytes()).map_err(io)?;
    encode_payload(w, volume, dtype).map_err(io)
}

pub fn write_vlv(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_vlv_as(volume, default_dtype(volume), path)
}

pub fn write_vlv_as(volume: &Volume, dtype: Dtype, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    check_dtype(volume, dtype)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = VlvHeader::for_volume(volume, dtype);
    w.write_all(&header.to_bytes())
        .and_then(|_| encode_payload(&mut w, volume, dtype))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn decode_payload(header: &VlvHeader, bytes: &[u8], path: &Path) -> Result<Volume> {
    let size = header.dtype.size();
    let chunks = bytes.chunks_exact(size);
    let (dims, voxel_size) = (header.dims, header.voxel_size);
    match header.role.label_role() {
        None => {
            let data = chunks
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ProbabilityVolume::from_vec(dims, voxel_size, data)
                .map(Volume::Probability)
                .map_err(|e| Error::format(path, e.to_string()))
        }
        Some(role) => {
            let data: Vec<u64> = match header.dtype {
                Dtype::U8 => bytes.iter().map(|&b| b.into()).collect(),
                Dtype::U16 => chunks
                    .map(|c| u16::from_le_bytes(c.try_into().unwrap()).into())
                    .collect(),
                Dtype::U32 => chunks
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()).into())
                    .collect(),
                Dtype::U64 => chunks
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                Dtype::F32 => unreachable!("rejected by header validation"),
            };
            Ok(Volume::Labels(LabeledVolume::from_vec(
                dims, voxel_size, role, data,
            )?))
        }
    }
}

/// Reads a VLV stream of known total length. The header-declared payload
/// must match `total_len` exactly before anything is allocated.
pub fn read_vlv_from<R: Read>(r: &mut R, total_len: u64, path: &Path) -> Result<(VlvHeader, Volume)> {
    if total_len < HEADER_LEN as u64 {
        return Err(Error::format(
            path,
            format!("file of {total_len} bytes is shorter than the {HEADER_LEN}-byte header"),
        ));
    }
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    let header = VlvHeader::parse(&head, path)?;
    let payload = header.payload_len().expect("validated by parse");
    let available = total_len - HEADER_LEN as u64;
    if available != payload {
        return Err(Error::format(
            path,
            format!(
                "header declares {payload} payload bytes but the file holds {available} (truncated or trailing data)"
            ),
        ));
    }
    let mut bytes = vec![0u8; payload as usize];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    let volume = decode_payload(&header, &bytes, path)?;
    Ok((header, volume))
}

pub fn read_vlv_with_header(path: impl AsRef<Path>) -> Result<(VlvHeader, Volume)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    read_vlv_from(&mut BufReader::new(file), len, path)
}

pub fn read_vlv(path: impl AsRef<Path>) -> Result<Volume> {
    Ok(read_vlv_with_header(path)?.1)
}

/// Reads a headerless z-major little-endian array.
pub fn import_raw(
    path: impl AsRef<Path>,
    dims: Dims,
    dtype: Dtype,
    voxel_size: VoxelSize,
    role: VlvRole,
) -> Result<Volume> {
    let path = path.as_ref();
    let header = VlvHeader {
        dtype,
        dims: Dims::new(dims.z, dims.y, dims.x)?,
        voxel_size: VoxelSize::new(voxel_size.z, voxel_size.y, voxel_size.x)?,
        role,
    };
    if (dtype == Dtype::F32) != (role == VlvRole::Probability) {
        return Err(Error::InvalidParameter(format!(
            "dtype {dtype:?} is not valid for role {role:?}"
        )));
    }
    let expected = header
        .payload_len()
        .ok_or_else(|| Error::DimsOverflow(dims.to_string()))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    if len != expected {
        return Err(Error::format(
            path,
            format!("raw file holds {len} bytes, dims {dims} of {dtype:?} need {expected}"),
        ));
    }
    let mut bytes = vec![0u8; expected as usize];
    BufReader::new(file)
        .read_exact(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_payload(&header, &bytes, path)
}

/// Reports that serialize to CSV with a fixed column order.
pub trait CsvReport {
    fn header(&self) -> &'static [&'static str];
    fn rows(&self) -> Vec<Vec<String>>;
}

impl CsvReport for InstanceReport {
    fn header(&self) -> &'static [&'static str] {
        &["id", "voxels", "class", "size_class"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.sizes
            .iter()
            .map(|(id, voxels)| {
                let class = self
                    .classes
                    .as_ref()
                    .and_then(|m| m.get(id))
                    .map(u64::to_string)
                    .unwrap_or_default();
                vec![
                    id.to_string(),
                    voxels.to_string(),
                    class,
                    self.size_class[id].to_string(),
                ]
            })
            .collect()
    }
}

impl CsvReport for MetricsReport {
    fn header(&self) -> &'static [&'static str] {
        &["class", "dice", "iou"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.per_class
            .iter()
            .map(|c| vec![c.class.to_string(), c.dice.to_string(), c.iou.to_string()])
            .chain(std::iter::once(vec![
                "average".to_string(),
                self.average_dice.to_string(),
                self.average_iou.to_string(),
            ]))
            .collect()
    }
}

impl CsvReport for FragmentationReport {
    fn header(&self) -> &'static [&'static str] {
        &["instance_id", "fragments"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.per_instance_fragments
            .iter()
            .map(|(id, n)| vec![id.to_string(), n.to_string()])
            .collect()
    }
}

/// Histogram bins as `bin_lo,bin_hi,count` rows.
pub struct HistogramTable<'a> {
    pub edges: &'a [f64],
    pub counts: &'a [u64],
}

impl CsvReport for HistogramTable<'_> {
    fn header(&self) -> &'static [&'static str] {
        &["bin_lo", "bin_hi", "count"]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.edges
            .windows(2)
            .zip(self.counts)
            .map(|(e, c)| vec![e[0].to_string(), e[1].to_string(), c.to_string()])
            .collect()
    }
}

pub fn write_csv<W: Write>(report: &impl CsvReport, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(report.header())?;
    for row in report.rows() {
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn export_csv(report: &impl CsvReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(report, BufWriter::new(file))
}

/// Tiling geometry plus the tile files, relative to the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileManifest {
    pub index: TileIndex,
    pub voxel_size: VoxelSize,
    pub files: Vec<PathBuf>,
}

pub fn write_tile_manifest(manifest: &TileManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, manifest).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_tile_manifest(path: impl AsRef<Path>) -> Result<TileManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

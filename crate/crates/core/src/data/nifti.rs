//! Uncompressed single-file NIfTI-1 (`.nii`) reading and writing.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};

use super::{DataError, Volume};
use crate::model::Modality;
use crate::tensor::Tensor;

const HEADER_LEN: usize = 348;
const SWAPPED_HEADER_LEN: i32 = 1_543_569_408;
const VOX_OFFSET: usize = 352;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDatatype {
    Int16,
    Float32,
}

impl NiftiDatatype {
    fn code(self) -> i16 {
        match self {
            NiftiDatatype::Int16 => 4,
            NiftiDatatype::Float32 => 16,
        }
    }

    fn bytes(self) -> usize {
        match self {
            NiftiDatatype::Int16 => 2,
            NiftiDatatype::Float32 => 4,
        }
    }
}

fn err(field: &'static str, detail: impl Into<String>) -> DataError {
    DataError::Nifti {
        field,
        detail: detail.into(),
    }
}

struct Header {
    dims: [usize; 3],
    datatype: NiftiDatatype,
    vox_offset: usize,
    slope: f32,
    inter: f32,
}

fn parse_header<E: ByteOrder>(h: &[u8]) -> Result<Header, DataError> {
    let dim: Vec<i16> = (0..8).map(|i| E::read_i16(&h[40 + 2 * i..])).collect();
    let rank = dim[0];
    if !(3..=7).contains(&rank) {
        return Err(err("dim[0]", format!("expected 3 spatial axes, found rank {rank}")));
    }
    for (axis, &extent) in dim.iter().enumerate().take(rank as usize + 1).skip(4) {
        if extent > 1 {
            return Err(err("dim", format!("axis {axis} has extent {extent}; only single 3D volumes are supported")));
        }
    }
    let mut dims = [0usize; 3];
    for a in 0..3 {
        if dim[a + 1] < 1 {
            return Err(err("dim", format!("axis {} has extent {}", a + 1, dim[a + 1])));
        }
        dims[a] = dim[a + 1] as usize;
    }
    let datatype = match E::read_i16(&h[70..]) {
        4 => NiftiDatatype::Int16,
        16 => NiftiDatatype::Float32,
        other => return Err(err("datatype", format!("unsupported code {other}; expected 4 (int16) or 16 (float32)"))),
    };
    let vox_offset = E::read_f32(&h[108..]);
    if !(vox_offset >= HEADER_LEN as f32) || vox_offset.fract() != 0.0 {
        return Err(err("vox_offset", format!("invalid value {vox_offset}")));
    }
    if &h[344..348] != b"n+1\0" {
        return Err(err("magic", format!("expected \"n+1\", found {:?}", &h[344..348])));
    }
    Ok(Header {
        dims,
        datatype,
        vox_offset: vox_offset as usize,
        slope: E::read_f32(&h[112..]),
        inter: E::read_f32(&h[116..]),
    })
}

fn decode<E: ByteOrder>(header: &Header, payload: &[u8]) -> Vec<f32> {
    let n = header.dims.iter().product::<usize>();
    let mut out: Vec<f32> = match header.datatype {
        NiftiDatatype::Float32 => {
            let mut v = vec![0f32; n];
            E::read_f32_into(&payload[..4 * n], &mut v);
            v
        }
        NiftiDatatype::Int16 => {
            let mut v = vec![0i16; n];
            E::read_i16_into(&payload[..2 * n], &mut v);
            v.into_iter().map(f32::from).collect()
        }
    };
    if header.slope != 0.0 {
        for x in &mut out {
            *x = *x * header.slope + header.inter;
        }
    }
    out
}

/// Parses a NIfTI-1 image from bytes. The grid is returned as `[nz, ny, nx]`.
pub fn parse_nifti(bytes: &[u8], subject_id: &str, modality: Modality) -> Result<Volume, DataError> {
    if bytes.len() < HEADER_LEN {
        return Err(err("sizeof_hdr", format!("file has only {} bytes", bytes.len())));
    }
    let native = LittleEndian::read_i32(&bytes[0..4]);
    let little = match native {
        348 => true,
        SWAPPED_HEADER_LEN => false,
        other => return Err(err("sizeof_hdr", format!("expected 348, found {other}"))),
    };
    let header = if little {
        parse_header::<LittleEndian>(&bytes[..HEADER_LEN])?
    } else {
        parse_header::<BigEndian>(&bytes[..HEADER_LEN])?
    };
    let n: usize = header.dims.iter().product();
    let needed = header.vox_offset + n * header.datatype.bytes();
    if bytes.len() < needed {
        return Err(err(
            "payload",
            format!("truncated: need {needed} bytes, file has {}", bytes.len()),
        ));
    }
    let payload = &bytes[header.vox_offset..];
    let data = if little {
        decode::<LittleEndian>(&header, payload)
    } else {
        decode::<BigEndian>(&header, payload)
    };
    let [nx, ny, nz] = header.dims;
    Volume::new(Tensor::from_vec(&[nz, ny, nx], data)?, subject_id, modality)
}

pub fn read_nifti(path: &Path, subject_id: &str, modality: Modality) -> Result<Volume, DataError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_nifti(&bytes, subject_id, modality)
}

/// Serializes a volume as little-endian float32 NIfTI-1 with unit voxel size.
pub fn encode_nifti(volume: &Volume) -> Vec<u8> {
    let d = volume.grid.dims();
    let mut h = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut h[0..], HEADER_LEN as i32);
    let dim: [i16; 8] = [3, d[2] as i16, d[1] as i16, d[0] as i16, 1, 1, 1, 1];
    for (i, v) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * i..], *v);
    }
    LittleEndian::write_i16(&mut h[70..], NiftiDatatype::Float32.code());
    LittleEndian::write_i16(&mut h[72..], 32);
    for i in 0..8 {
        LittleEndian::write_f32(&mut h[76 + 4 * i..], 1.0);
    }
    LittleEndian::write_f32(&mut h[108..], VOX_OFFSET as f32);
    h[344..348].copy_from_slice(b"n+1\0");
    let mut out = h;
    out.reserve(volume.grid.len() * 4);
    for &v in volume.grid.data() {
        out.write_f32::<LittleEndian>(v).expect("writing to a Vec");
    }
    out
}

pub fn write_nifti(path: &Path, volume: &Volume) -> Result<(), DataError> {
    std::fs::File::create(path)?.write_all(&encode_nifti(volume))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_volume() -> Volume {
        let grid = Tensor::from_fn(&[3, 4, 5], |i| i as f32 * 0.25 - 7.0).unwrap();
        Volume::new(grid, "s1", Modality::Smri).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let v = sample_volume();
        let back = parse_nifti(&encode_nifti(&v), "s1", Modality::Smri).unwrap();
        assert_eq!(back, v);
        let again = parse_nifti(&encode_nifti(&back), "s1", Modality::Smri).unwrap();
        assert_eq!(again, v);
    }

    /// Big-endian int16 file with a scaling slope, built field by field.
    fn big_endian_int16(slope: f32, inter: f32) -> Vec<u8> {
        let mut h = vec![0u8; VOX_OFFSET];
        BigEndian::write_i32(&mut h[0..], 348);
        for (i, v) in [3i16, 2, 1, 1, 1, 1, 1, 1].iter().enumerate() {
            BigEndian::write_i16(&mut h[40 + 2 * i..], *v);
        }
        BigEndian::write_i16(&mut h[70..], 4);
        BigEndian::write_i16(&mut h[72..], 16);
        BigEndian::write_f32(&mut h[108..], VOX_OFFSET as f32);
        BigEndian::write_f32(&mut h[112..], slope);
        BigEndian::write_f32(&mut h[116..], inter);
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(&(-3i16).to_be_bytes());
        h.extend_from_slice(&(5i16).to_be_bytes());
        h
    }

    #[test]
    fn swapped_header_and_scaling() {
        let bytes = big_endian_int16(0.0, 100.0);
        assert_eq!(LittleEndian::read_i32(&bytes), SWAPPED_HEADER_LEN);
        let v = parse_nifti(&bytes, "s", Modality::MdDti).unwrap();
        assert_eq!(v.grid.dims(), &[1, 1, 2]);
        assert_eq!(v.grid.data(), &[-3.0, 5.0]);
        let v = parse_nifti(&big_endian_int16(2.0, 1.0), "s", Modality::MdDti).unwrap();
        assert_eq!(v.grid.data(), &[-5.0, 11.0]);
    }

    #[test]
    fn structured_errors_name_the_field() {
        let good = encode_nifti(&sample_volume());
        let field = |bytes: &[u8]| match parse_nifti(bytes, "s", Modality::Smri) {
            Err(DataError::Nifti { field, .. }) => field,
            other => panic!("expected a NIfTI error, got {other:?}"),
        };
        assert_eq!(field(&good[..good.len() - 1]), "payload");
        let mut bad = good.clone();
        bad[344] = b'x';
        assert_eq!(field(&bad), "magic");
        let mut bad = good.clone();
        LittleEndian::write_i16(&mut bad[70..], 64);
        assert_eq!(field(&bad), "datatype");
        let mut bad = good;
        LittleEndian::write_i32(&mut bad[0..], 540);
        assert_eq!(field(&bad), "sizeof_hdr");
    }
}

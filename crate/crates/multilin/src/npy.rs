//! Minimal NPY v1.0 reader and writer.
//!
//! Writes are always little-endian `f8`, C-order, with the header padded
//! so magic + version + length + dict is a multiple of 64 bytes and ends
//! in a newline; the byte stream is a pure function of shape and data.
//! Reads accept `<f8` and `<f4` (widened exactly to `f8`), reject
//! Fortran order, and fail with the offending field named rather than
//! panicking on malformed input. Writes go through a temp file in the
//! target directory and an atomic rename, so a crash never leaves a
//! partial file behind.
//!
//! The raw entry points work on `(shape, data)` and permit zero extents
//! (an empty result set is a legal `(0, d)` array); the [`Tensor`]
//! wrappers require positive extents, as tensors do.

use crate::tensor::{Matrix, Tensor};
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"\x93NUMPY";

fn format_err(field: &str, detail: impl Into<String>) -> Error {
    Error::NpyFormat {
        field: field.to_string(),
        detail: detail.into(),
    }
}

fn shape_literal(shape: &[usize]) -> String {
    match shape {
        [] => "()".to_string(),
        [n] => format!("({n},)"),
        _ => {
            let parts: Vec<String> = shape.iter().map(|e| e.to_string()).collect();
            format!("({})", parts.join(", "))
        }
    }
}

/// Serialises a C-order `f8` array to NPY v1.0 bytes.
pub fn to_bytes(shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    let expect: usize = shape.iter().product();
    if expect != data.len() {
        return Err(Error::Dimension(format!(
            "shape {shape:?} implies {expect} elements, data has {}",
            data.len()
        )));
    }
    let dict = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': {}, }}",
        shape_literal(shape)
    );
    // pad with spaces, newline last, to a 64-byte multiple of the whole
    // prefix (magic 6 + version 2 + length 2 + header)
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let padded_total = unpadded.div_ceil(64) * 64;
    let header_len = padded_total - MAGIC.len() - 4;
    if header_len > u16::MAX as usize {
        return Err(format_err("header", "header too long for version 1.0"));
    }
    let mut out = Vec::with_capacity(padded_total + data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[0x01, 0x00]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(padded_total - 1, b' ');
    out.push(b'\n');
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses NPY v1.0 bytes into `(shape, data)`, widening `f4` to `f8`.
pub fn from_bytes(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(format_err("magic", "file shorter than the fixed prelude"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_err("magic", "missing NPY magic bytes"));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(format_err(
            "version",
            format!("unsupported version {major}.{minor}"),
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = MAGIC.len() + 4 + header_len;
    if bytes.len() < data_start {
        return Err(format_err("header", "declared header extends past the file"));
    }
    let header = std::str::from_utf8(&bytes[MAGIC.len() + 4..data_start])
        .map_err(|_| format_err("header", "header is not ASCII"))?;

    let descr = dict_str_value(header, "descr")
        .ok_or_else(|| format_err("descr", "field missing"))?;
    let item_size = match descr.as_str() {
        "<f8" => 8,
        "<f4" => 4,
        other => {
            return Err(format_err(
                "descr",
                format!("unsupported dtype `{other}` (need <f8 or <f4)"),
            ))
        }
    };
    match dict_bool_value(header, "fortran_order") {
        Some(false) => {}
        Some(true) => {
            return Err(format_err(
                "fortran_order",
                "Fortran-order arrays are not supported",
            ))
        }
        None => return Err(format_err("fortran_order", "field missing")),
    }
    let shape = dict_shape_value(header, "shape")
        .ok_or_else(|| format_err("shape", "field missing or malformed"))?;

    let count: usize = shape.iter().product();
    let payload = &bytes[data_start..];
    if payload.len() < count * item_size {
        return Err(format_err(
            "data",
            format!(
                "shape {shape:?} needs {} bytes, file has {}",
                count * item_size,
                payload.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(count);
    if item_size == 8 {
        for chunk in payload[..count * 8].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
    } else {
        for chunk in payload[..count * 4].chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
    }
    Ok((shape, data))
}

/// Extracts `'key': 'value'` from the header dict.
fn dict_str_value(header: &str, key: &str) -> Option<String> {
    let rest = field_tail(header, key)?;
    let rest = rest.trim_start();
    let quote = rest.chars().next()?;
    if quote != '\'' && quote != '"' {
        return None;
    }
    let rest = &rest[1..];
    let end = rest.find(quote)?;
    Some(rest[..end].to_string())
}

fn dict_bool_value(header: &str, key: &str) -> Option<bool> {
    let rest = field_tail(header, key)?;
    let rest = rest.trim_start();
    if rest.starts_with("True") {
        Some(true)
    } else if rest.starts_with("False") {
        Some(false)
    } else {
        None
    }
}

fn dict_shape_value(header: &str, key: &str) -> Option<Vec<usize>> {
    let rest = field_tail(header, key)?;
    let rest = rest.trim_start();
    let open = rest.strip_prefix('(')?;
    let end = open.find(')')?;
    let inner = &open[..end];
    let mut shape = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        shape.push(part.parse().ok()?);
    }
    Some(shape)
}

/// The header text after `'key':`.
fn field_tail<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let marker = format!("'{key}':");
    let pos = header.find(&marker)?;
    Some(&header[pos + marker.len()..])
}

/// Writes bytes through a temp file in the destination directory and an
/// atomic rename, so the target path never holds a partial file.
pub(crate) fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Writes `(shape, data)` to an NPY file atomically (temp file plus
/// rename in the destination directory). Zero extents are allowed.
pub fn write_npy_raw(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    write_bytes_atomic(path, &to_bytes(shape, data)?)
}

/// Reads an NPY file into `(shape, data)`.
pub fn read_npy_raw(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

/// Writes a tensor as little-endian `f8`, C-order.
pub fn write_npy(path: &Path, t: &Tensor) -> Result<()> {
    write_npy_raw(path, t.shape(), t.data())
}

/// Reads a tensor; all extents must be positive.
pub fn read_npy(path: &Path) -> Result<Tensor> {
    let (shape, data) = read_npy_raw(path)?;
    Tensor::new(shape, data)
}

/// Writes a matrix as a 2-d array.
pub fn write_npy_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_npy_raw(path, &[m.rows(), m.cols()], m.data())
}

/// Reads a 2-d array as a matrix.
pub fn read_npy_matrix(path: &Path) -> Result<Matrix> {
    let (shape, data) = read_npy_raw(path)?;
    match shape[..] {
        [r, c] => Matrix::new(r, c, data),
        _ => Err(Error::Dimension(format!(
            "expected a 2-d array, got shape {shape:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unhex(s: &str) -> Vec<u8> {
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
            .collect()
    }

    // reference bytes produced by an independent NPY implementation
    const GOLDEN_2X3_F8: &str = "934e554d5059010076007b276465736372273a20273c6638272c2027666f727472616e5f6f72646572273a2046616c73652c20277368617065273a2028322c2033292c207d202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020200a0000000000000000000000000000f03f0000000000000040000000000000084000000000000010400000000000001440";
    const GOLDEN_5_F4: &str = "934e554d5059010076007b276465736372273a20273c6634272c2027666f727472616e5f6f72646572273a2046616c73652c20277368617065273a2028352c292c207d2020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020200a0000c03f000000c00000803e000040400000c842";
    const GOLDEN_1_F8: &str = "934e554d5059010076007b276465736372273a20273c6638272c2027666f727472616e5f6f72646572273a2046616c73652c20277368617065273a2028312c292c207d2020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020202020200a0000000000001c40";

    #[test]
    fn writer_matches_golden_bytes() {
        let data: Vec<f64> = (0..6).map(|x| x as f64).collect();
        let bytes = to_bytes(&[2, 3], &data).unwrap();
        assert_eq!(bytes, unhex(GOLDEN_2X3_F8));

        let bytes = to_bytes(&[1], &[7.0]).unwrap();
        assert_eq!(bytes, unhex(GOLDEN_1_F8));
    }

    #[test]
    fn reader_parses_golden_f8() {
        let (shape, data) = from_bytes(&unhex(GOLDEN_2X3_F8)).unwrap();
        assert_eq!(shape, vec![2, 3]);
        assert_eq!(data, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn reader_widens_f4_exactly() {
        let (shape, data) = from_bytes(&unhex(GOLDEN_5_F4)).unwrap();
        assert_eq!(shape, vec![5]);
        // every value is representable in f4, so widening is exact
        assert_eq!(data, vec![1.5, -2.0, 0.25, 3.0, 100.0]);
        // re-written as f8 and read back, values survive bit-exactly
        let rewritten = to_bytes(&shape, &data).unwrap();
        let (_, again) = from_bytes(&rewritten).unwrap();
        assert_eq!(again, data);
    }

    #[test]
    fn header_is_64_byte_aligned_and_newline_terminated() {
        for shape in [vec![1usize], vec![512, 4, 4], vec![3, 3, 3, 3]] {
            let len: usize = shape.iter().product();
            let bytes = to_bytes(&shape, &vec![0.0; len]).unwrap();
            let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
            let prefix = 10 + header_len;
            assert_eq!(prefix % 64, 0, "shape {shape:?}");
            assert_eq!(bytes[prefix - 1], b'\n');
            let header = std::str::from_utf8(&bytes[10..prefix]).unwrap();
            assert!(header.contains("'descr': '<f8'"));
            assert!(header.contains("'fortran_order': False"));
        }
        // declared shape text for a 3-d array
        let bytes = to_bytes(&[512, 4, 4], &vec![0.0; 512 * 16]).unwrap();
        let header = String::from_utf8_lossy(&bytes[10..138]).to_string();
        assert!(header.contains("'shape': (512, 4, 4)"));
    }

    #[test]
    fn roundtrip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npy");
        let t = Tensor::new(vec![2, 3, 2], (0..12).map(|x| x as f64 * 0.37 - 1.0).collect())
            .unwrap();
        write_npy(&path, &t).unwrap();
        let back = read_npy(&path).unwrap();
        assert_eq!(back, t);
        // byte-identical on rewrite
        let first = std::fs::read(&path).unwrap();
        write_npy(&path, &t).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn zero_extent_raw_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.npy");
        write_npy_raw(&path, &[0, 4], &[]).unwrap();
        let (shape, data) = read_npy_raw(&path).unwrap();
        assert_eq!(shape, vec![0, 4]);
        assert!(data.is_empty());
        // tensor layer refuses zero extents
        assert!(read_npy(&path).is_err());
    }

    #[test]
    fn matrix_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.npy");
        let m = Matrix::new(3, 2, (0..6).map(|x| x as f64).collect()).unwrap();
        write_npy_matrix(&path, &m).unwrap();
        assert_eq!(read_npy_matrix(&path).unwrap(), m);
        let t = Tensor::new(vec![2, 2, 2], vec![0.0; 8]).unwrap();
        write_npy(&path, &t).unwrap();
        assert!(read_npy_matrix(&path).is_err());
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let full = unhex(GOLDEN_2X3_F8);
        // cut inside the data section
        match from_bytes(&full[..full.len() - 5]) {
            Err(Error::NpyFormat { field, .. }) => assert_eq!(field, "data"),
            other => panic!("expected format error, got {other:?}"),
        }
        // cut inside the header
        match from_bytes(&full[..40]) {
            Err(Error::NpyFormat { field, .. }) => assert_eq!(field, "header"),
            other => panic!("expected format error, got {other:?}"),
        }
        // cut inside the magic
        match from_bytes(&full[..4]) {
            Err(Error::NpyFormat { field, .. }) => assert_eq!(field, "magic"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn foreign_headers_rejected_with_field_names() {
        let mut bad_magic = unhex(GOLDEN_1_F8);
        bad_magic[0] = 0x00;
        match from_bytes(&bad_magic) {
            Err(Error::NpyFormat { field, .. }) => assert_eq!(field, "magic"),
            other => panic!("{other:?}"),
        }

        let mut bad_version = unhex(GOLDEN_1_F8);
        bad_version[6] = 2;
        match from_bytes(&bad_version) {
            Err(Error::NpyFormat { field, .. }) => assert_eq!(field, "version"),
            other => panic!("{other:?}"),
        }

        // integer dtype
        let text = GOLDEN_1_F8.replace("273c6638", "273c6938"); // '<f8' -> '<i8'
        match from_bytes(&unhex(&text)) {
            Err(Error::NpyFormat { field, .. }) => assert_eq!(field, "descr"),
            other => panic!("{other:?}"),
        }

        // fortran order: patch False -> True (pad with a space to keep length)
        let text = GOLDEN_1_F8.replace("46616c7365", "5472756520"); // 'False' -> 'True '
        match from_bytes(&unhex(&text)) {
            Err(Error::NpyFormat { field, .. }) => assert_eq!(field, "fortran_order"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.npy");
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_npy(&path, &t).unwrap();
        let entries: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(entries, vec![std::ffi::OsString::from("out.npy")]);
    }
}

//! Grid function files.
//!
//! CSV: a first line `# {json header}` followed by one value per line in
//! `{:.16e}` form, which round-trips every finite `f64` exactly.
//!
//! Binary: the magic bytes `WKGF`, a little-endian `u32` header length, the
//! JSON header, then the values as little-endian `f64`.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use super::grid::{point_count, GridFunction, GridHeader};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"WKGF";
const MAX_HEADER_BYTES: usize = 1 << 16;

fn check_header(header: &GridHeader) -> Result<usize> {
    let len = point_count(header.n, header.d)?;
    if !header.c.is_empty() && header.c.len() != header.d {
        return Err(Error::input(format!(
            "header c has {} entries for dimension {}",
            header.c.len(),
            header.d
        )));
    }
    if !header.lambda.is_finite() || header.c.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("header contains non-finite numbers"));
    }
    if header.alpha.is_some_and(|a| !a.is_finite()) {
        return Err(Error::input("header alpha is not finite"));
    }
    Ok(len)
}

pub fn to_csv_string(grid: &GridFunction, header: &GridHeader) -> Result<String> {
    if header.n != grid.n() || header.d != grid.dim() {
        return Err(Error::input("header does not describe the grid"));
    }
    let mut out = String::with_capacity(24 * grid.len() + 128);
    out.push_str("# ");
    out.push_str(&serde_json::to_string(header).map_err(|e| Error::input(e.to_string()))?);
    out.push('\n');
    for v in grid.values() {
        let _ = writeln!(out, "{v:.16e}");
    }
    Ok(out)
}

pub fn from_csv_str(text: &str) -> Result<(GridFunction, GridHeader)> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(1, "missing `# {header}` line"))?;
    let header: GridHeader =
        serde_json::from_str(json.trim()).map_err(|e| Error::parse(1, e.to_string()))?;
    let len = check_header(&header).map_err(|e| Error::parse(1, e.to_string()))?;
    let mut values = Vec::with_capacity(len);
    for (k, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if values.len() == len {
            return Err(Error::parse(k + 1, format!("more than {len} values")));
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::parse(k + 1, format!("not a number: {line:?}")))?;
        if !v.is_finite() {
            return Err(Error::parse(k + 1, "value is not finite"));
        }
        values.push(v);
    }
    if values.len() != len {
        return Err(Error::parse(
            text.lines().count(),
            format!("expected {len} values, found {}", values.len()),
        ));
    }
    Ok((GridFunction::new(header.n, header.d, values)?, header))
}

pub fn to_binary(grid: &GridFunction, header: &GridHeader) -> Result<Vec<u8>> {
    if header.n != grid.n() || header.d != grid.dim() {
        return Err(Error::input("header does not describe the grid"));
    }
    let json = serde_json::to_vec(header).map_err(|e| Error::input(e.to_string()))?;
    let mut out = Vec::with_capacity(8 + json.len() + 8 * grid.len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in grid.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_binary(bytes: &[u8]) -> Result<(GridFunction, GridHeader)> {
    let bad = |m: &str| Error::input(format!("binary grid: {m}"));
    if bytes.len() < 8 || &bytes[..4] != BINARY_MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    if hlen > MAX_HEADER_BYTES || bytes.len() < 8 + hlen {
        return Err(bad("truncated header"));
    }
    let header: GridHeader =
        serde_json::from_slice(&bytes[8..8 + hlen]).map_err(|e| bad(&e.to_string()))?;
    let len = check_header(&header)?;
    let body = &bytes[8 + hlen..];
    if body.len() != 8 * len {
        return Err(bad(&format!("expected {} value bytes, found {}", 8 * len, body.len())));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((GridFunction::new(header.n, header.d, values)?, header))
}

/// Writes a grid file, choosing the binary format for a `.bin` extension.
pub fn write_grid(path: &Path, grid: &GridFunction, header: &GridHeader) -> Result<()> {
    let bytes = if path.extension().is_some_and(|e| e == "bin") {
        to_binary(grid, header)?
    } else {
        to_csv_string(grid, header)?.into_bytes()
    };
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<(GridFunction, GridHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.starts_with(BINARY_MAGIC) {
        from_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::parse(1, "file is not UTF-8"))?;
        from_csv_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(n: usize, d: usize) -> GridHeader {
        GridHeader {
            n,
            d,
            c: vec![0.3; d],
            lambda: 0.1,
            alpha: Some(1.0),
        }
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(values in prop::collection::vec(-1e300f64..1e300, 16)) {
            let g = GridFunction::new(16, 1, values).unwrap();
            let text = to_csv_string(&g, &header(16, 1)).unwrap();
            let (back, h) = from_csv_str(&text).unwrap();
            prop_assert_eq!(h, header(16, 1));
            for (a, b) in g.values().iter().zip(back.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn binary_round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 16)) {
            let g = GridFunction::new(4, 2, values).unwrap();
            let bytes = to_binary(&g, &header(4, 2)).unwrap();
            let (back, _) = from_binary(&bytes).unwrap();
            prop_assert_eq!(g, back);
        }

        #[test]
        fn csv_parser_never_panics(text in ".{0,200}") {
            let _ = from_csv_str(&text);
        }

        #[test]
        fn binary_parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = from_binary(&bytes);
        }
    }

    #[test]
    fn tiny_values_round_trip() {
        let vals = vec![5e-324, -0.0, f64::MIN_POSITIVE, 0.1 + 0.2];
        let g = GridFunction::new(4, 1, vals).unwrap();
        let (back, _) = from_csv_str(&to_csv_string(&g, &header(4, 1)).unwrap()).unwrap();
        for (a, b) in g.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let h = serde_json::to_string(&header(4, 1)).unwrap();
        let text = format!("# {h}\n1\n2\nx\n4\n");
        assert!(matches!(from_csv_str(&text), Err(Error::Parse { line: 4, .. })));
        let short = format!("# {h}\n1\n2\n");
        assert!(matches!(from_csv_str(&short), Err(Error::Parse { .. })));
        assert!(matches!(from_csv_str("1\n2\n"), Err(Error::Parse { line: 1, .. })));
        let huge = "# {\"n\": 100000, \"d\": 2}\n";
        assert!(from_csv_str(huge).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridFunction::from_fn(8, 2, |q| q[0] - q[1] * 0.5).unwrap();
        for name in ["u.csv", "u.bin"] {
            let path = dir.path().join(name);
            write_grid(&path, &g, &header(8, 2)).unwrap();
            let (back, h) = read_grid(&path).unwrap();
            assert_eq!(back, g);
            assert_eq!(h, header(8, 2));
        }
    }
}

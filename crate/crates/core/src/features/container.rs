//! Binary feature container: a plain-text header terminated by an `end`
//! line, then little-endian blocks: f32 row-major features, packed mask
//! bits, packed label bits, i16 source days.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3};

use super::{FusedFeatures, Scenario};
use crate::error::{Error, Result};

const MAGIC: &str = "HOSPRED-FEATURES 1";

fn pack_bits(bits: impl Iterator<Item = bool>) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, b) in bits.enumerate() {
        if i % 8 == 0 {
            out.push(0);
        }
        if b {
            *out.last_mut().unwrap() |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

pub fn write_features(f: &FusedFeatures, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut out = BufWriter::new(file);
    let offsets: Vec<String> = f
        .admission_offsets
        .iter()
        .map(|o| o.map_or_else(|| "-".to_string(), |v| v.to_string()))
        .collect();
    let header = format!(
        "{MAGIC}\nn={}\nh={}\nm={}\nt={}\nk={}\nscenario={}\nsplit_seed={}\ncolumns={}\npatients={}\nadmission_offsets={}\nend\n",
        f.n(),
        f.h,
        f.m,
        f.t,
        f.k(),
        f.scenario,
        f.split_seed,
        f.feature_names.join("\t"),
        f.patient_ids.join("\t"),
        offsets.join("\t"),
    );
    out.write_all(header.as_bytes()).map_err(io)?;
    for &v in f.x.iter() {
        out.write_f32::<LittleEndian>(v as f32).map_err(io)?;
    }
    out.write_all(&pack_bits(f.mask2.iter().copied())).map_err(io)?;
    out.write_all(&pack_bits(f.labels.iter().copied())).map_err(io)?;
    for &d in f.source_day.iter() {
        out.write_i16::<LittleEndian>(d).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_features(path: &Path) -> Result<FusedFeatures> {
    let bad = |reason: String| Error::format(path, reason);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut fields = std::collections::HashMap::new();
    let mut first = true;
    loop {
        let mut line = String::new();
        if input.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(bad("header not terminated".into()));
        }
        let line = line.trim_end_matches('\n');
        if first {
            if line != MAGIC {
                return Err(bad("not a feature container".into()));
            }
            first = false;
            continue;
        }
        if line == "end" {
            break;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad header line `{line}`")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| fields.get(k).cloned().ok_or_else(|| bad(format!("missing header field `{k}`")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
    let split_list = |s: String| -> Vec<String> {
        if s.is_empty() {
            Vec::new()
        } else {
            s.split('\t').map(String::from).collect()
        }
    };
    let (n, h, m, t, k) = (num("n")?, num("h")?, num("m")?, num("t")?, num("k")?);
    if k != m * t + h {
        return Err(bad(format!("k={k} does not equal m*t+h")));
    }
    let scenario: Scenario = get("scenario")?.parse()?;
    let split_seed: u64 = get("split_seed")?.parse().map_err(|_| bad("bad split_seed".into()))?;
    let feature_names = split_list(get("columns")?);
    let patient_ids = split_list(get("patients")?);
    let admission_offsets = split_list(get("admission_offsets")?)
        .into_iter()
        .map(|s| if s == "-" { Ok(None) } else { s.parse().map(Some).map_err(|_| bad("bad admission offset".into())) })
        .collect::<Result<Vec<_>>>()?;
    if feature_names.len() != k || patient_ids.len() != n || admission_offsets.len() != n {
        return Err(bad("header lists do not match dimensions".into()));
    }
    let io = |e| Error::io(path, e);
    let mut data = vec![0f32; n * k];
    input.read_f32_into::<LittleEndian>(&mut data).map_err(io)?;
    let cells = n * m * t;
    let mut mask = vec![0u8; cells.div_ceil(8)];
    input.read_exact(&mut mask).map_err(io)?;
    let mut labels = vec![0u8; n.div_ceil(8)];
    input.read_exact(&mut labels).map_err(io)?;
    let mut source = vec![0i16; cells];
    input.read_i16_into::<LittleEndian>(&mut source).map_err(io)?;
    Ok(FusedFeatures {
        patient_ids,
        labels: unpack_bits(&labels, n),
        admission_offsets,
        h,
        m,
        t,
        x: Array2::from_shape_vec((n, k), data.into_iter().map(f64::from).collect()).unwrap(),
        feature_names,
        mask2: Array3::from_shape_vec((n, m, t), unpack_bits(&mask, cells)).unwrap(),
        source_day: Array3::from_shape_vec((n, m, t), source).unwrap(),
        scenario,
        split_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_packing_round_trip() {
        let bits: Vec<bool> = (0..19).map(|i| i % 3 == 0).collect();
        assert_eq!(unpack_bits(&pack_bits(bits.iter().copied()), 19), bits);
    }

    #[test]
    fn container_round_trip() {
        let (n, m, t, h) = (3, 2, 2, 2);
        let k = m * t + h;
        let f = FusedFeatures {
            patient_ids: vec!["a".into(), "b".into(), "c".into()],
            labels: vec![true, false, true],
            admission_offsets: vec![Some(2), None, Some(0)],
            h,
            m,
            t,
            x: Array2::from_shape_fn((n, k), |(r, c)| (r * k + c) as f64 * 0.5),
            feature_names: (0..k).map(|c| format!("f{c}")).collect(),
            mask2: Array3::from_shape_fn((n, m, t), |(r, j, i)| (r + j + i) % 2 == 0),
            source_day: Array3::from_shape_fn((n, m, t), |(r, j, i)| (r * 4 + j * 2 + i) as i16 - 5),
            scenario: Scenario::OneDayBefore,
            split_seed: 42,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        write_features(&f, &path).unwrap();
        assert_eq!(read_features(&path).unwrap(), f);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, "hello\n").unwrap();
        assert!(matches!(read_features(&path), Err(Error::Format { .. })));
    }
}

//! CSV and 8-bit PGM (P5) dumps of attention maps, summary weights and scores.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{DcnError, Result};
use crate::graph::Graph;
use crate::model::{Dcn, Example};
use crate::tensor::Tensor;
use crate::train::dropout::Dropout;

/// One CSV line per matrix row; values in shortest round-trip form.
pub fn matrix_csv(t: &Tensor) -> Result<String> {
    let (rows, _) = t.dims2()?;
    let mut out = String::new();
    for r in 0..rows {
        let line: Vec<String> = t.row(r).iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    Ok(out)
}

/// Binary PGM with every row scaled so its maximum maps to 255. Rows whose
/// maximum is not positive render black.
pub fn matrix_pgm(t: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = t.dims2()?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h);
    for r in 0..h {
        let row = t.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &v in row {
            let px = if max > 0.0 { (v / max * 255.0).round().clamp(0.0, 255.0) } else { 0.0 };
            out.push(px as u8);
        }
    }
    Ok(out)
}

/// Parses a P5 file back into `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || DcnError::Format("not a binary PGM with maxval 255".into());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(pos + 1..).ok_or_else(bad)?;
    if data.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, data.to_vec()))
}

fn write_pair(dir: &Path, stem: &str, t: &Tensor, written: &mut Vec<PathBuf>) -> Result<()> {
    let csv = dir.join(format!("{stem}.csv"));
    fs::write(&csv, matrix_csv(t)?)?;
    let pgm = dir.join(format!("{stem}.pgm"));
    fs::write(&pgm, matrix_pgm(t)?)?;
    written.push(csv);
    written.push(pgm);
    Ok(())
}

/// Writes `A_Q`/`A_V` for every layer, the summary weights, the layer
/// weights and the answer scores of one example into `dir`.
pub fn export_attention(model: &Dcn, ex: &Example, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut g = Graph::with_params(model.params());
    let out = model.forward(&mut g, ex, &mut Dropout::eval())?;
    let mut written = Vec::new();
    for (l, layer) in out.layers.iter().enumerate() {
        write_pair(dir, &format!("layer{l}_a_q"), g.value(layer.a_q), &mut written)?;
        write_pair(dir, &format!("layer{l}_a_v"), g.value(layer.a_v), &mut written)?;
    }
    write_pair(dir, "alpha_q", g.value(out.alpha_q), &mut written)?;
    write_pair(dir, "alpha_v", g.value(out.alpha_v), &mut written)?;
    write_pair(dir, "layer_alpha", g.value(out.layer_alpha), &mut written)?;
    let scores = g.value(out.scores);
    let row = Tensor::new(&[1, scores.len()], scores.data().to_vec())?;
    let path = dir.join("scores.csv");
    fs::write(&path, matrix_csv(&row)?)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_row_scaling() {
        let t = Tensor::from_rows(&[&[0.25, 0.5, 0.25], &[0.0, 0.0, 0.0]]).unwrap();
        let bytes = matrix_pgm(&t).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let (w, h, px) = parse_pgm(&bytes).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(px, vec![128, 255, 128, 0, 0, 0]);
    }

    #[test]
    fn csv_rows() {
        let t = Tensor::from_rows(&[&[0.5, 0.5], &[1.0, 0.0]]).unwrap();
        assert_eq!(matrix_csv(&t).unwrap(), "0.5,0.5\n1.0,0.0\n");
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00").is_err());
    }
}

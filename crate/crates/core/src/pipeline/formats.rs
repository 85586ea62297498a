//! On-disk formats: dense matrices (binary and text), change-score tracks,
//! layered MLP weights, subsegment span lists and integer label lists.
//!
//! Binary matrix: `\x93DMAT`, `u32` version, `u64` rows, `u64` cols, then
//! row-major `f64` values, all little-endian. Text matrix: a `DMAT 1 <rows>
//! <cols>` header line followed by one whitespace-separated line per row.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::annotation::{read_text, Interval};
use crate::domain::{Activation, MlpLayer, MlpModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::segmentation::ChangeScoreTrack;

const MATRIX_MAGIC: &[u8; 5] = b"\x93DMAT";
const TRACK_MAGIC: &[u8; 5] = b"\x93DTRK";
const VERSION: u32 = 1;

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

fn ctx(path: &Path) -> String {
    path.display().to_string()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(&self.context, "truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self, magic: &[u8; 5]) -> Result<()> {
        if self.take(5)? != magic {
            return Err(Error::format(&self.context, "bad magic"));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(Error::format(&self.context, format!("unsupported version {v}")));
        }
        Ok(())
    }
}

pub fn matrix_to_bytes(m: &Matrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(25 + 8 * m.as_slice().len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn matrix_to_text(m: &Matrix<f64>) -> String {
    let mut s = format!("DMAT {VERSION} {} {}\n", m.rows(), m.cols());
    for r in m.row_iter() {
        let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn parse_count(tok: Option<&str>, what: &str, context: &str) -> Result<usize> {
    tok.ok_or_else(|| Error::format(context, format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::format(context, format!("bad {what}")))
}

fn parse_float(tok: &str, context: &str) -> Result<f64> {
    tok.parse()
        .map_err(|_| Error::format(context, format!("bad number {tok:?}")))
}

/// Parses a text matrix from `lines`, consuming header plus `rows` lines.
fn matrix_from_lines<'a>(lines: &mut impl Iterator<Item = &'a str>, context: &str) -> Result<Matrix<f64>> {
    let header = lines
        .next()
        .ok_or_else(|| Error::format(context, "missing DMAT header"))?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some("DMAT") {
        return Err(Error::format(context, "expected DMAT header"));
    }
    let version = parse_count(tok.next(), "version", context)?;
    if version != VERSION as usize {
        return Err(Error::format(context, format!("unsupported version {version}")));
    }
    let rows = parse_count(tok.next(), "row count", context)?;
    let cols = parse_count(tok.next(), "column count", context)?;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| Error::format(context, format!("missing row {r}")))?;
        let before = data.len();
        for t in line.split_whitespace() {
            data.push(parse_float(t, context)?);
        }
        if data.len() - before != cols {
            return Err(Error::format(context, format!("row {r} has {} values, expected {cols}", data.len() - before)));
        }
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn matrix_from_text(text: &str, context: &str) -> Result<Matrix<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    matrix_from_lines(&mut lines, context)
}

pub fn matrix_from_bytes(bytes: &[u8], context: &str) -> Result<Matrix<f64>> {
    if !bytes.starts_with(MATRIX_MAGIC) {
        let text = std::str::from_utf8(bytes).map_err(|_| Error::format(context, "neither binary nor text matrix"))?;
        return matrix_from_text(text, context);
    }
    let mut r = Reader {
        bytes,
        pos: 0,
        context: context.to_string(),
    };
    r.header(MATRIX_MAGIC)?;
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let count = rows
        .checked_mul(cols)
        .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= bytes.len()))
        .ok_or_else(|| Error::format(context, "matrix size exceeds file"))?;
    let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::format(context, "trailing bytes"));
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

/// Reads a matrix file in either form.
pub fn read_matrix(path: &Path) -> Result<Matrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    matrix_from_bytes(&bytes, &ctx(path))
}

/// Writes the binary form, or the text form when `path` ends in `.txt`.
pub fn write_matrix(path: &Path, m: &Matrix<f64>) -> Result<()> {
    if path.extension().is_some_and(|e| e == "txt") {
        write_text(path, &matrix_to_text(m))
    } else {
        write_bytes(path, &matrix_to_bytes(m))
    }
}

pub fn track_to_bytes(t: &ChangeScoreTrack) -> Vec<u8> {
    let mut out = Vec::with_capacity(41 + 8 * t.scores.len());
    out.extend_from_slice(TRACK_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&t.step.to_le_bytes());
    out.extend_from_slice(&t.offset.to_le_bytes());
    out.extend_from_slice(&(t.scores.len() as u64).to_le_bytes());
    for v in &t.scores {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Text track: `DTRK 1 <step> <offset> <count>` then one score per line.
pub fn track_to_text(t: &ChangeScoreTrack) -> String {
    let mut s = format!("DTRK {VERSION} {:?} {:?} {}\n", t.step, t.offset, t.scores.len());
    for v in &t.scores {
        let _ = writeln!(s, "{v:?}");
    }
    s
}

pub fn track_from_bytes(bytes: &[u8], context: &str) -> Result<ChangeScoreTrack> {
    if bytes.starts_with(TRACK_MAGIC) {
        let mut r = Reader {
            bytes,
            pos: 0,
            context: context.to_string(),
        };
        r.header(TRACK_MAGIC)?;
        let step = r.f64()?;
        let offset = r.f64()?;
        let n = r.u64()? as usize;
        if n.checked_mul(8).is_none_or(|b| b > bytes.len()) {
            return Err(Error::format(context, "track length exceeds file"));
        }
        let scores = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        return ChangeScoreTrack::new(scores, step, offset);
    }
    let text = std::str::from_utf8(bytes).map_err(|_| Error::format(context, "neither binary nor text track"))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::format(context, "empty track file"))?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 5 || tok[0] != "DTRK" || tok[1] != "1" {
        return Err(Error::format(context, "expected `DTRK 1 <step> <offset> <count>` header"));
    }
    let step = parse_float(tok[2], context)?;
    let offset = parse_float(tok[3], context)?;
    let n = parse_count(Some(tok[4]), "score count", context)?;
    let scores = lines.map(|l| parse_float(l.trim(), context)).collect::<Result<Vec<_>>>()?;
    if scores.len() != n {
        return Err(Error::format(context, format!("{} scores, header says {n}", scores.len())));
    }
    ChangeScoreTrack::new(scores, step, offset)
}

pub fn read_track(path: &Path) -> Result<ChangeScoreTrack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    track_from_bytes(&bytes, &ctx(path))
}

pub fn write_track(path: &Path, t: &ChangeScoreTrack) -> Result<()> {
    if path.extension().is_some_and(|e| e == "txt") {
        write_text(path, &track_to_text(t))
    } else {
        write_bytes(path, &track_to_bytes(t))
    }
}

/// Layered text form: `DMLP 1 <layers> <single|multi>` header, then per
/// layer a `layer <activation>` line, the `out × in` weight matrix and the
/// `1 × out` bias, both as text matrices.
pub fn mlp_to_text(m: &MlpModel<f64>) -> String {
    let mut s = format!(
        "DMLP {VERSION} {} {}\n",
        m.layers.len(),
        if m.positive_is_single { "single" } else { "multi" }
    );
    for l in &m.layers {
        let _ = writeln!(s, "layer {}", l.activation.tag());
        s.push_str(&matrix_to_text(&l.weights));
        s.push_str(&matrix_to_text(&Matrix::from_vec(1, l.bias.len(), l.bias.clone())));
    }
    s
}

pub fn mlp_from_text(text: &str, context: &str) -> Result<MlpModel<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::format(context, "empty MLP file"))?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 4 || tok[0] != "DMLP" || tok[1] != "1" {
        return Err(Error::format(context, "expected `DMLP 1 <layers> <single|multi>` header"));
    }
    let n = parse_count(Some(tok[2]), "layer count", context)?;
    let positive_is_single = match tok[3] {
        "single" => true,
        "multi" => false,
        o => return Err(Error::format(context, format!("unknown stage-1 orientation {o:?}"))),
    };
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::format(context, format!("missing layer {i}")))?;
        let act = match line.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["layer", tag] => Activation::from_tag(tag)?,
            _ => return Err(Error::format(context, format!("expected `layer <activation>`, got {line:?}"))),
        };
        let weights = matrix_from_lines(&mut lines, context)?;
        let bias = matrix_from_lines(&mut lines, context)?;
        if bias.rows() != 1 {
            return Err(Error::format(context, format!("layer {i} bias must be a single row")));
        }
        layers.push(MlpLayer {
            weights,
            bias: bias.into_vec(),
            activation: act,
        });
    }
    MlpModel::new(layers, positive_is_single)
}

pub fn read_mlp(path: &Path) -> Result<MlpModel<f64>> {
    mlp_from_text(&read_text(path)?, &ctx(path))
}

pub fn write_mlp(path: &Path, m: &MlpModel<f64>) -> Result<()> {
    write_text(path, &mlp_to_text(m))
}

/// One `<onset> <end>` pair per line.
pub fn spans_to_text(spans: &[Interval]) -> String {
    let mut s = String::new();
    for iv in spans {
        let _ = writeln!(s, "{:?} {:?}", iv.start, iv.end);
    }
    s
}

pub fn spans_from_text(text: &str, context: &str) -> Result<Vec<Interval>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            let tok: Vec<&str> = l.split_whitespace().collect();
            if tok.len() != 2 {
                return Err(Error::format(context, format!("line {}: expected `<onset> <end>`", i + 1)));
            }
            let (a, b) = (parse_float(tok[0], context)?, parse_float(tok[1], context)?);
            if !(b > a) {
                return Err(Error::format(context, format!("line {}: empty span", i + 1)));
            }
            Ok(Interval::new(a, b))
        })
        .collect()
}

pub fn read_spans(path: &Path) -> Result<Vec<Interval>> {
    spans_from_text(&read_text(path)?, &ctx(path))
}

pub fn labels_to_text(labels: &[usize]) -> String {
    let mut s = String::new();
    for l in labels {
        let _ = writeln!(s, "{l}");
    }
    s
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let c = ctx(path);
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::format(&c, format!("bad label {l:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Matrix<f64> {
        Matrix::from_rows(&[[1.0, -2.5, 1e-300], [0.1, f64::MAX, -0.0]])
    }

    #[test]
    fn binary_round_trip() {
        let m = sample();
        let bytes = matrix_to_bytes(&m);
        assert_eq!(&bytes[..5], MATRIX_MAGIC);
        assert_eq!(bytes.len(), 25 + 48);
        let back = matrix_from_bytes(&bytes, "t").unwrap();
        assert_eq!(back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn text_round_trip_and_autodetect() {
        let m = sample();
        let text = matrix_to_text(&m);
        assert!(text.starts_with("DMAT 1 2 3\n"));
        assert_eq!(matrix_from_bytes(text.as_bytes(), "t").unwrap(), m);
    }

    #[test]
    fn bad_matrices() {
        assert!(matrix_from_text("DMAT 1 2 2\n1 2\n3\n", "t").is_err());
        assert!(matrix_from_text("DMAT 2 1 1\n1\n", "t").is_err());
        let mut bytes = matrix_to_bytes(&sample());
        bytes.pop();
        assert!(matrix_from_bytes(&bytes, "t").is_err());
        let mut huge = matrix_to_bytes(&Matrix::zeros(0, 0));
        huge[9..17].copy_from_slice(&u64::MAX.to_le_bytes());
        huge[17..25].copy_from_slice(&2u64.to_le_bytes());
        assert!(matrix_from_bytes(&huge, "t").is_err());
    }

    #[test]
    fn empty_matrix() {
        let m = Matrix::<f64>::zeros(0, 4);
        assert_eq!(matrix_from_bytes(&matrix_to_bytes(&m), "t").unwrap().cols(), 4);
        assert_eq!(matrix_from_text(&matrix_to_text(&m), "t").unwrap().rows(), 0);
    }

    #[test]
    fn tracks() {
        let t = ChangeScoreTrack::new(vec![0.0, 0.25, 1.0], 0.01, 0.015).unwrap();
        assert_eq!(track_from_bytes(&track_to_bytes(&t), "t").unwrap(), t);
        assert_eq!(track_from_bytes(track_to_text(&t).as_bytes(), "t").unwrap(), t);
        assert!(track_from_bytes(b"DTRK 1 0.01 0 2\n0.5\n", "t").is_err());
        assert!(track_from_bytes(b"DTRK 1 0.01 0 1\n1.5\n", "t").is_err());
    }

    #[test]
    fn mlp_round_trip() {
        let m = MlpModel::new(
            vec![
                MlpLayer {
                    weights: Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.25], [0.0, 1.0]]),
                    bias: vec![0.1, 0.2, 0.3],
                    activation: Activation::Tanh,
                },
                MlpLayer {
                    weights: Matrix::from_rows(&[[1.0, 1.0, -1.0]]),
                    bias: vec![0.0],
                    activation: Activation::Sigmoid,
                },
            ],
            false,
        )
        .unwrap();
        assert_eq!(mlp_from_text(&mlp_to_text(&m), "t").unwrap(), m);
        assert!(mlp_from_text("DMLP 1 1 single\nlayer relu\nDMAT 1 1 1\n1\nDMAT 1 1 1\n0\n", "t").is_err());
    }

    #[test]
    fn spans_and_labels() {
        let s = vec![Interval::new(0.0, 2.0), Interval::new(1.0, 3.5)];
        assert_eq!(spans_from_text(&spans_to_text(&s), "t").unwrap(), s);
        assert!(spans_from_text("1 1\n", "t").is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.txt");
        write_text(&p, &labels_to_text(&[0, 3, 1])).unwrap();
        assert_eq!(read_labels(&p).unwrap(), vec![0, 3, 1]);
    }

    #[test]
    fn files_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample();
        for name in ["a.mat", "a.txt"] {
            let p = dir.path().join("sub").join(name);
            write_matrix(&p, &m).unwrap();
            assert_eq!(read_matrix(&p).unwrap(), m);
        }
    }
}

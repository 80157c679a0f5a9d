//! Versioned checkpoint container.
//!
//! A file is a sequence of sections. Each section starts with one ASCII
//! header line and is followed by a binary payload:
//!
//! ```text
//! SMC 1 tensors <module> <name>:<d0>x<d1>,<name>:<d0>,...\n   <f32 LE blocks in order>
//! SMC 1 json <name> <byte count>\n                            <utf-8 JSON bytes>
//! ```

use std::io::{BufRead, Write};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::NnError;

pub const MAGIC: &str = "SMC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Section {
    Tensors { module: String, entries: Vec<(String, Tensor)> },
    Json { name: String, bytes: Vec<u8> },
}

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

fn check_token(s: &str) -> Result<(), NnError> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == ',' || c == ':') {
        return Err(bad(format!("invalid identifier {s:?}")));
    }
    Ok(())
}

pub struct CheckpointWriter<W: Write> {
    out: W,
}

impl<W: Write> CheckpointWriter<W> {
    pub fn new(out: W) -> Self {
        CheckpointWriter { out }
    }

    pub fn write_tensors(&mut self, module: &str, entries: &[(&str, &Tensor)]) -> Result<(), NnError> {
        check_token(module)?;
        let mut table = Vec::with_capacity(entries.len());
        for (name, t) in entries {
            check_token(name)?;
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            table.push(format!("{name}:{}", dims.join("x")));
        }
        let table = if table.is_empty() { "-".to_string() } else { table.join(",") };
        let io = |e: std::io::Error| bad(e.to_string());
        writeln!(self.out, "{MAGIC} {FORMAT_VERSION} tensors {module} {table}").map_err(io)?;
        for (_, t) in entries {
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            self.out.write_all(&buf).map_err(io)?;
        }
        Ok(())
    }

    pub fn write_params(&mut self, module: &str, params: &ParamSet) -> Result<(), NnError> {
        let entries: Vec<(&str, &Tensor)> =
            params.names().iter().map(String::as_str).zip(params.tensors()).collect();
        self.write_tensors(module, &entries)
    }

    pub fn write_json(&mut self, name: &str, bytes: &[u8]) -> Result<(), NnError> {
        check_token(name)?;
        let io = |e: std::io::Error| bad(e.to_string());
        writeln!(self.out, "{MAGIC} {FORMAT_VERSION} json {name} {}", bytes.len()).map_err(io)?;
        self.out.write_all(bytes).map_err(io)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn parse_shape(s: &str) -> Result<Vec<usize>, NnError> {
    s.split('x')
        .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad dimension {d:?}"))))
        .collect()
}

/// Reads every section until end of input.
pub fn read_sections(mut input: impl BufRead) -> Result<Vec<Section>, NnError> {
    let mut sections = Vec::new();
    loop {
        let mut line = Vec::new();
        let n = input.read_until(b'\n', &mut line).map_err(|e| bad(e.to_string()))?;
        if n == 0 {
            break;
        }
        if line.last() != Some(&b'\n') {
            return Err(bad("truncated header"));
        }
        line.pop();
        let line = String::from_utf8(line).map_err(|_| bad("header is not utf-8"))?;
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 5 || parts[0] != MAGIC {
            return Err(bad(format!("corrupted header {line:?}")));
        }
        let version: u32 = parts[1].parse().map_err(|_| bad("bad version field"))?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        match parts[2] {
            "tensors" => {
                let module = parts[3].to_string();
                let mut entries = Vec::new();
                if parts[4] != "-" {
                    for item in parts[4].split(',') {
                        let (name, shape) = item.split_once(':').ok_or_else(|| bad(format!("bad shape entry {item:?}")))?;
                        let shape = parse_shape(shape)?;
                        let n: usize = shape.iter().product();
                        let mut buf = vec![0u8; n * 4];
                        input.read_exact(&mut buf).map_err(|_| bad(format!("truncated data for {module}/{name}")))?;
                        let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
                        let t = Tensor::new(&shape, data).map_err(|e| bad(e.to_string()))?;
                        entries.push((name.to_string(), t));
                    }
                }
                sections.push(Section::Tensors { module, entries });
            }
            "json" => {
                let len: usize = parts[4].parse().map_err(|_| bad("bad json length"))?;
                let mut bytes = vec![0u8; len];
                input.read_exact(&mut bytes).map_err(|_| bad("truncated json section"))?;
                sections.push(Section::Json { name: parts[3].to_string(), bytes });
            }
            other => return Err(bad(format!("unknown section kind {other:?}"))),
        }
    }
    Ok(sections)
}

/// Copies a tensor section into `params`, requiring an identical shape table.
pub fn restore_params(section: &Section, module: &str, params: &mut ParamSet) -> Result<(), NnError> {
    let Section::Tensors { module: m, entries } = section else {
        return Err(bad(format!("expected tensor section for {module}")));
    };
    if m != module {
        return Err(bad(format!("expected module {module}, found {m}")));
    }
    if entries.len() != params.len() {
        return Err(bad(format!("shape table mismatch for {module}: {} vs {} tensors", entries.len(), params.len())));
    }
    for ((name, t), (pname, p)) in entries.iter().zip(params.names().iter().zip(params.tensors())) {
        if name != pname || t.shape() != p.shape() {
            return Err(bad(format!(
                "shape table mismatch for {module}: {name}{:?} vs {pname}{:?}",
                t.shape(),
                p.shape()
            )));
        }
    }
    for (dst, (_, src)) in params.tensors_mut().iter_mut().zip(entries) {
        *dst = src.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::Rng;

    fn sample() -> ParamSet {
        let mut rng = Rng::new(8);
        let mut p = ParamSet::default();
        p.add_uniform("enc.fc1.w", &[4, 3], 1.0, &mut rng);
        p.add_uniform("enc.fc1.b", &[4], 1.0, &mut rng);
        p
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let p = sample();
        let mut w = CheckpointWriter::new(Vec::new());
        w.write_params("goal", &p).unwrap();
        w.write_json("meta", br#"{"a":1}"#).unwrap();
        let bytes = w.into_inner();
        let sections = read_sections(&bytes[..]).unwrap();
        assert_eq!(sections.len(), 2);
        let mut q = sample();
        for t in q.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        restore_params(&sections[0], "goal", &mut q).unwrap();
        assert_eq!(p.fingerprint(), q.fingerprint());
        assert_eq!(sections[1], Section::Json { name: "meta".into(), bytes: br#"{"a":1}"#.to_vec() });
    }

    #[test]
    fn header_is_one_line_with_shape_table() {
        let mut w = CheckpointWriter::new(Vec::new());
        w.write_params("sim", &sample()).unwrap();
        let bytes = w.into_inner();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(std::str::from_utf8(&bytes[..nl]).unwrap(), "SMC 1 tensors sim enc.fc1.w:4x3,enc.fc1.b:4");
        assert_eq!(bytes.len(), nl + 1 + 16 * 4);
    }

    #[test]
    fn rejects_version_and_corruption() {
        let mut w = CheckpointWriter::new(Vec::new());
        w.write_params("goal", &sample()).unwrap();
        let bytes = w.into_inner();
        let mut v2 = bytes.clone();
        v2[4] = b'2';
        assert!(matches!(read_sections(&v2[..]), Err(NnError::Checkpoint(m)) if m.contains("version")));
        let mut garbled = bytes.clone();
        garbled[0] = b'X';
        assert!(read_sections(&garbled[..]).is_err());
        assert!(read_sections(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn rejects_shape_table_mismatch() {
        let mut w = CheckpointWriter::new(Vec::new());
        w.write_params("goal", &sample()).unwrap();
        let sections = read_sections(&w.into_inner()[..]).unwrap();
        let mut rng = Rng::new(1);
        let mut other = ParamSet::default();
        other.add_uniform("enc.fc1.w", &[4, 2], 1.0, &mut rng);
        other.add_uniform("enc.fc1.b", &[4], 1.0, &mut rng);
        assert!(restore_params(&sections[0], "goal", &mut other).is_err());
        assert!(restore_params(&sections[0], "sim", &mut sample()).is_err());
    }
}

//! Checkpoint files: a text manifest followed by raw little-endian `f32`
//! blobs in manifest order.
//!
//! ```text
//! vinlab-checkpoint 1
//! meta variant vin
//! param encoder.wide.0.w 10 10 6 4
//! ...
//! end
//! <f32 LE payload>
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{NumericError, ParamStore, Scalar, Tensor};

const MAGIC: &str = "vinlab-checkpoint 1";

/// Parameters plus free-form string metadata (variant tag, object count, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(params: &ParamStore<T>) -> Self {
        Self {
            meta: BTreeMap::new(),
            params: params.cast(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), NumericError> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(NumericError::Checkpoint(format!(
                    "unencodable metadata {k:?}"
                )));
            }
            header.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, t) in self.params.iter() {
            if name.contains(char::is_whitespace) {
                return Err(NumericError::Checkpoint(format!(
                    "unencodable parameter name {name:?}"
                )));
            }
            header.push_str("param ");
            header.push_str(name);
            for d in t.shape() {
                header.push_str(&format!(" {d}"));
            }
            header.push('\n');
        }
        header.push_str("end\n");
        w.write_all(header.as_bytes())?;
        for (_, t) in self.params.iter() {
            let mut buf = Vec::with_capacity(t.len() * 4);
            for x in t.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self, NumericError> {
        let mut r = BufReader::new(r);
        let bad = |msg: &str| NumericError::Checkpoint(msg.to_string());
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(bad("missing checkpoint header"));
        }
        let mut meta = BTreeMap::new();
        let mut entries: Vec<(String, Vec<usize>)> = Vec::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("manifest not terminated"));
            }
            let l = line.trim_end_matches('\n');
            if l == "end" {
                break;
            }
            if let Some(rest) = l.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = l.strip_prefix("param ") {
                let mut parts = rest.split(' ');
                let name = parts
                    .next()
                    .ok_or_else(|| bad("param without name"))?
                    .to_string();
                let shape = parts
                    .map(|d| d.parse::<usize>().map_err(|_| bad("bad extent")))
                    .collect::<Result<Vec<_>, _>>()?;
                entries.push((name, shape));
            } else {
                return Err(bad("unknown manifest line"));
            }
        }
        let mut params = ParamStore::new();
        for (name, shape) in entries {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes)
                .map_err(|_| bad("truncated payload"))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.insert(name, Tensor::new(&shape, data)?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NumericError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NumericError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

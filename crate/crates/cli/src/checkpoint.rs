//! Binary container for parameter sets and datasets.
//!
//! Layout: a plain-text header followed by the payload.
//!
//! ```text
//! PFCR
//! version 1
//! kind params
//! meta <key> <value>            (zero or more)
//! entry <name> <tag> <shape> <byte offset>
//! ...
//! payload <byte count>
//! <little-endian f32 values, entries concatenated in manifest order>
//! ```
//!
//! Shapes are written `2x3x3`; tags are the parameter group for parameter
//! sets and the label (symbols joined by `.`, `-` when empty) for dataset
//! lines. Every header token is whitespace-free.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pfedcr_core::ctc::LabelSeq;
use pfedcr_core::datagen::{ClientData, Dataset, Sample};
use pfedcr_core::{Group, Param, ParamSet, Tensor};
use serde::Serialize;

use crate::error::{CliError, Result};

pub const MAGIC: &str = "PFCR";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub tag: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Container {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub entries: Vec<Entry>,
}

fn token_ok(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.into(),
            ..Self::default()
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let bad = |d: String| CliError::Config(format!("cannot encode container: {d}"));
        let mut header = format!("{MAGIC}\nversion {VERSION}\nkind {}\n", self.kind);
        for (k, v) in &self.meta {
            if !token_ok(k) || !token_ok(v) {
                return Err(bad(format!("meta `{k}` = `{v}`")));
            }
            header += &format!("meta {k} {v}\n");
        }
        let mut offset = 0usize;
        for e in &self.entries {
            if !token_ok(&e.name) || !token_ok(&e.tag) {
                return Err(bad(format!("entry `{}` tag `{}`", e.name, e.tag)));
            }
            if e.shape.iter().product::<usize>() != e.data.len() {
                return Err(bad(format!("entry `{}` shape {:?} vs {} values", e.name, e.shape, e.data.len())));
            }
            header += &format!("entry {} {} {} {offset}\n", e.name, e.tag, shape_text(&e.shape));
            offset += 4 * e.data.len();
        }
        header += &format!("payload {offset}\n");
        let mut out = header.into_bytes();
        out.reserve(offset);
        for e in &self.entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |d: String| CliError::Checkpoint {
            path: path.to_path_buf(),
            detail: d,
        };
        let mut pos = 0usize;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header".into()))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8".into()))
        };
        if next_line()? != MAGIC {
            return Err(bad(format!("missing {MAGIC} magic")));
        }
        let version = next_line()?;
        if version != format!("version {VERSION}") {
            return Err(bad(format!("unsupported `{version}`")));
        }
        let kind = next_line()?
            .strip_prefix("kind ")
            .ok_or_else(|| bad("missing kind line".into()))?
            .to_string();
        let mut c = Container::new(&kind);
        let mut layout = Vec::new();
        let payload_len = loop {
            let line = next_line()?;
            let words: Vec<&str> = line.split(' ').collect();
            match words.as_slice() {
                ["meta", k, v] => {
                    c.meta.insert(k.to_string(), v.to_string());
                }
                ["entry", name, tag, shape, offset] => {
                    let shape = parse_shape(shape).ok_or_else(|| bad(format!("bad shape in `{line}`")))?;
                    let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset in `{line}`")))?;
                    layout.push((name.to_string(), tag.to_string(), shape, offset));
                }
                ["payload", n] => break n.parse::<usize>().map_err(|_| bad(format!("bad `{line}`")))?,
                _ => return Err(bad(format!("unexpected header line `{line}`"))),
            }
        };
        let payload = &bytes[pos..];
        if payload.len() != payload_len {
            return Err(bad(format!("payload has {} bytes, header says {payload_len}", payload.len())));
        }
        let mut expected = 0usize;
        for (name, tag, shape, offset) in layout {
            let n = shape.iter().product::<usize>();
            if offset != expected || offset + 4 * n > payload_len {
                return Err(bad(format!("entry `{name}` at offset {offset} does not follow the previous entry")));
            }
            let data = payload[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            expected = offset + 4 * n;
            c.entries.push(Entry { name, tag, shape, data });
        }
        if expected != payload_len {
            return Err(bad("payload longer than its entries".into()));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(CliError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(CliError::io(path))?, path)
    }

    pub fn expect_kind(self, kind: &str, path: &Path) -> Result<Self> {
        if self.kind == kind {
            Ok(self)
        } else {
            Err(CliError::Checkpoint {
                path: path.to_path_buf(),
                detail: format!("expected a `{kind}` container, found `{}`", self.kind),
            })
        }
    }

    fn meta_usize(&self, key: &str, path: &Path) -> Result<usize> {
        self.meta.get(key).and_then(|v| v.parse().ok()).ok_or_else(|| CliError::Checkpoint {
            path: path.to_path_buf(),
            detail: format!("missing or invalid meta `{key}`"),
        })
    }
}

fn shape_text(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "-".into();
    }
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    if s == "-" {
        return Some(Vec::new());
    }
    s.split('x').map(|d| d.parse().ok()).collect()
}

fn label_text(label: &LabelSeq) -> String {
    if label.is_empty() {
        return "-".into();
    }
    label.symbols().iter().map(u32::to_string).collect::<Vec<_>>().join(".")
}

fn parse_label(s: &str) -> Option<Vec<u32>> {
    if s == "-" {
        return Some(Vec::new());
    }
    s.split('.').map(|d| d.parse().ok()).collect()
}

/// Parameter values in ParamSet order; optimizer state is not stored.
pub fn params_container(params: &ParamSet) -> Container {
    let mut c = Container::new("params");
    c.entries = params
        .iter()
        .map(|p| Entry {
            name: p.name().to_string(),
            tag: p.group().as_str().to_string(),
            shape: p.shape().to_vec(),
            data: p.value.data().to_vec(),
        })
        .collect();
    c
}

pub fn params_from_container(c: Container, path: &Path) -> Result<ParamSet> {
    let c = c.expect_kind("params", path)?;
    let bad = |d: String| CliError::Checkpoint {
        path: path.to_path_buf(),
        detail: d,
    };
    let mut params = Vec::with_capacity(c.entries.len());
    for e in c.entries {
        let group: Group = e.tag.parse().map_err(|err| bad(format!("{err}")))?;
        let value = Tensor::new(e.shape, e.data).map_err(|err| bad(format!("{err}")))?;
        params.push(Param::new(e.name, group, value));
    }
    ParamSet::new(params).map_err(|err| bad(format!("{err}")))
}

pub fn write_params(path: &Path, params: &ParamSet) -> Result<()> {
    params_container(params).write(path)
}

pub fn read_params(path: &Path) -> Result<ParamSet> {
    params_from_container(Container::read(path)?, path)
}

fn push_samples(c: &mut Container, prefix: &str, data: &Dataset) {
    for (i, s) in data.samples().iter().enumerate() {
        c.entries.push(Entry {
            name: format!("{prefix}.{i}"),
            tag: label_text(&s.label),
            shape: s.image.shape().to_vec(),
            data: s.image.data().to_vec(),
        });
    }
}

fn take_samples(entries: &[Entry], prefix: &str, alphabet: usize, path: &Path) -> Result<Dataset> {
    let bad = |d: String| CliError::Checkpoint {
        path: path.to_path_buf(),
        detail: d,
    };
    let mut samples = Vec::new();
    for e in entries.iter().filter(|e| e.name.split_once('.').map(|(p, _)| p) == Some(prefix)) {
        if e.name != format!("{prefix}.{}", samples.len()) {
            return Err(bad(format!("entry `{}` out of order", e.name)));
        }
        let symbols = parse_label(&e.tag).ok_or_else(|| bad(format!("bad label `{}`", e.tag)))?;
        samples.push(Sample {
            image: Tensor::new(e.shape.clone(), e.data.clone()).map_err(|err| bad(format!("{err}")))?,
            label: LabelSeq::new(symbols).map_err(|err| bad(format!("{err}")))?,
        });
    }
    Dataset::new(samples, alphabet).map_err(|err| bad(format!("{err}")))
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut c = Container::new("dataset");
    c.meta.insert("alphabet_size".into(), data.alphabet_size().to_string());
    push_samples(&mut c, "line", data);
    c.write(path)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let c = Container::read(path)?.expect_kind("dataset", path)?;
    let a = c.meta_usize("alphabet_size", path)?;
    take_samples(&c.entries, "line", a, path)
}

/// Both splits of one client in one file.
pub fn write_client(path: &Path, data: &ClientData) -> Result<()> {
    let mut c = Container::new("client");
    c.meta.insert("alphabet_size".into(), data.train.alphabet_size().to_string());
    push_samples(&mut c, "train", &data.train);
    push_samples(&mut c, "test", &data.test);
    c.write(path)
}

pub fn read_client(path: &Path) -> Result<ClientData> {
    let c = Container::read(path)?.expect_kind("client", path)?;
    let a = c.meta_usize("alphabet_size", path)?;
    Ok(ClientData {
        train: take_samples(&c.entries, "train", a, path)?,
        test: take_samples(&c.entries, "test", a, path)?,
    })
}

/// JSON metadata written next to a container as `<file>.json`.
pub fn write_sidecar<T: Serialize>(container: &Path, value: &T) -> Result<()> {
    let mut name = container.as_os_str().to_owned();
    name.push(".json");
    let path = Path::new(&name);
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(format!("sidecar: {e}")))?;
    fs::write(path, text + "\n").map_err(CliError::io(path))
}

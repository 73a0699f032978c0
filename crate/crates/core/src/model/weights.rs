//! `.ssrfcn` weight files.
//!
//! A UTF-8 header followed by raw little-endian `f32` data:
//!
//! ```text
//! ssrfcn-weights 1
//! config input_channels=3 channels=64,128,256,512,1 strides=2,2,2,2,1 kernel=3
//! bn momentum=0.9 epsilon=0.00001
//! adam lr=0.001 beta1=0.9 beta2=0.999 epsilon=0.00000001 t=0
//! tensor conv1.weight f32 3,3,3,64
//! ...
//! end
//! ```
//!
//! Tensor payloads follow `end\n` in header order. The `adam` line and its
//! `adam.m.*` / `adam.v.*` tensors are optional on read.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{FcnConfig, FcnModel};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::optim::AdamState;

pub const WEIGHTS_EXTENSION: &str = "ssrfcn";
const MAGIC: &str = "ssrfcn-weights";
const VERSION: u32 = 1;

struct Entry {
    name: String,
    shape: Vec<usize>,
}

fn join(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Every stored tensor with its shape, in file order.
fn layout(model: &FcnModel, with_optimizer: bool) -> Vec<Entry> {
    let k = model.config.kernel;
    let mut out = Vec::new();
    for (i, conv) in model.convs.iter().enumerate() {
        let l = i + 1;
        out.push(Entry {
            name: format!("conv{l}.weight"),
            shape: vec![k, k, conv.in_channels, conv.out_channels],
        });
        out.push(Entry {
            name: format!("conv{l}.bias"),
            shape: vec![conv.out_channels],
        });
        if let Some(bn) = model.norms.get(i) {
            for field in ["gamma", "beta", "running_mean", "running_var"] {
                out.push(Entry {
                    name: format!("bn{l}.{field}"),
                    shape: vec![bn.channels()],
                });
            }
        }
    }
    if with_optimizer {
        let names = model.parameter_names();
        let lens: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
        for prefix in ["adam.m", "adam.v"] {
            for (name, &len) in names.iter().zip(&lens) {
                out.push(Entry {
                    name: format!("{prefix}.{name}"),
                    shape: vec![len],
                });
            }
        }
    }
    out
}

fn slices(model: &FcnModel, with_optimizer: bool) -> Vec<&[f32]> {
    let mut out: Vec<&[f32]> = Vec::new();
    for (i, conv) in model.convs.iter().enumerate() {
        out.push(&conv.weights);
        out.push(&conv.bias);
        if let Some(bn) = model.norms.get(i) {
            out.extend([&bn.gamma[..], &bn.beta, &bn.running_mean, &bn.running_var]);
        }
    }
    if with_optimizer {
        out.extend(model.optimizer.m.iter().map(Vec::as_slice));
        out.extend(model.optimizer.v.iter().map(Vec::as_slice));
    }
    out
}

fn slices_mut(model: &mut FcnModel, with_optimizer: bool) -> Vec<&mut [f32]> {
    let mut out: Vec<&mut [f32]> = Vec::new();
    let mut norms = model.norms.iter_mut();
    for conv in model.convs.iter_mut() {
        out.push(&mut conv.weights);
        out.push(&mut conv.bias);
        if let Some(bn) = norms.next() {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
            out.push(&mut bn.running_mean);
            out.push(&mut bn.running_var);
        }
    }
    if with_optimizer {
        let opt = &mut model.optimizer;
        out.extend(opt.m.iter_mut().map(Vec::as_mut_slice));
        out.extend(opt.v.iter_mut().map(Vec::as_mut_slice));
    }
    out
}

/// Serializes the model including optimizer state.
pub fn write_model(model: &FcnModel, w: &mut dyn Write) -> Result<()> {
    let c = &model.config;
    let bn = &model.norms[0];
    let opt = &model.optimizer;
    writeln!(w, "{MAGIC} {VERSION}")?;
    writeln!(
        w,
        "config input_channels={} channels={} strides={} kernel={}",
        c.input_channels,
        join(&c.channels),
        join(&c.strides),
        c.kernel
    )?;
    writeln!(w, "bn momentum={} epsilon={}", bn.momentum, bn.epsilon)?;
    writeln!(
        w,
        "adam lr={} beta1={} beta2={} epsilon={} t={}",
        opt.lr, opt.beta1, opt.beta2, opt.epsilon, opt.t
    )?;
    for e in layout(model, true) {
        writeln!(w, "tensor {} f32 {}", e.name, join(&e.shape))?;
    }
    writeln!(w, "end")?;
    for s in slices(model, true) {
        let mut buf = Vec::with_capacity(s.len() * 4);
        for v in s {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_model(model: &FcnModel, path: &Path) -> Result<()> {
    write_atomic(path, |w| write_model(model, w))
}

pub fn load_model(path: &Path) -> Result<FcnModel> {
    let file = File::open(path)?;
    read_model(&mut BufReader::new(file))
}

/// `key=value` pairs of a header line after its leading keyword.
fn fields<'a>(line: &'a str, keyword: &str) -> Result<Vec<(&'a str, &'a str)>> {
    let rest = line
        .strip_prefix(keyword)
        .ok_or_else(|| Error::format("header", format!("expected `{keyword}` line, got `{line}`")))?;
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| Error::format("header", format!("malformed field `{kv}`")))
        })
        .collect()
}

fn value<'a>(fields: &[(&str, &'a str)], key: &str, section: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::format("header", format!("`{section}` line lacks `{key}`")))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format("header", format!("cannot parse {what} from `{s}`")))
}

fn parse_list<const N: usize>(s: &str, what: &str) -> Result<[usize; N]> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| parse(p, what))
        .collect::<Result<_>>()?;
    v.try_into()
        .map_err(|_| Error::format("header", format!("{what} must have {N} entries")))
}

fn read_line(r: &mut dyn BufRead, expecting: &str) -> Result<String> {
    let mut line = String::new();
    let n = r.read_line(&mut line).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => Error::format(expecting, "header is not UTF-8"),
        _ => Error::Io(e),
    })?;
    if n == 0 {
        return Err(Error::format(expecting, "file ends inside the header"));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

pub fn read_model(r: &mut dyn BufRead) -> Result<FcnModel> {
    let magic = read_line(r, "header")?;
    match magic.split_once(' ') {
        Some((MAGIC, v)) if v == VERSION.to_string() => {}
        Some((MAGIC, v)) => {
            return Err(Error::format("header", format!("unsupported version {v}")));
        }
        _ => return Err(Error::format("header", "not an ssrfcn weight file")),
    }

    let cfg_line = read_line(r, "header")?;
    let f = fields(&cfg_line, "config")?;
    let config = FcnConfig {
        input_channels: parse(value(&f, "input_channels", "config")?, "input_channels")?,
        channels: parse_list(value(&f, "channels", "config")?, "channels")?,
        strides: parse_list(value(&f, "strides", "config")?, "strides")?,
        kernel: parse(value(&f, "kernel", "config")?, "kernel")?,
    };
    let mut model = FcnModel::zeroed(config).map_err(|e| Error::format("header", e.to_string()))?;

    let bn_line = read_line(r, "header")?;
    let f = fields(&bn_line, "bn")?;
    let momentum: f32 = parse(value(&f, "momentum", "bn")?, "momentum")?;
    let epsilon: f32 = parse(value(&f, "epsilon", "bn")?, "epsilon")?;
    for bn in &mut model.norms {
        bn.momentum = momentum;
        bn.epsilon = epsilon;
    }

    let mut line = read_line(r, "header")?;
    let mut with_optimizer = false;
    if line.starts_with("adam ") {
        let f = fields(&line, "adam")?;
        let lr: f32 = parse(value(&f, "lr", "adam")?, "lr")?;
        model.reset_optimizer(lr);
        let opt: &mut AdamState = &mut model.optimizer;
        opt.beta1 = parse(value(&f, "beta1", "adam")?, "beta1")?;
        opt.beta2 = parse(value(&f, "beta2", "adam")?, "beta2")?;
        opt.epsilon = parse(value(&f, "epsilon", "adam")?, "epsilon")?;
        opt.t = parse(value(&f, "t", "adam")?, "t")?;
        with_optimizer = true;
        line = read_line(r, "header")?;
    }

    let expected = layout(&model, with_optimizer);
    let mut declared = 0;
    while line != "end" {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [keyword, name, dtype, dims] = parts[..] else {
            return Err(Error::format("header", format!("malformed tensor line `{line}`")));
        };
        if keyword != "tensor" {
            return Err(Error::format("header", format!("unexpected line `{line}`")));
        }
        let Some(want) = expected.get(declared) else {
            return Err(Error::format(name, "unexpected extra tensor"));
        };
        if name != want.name {
            return Err(Error::format(
                name,
                format!("expected `{}` at position {declared}", want.name),
            ));
        }
        if dtype != "f32" {
            return Err(Error::format(name, format!("unsupported dtype {dtype}")));
        }
        let shape: Vec<usize> = dims
            .split(',')
            .map(|d| d.parse().map_err(|_| Error::format(name, format!("bad shape `{dims}`"))))
            .collect::<Result<_>>()?;
        if shape != want.shape {
            return Err(Error::format(
                name,
                format!("shape ({}) does not match expected ({})", dims, join(&want.shape)),
            ));
        }
        declared += 1;
        line = read_line(r, "header")?;
    }
    if declared != expected.len() {
        return Err(Error::format(
            &expected[declared].name,
            "tensor missing from header",
        ));
    }

    let mut buf = Vec::new();
    for (entry, dst) in expected.iter().zip(slices_mut(&mut model, with_optimizer)) {
        buf.resize(dst.len() * 4, 0);
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::format(&entry.name, "file is truncated"),
            _ => Error::Io(e),
        })?;
        for (d, chunk) in dst.iter_mut().zip(buf.chunks_exact(4)) {
            *d = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::format("end", "trailing bytes after the last tensor"));
    }
    Ok(model)
}

//! Model checkpoints.
//!
//! ```text
//! magic "PNMACKPT1"
//! version: u32
//! config: u32 len + UTF-8 `key=value` lines (architecture, then `echo.*` training settings)
//! vocabulary: u32 len + UTF-8, one word per line in id order
//! tags: u32 len + UTF-8, one label per line (ids from 0)
//! sections: u32 count, then per section
//!     name: u32 len + bytes, rank: u32, extents: rank × u32, payload: f32 × product
//! sha256 of everything above: 32 bytes
//! ```
//!
//! Payloads are always `f32`; `f64` models are narrowed on save.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::crf::CrfParams;
use crate::dataio::{SchemeKind, TagSet, Vocabulary};
use crate::digest::{self, put_str, put_u32, Digest, Reader};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::pnma::NeighborhoodParams;
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"PNMACKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn config_text<R: Real>(model: &Model<R>) -> String {
    let c = &model.config;
    let e = &c.encoder;
    let mut s = String::new();
    let _ = writeln!(s, "vocab_size={}", e.vocab_size);
    let _ = writeln!(s, "word_dim={}", e.word_dim);
    let _ = writeln!(s, "predicate_dim={}", e.predicate_dim);
    let _ = writeln!(s, "hidden={}", e.hidden);
    let _ = writeln!(s, "layers={}", e.layers);
    let _ = writeln!(s, "external_dim={}", e.external_dim.unwrap_or(0));
    let _ = writeln!(s, "dropout_embed={}", e.dropout_embed);
    let _ = writeln!(s, "dropout_lstm={}", e.dropout_lstm);
    let _ = writeln!(s, "k={}", c.k);
    let _ = writeln!(s, "weighting={}", c.weighting);
    let _ = writeln!(s, "scheme={}", c.scheme.name());
    let _ = writeln!(s, "min_frequency={}", model.vocab.min_frequency);
    for (k, v) in &model.echo {
        let _ = writeln!(s, "echo.{k}={v}");
    }
    s
}

struct ParsedConfig {
    config: ModelConfig,
    min_frequency: usize,
    echo: Vec<(String, String)>,
}

fn parse_config(text: &str) -> Result<ParsedConfig> {
    let mut config = ModelConfig::default();
    let mut min_frequency = 1;
    let mut echo = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("checkpoint config line {line:?}")))?;
        let bad = || Error::Format(format!("checkpoint config value {line:?}"));
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let real = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let e = &mut config.encoder;
        match k {
            "vocab_size" => e.vocab_size = num(v)?,
            "word_dim" => e.word_dim = num(v)?,
            "predicate_dim" => e.predicate_dim = num(v)?,
            "hidden" => e.hidden = num(v)?,
            "layers" => e.layers = num(v)?,
            "external_dim" => e.external_dim = Some(num(v)?).filter(|&d| d > 0),
            "dropout_embed" => e.dropout_embed = real(v)?,
            "dropout_lstm" => e.dropout_lstm = real(v)?,
            "k" => config.k = num(v)?,
            "weighting" => config.weighting = v.to_string(),
            "scheme" => config.scheme = SchemeKind::parse(v).map_err(|_| bad())?,
            "min_frequency" => min_frequency = num(v)?,
            _ => match k.strip_prefix("echo.") {
                Some(key) => echo.push((key.to_string(), v.to_string())),
                None => return Err(Error::Format(format!("unknown checkpoint config key {k:?}"))),
            },
        }
    }
    Ok(ParsedConfig {
        config,
        min_frequency,
        echo,
    })
}

pub fn to_bytes<R: Real>(model: &Model<R>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_str(&mut out, &config_text(model));
    let vocab: String = model.vocab.words().iter().map(|w| format!("{w}\n")).collect();
    put_str(&mut out, &vocab);
    let tags: String = model.tags.labels().iter().map(|t| format!("{t}\n")).collect();
    put_str(&mut out, &tags);
    let named = model.named();
    put_u32(&mut out, named.len() as u32);
    for (name, t) in named {
        put_str(&mut out, &name);
        put_u32(&mut out, t.shape().len() as u32);
        for &e in t.shape() {
            put_u32(&mut out, e as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
    }
    let d = digest::sha256(&out);
    out.extend_from_slice(&d);
    out
}

pub fn digest_of<R: Real>(model: &Model<R>) -> Digest {
    let bytes = to_bytes(model);
    let mut d = [0u8; 32];
    d.copy_from_slice(&bytes[bytes.len() - 32..]);
    d
}

pub fn from_bytes<R: Real>(bytes: &[u8]) -> Result<Model<R>> {
    if bytes.len() < 9 || &bytes[..8] != b"PNMACKPT" {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    if &bytes[..9] != CHECKPOINT_MAGIC {
        return Err(Error::Format("checkpoint magic version mismatch".into()));
    }
    let (payload, _) = digest::split_verified(bytes, "checkpoint")?;
    let mut r = Reader::new(payload, "checkpoint");
    r.take(9)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let parsed = parse_config(&r.string()?)?;
    let vocab_text = r.string()?;
    let vocab = Vocabulary::from_words(vocab_text.lines().map(str::to_string), parsed.min_frequency);
    let tags = TagSet::from_labels(r.string()?.lines().map(str::to_string));

    let mut config = parsed.config;
    if config.encoder.external_dim.is_none() && config.encoder.vocab_size != vocab.len() {
        return Err(Error::Format(format!(
            "vocabulary has {} entries, config says {}",
            vocab.len(),
            config.encoder.vocab_size
        )));
    }
    config.encoder.vocab_size = vocab.len();

    let count = r.u32()? as usize;
    let mut sections: Vec<(String, Tensor<R>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        if n.saturating_mul(4) > r.remaining() {
            return Err(Error::Format(format!("checkpoint truncated in section {name:?}")));
        }
        let data: Vec<R> = (0..n).map(|_| r.f32().map(R::from_f32_bits)).collect::<Result<_>>()?;
        sections.push((name, Tensor::from_vec(&shape, data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::Format("trailing bytes after checkpoint sections".into()));
    }

    let mut model = Model {
        encoder: EncoderParams::zeros(&config.encoder),
        crf: CrfParams::zeros(tags.len(), config.encoder.hidden),
        neighborhood: None,
        config,
        vocab,
        tags,
        echo: parsed.echo,
    };
    let mut take = |name: &str, dst: &mut Tensor<R>| -> Result<()> {
        let pos = sections
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks section {name:?}")))?;
        let (_, t) = sections.swap_remove(pos);
        if t.shape() != dst.shape() {
            return Err(Error::Format(format!(
                "section {name:?} has shape {:?}, expected {:?}",
                t.shape(),
                dst.shape()
            )));
        }
        *dst = t;
        Ok(())
    };
    let enc_names: Vec<String> = model.encoder.named().into_iter().map(|(n, _)| n).collect();
    for (name, dst) in enc_names.iter().zip(model.encoder.tensors_mut()) {
        take(name, dst)?;
    }
    let crf_names: Vec<String> = model.crf.named().into_iter().map(|(n, _)| n).collect();
    for (name, dst) in crf_names.iter().zip(model.crf.tensors_mut()) {
        take(name, dst)?;
    }
    if let Some(pos) = sections.iter().position(|(n, _)| n == "pnma.neighbors") {
        let (_, t) = sections.swap_remove(pos);
        if t.shape().len() != 2 || t.cols() != model.config.encoder.hidden {
            return Err(Error::Format(format!("pnma.neighbors has shape {:?}", t.shape())));
        }
        model.neighborhood = Some(NeighborhoodParams {
            k: model.config.k,
            vectors: t,
        });
    }
    if let Some((name, _)) = sections.first() {
        return Err(Error::Format(format!("unexpected checkpoint section {name:?}")));
    }
    Ok(model)
}

pub fn save<R: Real>(model: &Model<R>, path: &Path) -> Result<Digest> {
    let bytes = to_bytes(model);
    fs::write(path, &bytes)?;
    let mut d = [0u8; 32];
    d.copy_from_slice(&bytes[bytes.len() - 32..]);
    Ok(d)
}

pub fn load<R: Real>(path: &Path) -> Result<Model<R>> {
    from_bytes(&fs::read(path)?)
}

/// Names of parameter tensors that phase-2 training must leave untouched.
pub fn is_frozen(name: &str) -> bool {
    name.starts_with("encoder.")
}

//! Binary model checkpoints with bit-exact round trips.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "BSGC"
//! version  u32      currently 1
//! kind     u8       0 paired, 1 unpaired, 2 classifier
//! count    u32      number of entries
//! entry    count times, sorted by name:
//!   name_len u16, name (UTF-8), rank u8, dims rank x u64,
//!   payload product(dims) x f32
//! ```
//!
//! Network weights are stored under a prefix per network (`gen.`, `disc.`,
//! `gen_ab.`, `gen_ba.`, `disc_a.`, `disc_b.`, `clf.`). Adam accumulators
//! ride along as three entries per parameter: `<name>.m` and `<name>.v`
//! (flat, same element count as the parameter) and a rank-0 `<name>.t`
//! step counter. Rank-0 `meta.*` entries pin down the architecture so a
//! loader rebuilds the exact network shape before accepting any payload.
//!
//! Parsing is strict: bad magic, an unknown version or kind, truncation,
//! trailing bytes, duplicate or unexpected entries, shape mismatches, and
//! non-finite payload values are all rejected with a format error carrying
//! the byte offset, and no partially filled model is ever returned.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::classifier::{Classifier, ClassifierConfig};
use crate::error::{Error, Result};
use crate::kernels::NormMode;
use crate::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::optim::AdamState;
use crate::params::Params;
use crate::tensor::Tensor;
use crate::trainer::{Model, OptState, PairedModel, UnpairedModel};

pub const MAGIC: [u8; 4] = *b"BSGC";
pub const VERSION: u32 = 1;

const KIND_PAIRED: u8 = 0;
const KIND_UNPAIRED: u8 = 1;
const KIND_CLASSIFIER: u8 = 2;

/// Hard ceilings that keep a corrupt header from asking for absurd reads.
const MAX_RANK: usize = 8;
const MAX_ELEMENTS: u64 = 1 << 26;

/// Largest step counter that survives the f32 round trip exactly.
const MAX_EXACT_STEP: u64 = 1 << 24;

#[derive(Clone, Debug)]
struct Entry {
    dims: Vec<u64>,
    data: Vec<f32>,
    /// Byte offset of the entry header; zero for entries built for writing.
    offset: u64,
}

impl Entry {
    fn scalar(v: f32) -> Entry {
        Entry { dims: Vec::new(), data: vec![v], offset: 0 }
    }

    fn tensor(t: &Tensor) -> Entry {
        Entry {
            dims: t.shape().iter().map(|&d| d as u64).collect(),
            data: t.data().to_vec(),
            offset: 0,
        }
    }

    fn flat(data: &[f32]) -> Entry {
        Entry { dims: vec![data.len() as u64], data: data.to_vec(), offset: 0 }
    }
}

type EntryMap = BTreeMap<String, Entry>;

// ---------------------------------------------------------------- writing

fn encode_norm(norm: NormMode) -> f32 {
    match norm {
        NormMode::Batch => 0.0,
        NormMode::Instance => 1.0,
    }
}

fn push_meta(map: &mut EntryMap, name: &str, value: f32) {
    map.insert(format!("meta.{name}"), Entry::scalar(value));
}

/// Adds one network's weights and optimizer state under `prefix`.
fn push_network(map: &mut EntryMap, prefix: &str, params: &Params, opt: &OptState) -> Result<()> {
    for name in opt.keys() {
        params.get(name).map_err(|_| {
            Error::Usage(format!("optimizer state refers to unknown parameter {name:?}"))
        })?;
    }
    for (name, t) in params.iter() {
        let full = format!("{prefix}.{name}");
        if let Some(state) = opt.get(name) {
            if state.t >= MAX_EXACT_STEP {
                return Err(Error::Usage(format!(
                    "optimizer step count {} for {full:?} cannot be stored exactly",
                    state.t
                )));
            }
            if state.m.len() != t.numel() || state.v.len() != t.numel() {
                return Err(Error::Usage(format!(
                    "optimizer state for {full:?} does not match the parameter size"
                )));
            }
            map.insert(format!("{full}.m"), Entry::flat(&state.m));
            map.insert(format!("{full}.v"), Entry::flat(&state.v));
            map.insert(format!("{full}.t"), Entry::scalar(state.t as f32));
        }
        map.insert(full, Entry::tensor(t));
    }
    Ok(())
}

fn serialize(kind: u8, entries: &EntryMap) -> Result<Vec<u8>> {
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::Usage("too many entries for one checkpoint".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&count.to_le_bytes());
    for (name, e) in entries {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Usage(format!("entry name {name:?} is too long")))?;
        let rank = u8::try_from(e.dims.len())
            .map_err(|_| Error::Usage(format!("entry {name:?} has too many dimensions")))?;
        let numel: u64 = e.dims.iter().product();
        debug_assert_eq!(numel as usize, e.data.len());
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn model_meta(map: &mut EntryMap, gen: &Generator, disc: &Discriminator) -> Result<()> {
    let g = gen.cfg();
    let d = disc.cfg();
    if g.image_size != d.image_size || g.base_channels != d.base_channels || g.norm != d.norm {
        return Err(Error::Usage(
            "generator and discriminator disagree on shared settings; cannot store them".into(),
        ));
    }
    push_meta(map, "image_size", g.image_size as f32);
    push_meta(map, "base_channels", g.base_channels as f32);
    push_meta(map, "depth", g.depth as f32);
    push_meta(map, "disc_levels", d.levels as f32);
    push_meta(map, "norm", encode_norm(g.norm));
    Ok(())
}

fn paired_bytes(model: &PairedModel) -> Result<Vec<u8>> {
    let mut map = EntryMap::new();
    model_meta(&mut map, &model.gen, &model.disc)?;
    push_network(&mut map, "gen", &model.gen.params, &model.gen_opt)?;
    push_network(&mut map, "disc", &model.disc.params, &model.disc_opt)?;
    serialize(KIND_PAIRED, &map)
}

fn unpaired_bytes(model: &UnpairedModel) -> Result<Vec<u8>> {
    let mut map = EntryMap::new();
    model_meta(&mut map, &model.gen_ab, &model.disc_a)?;
    push_network(&mut map, "gen_ab", &model.gen_ab.params, &model.gen_ab_opt)?;
    push_network(&mut map, "gen_ba", &model.gen_ba.params, &model.gen_ba_opt)?;
    push_network(&mut map, "disc_a", &model.disc_a.params, &model.disc_a_opt)?;
    push_network(&mut map, "disc_b", &model.disc_b.params, &model.disc_b_opt)?;
    serialize(KIND_UNPAIRED, &map)
}

fn classifier_bytes(clf: &Classifier) -> Result<Vec<u8>> {
    let mut map = EntryMap::new();
    push_meta(&mut map, "image_size", clf.cfg().image_size as f32);
    push_meta(&mut map, "base_channels", clf.cfg().base_channels as f32);
    push_network(&mut map, "clf", &clf.params, &OptState::new())?;
    serialize(KIND_CLASSIFIER, &map)
}

pub fn save_paired(model: &PairedModel, path: &Path) -> Result<()> {
    fs::write(path, paired_bytes(model)?)?;
    Ok(())
}

pub fn save_unpaired(model: &UnpairedModel, path: &Path) -> Result<()> {
    fs::write(path, unpaired_bytes(model)?)?;
    Ok(())
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    match model {
        Model::Paired(m) => save_paired(m, path),
        Model::Unpaired(m) => save_unpaired(m, path),
    }
}

pub fn save_classifier(clf: &Classifier, path: &Path) -> Result<()> {
    fs::write(path, classifier_bytes(clf)?)?;
    Ok(())
}

// ---------------------------------------------------------------- reading

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(self.pos as u64, format!("file ends inside {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

/// Parses the container, returning the kind tag, the entry map, and the
/// file length (used as the blame offset for whole-file problems such as
/// missing entries).
fn parse(bytes: &[u8]) -> Result<(u8, EntryMap, u64)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "the magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, "not a model checkpoint: bad magic"));
    }
    let version_at = r.offset();
    let version = r.u32("the version")?;
    if version != VERSION {
        return Err(Error::format(version_at, format!("unsupported version {version}")));
    }
    let kind_at = r.offset();
    let kind = r.u8("the model kind")?;
    if kind > KIND_CLASSIFIER {
        return Err(Error::format(kind_at, format!("unknown model kind tag {kind}")));
    }
    let count = r.u32("the entry count")?;
    let mut map = EntryMap::new();
    for _ in 0..count {
        let entry_at = r.offset();
        let name_len = r.u16("an entry name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "an entry name")?)
            .map_err(|_| Error::format(entry_at, "entry name is not UTF-8"))?
            .to_string();
        let rank_at = r.offset();
        let rank = r.u8("an entry rank")? as usize;
        if rank > MAX_RANK {
            return Err(Error::format(rank_at, format!("entry {name:?} has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let dim_at = r.offset();
            let d = r.u64("an entry dimension")?;
            numel = numel
                .checked_mul(d)
                .filter(|&n| n <= MAX_ELEMENTS)
                .ok_or_else(|| {
                    Error::format(dim_at, format!("entry {name:?} is implausibly large"))
                })?;
            dims.push(d);
        }
        let payload_at = r.offset();
        let raw = r.take(numel as usize * 4, "an entry payload")?;
        let mut data = Vec::with_capacity(numel as usize);
        for (i, c) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(Error::format(
                    payload_at + 4 * i as u64,
                    format!("non-finite value in entry {name:?}"),
                ));
            }
            data.push(v);
        }
        if map.insert(name.clone(), Entry { dims, data, offset: entry_at }).is_some() {
            return Err(Error::format(entry_at, format!("duplicate entry {name:?}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.offset(), "trailing bytes after the last entry"));
    }
    Ok((kind, map, bytes.len() as u64))
}

fn take_entry(entries: &mut EntryMap, name: &str, end: u64) -> Result<Entry> {
    entries
        .remove(name)
        .ok_or_else(|| Error::format(end, format!("missing entry {name:?}")))
}

/// Reads a rank-0 entry holding a small non-negative integer.
fn take_meta_int(entries: &mut EntryMap, name: &str, end: u64) -> Result<u64> {
    let full = format!("meta.{name}");
    let e = take_entry(entries, &full, end)?;
    if !e.dims.is_empty() {
        return Err(Error::format(e.offset, format!("{full:?} must be rank 0")));
    }
    let v = e.data[0];
    if v < 0.0 || v.fract() != 0.0 || v >= MAX_EXACT_STEP as f32 {
        return Err(Error::format(e.offset, format!("{full:?} is not a small whole number")));
    }
    Ok(v as u64)
}

fn take_meta_norm(entries: &mut EntryMap, end: u64) -> Result<NormMode> {
    match take_meta_int(entries, "norm", end)? {
        0 => Ok(NormMode::Batch),
        1 => Ok(NormMode::Instance),
        n => Err(Error::format(end, format!("unknown normalization tag {n}"))),
    }
}

/// Overwrites every parameter of `params` with the stored entry under
/// `prefix`, enforcing the shape recorded by the network itself.
fn take_network(entries: &mut EntryMap, prefix: &str, params: &mut Params, end: u64) -> Result<()> {
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let full = format!("{prefix}.{name}");
        let e = take_entry(entries, &full, end)?;
        let shape: Vec<usize> = e.dims.iter().map(|&d| d as usize).collect();
        Tensor::new(&shape, e.data)
            .and_then(|t| params.set(name, t))
            .map_err(|err| Error::format(e.offset, format!("entry {full:?}: {err}")))?;
    }
    Ok(())
}

/// Collects the optional Adam triple for each parameter. A parameter either
/// has all three of `.m`, `.v`, `.t` or none of them.
fn take_opt_state(entries: &mut EntryMap, prefix: &str, params: &Params, end: u64) -> Result<OptState> {
    let mut opt = OptState::new();
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let full = format!("{prefix}.{name}");
        let keys = [format!("{full}.m"), format!("{full}.v"), format!("{full}.t")];
        let present = keys.iter().filter(|k| entries.contains_key(*k)).count();
        if present == 0 {
            continue;
        }
        if present != 3 {
            return Err(Error::format(end, format!("incomplete optimizer state for {full:?}")));
        }
        let numel = params.get(name)?.numel();
        let mut moments = Vec::new();
        for key in &keys[..2] {
            let e = take_entry(entries, key, end)?;
            if e.dims != [numel as u64] {
                return Err(Error::format(
                    e.offset,
                    format!("entry {key:?} does not match the parameter size"),
                ));
            }
            moments.push(e.data);
        }
        let te = take_entry(entries, &keys[2], end)?;
        if !te.dims.is_empty() {
            return Err(Error::format(te.offset, format!("entry {:?} must be rank 0", keys[2])));
        }
        let tv = te.data[0];
        if tv < 0.0 || tv.fract() != 0.0 || tv >= MAX_EXACT_STEP as f32 {
            return Err(Error::format(
                te.offset,
                format!("entry {:?} is not a whole step count", keys[2]),
            ));
        }
        let v = moments.pop().expect("two moment vectors were read");
        let m = moments.pop().expect("two moment vectors were read");
        opt.insert(name.clone(), AdamState { m, v, t: tv as u64 });
    }
    Ok(opt)
}

fn reject_leftovers(entries: &EntryMap) -> Result<()> {
    if let Some((name, e)) = entries.iter().next() {
        return Err(Error::format(e.offset, format!("unexpected entry {name:?}")));
    }
    Ok(())
}

struct ModelShape {
    image_size: usize,
    base_channels: usize,
    depth: usize,
    disc_levels: usize,
    norm: NormMode,
}

fn take_model_shape(entries: &mut EntryMap, end: u64) -> Result<ModelShape> {
    Ok(ModelShape {
        image_size: take_meta_int(entries, "image_size", end)? as usize,
        base_channels: take_meta_int(entries, "base_channels", end)? as usize,
        depth: take_meta_int(entries, "depth", end)? as usize,
        disc_levels: take_meta_int(entries, "disc_levels", end)? as usize,
        norm: take_meta_norm(entries, end)?,
    })
}

fn stored_generator(shape: &ModelShape, end: u64) -> Result<Generator> {
    let cfg = GeneratorConfig {
        image_size: shape.image_size,
        in_channels: 1,
        out_channels: 1,
        base_channels: shape.base_channels,
        depth: shape.depth,
        norm: shape.norm,
    };
    cfg.validate()
        .and_then(|_| Generator::new(cfg, 0))
        .map_err(|e| Error::format(end, format!("stored generator shape is invalid: {e}")))
}

fn stored_discriminator(shape: &ModelShape, in_channels: usize, end: u64) -> Result<Discriminator> {
    let cfg = DiscriminatorConfig {
        image_size: shape.image_size,
        in_channels,
        base_channels: shape.base_channels,
        levels: shape.disc_levels,
        norm: shape.norm,
    };
    cfg.validate()
        .and_then(|_| Discriminator::new(cfg, 0))
        .map_err(|e| Error::format(end, format!("stored discriminator shape is invalid: {e}")))
}

fn assemble_paired(mut entries: EntryMap, end: u64) -> Result<PairedModel> {
    let shape = take_model_shape(&mut entries, end)?;
    let mut gen = stored_generator(&shape, end)?;
    let mut disc = stored_discriminator(&shape, 2, end)?;
    take_network(&mut entries, "gen", &mut gen.params, end)?;
    take_network(&mut entries, "disc", &mut disc.params, end)?;
    let gen_opt = take_opt_state(&mut entries, "gen", &gen.params, end)?;
    let disc_opt = take_opt_state(&mut entries, "disc", &disc.params, end)?;
    reject_leftovers(&entries)?;
    Ok(PairedModel { gen, disc, gen_opt, disc_opt })
}

fn assemble_unpaired(mut entries: EntryMap, end: u64) -> Result<UnpairedModel> {
    let shape = take_model_shape(&mut entries, end)?;
    let mut gen_ab = stored_generator(&shape, end)?;
    let mut gen_ba = stored_generator(&shape, end)?;
    let mut disc_a = stored_discriminator(&shape, 1, end)?;
    let mut disc_b = stored_discriminator(&shape, 1, end)?;
    take_network(&mut entries, "gen_ab", &mut gen_ab.params, end)?;
    take_network(&mut entries, "gen_ba", &mut gen_ba.params, end)?;
    take_network(&mut entries, "disc_a", &mut disc_a.params, end)?;
    take_network(&mut entries, "disc_b", &mut disc_b.params, end)?;
    let gen_ab_opt = take_opt_state(&mut entries, "gen_ab", &gen_ab.params, end)?;
    let gen_ba_opt = take_opt_state(&mut entries, "gen_ba", &gen_ba.params, end)?;
    let disc_a_opt = take_opt_state(&mut entries, "disc_a", &disc_a.params, end)?;
    let disc_b_opt = take_opt_state(&mut entries, "disc_b", &disc_b.params, end)?;
    reject_leftovers(&entries)?;
    Ok(UnpairedModel {
        gen_ab,
        gen_ba,
        disc_a,
        disc_b,
        gen_ab_opt,
        gen_ba_opt,
        disc_a_opt,
        disc_b_opt,
    })
}

fn assemble_classifier(mut entries: EntryMap, end: u64) -> Result<Classifier> {
    let cfg = ClassifierConfig {
        image_size: take_meta_int(&mut entries, "image_size", end)? as usize,
        base_channels: take_meta_int(&mut entries, "base_channels", end)? as usize,
    };
    let mut clf = cfg
        .validate()
        .and_then(|_| Classifier::new(cfg, 0))
        .map_err(|e| Error::format(end, format!("stored classifier shape is invalid: {e}")))?;
    take_network(&mut entries, "clf", &mut clf.params, end)?;
    reject_leftovers(&entries)?;
    Ok(clf)
}

/// Loads a translation model saved by [`save_paired`] or [`save_unpaired`].
pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path)?;
    let (kind, entries, end) = parse(&bytes)?;
    match kind {
        KIND_PAIRED => Ok(Model::Paired(assemble_paired(entries, end)?)),
        KIND_UNPAIRED => Ok(Model::Unpaired(assemble_unpaired(entries, end)?)),
        _ => Err(Error::Data(format!(
            "{} holds a classifier, not a translation model",
            path.display()
        ))),
    }
}

/// Loads a classifier saved by [`save_classifier`].
pub fn load_classifier(path: &Path) -> Result<Classifier> {
    let bytes = fs::read(path)?;
    let (kind, entries, end) = parse(&bytes)?;
    if kind != KIND_CLASSIFIER {
        return Err(Error::Data(format!(
            "{} holds a translation model, not a classifier",
            path.display()
        )));
    }
    assemble_classifier(entries, end)
}

//! Binary containers, all little-endian.
//!
//! * Dataset dump (`BEMD`): magic, version `u32`, `C`, `H`, `W` as `u32`,
//!   `C` per-class counts as `u32`, then `N = sum(counts)` images as
//!   row-major `[H][W][3]` `f32` pixels, then `N` labels as `u32`.
//! * Checkpoint (`BEMC`): magic, version `u32`, section count `u32`, then
//!   per section a `u32` name length, the UTF-8 name, a `u64` payload length
//!   and the payload.

use std::collections::BTreeMap;
use std::path::Path;

use bem_core::balance::ClassBalanceState;
use bem_core::evalkit::LossBreakdown;
use bem_core::learner::{EpochSampler, TrainState, Window};
use bem_core::mixbank::{BankEntry, MixBank};
use bem_core::synthdata::LabeledSet;
use bem_core::tinynn::{BackboneConfig, BackboneParams, LrSchedule, OptimizerState};
use bem_core::{Image, Origin};

use crate::error::{CliError, CliResult};

pub const DATASET_MAGIC: &[u8; 4] = b"BEMD";
pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BEMC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Little-endian byte sink.
#[derive(Default)]
pub struct Encoder {
    pub bytes: Vec<u8>,
}

impl Encoder {
    pub fn u8(&mut self, v: u8) {
        self.bytes.push(v);
    }
    pub fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }
    pub fn u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    pub fn f32(&mut self, v: f32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32s(&mut self, v: &[f32]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f32(x));
    }
    pub fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    pub fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.usize(x));
    }
    pub fn bools(&mut self, v: &[bool]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.bool(x));
    }
}

/// Little-endian byte source; every read is bounds-checked.
pub struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Decoder { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.remaining() < n {
            return Err(format!("truncated: need {n} bytes at offset {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    pub fn bool(&mut self) -> Result<bool, String> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(format!("invalid boolean byte {v}")),
        }
    }
    pub fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    pub fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    pub fn usize(&mut self) -> Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|_| "length overflows usize".to_string())
    }
    pub fn f32(&mut self) -> Result<f32, String> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    pub fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    /// Length prefix of a list whose elements take at least `elem` bytes.
    fn len(&mut self, elem: usize) -> Result<usize, String> {
        let n = self.usize()?;
        if n.saturating_mul(elem) > self.remaining() {
            return Err(format!("list of {n} elements exceeds the remaining data"));
        }
        Ok(n)
    }
    pub fn f32s(&mut self) -> Result<Vec<f32>, String> {
        let n = self.len(4)?;
        (0..n).map(|_| self.f32()).collect()
    }
    pub fn f64s(&mut self) -> Result<Vec<f64>, String> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    pub fn usizes(&mut self) -> Result<Vec<usize>, String> {
        let n = self.len(8)?;
        (0..n).map(|_| self.usize()).collect()
    }
    pub fn bools(&mut self) -> Result<Vec<bool>, String> {
        let n = self.len(1)?;
        (0..n).map(|_| self.bool()).collect()
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

// ---------------------------------------------------------------- datasets

pub fn encode_dataset(set: &LabeledSet) -> CliResult<Vec<u8>> {
    let (h, w) = set
        .images
        .first()
        .map_or((0, 0), |im| (im.height, im.width));
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by_key(|&i| set.labels[i]);
    let mut e = Encoder::default();
    e.bytes.extend_from_slice(DATASET_MAGIC);
    e.u32(DATASET_VERSION);
    e.u32(set.num_classes as u32);
    e.u32(h as u32);
    e.u32(w as u32);
    for n in set.class_counts() {
        e.u32(n as u32);
    }
    for &i in &order {
        let im = &set.images[i];
        if im.channels != 3 || im.height != h || im.width != w {
            return Err(CliError::format(
                "<dataset>",
                "dataset dumps need 3-channel images of one size",
            ));
        }
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    e.f32(im.get(c, y, x));
                }
            }
        }
    }
    for &i in &order {
        e.u32(set.labels[i] as u32);
    }
    Ok(e.bytes)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledSet, String> {
    let mut d = Decoder::new(bytes);
    if d.take(4)? != DATASET_MAGIC {
        return Err("not a BEMD dataset (bad magic)".into());
    }
    let version = d.u32()?;
    if version != DATASET_VERSION {
        return Err(format!("unsupported dataset version {version}"));
    }
    let classes = d.u32()? as usize;
    let h = d.u32()? as usize;
    let w = d.u32()? as usize;
    let counts: Vec<usize> = (0..classes)
        .map(|_| d.u32().map(|v| v as usize))
        .collect::<Result<_, _>>()?;
    let n: usize = counts.iter().sum();
    if n.saturating_mul(h * w * 3 * 4 + 4) != d.remaining() {
        return Err(format!("payload size does not match {n} images of {h}x{w}"));
    }
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let mut im = Image::new(3, h, w);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    im.set(c, y, x, d.f32()?);
                }
            }
        }
        images.push(im);
    }
    let labels: Vec<usize> = (0..n)
        .map(|_| d.u32().map(|v| v as usize))
        .collect::<Result<_, _>>()?;
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(format!("label {bad} out of range for {classes} classes"));
    }
    let set = LabeledSet {
        num_classes: classes,
        images,
        labels,
    };
    if set.class_counts() != counts {
        return Err("labels disagree with the header counts".into());
    }
    Ok(set)
}

pub fn save_dataset(path: &Path, set: &LabeledSet) -> CliResult<()> {
    let bytes = encode_dataset(set)
        .map_err(|_| CliError::format(path, "dataset dumps need 3-channel images of one size"))?;
    write_file(path, &bytes)
}

pub fn load_dataset(path: &Path) -> CliResult<LabeledSet> {
    decode_dataset(&read_file(path)?).map_err(|m| CliError::format(path, m))
}

// ------------------------------------------------------------- checkpoints

/// Ordered named sections of a checkpoint.
pub type Sections = BTreeMap<String, Vec<u8>>;

pub fn encode_sections(sections: &[(&str, Vec<u8>)]) -> Vec<u8> {
    let mut e = Encoder::default();
    e.bytes.extend_from_slice(CHECKPOINT_MAGIC);
    e.u32(CHECKPOINT_VERSION);
    e.u32(sections.len() as u32);
    for (name, payload) in sections {
        e.u32(name.len() as u32);
        e.bytes.extend_from_slice(name.as_bytes());
        e.u64(payload.len() as u64);
        e.bytes.extend_from_slice(payload);
    }
    e.bytes
}

pub fn decode_sections(bytes: &[u8]) -> Result<Sections, String> {
    let mut d = Decoder::new(bytes);
    if d.take(4)? != CHECKPOINT_MAGIC {
        return Err("not a BEMC checkpoint (bad magic)".into());
    }
    let version = d.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = d.u32()?;
    let mut sections = Sections::new();
    for _ in 0..count {
        let n = d.u32()? as usize;
        let name =
            String::from_utf8(d.take(n)?.to_vec()).map_err(|_| "section name is not UTF-8")?;
        let len = d.usize()?;
        let payload = d.take(len)?.to_vec();
        if sections.insert(name.clone(), payload).is_some() {
            return Err(format!("duplicate section `{name}`"));
        }
    }
    if d.remaining() != 0 {
        return Err(format!("{} trailing bytes", d.remaining()));
    }
    Ok(sections)
}

fn encode_backbone(e: &mut Encoder, p: &BackboneParams) {
    let c = &p.config;
    e.usize(c.in_channels);
    e.usize(c.image_size);
    c.widths.iter().for_each(|&v| e.usize(v));
    c.strides.iter().for_each(|&v| e.usize(v));
    e.usize(c.num_classes);
    for (_, t) in p.tensors() {
        e.f32s(t);
    }
}

fn decode_backbone(d: &mut Decoder<'_>) -> Result<BackboneParams, String> {
    let in_channels = d.usize()?;
    let image_size = d.usize()?;
    let widths = [d.usize()?, d.usize()?, d.usize()?];
    let strides = [d.usize()?, d.usize()?, d.usize()?];
    let num_classes = d.usize()?;
    let config = BackboneConfig {
        in_channels,
        image_size,
        widths,
        strides,
        num_classes,
    };
    if widths.iter().chain(&strides).any(|&v| v == 0) || image_size == 0 || in_channels == 0 {
        return Err("degenerate backbone geometry".into());
    }
    let mut p = BackboneParams::zeros(config);
    for (name, t) in p.tensors_mut() {
        let v = d.f32s()?;
        if v.len() != t.len() {
            return Err(format!(
                "tensor {name}: {} values, expected {}",
                v.len(),
                t.len()
            ));
        }
        t.copy_from_slice(&v);
    }
    Ok(p)
}

fn encode_balance(e: &mut Encoder, b: &ClassBalanceState) {
    e.usizes(&b.labeled_counts);
    e.usize(b.unlabeled_total);
    e.f64s(&b.d_u);
    e.bool(b.d_initialized);
    e.f64s(&b.e_x);
    e.f64s(&b.e_u);
    e.bools(&b.e_x_initialized);
    e.bools(&b.e_u_initialized);
    e.f64(b.tau_e);
    e.bool(b.tau_initialized);
}

fn decode_balance(d: &mut Decoder<'_>) -> Result<ClassBalanceState, String> {
    let b = ClassBalanceState {
        labeled_counts: d.usizes()?,
        unlabeled_total: d.usize()?,
        d_u: d.f64s()?,
        d_initialized: d.bool()?,
        e_x: d.f64s()?,
        e_u: d.f64s()?,
        e_x_initialized: d.bools()?,
        e_u_initialized: d.bools()?,
        tau_e: d.f64()?,
        tau_initialized: d.bool()?,
    };
    let c = b.labeled_counts.len();
    if [
        b.d_u.len(),
        b.e_x.len(),
        b.e_u.len(),
        b.e_x_initialized.len(),
        b.e_u_initialized.len(),
    ]
    .iter()
    .any(|&n| n != c)
    {
        return Err("balance arrays disagree on the class count".into());
    }
    Ok(b)
}

fn encode_bank(e: &mut Encoder, bank: &MixBank) {
    e.usize(bank.capacity);
    e.usize(bank.num_classes());
    for origin in [Origin::Labeled, Origin::Unlabeled] {
        for bucket in bank.buckets(origin) {
            e.usize(bucket.len());
            for entry in bucket {
                e.usize(entry.class);
                e.f32(entry.confidence);
                e.usize(entry.image.channels);
                e.usize(entry.image.height);
                e.usize(entry.image.width);
                e.f32s(&entry.image.data);
            }
        }
    }
}

fn decode_bank(d: &mut Decoder<'_>) -> Result<MixBank, String> {
    let capacity = d.usize()?;
    let classes = d.usize()?;
    if classes > 1 << 16 {
        return Err(format!("implausible class count {classes}"));
    }
    let mut bank = MixBank::new(classes, capacity);
    for origin in [Origin::Labeled, Origin::Unlabeled] {
        for _ in 0..classes {
            let n = d.usize()?;
            if n > capacity {
                return Err(format!("bucket of {n} entries exceeds capacity {capacity}"));
            }
            for _ in 0..n {
                let class = d.usize()?;
                let confidence = d.f32()?;
                let (channels, height, width) = (d.usize()?, d.usize()?, d.usize()?);
                let data = d.f32s()?;
                if channels
                    .checked_mul(height)
                    .and_then(|v| v.checked_mul(width))
                    != Some(data.len())
                {
                    return Err("bank image size mismatch".into());
                }
                let image = Image {
                    channels,
                    height,
                    width,
                    data,
                };
                bank.push(
                    BankEntry {
                        image,
                        class,
                        confidence,
                    },
                    origin,
                )
                .map_err(|e| e.to_string())?;
            }
        }
    }
    Ok(bank)
}

fn encode_sampler(e: &mut Encoder, s: &EpochSampler) {
    e.usize(s.len);
    e.u64(s.seed);
    e.u64(s.epoch);
    e.usize(s.cursor);
}

fn decode_sampler(d: &mut Decoder<'_>) -> Result<EpochSampler, String> {
    let (len, seed, epoch, cursor) = (d.usize()?, d.u64()?, d.u64()?, d.usize()?);
    if cursor > len {
        return Err(format!("sampler cursor {cursor} beyond length {len}"));
    }
    Ok(EpochSampler::restore(len, seed, epoch, cursor))
}

fn encode_loss(e: &mut Encoder, l: &LossBreakdown) {
    for v in [l.l_s, l.l_u_h, l.l_u_l, l.l_us_h, l.l_us_l, l.lambda] {
        e.f64(v);
    }
    e.usize(l.batch);
    e.f64(l.total);
}

fn decode_loss(d: &mut Decoder<'_>) -> Result<LossBreakdown, String> {
    Ok(LossBreakdown {
        l_s: d.f64()?,
        l_u_h: d.f64()?,
        l_u_l: d.f64()?,
        l_us_h: d.f64()?,
        l_us_l: d.f64()?,
        lambda: d.f64()?,
        batch: d.usize()?,
        total: d.f64()?,
    })
}

fn encode_window(e: &mut Encoder, w: &Window) {
    e.usize(w.steps);
    e.usize(w.samples);
    e.f64(w.entropy_sum);
    e.usize(w.low_entropy);
    e.usize(w.confident);
    e.f64(w.lambda_sum);
    e.usizes(&w.pseudo_counts);
    encode_loss(e, &w.last_loss);
    e.f32(w.last_lr);
}

fn decode_window(d: &mut Decoder<'_>) -> Result<Window, String> {
    Ok(Window {
        steps: d.usize()?,
        samples: d.usize()?,
        entropy_sum: d.f64()?,
        low_entropy: d.usize()?,
        confident: d.usize()?,
        lambda_sum: d.f64()?,
        pseudo_counts: d.usizes()?,
        last_loss: decode_loss(d)?,
        last_lr: d.f32()?,
    })
}

/// Checkpoint bytes of a training state plus the manifest text it belongs to.
pub fn encode_checkpoint(state: &TrainState, manifest_text: &str) -> Vec<u8> {
    let section = |f: &dyn Fn(&mut Encoder)| {
        let mut e = Encoder::default();
        f(&mut e);
        e.bytes
    };
    let opt = &state.opt;
    encode_sections(&[
        ("manifest", manifest_text.as_bytes().to_vec()),
        ("params", section(&|e| encode_backbone(e, &state.params))),
        (
            "optimizer",
            section(&|e| {
                encode_backbone(e, &opt.velocity);
                e.f32(opt.base_lr);
                e.f32(opt.momentum);
                e.usize(opt.iteration);
                e.usize(opt.total);
                e.u8(match opt.schedule {
                    LrSchedule::Cosine => 0,
                    LrSchedule::Constant => 1,
                });
            }),
        ),
        ("balance", section(&|e| encode_balance(e, &state.balance))),
        ("bank", section(&|e| encode_bank(e, &state.bank))),
        (
            "progress",
            section(&|e| {
                encode_sampler(e, &state.labeled_order);
                encode_sampler(e, &state.unlabeled_order);
                e.usize(state.iteration);
                encode_window(e, &state.window);
            }),
        ),
    ])
}

/// Decodes a checkpoint into the training state and the manifest text.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(TrainState, String), String> {
    let sections = decode_sections(bytes)?;
    let get = |name: &str| {
        sections
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| format!("missing section `{name}`"))
    };
    let finish = |d: Decoder<'_>, name: &str| {
        if d.remaining() == 0 {
            Ok(())
        } else {
            Err(format!(
                "section `{name}` has {} trailing bytes",
                d.remaining()
            ))
        }
    };
    let manifest =
        String::from_utf8(get("manifest")?.to_vec()).map_err(|_| "manifest is not UTF-8")?;

    let mut d = Decoder::new(get("params")?);
    let params = decode_backbone(&mut d)?;
    finish(d, "params")?;

    let mut d = Decoder::new(get("optimizer")?);
    let velocity = decode_backbone(&mut d)?;
    let opt = OptimizerState {
        velocity,
        base_lr: d.f32()?,
        momentum: d.f32()?,
        iteration: d.usize()?,
        total: d.usize()?,
        schedule: match d.u8()? {
            0 => LrSchedule::Cosine,
            1 => LrSchedule::Constant,
            v => return Err(format!("unknown schedule tag {v}")),
        },
    };
    finish(d, "optimizer")?;
    if opt.velocity.config != params.config {
        return Err("momentum buffers do not match the parameters".into());
    }

    let mut d = Decoder::new(get("balance")?);
    let balance = decode_balance(&mut d)?;
    finish(d, "balance")?;

    let mut d = Decoder::new(get("bank")?);
    let bank = decode_bank(&mut d)?;
    finish(d, "bank")?;

    let mut d = Decoder::new(get("progress")?);
    let labeled_order = decode_sampler(&mut d)?;
    let unlabeled_order = decode_sampler(&mut d)?;
    let iteration = d.usize()?;
    let window = decode_window(&mut d)?;
    finish(d, "progress")?;

    Ok((
        TrainState {
            params,
            opt,
            balance,
            bank,
            labeled_order,
            unlabeled_order,
            iteration,
            window,
        },
        manifest,
    ))
}

pub fn save_checkpoint(path: &Path, state: &TrainState, manifest_text: &str) -> CliResult<()> {
    write_file(path, &encode_checkpoint(state, manifest_text))
}

pub fn load_checkpoint(path: &Path) -> CliResult<(TrainState, String)> {
    decode_checkpoint(&read_file(path)?).map_err(|m| CliError::format(path, m))
}

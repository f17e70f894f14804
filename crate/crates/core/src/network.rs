//! End-to-end enhancement network: encoder, transformer blocks, decoder.
//!
//! The encoder lifts the `2M`-channel RI spectrogram to `C` channels with a
//! 3×3 conv and LN, then shrinks it to `D` with a 2D split dense block. Each
//! block runs an F-transformer then a T-transformer. The decoder maps `D` to
//! `2G` with a size-preserving 3×3 transposed conv and compresses to the two
//! RI planes with a second split dense block whose last conv is linear.
//!
//! Model files are little-endian:
//!
//! ```text
//! b"DFT2MODL" | version: u32 | config_len: u32 | config text
//!   | count: u32 | count × (name_len: u32 | name | golden tensor)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::audio::{istft, normalize_variance, stft, AudioClip};
use crate::autodiff::{Tape, Var};
use crate::config::{Dense2dKind, ModelConfig};
use crate::error::{Error, Result};
use crate::layers::{ChannelNorm, Conv2d, ConvNormAct, Dims, TransposedConv2d};
use crate::mac;
use crate::params::{Bound, ParamBuilder, ParamRole, ParamStore};
use crate::sdb::{Sdb, SdbConfig};
use crate::tensor::{read_exact, Scalar, Tensor};
use crate::transformer::{AttnConfig, FfwConfig, SeqAxis, Transformer, TransformerConfig};

pub const MODEL_MAGIC: &[u8; 8] = b"DFT2MODL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone)]
enum Block2d {
    Split(Sdb),
    Conv(ConvNormAct),
}

impl Block2d {
    fn new(b: &mut ParamBuilder, name: &str, kind: Dense2dKind, cfg: SdbConfig, linear_tail: bool) -> Result<Self> {
        Ok(match kind {
            Dense2dKind::Split => Block2d::Split(Sdb::new(b, name, cfg, linear_tail)?),
            Dense2dKind::Conv => Block2d::Conv(ConvNormAct::new(
                b,
                name,
                Dims::Two,
                cfg.channels,
                cfg.sub_channels(),
                cfg.kernel,
                !linear_tail,
            )),
        })
    }

    fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let _s = mac::scope("sdb");
        match self {
            Block2d::Split(s) => s.forward(p, x),
            Block2d::Conv(c) => c.forward(p, x),
        }
    }
}

/// One stacked pair of F- and T-transformers.
#[derive(Debug, Clone)]
pub struct Block {
    pub freq: Transformer,
    pub time: Transformer,
}

#[derive(Debug, Clone)]
pub struct Architecture {
    up: Conv2d,
    up_norm: ChannelNorm,
    encoder: Block2d,
    pub blocks: Vec<Block>,
    down: TransposedConv2d,
    decoder: Block2d,
}

pub fn transformer_config(cfg: &ModelConfig, block: usize) -> TransformerConfig {
    TransformerConfig {
        channels: cfg.sub_channels,
        groups: cfg.groups,
        unfold: cfg.unfold_kernel,
        kernel: cfg.kernel,
        dense: cfg.dense1d,
        attn: AttnConfig {
            channels: cfg.sub_channels,
            heads: cfg.heads,
            kernel: cfg.kernel,
            kind: cfg.attention,
            dropout: cfg.dropout,
        },
        ffw: FfwConfig {
            channels: cfg.sub_channels,
            kernel: cfg.ffw_kernel,
            dilation: 1 << block,
            kind: cfg.ffw,
            dropout: cfg.dropout,
        },
    }
}

impl Architecture {
    fn build(b: &mut ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        let (c, g, d, k) = (cfg.channels, cfg.groups, cfg.sub_channels, cfg.kernel);
        let (up, up_norm, encoder) = b.scoped("encoder", |b| -> Result<_> {
            let up = Conv2d::new(b, "up", 2 * cfg.mics, c, 3, false);
            let norm = ChannelNorm::new(b, "up_norm", c, 0);
            let enc = Block2d::new(b, "sdb", cfg.dense2d, SdbConfig::new(g, c, k, Dims::Two), false)?;
            Ok((up, norm, enc))
        })?;
        let blocks = (0..cfg.blocks)
            .map(|i| {
                b.scoped(format!("block{i}"), |b| {
                    let tc = transformer_config(cfg, i);
                    Ok(Block {
                        freq: Transformer::new(b, "f", SeqAxis::Freq, tc)?,
                        time: Transformer::new(b, "t", SeqAxis::Time, tc)?,
                    })
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (down, decoder) = b.scoped("decoder", |b| -> Result<_> {
            let down = TransposedConv2d::new(b, "down", d, 2 * g, 3);
            let dec = Block2d::new(b, "sdb", cfg.dense2d, SdbConfig::new(g, 2 * g, k, Dims::Two), true)?;
            Ok((down, dec))
        })?;
        Ok(Self {
            up,
            up_norm,
            encoder,
            blocks,
            down,
            decoder,
        })
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let mut h = {
            let _s = mac::scope("encoder");
            let h = self.up_norm.forward(p, &self.up.forward(p, x)?)?;
            self.encoder.forward(p, &h)?
        };
        for (i, block) in self.blocks.iter().enumerate() {
            let _s = mac::scope(format!("block{i}"));
            h = block.freq.forward(p, &h)?;
            h = block.time.forward(p, &h)?;
        }
        let _s = mac::scope("decoder");
        let h = {
            let _u = mac::scope("down");
            self.down.forward(p, &h)?
        };
        self.decoder.forward(p, &h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub kernels: usize,
    pub biases: usize,
    pub norms: usize,
    pub slopes: usize,
}

#[derive(Debug, Clone)]
pub struct Network<S: Scalar = f32> {
    cfg: ModelConfig,
    arch: Architecture,
    params: ParamStore<S>,
}

impl<S: Scalar> Network<S> {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut b = ParamBuilder::new(seed);
        let arch = Architecture::build(&mut b, cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            arch,
            params: b.finish().cast(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn cast<T: Scalar>(&self) -> Network<T> {
        Network {
            cfg: self.cfg.clone(),
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    pub fn count_params(&self) -> ParamCount {
        let p = &self.params;
        ParamCount {
            total: p.count(),
            kernels: p.count_role(ParamRole::Kernel),
            biases: p.count_role(ParamRole::Bias),
            norms: p.count_role(ParamRole::NormScale) + p.count_role(ParamRole::NormShift),
            slopes: p.count_role(ParamRole::Slope),
        }
    }

    /// `[2M, T, F] -> [2, T, F]` on bound parameters.
    pub fn forward<'t>(&self, p: &Bound<'t, S>, spec: &Var<'t, S>) -> Result<Var<'t, S>> {
        let m2 = 2 * self.cfg.mics;
        if spec.shape().first() != Some(&m2) || spec.shape().len() != 3 {
            return Err(Error::Shape {
                op: "network",
                detail: format!("expected [{m2}, T, F], got {:?}", spec.shape()),
            });
        }
        self.arch.forward(p, spec)
    }

    /// Forward pass on a spectrogram without recording.
    pub fn infer(&self, spec: &Tensor<S>) -> Result<Tensor<S>> {
        let tape = Tape::inference();
        let p = self.params.bind(&tape);
        let y = self.forward(&p, &tape.constant(spec.clone()))?;
        Ok(y.value().clone())
    }

    fn check_clip(&self, clip: &AudioClip) -> Result<()> {
        if clip.channels() != self.cfg.mics {
            return Err(Error::InvalidArgument(format!(
                "channel mismatch: clip has {} channels, model expects {}",
                clip.channels(),
                self.cfg.mics
            )));
        }
        if clip.sample_rate != self.cfg.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "sample rate {} Hz, model expects {} Hz",
                clip.sample_rate, self.cfg.sample_rate
            )));
        }
        Ok(())
    }

    /// Full pipeline: normalize, STFT, network, iSTFT, de-normalize.
    /// Output is mono with the input's length.
    pub fn enhance(&self, clip: &AudioClip) -> Result<AudioClip> {
        self.check_clip(clip)?;
        let n = clip.len();
        self.cfg.stft().frames(n)?;
        let (normed, scale) = match normalize_variance(clip) {
            Ok(v) => v,
            // silence stays silence
            Err(Error::InvalidArgument(_)) => (clip.clone(), 1.0),
            Err(e) => return Err(e),
        };
        let spec = stft(&normed, self.cfg.stft())?;
        let est = self.infer(&spec.ri.cast())?;
        let wave = istft(&est.cast(), self.cfg.stft(), n)?;
        let out: Vec<f64> = wave.iter().map(|v| v / scale).collect();
        AudioClip::new(Tensor::new(&[1, n], out)?, clip.sample_rate)
    }

    /// Key-value attention map `[D, D]` of one head, for folded sequence
    /// `seq` (a frame for the F-transformer, a bin for the T-transformer).
    pub fn attention_map(
        &self,
        clip: &AudioClip,
        block: usize,
        axis: SeqAxis,
        head: usize,
        seq: usize,
    ) -> Result<Tensor<S>> {
        self.check_clip(clip)?;
        if block >= self.arch.blocks.len() || head >= self.cfg.heads {
            return Err(Error::InvalidArgument(format!(
                "block {block} / head {head} out of range ({} blocks, {} heads)",
                self.arch.blocks.len(),
                self.cfg.heads
            )));
        }
        let (normed, _) = normalize_variance(clip)?;
        let spec = stft(&normed, self.cfg.stft())?;
        let tape = Tape::inference();
        let p = self.params.bind(&tape);
        let x = tape.constant(spec.ri.cast());
        let arch = &self.arch;
        let mut h = arch.up_norm.forward(&p, &arch.up.forward(&p, &x)?)?;
        h = arch.encoder.forward(&p, &h)?;
        for b in &arch.blocks[..block] {
            h = b.time.forward(&p, &b.freq.forward(&p, &h)?)?;
        }
        let target = &arch.blocks[block];
        if axis == SeqAxis::Time {
            h = target.freq.forward(&p, &h)?;
        }
        let tr = match axis {
            SeqAxis::Freq => &target.freq,
            SeqAxis::Time => &target.time,
        };
        let maps = tr.attention_maps(&p, &h)?;
        let [bh, d, _] = *maps.shape() else { unreachable!() };
        let batch = bh / self.cfg.heads;
        if seq >= batch {
            return Err(Error::InvalidArgument(format!("sequence {seq} out of range ({batch})")));
        }
        let idx = seq * self.cfg.heads + head;
        Tensor::new(&[d, d], maps.data()[idx * d * d..][..d * d].to_vec())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        let text = self.cfg.to_text();
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        let params = self.params.params();
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for p in params {
            w.write_all(&(p.name.len() as u32).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            p.value.write_dump(&mut w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "model magic")?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = read_u32(&mut r, "version")?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("model version {version}, expected {MODEL_VERSION}")));
        }
        let text = read_string(&mut r, "config")?;
        let cfg = ModelConfig::parse(&text)?;
        let mut net = Self::build(&cfg, 0)?;
        let count = read_u32(&mut r, "layer count")? as usize;
        if count != net.params.len() {
            return Err(Error::Format(format!(
                "file has {count} tensors, config implies {}",
                net.params.len()
            )));
        }
        for _ in 0..count {
            let name = read_string(&mut r, "tensor name")?;
            let t = Tensor::<f32>::read_dump(&mut r)?;
            let id = net
                .params
                .find(&name)
                .ok_or_else(|| Error::Format(format!("unexpected tensor {name:?}")))?;
            net.params
                .set(id, t.cast())
                .map_err(|e| Error::Format(format!("{e}")))?;
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Loads and insists the stored config equals `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let net = Self::load(path)?;
        if net.cfg != *expected {
            let diff: Vec<String> = crate::config::KEYS
                .iter()
                .filter(|k| net.cfg.get(k) != expected.get(k))
                .map(|k| format!("{k}: file {} vs expected {}", net.cfg.get(k).unwrap(), expected.get(k).unwrap()))
                .collect();
            return Err(Error::Config(format!("model config mismatch ({})", diff.join(", "))));
        }
        Ok(net)
    }

    /// Writes every parameter as a golden tensor file plus `manifest.txt`
    /// listing `name file` lines in layer order.
    pub fn export_weights(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (i, p) in self.params.params().iter().enumerate() {
            let file = format!("{i:04}.dft2");
            p.value.write_dump(BufWriter::new(File::create(dir.join(&file))?))?;
            manifest.push_str(&format!("{} {file}\n", p.name));
        }
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn import_weights(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
        for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
            let (name, file) = line
                .split_once(' ')
                .ok_or_else(|| Error::Format(format!("bad manifest line {line:?}")))?;
            let id = self
                .params
                .find(name)
                .ok_or_else(|| Error::Format(format!("unknown layer {name:?}")))?;
            let t = Tensor::<f32>::read_dump(BufReader::new(File::open(dir.join(file))?))?;
            self.params.set(id, t.cast())?;
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = read_u32(r, what)? as usize;
    if len > 1 << 20 {
        return Err(Error::Format(format!("{what} length {len} is implausible")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf, what)?;
    String::from_utf8(buf).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
}

//! Binary checkpoints.
//!
//! Layout: `GSDF`, u32 version, then sections of `tag[4] | u64 length |
//! payload`, then a CRC32 of everything before it. All integers and floats
//! are little-endian.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DensifyStats, DirectModel, Model, ModelKind, MomentGroup, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::scaffold::{param_count, AnchorSet, DecoderBank, Mlp, ScaffoldModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GSDF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: TrainConfig,
    iteration: u64,
    scene_scale: f64,
    voxel_size: f64,
    image_count: usize,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn section(&mut self, tag: &[u8; 4], payload: Vec<u8>) {
        self.buf.extend_from_slice(tag);
        self.buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(&payload);
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_u32s(out: &mut Vec<u8>, v: &[u32]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn arrays(vs: &[&Vec<f64>]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in vs {
        put_f64s(&mut out, v);
    }
    out
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let mut w = Writer {
        buf: CHECKPOINT_MAGIC.to_vec(),
    };
    w.buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let image_count = match &trainer.model {
        Model::Scaffold(s) => s.decoders.image_count(),
        Model::Direct(_) => 0,
    };
    let meta = Meta {
        config: trainer.config.clone(),
        iteration: trainer.iteration,
        scene_scale: trainer.scene_scale,
        voxel_size: trainer.voxel_size,
        image_count,
    };
    w.section(b"META", serde_json::to_vec(&meta)?);
    let groups = trainer.model.groups();
    match &trainer.model {
        Model::Direct(_) => w.section(b"GAUS", arrays(&groups)),
        Model::Scaffold(_) => {
            w.section(b"ANCH", arrays(&groups[..4]));
            w.section(b"DECO", arrays(&groups[4..7]));
            w.section(b"EMBD", arrays(&groups[7..]));
        }
    }
    let mut optm = Vec::new();
    optm.extend_from_slice(&(trainer.moments.len() as u64).to_le_bytes());
    for m in &trainer.moments {
        optm.extend_from_slice(&m.step.to_le_bytes());
        put_f64s(&mut optm, &m.m);
        put_f64s(&mut optm, &m.v);
    }
    w.section(b"OPTM", optm);
    let mut rngs = trainer.rng.get_seed().to_vec();
    rngs.extend_from_slice(&trainer.rng.get_stream().to_le_bytes());
    rngs.extend_from_slice(&trainer.rng.get_word_pos().to_le_bytes());
    w.section(b"RNGS", rngs);
    let s = &trainer.stats;
    let mut stat = Vec::new();
    put_f64s(&mut stat, &s.grad_sum);
    put_u32s(&mut stat, &s.hits);
    put_f64s(&mut stat, &s.opacity_sum);
    put_u32s(&mut stat, &s.opacity_count);
    w.section(b"STAT", stat);
    let crc = crc32fast::hash(&w.buf);
    w.buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, w.buf)?;
    Ok(())
}

fn ck_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        offset,
        msg: msg.into(),
    }
}

/// Cursor over a byte slice that reports absolute offsets on failure.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(ck_err(self.base + self.pos, format!("truncated: need {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, elem: usize) -> Result<usize> {
        let at = self.base + self.pos;
        let n = self.u64()? as usize;
        if n.checked_mul(elem).is_none_or(|b| b > self.bytes.len() - self.pos) {
            return Err(ck_err(at, format!("array length {n} exceeds the section")));
        }
        Ok(n)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.len(4)?;
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(ck_err(self.base + self.pos, "trailing bytes in section"));
        }
        Ok(())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 {
        return Err(ck_err(bytes.len(), "file too short"));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if &body[..4] != CHECKPOINT_MAGIC {
        return Err(ck_err(0, "bad magic"));
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ck_err(4, format!("unsupported version {version}")));
    }
    if crc32fast::hash(body) != stored {
        return Err(ck_err(body.len(), "checksum mismatch"));
    }

    let mut sections: Vec<([u8; 4], usize, &[u8])> = Vec::new();
    let mut r = Reader {
        bytes: body,
        pos: 8,
        base: 0,
    };
    while r.pos < body.len() {
        let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
        let len = r.u64()? as usize;
        let at = r.pos;
        sections.push((tag, at, r.take(len)?));
    }
    let section = |tag: &[u8; 4]| -> Result<Reader<'_>> {
        sections
            .iter()
            .find(|(t, _, _)| t == tag)
            .map(|(_, at, b)| Reader {
                bytes: b,
                pos: 0,
                base: *at,
            })
            .ok_or_else(|| ck_err(body.len(), format!("missing section {}", String::from_utf8_lossy(tag))))
    };

    let meta_r = section(b"META")?;
    let meta: Meta = serde_json::from_slice(meta_r.bytes).map_err(|e| ck_err(meta_r.base, format!("metadata: {e}")))?;
    let cfg = meta.config;

    let read_arrays = |tag: &[u8; 4], n: usize| -> Result<(Vec<Vec<f64>>, usize)> {
        let mut r = section(tag)?;
        let out = (0..n).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
        r.done()?;
        Ok((out, r.base))
    };
    let model = match cfg.model {
        ModelKind::Direct => {
            let (mut g, at) = read_arrays(b"GAUS", 5)?;
            let n = g[3].len();
            let sh_len = crate::geometry::sh_coeff_count(cfg.sh_degree);
            if g[0].len() != 3 * n || g[1].len() != 3 * n || g[2].len() != 4 * n || g[4].len() != sh_len * n {
                return Err(ck_err(at, "inconsistent Gaussian array sizes"));
            }
            let mut it = g.drain(..);
            Model::Direct(DirectModel {
                sh_degree: cfg.sh_degree,
                means: it.next().unwrap(),
                log_scales: it.next().unwrap(),
                rotations: it.next().unwrap(),
                opacity_logits: it.next().unwrap(),
                sh: it.next().unwrap(),
            })
        }
        ModelKind::Scaffold => {
            let sc = cfg.scaffold;
            let (mut a, at) = read_arrays(b"ANCH", 4)?;
            let n = a[0].len() / 3;
            let (k, f) = (sc.offsets_per_anchor, sc.feature_dim);
            if a[0].len() != 3 * n || a[1].len() != 3 * k * n || a[2].len() != f * n || a[3].len() != 3 * n {
                return Err(ck_err(at, "inconsistent anchor array sizes"));
            }
            let mut anchors = AnchorSet::new(k, f);
            anchors.log_scaling = a.pop().unwrap();
            anchors.features = a.pop().unwrap();
            anchors.offsets = a.pop().unwrap();
            anchors.positions = a.pop().unwrap();
            // Rebuild decoder shapes from a throwaway bank.
            let shape = DecoderBank::new(
                &sc,
                meta.image_count,
                &mut <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
            );
            let (d, at) = read_arrays(b"DECO", 3)?;
            let mlp = |template: &Mlp, p: Vec<f64>| -> Result<Mlp> {
                let sizes = template.sizes().to_vec();
                if p.len() != param_count(&sizes) {
                    return Err(ck_err(at, "decoder parameter count mismatch"));
                }
                Ok(Mlp::from_params(&sizes, p).expect("size checked"))
            };
            let mut d = d.into_iter();
            let opacity = mlp(&shape.opacity, d.next().unwrap())?;
            let color = mlp(&shape.color, d.next().unwrap())?;
            let scale_rot = mlp(&shape.scale_rot, d.next().unwrap())?;
            let (mut e, at) = read_arrays(b"EMBD", 1)?;
            let appearance = e.pop().unwrap();
            if appearance.len() != meta.image_count * sc.appearance_dim {
                return Err(ck_err(at, "appearance table size mismatch"));
            }
            Model::Scaffold(ScaffoldModel {
                config: sc,
                anchors,
                decoders: DecoderBank {
                    k,
                    appearance_dim: sc.appearance_dim,
                    opacity,
                    color,
                    scale_rot,
                    appearance,
                },
            })
        }
    };

    let mut r = section(b"OPTM")?;
    let count = r.u64()? as usize;
    let groups = model.groups();
    if count != groups.len() {
        return Err(ck_err(
            r.base,
            format!("expected {} optimizer groups, found {count}", groups.len()),
        ));
    }
    let mut moments = Vec::with_capacity(count);
    for g in &groups {
        let at = r.base + r.pos;
        let step = r.u64()?;
        let m = r.f64s()?;
        let v = r.f64s()?;
        if m.len() != g.len() || v.len() != g.len() {
            return Err(ck_err(at, "optimizer state does not match parameter shape"));
        }
        moments.push(MomentGroup { m, v, step });
    }
    r.done()?;

    let mut r = section(b"RNGS")?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    r.done()?;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let mut r = section(b"STAT")?;
    let stats = DensifyStats {
        grad_sum: r.f64s()?,
        hits: r.u32s()?,
        opacity_sum: r.f64s()?,
        opacity_count: r.u32s()?,
    };
    r.done()?;

    Ok(Trainer {
        config: cfg,
        model,
        moments,
        iteration: meta.iteration,
        rng,
        scene_scale: meta.scene_scale,
        voxel_size: meta.voxel_size,
        stats,
    })
}

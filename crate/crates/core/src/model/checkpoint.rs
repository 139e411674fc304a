use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, SpeechModel, HEAD_BIAS, HEAD_WEIGHT};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{AdamConfig, AdamState, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"CLSW";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Every parameter the configuration requires, with its shape. `labels`
/// adds the CTC output layer.
pub fn expected_shapes(cfg: &ModelConfig, labels: Option<usize>) -> Vec<(String, Vec<usize>)> {
    let d = cfg.model_dim;
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let mut push = |n: String, s: Vec<usize>| out.push((n, s));
    let mut cin = 1;
    for (i, l) in cfg.conv_spec.iter().enumerate() {
        push(format!("encoder.conv.{i}.weight"), vec![l.channels, cin, l.kernel]);
        push(format!("encoder.conv.{i}.bias"), vec![l.channels]);
        if i == 0 {
            push("encoder.norm0.gamma".into(), vec![l.channels]);
            push("encoder.norm0.beta".into(), vec![l.channels]);
        }
        cin = l.channels;
    }
    push("encoder.ln.gamma".into(), vec![cin]);
    push("encoder.ln.beta".into(), vec![cin]);
    push("encoder.proj.weight".into(), vec![cin, d]);
    push("encoder.proj.bias".into(), vec![d]);
    if cfg.learned_mask_emb {
        push("mask_emb".into(), vec![1, d]);
    }
    if cfg.num_blocks > 0 {
        push("context.pos_conv.weight".into(), vec![d, d, cfg.pos_conv_kernel]);
        push("context.pos_conv.bias".into(), vec![d]);
        let mut lin = |p: String, i: usize, o: usize| {
            push(format!("{p}.weight"), vec![i, o]);
            push(format!("{p}.bias"), vec![o]);
        };
        for b in 0..cfg.num_blocks {
            let p = format!("context.block.{b}");
            for w in ["q", "k", "v", "o"] {
                lin(format!("{p}.attn.{w}"), d, d);
            }
            lin(format!("{p}.ffn.fc1"), d, cfg.ffn_dim);
            lin(format!("{p}.ffn.fc2"), cfg.ffn_dim, d);
        }
        for b in 0..cfg.num_blocks {
            for ln in ["ln1", "ln2"] {
                push(format!("context.block.{b}.{ln}.gamma"), vec![d]);
                push(format!("context.block.{b}.{ln}.beta"), vec![d]);
            }
        }
        push("context.final_ln.gamma".into(), vec![d]);
        push("context.final_ln.beta".into(), vec![d]);
    }
    let gv = cfg.num_codebooks * cfg.entries_per_book;
    push("quantizer.logits.weight".into(), vec![d, gv]);
    push("quantizer.logits.bias".into(), vec![gv]);
    for g in 0..cfg.num_codebooks {
        push(format!("quantizer.codebook.{g}"), vec![cfg.entries_per_book, cfg.codebook_dim()]);
    }
    push("quantizer.combine.weight".into(), vec![d, d]);
    push("quantizer.combine.bias".into(), vec![d]);
    push("ssl.final_proj.weight".into(), vec![d, d]);
    push("ssl.final_proj.bias".into(), vec![d]);
    if let Some(l) = labels {
        push(HEAD_WEIGHT.into(), vec![d, l]);
        push(HEAD_BIAS.into(), vec![l]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    /// Output vocabulary of the CTC head, blank first.
    pub vocab: Option<Vec<String>>,
    pub step: u64,
    pub adam: Option<AdamConfig>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<S> {
    pub model: SpeechModel<S>,
    pub vocab: Option<Vec<String>>,
    pub step: u64,
    pub optimizer: Option<AdamState<S>>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(model: SpeechModel<S>) -> Self {
        Self { model, vocab: None, step: 0, optimizer: None }
    }
}

fn write_tensors<S: Scalar>(w: &mut impl Write, tensors: &BTreeMap<String, Tensor<S>>) -> std::io::Result<()> {
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_f32_lossy().to_le_bytes())?;
        }
    }
    Ok(())
}

/// Writes model parameters, metadata and optional optimizer moments.
pub fn save_checkpoint<S: Scalar>(path: &Path, ckpt: &Checkpoint<S>) -> Result<()> {
    let meta = CheckpointMeta {
        model: ckpt.model.config.clone(),
        vocab: ckpt.vocab.clone(),
        step: ckpt.step,
        adam: ckpt.optimizer.as_ref().map(|o| o.config),
    };
    let ctx = || format!("writing {}", path.display());
    let file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let body = (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let json = serde_json::to_vec(&meta)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let params: BTreeMap<String, Tensor<S>> =
            ckpt.model.params.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        write_tensors(&mut w, &params)?;
        match &ckpt.optimizer {
            Some(o) => {
                w.write_all(&[1])?;
                w.write_all(&o.step.to_le_bytes())?;
                write_tensors(&mut w, &o.first)?;
                write_tensors(&mut w, &o.second)?;
            }
            None => w.write_all(&[0])?,
        }
        w.flush()
    })();
    body.map_err(|e| Error::io(ctx(), e))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("file is truncated".into()))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }
    fn tensors<S: Scalar>(&mut self) -> Result<BTreeMap<String, Tensor<S>>> {
        let n = self.u32()?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let len = self.u32()? as usize;
            let name = String::from_utf8(self.bytes(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = self.u32()? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("tensor `{name}` has implausible rank {rank}")));
            }
            let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = self.bytes(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| S::from_f32_exact(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            out.insert(name, Tensor::new(shape, data)?);
        }
        Ok(out)
    }
}

/// Reads a checkpoint and checks that its parameters match the stored
/// configuration exactly; every missing, unexpected or misshapen tensor is
/// reported.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut r = Reader { inner: std::io::BufReader::new(file) };
    if r.bytes(4).map_err(|_| Error::Checkpoint("not a checkpoint file".into()))? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let json_len = r.u64()? as usize;
    if json_len > 1 << 26 {
        return Err(Error::Checkpoint("metadata block is implausibly large".into()));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&r.bytes(json_len)?)?;
    let tensors = r.tensors::<S>()?;
    let labels = meta.vocab.as_ref().map(|v| v.len());
    let expected = expected_shapes(&meta.model, labels);
    let mut problems = Vec::new();
    for (name, shape) in &expected {
        match tensors.get(name) {
            None => problems.push(format!("missing `{name}` {shape:?}")),
            Some(t) if t.shape() != shape.as_slice() => {
                problems.push(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape()))
            }
            _ => {}
        }
    }
    for name in tensors.keys() {
        if !expected.iter().any(|(n, _)| n == name) {
            problems.push(format!("unexpected `{name}`"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Checkpoint(format!("parameter mismatch: {}", problems.join(", "))));
    }
    let mut params = ParamStore::new();
    for (k, v) in tensors {
        params.insert(k, v);
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let first = r.tensors()?;
            let second = r.tensors()?;
            let config = meta
                .adam
                .ok_or_else(|| Error::Checkpoint("optimizer state without optimizer config".into()))?;
            Some(AdamState { config, step, first, second })
        }
        f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
    };
    Ok(Checkpoint { model: SpeechModel { config: meta.model, params }, vocab: meta.vocab, step: meta.step, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::desk();
        c.num_blocks = 1;
        c
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut m = SpeechModel::<f32>::init(tiny(), 4).unwrap();
        m.add_ctc_head(5, 1);
        let mut opt = AdamState::new(AdamConfig::default());
        opt.step = 17;
        opt.first.insert("mask_emb".into(), Tensor::full([1, 64], 0.25f32));
        let ck = Checkpoint {
            model: m.clone(),
            vocab: Some(["<blank>", "|", "a", "b", "c"].iter().map(|s| s.to_string()).collect()),
            step: 17,
            optimizer: Some(opt.clone()),
        };
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.vocab, ck.vocab);
        assert_eq!(back.step, 17);
        let o = back.optimizer.unwrap();
        assert_eq!(o.step, 17);
        assert_eq!(o.first, opt.first);
    }

    #[test]
    fn mismatched_shapes_are_all_listed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut m = SpeechModel::<f32>::init(tiny(), 4).unwrap();
        m.params.insert("encoder.proj.bias", Tensor::zeros([3]));
        m.params.insert("bogus", Tensor::zeros([1]));
        save_checkpoint(&path, &Checkpoint::new(m)).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("encoder.proj.bias"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn bad_magic_and_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checkpoint(_))));
        let mut bytes = MAGIC.to_vec();
        bytes.extend(99u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("version 99"), "{err}");
    }

    #[test]
    fn f64_models_load_as_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = SpeechModel::<f64>::init(tiny(), 9).unwrap();
        save_checkpoint(&path, &Checkpoint::new(m.clone())).unwrap();
        let back = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(back.model, m.cast::<f32>());
    }
}

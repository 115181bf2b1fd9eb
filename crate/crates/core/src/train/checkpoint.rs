//! Binary checkpoint format.
//!
//! Layout: magic `SQFG`, a `u32` version, then tagged sections. Each
//! section is a 4-byte tag, a `u64` payload length and the payload. Numbers
//! are little-endian; floats are stored as their IEEE-754 bits, so a
//! save/load roundtrip is exact.
//!
//! | tag    | payload                                              |
//! |--------|------------------------------------------------------|
//! | `ARCH` | `key=value` lines describing the architecture        |
//! | `CONF` | the training config in its text form                 |
//! | `PRMS` | count, then per tensor: name, rank, dims, values     |
//! | `SVOC` | source vocabulary dump                               |
//! | `TVOC` | target vocabulary dump                               |
//! | `ADAM` | step count, hyperparameters, then `m` and `v` values |
//! | `HIST` | history CSV                                          |
//! | `END ` | empty                                                |

use std::io::Write as _;
use std::path::Path;

use super::{TrainingConfig, TrainingHistory, TrainingState};
use crate::attention::ScoreKind;
use crate::error::{Error, Result};
use crate::model::{Architecture, Seq2Seq};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;
use crate::text::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SQFG";
pub const CHECKPOINT_VERSION: u32 = 1;

const SECTIONS: [&[u8; 4]; 8] = [b"ARCH", b"CONF", b"PRMS", b"SVOC", b"TVOC", b"ADAM", b"HIST", b"END "];

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u64(t.shape().len() as u64);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &x in t.data() {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Integrity(format!(
                "{} ends after {} bytes, {} more needed",
                self.what,
                self.pos,
                n - (self.buf.len() - self.pos)
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Integrity(format!("{}: size overflows", self.what)))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.usize()?;
        self.take(n)
    }

    fn text(&mut self) -> Result<&'a str> {
        std::str::from_utf8(self.bytes()?).map_err(|_| Error::Integrity(format!("{}: invalid UTF-8", self.what)))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.usize()?;
        let shape = (0..rank).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.filter(|&n| n <= (self.buf.len() - self.pos) / 8).ok_or_else(|| {
            Error::Integrity(format!("{}: tensor of shape {shape:?} exceeds the section", self.what))
        })?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Integrity(format!("{}: {} trailing bytes", self.what, self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn arch_text(a: &Architecture) -> String {
    format!(
        "cell={}\nattention={}\nembed_dim={}\nhidden_dim={}\natt_dim={}\nsource_vocab={}\ntarget_vocab={}\nproject_context={}\nforget_bias={}\n",
        a.cell,
        a.attention.map_or_else(|| "none".to_string(), |k| k.to_string()),
        a.embed_dim,
        a.hidden_dim,
        a.att_dim,
        a.source_vocab,
        a.target_vocab,
        a.project_context,
        a.forget_bias,
    )
}

fn parse_arch(text: &str) -> Result<Architecture> {
    let mut kv = std::collections::HashMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Integrity(format!("bad architecture line `{line}`")))?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Integrity(format!("architecture lacks `{k}`")));
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Integrity(format!("architecture `{k}` is not a number")))
    };
    let bad = |k: &str| Error::Integrity(format!("architecture `{k}` is malformed"));
    Ok(Architecture {
        cell: get("cell")?.parse().map_err(|_| bad("cell"))?,
        attention: match get("attention")? {
            "none" => None,
            k => Some(k.parse::<ScoreKind>().map_err(|_| bad("attention"))?),
        },
        embed_dim: num("embed_dim")?,
        hidden_dim: num("hidden_dim")?,
        att_dim: num("att_dim")?,
        source_vocab: num("source_vocab")?,
        target_vocab: num("target_vocab")?,
        project_context: get("project_context")?.parse().map_err(|_| bad("project_context"))?,
        forget_bias: get("forget_bias")?.parse().map_err(|_| bad("forget_bias"))?,
    })
}

impl TrainingState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Writer::default();
        out.buf.extend_from_slice(CHECKPOINT_MAGIC);
        out.buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let mut section = |tag: &[u8; 4], payload: Writer| {
            out.buf.extend_from_slice(tag);
            out.bytes(&payload.buf);
        };

        let mut w = Writer::default();
        w.bytes(arch_text(&self.model.arch).as_bytes());
        section(b"ARCH", w);

        let mut w = Writer::default();
        w.bytes(self.config.to_text().as_bytes());
        section(b"CONF", w);

        let mut w = Writer::default();
        w.u64(self.model.params.len() as u64);
        for (name, t) in self.model.params.iter() {
            w.bytes(name.as_bytes());
            w.tensor(t);
        }
        section(b"PRMS", w);

        for (tag, vocab) in [(b"SVOC", &self.source_vocab), (b"TVOC", &self.target_vocab)] {
            let mut w = Writer::default();
            w.bytes(vocab.dump().as_bytes());
            section(tag, w);
        }

        let opt = &self.optimizer;
        let mut w = Writer::default();
        w.u64(opt.step_count);
        for x in [opt.config.learning_rate, opt.config.beta1, opt.config.beta2, opt.config.epsilon] {
            w.f64(x);
        }
        w.u64(opt.m.len() as u64);
        for t in opt.m.iter().chain(&opt.v) {
            w.tensor(t);
        }
        section(b"ADAM", w);

        let mut w = Writer::default();
        w.bytes(self.history.to_csv().as_bytes());
        section(b"HIST", w);

        section(b"END ", Writer::default());
        out.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Integrity("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut payloads = Vec::with_capacity(SECTIONS.len());
        for tag in SECTIONS {
            let found = r.take(4)?;
            if found != tag {
                return Err(Error::Integrity(format!(
                    "expected section `{}`, found `{}`",
                    String::from_utf8_lossy(tag),
                    String::from_utf8_lossy(found)
                )));
            }
            payloads.push(r.bytes()?);
        }
        r.done()?;

        let mut s = Reader::new(payloads[0], "ARCH section");
        let arch = parse_arch(s.text()?)?;
        s.done()?;

        let mut s = Reader::new(payloads[1], "CONF section");
        let mut config = TrainingConfig::default();
        config.apply_lines(s.text()?).map_err(|e| Error::Integrity(format!("stored config: {e}")))?;
        s.done()?;

        let mut s = Reader::new(payloads[2], "PRMS section");
        let count = s.usize()?;
        let mut named = Vec::new();
        for _ in 0..count {
            let name = s.text()?.to_string();
            named.push((name, s.tensor()?));
        }
        s.done()?;
        let mut model = Seq2Seq::new(arch, 0).map_err(|e| Error::Integrity(format!("stored architecture: {e}")))?;
        model.assign_params(named)?;

        let vocab = |i: usize, what| -> Result<Vocabulary> {
            let mut s = Reader::new(payloads[i], what);
            let v = Vocabulary::parse_dump(s.text()?)?;
            s.done()?;
            Ok(v)
        };
        let source_vocab = vocab(3, "SVOC section")?;
        let target_vocab = vocab(4, "TVOC section")?;
        if source_vocab.len() != model.arch.source_vocab || target_vocab.len() != model.arch.target_vocab {
            return Err(Error::Integrity("vocabulary sizes disagree with the architecture".into()));
        }

        let mut s = Reader::new(payloads[5], "ADAM section");
        let step_count = s.u64()?;
        let adam = AdamConfig {
            learning_rate: s.f64()?,
            beta1: s.f64()?,
            beta2: s.f64()?,
            epsilon: s.f64()?,
        };
        let n = s.usize()?;
        if n != model.params.len() {
            return Err(Error::Integrity(format!("optimizer tracks {n} tensors, model has {}", model.params.len())));
        }
        let mut moments = (0..2 * n).map(|_| s.tensor()).collect::<Result<Vec<_>>>()?;
        s.done()?;
        let v = moments.split_off(n);
        let m = moments;
        for (i, (name, p)) in model.params.iter().enumerate() {
            if m[i].shape() != p.shape() || v[i].shape() != p.shape() {
                return Err(Error::Integrity(format!("optimizer moments for `{name}` have the wrong shape")));
            }
        }
        let optimizer = AdamState {
            config: adam,
            step_count,
            m,
            v,
        };

        let mut s = Reader::new(payloads[6], "HIST section");
        let history = TrainingHistory::parse_csv(s.text()?)?;
        s.done()?;

        Ok(TrainingState {
            config,
            model,
            source_vocab,
            target_vocab,
            optimizer,
            history,
        })
    }

    /// Writes to a temporary sibling, then renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let tmp = dir.join(format!(".{file_name}.tmp"));
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            std::fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

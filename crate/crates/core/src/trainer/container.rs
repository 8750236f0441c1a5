//! Binary model container.
//!
//! All integers and reals are little-endian.
//!
//! ```text
//! magic        4 bytes  "SQV1"
//! version      u16      1
//! mode         u8       0 = dm, 1 = dbow
//! objective    u8       0 = hs, 1 = ns
//! k            u32
//! V            u32      vocabulary size
//! D            u32      document count
//! window       u32
//! epochs       u32      completed epochs
//! seed         u64
//! vocabulary   V × { len u32, UTF-8 code, count u64 }
//! doc          D×k      f32, row-major
//! token        V×k      f32, row-major
//! output       (V-1)×k (hs) or V×k (ns) f32, row-major
//! doc ids      D × { len u32, UTF-8 id }
//! negatives    u32
//! noise exp.   f64
//! alpha0       f32
//! alpha1       f32
//! train_words  u8
//! fingerprint  { len u32, UTF-8 }
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::embedding::{EmbeddingModel, Matrix, Mode, ModelMeta, Objective};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SQV1";
pub const VERSION: u16 = 1;

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_matrix(buf: &mut Vec<u8>, m: &Matrix) {
    for x in m.as_slice() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn write_model<W: Write>(model: &EmbeddingModel, mut out: W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(
        64 + 4 * (model.doc_vectors.as_slice().len()
            + model.token_vectors.as_slice().len()
            + model.output.as_slice().len()),
    );
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(match model.mode {
        Mode::Dm => 0,
        Mode::Dbow => 1,
    });
    buf.push(match model.objective {
        Objective::Hs => 0,
        Objective::Ns => 1,
    });
    for v in [
        model.k,
        model.vocab.len(),
        model.doc_ids.len(),
        model.window,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&model.meta.epochs.to_le_bytes());
    buf.extend_from_slice(&model.meta.seed.to_le_bytes());
    for (code, count) in &model.vocab {
        put_str(&mut buf, code);
        buf.extend_from_slice(&count.to_le_bytes());
    }
    put_matrix(&mut buf, &model.doc_vectors);
    put_matrix(&mut buf, &model.token_vectors);
    put_matrix(&mut buf, &model.output);
    for id in &model.doc_ids {
        put_str(&mut buf, id);
    }
    buf.extend_from_slice(&model.meta.num_negatives.to_le_bytes());
    buf.extend_from_slice(&model.meta.noise_exponent.to_le_bytes());
    buf.extend_from_slice(&model.meta.initial_alpha.to_le_bytes());
    buf.extend_from_slice(&model.meta.final_alpha.to_le_bytes());
    buf.push(model.meta.train_words as u8);
    put_str(&mut buf, &model.meta.fingerprint);
    out.write_all(&buf)
}

pub fn save(model: &EmbeddingModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_model(model, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<EmbeddingModel> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Container {
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err(at, format!("invalid UTF-8 in {what}")))
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| self.err(self.pos, format!("{what} dimensions overflow")))?;
        let raw = self.take(n, what)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Matrix::from_vec(rows, cols, data))
    }
}

pub fn read_model(bytes: &[u8]) -> Result<EmbeddingModel> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(c.err(0, "bad magic (expected \"SQV1\")"));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(c.err(4, format!("unsupported version {version}")));
    }
    let mode = match c.u8("mode")? {
        0 => Mode::Dm,
        1 => Mode::Dbow,
        other => return Err(c.err(6, format!("unknown mode tag {other}"))),
    };
    let objective = match c.u8("objective")? {
        0 => Objective::Hs,
        1 => Objective::Ns,
        other => return Err(c.err(7, format!("unknown objective tag {other}"))),
    };
    let k = c.u32("k")? as usize;
    let v = c.u32("vocabulary size")? as usize;
    let d = c.u32("document count")? as usize;
    let window = c.u32("window")? as usize;
    let epochs = c.u32("epochs")?;
    let seed = c.u64("seed")?;
    if k == 0 {
        return Err(c.err(8, "k must be positive"));
    }

    let mut vocab = Vec::with_capacity(v.min(1 << 20));
    for _ in 0..v {
        let code = c.string("vocabulary code")?;
        let count = c.u64("vocabulary count")?;
        vocab.push((code, count));
    }
    let out_rows = match objective {
        Objective::Hs => v.saturating_sub(1),
        Objective::Ns => v,
    };
    let doc_vectors = c.matrix(d, k, "document matrix")?;
    let token_vectors = c.matrix(v, k, "token matrix")?;
    let output = c.matrix(out_rows, k, "output matrix")?;
    let mut doc_ids = Vec::with_capacity(d.min(1 << 24));
    for _ in 0..d {
        doc_ids.push(c.string("document id")?);
    }
    let num_negatives = c.u32("negatives")?;
    let noise_exponent = c.f64("noise exponent")?;
    let initial_alpha = c.f32("initial alpha")?;
    let final_alpha = c.f32("final alpha")?;
    let train_words = c.u8("train_words")? != 0;
    let fingerprint = c.string("fingerprint")?;
    if c.pos != bytes.len() {
        return Err(c.err(c.pos, "trailing bytes after model"));
    }
    let at = c.pos;
    EmbeddingModel::from_parts(
        mode,
        objective,
        window,
        vocab,
        doc_ids,
        doc_vectors,
        token_vectors,
        output,
        ModelMeta {
            seed,
            epochs,
            num_negatives,
            noise_exponent,
            initial_alpha,
            final_alpha,
            train_words,
            fingerprint,
        },
    )
    .map_err(|e| Error::Container {
        offset: at as u64,
        message: e.to_string(),
    })
}

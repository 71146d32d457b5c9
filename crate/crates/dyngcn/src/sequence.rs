//! Sequence files.
//!
//! Binary (`.skb`), all integers `u32` little-endian:
//!
//! ```text
//! magic "SKSQ" | version (1) | N | D | M | T | label | flags (bit 0: confidence channel)
//! id length | id bytes (UTF-8) | layout length | layout bytes (UTF-8)
//! T·M·N·D little-endian f32 values, row-major [T][M][N][D]
//! ```
//!
//! Text (`.skt`): a `skeleton-sequence 1` line, `key value` header lines
//! (`joints`, `dims`, `persons`, `frames`, `label`; optional `layout`, `id`,
//! `confidence`), then per frame a `frame <t>` line followed by one line of D
//! numbers per joint, person by person. A frame may list fewer persons than
//! declared; the rest are zero. `#` starts a comment.

use std::fs;
use std::path::Path;

use dyngcn_core::data::SkeletonSequence;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SKSQ";
pub const VERSION: u32 = 1;
pub const TEXT_MAGIC: &str = "skeleton-sequence";

pub fn encode_binary(seq: &SkeletonSequence) -> Vec<u8> {
    let [t, m, n, d] = seq.shape();
    let mut out = Vec::with_capacity(48 + seq.id.len() + seq.layout.len() + 4 * seq.data().len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, n as u32, d as u32, m as u32, t as u32, seq.label as u32, u32::from(seq.confidence)] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in [&seq.id, &seq.layout] {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    for v in seq.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::parse(self.path, format!("offset {}", self.pos), format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::parse(self.path, format!("offset {at}"), format!("{what} is not UTF-8")))
    }
}

pub fn decode_binary(buf: &[u8], path: &Path) -> Result<SkeletonSequence> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::parse(path, "offset 0", "not a binary skeleton sequence (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(path, "offset 4", format!("unsupported version {version}")));
    }
    let mut h = [0usize; 6];
    for (v, name) in h.iter_mut().zip(["joints", "dims", "persons", "frames", "label", "flags"]) {
        *v = r.u32(name)? as usize;
    }
    let [n, d, m, t, label, flags] = h;
    if flags > 1 {
        return Err(Error::parse(path, "offset 28", format!("unknown flags {flags:#x}")));
    }
    let id = r.string("id")?;
    let layout = r.string("layout")?;
    let count = t
        .checked_mul(m)
        .and_then(|v| v.checked_mul(n))
        .and_then(|v| v.checked_mul(d))
        .ok_or_else(|| Error::parse(path, "offset 8", "header dimensions overflow"))?;
    let start = r.pos;
    let payload = r.take(count * 4, "coordinates")?;
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    if r.pos != buf.len() {
        return Err(Error::parse(path, format!("offset {}", r.pos), format!("{} trailing bytes after the coordinates", buf.len() - r.pos)));
    }
    SkeletonSequence::new(id, layout, label, flags == 1, [t, m, n, d], data)
        .map_err(|e| Error::parse(path, format!("offset {start}"), e.to_string()))
}

pub fn encode_text(seq: &SkeletonSequence) -> String {
    let [t, m, n, d] = seq.shape();
    let mut s = format!(
        "{TEXT_MAGIC} 1\njoints {n}\ndims {d}\npersons {m}\nframes {t}\nlabel {}\nlayout {}\nid {}\nconfidence {}\n",
        seq.label,
        seq.layout,
        seq.id,
        u8::from(seq.confidence)
    );
    for f in 0..t {
        s.push_str(&format!("frame {f}\n"));
        for p in 0..m {
            for j in 0..n {
                let vals: Vec<String> = seq.joint(f, p, j).iter().map(|v| v.to_string()).collect();
                s.push_str(&vals.join(" "));
                s.push('\n');
            }
        }
    }
    s
}

pub fn decode_text(text: &str, path: &Path) -> Result<SkeletonSequence> {
    let err = |line: usize, msg: String| Error::parse(path, format!("line {line}"), msg);
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();
    match lines.next() {
        Some((_, l)) if l == format!("{TEXT_MAGIC} 1") => {}
        Some((i, l)) => return Err(err(i, format!("expected '{TEXT_MAGIC} 1', found '{l}'"))),
        None => return Err(err(1, "empty file".into())),
    }
    let (mut n, mut d, mut m, mut t, mut label) = (None, None, None, None, None);
    let (mut layout, mut id, mut confidence) = (String::new(), String::new(), false);
    while let Some(&(i, l)) = lines.peek() {
        if is_frame_marker(l) {
            break;
        }
        lines.next();
        let (key, value) = l.split_once(char::is_whitespace).ok_or_else(|| err(i, format!("expected 'key value', found '{l}'")))?;
        let value = value.trim();
        let num = || value.parse::<usize>().map_err(|_| err(i, format!("{key}: '{value}' is not a nonnegative integer")));
        match key {
            "joints" => n = Some(num()?),
            "dims" => d = Some(num()?),
            "persons" => m = Some(num()?),
            "frames" => t = Some(num()?),
            "label" => label = Some(num()?),
            "layout" => layout = value.to_string(),
            "id" => id = value.to_string(),
            "confidence" => confidence = num()? != 0,
            other => return Err(err(i, format!("unknown header key '{other}'"))),
        }
    }
    let need = |v: Option<usize>, k: &str| v.ok_or_else(|| err(1, format!("header is missing '{k}'")));
    let (n, d, m, t, label) = (need(n, "joints")?, need(d, "dims")?, need(m, "persons")?, need(t, "frames")?, need(label, "label")?);
    if n == 0 || d == 0 || m == 0 || t == 0 {
        return Err(err(1, "joints, dims, persons and frames must be positive".into()));
    }
    let mut data = vec![0f32; t * m * n * d];
    for f in 0..t {
        let (fl, header) = lines.next().ok_or_else(|| err(text.lines().count(), format!("file ends before frame {f}")))?;
        if header != format!("frame {f}") {
            return Err(err(fl, format!("expected 'frame {f}', found '{header}'")));
        }
        let mut rows = 0;
        while let Some(&(i, l)) = lines.peek() {
            if is_frame_marker(l) {
                break;
            }
            lines.next();
            if rows == m * n {
                return Err(err(i, format!("frame {f}: more than {m} persons x {n} joints")));
            }
            let vals: Vec<&str> = l.split_whitespace().collect();
            if vals.len() != d {
                return Err(err(i, format!("frame {f}: expected {d} values per joint, found {}", vals.len())));
            }
            let o = (f * m * n + rows) * d;
            for (k, v) in vals.iter().enumerate() {
                data[o + k] = v.parse().map_err(|_| err(i, format!("frame {f}: '{v}' is not a number")))?;
            }
            rows += 1;
        }
        if rows == 0 || rows % n != 0 {
            return Err(err(fl, format!("frame {f}: expected a multiple of {n} joint lines (up to {m} persons), found {rows}")));
        }
    }
    if let Some((i, l)) = lines.next() {
        return Err(err(i, format!("unexpected content after the last frame: '{l}'")));
    }
    SkeletonSequence::new(id, layout, label, confidence, [t, m, n, d], data).map_err(|e| err(1, e.to_string()))
}

fn is_frame_marker(line: &str) -> bool {
    line.split_whitespace().next() == Some("frame")
}

fn is_text(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "skt")
}

/// Loads by extension: `.skt` is text, anything else binary.
pub fn load_sequence(path: &Path) -> Result<SkeletonSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_text(path) {
        let text = String::from_utf8(bytes).map_err(|_| Error::parse(path, "offset 0", "text sequence is not UTF-8"))?;
        decode_text(&text, path)
    } else {
        decode_binary(&bytes, path)
    }
}

pub fn save_sequence(seq: &SkeletonSequence, path: &Path) -> Result<()> {
    let bytes = if is_text(path) { encode_text(seq).into_bytes() } else { encode_binary(seq) };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

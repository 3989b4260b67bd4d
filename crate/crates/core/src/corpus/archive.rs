//! Corpus archive directory.
//!
//! * `vocab.txt` - one token per line; the line number is the token index.
//! * `profiles.jsonl` - one [`UserProfile`] per line; the line number is the user index.
//! * `tokens.bin` - token sequences, little-endian:
//!
//! ```text
//! magic   8 bytes  "CHTOKENS"
//! version u32      1
//! users   u64      U
//! vocab   u64      W
//! then for each user in index order:
//!     varint  n_u
//!     n_u zigzag varints, each the difference to the previous token index
//!     (the first is relative to 0)
//! ```
//!
//! Varints are unsigned LEB128.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::types::{Corpus, UserProfile};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CHTOKENS";
const VERSION: u32 = 1;

fn put_varint(buf: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            buf.push(byte);
            return;
        }
        buf.push(byte | 0x80);
    }
}

fn get_varint(bytes: &[u8], pos: &mut usize) -> Option<u64> {
    let mut v = 0u64;
    let mut shift = 0;
    loop {
        let b = *bytes.get(*pos)?;
        *pos += 1;
        if shift >= 64 {
            return None;
        }
        v |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Some(v);
        }
        shift += 7;
    }
}

fn zigzag(d: i64) -> u64 {
    ((d << 1) ^ (d >> 63)) as u64
}

fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

pub fn encode_tokens(tokens: &[Vec<u32>], vocab_size: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(28 + tokens.iter().map(Vec::len).sum::<usize>() * 2);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tokens.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(vocab_size as u64).to_le_bytes());
    for toks in tokens {
        put_varint(&mut buf, toks.len() as u64);
        let mut prev = 0i64;
        for &t in toks {
            put_varint(&mut buf, zigzag(t as i64 - prev));
            prev = t as i64;
        }
    }
    buf
}

/// Decode `tokens.bin`; returns (tokens, vocab size).
pub fn decode_tokens(bytes: &[u8], path: &Path) -> Result<(Vec<Vec<u32>>, usize)> {
    let bad = |r: &str| Error::archive(path, r.to_string());
    if bytes.len() < 28 || &bytes[..8] != MAGIC {
        return Err(bad("missing tokens.bin header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad("unsupported tokens.bin version"));
    }
    let users = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let vocab = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let mut pos = 28;
    let mut out = Vec::with_capacity(users);
    for _ in 0..users {
        let n = get_varint(bytes, &mut pos).ok_or_else(|| bad("truncated length"))? as usize;
        let mut toks = Vec::with_capacity(n);
        let mut prev = 0i64;
        for _ in 0..n {
            let d = get_varint(bytes, &mut pos).ok_or_else(|| bad("truncated token run"))?;
            prev += unzigzag(d);
            if prev < 0 || prev as usize >= vocab {
                return Err(bad("token index outside vocabulary"));
            }
            toks.push(prev as u32);
        }
        out.push(toks);
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((out, vocab))
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vp = dir.join("vocab.txt");
    let mut v = String::new();
    for t in &corpus.vocab {
        v.push_str(t);
        v.push('\n');
    }
    fs::write(&vp, v).map_err(|e| Error::io(&vp, e))?;

    let tp = dir.join("tokens.bin");
    fs::write(&tp, encode_tokens(&corpus.tokens, corpus.vocab_size()))
        .map_err(|e| Error::io(&tp, e))?;

    let pp = dir.join("profiles.jsonl");
    let f = File::create(&pp).map_err(|e| Error::io(&pp, e))?;
    let mut w = BufWriter::new(f);
    for p in &corpus.profiles {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(&pp, e))?;
    }
    w.flush().map_err(|e| Error::io(&pp, e))
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let vp = dir.join("vocab.txt");
    let vocab: Vec<String> = fs::read_to_string(&vp)
        .map_err(|e| Error::io(&vp, e))?
        .lines()
        .map(str::to_owned)
        .collect();

    let pp = dir.join("profiles.jsonl");
    let f = File::open(&pp).map_err(|e| Error::io(&pp, e))?;
    let mut profiles = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&pp, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: UserProfile = serde_json::from_str(&line)
            .map_err(|e| Error::archive(&pp, format!("line {}: {e}", i + 1)))?;
        profiles.push(p);
    }

    let tp = dir.join("tokens.bin");
    let bytes = fs::read(&tp).map_err(|e| Error::io(&tp, e))?;
    let (tokens, w) = decode_tokens(&bytes, &tp)?;
    if w != vocab.len() {
        return Err(Error::archive(
            &tp,
            "vocabulary size disagrees with vocab.txt",
        ));
    }
    let users = profiles.iter().map(|p| p.user_id.clone()).collect();
    Corpus::new(vocab, users, tokens, profiles)
}

//! Binary index file.
//!
//! All integers are little-endian. Strings are a `u32` byte length followed by
//! UTF-8 bytes. Posting entries are `doc: u32, tf: u32, enriched: u8`.
//!
//! ```text
//! magic          8 bytes   "LXBIDX\0\0"
//! version        u32       FORMAT_VERSION
//! slot_count     u32
//! min_ngram      u8
//! max_ngram      u8
//! n_docs         u32
//! avgdl          f64
//! total_length   u64
//! stopwords      u32 count, then strings (sorted)
//! documents      n_docs x { id, title, text: string; length: u32 }
//! unigram tier   u32 term count, then per term (sorted by bytes):
//!                  term: string; u32 count; postings
//! hashed tier    u32 occupied slots, then per slot (ascending):
//!                  slot: u32; u32 count; postings
//! ```
//!
//! Posting lists are written in ascending document order, so identical
//! indexes always serialize to identical bytes.

use std::collections::HashMap;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Document, HashedTier, Index, IndexConfig, IndexError, IndexStats, Posting};
use crate::tokenizer::Tokenizer;

pub const MAGIC: &[u8; 8] = b"LXBIDX\0\0";
pub const FORMAT_VERSION: u32 = 1;

type LE = LittleEndian;

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    let len = u32::try_from(s.len())
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "string too long"))?;
    w.write_u32::<LE>(len)?;
    w.write_all(s.as_bytes())
}

fn write_postings<W: Write>(w: &mut W, postings: &[Posting]) -> std::io::Result<()> {
    w.write_u32::<LE>(postings.len() as u32)?;
    for p in postings {
        w.write_u32::<LE>(p.doc)?;
        w.write_u32::<LE>(p.tf)?;
        w.write_u8(u8::from(p.enriched))?;
    }
    Ok(())
}

fn format_err(msg: impl Into<String>) -> IndexError {
    IndexError::Format(msg.into())
}

fn read_str<R: Read>(r: &mut R) -> Result<String, IndexError> {
    let len = r.read_u32::<LE>()? as usize;
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(format_err("truncated string"));
    }
    String::from_utf8(buf).map_err(|_| format_err("string is not valid UTF-8"))
}

fn read_postings<R: Read>(r: &mut R, n_docs: u32) -> Result<Vec<Posting>, IndexError> {
    let count = r.read_u32::<LE>()?;
    if count > n_docs {
        return Err(format_err("posting list longer than the corpus"));
    }
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let doc = r.read_u32::<LE>()?;
        let tf = r.read_u32::<LE>()?;
        let enriched = match r.read_u8()? {
            0 => false,
            1 => true,
            other => return Err(format_err(format!("bad enrichment flag {other}"))),
        };
        if doc >= n_docs {
            return Err(format_err(format!("posting references document {doc}")));
        }
        if out.last().is_some_and(|p: &Posting| p.doc >= doc) {
            return Err(format_err("posting list is not in ascending document order"));
        }
        if tf == 0 && !enriched {
            return Err(format_err("empty posting"));
        }
        out.push(Posting { doc, tf, enriched });
    }
    Ok(out)
}

impl Index {
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), IndexError> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(FORMAT_VERSION)?;
        w.write_u32::<LE>(self.config.slot_count)?;
        w.write_u8(self.config.min_ngram as u8)?;
        w.write_u8(self.config.max_ngram as u8)?;
        w.write_u32::<LE>(self.stats.n_docs)?;
        w.write_f64::<LE>(self.stats.avgdl)?;
        w.write_u64::<LE>(self.stats.total_length)?;

        let stopwords = self.tokenizer.stopwords();
        w.write_u32::<LE>(stopwords.len() as u32)?;
        for s in stopwords {
            write_str(&mut w, s)?;
        }

        for d in &self.docs {
            write_str(&mut w, &d.id)?;
            write_str(&mut w, &d.title)?;
            write_str(&mut w, &d.text)?;
            w.write_u32::<LE>(d.length)?;
        }

        let (unigrams, slots) = self.posting_snapshot();
        w.write_u32::<LE>(unigrams.len() as u32)?;
        for (term, postings) in &unigrams {
            write_str(&mut w, term)?;
            write_postings(&mut w, postings)?;
        }
        w.write_u32::<LE>(slots.len() as u32)?;
        for (slot, postings) in &slots {
            w.write_u32::<LE>(*slot)?;
            write_postings(&mut w, postings)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_to_path(&self, path: impl AsRef<std::path::Path>) -> Result<(), IndexError> {
        let file = std::fs::File::create(path)?;
        self.save(std::io::BufWriter::new(file))
    }

    pub fn load<R: Read>(mut r: R) -> Result<Index, IndexError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| format_err("file too short for header"))?;
        if &magic != MAGIC {
            return Err(format_err("bad magic bytes"));
        }
        let version = r.read_u32::<LE>()?;
        if version != FORMAT_VERSION {
            return Err(format_err(format!("unsupported format version {version}")));
        }
        let config = IndexConfig {
            slot_count: r.read_u32::<LE>()?,
            min_ngram: usize::from(r.read_u8()?),
            max_ngram: usize::from(r.read_u8()?),
        };
        config.validate()?;
        let n_docs = r.read_u32::<LE>()?;
        let avgdl = r.read_f64::<LE>()?;
        let total_length = r.read_u64::<LE>()?;

        let n_stop = r.read_u32::<LE>()?;
        let mut stopwords = Vec::new();
        for _ in 0..n_stop {
            stopwords.push(read_str(&mut r)?);
        }
        let tokenizer = Tokenizer::new(stopwords);

        let mut docs = Vec::new();
        let mut doc_numbers = HashMap::new();
        for n in 0..n_docs {
            let doc = Document {
                id: read_str(&mut r)?,
                title: read_str(&mut r)?,
                text: read_str(&mut r)?,
                length: r.read_u32::<LE>()?,
            };
            if doc_numbers.insert(doc.id.clone(), n).is_some() {
                return Err(IndexError::DuplicateDocId(doc.id));
            }
            docs.push(doc);
        }
        let stats = IndexStats::from_lengths(docs.iter().map(|d| d.length));
        if stats.n_docs != n_docs
            || stats.total_length != total_length
            || stats.avgdl.to_bits() != avgdl.to_bits()
        {
            return Err(format_err("header statistics disagree with stored documents"));
        }

        let n_terms = r.read_u32::<LE>()?;
        let mut unigrams = HashMap::with_capacity(n_terms as usize);
        for _ in 0..n_terms {
            let term = read_str(&mut r)?;
            let postings = read_postings(&mut r, n_docs)?;
            if unigrams.insert(term, postings).is_some() {
                return Err(format_err("duplicate unigram term"));
            }
        }
        let n_slots = r.read_u32::<LE>()?;
        let mut hashed = HashedTier::new(config.slot_count);
        let mut last_slot = None;
        for _ in 0..n_slots {
            let slot = r.read_u32::<LE>()?;
            if slot >= config.slot_count || last_slot.is_some_and(|s| s >= slot) {
                return Err(format_err(format!("bad slot number {slot}")));
            }
            last_slot = Some(slot);
            hashed.insert_list(slot, read_postings(&mut r, n_docs)?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(format_err("trailing bytes after hashed tier"));
        }

        Ok(Index {
            config,
            tokenizer,
            docs,
            doc_numbers,
            unigrams,
            hashed,
            stats,
        })
    }

    pub fn load_from_path(path: impl AsRef<std::path::Path>) -> Result<Index, IndexError> {
        let file = std::fs::File::open(path)?;
        Index::load(std::io::BufReader::new(file))
    }
}

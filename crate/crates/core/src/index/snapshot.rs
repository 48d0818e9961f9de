//! "MXI1" snapshot: BM25 constants, users, documents, then each term's
//! postings as varint (doc delta, tf) pairs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Bm25Params, InvertedIndex, Posting};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"MXI1";

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_varint(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

fn truncated(what: &str) -> Error {
    Error::Format(format!("index snapshot truncated in {what}"))
}

impl Reader<'_> {
    fn varint(&mut self, what: &str) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.cur.read_u8().map_err(|_| truncated(what))?;
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::Format(format!("varint overflow in {what}")))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.varint(what)?).map_err(|_| truncated(what))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.count(what)?;
        let remaining = self.cur.get_ref().len() - self.cur.position() as usize;
        if n > remaining {
            return Err(truncated(what));
        }
        let mut buf = vec![0u8; n];
        self.cur.read_exact(&mut buf).map_err(|_| truncated(what))?;
        String::from_utf8(buf).map_err(|_| Error::Format(format!("non-UTF-8 {what}")))
    }
}

impl InvertedIndex {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.write_f64::<LittleEndian>(self.params.k1).expect("vec write");
        out.write_f64::<LittleEndian>(self.params.b).expect("vec write");
        put_varint(&mut out, self.users().len() as u64);
        for u in self.users() {
            put_str(&mut out, u);
        }
        put_varint(&mut out, self.num_docs() as u64);
        for d in 0..self.num_docs() {
            put_str(&mut out, &self.doc_ids()[d]);
            put_varint(&mut out, u64::from(self.doc_users()[d]));
            put_varint(&mut out, u64::from(self.doc_lens()[d]));
        }
        put_varint(&mut out, self.postings.len() as u64);
        for (term, postings) in &self.postings {
            put_str(&mut out, term);
            put_varint(&mut out, postings.len() as u64);
            let mut prev = 0u32;
            for p in postings {
                put_varint(&mut out, u64::from(p.doc - prev));
                put_varint(&mut out, u64::from(p.tf));
                prev = p.doc;
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != INDEX_MAGIC {
            return Err(Error::Format("bad index snapshot magic".into()));
        }
        let mut r = Reader {
            cur: Cursor::new(bytes),
        };
        r.cur.set_position(4);
        let k1 = r.cur.read_f64::<LittleEndian>().map_err(|_| truncated("k1"))?;
        let b = r.cur.read_f64::<LittleEndian>().map_err(|_| truncated("b"))?;
        let n_users = r.count("user count")?;
        let users = (0..n_users)
            .map(|_| r.string("user id"))
            .collect::<Result<Vec<_>>>()?;
        let n_docs = r.count("doc count")?;
        let (mut doc_ids, mut doc_user, mut doc_len) = (vec![], vec![], vec![]);
        for _ in 0..n_docs {
            doc_ids.push(r.string("photo id")?);
            let u = r.varint("doc user")?;
            if u as usize >= users.len() {
                return Err(Error::Format(format!("doc user {u} out of range")));
            }
            doc_user.push(u as u32);
            doc_len.push(r.varint("doc length")? as u32);
        }
        let n_terms = r.count("term count")?;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let term = r.string("term")?;
            let n = r.count("posting count")?;
            let mut list = Vec::with_capacity(n.min(n_docs));
            let mut doc = 0u64;
            for i in 0..n {
                let delta = r.varint("posting")?;
                if i > 0 && delta == 0 {
                    return Err(Error::Format(format!("unsorted postings for {term}")));
                }
                doc += delta;
                if doc as usize >= n_docs {
                    return Err(Error::Format(format!("posting doc {doc} out of range")));
                }
                let tf = r.varint("term frequency")? as u32;
                list.push(Posting { doc: doc as u32, tf });
            }
            postings.insert(term, list);
        }
        if r.cur.position() as usize != bytes.len() {
            return Err(Error::Format("trailing bytes in index snapshot".into()));
        }
        Ok(InvertedIndex::from_parts(
            Bm25Params { k1, b },
            postings,
            doc_len,
            doc_ids,
            doc_user,
            users,
        ))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

//! Vocabulary, inverted index and collection statistics.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::text::{tokenize, Stopwords};

pub type TermId = usize;
pub type DocId = usize;

const INDEX_MAGIC: &[u8; 8] = b"RELEMBIX";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    ids: HashMap<String, TermId>,
    df: Vec<u64>,
    cf: Vec<u64>,
    total_tokens: u64,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<TermId> {
        self.ids.get(term).copied()
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.terms[id]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn df(&self, id: TermId) -> u64 {
        self.df[id]
    }

    pub fn cf(&self, id: TermId) -> u64 {
        self.cf[id]
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Maps tokens to ids, dropping out-of-vocabulary tokens.
    pub fn lookup<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TermId> {
        tokens.iter().filter_map(|t| self.id(t.as_ref())).collect()
    }

    /// `term<TAB>id<TAB>df<TAB>cf` per line.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (id, term) in self.terms.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{}", term, id, self.df[id], self.cf[id])
                .map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: DocId,
    pub tf: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct IndexOptions {
    /// Terms with a collection frequency below this are dropped entirely.
    pub min_cf: u64,
    /// Number of document partitions tokenized independently before merging.
    pub partitions: usize,
}

impl Default for IndexOptions {
    fn default() -> Self {
        IndexOptions {
            min_cf: 1,
            partitions: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    vocab: Vocabulary,
    doc_names: Vec<String>,
    doc_ids: HashMap<String, DocId>,
    doc_lens: Vec<u64>,
    postings: Vec<Vec<Posting>>,
    // per-document (term, tf), sorted by term id
    forward: Vec<Vec<(TermId, u32)>>,
    collection: Vec<f64>,
}

type DocCounts = BTreeMap<String, u32>;

fn count_tokens(text: &str, stopwords: &Stopwords) -> DocCounts {
    let mut counts = DocCounts::new();
    for tok in tokenize(text, stopwords) {
        *counts.entry(tok).or_insert(0) += 1;
    }
    counts
}

/// Builds the index from `(doc id, text)` pairs. Term ids follow lexicographic
/// term order, so the result does not depend on how documents are partitioned.
pub fn build_index<I>(documents: I, stopwords: &Stopwords, options: &IndexOptions) -> Result<CorpusIndex>
where
    I: IntoIterator<Item = (String, String)>,
{
    let docs: Vec<(String, String)> = documents.into_iter().collect();
    let mut doc_ids = HashMap::with_capacity(docs.len());
    for (i, (name, _)) in docs.iter().enumerate() {
        if doc_ids.insert(name.clone(), i).is_some() {
            return Err(Error::DuplicateDocId(name.clone()));
        }
    }

    let chunk = docs.len().div_ceil(options.partitions.max(1)).max(1);
    let partials: Vec<Vec<DocCounts>> = docs
        .par_chunks(chunk)
        .map(|part| part.iter().map(|(_, text)| count_tokens(text, stopwords)).collect())
        .collect();
    let counts: Vec<DocCounts> = partials.into_iter().flatten().collect();

    let mut stats: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for doc in &counts {
        for (term, &tf) in doc {
            let e = stats.entry(term.as_str()).or_insert((0, 0));
            e.0 += 1;
            e.1 += tf as u64;
        }
    }
    stats.retain(|_, (_, cf)| *cf >= options.min_cf);

    let mut terms = Vec::with_capacity(stats.len());
    let mut df = Vec::with_capacity(stats.len());
    let mut cf = Vec::with_capacity(stats.len());
    let mut ids = HashMap::with_capacity(stats.len());
    for (id, (term, (d, c))) in stats.into_iter().enumerate() {
        ids.insert(term.to_string(), id);
        terms.push(term.to_string());
        df.push(d);
        cf.push(c);
    }

    let mut postings = vec![Vec::new(); terms.len()];
    let mut forward = Vec::with_capacity(counts.len());
    let mut doc_lens = Vec::with_capacity(counts.len());
    for (doc, dc) in counts.iter().enumerate() {
        let mut fwd: Vec<(TermId, u32)> = dc
            .iter()
            .filter_map(|(t, &tf)| ids.get(t).map(|&id| (id, tf)))
            .collect();
        fwd.sort_unstable();
        for &(id, tf) in &fwd {
            postings[id].push(Posting { doc, tf });
        }
        doc_lens.push(fwd.iter().map(|&(_, tf)| tf as u64).sum());
        forward.push(fwd);
    }

    let total_tokens = cf.iter().sum();
    let vocab = Vocabulary {
        terms,
        ids,
        df,
        cf,
        total_tokens,
    };
    let doc_names = docs.into_iter().map(|(name, _)| name).collect();
    Ok(CorpusIndex::assemble(vocab, doc_names, doc_ids, doc_lens, postings, forward))
}

impl CorpusIndex {
    fn assemble(
        vocab: Vocabulary,
        doc_names: Vec<String>,
        doc_ids: HashMap<String, DocId>,
        doc_lens: Vec<u64>,
        postings: Vec<Vec<Posting>>,
        forward: Vec<Vec<(TermId, u32)>>,
    ) -> Self {
        let total = vocab.total_tokens as f64;
        let collection = vocab
            .cf
            .iter()
            .map(|&c| if total > 0.0 { c as f64 / total } else { 0.0 })
            .collect();
        CorpusIndex {
            vocab,
            doc_names,
            doc_ids,
            doc_lens,
            postings,
            forward,
            collection,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn num_docs(&self) -> usize {
        self.doc_names.len()
    }

    pub fn doc_name(&self, doc: DocId) -> &str {
        &self.doc_names[doc]
    }

    pub fn doc_id(&self, name: &str) -> Option<DocId> {
        self.doc_ids.get(name).copied()
    }

    pub fn doc_len(&self, doc: DocId) -> u64 {
        self.doc_lens[doc]
    }

    pub fn postings(&self, term: TermId) -> &[Posting] {
        &self.postings[term]
    }

    /// Terms of `doc` with their in-document frequency, ordered by term id.
    pub fn doc_terms(&self, doc: DocId) -> &[(TermId, u32)] {
        &self.forward[doc]
    }

    pub fn tf(&self, term: TermId, doc: DocId) -> u32 {
        let fwd = &self.forward[doc];
        match fwd.binary_search_by_key(&term, |&(t, _)| t) {
            Ok(i) => fwd[i].1,
            Err(_) => 0,
        }
    }

    /// Collection language model p(w|C).
    pub fn collection_prob(&self, term: TermId) -> f64 {
        self.collection[term]
    }

    pub fn collection_model(&self) -> &[f64] {
        &self.collection
    }

    pub(crate) fn check_doc(&self, doc: DocId) -> Result<()> {
        if doc < self.num_docs() {
            Ok(())
        } else {
            Err(Error::UnknownDoc(doc.to_string()))
        }
    }

    pub(crate) fn check_term(&self, term: TermId) -> Result<()> {
        if term < self.vocab.len() {
            Ok(())
        } else {
            Err(Error::TermOutOfRange(term))
        }
    }

    /// Maximum-likelihood document model c(w,d)/|d|.
    pub fn mle_prob(&self, term: TermId, doc: DocId) -> Result<f64> {
        self.check_doc(doc)?;
        self.check_term(term)?;
        let len = self.doc_lens[doc];
        if len == 0 {
            return Err(Error::EmptyDocument(self.doc_names[doc].clone()));
        }
        Ok(self.tf(term, doc) as f64 / len as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_binary(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    fn write_binary<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(INDEX_MAGIC)?;
        out.write_all(&INDEX_VERSION.to_le_bytes())?;
        write_u64(out, self.vocab.len() as u64)?;
        for id in 0..self.vocab.len() {
            write_str(out, &self.vocab.terms[id])?;
            write_u64(out, self.vocab.df[id])?;
            write_u64(out, self.vocab.cf[id])?;
        }
        write_u64(out, self.doc_names.len() as u64)?;
        for name in &self.doc_names {
            write_str(out, name)?;
        }
        for plist in &self.postings {
            write_u64(out, plist.len() as u64)?;
            for p in plist {
                write_u64(out, p.doc as u64)?;
                out.write_all(&p.tf.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut input = BufReader::new(file);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != INDEX_MAGIC {
            return Err(Error::format(path, "not an index file"));
        }
        let version = read_u32(&mut input).map_err(|e| Error::io(path, e))?;
        if version != INDEX_VERSION {
            return Err(Error::format(path, format!("unsupported index version {version}")));
        }
        Self::read_body(&mut input).map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => Error::format(path, e.to_string()),
            _ => Error::io(path, e),
        })
    }

    fn read_body<R: Read>(input: &mut R) -> std::io::Result<Self> {
        let invalid = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let n = read_u64(input)? as usize;
        let mut terms = Vec::with_capacity(n);
        let mut df = Vec::with_capacity(n);
        let mut cf = Vec::with_capacity(n);
        let mut ids = HashMap::with_capacity(n);
        for id in 0..n {
            let term = read_str(input)?;
            if ids.insert(term.clone(), id).is_some() {
                return Err(invalid("duplicate term"));
            }
            terms.push(term);
            df.push(read_u64(input)?);
            cf.push(read_u64(input)?);
        }
        let num_docs = read_u64(input)? as usize;
        let mut doc_names = Vec::with_capacity(num_docs);
        let mut doc_ids = HashMap::with_capacity(num_docs);
        for i in 0..num_docs {
            let name = read_str(input)?;
            if doc_ids.insert(name.clone(), i).is_some() {
                return Err(invalid("duplicate document id"));
            }
            doc_names.push(name);
        }
        let mut postings = Vec::with_capacity(n);
        let mut forward = vec![Vec::new(); num_docs];
        let mut doc_lens = vec![0u64; num_docs];
        for term in 0..n {
            let len = read_u64(input)? as usize;
            let mut plist = Vec::with_capacity(len);
            for _ in 0..len {
                let doc = read_u64(input)? as usize;
                let tf = read_u32(input)?;
                if doc >= num_docs {
                    return Err(invalid("posting refers to unknown document"));
                }
                forward[doc].push((term, tf));
                doc_lens[doc] += tf as u64;
                plist.push(Posting { doc, tf });
            }
            postings.push(plist);
        }
        let total_tokens = cf.iter().sum();
        let vocab = Vocabulary {
            terms,
            ids,
            df,
            cf,
            total_tokens,
        };
        Ok(Self::assemble(vocab, doc_names, doc_ids, doc_lens, postings, forward))
    }
}

fn write_u64<W: Write>(out: &mut W, v: u64) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn write_str<W: Write>(out: &mut W, s: &str) -> std::io::Result<()> {
    write_u64(out, s.len() as u64)?;
    out.write_all(s.as_bytes())
}

fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(input: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_str<R: Read>(input: &mut R) -> std::io::Result<String> {
    let len = read_u64(input)? as usize;
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Reads a `docid<TAB>text` corpus file. Blank lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `docid<TAB>text`"))?;
        docs.push((id.to_string(), text.to_string()));
    }
    Ok(docs)
}

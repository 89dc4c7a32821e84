//! Document collections, their forward and inverted indexes, and the
//! per-token topic assignments.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::sampler::RngStream;

pub type TermId = u32;
pub type TopicId = u32;

/// Marker for a token whose topic has not been drawn yet.
pub const UNASSIGNED: TopicId = TopicId::MAX;

/// Dense term-id <-> string mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, TermId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms<I: IntoIterator<Item = String>>(terms: I) -> Result<Self> {
        let mut vocab = Self::new();
        for (line, term) in terms.into_iter().enumerate() {
            if vocab.index.contains_key(&term) {
                return Err(Error::Parse {
                    line: line + 1,
                    msg: format!("duplicate term {term:?}"),
                });
            }
            vocab.push_or_get(&term);
        }
        Ok(vocab)
    }

    /// Placeholder names `t0..t{size-1}` for corpora loaded without a vocabulary file.
    pub fn numbered(size: usize) -> Self {
        let mut vocab = Self::new();
        for t in 0..size {
            vocab.push_or_get(&format!("t{t}"));
        }
        vocab
    }

    pub fn push_or_get(&mut self, term: &str) -> TermId {
        if let Some(&id) = self.index.get(term) {
            return id;
        }
        let id = self.terms.len() as TermId;
        self.terms.push(term.to_owned());
        self.index.insert(term.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, id: TermId) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, term: &str) -> Option<TermId> {
        self.index.get(term).copied()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// One term per line; line number minus one is the term id.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut terms = Vec::new();
        for line in reader.lines() {
            terms.push(line?.trim_end_matches('\r').to_owned());
        }
        Self::from_terms(terms)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for term in &self.terms {
            writeln!(out, "{term}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: u32,
    pub tokens: Vec<TermId>,
    pub assignments: Vec<TopicId>,
}

impl Document {
    pub fn new(doc_id: u32, tokens: Vec<TermId>) -> Self {
        let assignments = vec![UNASSIGNED; tokens.len()];
        Self {
            doc_id,
            tokens,
            assignments,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocabulary: Vocabulary,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, vocabulary: Vocabulary) -> Self {
        Self {
            documents,
            vocabulary,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.documents.iter().map(|d| d.len() as u64).sum()
    }

    /// Corpus frequency of every term id.
    pub fn term_frequencies(&self) -> Vec<u64> {
        let mut freq = vec![0u64; self.vocab_size()];
        for doc in &self.documents {
            for &t in &doc.tokens {
                freq[t as usize] += 1;
            }
        }
        freq
    }

    /// Draws every assignment uniformly from `0..num_topics`, visiting documents
    /// and tokens in order. Independent of how the corpus is later partitioned.
    pub fn initialize_assignments(&mut self, num_topics: usize, rng: &mut RngStream) {
        for doc in &mut self.documents {
            for z in &mut doc.assignments {
                *z = rng.inner().random_range(0..num_topics as TopicId);
            }
        }
    }

    pub fn check(&self, num_topics: Option<usize>) -> Result<()> {
        let v = self.vocab_size() as TermId;
        for doc in &self.documents {
            if doc.tokens.len() != doc.assignments.len() {
                return Err(Error::Invariant(format!(
                    "document {} has {} tokens but {} assignments",
                    doc.doc_id,
                    doc.tokens.len(),
                    doc.assignments.len()
                )));
            }
            if let Some(&t) = doc.tokens.iter().find(|&&t| t >= v) {
                return Err(Error::Invariant(format!(
                    "document {} references term {t} outside vocabulary of {v}",
                    doc.doc_id
                )));
            }
            if let Some(k) = num_topics {
                if let Some(&z) = doc.assignments.iter().find(|&&z| z as usize >= k) {
                    return Err(Error::Invariant(format!(
                        "document {} has assignment {z} outside 0..{k}",
                        doc.doc_id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn parse_header_value<I>(lines: &mut I, line_no: &mut usize, name: &str) -> Result<u64>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    loop {
        *line_no += 1;
        let line = match lines.next() {
            Some(l) => l?,
            None => {
                return Err(Error::Parse {
                    line: *line_no,
                    msg: format!("missing header value {name}"),
                })
            }
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        return trimmed.parse().map_err(|_| Error::Parse {
            line: *line_no,
            msg: format!("header value {name} is not an integer: {trimmed:?}"),
        });
    }
}

/// Reads the UCI bag-of-words layout: three header lines `D`, `V`, `NNZ`, then
/// `docID wordID count` triples with 1-based ids. Each count is expanded into
/// individual tokens in line order.
pub fn load_bag_of_words<R: BufRead>(reader: R, vocabulary: Option<Vocabulary>) -> Result<Corpus> {
    let mut lines = reader.lines();
    let mut line_no = 0usize;
    let num_docs = parse_header_value(&mut lines, &mut line_no, "D")?;
    let vocab_size = parse_header_value(&mut lines, &mut line_no, "V")?;
    let nnz = parse_header_value(&mut lines, &mut line_no, "NNZ")?;

    let vocabulary = match vocabulary {
        Some(v) if v.len() as u64 != vocab_size => {
            return Err(Error::Parse {
                line: 2,
                msg: format!(
                    "header declares V={vocab_size} but vocabulary file has {} terms",
                    v.len()
                ),
            })
        }
        Some(v) => v,
        None => Vocabulary::numbered(vocab_size as usize),
    };

    let mut tokens: Vec<Vec<TermId>> = vec![Vec::new(); num_docs as usize];
    let mut seen = 0u64;
    for line in lines {
        line_no += 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let mut next = |name: &str| -> Result<u64> {
            let field = fields.next().ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("missing {name}"),
            })?;
            field.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("{name} is not an integer: {field:?}"),
            })
        };
        let doc = next("docID")?;
        let word = next("wordID")?;
        let count = next("count")?;
        if fields.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: "trailing fields after count".into(),
            });
        }
        if doc == 0 || doc > num_docs {
            return Err(Error::Bounds {
                line: line_no,
                what: "docID",
                value: doc,
                max: num_docs,
            });
        }
        if word == 0 || word > vocab_size {
            return Err(Error::Bounds {
                line: line_no,
                what: "wordID",
                value: word,
                max: vocab_size,
            });
        }
        let term = (word - 1) as TermId;
        tokens[(doc - 1) as usize].extend(std::iter::repeat_n(term, count as usize));
        seen += 1;
    }
    if seen != nnz {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("header declares NNZ={nnz} but body has {seen} entries"),
        });
    }

    let documents = tokens
        .into_iter()
        .enumerate()
        .map(|(d, toks)| Document::new(d as u32, toks))
        .collect();
    Ok(Corpus::new(documents, vocabulary))
}

/// Writes a corpus in UCI bag-of-words layout. Token order is lost.
pub fn write_bag_of_words<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    let mut rows = Vec::new();
    for (d, doc) in corpus.documents.iter().enumerate() {
        let mut counts: Vec<(TermId, u64)> = Vec::new();
        let mut sorted = doc.tokens.clone();
        sorted.sort_unstable();
        for t in sorted {
            match counts.last_mut() {
                Some((last, c)) if *last == t => *c += 1,
                _ => counts.push((t, 1)),
            }
        }
        rows.extend(counts.into_iter().map(|(t, c)| (d + 1, t + 1, c)));
    }
    writeln!(out, "{}", corpus.num_docs())?;
    writeln!(out, "{}", corpus.vocab_size())?;
    writeln!(out, "{}", rows.len())?;
    for (d, t, c) in rows {
        writeln!(out, "{d} {t} {c}")?;
    }
    Ok(())
}

/// One document per line, whitespace tokenized. Term ids follow first occurrence.
pub fn load_raw_text<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut vocabulary = Vocabulary::new();
    let mut documents = Vec::new();
    for (d, line) in reader.lines().enumerate() {
        let line = line?;
        let tokens = line
            .split_whitespace()
            .map(|w| vocabulary.push_or_get(w))
            .collect();
        documents.push(Document::new(d as u32, tokens));
    }
    Ok(Corpus::new(documents, vocabulary))
}

/// Replaces every document by its sequence of consecutive token pairs, keeping
/// only pairs that occur at least `min_count` times corpus-wide. The new
/// vocabulary lists retained pairs in first-occurrence order as `"a b"`.
pub fn augment_bigrams(corpus: &Corpus, min_count: u64) -> Corpus {
    let min_count = min_count.max(1);
    let mut counts: HashMap<(TermId, TermId), u64> = HashMap::new();
    for doc in &corpus.documents {
        for pair in doc.tokens.windows(2) {
            *counts.entry((pair[0], pair[1])).or_default() += 1;
        }
    }

    let mut vocabulary = Vocabulary::new();
    let mut ids: HashMap<(TermId, TermId), TermId> = HashMap::new();
    let mut documents = Vec::with_capacity(corpus.num_docs());
    for doc in &corpus.documents {
        let mut tokens = Vec::new();
        for pair in doc.tokens.windows(2) {
            let key = (pair[0], pair[1]);
            if counts[&key] < min_count {
                continue;
            }
            let id = *ids.entry(key).or_insert_with(|| {
                let a = corpus.vocabulary.term(key.0).unwrap_or("?");
                let b = corpus.vocabulary.term(key.1).unwrap_or("?");
                vocabulary.push_or_get(&format!("{a} {b}"))
            });
            tokens.push(id);
        }
        documents.push(Document::new(doc.doc_id, tokens));
    }
    Corpus::new(documents, vocabulary)
}

/// A single token occurrence inside a partition: `doc` indexes the partition's
/// document list, `pos` the token within that document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Posting {
    pub doc: u32,
    pub pos: u32,
}

/// Term-major view of a partition's tokens. Terms are stored in ascending id
/// order and each term's postings are contiguous, ordered by (doc, pos).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InvertedIndex {
    terms: Vec<TermId>,
    offsets: Vec<usize>,
    postings: Vec<Posting>,
}

impl InvertedIndex {
    pub fn build(documents: &[Document]) -> Self {
        let max_term = documents
            .iter()
            .flat_map(|d| d.tokens.iter().copied())
            .max();
        let Some(max_term) = max_term else {
            return Self {
                terms: Vec::new(),
                offsets: vec![0],
                postings: Vec::new(),
            };
        };

        let mut counts = vec![0usize; max_term as usize + 1];
        for doc in documents {
            for &t in &doc.tokens {
                counts[t as usize] += 1;
            }
        }
        let mut terms = Vec::new();
        let mut offsets = vec![0];
        let mut cursor = vec![0usize; counts.len()];
        let mut total = 0;
        for (t, &c) in counts.iter().enumerate() {
            if c > 0 {
                cursor[t] = total;
                total += c;
                terms.push(t as TermId);
                offsets.push(total);
            }
        }
        let mut postings = vec![Posting { doc: 0, pos: 0 }; total];
        for (d, doc) in documents.iter().enumerate() {
            for (n, &t) in doc.tokens.iter().enumerate() {
                postings[cursor[t as usize]] = Posting {
                    doc: d as u32,
                    pos: n as u32,
                };
                cursor[t as usize] += 1;
            }
        }
        Self {
            terms,
            offsets,
            postings,
        }
    }

    pub fn postings(&self, term: TermId) -> &[Posting] {
        match self.terms.binary_search(&term) {
            Ok(i) => &self.postings[self.offsets[i]..self.offsets[i + 1]],
            Err(_) => &[],
        }
    }

    pub fn terms(&self) -> &[TermId] {
        &self.terms
    }

    pub fn iter(&self) -> impl Iterator<Item = (TermId, &[Posting])> + '_ {
        self.terms
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, &self.postings[self.offsets[i]..self.offsets[i + 1]]))
    }

    pub fn total_postings(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }
}

/// The documents owned by one worker, with their inverted index.
#[derive(Debug, Clone)]
pub struct DataPartition {
    pub id: usize,
    pub documents: Vec<Document>,
    pub inverted: InvertedIndex,
}

impl DataPartition {
    pub fn new(id: usize, mut documents: Vec<Document>) -> Self {
        documents.sort_by_key(|d| d.doc_id);
        let inverted = InvertedIndex::build(&documents);
        Self {
            id,
            documents,
            inverted,
        }
    }

    pub fn token_count(&self) -> u64 {
        self.documents.iter().map(|d| d.len() as u64).sum()
    }
}

/// Greedy largest-first bin packing of documents into `bins` groups by token
/// count. Returns document indexes per bin, each ascending.
pub fn balance_by_tokens(sizes: &[usize], bins: usize) -> Vec<Vec<usize>> {
    let bins = bins.max(1);
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut load = vec![0usize; bins];
    let mut groups = vec![Vec::new(); bins];
    for d in order {
        let target = (0..bins).min_by_key(|&m| (load[m], m)).unwrap_or(0);
        load[target] += sizes[d];
        groups[target].push(d);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups
}

/// Splits the corpus into `m` token-balanced partitions, each with its own
/// inverted index. `m` larger than the document count leaves some empty.
pub fn partition_documents(corpus: Corpus, m: usize) -> Result<Vec<DataPartition>> {
    if m == 0 {
        return Err(Error::Config("partition count must be at least 1".into()));
    }
    let sizes: Vec<usize> = corpus.documents.iter().map(Document::len).collect();
    let groups = balance_by_tokens(&sizes, m);
    let mut slots: Vec<Option<Document>> = corpus.documents.into_iter().map(Some).collect();
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(id, group)| {
            let docs = group
                .into_iter()
                .map(|d| slots[d].take().expect("document placed twice"))
                .collect();
            DataPartition::new(id, docs)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn uci(text: &str) -> Result<Corpus> {
        load_bag_of_words(text.as_bytes(), None)
    }

    #[test]
    fn loads_uci_and_expands_counts() {
        let corpus = uci("2\n3\n3\n1 1 2\n1 3 1\n2 2 1\n").unwrap();
        assert_eq!(corpus.num_docs(), 2);
        assert_eq!(corpus.vocab_size(), 3);
        assert_eq!(corpus.total_tokens(), 4);
        assert_eq!(corpus.documents[0].tokens, vec![0, 0, 2]);
        assert_eq!(corpus.documents[1].tokens, vec![1]);
        assert!(corpus.documents[0].assignments.iter().all(|&z| z == UNASSIGNED));
    }

    #[test]
    fn loads_empty_uci() {
        let corpus = uci("0\n0\n0\n").unwrap();
        assert_eq!(corpus.num_docs(), 0);
        assert_eq!(corpus.total_tokens(), 0);
    }

    #[test]
    fn uci_errors_carry_line_numbers() {
        match uci("1\n2\n1\n1 x 1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        match uci("1\n2\n1\n1 3 1\n") {
            Err(Error::Bounds { line, what, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(what, "wordID");
            }
            other => panic!("unexpected {other:?}"),
        }
        match uci("1\n2\n2\n1 1 1\n2 1 1\n") {
            Err(Error::Bounds { line, what, .. }) => {
                assert_eq!(line, 5);
                assert_eq!(what, "docID");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(uci("1\n2\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn uci_round_trips_through_writer() {
        let corpus = uci("3\n4\n4\n1 1 2\n1 4 1\n3 2 3\n3 3 1\n").unwrap();
        let mut buf = Vec::new();
        write_bag_of_words(&corpus, &mut buf).unwrap();
        let again = load_bag_of_words(buf.as_slice(), None).unwrap();
        assert_eq!(again, corpus);
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        assert!(Vocabulary::read("a\nb\na\n".as_bytes()).is_err());
        let v = Vocabulary::read("a\nb\n".as_bytes()).unwrap();
        assert_eq!(v.id("b"), Some(1));
    }

    #[test]
    fn bigrams_of_single_document() {
        let corpus = load_raw_text("a b c\n".as_bytes()).unwrap();
        let bi = augment_bigrams(&corpus, 1);
        assert_eq!(bi.vocab_size(), 2);
        assert_eq!(bi.documents[0].tokens, vec![0, 1]);
        assert_eq!(bi.vocabulary.term(0), Some("a b"));
        assert_eq!(bi.vocabulary.term(1), Some("b c"));
    }

    #[test]
    fn single_token_document_has_no_bigrams() {
        let corpus = load_raw_text("a\nb c\n".as_bytes()).unwrap();
        let bi = augment_bigrams(&corpus, 1);
        assert_eq!(bi.num_docs(), 2);
        assert!(bi.documents[0].is_empty());
    }

    #[test]
    fn bigram_vocabulary_matches_brute_force_counts() {
        let text = "a b c a b\nx a b y\nq a b\nc a b c\n";
        let corpus = load_raw_text(text.as_bytes()).unwrap();
        let bi = augment_bigrams(&corpus, 2);

        // Oracle: count every adjacent pair of words directly from the text.
        let mut oracle: HashMap<String, u64> = HashMap::new();
        for line in text.lines() {
            let words: Vec<&str> = line.split_whitespace().collect();
            for w in words.windows(2) {
                *oracle.entry(format!("{} {}", w[0], w[1])).or_default() += 1;
            }
        }
        let expected: BTreeSet<String> = oracle
            .iter()
            .filter(|(_, &c)| c >= 2)
            .map(|(p, _)| p.clone())
            .collect();
        let got: BTreeSet<String> = bi.vocabulary.terms().iter().cloned().collect();
        assert_eq!(got, expected);
        assert!(got.contains("a b"));

        let retained: u64 = oracle.values().filter(|&&c| c >= 2).sum();
        assert_eq!(bi.total_tokens(), retained);
    }

    #[test]
    fn inverted_index_of_small_document() {
        let docs = vec![Document::new(0, vec![0, 2, 0])];
        let idx = InvertedIndex::build(&docs);
        assert_eq!(
            idx.postings(0),
            &[Posting { doc: 0, pos: 0 }, Posting { doc: 0, pos: 2 }]
        );
        assert_eq!(idx.postings(2), &[Posting { doc: 0, pos: 1 }]);
        assert!(idx.postings(1).is_empty());
        assert_eq!(idx.terms(), &[0, 2]);
    }

    #[test]
    fn empty_partition_has_empty_index() {
        let idx = InvertedIndex::build(&[]);
        assert!(idx.is_empty());
        assert_eq!(idx.iter().count(), 0);
    }

    #[test]
    fn greedy_balancing_bound() {
        let sizes = [10, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1];
        let groups = balance_by_tokens(&sizes, 2);
        let loads: Vec<usize> = groups
            .iter()
            .map(|g| g.iter().map(|&d| sizes[d]).sum())
            .collect();
        let diff = loads[0].abs_diff(loads[1]);
        assert!(diff <= 10, "loads {loads:?}");
        assert_eq!(loads.iter().sum::<usize>(), 20);
    }

    #[test]
    fn partition_equal_docs_evenly() {
        let docs = (0..4).map(|d| Document::new(d, vec![0, 1, 2])).collect();
        let corpus = Corpus::new(docs, Vocabulary::numbered(3));
        let parts = partition_documents(corpus, 2).unwrap();
        assert_eq!(parts.len(), 2);
        assert!(parts.iter().all(|p| p.documents.len() == 2));
    }

    #[test]
    fn single_partition_is_identity() {
        let docs: Vec<Document> = (0..5).map(|d| Document::new(d, vec![d % 3; 2])).collect();
        let corpus = Corpus::new(docs.clone(), Vocabulary::numbered(3));
        let parts = partition_documents(corpus, 1).unwrap();
        assert_eq!(parts[0].documents, docs);
    }

    #[test]
    fn more_partitions_than_documents() {
        let corpus = Corpus::new(vec![Document::new(0, vec![0])], Vocabulary::numbered(1));
        let parts = partition_documents(corpus, 3).unwrap();
        assert_eq!(parts.len(), 3);
        assert_eq!(parts.iter().filter(|p| p.documents.is_empty()).count(), 2);
        assert!(partition_documents(Corpus::default(), 0).is_err());
    }
}

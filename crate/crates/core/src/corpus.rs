//! Phrase-pair corpora, vocabularies and word2vec-style embedding files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BattraeError, Result};
use crate::linalg::Matrix;

pub const UNK: &str = "<unk>";
pub const PAIR_SEPARATOR: &str = " ||| ";

/// Standard deviation of the normal used for every randomly initialized scalar.
pub const INIT_STD: f64 = 0.01;

/// Ordered token inventory for one language. `<unk>` always has id 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(UNK);
        v
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary::new();
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    /// Returns the id of `token`, adding it if unseen.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, falling back to `<unk>`.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(self.unk_id())
    }

    pub fn unk_id(&self) -> usize {
        self.index[UNK]
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Vocabulary::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PhrasePair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl PhrasePair {
    pub fn new(source: Vec<usize>, target: Vec<usize>) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(BattraeError::Input("phrase pair with an empty side".into()));
        }
        Ok(PhrasePair { source, target })
    }
}

/// A pair as written in a text file, before vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl RawPair {
    pub fn encode(&self, source_vocab: &Vocabulary, target_vocab: &Vocabulary) -> PhrasePair {
        PhrasePair {
            source: self.source.iter().map(|t| source_vocab.lookup(t)).collect(),
            target: self.target.iter().map(|t| target_vocab.lookup(t)).collect(),
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}{PAIR_SEPARATOR}{}",
            self.source.join(" "),
            self.target.join(" ")
        )
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub pairs: Vec<PhrasePair>,
    pub raw: Vec<RawPair>,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
}

/// Parses one `src tokens ||| tgt tokens` line. `line_no` is 1-based and only used for errors.
pub fn parse_pair_line(line: &str, line_no: usize) -> Result<RawPair> {
    let parse_err = |message: &str| BattraeError::Parse {
        line: line_no,
        message: message.to_owned(),
    };
    let mut parts = line.split(PAIR_SEPARATOR);
    let (src, tgt) = match (parts.next(), parts.next(), parts.next()) {
        (Some(s), Some(t), None) => (s, t),
        (_, None, _) => return Err(parse_err("missing ` ||| ` separator")),
        _ => return Err(parse_err("more than one ` ||| ` separator")),
    };
    let source: Vec<String> = src.split_whitespace().map(str::to_owned).collect();
    let target: Vec<String> = tgt.split_whitespace().map(str::to_owned).collect();
    if source.is_empty() {
        return Err(parse_err("empty source phrase"));
    }
    if target.is_empty() {
        return Err(parse_err("empty target phrase"));
    }
    Ok(RawPair { source, target })
}

pub fn parse_raw_pairs(text: &str) -> Result<Vec<RawPair>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| parse_pair_line(line.trim_end_matches('\r'), i + 1))
        .collect()
}

pub fn read_raw_pairs(path: &Path) -> Result<Vec<RawPair>> {
    let text = fs::read_to_string(path).map_err(|e| BattraeError::io(path, e))?;
    parse_raw_pairs(&text)
}

/// Builds both vocabularies from every token seen, in first-seen order.
pub fn build_corpus(raw: Vec<RawPair>) -> Result<Corpus> {
    if raw.is_empty() {
        return Err(BattraeError::Input(
            "corpus contains no phrase pairs".into(),
        ));
    }
    let mut source_vocab = Vocabulary::new();
    let mut target_vocab = Vocabulary::new();
    let pairs = raw
        .iter()
        .map(|p| PhrasePair {
            source: p.source.iter().map(|t| source_vocab.insert(t)).collect(),
            target: p.target.iter().map(|t| target_vocab.insert(t)).collect(),
        })
        .collect();
    Ok(Corpus {
        pairs,
        raw,
        source_vocab,
        target_vocab,
    })
}

pub fn parse_corpus(text: &str) -> Result<Corpus> {
    build_corpus(parse_raw_pairs(text)?)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    build_corpus(read_raw_pairs(path)?)
}

/// Word embeddings for one language: column `i` is the vector of token id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    matrix: Matrix,
}

impl EmbeddingTable {
    pub fn zeros(dim: usize, vocab_size: usize) -> Self {
        EmbeddingTable {
            matrix: Matrix::zeros(dim, vocab_size),
        }
    }

    pub fn from_matrix(matrix: Matrix) -> Self {
        EmbeddingTable { matrix }
    }

    pub fn random<R: Rng + ?Sized>(dim: usize, vocab_size: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let mut t = EmbeddingTable::zeros(dim, vocab_size);
        for v in t.matrix.as_mut_slice() {
            *v = normal.sample(rng);
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        self.matrix.column(id)
    }

    pub fn vector_mut(&mut self, id: usize) -> &mut [f64] {
        self.matrix.column_mut(id)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.matrix
    }
}

fn parse_embedding_text(
    text: &str,
    vocab: &Vocabulary,
    dim: usize,
) -> Result<Vec<Option<Vec<f64>>>> {
    let mut found: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if line_no == 1 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            let header_dim: usize = fields[1].parse().unwrap();
            if header_dim != dim {
                return Err(BattraeError::Dimension {
                    expected: dim,
                    found: header_dim,
                    context: "embedding file header".into(),
                });
            }
            continue;
        }
        let values = &fields[1..];
        if values.len() != dim {
            return Err(BattraeError::Dimension {
                expected: dim,
                found: values.len(),
                context: format!("embedding file line {line_no}"),
            });
        }
        let vector = values
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| BattraeError::Parse {
                        line: line_no,
                        message: format!("invalid vector entry `{v}`"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(id) = vocab.get(fields[0]) {
            found[id] = Some(vector);
        }
    }
    Ok(found)
}

/// Reads a word2vec text file. Tokens absent from the file, `<unk>` included,
/// are drawn from N(0, 0.01²) in id order.
pub fn load_pretrained_embeddings<R: Rng + ?Sized>(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| BattraeError::io(path, e))?;
    embeddings_from_text(&text, vocab, dim, rng)
}

pub fn embeddings_from_text<R: Rng + ?Sized>(
    text: &str,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<EmbeddingTable> {
    let found = parse_embedding_text(text, vocab, dim)?;
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut table = EmbeddingTable::zeros(dim, vocab.len());
    for (id, vector) in found.into_iter().enumerate() {
        let col = table.vector_mut(id);
        match vector {
            Some(v) => col.copy_from_slice(&v),
            None => col.iter_mut().for_each(|x| *x = normal.sample(rng)),
        }
    }
    Ok(table)
}

/// Serializes a table in word2vec text format with a `count dim` header.
/// Values use the shortest decimal that parses back to the same `f64`.
pub fn embeddings_to_text(table: &EmbeddingTable, vocab: &Vocabulary) -> String {
    let mut out = format!("{} {}\n", table.vocab_size(), table.dim());
    for (id, token) in vocab.tokens().iter().enumerate() {
        out.push_str(token);
        for v in table.vector(id) {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings(path: &Path, table: &EmbeddingTable, vocab: &Vocabulary) -> Result<()> {
    fs::write(path, embeddings_to_text(table, vocab)).map_err(|e| BattraeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_table_one_pair() {
        let c = parse_corpus("dui jingji xuezhe ||| to economists\n").unwrap();
        assert_eq!(c.pairs[0].source.len(), 3);
        assert_eq!(c.pairs[0].target.len(), 2);
        assert_eq!(c.source_vocab.len(), 4);
        assert_eq!(c.source_vocab.token(0), UNK);
    }

    #[test]
    fn minimal_pair() {
        let c = parse_corpus("a ||| b").unwrap();
        assert_eq!(c.pairs, vec![PhrasePair::new(vec![1], vec![1]).unwrap()]);
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_corpus("a ||| b\nno separator here\nc ||| d\n").unwrap_err();
        match err {
            BattraeError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_side_and_double_separator() {
        assert!(matches!(
            parse_corpus("a |||  \n"),
            Err(BattraeError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_corpus("a ||| b ||| c"),
            Err(BattraeError::Parse { line: 1, .. })
        ));
        assert!(matches!(parse_corpus(""), Err(BattraeError::Input(_))));
    }

    #[test]
    fn unknown_tokens_fall_back() {
        let v = Vocabulary::from_tokens(["x"]);
        assert_eq!(v.lookup("x"), 1);
        assert_eq!(v.lookup("nope"), v.unk_id());
    }

    #[test]
    fn pretrained_direct_readback() {
        let vocab = Vocabulary::from_tokens(["the"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = embeddings_from_text("the 0.1 0.2\n", &vocab, 2, &mut rng).unwrap();
        assert_eq!(t.vector(vocab.get("the").unwrap()), &[0.1, 0.2]);
        let unk = t.vector(vocab.unk_id());
        assert!(unk.iter().all(|v| *v != 0.0 && v.abs() < 0.1));
    }

    #[test]
    fn pretrained_with_header() {
        let vocab = Vocabulary::from_tokens(["a", "b"]);
        let row = |w: &str| {
            let vals: Vec<String> = (0..50).map(|i| format!("{}", i as f64 / 100.0)).collect();
            format!("{w} {}\n", vals.join(" "))
        };
        let text = format!("2 50\n{}{}", row("a"), row("b"));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = embeddings_from_text(&text, &vocab, 50, &mut rng).unwrap();
        assert_eq!(t.dim(), 50);
        assert_eq!(t.vector(1)[49], 0.49);
    }

    #[test]
    fn pretrained_dimension_errors() {
        let vocab = Vocabulary::from_tokens(["the"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            embeddings_from_text("the 0.1 0.2 0.3\n", &vocab, 2, &mut rng),
            Err(BattraeError::Dimension { .. })
        ));
        assert!(matches!(
            embeddings_from_text("3 5\nthe 0.1 0.2\n", &vocab, 2, &mut rng),
            Err(BattraeError::Dimension { .. })
        ));
        assert!(matches!(
            embeddings_from_text("the 0.1 zz\n", &vocab, 2, &mut rng),
            Err(BattraeError::Parse { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn embedding_text_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 12)) {
            let vocab = Vocabulary::from_tokens(["a", "b", "c"]);
            let m = Matrix::from_col_major(3, 4, values).unwrap();
            let table = EmbeddingTable::from_matrix(m);
            let text = embeddings_to_text(&table, &vocab);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let back = embeddings_from_text(&text, &vocab, 3, &mut rng).unwrap();
            prop_assert_eq!(back, table);
        }

        #[test]
        fn every_id_indexes_a_column(lines in proptest::collection::vec(
            ("[a-e]{1,2}( [a-e]{1,2}){0,3}", "[v-z]{1,2}( [v-z]{1,2}){0,3}"), 1..8)
        ) {
            let text: String = lines.iter().map(|(s, t)| format!("{s} ||| {t}\n")).collect();
            let c = parse_corpus(&text).unwrap();
            prop_assert_eq!(c.pairs.len(), lines.len());
            for p in &c.pairs {
                prop_assert!(p.source.iter().all(|&id| id < c.source_vocab.len()));
                prop_assert!(p.target.iter().all(|&id| id < c.target_vocab.len()));
            }
        }
    }
}

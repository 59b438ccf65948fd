//! Word embeddings: vocabulary, skip-gram with negative sampling, text interchange.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_MAX_VOCAB: usize = 50_000;
pub const DEFAULT_DIM: usize = 300;
/// OOV components are drawn from uniform(-OOV_RANGE, OOV_RANGE).
pub const OOV_RANGE: f32 = 0.25;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("{0}")]
    Training(String),
    #[error("{}: line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

/// Words ordered by (count descending, word ascending).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from (word, count) pairs; sorts and truncates to `max_size`.
    pub fn from_counts(counts: HashMap<String, u64>, max_size: usize) -> Self {
        let mut pairs: Vec<(String, u64)> = counts.into_iter().collect();
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        pairs.truncate(max_size);
        let index = pairs
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.clone(), i))
            .collect();
        let (words, counts) = pairs.into_iter().unzip();
        Self {
            words,
            counts,
            index,
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Index of an already-lowercased word.
    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }
}

/// Top `max_size` lowercased words by frequency, ties broken lexicographically.
pub fn build_vocab<I, T, S>(streams: I, max_size: usize) -> Vocabulary
where
    I: IntoIterator<Item = T>,
    T: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    for stream in streams {
        for tok in stream {
            *counts.entry(tok.as_ref().to_lowercase()).or_default() += 1;
        }
    }
    Vocabulary::from_counts(counts, max_size)
}

/// Vocabulary rows plus a deterministic, cached OOV policy.
#[derive(Debug)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    dim: usize,
    data: Vec<f32>,
    oov_seed: u64,
    oov_cache: RwLock<HashMap<String, Vec<f32>>>,
}

impl Clone for EmbeddingTable {
    fn clone(&self) -> Self {
        Self {
            vocab: self.vocab.clone(),
            dim: self.dim,
            data: self.data.clone(),
            oov_seed: self.oov_seed,
            oov_cache: RwLock::new(self.oov_cache.read().unwrap().clone()),
        }
    }
}

impl PartialEq for EmbeddingTable {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
            && self.dim == other.dim
            && self.data == other.data
            && self.oov_seed == other.oov_seed
    }
}

impl EmbeddingTable {
    pub fn new(vocab: Vocabulary, dim: usize, data: Vec<f32>, oov_seed: u64) -> Self {
        assert_eq!(data.len(), vocab.len() * dim, "matrix shape");
        Self {
            vocab,
            dim,
            data,
            oov_seed,
            oov_cache: RwLock::new(HashMap::new()),
        }
    }

    /// A table with no vocabulary; every word gets its OOV vector.
    pub fn random(dim: usize, oov_seed: u64) -> Self {
        Self::new(Vocabulary::default(), dim, Vec::new(), oov_seed)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed
    }

    pub fn set_oov_seed(&mut self, seed: u64) {
        self.oov_seed = seed;
        self.oov_cache.write().unwrap().clear();
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn oov_vector(&self, word: &str) -> Vec<f32> {
        let seed = self.oov_seed ^ crate::fnv64(word.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.dim)
            .map(|_| rng.gen_range(-OOV_RANGE..OOV_RANGE))
            .collect()
    }

    /// Copies the vector of `word` (lowercased) into `out`.
    pub fn lookup_into(&self, word: &str, out: &mut [f32]) {
        let word = word.to_lowercase();
        if let Some(i) = self.vocab.get(&word) {
            out.copy_from_slice(self.row(i));
            return;
        }
        if let Some(v) = self.oov_cache.read().unwrap().get(&word) {
            out.copy_from_slice(v);
            return;
        }
        let mut cache = self.oov_cache.write().unwrap();
        let v = cache.entry(word).or_insert_with_key(|w| self.oov_vector(w));
        out.copy_from_slice(v);
    }

    pub fn lookup(&self, word: &str) -> Vec<f32> {
        let mut v = vec![0.0; self.dim];
        self.lookup_into(word, &mut v);
        v
    }

    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(self.data.len() * 4 + 64);
        bytes.extend_from_slice(&(self.dim as u64).to_le_bytes());
        bytes.extend_from_slice(&self.oov_seed.to_le_bytes());
        for w in &self.vocab.words {
            bytes.extend_from_slice(w.as_bytes());
            bytes.push(0);
        }
        for x in &self.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        crate::fingerprint(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipGramParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f32,
    /// Frequent-word subsampling threshold; 0 disables it.
    pub subsample: f64,
    pub max_vocab: usize,
    pub seed: u64,
}

impl Default for SkipGramParams {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            subsample: 1e-3,
            max_vocab: DEFAULT_MAX_VOCAB,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SkipGramReport {
    /// Mean negative-sampling loss per pair, one value per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean loss over consecutive chunks of 1,000 pairs in the first epoch.
    pub first_epoch_trace: Vec<f64>,
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Negative-sampling skip-gram; returns the input-side vectors.
pub fn train_skipgram<S: AsRef<str>>(
    corpus: &[Vec<S>],
    params: &SkipGramParams,
) -> Result<(EmbeddingTable, SkipGramReport), EmbedError> {
    if params.dim == 0 {
        return Err(EmbedError::Training("dim must be at least 1".into()));
    }
    let vocab = build_vocab(corpus.iter().map(|s| s.iter()), params.max_vocab);
    if vocab.is_empty() {
        return Err(EmbedError::Training("empty vocabulary".into()));
    }
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| {
            s.iter()
                .filter_map(|w| vocab.get(&w.as_ref().to_lowercase()))
                .collect()
        })
        .collect();
    let total: u64 = vocab.counts().iter().sum();
    let dim = params.dim;
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // Unigram^0.75 cumulative distribution for negatives.
    let mut cdf: Vec<f64> = Vec::with_capacity(v);
    let mut acc = 0.0;
    for &c in vocab.counts() {
        acc += (c as f64).powf(0.75);
        cdf.push(acc);
    }
    let keep_prob: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| {
            if params.subsample <= 0.0 {
                return 1.0;
            }
            let f = c as f64 / total as f64;
            ((f / params.subsample).sqrt() + 1.0) * params.subsample / f
        })
        .collect();

    let mut input: Vec<f32> = (0..v * dim)
        .map(|_| (rng.gen::<f32>() - 0.5) / dim as f32)
        .collect();
    let mut output = vec![0.0f32; v * dim];
    let mut grad = vec![0.0f32; dim];

    let planned = (total as f64 * params.epochs as f64).max(1.0);
    let mut seen = 0u64;
    let mut report = SkipGramReport::default();

    for epoch in 0..params.epochs {
        let mut loss_sum = 0.0f64;
        let mut pairs = 0u64;
        let mut chunk_sum = 0.0f64;
        let mut chunk_n = 0u64;
        for sent in &sentences {
            let kept: Vec<usize> = sent
                .iter()
                .copied()
                .filter(|&w| rng.gen::<f64>() < keep_prob[w])
                .collect();
            for (pos, &center) in kept.iter().enumerate() {
                seen += 1;
                let lr = params.lr * (1.0 - seen as f32 / planned as f32).max(1e-4);
                let b = rng.gen_range(1..=params.window.max(1));
                let lo = pos.saturating_sub(b);
                let hi = (pos + b).min(kept.len() - 1);
                for (cpos, &context) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    let cin = &mut input[center * dim..(center + 1) * dim];
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let mut pair_loss = 0.0f64;
                    for n in 0..=params.negatives {
                        let (target, label) = if n == 0 {
                            (context, 1.0f32)
                        } else {
                            let r = rng.gen::<f64>() * acc;
                            let t = cdf.partition_point(|&c| c < r).min(v - 1);
                            if t == context {
                                continue;
                            }
                            (t, 0.0f32)
                        };
                        let tout = &mut output[target * dim..(target + 1) * dim];
                        let dot: f32 = cin.iter().zip(tout.iter()).map(|(a, b)| a * b).sum();
                        let s = sigmoid(dot);
                        let p = if label > 0.5 { s } else { 1.0 - s };
                        pair_loss -= (p.max(1e-7) as f64).ln();
                        let g = (label - s) * lr;
                        for k in 0..dim {
                            grad[k] += g * tout[k];
                            tout[k] += g * cin[k];
                        }
                    }
                    for k in 0..dim {
                        cin[k] += grad[k];
                    }
                    loss_sum += pair_loss;
                    pairs += 1;
                    if epoch == 0 {
                        chunk_sum += pair_loss;
                        chunk_n += 1;
                        if chunk_n == 1000 {
                            report.first_epoch_trace.push(chunk_sum / chunk_n as f64);
                            chunk_sum = 0.0;
                            chunk_n = 0;
                        }
                    }
                }
            }
        }
        if epoch == 0 && chunk_n > 0 {
            report.first_epoch_trace.push(chunk_sum / chunk_n as f64);
        }
        let mean = loss_sum / pairs.max(1) as f64;
        if !mean.is_finite() {
            return Err(EmbedError::Training(format!("non-finite loss in epoch {epoch}")));
        }
        report.epoch_loss.push(mean);
    }
    Ok((EmbeddingTable::new(vocab, dim, input, params.seed), report))
}

/// Writes `<vocab_size> <dim>` then one `word v1 .. vd` line per row.
pub fn store_embedding_text(table: &EmbeddingTable, path: &Path) -> Result<(), EmbedError> {
    let io = |e: std::io::Error| EmbedError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "{} {}", table.vocab.len(), table.dim).map_err(io)?;
    for (i, word) in table.vocab.words.iter().enumerate() {
        write!(w, "{word}").map_err(io)?;
        for x in table.row(i) {
            write!(w, " {x}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads the text interchange format. Loaded words keep file order; their
/// counts are synthetic ranks (size - position) so the ordering invariant holds.
pub fn load_embedding_text(path: &Path, oov_seed: u64) -> Result<EmbeddingTable, EmbedError> {
    let file = std::fs::File::open(path).map_err(|e| EmbedError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let parse = |line: usize, message: String| EmbedError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| parse(1, e.to_string()))?,
        None => return Err(parse(1, "missing `<vocab_size> <dim>` header".into())),
    };
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| parse(1, format!("bad header: {e}")))?;
    let [size, dim] = nums[..] else {
        return Err(parse(1, "header needs exactly two integers".into()));
    };
    let mut words = Vec::with_capacity(size);
    let mut data = Vec::with_capacity(size * dim);
    let mut index = HashMap::with_capacity(size);
    let mut lineno = 1;
    for line in lines {
        lineno += 1;
        let line = line.map_err(|e| parse(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if words.len() == size {
            return Err(parse(lineno, format!("more than the declared {size} vectors")));
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().unwrap().to_string();
        let before = data.len();
        for f in fields {
            data.push(
                f.parse::<f32>()
                    .map_err(|e| parse(lineno, format!("bad value {f:?}: {e}")))?,
            );
        }
        if data.len() - before != dim {
            return Err(parse(
                lineno,
                format!("{} values, declared dimension {dim}", data.len() - before),
            ));
        }
        if index.insert(word.clone(), words.len()).is_some() {
            return Err(parse(lineno, format!("duplicate word {word:?}")));
        }
        words.push(word);
    }
    if words.len() != size {
        return Err(parse(
            lineno + 1,
            format!("declared {size} vectors, found {}", words.len()),
        ));
    }
    let counts = (0..size as u64).map(|i| size as u64 - i).collect();
    let vocab = Vocabulary {
        words,
        counts,
        index,
    };
    Ok(EmbeddingTable::new(vocab, dim, data, oov_seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f32], b: &[f32]) -> f32 {
        let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
        dot / (na * nb)
    }

    fn toy_corpus() -> Vec<Vec<String>> {
        let mut c = Vec::new();
        for _ in 0..200 {
            c.push("x y x y x y x y".split(' ').map(String::from).collect());
            c.push("p q p q p q p q".split(' ').map(String::from).collect());
        }
        c
    }

    fn toy_params() -> SkipGramParams {
        SkipGramParams {
            dim: 300,
            window: 2,
            negatives: 2,
            epochs: 3,
            lr: 0.025,
            subsample: 0.0,
            max_vocab: 100,
            seed: 42,
        }
    }

    #[test]
    fn vocab_examples() {
        let v = build_vocab([vec!["a", "a", "b"]], 10);
        assert_eq!(v.words(), ["a", "b"]);
        assert_eq!(v.counts(), [2, 1]);
        let v = build_vocab(Vec::<Vec<&str>>::new(), 10);
        assert!(v.is_empty());
        let v = build_vocab([vec!["B", "b", "A"]], 10);
        assert_eq!(v.words(), ["b", "a"]);
    }

    #[test]
    fn vocab_cap_uses_lexicographic_ties() {
        let words: Vec<String> = (0..60_001).map(|i| format!("w{i:06}")).collect();
        let v = build_vocab([words.iter()], DEFAULT_MAX_VOCAB);
        assert_eq!(v.len(), 50_000);
        let mut expected = words.clone();
        expected.sort();
        expected.truncate(50_000);
        assert_eq!(v.words(), &expected[..]);
        assert!(v.counts().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn skipgram_separates_disjoint_contexts() {
        let (t, report) = train_skipgram(&toy_corpus(), &toy_params()).unwrap();
        for w in ["x", "y", "p", "q"] {
            assert_eq!(t.lookup(w).len(), 300);
        }
        let (x, y, p) = (t.lookup("x"), t.lookup("y"), t.lookup("p"));
        assert!(cosine(&x, &y) > cosine(&x, &p));
        let tr = &report.first_epoch_trace;
        assert!(tr.len() > 2);
        assert!(tr.last().unwrap() < tr.first().unwrap());
    }

    #[test]
    fn skipgram_is_deterministic() {
        let (a, _) = train_skipgram(&toy_corpus(), &toy_params()).unwrap();
        let (b, _) = train_skipgram(&toy_corpus(), &toy_params()).unwrap();
        assert_eq!(a.data().len(), b.data().len());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let empty: Vec<Vec<String>> = vec![vec![]];
        assert!(train_skipgram(&empty, &toy_params()).is_err());
    }

    #[test]
    fn text_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "2 3\na 1 0 0\nb 0 1 0\n").unwrap();
        let t = load_embedding_text(&p, 0).unwrap();
        assert_eq!((t.vocab().len(), t.dim()), (2, 3));
        assert_eq!(t.lookup("b"), [0.0, 1.0, 0.0]);

        std::fs::write(&p, "5 2\na 1 0\nb 0 1\nc 1 1\nd 0 0\n").unwrap();
        match load_embedding_text(&p, 0) {
            Err(EmbedError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "1 2\na 1 0 0\n").unwrap();
        assert!(matches!(
            load_embedding_text(&p, 0),
            Err(EmbedError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let mut params = toy_params();
        params.dim = 8;
        let (t, _) = train_skipgram(&toy_corpus(), &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        store_embedding_text(&t, &p).unwrap();
        let back = load_embedding_text(&p, t.oov_seed()).unwrap();
        assert_eq!(back.vocab().words(), t.vocab().words());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn oov_policy() {
        let t = EmbeddingTable::random(300, 7);
        let a = t.lookup("frobnicate");
        assert_eq!(a, t.lookup("frobnicate"));
        assert_eq!(a, t.lookup("FROBNICATE"));
        assert_ne!(a, t.lookup("grault"));
        assert!(a.iter().all(|x| x.abs() <= OOV_RANGE));
        // Same seed, fresh table: same draws.
        assert_eq!(a, EmbeddingTable::random(300, 7).lookup("frobnicate"));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "1 2\nword 0.5 -0.5\n").unwrap();
        let t = load_embedding_text(&p, 0).unwrap();
        assert_eq!(t.lookup("word"), [0.5, -0.5]);
    }
}

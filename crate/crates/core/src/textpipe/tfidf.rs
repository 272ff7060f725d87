use std::collections::{BTreeMap, HashMap};

use crate::dataset::{class_distribution, compute_class_weights, MemeSample};
use crate::error::{Error, Result};
use crate::tasks::Task;

use super::preprocess_text;

/// Sparse row: sorted `(feature, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

/// Raw-count TF with smoothed IDF `ln((1 + N) / (1 + df)) + 1`, rows
/// L2-normalised.
#[derive(Debug, Clone)]
pub struct TfidfVectorizer {
    index: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl TfidfVectorizer {
    pub fn fit(docs: &[Vec<String>]) -> Result<Self> {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        if df.is_empty() {
            return Err(Error::Data("TF-IDF vocabulary is empty after preprocessing".into()));
        }
        let n = docs.len() as f64;
        let mut index = HashMap::with_capacity(df.len());
        let mut idf = Vec::with_capacity(df.len());
        for (i, (t, d)) in df.into_iter().enumerate() {
            index.insert(t.to_string(), i);
            idf.push(((1.0 + n) / (1.0 + d as f64)).ln() + 1.0);
        }
        Ok(TfidfVectorizer { index, idf })
    }

    pub fn num_features(&self) -> usize {
        self.idf.len()
    }

    /// Unknown tokens are ignored; an empty document maps to the zero row.
    pub fn transform(&self, doc: &[String]) -> SparseRow {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in doc {
            if let Some(&i) = self.index.get(t) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut row: SparseRow = counts.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|(_, v)| *v /= norm);
        }
        row
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LogRegOptions {
    fn default() -> Self {
        LogRegOptions {
            iterations: 300,
            learning_rate: 1.0,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression fit by full-batch gradient descent on
/// class-weighted cross entropy. Starts from zero weights, so the result
/// depends only on the data.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    /// `features × classes`, followed by one bias row.
    weights: Vec<Vec<f64>>,
    num_classes: usize,
}

impl LogisticRegression {
    pub fn fit(
        rows: &[SparseRow],
        labels: &[usize],
        num_features: usize,
        class_weights: &[f64],
        opts: LogRegOptions,
    ) -> Self {
        let k = class_weights.len();
        let mut weights = vec![vec![0.0; k]; num_features + 1];
        let n = rows.len().max(1) as f64;
        for _ in 0..opts.iterations {
            let mut grad = vec![vec![0.0; k]; num_features + 1];
            for (row, &y) in rows.iter().zip(labels) {
                let p = softmax(&logits(&weights, row, k));
                let w = class_weights[y] / n;
                for c in 0..k {
                    let d = w * (p[c] - f64::from(c == y));
                    for &(f, v) in row {
                        grad[f][c] += d * v;
                    }
                    grad[num_features][c] += d;
                }
            }
            for (wr, gr) in weights.iter_mut().zip(&grad).take(num_features) {
                for (w, g) in wr.iter_mut().zip(gr) {
                    *w -= opts.learning_rate * (g + opts.l2 * *w);
                }
            }
            for (w, g) in weights[num_features].iter_mut().zip(&grad[num_features]) {
                *w -= opts.learning_rate * g;
            }
        }
        LogisticRegression {
            weights,
            num_classes: k,
        }
    }

    pub fn predict_proba(&self, row: &SparseRow) -> Vec<f64> {
        softmax(&logits(&self.weights, row, self.num_classes))
    }

    /// Argmax with ties to the lower class.
    pub fn predict(&self, row: &SparseRow) -> usize {
        argmax(&self.predict_proba(row))
    }
}

fn logits(weights: &[Vec<f64>], row: &SparseRow, k: usize) -> Vec<f64> {
    let bias = &weights[weights.len() - 1];
    let mut z = bias.clone();
    for &(f, v) in row {
        for c in 0..k {
            z[c] += weights[f][c] * v;
        }
    }
    z
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// TF-IDF features and a class-weighted logistic regression, trained on
/// `train` and applied to `eval`. Returns one class per evaluation sample.
pub fn tfidf_logreg_baseline(
    train: &[MemeSample],
    eval: &[MemeSample],
    task: Task,
    opts: LogRegOptions,
) -> Result<Vec<usize>> {
    let docs: Vec<Vec<String>> = train.iter().map(|s| preprocess_text(&s.text)).collect();
    let vectorizer = TfidfVectorizer::fit(&docs)?;
    let rows: Vec<SparseRow> = docs.iter().map(|d| vectorizer.transform(d)).collect();
    let labels: Vec<usize> = train.iter().map(|s| task.label(&s.labels)).collect();
    let weights = compute_class_weights(&class_distribution(train, task))?;
    let model = LogisticRegression::fit(&rows, &labels, vectorizer.num_features(), &weights.weights, opts);
    Ok(eval
        .iter()
        .map(|s| model.predict(&vectorizer.transform(&preprocess_text(&s.text))))
        .collect())
}

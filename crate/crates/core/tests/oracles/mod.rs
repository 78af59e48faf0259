//! Brute-force reference implementations used to check the library.
#![allow(dead_code)]

use std::cmp::Ordering;

/// (recall, ndcg, mrr) at cut `k` for a ranking of plain ids.
pub fn metrics(ranked: &[u32], gt: &[u32], k: usize) -> (f64, f64, f64) {
    let rel: Vec<bool> = ranked.iter().take(k).map(|r| gt.contains(r)).collect();
    let hits = rel.iter().filter(|&&r| r).count();
    let recall = hits as f64 / gt.len() as f64;
    let mut dcg = 0.0;
    for (i, &r) in rel.iter().enumerate() {
        if r {
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for i in 0..gt.len().min(k) {
        idcg += 1.0 / ((i + 2) as f64).log2();
    }
    let mrr = match rel.iter().position(|&r| r) {
        Some(i) => 1.0 / (i + 1) as f64,
        None => 0.0,
    };
    (recall, dcg / idcg, mrr)
}

/// Dedup by maximum score, then order by score descending, ties by first
/// appearance, truncated to `l_out`.
pub fn rank(pool: &[(u32, f64)], l_out: usize) -> Vec<(u32, f64)> {
    let mut merged: Vec<(u32, f64)> = Vec::new();
    for &(id, s) in pool {
        match merged.iter_mut().find(|(m, _)| *m == id) {
            Some(entry) => {
                if s > entry.1 {
                    entry.1 = s;
                }
            }
            None => merged.push((id, s)),
        }
    }
    // insertion sort keeps equal scores in first-appearance order
    let mut out: Vec<(u32, f64)> = Vec::new();
    for e in merged {
        let at = out.iter().position(|o| o.1 < e.1).unwrap_or(out.len());
        out.insert(at, e);
    }
    out.truncate(l_out);
    out
}

/// Insertion/deletion edit distance by dynamic programming.
pub fn indel_distance(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            d[i][j] = if a[i - 1] == b[j - 1] { d[i - 1][j - 1] } else { 1 + d[i - 1][j].min(d[i][j - 1]) };
        }
    }
    d[a.len()][b.len()]
}

/// Similarity as an exact fraction `(matched, total)`.
pub fn indel_fraction(a: &str, b: &str) -> (usize, usize) {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let total = a.len() + b.len();
    if total == 0 {
        return (1, 1);
    }
    (total - indel_distance(&a, &b), total)
}

pub fn cmp_fraction(x: (usize, usize), y: (usize, usize)) -> Ordering {
    (x.0 * y.1).cmp(&(y.0 * x.1))
}

/// Lowercase, single spaces, no surrounding punctuation other than brackets.
pub fn normalize(s: &str) -> String {
    let words: Vec<String> = s.split_whitespace().map(str::to_lowercase).collect();
    let trimmable =
        |c: char| c.is_whitespace() || (c.is_ascii_punctuation() && !"()[]".contains(c)) || "“”‘’«»…".contains(c);
    words.join(" ").trim_matches(trimmable).to_string()
}

pub fn strip_year(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let n = chars.len();
    if n >= 6 && chars[n - 1] == ')' && chars[n - 6] == '(' && chars[n - 5..n - 1].iter().all(|c| c.is_ascii_digit()) {
        chars[..n - 6].iter().collect::<String>().trim_end().to_string()
    } else {
        s.to_string()
    }
}

/// Best title by similarity (lowest index on ties) if it reaches `threshold`.
pub fn best_match(titles: &[String], raw: &str, threshold: f64) -> Option<usize> {
    let q = normalize(raw);
    if q.is_empty() {
        return None;
    }
    let mut best: Option<(usize, (usize, usize))> = None;
    for (i, t) in titles.iter().enumerate() {
        let full = normalize(t);
        let a = indel_fraction(&q, &full);
        let b = indel_fraction(&q, &strip_year(&full));
        let sim = if cmp_fraction(a, b) == Ordering::Less { b } else { a };
        if best.is_none_or(|(_, s)| cmp_fraction(sim, s) == Ordering::Greater) {
            best = Some((i, sim));
        }
    }
    let (i, (m, t)) = best?;
    (m as f64 / t as f64 >= threshold).then_some(i)
}

use crate::error::{Error, Result};

/// Decides whether two answers mean the same thing.
pub trait EquivalenceOracle: Sync {
    fn equivalent(&self, a: &str, b: &str) -> Result<bool>;
}

impl<F> EquivalenceOracle for F
where
    F: Fn(&str, &str) -> bool + Sync,
{
    fn equivalent(&self, a: &str, b: &str) -> Result<bool> {
        Ok(self(a, b))
    }
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, replaces punctuation with spaces, drops leading articles and
/// collapses whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c.to_lowercase().next().unwrap_or(c)
            } else if c == '\'' || c == '\u{2019}' {
                // keep contractions together: "don't" -> "dont"
                '\0'
            } else {
                ' '
            }
        })
        .filter(|&c| c != '\0')
        .collect();
    let mut words: Vec<&str> = lowered.split_whitespace().collect();
    while words.len() > 1 && ARTICLES.contains(&words[0]) {
        words.remove(0);
    }
    words.join(" ")
}

/// Default oracle: normalised answers are equivalent when either contains
/// the other.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContainmentOracle;

impl EquivalenceOracle for ContainmentOracle {
    fn equivalent(&self, a: &str, b: &str) -> Result<bool> {
        let (a, b) = (normalize_answer(a), normalize_answer(b));
        if a.is_empty() || b.is_empty() {
            return Ok(a == b);
        }
        Ok(a.contains(&b) || b.contains(&a))
    }
}

/// Greedy clustering in input order: each answer joins the first cluster
/// whose representative (first member) it matches, else opens a new one.
pub fn cluster_semantic(answers: &[String], oracle: &dyn EquivalenceOracle) -> Result<Vec<usize>> {
    if answers.is_empty() {
        return Err(Error::Input("no answers to cluster".into()));
    }
    let mut representatives: Vec<usize> = Vec::new();
    let mut assignment = Vec::with_capacity(answers.len());
    for (i, ans) in answers.iter().enumerate() {
        let mut found = None;
        for (c, &rep) in representatives.iter().enumerate() {
            if oracle.equivalent(&answers[rep], ans)? {
                found = Some(c);
                break;
            }
        }
        let c = found.unwrap_or_else(|| {
            representatives.push(i);
            representatives.len() - 1
        });
        assignment.push(c);
    }
    Ok(assignment)
}

/// Sizes of each cluster, indexed by cluster id.
pub fn cluster_sizes(assignment: &[usize]) -> Vec<usize> {
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0; k];
    for &c in assignment {
        sizes[c] += 1;
    }
    sizes
}

/// `−Σ p ln p` over cluster frequencies, in nats.
pub fn semantic_entropy(assignment: &[usize]) -> Result<f64> {
    if assignment.is_empty() {
        return Err(Error::Input("empty cluster assignment".into()));
    }
    let n = assignment.len() as f64;
    Ok(cluster_sizes(assignment)
        .into_iter()
        .filter(|&s| s > 0)
        .map(|s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0))
}

/// `se / ln n`, clamped to [0, 1].
pub fn normalize_su(se: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Input(format!(
            "need at least 2 samples to normalise, got {n}"
        )));
    }
    let max = (n as f64).ln();
    if !(se >= 0.0) || se > max + 1e-9 {
        return Err(Error::Input(format!("entropy {se} outside [0, ln {n}]")));
    }
    Ok((se / max).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalisation() {
        assert_eq!(normalize_answer("  The  Harlem River! "), "harlem river");
        assert_eq!(normalize_answer("I don't know."), "i dont know");
        assert_eq!(normalize_answer("the"), "the");
    }

    #[test]
    fn identical_strings_one_cluster() {
        let a = strings(&["Paris."; 10]);
        assert_eq!(
            cluster_semantic(&a, &ContainmentOracle).unwrap(),
            vec![0; 10]
        );
    }

    #[test]
    fn distinct_strings_are_singletons() {
        let a = strings(&["Paris", "London", "Rome", "Oslo"]);
        assert_eq!(
            cluster_semantic(&a, &ContainmentOracle).unwrap(),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn containment_joins_hedged_variant() {
        let a = strings(&["It is Paris.", "Perhaps it is Paris.", "It is Rome."]);
        assert_eq!(
            cluster_semantic(&a, &ContainmentOracle).unwrap(),
            vec![0, 0, 1]
        );
    }

    #[test]
    fn entropy_extremes() {
        assert_eq!(semantic_entropy(&[0; 10]).unwrap(), 0.0);
        let singletons: Vec<usize> = (0..10).collect();
        assert!((semantic_entropy(&singletons).unwrap() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn normalise_su_cases() {
        assert!((normalize_su(10f64.ln(), 10).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(normalize_su(0.0, 10).unwrap(), 0.0);
        assert!((normalize_su(1.42, 10).unwrap() - 0.6167).abs() < 1e-3);
        assert!(matches!(normalize_su(0.0, 1), Err(Error::Input(_))));
    }
}

use super::EvalError;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

/// Relevance grades for one query, keyed by video id.
pub type Grades = BTreeMap<String, u32>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// `2^r - 1`
    #[default]
    Exp,
    /// `r`
    Linear,
}

impl Gain {
    pub fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Exp => 2f64.powi(grade as i32) - 1.0,
            Gain::Linear => f64::from(grade),
        }
    }
}

impl std::str::FromStr for Gain {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp" => Ok(Gain::Exp),
            "linear" => Ok(Gain::Linear),
            other => Err(EvalError::InvalidConfig(format!("unknown gain {other:?}"))),
        }
    }
}

/// Top-`k` prefix of `ranking` with repeated ids dropped (only the first
/// occurrence counts).
fn top_k<S: AsRef<str>>(ranking: &[S], k: usize) -> Vec<&str> {
    let mut seen = HashSet::new();
    ranking
        .iter()
        .map(AsRef::as_ref)
        .filter(|id| seen.insert(*id))
        .take(k)
        .collect()
}

/// nDCG at cutoff `k`; 0 when no document has a positive grade or `k` is 0.
pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], rels: &Grades, k: usize, gain: Gain) -> f64 {
    let dcg: f64 = top_k(ranking, k)
        .iter()
        .enumerate()
        .map(|(i, id)| gain.apply(rels.get(*id).copied().unwrap_or(0)) / ((i + 2) as f64).log2())
        .fold(0.0, |a, b| a + b);
    let mut ideal: Vec<u32> = rels.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.apply(g) / ((i + 2) as f64).log2())
        .fold(0.0, |a, b| a + b);
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Fraction of the positively graded documents found in the top `k`.
pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], rels: &Grades, k: usize) -> Result<f64, EvalError> {
    let relevant = rels.values().filter(|&&g| g > 0).count();
    if relevant == 0 {
        return Err(EvalError::NoRelevant);
    }
    let hits = top_k(ranking, k)
        .iter()
        .filter(|id| rels.get(**id).is_some_and(|&g| g > 0))
        .count();
    Ok(hits as f64 / relevant as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grades(pairs: &[(&str, u32)]) -> Grades {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn hand_fixture() {
        let g = grades(&[("a", 1), ("b", 0), ("c", 2)]);
        let n = ndcg_at_k(&["a", "b", "c"], &g, 10, Gain::Exp);
        let expected = 2.5 / (3.0 + 1.0 / 3f64.log2());
        assert!((n - expected).abs() < 1e-12);
        assert!((n - 0.688_528_880_940_466_6).abs() < 1e-9);
    }

    #[test]
    fn ideal_and_empty() {
        let g = grades(&[("a", 3), ("b", 1)]);
        assert_eq!(ndcg_at_k(&["a", "b", "x"], &g, 10, Gain::Exp), 1.0);
        assert_eq!(ndcg_at_k(&["x", "y"], &g, 10, Gain::Exp), 0.0);
        assert_eq!(ndcg_at_k::<&str>(&[], &g, 10, Gain::Exp), 0.0);
        assert_eq!(ndcg_at_k(&["a"], &grades(&[("a", 0)]), 10, Gain::Exp), 0.0);
    }

    #[test]
    fn recall_counts() {
        let g = grades(&[("a", 1), ("c", 2), ("d", 1)]);
        let r = recall_at_k(&["a", "b", "c"], &g, 10).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            recall_at_k(&["a"], &grades(&[("a", 0)]), 10),
            Err(EvalError::NoRelevant)
        ));
    }

    #[test]
    fn duplicates_count_once() {
        let g = grades(&[("a", 1)]);
        assert_eq!(ndcg_at_k(&["a", "a"], &g, 10, Gain::Exp), 1.0);
        assert_eq!(recall_at_k(&["x", "x", "a"], &g, 2).unwrap(), 1.0);
    }

    #[test]
    fn linear_gain() {
        let g = grades(&[("a", 1), ("c", 2)]);
        let n = ndcg_at_k(&["a", "b", "c"], &g, 10, Gain::Linear);
        let expected = (1.0 + 2.0 / 4f64.log2()) / (2.0 + 1.0 / 3f64.log2());
        assert!((n - expected).abs() < 1e-12);
    }
}

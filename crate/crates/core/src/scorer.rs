//! Per-response precision, recall and F1@K; per-domain K, VeriScore and
//! VerRatio.

use std::collections::HashMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verifier::BinaryLabel;

pub type Rational = Ratio<u64>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("cannot compute K from an empty list of claim counts")]
    EmptyCounts,
    #[error("no factual claims in domain")]
    ZeroK,
    #[error("supported count {supported} exceeds claim count {claims}")]
    SupportedExceedsClaims { supported: usize, claims: usize },
    #[error("claim {0} has no verification label")]
    MissingLabel(String),
    #[error("invalid K value {0:?}")]
    BadK(String),
}

pub fn to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Parses `32`, `20.5` or `41/2` into a positive rational.
pub fn parse_rational(s: &str) -> Result<Rational, ScoreError> {
    let bad = || ScoreError::BadK(s.to_string());
    let s = s.trim();
    let r = if let Some((n, d)) = s.split_once('/') {
        let n: u64 = n.trim().parse().map_err(|_| bad())?;
        let d: u64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        Rational::new(n, d)
    } else if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let scale = 10u64.pow(frac.len() as u32);
        let frac: u64 = frac.parse().map_err(|_| bad())?;
        Rational::new(int * scale + frac, scale)
    } else {
        Rational::from_integer(s.parse().map_err(|_| bad())?)
    };
    if r == Rational::from_integer(0) {
        return Err(bad());
    }
    Ok(r)
}

pub fn format_rational(r: Rational) -> String {
    if r.is_integer() {
        r.to_integer().to_string()
    } else {
        format!("{}", to_f64(r))
    }
}

/// Median claim count (mean of the two middle values for even lengths),
/// unless `override_k` is given.
pub fn compute_k(claim_counts: &[usize], override_k: Option<Rational>) -> Result<Rational, ScoreError> {
    if let Some(k) = override_k {
        return if k > Rational::from_integer(0) {
            Ok(k)
        } else {
            Err(ScoreError::ZeroK)
        };
    }
    if claim_counts.is_empty() {
        return Err(ScoreError::EmptyCounts);
    }
    let mut sorted = claim_counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let k = if n % 2 == 1 {
        Rational::from_integer(sorted[n / 2] as u64)
    } else {
        Rational::new((sorted[n / 2 - 1] + sorted[n / 2]) as u64, 2)
    };
    if k == Rational::from_integer(0) {
        return Err(ScoreError::ZeroK);
    }
    Ok(k)
}

/// Exact precision, recall and F1@K for one response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreFields {
    pub precision: Rational,
    pub recall: Rational,
    pub f1_at_k: Rational,
}

pub fn score_response(claim_count: usize, supported_count: usize, k: Rational) -> Result<ScoreFields, ScoreError> {
    if supported_count > claim_count {
        return Err(ScoreError::SupportedExceedsClaims {
            supported: supported_count,
            claims: claim_count,
        });
    }
    let zero = Rational::from_integer(0);
    if k <= zero {
        return Err(ScoreError::ZeroK);
    }
    if supported_count == 0 {
        return Ok(ScoreFields {
            precision: zero,
            recall: zero,
            f1_at_k: zero,
        });
    }
    let s = Rational::from_integer(supported_count as u64);
    let precision = s / Rational::from_integer(claim_count as u64);
    let recall = (s / k).min(Rational::from_integer(1));
    let f1_at_k = Rational::from_integer(2) * precision * recall / (precision + recall);
    Ok(ScoreFields {
        precision,
        recall,
        f1_at_k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseScore {
    pub response_id: String,
    pub model_id: String,
    pub domain: String,
    pub sentence_count: usize,
    pub claim_count: usize,
    pub supported_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1_at_k: f64,
}

/// Claims of one response awaiting scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseClaims {
    pub response_id: String,
    pub sentence_count: usize,
    pub claim_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainScorecard {
    pub domain: String,
    pub model_id: String,
    pub k: Rational,
    pub response_scores: Vec<ResponseScore>,
    pub veriscore: f64,
    pub ver_ratio: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_sentences: f64,
}

impl DomainScorecard {
    pub fn n(&self) -> usize {
        self.response_scores.len()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores every response of one model in one domain. Responses are scored
/// in `response_id` order so aggregates are reproducible.
pub fn score_domain(
    domain: &str,
    model_id: &str,
    responses: &[ResponseClaims],
    labels: &HashMap<String, BinaryLabel>,
    k: Option<Rational>,
) -> Result<DomainScorecard, ScoreError> {
    let counts: Vec<usize> = responses.iter().map(|r| r.claim_ids.len()).collect();
    let k = compute_k(&counts, k)?;

    let mut ordered: Vec<&ResponseClaims> = responses.iter().collect();
    ordered.sort_by(|a, b| a.response_id.cmp(&b.response_id));

    let mut scores = Vec::with_capacity(ordered.len());
    for r in ordered {
        let mut supported = 0;
        for id in &r.claim_ids {
            match labels.get(id) {
                Some(BinaryLabel::Supported) => supported += 1,
                Some(BinaryLabel::Unsupported) => {}
                None => return Err(ScoreError::MissingLabel(id.clone())),
            }
        }
        let f = score_response(r.claim_ids.len(), supported, k)?;
        scores.push(ResponseScore {
            response_id: r.response_id.clone(),
            model_id: model_id.to_string(),
            domain: domain.to_string(),
            sentence_count: r.sentence_count,
            claim_count: r.claim_ids.len(),
            supported_count: supported,
            precision: to_f64(f.precision),
            recall: to_f64(f.recall),
            f1_at_k: to_f64(f.f1_at_k),
        });
    }

    Ok(DomainScorecard {
        domain: domain.to_string(),
        model_id: model_id.to_string(),
        k,
        veriscore: mean(scores.iter().map(|s| s.f1_at_k)),
        ver_ratio: mean(scores.iter().map(|s| {
            if s.sentence_count == 0 {
                0.0
            } else {
                s.claim_count as f64 / s.sentence_count as f64
            }
        })),
        mean_precision: mean(scores.iter().map(|s| s.precision)),
        mean_recall: mean(scores.iter().map(|s| s.recall)),
        mean_sentences: mean(scores.iter().map(|s| s.sentence_count as f64)),
        response_scores: scores,
    })
}

pub const SCORECARD_COLUMNS: [&str; 9] = ["model", "domain", "K", "L", "P", "R", "F", "VerRatio", "N"];

/// Summary CSV, one row per (model, domain).
pub fn scorecards_csv(cards: &[DomainScorecard]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCORECARD_COLUMNS).expect("in-memory write");
    for c in cards {
        w.write_record([
            c.model_id.clone(),
            c.domain.clone(),
            format_rational(c.k),
            format!("{:.6}", c.mean_sentences),
            format!("{:.6}", c.mean_precision),
            format!("{:.6}", c.mean_recall),
            format!("{:.6}", c.veriscore),
            format!("{:.6}", c.ver_ratio),
            c.n().to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Aligned text table with percentages to one decimal.
pub fn render_scorecard_table(cards: &[DomainScorecard]) -> String {
    let header = ["Model", "Domain", "K", "L", "P", "R", "F", "VerRatio", "N"];
    let rows: Vec<Vec<String>> = cards
        .iter()
        .map(|c| {
            vec![
                c.model_id.clone(),
                c.domain.clone(),
                format_rational(c.k),
                format!("{:.1}", c.mean_sentences),
                format!("{:.1}", 100.0 * c.mean_precision),
                format!("{:.1}", 100.0 * c.mean_recall),
                format!("{:.1}", 100.0 * c.veriscore),
                format!("{:.2}", c.ver_ratio),
                c.n().to_string(),
            ]
        })
        .collect();
    crate::analyzer::align_table(&header.map(String::from), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(n: u64, d: u64) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn k_examples() {
        assert_eq!(compute_k(&[3, 5, 7], None).unwrap(), q(5, 1));
        assert_eq!(compute_k(&[2, 4], None).unwrap(), q(3, 1));
        assert_eq!(compute_k(&[2, 3], None).unwrap(), q(5, 2));
        assert_eq!(compute_k(&[], None), Err(ScoreError::EmptyCounts));
        assert_eq!(compute_k(&[], Some(q(32, 1))).unwrap(), q(32, 1));
        assert_eq!(compute_k(&[0, 0, 0], None), Err(ScoreError::ZeroK));
        assert_eq!(compute_k(&[0, 0, 4], None), Err(ScoreError::ZeroK));
    }

    #[test]
    fn response_examples() {
        let zero = score_response(7, 0, q(3, 1)).unwrap();
        assert_eq!(zero.f1_at_k, q(0, 1));
        let perfect = score_response(5, 5, q(5, 1)).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1_at_k), (q(1, 1), q(1, 1), q(1, 1)));
        let f = score_response(20, 10, q(5, 1)).unwrap();
        assert_eq!((f.precision, f.recall, f.f1_at_k), (q(1, 2), q(1, 1), q(2, 3)));
        assert!(score_response(3, 4, q(1, 1)).is_err());
        assert_eq!(score_response(0, 0, q(3, 1)).unwrap().precision, q(0, 1));
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(parse_rational("32").unwrap(), q(32, 1));
        assert_eq!(parse_rational("20.5").unwrap(), q(41, 2));
        assert_eq!(parse_rational("41/2").unwrap(), q(41, 2));
        assert!(parse_rational("0").is_err());
        assert!(parse_rational("-3").is_err());
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert_eq!(format_rational(q(41, 2)), "20.5");
        assert_eq!(format_rational(q(32, 1)), "32");
    }

    fn rc(id: &str, sentences: usize, claims: &[&str]) -> ResponseClaims {
        ResponseClaims {
            response_id: id.into(),
            sentence_count: sentences,
            claim_ids: claims.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn domain_mean_and_ratio() {
        let labels: HashMap<String, BinaryLabel> = [
            ("a0", BinaryLabel::Supported),
            ("a1", BinaryLabel::Supported),
            ("b0", BinaryLabel::Unsupported),
            ("b1", BinaryLabel::Unsupported),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let card = score_domain(
            "d",
            "m",
            &[rc("b", 4, &["b0", "b1"]), rc("a", 2, &["a0", "a1"])],
            &labels,
            None,
        )
        .unwrap();
        assert_eq!(card.k, q(2, 1));
        assert_eq!(card.veriscore, 0.5);
        assert_eq!(card.response_scores[0].response_id, "a");
        assert_eq!(card.ver_ratio, (1.0 + 0.5) / 2.0);
        assert_eq!(card.mean_sentences, 3.0);
    }

    #[test]
    fn ver_ratio_ten_claims_five_sentences() {
        let ids: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        let labels = ids.iter().map(|i| (i.clone(), BinaryLabel::Supported)).collect();
        let r = ResponseClaims {
            response_id: "r".into(),
            sentence_count: 5,
            claim_ids: ids,
        };
        let card = score_domain("d", "m", &[r], &labels, None).unwrap();
        assert_eq!(card.ver_ratio, 2.0);
    }

    #[test]
    fn missing_label_names_claim() {
        let err = score_domain("d", "m", &[rc("a", 1, &["x9"])], &HashMap::new(), None).unwrap_err();
        assert_eq!(err, ScoreError::MissingLabel("x9".into()));
    }

    #[test]
    fn csv_has_expected_columns() {
        let labels = [("a0".to_string(), BinaryLabel::Supported)].into_iter().collect();
        let card = score_domain("bio", "m,1", &[rc("a", 2, &["a0"])], &labels, None).unwrap();
        let csv = scorecards_csv(&[card]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("model,domain,K,L,P,R,F,VerRatio,N"));
        assert_eq!(
            lines.next(),
            Some("\"m,1\",bio,1,2.000000,1.000000,1.000000,1.000000,0.500000,1")
        );
    }

    proptest! {
        #[test]
        fn k_is_permutation_invariant(mut counts in prop::collection::vec(1usize..60, 1..30), seed in any::<u64>()) {
            let k = compute_k(&counts, None).unwrap();
            // cheap deterministic shuffle
            let n = counts.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                counts.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(compute_k(&counts, None).unwrap(), k);
        }

        #[test]
        fn f1_bounds(c in 0usize..200, s_frac in 0.0f64..=1.0, kn in 1u64..100, kd in 1u64..3) {
            let s = (c as f64 * s_frac).floor() as usize;
            let k = Rational::new(kn, kd);
            let f = score_response(c, s, k).unwrap();
            prop_assert!(f.f1_at_k <= Rational::from_integer(1));
            prop_assert!(f.f1_at_k <= Rational::from_integer(2) * f.precision);
            prop_assert!(f.f1_at_k <= Rational::from_integer(2) * f.recall);
            prop_assert_eq!(f.f1_at_k == Rational::from_integer(0), s == 0);
        }
    }
}

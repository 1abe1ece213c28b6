use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Fraction of matching labels over all positions.
pub fn accuracy<T: PartialEq>(pred: &[T], gold: &[T]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::shape("accuracy", "prediction and gold counts differ"));
    }
    if gold.is_empty() {
        return Err(Error::Empty("gold labels"));
    }
    Ok(pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / gold.len() as f64)
}

pub fn token_accuracy(pred: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<f64> {
    if pred.len() != gold.len() || pred.iter().zip(gold).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::shape("token accuracy", "prediction and gold shapes differ"));
    }
    let p: Vec<usize> = pred.iter().flatten().copied().collect();
    let g: Vec<usize> = gold.iter().flatten().copied().collect();
    accuracy(&p, &g)
}

/// True when the names are `O` plus `B-*`/`I-*` tags.
pub fn is_bio(names: &[String]) -> bool {
    names.iter().any(|n| n.starts_with("B-"))
        && names
            .iter()
            .all(|n| n == "O" || n.starts_with("B-") || n.starts_with("I-"))
}

/// `(type, start, end)` spans; an `I-` tag not continuing a span of its type opens one.
pub fn bio_spans(tags: &[&str]) -> Vec<(String, usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, t) in tags.iter().enumerate() {
        let (kind, ty) = match t.split_once('-') {
            Some((k, ty)) if k == "B" || k == "I" => (k, ty),
            _ => ("O", ""),
        };
        let continues = kind == "I" && open.as_ref().is_some_and(|(o, _)| o == ty);
        if !continues {
            if let Some((o, s)) = open.take() {
                spans.push((o, s, i));
            }
            if kind != "O" {
                open = Some((ty.to_string(), i));
            }
        }
    }
    if let Some((o, s)) = open {
        spans.push((o, s, tags.len()));
    }
    spans
}

/// Exact-match span precision, recall and F₁ over a corpus.
///
/// Precision is 0 when nothing is predicted and recall is 0 when there is
/// nothing to find, except that two empty span sets score 1.
pub fn span_f1(pred: &[Vec<usize>], gold: &[Vec<usize>], names: &[String]) -> Result<SpanScores> {
    if pred.len() != gold.len() || pred.iter().zip(gold).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::shape("span F1", "prediction and gold shapes differ"));
    }
    let name = |y: usize| -> Result<&str> {
        names.get(y).map(String::as_str).ok_or(Error::OutOfRange {
            what: "label set",
            index: y,
            size: names.len(),
        })
    };
    let (mut tp, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        let ps = bio_spans(&p.iter().map(|&y| name(y)).collect::<Result<Vec<_>>>()?);
        let gs = bio_spans(&g.iter().map(|&y| name(y)).collect::<Result<Vec<_>>>()?);
        tp += ps.iter().filter(|s| gs.contains(s)).count();
        np += ps.len();
        ng += gs.len();
    }
    if np == 0 && ng == 0 {
        return Ok(SpanScores {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        });
    }
    let precision = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
    let recall = if ng == 0 { 0.0 } else { tp as f64 / ng as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SpanScores { precision, recall, f1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        ["O", "B-A", "I-A", "B-B", "I-B"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gold = vec![vec![0, 1, 2, 0], vec![3, 4]];
        let s = span_f1(&gold, &gold, &names()).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        assert_eq!(token_accuracy(&gold, &gold).unwrap(), 1.0);
        let none = vec![vec![0; 4], vec![0; 2]];
        let s = span_f1(&none, &gold, &names()).unwrap();
        assert_eq!((s.precision, s.f1), (0.0, 0.0));
    }

    #[test]
    fn one_boundary_error() {
        // gold spans: A[1,3) | B[0,1), A[2,4) | A[0,1)  → 4
        // predicted:  A[1,3) | B[0,2), A[2,4) | A[0,1)  → 4, one wrong boundary
        let gold = vec![vec![0, 1, 2], vec![3, 0, 1, 2], vec![1, 0]];
        let pred = vec![vec![0, 1, 2], vec![3, 4, 1, 2], vec![1, 0]];
        let s = span_f1(&pred, &gold, &names()).unwrap();
        assert!((s.precision - 0.75).abs() < 1e-15);
        assert!((s.recall - 0.75).abs() < 1e-15);
        assert!((s.f1 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn stray_inside_tag_opens_span() {
        let spans = bio_spans(&["I-A", "I-A", "O", "B-B", "I-A"]);
        assert_eq!(spans, vec![("A".into(), 0, 2), ("B".into(), 3, 4), ("A".into(), 4, 5)]);
        assert!(is_bio(&names()));
        assert!(!is_bio(&["N".to_string(), "V".to_string()]));
        assert!(span_f1(&[vec![7]], &[vec![0]], &names()).is_err());
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LabeledPair, Product, Query, RelevanceLabel};
use crate::error::{Error, Result};

/// Ground-truth relevance rule of the synthetic world.
///
/// Same category and a compatible brand (query brand absent or equal) is an
/// exact match; same category with a conflicting brand is a substitute;
/// anything else is irrelevant.
pub fn true_label(query: &Query, product: &Product) -> RelevanceLabel {
    if query.category != product.category {
        return RelevanceLabel::Irrelevant;
    }
    match &query.brand {
        Some(b) if *b != product.brand => RelevanceLabel::Substitute,
        _ => RelevanceLabel::Exact,
    }
}

/// Symmetric label noise: each label is replaced with probability `rate` by
/// one of the two other labels, drawn uniformly.
pub fn inject_label_noise(pairs: &[LabeledPair], rate: f64, seed: u64) -> Result<Vec<LabeledPair>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::validation(format!(
            "noise rate must lie in [0, 1), got {rate}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(pairs
        .iter()
        .map(|p| {
            let mut out = p.clone();
            if rng.random::<f64>() < rate {
                let others: Vec<RelevanceLabel> = RelevanceLabel::ALL
                    .into_iter()
                    .filter(|l| *l != p.label)
                    .collect();
                out.label = others[rng.random_range(0..others.len())];
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Language, Market};

    fn q(cat: &str, brand: Option<&str>) -> Query {
        Query {
            id: "q".into(),
            text: "x".into(),
            brand: brand.map(String::from),
            category: cat.into(),
            language: Language::L1,
        }
    }

    fn p(cat: &str, brand: &str) -> Product {
        Product {
            id: "p".into(),
            title: "t".into(),
            description: String::new(),
            brand: brand.into(),
            category: cat.into(),
            language: Language::L1,
        }
    }

    #[test]
    fn oracle_rule() {
        assert_eq!(
            true_label(&q("C3", Some("B1")), &p("C3", "B1")),
            RelevanceLabel::Exact
        );
        assert_eq!(
            true_label(&q("C3", Some("B1")), &p("C3", "B2")),
            RelevanceLabel::Substitute
        );
        assert_eq!(
            true_label(&q("C3", None), &p("C3", "B2")),
            RelevanceLabel::Exact
        );
        assert_eq!(
            true_label(&q("C3", None), &p("C7", "B2")),
            RelevanceLabel::Irrelevant
        );
        assert_eq!(
            true_label(&q("C3", Some("B1")), &p("C7", "B1")),
            RelevanceLabel::Irrelevant
        );
    }

    fn pairs(n: usize) -> Vec<LabeledPair> {
        (0..n)
            .map(|i| LabeledPair {
                query: format!("q{i}"),
                product: format!("p{i}"),
                label: RelevanceLabel::ALL[i % 3],
                market: Market::Target,
            })
            .collect()
    }

    #[test]
    fn zero_rate_is_identity() {
        let input = pairs(50);
        assert_eq!(inject_label_noise(&input, 0.0, 1).unwrap(), input);
    }

    #[test]
    fn rate_one_rejected() {
        assert!(inject_label_noise(&pairs(3), 1.0, 1).is_err());
        assert!(inject_label_noise(&pairs(3), -0.1, 1).is_err());
    }

    #[test]
    fn flip_fraction_matches_rate() {
        let input = pairs(10_000);
        let noisy = inject_label_noise(&input, 0.2, 7).unwrap();
        let flips = input
            .iter()
            .zip(&noisy)
            .filter(|(a, b)| a.label != b.label)
            .count();
        let frac = flips as f64 / input.len() as f64;
        assert!((0.18..=0.22).contains(&frac), "flip fraction {frac}");
        // ids untouched, determinism per seed
        assert!(input
            .iter()
            .zip(&noisy)
            .all(|(a, b)| a.query == b.query && a.product == b.product));
        assert_eq!(noisy, inject_label_noise(&input, 0.2, 7).unwrap());
    }
}

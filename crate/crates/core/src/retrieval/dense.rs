use rayon::prelude::*;

use crate::corpus::Product;
use crate::error::{Error, Result};
use crate::model::{dot, encode, norm, Matrix, Tower, TowerParams};

/// Precomputed unit-norm product embeddings; row `i` belongs to `ids[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    pub ids: Vec<String>,
    pub vectors: Matrix,
}

/// Encodes every product through the product tower.
pub fn build_embedding_index(towers: &TowerParams, products: &[Product]) -> Result<EmbeddingIndex> {
    let rows: Vec<Vec<f64>> = products
        .par_iter()
        .map(|p| encode(towers, Tower::Product, &p.relevance_text(), None).map(|e| e.into_inner()))
        .collect::<Result<_>>()?;
    let d = towers.d_out();
    let mut vectors = Matrix::zeros(rows.len(), d);
    for (i, r) in rows.into_iter().enumerate() {
        vectors.row_mut(i).copy_from_slice(&r);
    }
    Ok(EmbeddingIndex {
        ids: products.iter().map(|p| p.id.clone()).collect(),
        vectors,
    })
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.vectors.rows {
            return Err(Error::validation(
                "embedding index ids and rows differ in length",
            ));
        }
        for i in 0..self.vectors.rows {
            let n = norm(self.vectors.row(i));
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!(
                    "row {} has norm {n}",
                    self.ids[i]
                )));
            }
        }
        Ok(())
    }

    /// Exact top-`k` by inner product, ties broken by ascending id.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
        if query.len() != self.dim() {
            return Err(Error::validation(format!(
                "query dimension {} does not match index dimension {}",
                query.len(),
                self.dim()
            )));
        }
        let n = norm(query);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::validation(format!(
                "query vector has norm {n}, expected 1"
            )));
        }
        let mut hits: Vec<(usize, f64)> = (0..self.len())
            .map(|i| (i, dot(self.vectors.row(i), query)))
            .collect();
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        });
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|(i, s)| (self.ids[i].clone(), s))
            .collect())
    }
}

pub fn ebr_search(index: &EmbeddingIndex, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
    index.search(query, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = norm(v);
        v.iter().map(|x| x / n).collect()
    }

    fn index(rows: &[Vec<f64>]) -> EmbeddingIndex {
        let d = rows[0].len();
        EmbeddingIndex {
            ids: (0..rows.len()).map(|i| format!("p{i}")).collect(),
            vectors: Matrix::from_vec(rows.len(), d, rows.concat()),
        }
    }

    #[test]
    fn self_match_first() {
        let rows = vec![unit(&[1.0, 2.0]), unit(&[-1.0, 0.5]), unit(&[3.0, 0.1])];
        let idx = index(&rows);
        idx.validate().unwrap();
        let hits = idx.search(&rows[1], 2).unwrap();
        assert_eq!(hits[0].0, "p1");
        assert!((hits[0].1 - 1.0).abs() < 1e-6);
        assert_eq!(idx.search(&rows[1], 10).unwrap().len(), 3);
    }

    #[test]
    fn rejects_bad_queries() {
        let idx = index(&[unit(&[1.0, 0.0])]);
        assert!(idx.search(&[1.0, 0.0, 0.0], 1).is_err());
        assert!(idx.search(&[2.0, 0.0], 1).is_err());
    }

    #[test]
    fn ties_by_id() {
        let idx = EmbeddingIndex {
            ids: vec!["b".into(), "a".into()],
            vectors: Matrix::from_vec(2, 1, vec![1.0, 1.0]),
        };
        let hits = idx.search(&[1.0], 2).unwrap();
        assert_eq!(hits[0].0, "a");
    }
}

//! Brute-force k-nearest neighbours on standardized features.

use ndarray::{Array2, ArrayView2};

use super::glm::Standardizer;

#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    standardizer: Standardizer,
    train: Array2<f64>,
    k: usize,
}

impl Knn {
    pub fn fit(x: ArrayView2<f64>, k: usize) -> Self {
        let standardizer = Standardizer::fit(x);
        // rows carry the constant intercept slot, which leaves distances unchanged
        let mut train = Array2::zeros((x.nrows(), x.ncols() + 1));
        for (src, mut dst) in x.rows().into_iter().zip(train.rows_mut()) {
            let row = src.to_vec();
            standardizer.transform_row(&row, dst.as_slice_mut().expect("contiguous row"));
        }
        Self {
            standardizer,
            train,
            k: k.max(1).min(x.nrows().max(1)),
        }
    }

    /// Indices of the k nearest training rows for each query row. Distance
    /// ties are broken by training index.
    pub fn neighbours(&self, x: ArrayView2<f64>) -> Vec<Vec<usize>> {
        let mut q = vec![0.0; x.ncols() + 1];
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(self.train.nrows());
        x.rows()
            .into_iter()
            .map(|row| {
                self.standardizer.transform_row(&row.to_vec(), &mut q);
                dist.clear();
                for (i, t) in self.train.rows().into_iter().enumerate() {
                    let d: f64 = t.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                    dist.push((d, i));
                }
                let cmp =
                    |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if self.k < dist.len() {
                    dist.select_nth_unstable_by(self.k - 1, cmp);
                    dist.truncate(self.k);
                }
                dist.sort_by(cmp);
                dist.iter().map(|&(_, i)| i).collect()
            })
            .collect()
    }

    /// Neighbour average of `targets`.
    pub fn average(&self, x: ArrayView2<f64>, targets: &[f64]) -> Vec<f64> {
        self.neighbours(x)
            .into_iter()
            .map(|nb| nb.iter().map(|&i| targets[i]).sum::<f64>() / nb.len() as f64)
            .collect()
    }

    /// Row-major n×m neighbour class frequencies.
    pub fn class_frequencies(&self, x: ArrayView2<f64>, classes: &[usize], m: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.nrows() * m);
        for nb in self.neighbours(x) {
            let start = out.len();
            out.resize(start + m, 0.0);
            let w = 1.0 / nb.len() as f64;
            for i in nb {
                out[start + classes[i]] += w;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_neighbour_reproduces_training_targets() {
        let x = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let knn = Knn::fit(x.view(), 1);
        let y = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(knn.average(x.view(), &y), y.to_vec());
    }

    #[test]
    fn ties_broken_by_index() {
        let x = Array2::from_shape_vec((3, 1), vec![0.0, 2.0, 4.0]).unwrap();
        let knn = Knn::fit(x.view(), 1);
        let q = Array2::from_shape_vec((1, 1), vec![1.0]).unwrap();
        assert_eq!(knn.neighbours(q.view()), vec![vec![0]]);
    }
}

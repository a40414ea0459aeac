//! Observation sequences and the per-model design matrices built from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A response sequence with its covariates.
///
/// Covariates are stored row-major (`n x p`). `train_len`, when set, marks the
/// first `train_len` rows as the training split and the rest as the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub response: Vec<f64>,
    pub trials: Option<Vec<u32>>,
    pub covariates: Vec<f64>,
    pub covariate_names: Vec<String>,
    pub dates: Option<Vec<String>>,
    pub prices: Option<Vec<f64>>,
    pub train_len: Option<usize>,
}

impl Dataset {
    pub fn new(response: Vec<f64>, covariates: Vec<f64>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        if covariates.len() != response.len() * p {
            return Err(Error::input(format!(
                "covariate matrix has {} cells, expected {} rows x {} columns",
                covariates.len(),
                response.len(),
                p
            )));
        }
        Ok(Dataset {
            response,
            trials: None,
            covariates,
            covariate_names,
            dates: None,
            prices: None,
            train_len: None,
        })
    }

    /// Convenience constructor with generated covariate names `x1..xp`.
    pub fn from_rows(response: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.len() != response.len() && !(p == 0 && rows.is_empty()) {
            return Err(Error::input("row count does not match response length"));
        }
        let mut covariates = Vec::with_capacity(response.len() * p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::input(format!("row {i} has {} covariates, expected {p}", r.len())));
            }
            covariates.extend_from_slice(r);
        }
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Dataset::new(response, covariates, names)
    }

    pub fn with_trials(mut self, trials: Vec<u32>) -> Result<Self> {
        if trials.len() != self.response.len() {
            return Err(Error::input("trials length does not match response length"));
        }
        self.trials = Some(trials);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_covariates();
        &self.covariates[i * p..(i + 1) * p]
    }

    pub fn trials_at(&self, i: usize) -> Option<u32> {
        self.trials.as_ref().map(|t| t[i])
    }

    /// Design matrix with a leading intercept column and the covariates selected by `mask`.
    pub fn design(&self, mask: &[bool]) -> Design {
        debug_assert_eq!(mask.len(), self.n_covariates());
        let active: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(j, &on)| on.then_some(j))
            .collect();
        let cols = 1 + active.len();
        let mut data = Vec::with_capacity(self.len() * cols);
        for i in 0..self.len() {
            let row = self.row(i);
            data.push(1.0);
            data.extend(active.iter().map(|&j| row[j]));
        }
        Design {
            rows: self.len(),
            cols,
            data,
        }
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        let p = self.n_covariates();
        Dataset {
            response: self.response[range.clone()].to_vec(),
            trials: self.trials.as_ref().map(|t| t[range.clone()].to_vec()),
            covariates: self.covariates[range.start * p..range.end * p].to_vec(),
            covariate_names: self.covariate_names.clone(),
            dates: self.dates.as_ref().map(|d| d[range.clone()].to_vec()),
            prices: self.prices.as_ref().map(|v| v[range.clone()].to_vec()),
            train_len: None,
        }
    }

    /// Join a training and a test sequence; the result is split between them.
    pub fn concat(train: &Dataset, test: &Dataset) -> Result<Dataset> {
        if train.covariate_names != test.covariate_names {
            return Err(Error::input("training and test covariates differ"));
        }
        if train.trials.is_some() != test.trials.is_some() {
            return Err(Error::input("trials present in only one of training and test data"));
        }
        let join = |a: &Option<Vec<String>>, b: &Option<Vec<String>>| match (a, b) {
            (Some(a), Some(b)) => Some([a.as_slice(), b.as_slice()].concat()),
            _ => None,
        };
        Ok(Dataset {
            response: [train.response.as_slice(), &test.response].concat(),
            trials: train
                .trials
                .as_ref()
                .zip(test.trials.as_ref())
                .map(|(a, b)| [a.as_slice(), b].concat()),
            covariates: [train.covariates.as_slice(), &test.covariates].concat(),
            covariate_names: train.covariate_names.clone(),
            dates: join(&train.dates, &test.dates),
            prices: train
                .prices
                .as_ref()
                .zip(test.prices.as_ref())
                .map(|(a, b)| [a.as_slice(), b].concat()),
            train_len: Some(train.len()),
        })
    }

    /// Training rows (all rows when no split is set).
    pub fn train(&self) -> Dataset {
        self.slice(0..self.train_len.unwrap_or(self.len()))
    }

    /// Test rows; `None` when no split is set or the test part is empty.
    pub fn test(&self) -> Option<Dataset> {
        let t = self.train_len?;
        (t < self.len()).then(|| self.slice(t..self.len()))
    }

    /// Split so that every row dated strictly before `date` (ISO-8601) is training data.
    pub fn split_at_date(&mut self, date: &str) -> Result<()> {
        let cut = parse_date(date)?;
        let dates = self
            .dates
            .as_ref()
            .ok_or_else(|| Error::input("date split requested but the data has no date column"))?;
        let mut train_len = dates.len();
        for (i, d) in dates.iter().enumerate() {
            if parse_date(d)? >= cut {
                train_len = i;
                break;
            }
        }
        self.train_len = Some(train_len);
        Ok(())
    }

    pub fn split_at_index(&mut self, index: usize) -> Result<()> {
        if index > self.len() {
            return Err(Error::input(format!(
                "split index {index} exceeds data length {}",
                self.len()
            )));
        }
        self.train_len = Some(index);
        Ok(())
    }
}

pub fn parse_date(s: &str) -> Result<chrono::NaiveDate> {
    let s = s.trim();
    let head = s.get(..10).unwrap_or(s);
    chrono::NaiveDate::parse_from_str(head, "%Y-%m-%d")
        .map_err(|e| Error::input(format!("invalid ISO-8601 date {s:?}: {e}")))
}

/// Dense row-major design matrix; column 0 is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Design {
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Intercept-only design for `rows` observations.
    pub fn intercept(rows: usize) -> Self {
        Design {
            rows,
            cols: 1,
            data: vec![1.0; rows],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(1, Vec::len);
        Design {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let mut d = Dataset::from_rows(
            vec![1.0, 2.0, 3.0, 4.0],
            &[vec![0.1, 1.0], vec![0.2, 2.0], vec![0.3, 3.0], vec![0.4, 4.0]],
        )
        .unwrap();
        d.dates = Some(
            ["2016-12-29", "2016-12-30", "2017-01-03", "2017-01-04"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        );
        d
    }

    #[test]
    fn design_selects_active_columns() {
        let d = toy();
        let x = d.design(&[false, true]);
        assert_eq!(x.cols, 2);
        assert_eq!(x.row(2), &[1.0, 3.0]);
        let x0 = d.design(&[false, false]);
        assert_eq!(x0.row(0), &[1.0]);
    }

    #[test]
    fn date_split() {
        let mut d = toy();
        d.split_at_date("2017-01-01").unwrap();
        assert_eq!(d.train_len, Some(2));
        assert_eq!(d.train().response, vec![1.0, 2.0]);
        assert_eq!(d.test().unwrap().row(0), &[0.3, 3.0]);
    }

    #[test]
    fn bad_shape_rejected() {
        assert!(Dataset::new(vec![1.0], vec![1.0, 2.0, 3.0], vec!["a".into(), "b".into()]).is_err());
    }
}

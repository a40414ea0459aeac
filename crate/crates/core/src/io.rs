//! CSV ingestion, run configuration and result serialisation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asa::{EmFit, HyperRanges, ParallelResult, SearchRecord, ThreadHyper};
use crate::data::Dataset;
use crate::emissions::Family;
use crate::error::{Error, Result};
use crate::eval::{Backtest, Coint, PredictionSeries, StateRoleMap};
use crate::hmm::{Criterion, Nhhmm, PosteriorSummaries};
use crate::model_space::ModelConfig;

/// Which CSV columns play which part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnRoles {
    pub response: String,
    pub trials: Option<String>,
    pub date: Option<String>,
    pub price: Option<String>,
    /// Covariate columns in order; `None` takes every remaining column.
    pub covariates: Option<Vec<String>>,
}

impl Default for ColumnRoles {
    fn default() -> Self {
        ColumnRoles {
            response: "y".into(),
            trials: None,
            date: None,
            price: None,
            covariates: None,
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::input(format!("missing column {name:?}")))
}

fn cell<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<&'a str> {
    let v = rec.get(idx).map(str::trim).unwrap_or("");
    if v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") {
        return Err(Error::input(format!("line {line}: missing value in column {name:?}")));
    }
    Ok(v)
}

fn number(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<f64> {
    let v = cell(rec, idx, name, line)?;
    let x: f64 = v
        .parse()
        .map_err(|_| Error::input(format!("line {line}: column {name:?} has non-numeric value {v:?}")))?;
    if !x.is_finite() {
        return Err(Error::input(format!("line {line}: column {name:?} is not finite")));
    }
    Ok(x)
}

/// Parse a CSV with a header row into a [`Dataset`].
pub fn read_csv<R: Read>(reader: R, roles: &ColumnRoles) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let y_col = column(&headers, &roles.response)?;
    let t_col = roles.trials.as_deref().map(|n| column(&headers, n)).transpose()?;
    let d_col = roles.date.as_deref().map(|n| column(&headers, n)).transpose()?;
    let p_col = roles.price.as_deref().map(|n| column(&headers, n)).transpose()?;
    let names: Vec<String> = match &roles.covariates {
        Some(c) => c.clone(),
        None => {
            let reserved: Vec<usize> = [Some(y_col), t_col, d_col, p_col].into_iter().flatten().collect();
            headers
                .iter()
                .enumerate()
                .filter(|(i, _)| !reserved.contains(i))
                .map(|(_, h)| h.trim().to_string())
                .collect()
        }
    };
    let x_cols = names.iter().map(|n| column(&headers, n)).collect::<Result<Vec<_>>>()?;

    let mut response = Vec::new();
    let mut trials = t_col.map(|_| Vec::new());
    let mut dates = d_col.map(|_| Vec::new());
    let mut prices = p_col.map(|_| Vec::new());
    let mut covariates = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| Error::input(format!("line {line}: {e}")))?;
        let y = number(&rec, y_col, &roles.response, line)?;
        if let (Some(c), Some(t)) = (t_col, trials.as_mut()) {
            let name = roles.trials.as_deref().unwrap_or_default();
            let v = number(&rec, c, name, line)?;
            if v < 0.0 || v.fract() != 0.0 || v > f64::from(u32::MAX) {
                return Err(Error::input(format!("line {line}: trials must be a non-negative integer")));
            }
            if !(y >= 0.0 && y.fract() == 0.0 && y <= v) {
                return Err(Error::input(format!(
                    "line {line}: response {y} is not an integer in 0..={v}"
                )));
            }
            t.push(v as u32);
        }
        if let (Some(c), Some(d)) = (d_col, dates.as_mut()) {
            let v = cell(&rec, c, roles.date.as_deref().unwrap_or_default(), line)?;
            crate::data::parse_date(v).map_err(|e| Error::input(format!("line {line}: {e}")))?;
            d.push(v.to_string());
        }
        if let (Some(c), Some(p)) = (p_col, prices.as_mut()) {
            p.push(number(&rec, c, roles.price.as_deref().unwrap_or_default(), line)?);
        }
        for (&c, name) in x_cols.iter().zip(&names) {
            covariates.push(number(&rec, c, name, line)?);
        }
        response.push(y);
    }
    let mut data = Dataset::new(response, covariates, names)?;
    data.trials = trials;
    data.dates = dates;
    data.prices = prices;
    Ok(data)
}

pub fn load_csv(path: &Path, roles: &ColumnRoles) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    read_csv(file, roles).map_err(|e| match e {
        Error::Input(m) => Error::input(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Roles matching the columns written by [`write_csv`].
pub fn roles_for(data: &Dataset) -> ColumnRoles {
    ColumnRoles {
        response: "y".into(),
        trials: data.trials.as_ref().map(|_| "trials".into()),
        date: data.dates.as_ref().map(|_| "date".into()),
        price: data.prices.as_ref().map(|_| "price".into()),
        covariates: Some(data.covariate_names.clone()),
    }
}

/// Write `date, y, trials, price, covariates...` (optional columns only when present).
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = Vec::new();
    if data.dates.is_some() {
        header.push("date".into());
    }
    header.push("y".into());
    if data.trials.is_some() {
        header.push("trials".into());
    }
    if data.prices.is_some() {
        header.push("price".into());
    }
    header.extend(data.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(d) = &data.dates {
            rec.push(d[i].clone());
        }
        rec.push(num(data.response[i]));
        if let Some(t) = &data.trials {
            rec.push(t[i].to_string());
        }
        if let Some(p) = &data.prices {
            rec.push(num(p[i]));
        }
        rec.extend(data.row(i).iter().map(|&v| num(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Train/test split rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Split {
    /// First `n` rows train.
    Index(usize),
    /// Rows dated before this ISO-8601 date train.
    Date(String),
}

/// Everything a `fit` run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: Family,
    pub states: Vec<usize>,
    pub criterion: Criterion,
    pub threads: usize,
    pub seed: u64,
    pub split: Option<Split>,
    pub roles: ColumnRoles,
    pub hyper: HyperRanges,
    pub starting_cash: f64,
    /// Newey-West lag for DM tests; `None` uses `floor(n^(1/3))`.
    pub dm_lag: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: Family::Gaussian,
            states: vec![2],
            criterion: Criterion::Bic,
            threads: 4,
            seed: 0,
            split: None,
            roles: ColumnRoles::default(),
            hyper: HyperRanges::default(),
            starting_cash: 1000.0,
            dm_lag: None,
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() || self.states.contains(&0) {
            return Err(Error::config("state counts must be a non-empty list of positive integers"));
        }
        if self.threads == 0 {
            return Err(Error::config("at least one search thread is required"));
        }
        if !(self.starting_cash > 0.0) {
            return Err(Error::config("starting cash must be positive"));
        }
        if self.family == Family::Binomial && self.roles.trials.is_none() {
            return Err(Error::config("binomial models need a trials column"));
        }
        Ok(())
    }

    /// Overlay the values present in a TOML document on top of `self`.
    pub fn overridden_by(&self, toml_text: &str) -> Result<RunConfig> {
        let over: toml::Value = toml::from_str(toml_text).map_err(|e| Error::config(format!("config file: {e}")))?;
        let mut base = toml::Value::try_from(self).map_err(|e| Error::config(e.to_string()))?;
        merge(&mut base, over);
        base.try_into().map_err(|e| Error::config(format!("config file: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Apply the split rule and check that the training part is large enough.
    pub fn apply_split(&self, data: &mut Dataset) -> Result<()> {
        match &self.split {
            None => {}
            Some(Split::Index(i)) => data.split_at_index(*i)?,
            Some(Split::Date(d)) => data.split_at_date(d)?,
        }
        let train = data.train_len.unwrap_or(data.len());
        let s_max = self.states.iter().copied().max().unwrap_or(1);
        if train < 2 * s_max {
            return Err(Error::input(format!(
                "training split has {train} rows, need at least {} for {s_max} states",
                2 * s_max
            )));
        }
        Ok(())
    }
}

/// Shortest round-trip text for a float, in scientific form when very small or large.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-5..1e16).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// `None` for non-finite values so JSON stays valid.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// One row of the per-thread criterion table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadSummary {
    pub thread: usize,
    pub n_states: Option<usize>,
    pub error: Option<String>,
    pub config: Option<ModelConfig>,
    pub criterion: Option<f64>,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub evaluations: usize,
    pub collapsed: usize,
    pub failed_fits: usize,
    pub successes: usize,
    pub hyper: Option<ThreadHyper>,
}

impl ThreadSummary {
    pub fn from_outcome(
        index: usize,
        hyper: Option<&ThreadHyper>,
        result: std::result::Result<&SearchRecord<EmFit>, &String>,
        n: usize,
    ) -> Self {
        let mut row = ThreadSummary {
            thread: index,
            n_states: hyper.map(|h| h.n_states),
            error: None,
            config: None,
            criterion: None,
            loglik: None,
            aic: None,
            bic: None,
            evaluations: 0,
            collapsed: 0,
            failed_fits: 0,
            successes: 0,
            hyper: hyper.cloned(),
        };
        match result {
            Err(e) => row.error = Some(e.clone()),
            Ok(rec) => {
                row.config = Some(rec.best.config.clone());
                row.criterion = finite(rec.best.criterion);
                if let Some(fit) = &rec.best.fit {
                    let k = fit.model.free_parameters();
                    row.loglik = finite(fit.loglik);
                    row.aic = finite(Criterion::Aic.value(fit.loglik, k, n));
                    row.bic = finite(Criterion::Bic.value(fit.loglik, k, n));
                }
                row.evaluations = rec.diagnostics.evaluations;
                row.collapsed = rec.diagnostics.collapsed;
                row.failed_fits = rec.diagnostics.failed;
                row.successes = rec.diagnostics.successes;
            }
        }
        row
    }

    pub fn from_parallel(res: &ParallelResult, n: usize) -> Vec<ThreadSummary> {
        res.threads
            .iter()
            .map(|t| ThreadSummary::from_outcome(t.index, t.hyper.as_ref(), t.result.as_ref(), n))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub series: PredictionSeries,
    pub rmse: Option<f64>,
    pub coint: Option<Coint>,
    /// Why RMSE or COINT could not be computed.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub roles: StateRoleMap,
    pub train: Option<Backtest>,
    pub test: Option<Backtest>,
}

/// Serialised outcome of `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub run: RunConfig,
    pub n_train: usize,
    pub best_thread: Option<usize>,
    pub model: Nhhmm,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub states: Vec<usize>,
    /// Smoothed state probabilities per training index.
    pub posteriors: Vec<Vec<f64>>,
    pub threads: Vec<ThreadSummary>,
    pub prediction: Option<PredictionReport>,
    pub backtest: Option<BacktestReport>,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Read a model from either a bare model file or a `fit` result.
pub fn read_model(text: &str) -> Result<Nhhmm> {
    if let Ok(m) = serde_json::from_str::<Nhhmm>(text) {
        return Ok(m);
    }
    let res: FitResult =
        serde_json::from_str(text).map_err(|e| Error::input(format!("not a model or fit result: {e}")))?;
    Ok(res.model)
}

fn fmt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), num)
}

/// Per-thread criterion table.
pub fn write_threads_csv<W: Write>(rows: &[ThreadSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "thread", "states", "status", "criterion", "aic", "bic", "loglik", "gamma", "delta", "evaluations", "collapsed",
        "failed_fits",
    ])?;
    for r in rows {
        w.write_record([
            r.thread.to_string(),
            r.n_states.map_or("NA".into(), |s| s.to_string()),
            if r.error.is_some() { "failed".into() } else { "ok".into() },
            fmt_num(r.criterion),
            fmt_num(r.aic),
            fmt_num(r.bic),
            fmt_num(r.loglik),
            r.config.as_ref().map_or("NA".into(), ModelConfig::gamma_bits),
            r.config.as_ref().map_or("NA".into(), ModelConfig::delta_bits),
            r.evaluations.to_string(),
            r.collapsed.to_string(),
            r.failed_fits.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Decoded path with smoothed probabilities: `index, date, state, p0..pS-1`.
pub fn write_states_csv<W: Write>(
    states: &[usize],
    posteriors: &PosteriorSummaries,
    dates: Option<&[String]>,
    writer: W,
) -> Result<()> {
    let s = posteriors.n_states;
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["index".to_string()];
    if dates.is_some() {
        header.push("date".into());
    }
    header.push("state".into());
    header.extend((0..s).map(|k| format!("p{k}")));
    w.write_record(&header)?;
    for (i, st) in states.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        if let Some(d) = dates {
            rec.push(d[i].clone());
        }
        rec.push(st.to_string());
        rec.extend(posteriors.gamma_row(i).iter().map(|&v| num(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Full search trace of every thread.
pub fn write_trace_csv<W: Write>(res: &ParallelResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "thread", "epoch", "temperature", "gamma", "delta", "accepted", "criterion", "global_best", "em_iterations",
        "moves", "neighbourhood",
    ])?;
    for t in &res.threads {
        let Ok(rec) = &t.result else { continue };
        for r in &rec.trace {
            w.write_record([
                t.index.to_string(),
                r.epoch.to_string(),
                num(r.temperature),
                r.proposal.gamma_bits(),
                r.proposal.delta_bits(),
                r.accepted.to_string(),
                num(r.criterion),
                num(r.global_best),
                r.em_iterations.to_string(),
                r.moves.to_string(),
                r.neighbourhood.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Test-period predictions: `index, date, y, yhat, phat, price, state`.
pub fn write_predictions_csv<W: Write>(test: &Dataset, pred: &PredictionSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["index"];
    if test.dates.is_some() {
        header.push("date");
    }
    header.extend(["y", "yhat", "phat"]);
    if test.prices.is_some() {
        header.push("price");
    }
    header.push("state");
    w.write_record(&header)?;
    for i in 0..test.len() {
        let mut rec = vec![i.to_string()];
        if let Some(d) = &test.dates {
            rec.push(d[i].clone());
        }
        rec.push(num(test.response[i]));
        rec.push(num(pred.yhat[i]));
        rec.push(num(pred.phat[i]));
        if let Some(p) = &test.prices {
            rec.push(num(p[i]));
        }
        rec.push(pred.states[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read named numeric columns from a CSV file.
pub fn read_columns<R: Read>(reader: R, names: &[&str]) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = names.iter().map(|n| column(&headers, n)).collect::<Result<Vec<_>>>()?;
    let mut out: BTreeMap<String, Vec<f64>> = names.iter().map(|n| (n.to_string(), Vec::new())).collect();
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| Error::input(format!("line {line}: {e}")))?;
        for (&c, n) in cols.iter().zip(names) {
            let v = number(&rec, c, n, line)?;
            out.get_mut(*n).expect("column registered").push(v);
        }
    }
    Ok(out)
}

/// Plain-text model table: one block of coefficients per state.
pub fn model_table(model: &Nhhmm, names: &[String]) -> String {
    let mut out = String::new();
    let cfg = &model.config;
    let gamma_names: Vec<&str> = names
        .iter()
        .zip(&cfg.gamma)
        .filter(|(_, &on)| on)
        .map(|(n, _)| n.as_str())
        .collect();
    let delta_names: Vec<&str> = names
        .iter()
        .zip(&cfg.delta)
        .filter(|(_, &on)| on)
        .map(|(n, _)| n.as_str())
        .collect();
    let _ = writeln!(out, "family: {:?}, states: {}", model.family, model.n_states());
    let _ = writeln!(out, "emission covariates: {}", if gamma_names.is_empty() { "-".into() } else { gamma_names.join(", ") });
    let _ = writeln!(out, "transition covariates: {}", if delta_names.is_empty() { "-".into() } else { delta_names.join(", ") });
    let _ = writeln!(out);
    let _ = writeln!(out, "emissions");
    let mut head = format!("{:<24}", "term");
    for k in 0..model.n_states() {
        let _ = write!(head, "{:>14}", format!("state {k}"));
    }
    let _ = writeln!(out, "{head}");
    let terms: Vec<&str> = std::iter::once("(intercept)").chain(gamma_names.iter().copied()).collect();
    for (j, t) in terms.iter().enumerate() {
        let mut line = format!("{t:<24}");
        for st in &model.emission.states {
            let _ = write!(line, "{:>14.6}", st.coefficients[j]);
        }
        let _ = writeln!(out, "{line}");
    }
    if model.family.has_dispersion() {
        let mut line = format!("{:<24}", "sigma");
        for st in &model.emission.states {
            let _ = write!(line, "{:>14.6}", st.dispersion);
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "transitions (logits relative to destination 0)");
    let tterms: Vec<&str> = std::iter::once("(intercept)").chain(delta_names.iter().copied()).collect();
    let s = model.n_states();
    for src in 0..s {
        for dst in 1..s {
            for (j, t) in tterms.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{:<10}{:<24}{:>14.6}",
                    format!("{src}->{dst}"),
                    t,
                    model.transition.coefficients[src][dst][j]
                );
            }
        }
    }
    let mut init = format!("{:<24}", "initial probabilities");
    for p in &model.transition.initial_probs {
        let _ = write!(init, "{p:>14.6}");
    }
    let _ = writeln!(out, "{init}");
    out
}

/// Human-readable summary of a fit.
pub fn summary_text(res: &FitResult, names: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "best model: {}", res.model.config);
    if let Some(t) = res.best_thread {
        let _ = writeln!(out, "found by thread {t}");
    }
    let _ = writeln!(out, "training rows: {}", res.n_train);
    let _ = writeln!(out, "log-likelihood: {:.3}", res.loglik);
    let _ = writeln!(out, "AIC: {:.3}", res.aic);
    let _ = writeln!(out, "BIC: {:.3}", res.bic);
    let _ = writeln!(out, "free parameters: {}", res.model.free_parameters());
    let _ = writeln!(out);
    out.push_str(&model_table(&res.model, names));
    let failed = res.threads.iter().filter(|t| t.error.is_some()).count();
    if !res.threads.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "threads: {} ({} failed)", res.threads.len(), failed);
        for t in &res.threads {
            let _ = writeln!(
                out,
                "  thread {:>3}  S={}  AIC={}  BIC={}  {}",
                t.thread,
                t.n_states.map_or("NA".into(), |s| s.to_string()),
                t.aic.map_or("NA".into(), |v| format!("{v:.3}")),
                t.bic.map_or("NA".into(), |v| format!("{v:.3}")),
                t.error
                    .clone()
                    .unwrap_or_else(|| t.config.as_ref().map(ToString::to_string).unwrap_or_default())
            );
        }
    }
    if let Some(p) = &res.prediction {
        let _ = writeln!(out);
        let _ = writeln!(out, "test predictions: {}", p.series.yhat.len());
        if let Some(r) = p.rmse {
            let _ = writeln!(out, "  RMSE: {r:.3}");
        }
        if let Some(c) = &p.coint {
            let _ = writeln!(out, "  COINT: {:.4} (rho {:.4}, se {:.4})", c.statistic, c.rho, c.std_error);
        }
        if let Some(n) = &p.note {
            let _ = writeln!(out, "  note: {n}");
        }
    }
    if let Some(b) = &res.backtest {
        let _ = writeln!(out);
        let roles: Vec<String> = b.roles.roles.iter().enumerate().map(|(k, r)| format!("{k}={r}")).collect();
        let _ = writeln!(out, "trading roles: {}{}", roles.join(", "), if b.roles.tie_broken { " (tie broken by index)" } else { "" });
        if let Some(t) = &b.train {
            let _ = writeln!(out, "  train wealth: {:.3}", t.final_wealth);
        }
        if let Some(t) = &b.test {
            let _ = writeln!(out, "  test wealth: {:.3}", t.final_wealth);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_three_rows() {
        let text = "date,y,x1,x2\n2020-01-01,1.5,0.1,2\n2020-01-02,2.5,0.2,3\n2020-01-03,-1,0.3,4\n";
        let roles = ColumnRoles {
            date: Some("date".into()),
            ..ColumnRoles::default()
        };
        let d = read_csv(text.as_bytes(), &roles).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.covariate_names, vec!["x1", "x2"]);
        assert_eq!(d.row(2), &[0.3, 4.0]);
    }

    #[test]
    fn bad_cell_names_its_line() {
        let mut text = String::from("y,x\n");
        for i in 0..4 {
            text.push_str(&format!("{i},1\n"));
        }
        text.push_str("5,abc\n");
        let err = read_csv(text.as_bytes(), &ColumnRoles::default()).unwrap_err();
        assert!(err.to_string().contains("line 6"), "{err}");
        let err = read_csv("y,x\n1,\n".as_bytes(), &ColumnRoles::default()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn trials_validated() {
        let roles = ColumnRoles {
            trials: Some("n".into()),
            ..ColumnRoles::default()
        };
        assert!(read_csv("y,n\n3,2\n".as_bytes(), &roles).is_err());
        assert!(read_csv("y,n\n2,2\n".as_bytes(), &roles).is_ok());
        assert!(read_csv("y,x\n1,2\n".as_bytes(), &roles).is_err());
    }

    #[test]
    fn config_file_overrides() {
        let base = RunConfig {
            threads: 9,
            seed: 5,
            ..RunConfig::default()
        };
        let merged = base.overridden_by("seed = 11\n[hyper]\nkappa = [3.0, 4.0]\n").unwrap();
        assert_eq!(merged.seed, 11);
        assert_eq!(merged.threads, 9);
        assert_eq!(merged.hyper.kappa, crate::asa::Interval::uniform(3.0, 4.0));
        assert!(base.overridden_by("bogus = 1").is_err());
        let back = RunConfig::default().overridden_by(&RunConfig::default().to_toml().unwrap()).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}

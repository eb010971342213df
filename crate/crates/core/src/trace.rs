//! Columnar record of one simulated episode.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{RewardParts, StepOutcome};
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 14] = [
    "t",
    "month",
    "price",
    "log_price",
    "demand",
    "supply",
    "excess_demand",
    "inventory",
    "bank",
    "reward",
    "m",
    "m_tilde",
    "n",
    "n_tilde",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub t: Vec<usize>,
    pub month: Vec<u32>,
    pub price: Vec<f64>,
    pub log_price: Vec<f64>,
    pub demand: Vec<f64>,
    pub supply: Vec<f64>,
    pub excess_demand: Vec<f64>,
    pub inventory: Vec<f64>,
    pub bank: Vec<f64>,
    pub reward: Vec<f64>,
    pub parts: Vec<RewardParts>,
    pub failure: Vec<bool>,
    pub failure_severity: Vec<f64>,
    /// Whether the step was a refill check.
    pub threshold_checked: Vec<bool>,
    pub threshold_miss: Vec<bool>,
    pub threshold_gap: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    t: usize,
    month: u32,
    price: f64,
    log_price: f64,
    demand: f64,
    supply: f64,
    excess_demand: f64,
    inventory: f64,
    bank: f64,
    reward: f64,
    m: u8,
    m_tilde: f64,
    n: u8,
    n_tilde: f64,
}

impl EpisodeTrace {
    pub fn push(&mut self, out: &StepOutcome) {
        self.t.push(out.t);
        self.month.push(out.month);
        self.price.push(out.price);
        self.log_price.push(out.log_price);
        self.demand.push(out.demand);
        self.supply.push(out.supply);
        self.excess_demand.push(out.excess_demand);
        self.inventory.push(out.inventory);
        self.bank.push(out.bank);
        self.reward.push(out.reward);
        self.parts.push(out.parts);
        self.failure.push(out.failure);
        self.failure_severity.push(out.failure_severity);
        self.threshold_checked.push(out.threshold_checked);
        self.threshold_miss.push(out.threshold_miss);
        self.threshold_gap.push(out.threshold_gap);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.reward.iter().sum()
    }

    pub fn terminal_bank(&self) -> f64 {
        self.bank.last().copied().unwrap_or(0.0)
    }

    pub fn failure_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.failure.iter().filter(|&&m| m).count() as f64 / self.len() as f64
    }

    /// Mean of `(p_t - p_{t-1})^2` over the episode, with `p_{-1}` supplied.
    pub fn mean_squared_log_change(&self, initial_log_price: f64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let mut prev = initial_log_price;
        let mut acc = 0.0;
        for &p in &self.log_price {
            acc += (p - prev) * (p - prev);
            prev = p;
        }
        acc / self.len() as f64
    }

    pub fn mean_price(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.price.iter().sum::<f64>() / self.len() as f64
    }

    /// Closing inventories of the refill-check steps, i.e. the stock at the
    /// beginning of the refill month each year.
    pub fn refill_inventories(&self) -> Vec<f64> {
        self.threshold_checked
            .iter()
            .zip(&self.inventory)
            .filter(|(c, _)| **c)
            .map(|(_, &i)| i)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for i in 0..self.len() {
            w.serialize(CsvRow {
                t: self.t[i],
                month: self.month[i],
                price: self.price[i],
                log_price: self.log_price[i],
                demand: self.demand[i],
                supply: self.supply[i],
                excess_demand: self.excess_demand[i],
                inventory: self.inventory[i],
                bank: self.bank[i],
                reward: self.reward[i],
                m: self.failure[i] as u8,
                m_tilde: self.failure_severity[i],
                n: self.threshold_miss[i] as u8,
                n_tilde: self.threshold_gap[i],
            })
            .map_err(|e| Error::Data(e.to_string()))?;
        }
        if self.is_empty() {
            w.write_record(CSV_COLUMNS).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Read a trace written by [`EpisodeTrace::write_csv`]. Reward parts and
    /// the refill-check column are not stored in CSV; parts are left at
    /// their defaults and checks are flagged where `n_tilde > 0` or `n = 1`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(|e| Error::Data(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != CSV_COLUMNS {
            return Err(Error::Data(format!(
                "unexpected trace header {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut trace = Self::default();
        for row in r.deserialize::<CsvRow>() {
            let row = row.map_err(|e| Error::Data(e.to_string()))?;
            trace.t.push(row.t);
            trace.month.push(row.month);
            trace.price.push(row.price);
            trace.log_price.push(row.log_price);
            trace.demand.push(row.demand);
            trace.supply.push(row.supply);
            trace.excess_demand.push(row.excess_demand);
            trace.inventory.push(row.inventory);
            trace.bank.push(row.bank);
            trace.reward.push(row.reward);
            trace.parts.push(RewardParts::default());
            trace.failure.push(row.m != 0);
            trace.failure_severity.push(row.m_tilde);
            trace.threshold_checked.push(row.n != 0 || row.n_tilde > 0.0);
            trace.threshold_miss.push(row.n != 0);
            trace.threshold_gap.push(row.n_tilde);
        }
        Ok(trace)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file)).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

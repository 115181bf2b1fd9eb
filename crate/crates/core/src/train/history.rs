use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const HISTORY_CSV_HEADER: &str = "epoch,loss,bleu,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Validation BLEU, when it was computed this epoch.
    pub bleu: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn last_bleu(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|e| e.bleu)
    }

    pub fn median_seconds(&self) -> Option<f64> {
        let mut s: Vec<f64> = self.epochs.iter().map(|e| e.seconds).collect();
        if s.is_empty() {
            return None;
        }
        s.sort_by(f64::total_cmp);
        let n = s.len();
        Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
    }

    /// Floats are written in shortest round-trip form, so parsing the CSV
    /// gives back identical values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let bleu = e.bleu.map(|b| b.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", e.epoch, e.loss, bleu, e.seconds).expect("writing to a String");
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HISTORY_CSV_HEADER) {
            return Err(Error::Integrity("history CSV header mismatch".into()));
        }
        let bad = |l: &str| Error::Integrity(format!("bad history row `{l}`"));
        let mut epochs = Vec::new();
        for l in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = l.split(',').collect();
            let [epoch, loss, bleu, seconds] = f[..] else {
                return Err(bad(l));
            };
            epochs.push(EpochRecord {
                epoch: epoch.parse().map_err(|_| bad(l))?,
                loss: loss.parse().map_err(|_| bad(l))?,
                bleu: if bleu.is_empty() {
                    None
                } else {
                    Some(bleu.parse().map_err(|_| bad(l))?)
                },
                seconds: seconds.parse().map_err(|_| bad(l))?,
            });
        }
        Ok(TrainingHistory { epochs })
    }
}

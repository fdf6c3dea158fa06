//! Dense ranking of methods per metric.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean subject-level ECE, in percent.
    EcePercent,
    UE,
    Bnf,
    Dice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Lower,
    Higher,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Lower => "lower",
            Direction::Higher => "higher",
        }
    }
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::EcePercent, Metric::UE, Metric::Bnf, Metric::Dice];

    pub fn direction(self) -> Direction {
        match self {
            Metric::EcePercent => Direction::Lower,
            _ => Direction::Higher,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::EcePercent => "ece_percent",
            Metric::UE => "u_e",
            Metric::Bnf => "bnf",
            Metric::Dice => "dice",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rounds to three decimals, the precision ranks are computed at.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub metric: Metric,
    pub direction: Direction,
    pub method: String,
    /// Rounded mean.
    pub mean: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub entries: Vec<RankEntry>,
}

impl RankTable {
    pub fn rank_of(&self, metric: Metric, method: &str) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| e.metric == metric && e.method == method)
            .map(|e| e.rank)
    }

    pub fn for_metric(&self, metric: Metric) -> impl Iterator<Item = &RankEntry> {
        self.entries.iter().filter(move |e| e.metric == metric)
    }
}

/// Dense ranks for one metric: equal rounded means share a rank and the next
/// distinct value takes the following integer. Methods without a value are
/// left out.
pub fn dense_ranks(values: &[(String, Option<f64>)], direction: Direction) -> Vec<(String, f64, usize)> {
    let present: Vec<(String, f64)> = values
        .iter()
        .filter_map(|(m, v)| v.filter(|x| x.is_finite()).map(|x| (m.clone(), round3(x))))
        .collect();
    let mut distinct: Vec<f64> = present.iter().map(|(_, v)| *v).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if direction == Direction::Higher {
        distinct.reverse();
    }
    present
        .into_iter()
        .map(|(m, v)| {
            let rank = distinct.iter().position(|&d| d == v).expect("value present") + 1;
            (m, v, rank)
        })
        .collect()
}

/// Per-method means for each metric; ECE is passed as a fraction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MethodMeans {
    pub method: String,
    pub ece: Option<f64>,
    pub u_e: Option<f64>,
    pub bnf: Option<f64>,
    pub dice: Option<f64>,
}

pub fn rank_methods(means: &[MethodMeans]) -> RankTable {
    let mut entries = Vec::new();
    for metric in Metric::ALL {
        let values: Vec<(String, Option<f64>)> = means
            .iter()
            .map(|m| {
                let v = match metric {
                    Metric::EcePercent => m.ece.map(|e| e * 100.0),
                    Metric::UE => m.u_e,
                    Metric::Bnf => m.bnf,
                    Metric::Dice => m.dice,
                };
                (m.method.clone(), v)
            })
            .collect();
        for (method, mean, rank) in dense_ranks(&values, metric.direction()) {
            entries.push(RankEntry {
                metric,
                direction: metric.direction(),
                method,
                mean,
                rank,
            });
        }
    }
    RankTable { entries }
}

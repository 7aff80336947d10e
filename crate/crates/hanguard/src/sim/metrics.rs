//! Metric rows and the `scenario,trial,metric,value` CSV.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricRow {
    pub trial: u32,
    pub metric: String,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricsReport {
    pub scenario: String,
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn new(scenario: impl Into<String>) -> MetricsReport {
        MetricsReport { scenario: scenario.into(), rows: Vec::new() }
    }

    pub fn push(&mut self, trial: u32, metric: impl Into<String>, value: impl ToString) {
        self.rows.push(MetricRow {
            trial,
            metric: metric.into(),
            value: value.to_string(),
        });
    }

    pub fn get(&self, trial: u32, metric: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|r| r.trial == trial && r.metric == metric)
            .map(|r| r.value.as_str())
    }

    /// All (trial, value) pairs for one metric, in emission order.
    pub fn values(&self, metric: &str) -> Vec<(u32, &str)> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.trial, r.value.as_str()))
            .collect()
    }

    pub fn int(&self, trial: u32, metric: &str) -> Option<i64> {
        self.get(trial, metric)?.parse().ok()
    }

    pub fn ints(&self, metric: &str) -> Vec<(u32, i64)> {
        self.values(metric)
            .into_iter()
            .filter_map(|(t, v)| Some((t, v.parse().ok()?)))
            .collect()
    }

    pub fn trials(&self) -> u32 {
        self.rows.iter().map(|r| r.trial + 1).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,trial,metric,value\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.scenario, row.trial, row.metric, row.value
            ));
        }
        out
    }
}

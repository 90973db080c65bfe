//! Sweep reports: per-run rows plus per-sweep-point median aggregates,
//! serialized as a stable CSV schema shared by every command. Wall times
//! go to a separate `timing.csv` so `report.csv` stays byte-reproducible.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    /// Sweep point label, e.g. `unet-3` or `layers-5`.
    pub sweep: String,
    /// Numeric sweep coordinate (depth, layer count, ...).
    pub value: f64,
    pub seed: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub g_loss: f64,
    pub d_loss: f64,
    pub l1: f64,
    pub adv: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub rows: Vec<RunRow>,
    /// (sweep label, seconds); non-deterministic, kept out of report.csv.
    pub timings: Vec<(String, f64)>,
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl MetricsReport {
    pub fn push(&mut self, row: RunRow) {
        self.rows.push(row);
    }

    /// Median row per sweep label, in first-appearance order.
    pub fn medians(&self) -> Vec<RunRow> {
        let mut labels: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !labels.contains(&r.sweep.as_str()) {
                labels.push(&r.sweep);
            }
        }
        labels
            .iter()
            .map(|label| {
                let group: Vec<&RunRow> = self.rows.iter().filter(|r| r.sweep == *label).collect();
                let field = |f: fn(&RunRow) -> f64| {
                    let mut vals: Vec<f64> = group.iter().map(|r| f(r)).collect();
                    median(&mut vals)
                };
                RunRow {
                    sweep: label.to_string(),
                    value: group[0].value,
                    seed: 0,
                    psnr: field(|r| r.psnr),
                    ssim: field(|r| r.ssim),
                    g_loss: field(|r| r.g_loss),
                    d_loss: field(|r| r.d_loss),
                    l1: field(|r| r.l1),
                    adv: field(|r| r.adv),
                }
            })
            .collect()
    }

    pub fn median_for(&self, label: &str) -> Option<RunRow> {
        self.medians().into_iter().find(|r| r.sweep == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,sweep,value,seed,psnr,ssim,g_loss,d_loss,l1,adv\n");
        let fmt_row = |kind: &str, seed: &str, r: &RunRow| {
            format!(
                "{kind},{},{},{seed},{},{},{},{},{},{}\n",
                r.sweep, r.value, r.psnr, r.ssim, r.g_loss, r.d_loss, r.l1, r.adv
            )
        };
        for r in &self.rows {
            out.push_str(&fmt_row("run", &r.seed.to_string(), r));
        }
        for r in &self.medians() {
            out.push_str(&fmt_row("median", "-", r));
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("sweep,wall_time_s\n");
        for (label, secs) in &self.timings {
            out.push_str(&format!("{label},{secs:.3}\n"));
        }
        out
    }
}

/// One checked claim inside a command verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub details: String,
}

/// Machine-readable outcome of an assertion command; serialized to
/// `verdict.json`, and the process exits nonzero when `passed` is false.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub command: String,
    pub passed: bool,
    pub assertions: Vec<Assertion>,
}

impl Verdict {
    pub fn new(command: &str) -> Self {
        Verdict { command: command.to_string(), passed: true, assertions: Vec::new() }
    }

    pub fn check(&mut self, name: &str, passed: bool, details: String) {
        self.assertions.push(Assertion { name: name.to_string(), passed, details });
        self.passed &= passed;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(sweep: &str, value: f64, seed: u64, ssim: f64) -> RunRow {
        RunRow { sweep: sweep.into(), value, seed, psnr: 20.0, ssim, g_loss: 1.0, d_loss: 0.5, l1: 0.1, adv: 0.4 }
    }

    #[test]
    fn medians_group_rows_in_order() {
        let mut rep = MetricsReport::default();
        rep.push(row("n-1", 1.0, 0, 0.5));
        rep.push(row("n-2", 2.0, 0, 0.8));
        rep.push(row("n-1", 1.0, 1, 0.7));
        rep.push(row("n-1", 1.0, 2, 0.6));
        let meds = rep.medians();
        assert_eq!(meds.len(), 2);
        assert_eq!(meds[0].sweep, "n-1");
        assert_eq!(meds[0].ssim, 0.6, "odd count takes the middle");
        assert_eq!(meds[1].ssim, 0.8);
    }

    #[test]
    fn csv_has_run_and_median_rows() {
        let mut rep = MetricsReport::default();
        rep.push(row("a", 1.0, 3, 0.5));
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "kind,sweep,value,seed,psnr,ssim,g_loss,d_loss,l1,adv");
        assert!(lines[1].starts_with("run,a,1,3,"));
        assert!(lines[2].starts_with("median,a,1,-,"));
    }

    #[test]
    fn verdict_aggregates_passed() {
        let mut v = Verdict::new("x");
        v.check("ok", true, "fine".into());
        assert!(v.passed);
        v.check("bad", false, "broke".into());
        assert!(!v.passed);
        assert_eq!(v.assertions.len(), 2);
    }
}

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One restored image. `runtime_s` is kept out of the CSV so that reports are
/// reproducible byte for byte; callers log it with the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub image: String,
    pub method: String,
    pub mr: f64,
    /// `None` for noiseless measurements.
    pub snr_db: Option<f64>,
    pub psnr_db: f64,
    pub ssim: f64,
    pub seed: u64,
    #[serde(skip)]
    pub runtime_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub mr: f64,
    pub snr_db: Option<f64>,
    pub count: usize,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RestorationReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
}

fn snr_label(snr: Option<f64>) -> String {
    snr.map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn group_key(row: &ReportRow) -> (String, u64, Option<u64>) {
    (row.method.clone(), row.mr.to_bits(), row.snr_db.map(f64::to_bits))
}

/// Rows sorted by (method, MR, SNR, image); one aggregate per
/// (method, MR, SNR) group in the same order.
pub fn build_report(mut rows: Vec<ReportRow>) -> RestorationReport {
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.mr.total_cmp(&b.mr))
            .then(a.snr_db.unwrap_or(f64::INFINITY).total_cmp(&b.snr_db.unwrap_or(f64::INFINITY)))
            .then(a.image.cmp(&b.image))
    });
    let mut aggregates: Vec<Aggregate> = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let key = group_key(&rows[start]);
        let end = rows[start..]
            .iter()
            .position(|r| group_key(r) != key)
            .map_or(rows.len(), |p| start + p);
        let group = &rows[start..end];
        let n = group.len() as f64;
        aggregates.push(Aggregate {
            method: group[0].method.clone(),
            mr: group[0].mr,
            snr_db: group[0].snr_db,
            count: group.len(),
            mean_psnr_db: group.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            mean_ssim: group.iter().map(|r| r.ssim).sum::<f64>() / n,
        });
        start = end;
    }
    RestorationReport { rows, aggregates }
}

impl RestorationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,method,mr,snr_db,psnr_db,ssim,seed\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.image,
                r.method,
                r.mr,
                snr_label(r.snr_db),
                r.psnr_db,
                r.ssim,
                r.seed
            )
            .expect("string write");
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.aggregates).expect("aggregates serialize")
    }

    pub fn aggregate(&self, method: &str, mr: f64, snr_db: Option<f64>) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.mr == mr && a.snr_db == snr_db)
    }
}

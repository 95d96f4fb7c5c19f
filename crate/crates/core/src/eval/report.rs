use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::Result;

fn db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    }
}

/// Formats a dB value; `+∞` is written as `inf`.
pub fn format_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: usize,
    #[serde(serialize_with = "db")]
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Scores of one method on one test set. Wall-clock time is kept out of the
/// report so reruns are byte-identical; see [`write_timing`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub method: String,
    pub domain: String,
    pub config_hash: String,
    pub samples: Vec<SampleScore>,
    #[serde(serialize_with = "db")]
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

impl ReconReport {
    pub fn new(method: &str, domain: &str, config_hash: &str, samples: Vec<SampleScore>) -> Self {
        let n = samples.len().max(1) as f64;
        let mean_psnr_db = samples.iter().map(|s| s.psnr_db).sum::<f64>() / n;
        let mean_ssim = samples.iter().map(|s| s.ssim).sum::<f64>() / n;
        Self {
            method: method.into(),
            domain: domain.into(),
            config_hash: config_hash.into(),
            samples,
            mean_psnr_db,
            mean_ssim,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample_id,method,psnr_db,ssim\n");
        for r in &self.samples {
            s.push_str(&format!("{},{},{},{}\n", r.sample_id, self.method, format_db(r.psnr_db), r.ssim));
        }
        s
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)? + "\n")?;
        fs::write(dir.join("report.csv"), self.to_csv())?;
        Ok(())
    }
}

/// Rows of a `report.csv` as `(sample_id, method, psnr_db, ssim)`.
pub fn parse_report_csv(text: &str) -> Result<Vec<(usize, String, f64, f64)>> {
    let bad = |l: &str| crate::Error::Format(format!("malformed report row `{l}`"));
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad(l));
            }
            let psnr = match f[2] {
                "inf" => f64::INFINITY,
                "-inf" => f64::NEG_INFINITY,
                v => v.parse().map_err(|_| bad(l))?,
            };
            Ok((f[0].parse().map_err(|_| bad(l))?, f[1].to_string(), psnr, f[3].parse().map_err(|_| bad(l))?))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub method: String,
    pub seconds: f64,
    pub per_sample_seconds: f64,
}

/// Wall-clock timings go to a separate `timing.json`.
pub fn write_timing(dir: &Path, timing: &[Timing]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(timing)? + "\n")?;
    Ok(())
}

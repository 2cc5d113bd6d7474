//! Merge trade-off curves: per-alpha scores and their least-squares lines.

use serde::{Deserialize, Serialize};

use crate::ratio::Ratio;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Absent when every `y` is equal (and more than two points were given).
    pub r_squared: Option<f64>,
    pub points: usize,
}

/// Ordinary least squares `y = slope * x + intercept`. Needs at least two
/// distinct `x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit, String> {
    if xs.len() != ys.len() {
        return Err(format!("{} x values but {} y values", xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err("a line needs at least two points".into());
    }
    let xm = xs.iter().sum::<f64>() / n as f64;
    let ym = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    if sxx == 0.0 {
        return Err("all x values are equal".into());
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let r_squared = if n == 2 {
        // Two distinct points are interpolated exactly.
        Some(1.0)
    } else {
        let ss_tot: f64 = ys.iter().map(|y| (y - ym) * (y - ym)).sum();
        let ss_res: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - (slope * x + intercept);
                r * r
            })
            .sum();
        (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        points: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: Ratio,
    pub general_score: f64,
    pub ecom_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeCurve {
    pub points: Vec<CurvePoint>,
    pub general_fit: LinearFit,
    pub ecom_fit: LinearFit,
}

impl MergeCurve {
    pub fn from_points(mut points: Vec<CurvePoint>) -> Result<Self, String> {
        points.sort_by_key(|p| p.alpha);
        if points.windows(2).any(|w| w[0].alpha == w[1].alpha) {
            return Err("duplicate alpha in scores".into());
        }
        let xs: Vec<f64> = points.iter().map(|p| p.alpha.to_f64()).collect();
        let general: Vec<f64> = points.iter().map(|p| p.general_score).collect();
        let ecom: Vec<f64> = points.iter().map(|p| p.ecom_score).collect();
        Ok(MergeCurve {
            general_fit: linear_fit(&xs, &general)?,
            ecom_fit: linear_fit(&xs, &ecom)?,
            points,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,general_score,ecom_score\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.alpha, p.general_score, p.ecom_score));
        }
        out
    }
}

/// Parses `alpha,general_score,ecom_score` rows (header required).
pub fn parse_scores_csv(text: &str) -> Result<Vec<CurvePoint>, String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == "alpha,general_score,ecom_score" => {}
        _ => return Err("expected header alpha,general_score,ecom_score".into()),
    }
    lines
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [alpha, general, ecom] = fields[..] else {
                return Err(format!("line {}: expected 3 fields", i + 1));
            };
            let number = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {s:?}: {e}", i + 1));
            Ok(CurvePoint {
                alpha: alpha.parse().map_err(|e| format!("line {}: {e}", i + 1))?,
                general_score: number(general)?,
                ecom_score: number(ecom)?,
            })
        })
        .collect()
}

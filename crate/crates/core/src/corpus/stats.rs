//! Statistical utilities: word error rate, one-way ANOVA, and the per-class
//! pose standard-deviation report.

use crate::corpus::{ClassLabel, Corpus, GESTURE_DIM, KEYPOINT_NAMES};
use crate::error::{Error, Result};

// ---- word error rate --------------------------------------------------------

/// Unit-cost Levenshtein distance, O(min(m,n)) memory.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let m = short.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut curr = vec![0usize; m + 1];
    for i in 1..=long.len() {
        curr[0] = i;
        for j in 1..=m {
            let cost = usize::from(long[i - 1] != short[j - 1]);
            curr[j] = (prev[j] + 1).min(curr[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}

/// Word error rate: edit distance over reference length.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("wer: empty reference"));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Transcript preprocessing: lowercase, strip punctuation, split on
/// whitespace. Tokens that are pure punctuation disappear.
pub fn normalize_transcript(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in s.chars() {
        if c.is_alphanumeric() || c == '\'' {
            for lc in c.to_lowercase() {
                word.push(lc);
            }
        } else if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

// ---- one-way ANOVA ----------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
}

/// One-way ANOVA over `groups`. F is the between/within mean-square ratio;
/// the p-value is the F-distribution survival function evaluated through the
/// regularized incomplete beta function.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::invalid("anova: need at least 2 groups"));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::invalid(format!(
            "anova: every group needs at least 2 values, got {}",
            g.len()
        )));
    }
    let n_total: usize = groups.iter().map(|g| g.len()).sum();
    let grand_mean: f64 =
        groups.iter().flatten().sum::<f64>() / n_total as f64;

    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (mean - grand_mean) * (mean - grand_mean);
        ssw += g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    }
    let df_between = groups.len() - 1;
    let df_within = n_total - groups.len();
    if ssw == 0.0 {
        return Err(Error::data(
            "anova: zero within-group variance in every group, F undefined",
        ));
    }
    let f = (ssb / df_between as f64) / (ssw / df_within as f64);
    let p = f_survival(f, df_between as f64, df_within as f64);
    Ok(AnovaResult {
        f,
        p,
        df_between,
        df_within,
    })
}

/// P(F > x) for the F distribution with (d1, d2) degrees of freedom.
pub fn f_survival(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let t = d2 / (d2 + d1 * x);
    regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, t)
}

/// Regularized incomplete beta function I_x(a, b) by the continued-fraction
/// expansion, accurate to ~1e-14 for moderate arguments.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + a * x.ln()
        + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cont_frac(a, b, x) / a
    } else {
        1.0 - front * beta_cont_frac(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 3e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Log-gamma via the Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return pi.ln() - (pi * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.999_999_999_999_809_9;
    for (i, &c) in COEF.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

// ---- pose standard deviation -------------------------------------------------

#[derive(Clone, Debug)]
pub struct PoseStdRow {
    pub label: ClassLabel,
    /// Population std of each of the 69 gesture coordinates.
    pub stds: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PoseStdReport {
    pub rows: Vec<PoseStdRow>,
}

/// Per-class standard deviation of every gesture coordinate.
pub fn pose_std_report(corpus: &Corpus) -> Result<PoseStdReport> {
    if corpus.is_empty() {
        return Err(Error::data("pose_std_report: empty corpus"));
    }
    let mut rows = Vec::new();
    for label in ClassLabel::ALL {
        let mut count = 0usize;
        let mut sum = vec![0.0f64; GESTURE_DIM];
        let mut sum_sq = vec![0.0f64; GESTURE_DIM];
        for sample in corpus.samples.iter().filter(|s| s.label == label) {
            for tok in &sample.tokens {
                count += 1;
                for (j, &v) in tok.gesture.iter().enumerate() {
                    sum[j] += v;
                    sum_sq[j] += v * v;
                }
            }
        }
        if count == 0 {
            continue;
        }
        let stds = (0..GESTURE_DIM)
            .map(|j| {
                let mean = sum[j] / count as f64;
                (sum_sq[j] / count as f64 - mean * mean).max(0.0).sqrt()
            })
            .collect();
        rows.push(PoseStdRow { label, stds });
    }
    Ok(PoseStdReport { rows })
}

impl PoseStdReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for name in KEYPOINT_NAMES {
            for axis in ["x", "y", "z"] {
                out.push(',');
                out.push_str(name);
                out.push('_');
                out.push_str(axis);
            }
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(row.label.name());
            for v in &row.stds {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

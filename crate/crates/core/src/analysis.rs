//! Raw/aligned interpolation sweeps and the retrieval-generation trade-off.

use std::collections::{BTreeSet, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize};

use crate::projection::ProjectionParams;
use crate::retrieval::{
    evaluate_retrieval, test_pairs, AudioMapping, PairedEmbeddings, RetrievalProtocol,
    RetrievalReport,
};
use crate::store::EmbeddingDataset;
use crate::{Error, Result};

pub const DEFAULT_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InterpolationConfig {
    pub alphas: Vec<f64>,
    pub protocol: RetrievalProtocol,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        Self {
            alphas: DEFAULT_ALPHAS.to_vec(),
            protocol: RetrievalProtocol::default(),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// `alpha * raw + (1 - alpha) * aligned`.
pub fn interpolate(z_raw: &[f32], z_aligned: &[f32], alpha: f64) -> Result<Vec<f32>> {
    check_alpha(alpha)?;
    if z_raw.len() != z_aligned.len() {
        return Err(Error::Shape(format!(
            "interpolating vectors of lengths {} and {}",
            z_raw.len(),
            z_aligned.len()
        )));
    }
    Ok(z_raw
        .iter()
        .zip(z_aligned)
        .map(|(&r, &a)| (alpha * r as f64 + (1.0 - alpha) * a as f64) as f32)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub report: RetrievalReport,
}

pub fn interpolation_sweep(
    ds: &EmbeddingDataset,
    params: &ProjectionParams,
    cfg: &InterpolationConfig,
) -> Result<Vec<SweepRow>> {
    for &a in &cfg.alphas {
        check_alpha(a)?;
    }
    let raw = test_pairs(ds, AudioMapping::RawPad)?;
    let aligned = test_pairs(ds, AudioMapping::Projected(params))?;
    cfg.alphas
        .iter()
        .map(|&alpha| {
            let mut audio = Array2::zeros(raw.audio.dim());
            for ((mut out, r), a) in audio
                .outer_iter_mut()
                .zip(raw.audio.outer_iter())
                .zip(aligned.audio.outer_iter())
            {
                let mixed = interpolate(&r.to_vec(), &a.to_vec(), alpha)?;
                out.assign(&ndarray::ArrayView1::from(&mixed[..]));
            }
            let pairs = PairedEmbeddings {
                ids: raw.ids.clone(),
                audio,
                visual: raw.visual.clone(),
            };
            Ok(SweepRow {
                alpha,
                report: evaluate_retrieval(&pairs, &cfg.protocol)?,
            })
        })
        .collect()
}

/// Plain-text `alpha | mean rank | T1` table, one column pair per direction.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha");
    if let Some(first) = rows.first() {
        for d in &first.report.directions {
            out.push_str(&format!(
                "  {:>12} {:>6}",
                format!("{} rank", d.direction.label()),
                "T1"
            ));
        }
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{:<5.2}", row.alpha));
        for d in &row.report.directions {
            out.push_str(&format!("  {:>12.2} {:>6.1}", d.mean_rank, d.top1));
        }
        out.push('\n');
    }
    out
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "{} x values vs {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation(
            "need at least two points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn flexible_bool<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(serde::de::Error::custom(format!(
            "not a boolean: {other:?}"
        ))),
    }
}

/// One row of an externally scored generation table.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
pub struct GenerationEntry {
    pub encoder: String,
    #[serde(deserialize_with = "flexible_bool")]
    pub aligned: bool,
    pub overall_score: f64,
}

/// Top-1 accuracy (percent) of one encoder in one configuration.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
pub struct RetrievalEntry {
    pub encoder: String,
    #[serde(deserialize_with = "flexible_bool")]
    pub aligned: bool,
    pub top1: f64,
}

fn read_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::Csv(e.to_string())))
        .collect()
}

/// Parses `encoder,aligned,overall_score`.
pub fn read_generation_csv(text: &str) -> Result<Vec<GenerationEntry>> {
    read_csv(text)
}

/// Parses `encoder,aligned,top1`.
pub fn read_retrieval_csv(text: &str) -> Result<Vec<RetrievalEntry>> {
    read_csv(text)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub encoder_label: String,
    pub raw_top1: f64,
    pub aligned_top1: f64,
    /// Aligned minus raw Top-1, percentage points.
    pub retrieval_gain_pp: f64,
    pub raw_score: f64,
    pub aligned_score: f64,
    /// Raw minus aligned overall generation score.
    pub generation_delta: f64,
    /// Generation score lost per point of retrieval gain.
    pub efficiency: Option<f64>,
    /// Same, as a percentage of the raw score.
    pub relative_loss_pct_per_pp: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeoffTable {
    pub rows: Vec<TradeoffRow>,
    /// Pearson r between retrieval gain and generation delta.
    pub r: f64,
    /// With two encoders r is always +/-1.
    pub low_sample_size: bool,
}

impl TradeoffTable {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("row serializes"));
            out.push('\n');
        }
        out.push_str(
            &serde_json::json!({"pearson_r": self.r, "low_sample_size": self.low_sample_size})
                .to_string(),
        );
        out.push('\n');
        out
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<14} {:>9} {:>10} {:>12} {:>10}\n",
            "encoder", "gain(pp)", "gen delta", "loss/pp", "%/pp"
        );
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>9.2} {:>10.3} {:>12} {:>10}\n",
                r.encoder_label,
                r.retrieval_gain_pp,
                r.generation_delta,
                fmt_opt(r.efficiency),
                fmt_opt(r.relative_loss_pct_per_pp)
            ));
        }
        out.push_str(&format!("pearson r = {:.4}", self.r));
        if self.low_sample_size {
            out.push_str(" (only two encoders: r is +/-1 by construction)");
        }
        out.push('\n');
        out
    }
}

pub fn tradeoff_report(
    retrieval: &[RetrievalEntry],
    generation: &[GenerationEntry],
) -> Result<TradeoffTable> {
    let ret: HashMap<(&str, bool), f64> = retrieval
        .iter()
        .map(|e| ((e.encoder.as_str(), e.aligned), e.top1))
        .collect();
    let gen: HashMap<(&str, bool), f64> = generation
        .iter()
        .map(|e| ((e.encoder.as_str(), e.aligned), e.overall_score))
        .collect();

    let mut order: Vec<&str> = Vec::new();
    for e in retrieval
        .iter()
        .map(|e| &e.encoder)
        .chain(generation.iter().map(|e| &e.encoder))
    {
        if !order.contains(&e.as_str()) {
            order.push(e);
        }
    }
    let mut missing = BTreeSet::new();
    for &enc in &order {
        for aligned in [false, true] {
            let tag = if aligned { "aligned" } else { "raw" };
            if !ret.contains_key(&(enc, aligned)) {
                missing.insert(format!("{enc} ({tag}, retrieval)"));
            }
            if !gen.contains_key(&(enc, aligned)) {
                missing.insert(format!("{enc} ({tag}, generation)"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing.into_iter().collect()));
    }
    if order.len() < 2 {
        return Err(Error::Validation(
            "trade-off analysis needs at least two encoders".into(),
        ));
    }

    let rows: Vec<TradeoffRow> = order
        .iter()
        .map(|&enc| {
            let (raw_top1, aligned_top1) = (ret[&(enc, false)], ret[&(enc, true)]);
            let (raw_score, aligned_score) = (gen[&(enc, false)], gen[&(enc, true)]);
            let gain = aligned_top1 - raw_top1;
            let delta = raw_score - aligned_score;
            let efficiency = (gain != 0.0).then(|| delta / gain);
            TradeoffRow {
                encoder_label: enc.to_string(),
                raw_top1,
                aligned_top1,
                retrieval_gain_pp: gain,
                raw_score,
                aligned_score,
                generation_delta: delta,
                efficiency,
                relative_loss_pct_per_pp: efficiency
                    .filter(|_| raw_score != 0.0)
                    .map(|e| 100.0 * e / raw_score),
            }
        })
        .collect();
    let gains: Vec<f64> = rows.iter().map(|r| r.retrieval_gain_pp).collect();
    let deltas: Vec<f64> = rows.iter().map(|r| r.generation_delta).collect();
    let r = pearson(&gains, &deltas)?;
    Ok(TradeoffTable {
        low_sample_size: rows.len() == 2,
        rows,
        r,
    })
}

//! Train/track/eval orchestration for the five ablation variants, sharing
//! one seed and one dataset split.

use crate::config::RunConfig;
use crate::data::{self, SequenceDataset};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{self, Variant};
use crate::tensor::ParamStore;
use crate::{tracker, train};
use std::path::Path;

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub success: f64,
    pub precision: f64,
}

/// Track every sequence and average success AUC and P@20.
pub fn evaluate_model(
    store: &ParamStore<f32>,
    cfg: &model::ModelConfig,
    sequences: &[SequenceDataset],
) -> Result<(f64, f64)> {
    if sequences.is_empty() {
        return Err(Error::Data("no evaluation sequences".into()));
    }
    let mut success = 0.0;
    let mut precision = 0.0;
    for seq in sequences {
        let pred = tracker::track_sequence(seq, store, cfg, None)?;
        success += eval::success_curve(&pred, &seq.boxes)?.auc;
        precision += eval::precision_curve(&pred, &seq.boxes)?
            .p20
            .unwrap_or(0.0);
    }
    let n = sequences.len() as f64;
    Ok((success / n, precision / n))
}

/// Train, track, and score one variant from scratch.
pub fn run_variant(
    cfg: &RunConfig,
    variant: Variant,
    train_set: &[SequenceDataset],
    test_set: &[SequenceDataset],
) -> Result<AblationRow> {
    let mut mcfg = cfg.model_config();
    mcfg.variant = variant;
    let mut store = model::init_params(&mcfg, cfg.seed)?;
    train::train(&mut store, &mcfg, train_set, &cfg.train, None, None)?;
    let (success, precision) = evaluate_model(&store, &mcfg, test_set)?;
    Ok(AblationRow { variant, success, precision })
}

/// All five variants with a shared seed; rows in table order.
pub fn run(
    cfg: &RunConfig,
    train_set: &[SequenceDataset],
    test_set: &[SequenceDataset],
    out_csv: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        rows.push(run_variant(cfg, variant, train_set, test_set)?);
    }
    if let Some(path) = out_csv {
        std::fs::write(path, table_csv(&rows))?;
    }
    Ok(rows)
}

/// Table with the ablation structure: module check marks plus the two
/// headline scores per variant.
pub fn table_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,ffm,bfm,tape,success,precision\n");
    for row in rows {
        let (ffm, bfm) = row.variant.streams();
        let mark = |b: bool| if b { "x" } else { "" };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.variant.as_str(),
            mark(ffm),
            mark(bfm),
            mark(row.variant.uses_tape()),
            row.success,
            row.precision,
        ));
    }
    out
}

/// Load a `train/` + `test/` split as written by `synth --suite`.
pub fn load_split(data_dir: &Path) -> Result<(Vec<SequenceDataset>, Vec<SequenceDataset>)> {
    let train_dir = data_dir.join("train");
    let test_dir = data_dir.join("test");
    if !train_dir.is_dir() || !test_dir.is_dir() {
        return Err(Error::Data(format!(
            "{} must contain train/ and test/ sequence directories",
            data_dir.display()
        )));
    }
    Ok((data::load_dataset(&train_dir)?, data::load_dataset(&test_dir)?))
}

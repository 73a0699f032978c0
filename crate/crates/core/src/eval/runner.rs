use crate::data::{load_image, load_samples, SampleRecord};
use crate::error::Result;
use crate::eval::CellRunner;
use crate::model::{FcnConfig, FcnModel};
use crate::rng::derive_seed;
use crate::train::{stage1_train, stage2_finetune, TrainConfig};

/// Spoofness of every record, loading one image at a time.
pub fn score_records(model: &FcnModel, records: &[SampleRecord], expected_side: Option<usize>) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| Ok(model.spoofness(&load_image(&r.image_path, expected_side)?)? as f64))
        .collect()
}

/// Trains a fresh model per cell (Stage I, then optionally Stage II) and
/// scores the cell's test records.
#[derive(Clone, Debug)]
pub struct FcnRunner {
    pub model: FcnConfig,
    pub stage1: TrainConfig,
    pub stage2: Option<TrainConfig>,
    pub expected_side: Option<usize>,
    pub frame_stride: usize,
}

impl CellRunner for FcnRunner {
    fn run_cell(&mut self, cell: usize, train: &[SampleRecord], test: &[SampleRecord]) -> Result<Vec<f64>> {
        let samples = load_samples(train, self.expected_side, self.frame_stride)?;
        let cell_seed = |seed| derive_seed(seed, "cell", cell as u64);
        let mut model = FcnModel::new(self.model.clone(), cell_seed(self.stage1.seed))?;
        let s1 = TrainConfig {
            seed: cell_seed(self.stage1.seed),
            ..self.stage1.clone()
        };
        stage1_train(&mut model, &samples, &s1)?;
        if let Some(cfg) = &self.stage2 {
            let s2 = TrainConfig {
                seed: cell_seed(cfg.seed),
                ..cfg.clone()
            };
            stage2_finetune(&mut model, &samples, &s2)?;
        }
        score_records(&model, test, self.expected_side)
    }
}

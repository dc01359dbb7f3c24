use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean MSE over the epoch's batches, in normalized units.
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_nmae_percent: f64,
    /// Wall-clock time of the optimization steps, validation excluded.
    pub seconds: f64,
    pub trainable_params: usize,
}

/// Append-only per-epoch history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    records: Vec<EpochRecord>,
}

impl MetricsLog {
    pub const HEADER: &'static str = "epoch,train_loss,val_mse,val_nmae_percent,seconds,trainable_params";

    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .min_by(|a, b| a.val_nmae_percent.total_cmp(&b.val_nmae_percent))
    }

    pub fn avg_epoch_seconds(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.seconds).sum::<f64>() / self.records.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:e},{:e},{},{:.6},{}\n",
                r.epoch, r.train_loss, r.val_mse, r.val_nmae_percent, r.seconds, r.trainable_params
            ));
        }
        out
    }
}

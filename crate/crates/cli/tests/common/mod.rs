#![allow(dead_code)]

use std::path::Path;

use memotion_cli::ExperimentConfig;

/// Toy BiLSTM + CNN model on 16px synthetic memes.
pub const TOY_MODEL: &str = r#"
[model]
fusion = "{fusion}"
tasks = {tasks}
text = { kind = "bi_lstm", max_len = 12, embedding_dim = 8, lstm_units = 8, layers = 1, dropout = 0.1, recurrent_dropout = 0.0 }
image = { kind = "cnn", input_size = 16, channels = 3, blocks = [{ filters = 4, kernel = 3, stride = 1, padding = 1, pool = true }, { filters = 8, kernel = 3, stride = 1, padding = 1, pool = true }], pool_size = 2, pool_stride = 2, dense = [16], dropout = 0.1 }
dims = { modality_vec = 16, joint_vec = 32, gmu_hidden = 16 }
early = { projection = 16 }
"#;

pub struct Toy<'a> {
    pub name: &'a str,
    pub seed: u64,
    pub n: usize,
    pub kind: &'a str,
    pub fusion: &'a str,
    pub tasks: &'a str,
    pub epochs: usize,
}

impl Default for Toy<'_> {
    fn default() -> Self {
        Toy {
            name: "toy",
            seed: 0,
            n: 120,
            kind: "redundant",
            fusion: "early",
            tasks: r#"["sentiment"]"#,
            epochs: 8,
        }
    }
}

impl Toy<'_> {
    pub fn toml(&self, out: &Path) -> String {
        let model = TOY_MODEL.replace("{fusion}", self.fusion).replace("{tasks}", self.tasks);
        format!(
            r#"
name = "{name}"
output_dir = "{out}"
seed = {seed}

[data.synthetic]
n = {n}
seed = 11
image_size = 16
columns = {{ sentiment = {{ kind = "{kind}" }} }}

[split]
val_fraction = 0.25
seed = 0
{model}
[train]
max_epochs = {epochs}
batch_size = 16
early_stopping = {{ patience = 3, min_delta = 0.0 }}
"#,
            name = self.name,
            out = out.display(),
            seed = self.seed,
            n = self.n,
            kind = self.kind,
            epochs = self.epochs,
        )
    }

    pub fn config(&self, out: &Path) -> ExperimentConfig {
        ExperimentConfig::parse(&self.toml(out), Path::new("")).unwrap()
    }
}

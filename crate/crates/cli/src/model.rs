//! Model dump: a JSON header followed by one record per kept posterior draw.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use mpbart::sampler::DrawView;
use mpbart::trees::{CutGrid, Forest, NodeRecord, Tree};
use mpbart::LabelMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::table::Schema;
use crate::Invalid;

pub const FORMAT: &str = "mpbart-model/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub config: RunConfig,
    pub chain: usize,
    pub labels: LabelMap,
    pub schema: Schema,
    pub grid: CutGrid,
    pub n_train: usize,
    pub n_draws: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrawRecord {
    pub iteration: usize,
    pub mean_scale: f64,
    pub sigma: Vec<Vec<f64>>,
    /// Per latent dimension, per tree, nodes in preorder.
    pub forests: Vec<Vec<Vec<NodeRecord>>>,
}

impl DrawRecord {
    pub fn from_view(view: &DrawView<'_>, grid: &CutGrid) -> Self {
        let s = view.sigma;
        Self {
            iteration: view.iteration,
            mean_scale: view.mean_scale,
            sigma: (0..s.nrows()).map(|i| (0..s.ncols()).map(|j| s[(i, j)]).collect()).collect(),
            forests: view
                .forests
                .iter()
                .map(|f| f.trees.iter().map(|t| t.to_records(grid)).collect())
                .collect(),
        }
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let c = self.sigma.len();
        DMatrix::from_fn(c, c, |i, j| self.sigma[i][j])
    }

    pub fn forests(&self, grid: &CutGrid) -> Result<Vec<Forest>> {
        self.forests
            .iter()
            .enumerate()
            .map(|(j, trees)| {
                let trees = trees.iter().map(|t| Tree::from_records(t, grid)).collect::<mpbart::Result<Vec<_>>>()?;
                Ok(Forest { trees, latent_dim: j })
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Model {
    pub header: Header,
    pub draws: Vec<DrawRecord>,
}

impl Model {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("opening model {}", path.display()))?;
        let model: Model = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Invalid(format!("model {}: {e}", path.display())))?;
        if model.header.format != FORMAT {
            bail!(Invalid(format!("model {}: unsupported format '{}'", path.display(), model.header.format)));
        }
        let c = model.header.labels.latent_dim();
        if model.draws.iter().any(|d| d.sigma.len() != c || d.forests.len() != c) {
            bail!(Invalid(format!("model {}: draw dimensions disagree with the label map", path.display())));
        }
        Ok(model)
    }
}

/// Writes the model incrementally so forests never accumulate in memory.
pub struct ModelWriter {
    out: BufWriter<File>,
    written: usize,
}

impl ModelWriter {
    pub fn create(path: &Path, header: &Header) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        out.write_all(b"{\"header\":")?;
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b",\"draws\":[\n")?;
        Ok(Self { out, written: 0 })
    }

    pub fn push(&mut self, draw: &DrawRecord) -> Result<()> {
        if self.written > 0 {
            self.out.write_all(b",\n")?;
        }
        serde_json::to_writer(&mut self.out, draw)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<usize> {
        self.out.write_all(b"\n]}\n")?;
        self.out.flush()?;
        Ok(self.written)
    }
}

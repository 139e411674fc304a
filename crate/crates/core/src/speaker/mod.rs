//! Speaker analytics: a spectral voice embedding, a linear gender
//! classifier and cosine agglomerative clustering.

mod cluster;
mod embed;
mod svm;

use std::io::Write;
use std::path::Path;

pub use cluster::{cluster_assignments, estimate_speaker_count, SpeakerClusters};
pub use embed::{cosine, embed_voice, pitch_track, projection, raw_features, VoiceEmbedding, EMBEDDING_DIM, MEL_BANDS, RAW_DIM};
pub use svm::{train_gender_svm, GenderModel, SvmConfig};

use crate::error::{Error, Result};

/// Writes `id` followed by the embedding values, tab separated.
pub fn write_embeddings(path: &Path, embeddings: &[VoiceEmbedding]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?);
    for e in embeddings {
        write!(f, "{}", e.id).map_err(|x| Error::io(ctx(), x))?;
        for v in &e.vector {
            write!(f, "\t{v}").map_err(|x| Error::io(ctx(), x))?;
        }
        writeln!(f).map_err(|x| Error::io(ctx(), x))?;
    }
    f.flush().map_err(|x| Error::io(ctx(), x))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<VoiceEmbedding>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut it = l.split('\t');
            let id = it.next().unwrap_or_default().to_string();
            let vector = it
                .map(|v| v.parse::<f32>().map_err(|_| Error::Data(format!("bad embedding value `{v}` for `{id}`"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(VoiceEmbedding { id, vector, unvoiced: false })
        })
        .collect()
}

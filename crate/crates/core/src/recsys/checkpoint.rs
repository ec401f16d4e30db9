//! `params.bin` holds the tensors as little-endian f32 in the order
//! user_table, w1, b1, w2, b2; `params.json` holds shapes and metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Hyperparams, RecsysError, Tensors, TwoTowerParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub d_item: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub user_ids: Vec<String>,
    pub seed: u64,
    pub epoch: usize,
    pub hyperparams: Hyperparams,
    pub combo_tag: String,
}

fn err(path: &Path, message: impl ToString) -> RecsysError {
    RecsysError::Checkpoint {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

pub fn save_checkpoint(
    dir: &Path,
    params: &TwoTowerParams<f32>,
    hp: &Hyperparams,
    epoch: usize,
    combo_tag: &str,
) -> Result<(), RecsysError> {
    fs::create_dir_all(dir).map_err(|e| err(dir, e))?;
    let mut bytes = Vec::new();
    for (t, _) in params.tensors.parts() {
        bytes.extend(t.iter().flat_map(|v| v.to_le_bytes()));
    }
    let bin = dir.join("params.bin");
    fs::write(&bin, bytes).map_err(|e| err(&bin, e))?;
    let meta = CheckpointMeta {
        d_item: params.d_item,
        hidden: params.hidden,
        out_dim: params.out_dim,
        user_ids: params.user_ids.clone(),
        seed: hp.seed,
        epoch,
        hyperparams: hp.clone(),
        combo_tag: combo_tag.to_string(),
    };
    let json = dir.join("params.json");
    fs::write(&json, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| err(&json, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(TwoTowerParams<f32>, CheckpointMeta), RecsysError> {
    let json = dir.join("params.json");
    let text = fs::read_to_string(&json).map_err(|e| err(&json, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| err(&json, e))?;
    let bin = dir.join("params.bin");
    let bytes = fs::read(&bin).map_err(|e| err(&bin, e))?;
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let (n, d, h, o) = (meta.user_ids.len(), meta.d_item, meta.hidden, meta.out_dim);
    let sizes = [n * o, d * h, h, h * o, o];
    if bytes.len() % 4 != 0 || floats.len() != sizes.iter().sum::<usize>() {
        return Err(err(&bin, "tensor sizes do not match params.json"));
    }
    let mut rest = floats.as_slice();
    let mut take = |k: usize| {
        let (a, b) = rest.split_at(k);
        rest = b;
        a.to_vec()
    };
    let tensors = Tensors {
        user_table: take(sizes[0]),
        w1: take(sizes[1]),
        b1: take(sizes[2]),
        w2: take(sizes[3]),
        b2: take(sizes[4]),
    };
    let params = TwoTowerParams::from_tensors(meta.user_ids.clone(), d, h, o, tensors);
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recsys::init_params_with;

    #[test]
    fn round_trip() {
        let p = init_params_with::<f32>(vec!["a".into(), "b".into()], 3, 4, 5, 9);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &p, &Hyperparams::default(), 7, "text").unwrap();
        let (back, meta) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, p);
        assert_eq!(meta.epoch, 7);
    }
}

//! On-disk layout of ingested data.
//!
//! A split directory holds `interactions.jsonl` (one interaction per line,
//! tagged with its partition), `candidates.tsv` (`user_id<TAB>item,item,...`)
//! and `splits.json` (seed and catalogue).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, DatasetSplits, Interaction, Item, Partition};

#[derive(Serialize, Deserialize)]
struct InteractionLine {
    partition: Partition,
    #[serde(flatten)]
    interaction: Interaction,
}

#[derive(Serialize, Deserialize)]
struct SplitsMeta {
    seed: u64,
    catalog: Vec<String>,
}

fn create(path: &Path) -> Result<BufWriter<File>, CorpusError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CorpusError::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| CorpusError::io(path, e))
}

pub fn write_items<'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a Item>,
) -> Result<(), CorpusError> {
    let mut w = create(path)?;
    for item in items {
        let line = serde_json::to_string(item).expect("items serialize");
        writeln!(w, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn read_items(path: &Path) -> Result<BTreeMap<String, Item>, CorpusError> {
    let mut out = BTreeMap::new();
    for (idx, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: Item = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.insert(item.item_id.clone(), item);
    }
    Ok(out)
}

pub fn write_splits(dir: &Path, splits: &DatasetSplits) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;

    let path = dir.join("interactions.jsonl");
    let mut w = create(&path)?;
    for (partition, list) in [
        (Partition::Train, &splits.train),
        (Partition::Validation, &splits.val),
        (Partition::Test, &splits.test),
    ] {
        for interaction in list {
            let line = serde_json::to_string(&InteractionLine {
                partition,
                interaction: interaction.clone(),
            })
            .expect("interactions serialize");
            writeln!(w, "{line}").map_err(|e| CorpusError::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| CorpusError::io(&path, e))?;

    let path = dir.join("candidates.tsv");
    let mut w = create(&path)?;
    for (user, items) in &splits.eval_candidates {
        writeln!(w, "{user}\t{}", items.join(",")).map_err(|e| CorpusError::io(&path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(&path, e))?;

    let path = dir.join("splits.json");
    let meta = SplitsMeta {
        seed: splits.seed,
        catalog: splits.catalog.clone(),
    };
    fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serializes"))
        .map_err(|e| CorpusError::io(&path, e))
}

pub fn read_splits(dir: &Path) -> Result<DatasetSplits, CorpusError> {
    let path = dir.join("splits.json");
    let text = fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
    let meta: SplitsMeta =
        serde_json::from_str(&text).map_err(|e| CorpusError::Manifest(e.to_string()))?;

    let mut splits = DatasetSplits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        eval_candidates: BTreeMap::new(),
        catalog: meta.catalog,
        seed: meta.seed,
    };
    let path = dir.join("interactions.jsonl");
    for (idx, line) in read_lines(&path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: InteractionLine = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        match parsed.partition {
            Partition::Train => splits.train.push(parsed.interaction),
            Partition::Validation => splits.val.push(parsed.interaction),
            Partition::Test => splits.test.push(parsed.interaction),
        }
    }
    let path = dir.join("candidates.tsv");
    for (idx, line) in read_lines(&path)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (user, items) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: "expected user_id<TAB>items".into(),
        })?;
        let items = if items.is_empty() {
            Vec::new()
        } else {
            items.split(',').map(str::to_string).collect()
        };
        splits.eval_candidates.insert(user.to_string(), items);
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;

    #[test]
    fn splits_round_trip() {
        let splits = DatasetSplits {
            train: vec![Interaction::observed("u1", "a"), Interaction::observed("u1", "b")],
            val: vec![Interaction::observed("u1", "c")],
            test: vec![Interaction::observed("u1", "d")],
            eval_candidates: [("u1".to_string(), vec!["c".into(), "d".into(), "e".into()])]
                .into_iter()
                .collect(),
            catalog: vec!["a", "b", "c", "d", "e"].into_iter().map(String::from).collect(),
            seed: 42,
        };
        let dir = tempfile::tempdir().unwrap();
        write_splits(dir.path(), &splits).unwrap();
        assert_eq!(read_splits(dir.path()).unwrap(), splits);
    }

    #[test]
    fn items_round_trip() {
        let mut item = Item::stub("x", Source::Amazon);
        item.description = "multi\nline, \"quoted\"".into();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("items.jsonl");
        write_items(&p, [&item]).unwrap();
        assert_eq!(read_items(&p).unwrap()["x"], item);
    }
}

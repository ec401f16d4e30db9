//! Corpus fan-out with a resumable JSON-lines journal.
//!
//! Each journal line records the outcome for one (item, strategy): `done`
//! with its record, `skipped` with a reason, or `failed`. A rerun carries
//! over `done` and `skipped` entries and retries `failed` ones.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{complete_cached, ChatBackend, ChatRequest, EnrichmentRecord, GatewayError, ResponseCache};
use crate::corpus::Item;
use crate::pool::map_bounded;
use crate::prompting::{self, Intermediates, PromptConfig, PromptError, Strategy, TextStage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JournalStatus {
    Done,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub item_id: String,
    pub strategy_tag: String,
    pub status: JournalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<EnrichmentRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EnrichOptions {
    pub prompt_config: PromptConfig,
    /// Journal entries are flushed to disk after this many items.
    pub checkpoint_every: usize,
}

impl Default for EnrichOptions {
    fn default() -> Self {
        EnrichOptions {
            prompt_config: PromptConfig::default(),
            checkpoint_every: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnrichReport {
    /// One record per enriched item, ordered by item id.
    pub records: Vec<EnrichmentRecord>,
    pub skipped: Vec<(String, String)>,
    pub failed: Vec<(String, String)>,
    /// Items whose outcome was taken from an earlier run's journal.
    pub resumed: usize,
}

struct Journal {
    path: PathBuf,
    file: File,
    pending: Vec<JournalEntry>,
    every: usize,
}

impl Journal {
    fn push(&mut self, entry: JournalEntry) -> Result<(), GatewayError> {
        self.pending.push(entry);
        if self.pending.len() >= self.every {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), GatewayError> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for e in self.pending.drain(..) {
            buf.push_str(&serde_json::to_string(&e).expect("journal entries serialize"));
            buf.push('\n');
        }
        self.file
            .write_all(buf.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| GatewayError::io(&self.path, e))
    }
}

fn load_journal(path: &Path, tag: &str) -> Result<HashMap<String, JournalEntry>, GatewayError> {
    let mut out = HashMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let file = File::open(path).map_err(|e| GatewayError::io(path, e))?;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JournalEntry>(&line) {
            Ok(e) if e.strategy_tag == tag => {
                out.insert(e.item_id.clone(), e);
            }
            Ok(_) => {}
            Err(e) => warn!("{}:{}: ignoring unreadable journal line ({e})", path.display(), idx + 1),
        }
    }
    Ok(out)
}

enum Outcome {
    Done(EnrichmentRecord),
    Skipped(String),
    Failed(String),
}

fn run_item(
    item: &Item,
    strategy: Strategy,
    backend: &dyn ChatBackend,
    cache: &ResponseCache,
    config: &PromptConfig,
) -> Result<Outcome, GatewayError> {
    let ask = |prompt: &prompting::RenderedPrompt| {
        complete_cached(
            &ChatRequest {
                item_id: &item.item_id,
                prompt,
            },
            backend,
            cache,
        )
        .map(|(text, _)| text)
    };
    let result = (|| -> Result<(prompting::RenderedPrompt, String), GatewayError> {
        let prompt = if strategy.is_separate() {
            let (text_stage, image_prompt) = prompting::render_separate_stage1(item, config)?;
            let r_text = match text_stage {
                TextStage::Passthrough(t) => t,
                TextStage::Prompt(p) => ask(&p)?,
            };
            let r_image = ask(&image_prompt)?;
            prompting::render(strategy, item, Some(&Intermediates { r_text, r_image }), config)?
        } else {
            prompting::render(strategy, item, None, config)?
        };
        let text = ask(&prompt)?;
        Ok((prompt, text))
    })();
    match result {
        Ok((prompt, _)) => {
            let key = super::CacheKey::for_request(
                &ChatRequest {
                    item_id: &item.item_id,
                    prompt: &prompt,
                },
                backend.model_id(),
            );
            let record = cache
                .get(&key)
                .ok_or_else(|| GatewayError::Backend("record vanished from cache".into()))?;
            Ok(Outcome::Done(record))
        }
        Err(GatewayError::Prompt(PromptError::MissingImage { .. })) => {
            Ok(Outcome::Skipped("item has no image".into()))
        }
        Err(GatewayError::Prompt(e)) => Err(GatewayError::Prompt(e)),
        Err(GatewayError::Io { path, source }) => Err(GatewayError::Io { path, source }),
        Err(e) => Ok(Outcome::Failed(e.to_string())),
    }
}

/// Produces one record per item for `strategy`, resuming from the journal at
/// `checkpoint_path` when present. Separate cross-reflection strategies run
/// their stage-one prompts first; those responses land in the cache under
/// their own strategy tags.
pub fn enrich_corpus(
    items: &[Item],
    strategy: Strategy,
    backend: &dyn ChatBackend,
    cache: &ResponseCache,
    checkpoint_path: Option<&Path>,
    options: &EnrichOptions,
) -> Result<EnrichReport, GatewayError> {
    let config = &options.prompt_config;
    match strategy {
        Strategy::Kar if config.kar_factors.is_empty() => return Err(PromptError::NoKarFactors.into()),
        Strategy::KarFactors if config.category.trim().is_empty() => {
            return Err(PromptError::EmptyCategory.into())
        }
        _ => {}
    }
    let tag = strategy.tag();
    let previous = match checkpoint_path {
        Some(p) => load_journal(p, tag)?,
        None => HashMap::new(),
    };
    let journal = match checkpoint_path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| GatewayError::io(parent, e))?;
                }
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| GatewayError::io(p, e))?;
            Some(Mutex::new(Journal {
                path: p.to_path_buf(),
                file,
                pending: Vec::new(),
                every: options.checkpoint_every.max(1),
            }))
        }
        None => None,
    };

    let mut report = EnrichReport::default();
    let mut todo: Vec<&Item> = Vec::new();
    for item in items {
        match previous.get(&item.item_id) {
            Some(JournalEntry {
                status: JournalStatus::Done,
                record: Some(record),
                ..
            }) => {
                report.records.push(record.clone());
                report.resumed += 1;
            }
            Some(JournalEntry {
                status: JournalStatus::Skipped,
                reason,
                ..
            }) => {
                report
                    .skipped
                    .push((item.item_id.clone(), reason.clone().unwrap_or_default()));
                report.resumed += 1;
            }
            _ => todo.push(item),
        }
    }
    if report.resumed > 0 {
        info!("{tag}: resuming, {} of {} items already journaled", report.resumed, items.len());
    }

    let outcomes = map_bounded(&todo, backend.parallelism(), |_, item| {
        let outcome = run_item(item, strategy, backend, cache, config)?;
        if let Some(j) = &journal {
            let entry = match &outcome {
                Outcome::Done(r) => JournalEntry {
                    item_id: item.item_id.clone(),
                    strategy_tag: tag.to_string(),
                    status: JournalStatus::Done,
                    record: Some(r.clone()),
                    reason: None,
                },
                Outcome::Skipped(why) | Outcome::Failed(why) => JournalEntry {
                    item_id: item.item_id.clone(),
                    strategy_tag: tag.to_string(),
                    status: if matches!(outcome, Outcome::Skipped(_)) {
                        JournalStatus::Skipped
                    } else {
                        JournalStatus::Failed
                    },
                    record: None,
                    reason: Some(why.clone()),
                },
            };
            j.lock().unwrap_or_else(|e| e.into_inner()).push(entry)?;
        }
        Ok::<_, GatewayError>(outcome)
    });
    if let Some(j) = &journal {
        j.lock().unwrap_or_else(|e| e.into_inner()).flush()?;
    }
    for (item, outcome) in todo.iter().zip(outcomes) {
        match outcome? {
            Outcome::Done(r) => report.records.push(r),
            Outcome::Skipped(why) => report.skipped.push((item.item_id.clone(), why)),
            Outcome::Failed(why) => {
                warn!("{tag}: item {} failed: {why}", item.item_id);
                report.failed.push((item.item_id.clone(), why));
            }
        }
    }
    report.records.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    report.skipped.sort();
    report.failed.sort();
    Ok(report)
}

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use serde_json::Value;

use super::{CorpusError, Dataset, Item, ParseReport, Rating, Source};

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CorpusError::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads lines lossily; MovieLens sidecars are latin-1 in the wild.
fn lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let mut reader = open(path)?;
    let mut out = Vec::new();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| CorpusError::io(path, e))?;
        if n == 0 {
            break;
        }
        let line = String::from_utf8_lossy(&buf);
        out.push(line.trim_end_matches(['\n', '\r']).to_string());
    }
    Ok(out)
}

/// Keeps the last rating per (user, item), preserving first-seen order.
fn dedup_last(ratings: Vec<Rating>, report: &mut ParseReport) -> Vec<Rating> {
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    let mut out: Vec<Rating> = Vec::with_capacity(ratings.len());
    for r in ratings {
        let key = (r.user_id.clone(), r.item_id.clone());
        match index.get(&key) {
            Some(&pos) => {
                report.duplicate_ratings += 1;
                out[pos] = r;
            }
            None => {
                index.insert(key, out.len());
                out.push(r);
            }
        }
    }
    if report.duplicate_ratings > 0 {
        warn!(
            "{} duplicate ratings collapsed (last value kept)",
            report.duplicate_ratings
        );
    }
    out
}

fn parse_movielens_ratings(path: &Path) -> Result<Vec<Rating>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in lines(path)?.into_iter().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected UserID::MovieID::Rating::Timestamp, got {} fields", fields.len()),
            ));
        }
        let (user, movie) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || movie.is_empty() {
            return Err(parse_err(path, lineno, "empty user or movie id"));
        }
        let value: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad rating {:?}", fields[2])))?;
        let timestamp: i64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad timestamp {:?}", fields[3])))?;
        out.push(Rating {
            user_id: user.to_string(),
            item_id: movie.to_string(),
            value,
            timestamp: Some(timestamp),
        });
    }
    Ok(out)
}

/// Reads a two-column `id,value` CSV with a header row.
fn read_sidecar(path: &Path) -> Result<BTreeMap<String, String>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(open(path)?);
    let mut out = BTreeMap::new();
    for record in reader.byte_records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(parse_err(path, line, "expected two columns (id,value)"));
        }
        let id = String::from_utf8_lossy(&record[0]).trim().to_string();
        let value = String::from_utf8_lossy(&record[1]).trim().to_string();
        out.insert(id, value);
    }
    Ok(out)
}

/// Parses MovieLens ratings plus the poster and description sidecars.
///
/// Every movie seen in the ratings or the description file becomes an
/// [`Item`]; posters without a mapping leave `image_ref` empty.
pub fn parse_movielens(
    ratings_path: &Path,
    posters_path: &Path,
    descriptions_path: &Path,
) -> Result<Dataset, CorpusError> {
    let mut report = ParseReport::default();
    let ratings = dedup_last(parse_movielens_ratings(ratings_path)?, &mut report);
    let posters = read_sidecar(posters_path)?;
    let descriptions = read_sidecar(descriptions_path)?;

    let mut items: BTreeMap<String, Item> = BTreeMap::new();
    let ids = ratings
        .iter()
        .map(|r| r.item_id.clone())
        .chain(descriptions.keys().cloned());
    for id in ids {
        items.entry(id.clone()).or_insert_with(|| Item {
            description: descriptions.get(&id).cloned().unwrap_or_default(),
            image_ref: posters.get(&id).filter(|p| !p.is_empty()).cloned(),
            ..Item::stub(id.clone(), Source::Movielens)
        });
    }
    Ok(Dataset {
        source: Source::Movielens,
        items,
        ratings,
        report,
    })
}

/// Fills item titles from a `MovieID::Title::Genres` file.
pub fn attach_movielens_titles(dataset: &mut Dataset, movies_path: &Path) -> Result<(), CorpusError> {
    for (idx, line) in lines(movies_path)?.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() < 2 {
            return Err(parse_err(movies_path, idx + 1, "expected MovieID::Title::Genres"));
        }
        if let Some(item) = dataset.items.get_mut(fields[0].trim()) {
            item.title = fields[1].trim().to_string();
        }
    }
    Ok(())
}

fn first_str<'a>(record: &'a Value, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| record.get(*k)).filter(|v| !v.is_null())
}

fn as_id(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Joins a string or list of strings with single spaces.
fn joined_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.trim().to_string(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" "),
        _ => String::new(),
    }
}

fn first_url(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Array(urls) => urls
            .iter()
            .filter_map(|u| match u {
                Value::String(s) => Some(s.as_str()),
                // {"large": url, ...} shaped entries in newer dumps
                Value::Object(o) => o.values().find_map(Value::as_str),
                _ => None,
            })
            .map(str::trim)
            .find(|s| !s.is_empty())
            .map(str::to_string),
        _ => None,
    }
}

fn json_lines(path: &Path) -> Result<Vec<(usize, Value)>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in lines(path)?.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, idx + 1, format!("invalid JSON: {e}")))?;
        out.push((idx + 1, value));
    }
    Ok(out)
}

/// Parses Amazon-style JSON-lines metadata and reviews.
///
/// Reviews for items absent from the metadata are kept and get a stub item
/// with an empty description. When several image URLs are listed the first
/// one is used.
pub fn parse_amazon(metadata_path: &Path, reviews_path: &Path) -> Result<Dataset, CorpusError> {
    let mut report = ParseReport::default();
    let mut items: BTreeMap<String, Item> = BTreeMap::new();

    for (_, record) in json_lines(metadata_path)? {
        let Some(id) = first_str(&record, &["asin", "item_id", "parent_asin"]).and_then(as_id)
        else {
            report.skipped_records += 1;
            continue;
        };
        let title = first_str(&record, &["title"]).map(joined_text).unwrap_or_default();
        let description = first_str(&record, &["description"])
            .map(joined_text)
            .unwrap_or_default();
        let image_ref = first_str(&record, &["imageURLHighRes", "imageURL", "image", "images"])
            .and_then(first_url);
        items.insert(
            id.clone(),
            Item {
                item_id: id,
                title,
                description,
                image_ref,
                source: Source::Amazon,
            },
        );
    }
    if report.skipped_records > 0 {
        warn!("{} metadata records without an item id skipped", report.skipped_records);
    }

    let mut ratings = Vec::new();
    for (line, record) in json_lines(reviews_path)? {
        let user = first_str(&record, &["reviewerID", "user_id"])
            .and_then(as_id)
            .ok_or_else(|| parse_err(reviews_path, line, "review without reviewer id"))?;
        let item = first_str(&record, &["asin", "item_id", "parent_asin"])
            .and_then(as_id)
            .ok_or_else(|| parse_err(reviews_path, line, "review without item id"))?;
        let value = first_str(&record, &["overall", "rating"])
            .and_then(Value::as_f64)
            .ok_or_else(|| parse_err(reviews_path, line, "review without numeric rating"))?;
        let timestamp = first_str(&record, &["unixReviewTime", "timestamp"]).and_then(Value::as_i64);
        if !items.contains_key(&item) {
            report.stub_items += 1;
            items.insert(item.clone(), Item::stub(item.clone(), Source::Amazon));
        }
        ratings.push(Rating {
            user_id: user,
            item_id: item,
            value,
            timestamp,
        });
    }
    let ratings = dedup_last(ratings, &mut report);
    Ok(Dataset {
        source: Source::Amazon,
        items,
        ratings,
        report,
    })
}

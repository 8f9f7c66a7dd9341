//! Items, cold-start users and the texts built from them.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of tags included in profile texts unless the caller asks otherwise.
pub const DEFAULT_MAX_TAGS: usize = 10;

/// A catalog entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub year: Option<i32>,
    #[serde(default)]
    pub genres: Vec<String>,
    /// `(tag, frequency)`, most frequent first, ties by tag text.
    #[serde(default)]
    pub tags: Vec<(String, u64)>,
    #[serde(default)]
    pub popularity: u64,
}

impl Item {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        year: Option<i32>,
        genres: Vec<String>,
        tags: Vec<(String, u64)>,
        popularity: u64,
    ) -> Self {
        let mut item = Item {
            id: id.into(),
            title: title.into(),
            year,
            genres,
            tags,
            popularity,
        };
        item.sort_tags();
        item
    }

    /// Restores the tag order invariant.
    pub fn sort_tags(&mut self) {
        self.tags
            .sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    }
}

/// A cold-start user: free-text profile plus binary ground-truth relevance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: String,
    pub profile_text: String,
    pub gt_items: BTreeSet<String>,
}

/// Immutable, id-indexed item collection. Items keep their load order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    items: Vec<Item>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn from_items(items: Vec<Item>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (pos, item) in items.iter().enumerate() {
            if index.insert(item.id.clone(), pos).is_some() {
                return Err(Error::DuplicateId(item.id.clone()));
            }
        }
        Ok(Catalog { items, index })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogFormat {
    Csv,
    Jsonl,
}

impl FromStr for CatalogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CatalogFormat::Csv),
            "jsonl" | "json" => Ok(CatalogFormat::Jsonl),
            other => Err(Error::InvalidParameter(format!("unknown catalog format `{other}`"))),
        }
    }
}

impl CatalogFormat {
    /// Guesses the format from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CatalogFormat::Jsonl,
            _ => CatalogFormat::Csv,
        }
    }
}

const CSV_HEADER: [&str; 6] = ["id", "title", "year", "genres", "tags", "popularity"];

pub fn load_catalog(path: &Path, format: CatalogFormat) -> Result<Catalog> {
    let items = match format {
        CatalogFormat::Csv => read_items_csv(path)?,
        CatalogFormat::Jsonl => read_items_jsonl(path)?,
    };
    Catalog::from_items(items)
}

fn read_items_csv(path: &Path) -> Result<Vec<Item>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::parse(
            path,
            1,
            format!("expected header `{}`", CSV_HEADER.join(",")),
        ));
    }
    let mut items = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |msg: String| Error::parse(path, line, msg);
        let year = match record[2].trim() {
            "" => None,
            y => Some(y.parse::<i32>().map_err(|e| bad(format!("year: {e}")))?),
        };
        let genres = split_pipes(&record[3]).map(str::to_string).collect();
        let tags = split_pipes(&record[4])
            .map(|pair| {
                let (tag, count) = pair
                    .rsplit_once(':')
                    .ok_or_else(|| bad(format!("tag `{pair}` is not `tag:count`")))?;
                let count = count
                    .trim()
                    .parse::<u64>()
                    .map_err(|e| bad(format!("tag count: {e}")))?;
                Ok((tag.to_string(), count))
            })
            .collect::<Result<Vec<_>>>()?;
        let popularity = match record[5].trim() {
            "" => 0,
            p => p.parse::<u64>().map_err(|e| bad(format!("popularity: {e}")))?,
        };
        items.push(Item::new(&record[0], &record[1], year, genres, tags, popularity));
    }
    Ok(items)
}

fn split_pipes(field: &str) -> impl Iterator<Item = &str> {
    field.split('|').map(str::trim).filter(|s| !s.is_empty())
}

fn read_items_jsonl(path: &Path) -> Result<Vec<Item>> {
    read_jsonl(path, |mut item: Item| {
        item.sort_tags();
        Ok(item)
    })
}

/// Reads one JSON value per non-blank line.
pub(crate) fn read_jsonl<T, U, F>(path: &Path, mut convert: F) -> Result<Vec<U>>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(T) -> Result<U>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: T =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        out.push(convert(value).map_err(|e| match e {
            Error::Parse { .. } | Error::Io { .. } => e,
            other => Error::parse(path, idx + 1, other.to_string()),
        })?);
    }
    Ok(out)
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn save_catalog(catalog: &Catalog, path: &Path, format: CatalogFormat) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    match format {
        CatalogFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(CSV_HEADER)
                .map_err(|e| Error::parse(path, 0, e.to_string()))?;
            for item in catalog.items() {
                let tags: Vec<String> = item.tags.iter().map(|(t, c)| format!("{t}:{c}")).collect();
                w.write_record([
                    item.id.as_str(),
                    item.title.as_str(),
                    &item.year.map(|y| y.to_string()).unwrap_or_default(),
                    &item.genres.join("|"),
                    &tags.join("|"),
                    &item.popularity.to_string(),
                ])
                .map_err(|e| Error::parse(path, 0, e.to_string()))?;
            }
            w.flush().map_err(io)?;
        }
        CatalogFormat::Jsonl => {
            for item in catalog.items() {
                serde_json::to_writer(&mut out, item).map_err(|e| io(e.into()))?;
                out.write_all(b"\n").map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

pub fn load_users(path: &Path) -> Result<Vec<UserRecord>> {
    let users: Vec<UserRecord> = read_jsonl(path, Ok)?;
    let mut seen = HashMap::with_capacity(users.len());
    for u in &users {
        if seen.insert(u.id.as_str(), ()).is_some() {
            return Err(Error::DuplicateId(u.id.clone()));
        }
    }
    Ok(users)
}

pub fn save_users(users: &[UserRecord], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    for u in users {
        serde_json::to_writer(&mut out, u).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Ground-truth references that do not resolve against the catalog.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MissingGtReport {
    /// `(user id, missing item id)` in user order.
    pub missing: Vec<(String, String)>,
    pub users_affected: usize,
    /// Users left with no ground truth at all.
    pub users_emptied: Vec<String>,
}

impl MissingGtReport {
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Drops GT ids absent from the catalog. Affected users are kept.
pub fn validate_users(users: &mut [UserRecord], catalog: &Catalog) -> MissingGtReport {
    let mut report = MissingGtReport::default();
    for user in users.iter_mut() {
        let before = user.gt_items.len();
        let missing: Vec<String> = user
            .gt_items
            .iter()
            .filter(|id| !catalog.contains(id))
            .cloned()
            .collect();
        if missing.is_empty() {
            continue;
        }
        report.users_affected += 1;
        for id in missing {
            user.gt_items.remove(&id);
            report.missing.push((user.id.clone(), id));
        }
        if before > 0 && user.gt_items.is_empty() {
            report.users_emptied.push(user.id.clone());
        }
    }
    report
}

/// Trims and collapses every whitespace run to a single space.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `title genres... tags...` with at most `max_tags` of the most frequent tags.
/// The release year is not part of the profile.
pub fn build_item_profile(item: &Item, max_tags: usize) -> String {
    let mut tags: Vec<&(String, u64)> = item.tags.iter().collect();
    tags.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    let parts = std::iter::once(item.title.as_str())
        .chain(item.genres.iter().map(String::as_str))
        .chain(tags.into_iter().take(max_tags).map(|(t, _)| t.as_str()));
    let mut out = String::new();
    for token in parts.flat_map(str::split_whitespace) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Cross-encoder input for one (user, item) pair.
///
/// Both slots are whitespace-normalized before substitution; the template's
/// own spaces are kept, so an empty profile yields `"[CLS]  [SEP] ..."`.
pub fn build_pair_text(user_profile: &str, item: &Item) -> String {
    format!(
        "[CLS] {} [SEP] {} [SEP]",
        normalize_whitespace(user_profile),
        build_item_profile(item, DEFAULT_MAX_TAGS)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tags(pairs: &[(&str, u64)]) -> Vec<(String, u64)> {
        pairs.iter().map(|(t, c)| (t.to_string(), *c)).collect()
    }

    fn alien() -> Item {
        Item::new(
            "a",
            "Alien",
            Some(1979),
            vec!["Horror".into(), "SciFi".into()],
            tags(&[("monster", 4), ("space", 9)]),
            10,
        )
    }

    #[test]
    fn item_profile_concatenates_in_order() {
        assert_eq!(build_item_profile(&alien(), 10), "Alien Horror SciFi space monster");
    }

    #[test]
    fn item_profile_without_metadata_is_title() {
        let item = Item::new("x", "Heat", None, vec![], vec![], 0);
        assert_eq!(build_item_profile(&item, 10), "Heat");
    }

    #[test]
    fn item_profile_truncates_tags_by_frequency() {
        let item = Item::new(
            "x",
            "T",
            None,
            vec![],
            tags(&[("b", 2), ("a", 7), ("c", 5)]),
            0,
        );
        assert_eq!(build_item_profile(&item, 1), "T a");
        assert_eq!(build_item_profile(&item, 0), "T");
    }

    #[test]
    fn tag_ties_break_lexicographically() {
        let item = Item::new("x", "T", None, vec![], tags(&[("zeta", 3), ("alpha", 3)]), 0);
        assert_eq!(item.tags[0].0, "alpha");
        assert_eq!(build_item_profile(&item, 1), "T alpha");
    }

    #[test]
    fn item_profile_collapses_whitespace() {
        let item = Item::new(
            "x",
            "  The   Thing ",
            None,
            vec!["".into(), "Horror".into()],
            vec![],
            0,
        );
        assert_eq!(build_item_profile(&item, 10), "The Thing Horror");
    }

    #[test]
    fn pair_text_template() {
        let item = Item::new("s", "Se7en", None, vec!["Thriller".into()], vec![], 0);
        assert_eq!(
            build_pair_text("likes thrillers", &item),
            "[CLS] likes thrillers [SEP] Se7en Thriller [SEP]"
        );
        assert_eq!(
            build_pair_text("likes thrillers   ", &item),
            build_pair_text("likes thrillers", &item)
        );
        assert_eq!(build_pair_text("", &item), "[CLS]  [SEP] Se7en Thriller [SEP]");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Catalog::from_items(vec![alien(), alien()]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ref id) if id == "a"));
    }

    #[test]
    fn missing_gt_is_reported_and_user_kept() {
        let catalog = Catalog::from_items(vec![alien()]).unwrap();
        let mut users = vec![
            UserRecord {
                id: "u1".into(),
                profile_text: String::new(),
                gt_items: ["a", "zz"].iter().map(|s| s.to_string()).collect(),
            },
            UserRecord {
                id: "u2".into(),
                profile_text: String::new(),
                gt_items: ["gone"].iter().map(|s| s.to_string()).collect(),
            },
        ];
        let report = validate_users(&mut users, &catalog);
        assert_eq!(report.users_affected, 2);
        assert_eq!(report.missing.len(), 2);
        assert_eq!(report.users_emptied, vec!["u2".to_string()]);
        assert_eq!(users.len(), 2);
        assert_eq!(users[0].gt_items.len(), 1);
    }

    fn arb_item() -> impl Strategy<Value = Item> {
        (
            "[a-z]{1,6}( [a-z]{1,6}){0,2}",
            proptest::collection::vec("[A-Z][a-z]{0,5}", 0..4),
            proptest::collection::vec(("[a-z]{1,5}", 0u64..5), 0..14),
        )
            .prop_map(|(title, genres, tags)| Item::new("id", title, None, genres, tags, 0))
    }

    proptest! {
        #[test]
        fn profile_independent_of_tag_order(item in arb_item(), seed in any::<u64>()) {
            let mut shuffled = item.clone();
            let n = shuffled.tags.len();
            if n > 1 {
                let r = (seed as usize) % n;
                shuffled.tags.rotate_left(r);
                shuffled.tags.reverse();
            }
            prop_assert_eq!(build_item_profile(&item, 10), build_item_profile(&shuffled, 10));
        }

        #[test]
        fn pair_text_embeds_item_profile(item in arb_item(), profile in "[ a-z]{0,20}") {
            let pair = build_pair_text(&profile, &item);
            let first = pair.find("[SEP]").unwrap();
            let last = pair.rfind("[SEP]").unwrap();
            let middle = &pair[first + 5..last];
            prop_assert_eq!(middle.trim(), build_item_profile(&item, DEFAULT_MAX_TAGS));
        }
    }
}

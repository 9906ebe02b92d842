//! Dataset ingestion, URL cleaning, train/validation splitting and
//! negative-pair sampling for the pair scorer.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use percent_encoding::percent_decode_str;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Longest dot-suffix that counts as a file extension.
const MAX_EXTENSION_CHARS: usize = 5;

/// The query side of a matching pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: u64,
    pub raw_url: String,
    pub cleaned_url: String,
    /// Row of this query in the image [`EmbeddingMatrix`](crate::embed::EmbeddingMatrix).
    pub image_embedding_ref: Option<usize>,
    pub language: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord {
    pub id: u64,
    pub text: String,
    pub language: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Match,
    NonMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledPair {
    pub query_id: u64,
    pub caption_id: u64,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Tsv,
    Jsonl,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(Format::Tsv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::Config(format!(
                "unknown dataset format `{other}` (expected tsv or jsonl)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CleanOptions {
    /// Decode `%XX` escapes before cleaning.
    pub percent_decode: bool,
}

impl Default for CleanOptions {
    fn default() -> Self {
        Self {
            percent_decode: true,
        }
    }
}

/// Reduces an image URL to the words of its file name.
///
/// Keeps the final path segment, decodes percent escapes, drops a short
/// file-type extension and turns underscores into spaces.
pub fn clean_url(raw_url: &str) -> Result<String> {
    clean_url_with(raw_url, CleanOptions::default())
}

pub fn clean_url_with(raw_url: &str, options: CleanOptions) -> Result<String> {
    let empty = || Error::EmptyInput(format!("url {raw_url:?} has no file name"));
    let trimmed = raw_url.trim();
    if trimmed.is_empty() {
        return Err(empty());
    }
    let without_query = trimmed
        .split(['?', '#'])
        .next()
        .unwrap_or_default();
    let segment = last_segment(without_query).ok_or_else(empty)?;

    let decoded = if options.percent_decode {
        percent_decode_str(segment).decode_utf8_lossy().into_owned()
    } else {
        segment.to_owned()
    };
    // an encoded slash must not smuggle a path separator into the result
    let name = last_segment(&decoded).ok_or_else(empty)?;

    let stem = strip_extension(name);
    let cleaned = stem.replace('_', " ").trim().to_owned();
    if cleaned.is_empty() {
        return Err(empty());
    }
    Ok(cleaned)
}

fn last_segment(path: &str) -> Option<&str> {
    path.split('/').rev().find(|s| !s.trim().is_empty())
}

fn strip_extension(name: &str) -> &str {
    match name.rfind('.') {
        Some(dot) => {
            let suffix = &name[dot + 1..];
            let n = suffix.chars().count();
            if (1..=MAX_EXTENSION_CHARS).contains(&n) && !suffix.contains(char::is_whitespace) {
                &name[..dot]
            } else {
                name
            }
        }
        None => name,
    }
}

/// Queries, captions and an optional injective query → caption pairing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    queries: Vec<QueryRecord>,
    captions: Vec<CaptionRecord>,
    ground_truth: Option<BTreeMap<u64, u64>>,
    query_index: HashMap<u64, usize>,
    caption_index: HashMap<u64, usize>,
}

impl Dataset {
    /// Validates id uniqueness, ground-truth injectivity and references.
    pub fn new(
        queries: Vec<QueryRecord>,
        captions: Vec<CaptionRecord>,
        ground_truth: Option<BTreeMap<u64, u64>>,
    ) -> Result<Self> {
        let mut query_index = HashMap::with_capacity(queries.len());
        for (i, q) in queries.iter().enumerate() {
            if query_index.insert(q.id, i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "query",
                    id: q.id,
                });
            }
        }
        let mut caption_index = HashMap::with_capacity(captions.len());
        for (i, c) in captions.iter().enumerate() {
            if c.text.trim().is_empty() {
                return Err(Error::EmptyInput(format!("caption {} has no text", c.id)));
            }
            if caption_index.insert(c.id, i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "caption",
                    id: c.id,
                });
            }
        }
        if let Some(gt) = &ground_truth {
            let mut claimed: HashMap<u64, u64> = HashMap::with_capacity(gt.len());
            for (&query_id, &caption_id) in gt {
                if !query_index.contains_key(&query_id) {
                    return Err(Error::UnknownId {
                        kind: "ground-truth query",
                        id: query_id,
                    });
                }
                if !caption_index.contains_key(&caption_id) {
                    return Err(Error::DanglingReference {
                        query_id,
                        caption_id,
                    });
                }
                if let Some(first) = claimed.insert(caption_id, query_id) {
                    return Err(Error::NonInjective {
                        caption_id,
                        first,
                        second: query_id,
                    });
                }
            }
        }
        Ok(Self {
            queries,
            captions,
            ground_truth,
            query_index,
            caption_index,
        })
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    pub fn captions(&self) -> &[CaptionRecord] {
        &self.captions
    }

    pub fn ground_truth(&self) -> Option<&BTreeMap<u64, u64>> {
        self.ground_truth.as_ref()
    }

    pub fn query(&self, id: u64) -> Option<&QueryRecord> {
        self.query_index.get(&id).map(|&i| &self.queries[i])
    }

    pub fn caption(&self, id: u64) -> Option<&CaptionRecord> {
        self.caption_index.get(&id).map(|&i| &self.captions[i])
    }

    pub fn query_position(&self, id: u64) -> Option<usize> {
        self.query_index.get(&id).copied()
    }

    pub fn caption_position(&self, id: u64) -> Option<usize> {
        self.caption_index.get(&id).copied()
    }

    pub fn query_ids(&self) -> Vec<u64> {
        self.queries.iter().map(|q| q.id).collect()
    }

    pub fn caption_ids(&self) -> Vec<u64> {
        self.captions.iter().map(|c| c.id).collect()
    }

    /// Ground-truth pairs as (query position, caption position), in query order.
    pub fn matched_positions(&self) -> Result<Vec<(usize, usize)>> {
        let gt = self.ground_truth.as_ref().ok_or(Error::MissingGroundTruth)?;
        Ok(self
            .queries
            .iter()
            .enumerate()
            .filter_map(|(qi, q)| gt.get(&q.id).map(|c| (qi, self.caption_index[c])))
            .collect())
    }

    /// The dataset in the TSV layout accepted by [`load_dataset`].
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\timage_url\tcaption\tcaption_id\n");
        for q in &self.queries {
            let (caption, caption_id) = match self.ground_truth.as_ref().and_then(|gt| gt.get(&q.id)) {
                Some(&cid) => (self.caption(cid).map(|c| c.text.as_str()).unwrap_or(""), cid.to_string()),
                None => ("", String::new()),
            };
            out.push_str(&format!("{}\t{}\t{}\t{}\n", q.id, q.raw_url, caption, caption_id));
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_tsv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Deserialize)]
struct JsonRow {
    id: u64,
    image_url: String,
    caption: Option<String>,
    caption_id: Option<u64>,
    language: Option<String>,
}

struct RawRow {
    line: usize,
    id: u64,
    image_url: String,
    caption: Option<(String, u64)>,
    language: Option<String>,
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    load_dataset_with(path, format, CleanOptions::default())
}

/// Loads a dataset file, cleaning every URL.
///
/// Query `i` (in file order) gets `image_embedding_ref = Some(i)`.
pub fn load_dataset_with(path: &Path, format: Format, options: CleanOptions) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = match format {
        Format::Tsv => parse_tsv(&text)?,
        Format::Jsonl => parse_jsonl(&text)?,
    };
    build_dataset(rows, options)
}

fn parse_tsv(text: &str) -> Result<Vec<RawRow>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header row".into(),
    })?;
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let find = |name: &str| columns.iter().position(|c| *c == name);
    let id_col = find("id").ok_or(Error::Parse {
        line: 1,
        message: "header lacks `id` column".into(),
    })?;
    let url_col = find("image_url").ok_or(Error::Parse {
        line: 1,
        message: "header lacks `image_url` column".into(),
    })?;
    let caption_col = find("caption");
    let caption_id_col = find("caption_id");
    let language_col = find("language");
    if caption_col.is_some() != caption_id_col.is_some() {
        return Err(Error::Parse {
            line: 1,
            message: "`caption` and `caption_id` columns must appear together".into(),
        });
    }

    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", columns.len(), fields.len()),
            });
        }
        let id = parse_id(fields[id_col], line_no, "id")?;
        let caption = match (caption_col, caption_id_col) {
            (Some(c), Some(ci)) if !fields[c].trim().is_empty() => Some((
                fields[c].to_owned(),
                parse_id(fields[ci], line_no, "caption_id")?,
            )),
            _ => None,
        };
        rows.push(RawRow {
            line: line_no,
            id,
            image_url: fields[url_col].to_owned(),
            caption,
            language: language_col
                .map(|c| fields[c].trim())
                .filter(|s| !s.is_empty())
                .map(str::to_owned),
        });
    }
    Ok(rows)
}

fn parse_id(field: &str, line: usize, name: &str) -> Result<u64> {
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{name}` is not a non-negative integer: {field:?}"),
    })
}

fn parse_jsonl(text: &str) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let caption = match (row.caption, row.caption_id) {
            (Some(text), Some(cid)) if !text.trim().is_empty() => Some((text, cid)),
            (Some(_), None) => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "`caption` without `caption_id`".into(),
                })
            }
            _ => None,
        };
        rows.push(RawRow {
            line: line_no,
            id: row.id,
            image_url: row.image_url,
            caption,
            language: row.language,
        });
    }
    Ok(rows)
}

fn build_dataset(rows: Vec<RawRow>, options: CleanOptions) -> Result<Dataset> {
    let mut queries = Vec::with_capacity(rows.len());
    let mut captions = Vec::new();
    let mut ground_truth = BTreeMap::new();
    let mut any_caption = false;
    for (position, row) in rows.into_iter().enumerate() {
        let cleaned_url = clean_url_with(&row.image_url, options).map_err(|e| Error::Parse {
            line: row.line,
            message: e.to_string(),
        })?;
        if let Some((text, caption_id)) = row.caption {
            any_caption = true;
            captions.push(CaptionRecord {
                id: caption_id,
                text,
                language: row.language.clone(),
            });
            ground_truth.insert(row.id, caption_id);
        }
        queries.push(QueryRecord {
            id: row.id,
            raw_url: row.image_url,
            cleaned_url,
            image_embedding_ref: Some(position),
            language: row.language,
        });
    }
    Dataset::new(queries, captions, any_caption.then_some(ground_truth))
}

/// Splits off `holdout` ground-truth pairs as a validation set.
///
/// Records keep their original relative order on both sides.
pub fn split_dataset(d: &Dataset, holdout: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let gt = d.ground_truth().ok_or(Error::MissingGroundTruth)?;
    if holdout == 0 || holdout >= d.queries.len() || holdout > gt.len() {
        return Err(Error::out_of_range(
            "holdout",
            holdout,
            format!("1..{}", d.queries.len().min(gt.len() + 1)),
        ));
    }
    let mut paired: Vec<u64> = d
        .queries
        .iter()
        .filter(|q| gt.contains_key(&q.id))
        .map(|q| q.id)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    paired.shuffle(&mut rng);
    let held: HashSet<u64> = paired[..holdout].iter().copied().collect();
    let held_captions: HashSet<u64> = held.iter().map(|q| gt[q]).collect();

    let partition = |keep_held: bool| -> Result<Dataset> {
        let queries = d
            .queries
            .iter()
            .filter(|q| held.contains(&q.id) == keep_held)
            .cloned()
            .collect();
        let captions = d
            .captions
            .iter()
            .filter(|c| held_captions.contains(&c.id) == keep_held)
            .cloned()
            .collect();
        let truth = gt
            .iter()
            .filter(|(q, _)| held.contains(q) == keep_held)
            .map(|(&q, &c)| (q, c))
            .collect();
        Dataset::new(queries, captions, Some(truth))
    };
    Ok((partition(false)?, partition(true)?))
}

/// Returns every ground-truth pair labeled as a match followed by
/// `ceil(ratio * matches)` uniformly drawn non-matching pairs.
pub fn sample_nonmatching_pairs(d: &Dataset, ratio: f64, seed: u64) -> Result<Vec<LabeledPair>> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::out_of_range("negative ratio", ratio, "a positive number"));
    }
    let gt = d.ground_truth().ok_or(Error::MissingGroundTruth)?;
    let matched = d.matched_positions()?;
    let n_captions = d.captions.len();
    let requested = (ratio * matched.len() as f64).ceil() as usize;
    let available = matched.len() * n_captions.saturating_sub(1);
    if requested > available || (requested > 0 && available == 0) {
        return Err(Error::InsufficientNegatives {
            requested,
            available,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(requested);
    if requested * 2 <= available {
        let mut seen = BTreeSet::new();
        while chosen.len() < requested {
            let (qi, truth) = matched[rng.gen_range(0..matched.len())];
            let ci = rng.gen_range(0..n_captions);
            if ci != truth && seen.insert((qi, ci)) {
                chosen.push((qi, ci));
            }
        }
    } else {
        let mut all: Vec<(usize, usize)> = matched
            .iter()
            .flat_map(|&(qi, truth)| {
                (0..n_captions)
                    .filter(move |&ci| ci != truth)
                    .map(move |ci| (qi, ci))
            })
            .collect();
        all.shuffle(&mut rng);
        all.truncate(requested);
        chosen = all;
    }

    let mut pairs: Vec<LabeledPair> = matched
        .iter()
        .map(|&(qi, _)| {
            let query_id = d.queries[qi].id;
            LabeledPair {
                query_id,
                caption_id: gt[&query_id],
                label: Label::Match,
            }
        })
        .collect();
    pairs.extend(chosen.into_iter().map(|(qi, ci)| LabeledPair {
        query_id: d.queries[qi].id,
        caption_id: d.captions[ci].id,
        label: Label::NonMatch,
    }));
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: u64) -> Dataset {
        let queries = (0..n)
            .map(|i| QueryRecord {
                id: i,
                raw_url: format!("https://x.org/a/Item_{i}.jpg"),
                cleaned_url: format!("Item {i}"),
                image_embedding_ref: Some(i as usize),
                language: None,
            })
            .collect();
        let captions = (0..n)
            .map(|i| CaptionRecord {
                id: 1000 + i,
                text: format!("caption {i}"),
                language: None,
            })
            .collect();
        let gt = (0..n).map(|i| (i, 1000 + i)).collect();
        Dataset::new(queries, captions, Some(gt)).unwrap()
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn clean_url_examples() {
        assert_eq!(
            clean_url("https://up.wiki.org/a/b/Half_Dome_1899.jpg").unwrap(),
            "Half Dome 1899"
        );
        assert_eq!(clean_url("Foo.png").unwrap(), "Foo");
        assert_eq!(clean_url("x/y/Caf%C3%A9_de_Flore.jpeg").unwrap(), "Café de Flore");
    }

    #[test]
    fn clean_url_keeps_long_or_internal_suffixes() {
        assert_eq!(clean_url("a/Version_2.0.1_notes.svg").unwrap(), "Version 2.0.1 notes");
        assert_eq!(clean_url("a/archive.longsuffix").unwrap(), "archive.longsuffix");
    }

    #[test]
    fn clean_url_literal_mode() {
        let opts = CleanOptions {
            percent_decode: false,
        };
        assert_eq!(clean_url_with("x/Caf%C3%A9.jpg", opts).unwrap(), "Caf%C3%A9");
    }

    #[test]
    fn clean_url_rejects_empty_and_separator_only() {
        for bad in ["", "   ", "///", "a/b/___", "a/.jpg"] {
            assert!(matches!(clean_url(bad), Err(Error::EmptyInput(_))), "{bad:?}");
        }
    }

    #[test]
    fn encoded_slash_cannot_leak() {
        let c = clean_url("x/Left%2FRight_side.png").unwrap();
        assert!(!c.contains('/'));
        assert_eq!(c, "Right side");
    }

    #[test]
    fn loads_tsv_with_ground_truth() {
        let f = write(
            "id\timage_url\tcaption\tcaption_id\n\
             1\thttp://a/b/One_x.jpg\tfirst\t11\n\
             2\thttp://a/b/Two.png\tsecond\t12\n\
             3\thttp://a/b/Three.gif\tthird\t13\n",
        );
        let d = load_dataset(f.path(), Format::Tsv).unwrap();
        assert_eq!(d.queries().len(), 3);
        assert_eq!(d.captions().len(), 3);
        assert_eq!(d.ground_truth().unwrap().len(), 3);
        assert_eq!(d.query(1).unwrap().cleaned_url, "One x");
        assert_eq!(d.query(3).unwrap().image_embedding_ref, Some(2));
    }

    #[test]
    fn loads_queries_only_tsv() {
        let f = write("id\timage_url\n5\thttp://a/X.jpg\n6\thttp://a/Y.jpg\n");
        let d = load_dataset(f.path(), Format::Tsv).unwrap();
        assert_eq!(d.queries().len(), 2);
        assert!(d.captions().is_empty());
        assert!(d.ground_truth().is_none());
    }

    #[test]
    fn duplicate_id_is_named() {
        let f = write("id\timage_url\n5\thttp://a/X.jpg\n5\thttp://a/Y.jpg\n");
        match load_dataset(f.path(), Format::Tsv) {
            Err(Error::DuplicateId { kind: "query", id: 5 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let f = write("id\timage_url\n5\thttp://a/X.jpg\nnope\thttp://a/Y.jpg\n");
        match load_dataset(f.path(), Format::Tsv) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let f = write("{\"id\": 1, \"image_url\": \"a/B.jpg\"}\n{broken\n");
        match load_dataset(f.path(), Format::Jsonl) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn loads_jsonl() {
        let f = write(
            "{\"id\": 1, \"image_url\": \"a/B_c.jpg\", \"caption\": \"bee\", \"caption_id\": 9, \"language\": \"en\"}\n\
             {\"id\": 2, \"image_url\": \"a/D.jpg\"}\n",
        );
        let d = load_dataset(f.path(), Format::Jsonl).unwrap();
        assert_eq!(d.queries().len(), 2);
        assert_eq!(d.ground_truth().unwrap()[&1], 9);
        assert_eq!(d.caption(9).unwrap().language.as_deref(), Some("en"));
    }

    #[test]
    fn non_injective_ground_truth_rejected() {
        let f = write(
            "id\timage_url\tcaption\tcaption_id\n1\ta/A.jpg\tsame\t7\n2\ta/B.jpg\tsame\t7\n",
        );
        // the second row redeclares caption 7
        assert!(matches!(
            load_dataset(f.path(), Format::Tsv),
            Err(Error::DuplicateId { kind: "caption", id: 7 })
        ));
        let queries = tiny(2).queries().to_vec();
        let captions = tiny(2).captions().to_vec();
        let gt = BTreeMap::from([(0, 1000), (1, 1000)]);
        assert!(matches!(
            Dataset::new(queries.clone(), captions.clone(), Some(gt)),
            Err(Error::NonInjective { caption_id: 1000, .. })
        ));
        let gt = BTreeMap::from([(0, 4242)]);
        assert!(matches!(
            Dataset::new(queries, captions, Some(gt)),
            Err(Error::DanglingReference { caption_id: 4242, .. })
        ));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let d = tiny(100);
        let (train, val) = split_dataset(&d, 10, 7).unwrap();
        assert_eq!(train.queries().len(), 90);
        assert_eq!(val.queries().len(), 10);
        assert_eq!(val.captions().len(), 10);
        let again = split_dataset(&d, 10, 7).unwrap();
        assert_eq!((train.clone(), val.clone()), again);
        let train_ids: HashSet<u64> = train.query_ids().into_iter().collect();
        assert!(val.query_ids().iter().all(|id| !train_ids.contains(id)));
    }

    #[test]
    fn split_rejects_bad_holdout() {
        let d = tiny(100);
        assert!(matches!(split_dataset(&d, 100, 7), Err(Error::OutOfRange { .. })));
        assert!(matches!(split_dataset(&d, 0, 7), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn split_depends_on_seed() {
        let d = tiny(1000);
        let a: BTreeSet<u64> = split_dataset(&d, 10, 7).unwrap().1.query_ids().into_iter().collect();
        let b: BTreeSet<u64> = split_dataset(&d, 10, 8).unwrap().1.query_ids().into_iter().collect();
        assert_ne!(a, b);
    }

    #[test]
    fn balanced_negatives() {
        let d = tiny(10);
        let pairs = sample_nonmatching_pairs(&d, 1.0, 3).unwrap();
        assert_eq!(pairs.len(), 20);
        assert_eq!(pairs.iter().filter(|p| p.label == Label::Match).count(), 10);
        assert_eq!(pairs, sample_nonmatching_pairs(&d, 1.0, 3).unwrap());
    }

    #[test]
    fn ratio_two_negatives_never_hit_ground_truth() {
        let d = tiny(10);
        let gt = d.ground_truth().unwrap();
        let pairs = sample_nonmatching_pairs(&d, 2.0, 11).unwrap();
        assert_eq!(pairs.len(), 30);
        let negatives: Vec<_> = pairs.iter().filter(|p| p.label == Label::NonMatch).collect();
        assert_eq!(negatives.len(), 20);
        for p in &pairs {
            let is_truth = gt[&p.query_id] == p.caption_id;
            assert_eq!(is_truth, p.label == Label::Match);
        }
        let unique: HashSet<(u64, u64)> = pairs.iter().map(|p| (p.query_id, p.caption_id)).collect();
        assert_eq!(unique.len(), pairs.len());
    }

    #[test]
    fn negatives_impossible_on_single_caption() {
        let d = tiny(1);
        assert!(matches!(
            sample_nonmatching_pairs(&d, 1.0, 0),
            Err(Error::InsufficientNegatives { .. })
        ));
    }

    #[test]
    fn dense_request_uses_enumeration() {
        // 4 queries x 3 negatives each = 12 available, ask for all of them
        let d = tiny(4);
        let pairs = sample_nonmatching_pairs(&d, 3.0, 5).unwrap();
        assert_eq!(pairs.len(), 16);
        assert!(sample_nonmatching_pairs(&d, 3.5, 5).is_err());
    }
}

use std::collections::HashMap;
use std::path::Path;

use crate::error::{data_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Male,
    Female,
    Neutral,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Neutral => "neutral",
        }
    }

    /// Accepts `male`/`female`/`neutral` and the prompt words `man`/`woman`/`person`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "man" | "m" => Some(Gender::Male),
            "female" | "woman" | "f" => Some(Gender::Female),
            "neutral" | "person" | "none" | "n" => Some(Gender::Neutral),
            _ => None,
        }
    }
}

const MALE_WORDS: &[&str] = &[
    "man", "men", "he", "him", "his", "himself", "boy", "boys", "male", "males", "gentleman", "gentlemen",
    "husband", "husbands", "father", "fathers", "son", "sons", "brother", "brothers", "guy", "guys", "king",
    "mr", "uncle", "nephew", "grandfather", "boyfriend", "dad",
];

const FEMALE_WORDS: &[&str] = &[
    "woman", "women", "she", "her", "hers", "herself", "girl", "girls", "female", "females", "lady", "ladies",
    "wife", "wives", "mother", "mothers", "daughter", "daughters", "sister", "sisters", "gal", "queen", "mrs",
    "ms", "aunt", "niece", "grandmother", "girlfriend", "mom",
];

/// Gendered word → neutral replacement. An empty replacement deletes the word.
const NEUTRAL_MAP: &[(&str, &str)] = &[
    ("man", "person"), ("woman", "person"), ("men", "people"), ("women", "people"),
    ("he", "they"), ("she", "they"), ("him", "them"), ("his", "their"), ("her", "their"),
    ("hers", "theirs"), ("himself", "themselves"), ("herself", "themselves"),
    ("boy", "child"), ("girl", "child"), ("boys", "children"), ("girls", "children"),
    ("male", ""), ("female", ""), ("males", "people"), ("females", "people"),
    ("gentleman", "person"), ("lady", "person"), ("gentlemen", "people"), ("ladies", "people"),
    ("husband", "spouse"), ("wife", "spouse"), ("husbands", "spouses"), ("wives", "spouses"),
    ("father", "parent"), ("mother", "parent"), ("fathers", "parents"), ("mothers", "parents"),
    ("dad", "parent"), ("mom", "parent"),
    ("son", "child"), ("daughter", "child"), ("sons", "children"), ("daughters", "children"),
    ("brother", "sibling"), ("sister", "sibling"), ("brothers", "siblings"), ("sisters", "siblings"),
    ("guy", "person"), ("gal", "person"), ("guys", "people"), ("king", "monarch"), ("queen", "monarch"),
    ("mr", ""), ("mrs", ""), ("ms", ""), ("uncle", "relative"), ("aunt", "relative"),
    ("nephew", "relative"), ("niece", "relative"), ("grandfather", "grandparent"),
    ("grandmother", "grandparent"), ("boyfriend", "partner"), ("girlfriend", "partner"),
];

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Gender named by the earliest gendered token, or neutral.
pub fn caption_gender(caption: &str) -> Gender {
    for tok in tokenize(caption) {
        if MALE_WORDS.contains(&tok.as_str()) {
            return Gender::Male;
        }
        if FEMALE_WORDS.contains(&tok.as_str()) {
            return Gender::Female;
        }
    }
    Gender::Neutral
}

fn match_case(original: &str, replacement: &str) -> String {
    let mut chars = original.chars();
    let first_upper = chars.next().is_some_and(char::is_uppercase);
    let rest_upper = original.chars().skip(1).all(char::is_uppercase);
    if first_upper && rest_upper && original.chars().count() > 1 {
        replacement.to_uppercase()
    } else if first_upper {
        let mut c = replacement.chars();
        c.next()
            .map(|f| f.to_uppercase().chain(c).collect())
            .unwrap_or_default()
    } else {
        replacement.to_string()
    }
}

/// Rewrites gendered words through a fixed table, keeping punctuation,
/// spacing and capitalisation.
pub fn neutralize_caption(caption: &str) -> String {
    let mut out = String::with_capacity(caption.len());
    let mut rest = caption;
    let mut drop_space = false;
    while !rest.is_empty() {
        let word_len = rest.find(|c: char| !c.is_alphanumeric()).unwrap_or(rest.len());
        if word_len == 0 {
            let c = rest.chars().next().unwrap();
            if !(drop_space && c.is_whitespace()) {
                out.push(c);
            }
            drop_space = false;
            rest = &rest[c.len_utf8()..];
            continue;
        }
        let word = &rest[..word_len];
        let lower = word.to_lowercase();
        match NEUTRAL_MAP.iter().find(|(g, _)| *g == lower) {
            Some((_, "")) => drop_space = true,
            Some((_, n)) => out.push_str(&match_case(word, n)),
            None => out.push_str(word),
        }
        rest = &rest[word_len..];
    }
    out
}

/// Per-sample (true gender, detected gender).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenderOutcome {
    pub true_gender: Gender,
    pub detected: Gender,
}

impl GenderOutcome {
    /// Mismatch indicator: a neutral detection is never a mismatch.
    pub fn mismatch(self) -> bool {
        self.detected != Gender::Neutral && self.detected != self.true_gender
    }
}

/// Misclassification rates as fractions. A group rate is `None` when the
/// group is absent; the composite then treats the gap as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MismatchRates {
    pub male: Option<f64>,
    pub female: Option<f64>,
    pub overall: f64,
    pub composite: f64,
}

/// `sqrt(MR_O² + (MR_F − MR_M)²)`.
pub fn composite_rate(male: f64, female: f64, overall: f64) -> f64 {
    (overall * overall + (female - male).powi(2)).sqrt()
}

pub fn mismatch_rates(outcomes: &[GenderOutcome]) -> Result<MismatchRates> {
    if outcomes.is_empty() {
        return Err(data_err!("mismatch rates need at least one outcome"));
    }
    let rate = |g: Option<Gender>| {
        let group: Vec<_> = outcomes.iter().filter(|o| g.is_none_or(|g| o.true_gender == g)).collect();
        (!group.is_empty()).then(|| group.iter().filter(|o| o.mismatch()).count() as f64 / group.len() as f64)
    };
    let male = rate(Some(Gender::Male));
    let female = rate(Some(Gender::Female));
    let overall = rate(None).expect("non-empty");
    let gap = match (male, female) {
        (Some(m), Some(f)) => f - m,
        _ => 0.0,
    };
    Ok(MismatchRates {
        male,
        female,
        overall,
        composite: (overall * overall + gap * gap).sqrt(),
    })
}

/// Exact-match alignment statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Number of chunks in an alignment given as (candidate, reference) pairs.
pub fn count_chunks(pairs: &mut [(usize, usize)]) -> usize {
    pairs.sort_unstable();
    let mut chunks = 0;
    for (t, &(i, j)) in pairs.iter().enumerate() {
        let continues = t > 0 && pairs[t - 1] == (i.wrapping_sub(1), j.wrapping_sub(1));
        if !continues {
            chunks += 1;
        }
    }
    chunks
}

/// Maximum-match alignment with the fewest chunks.
///
/// Every maximum alignment pairs `min(count_c(w), count_r(w))` tokens of each
/// word `w`, so the search only decides which occurrences pair up. Chunks
/// equal matches minus links, a link being two consecutive candidate tokens
/// aligned to consecutive reference tokens; the search maximises links with
/// memoisation over (candidate position, used reference set, previous pair).
/// References longer than 128 tokens fall back to aligning occurrences in
/// order.
pub fn align<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Alignment {
    let c: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut vocab: HashMap<&str, usize> = HashMap::new();
    for w in c.iter().chain(&r) {
        let next = vocab.len();
        vocab.entry(w).or_insert(next);
    }
    let cw: Vec<usize> = c.iter().map(|w| vocab[w]).collect();
    let rw: Vec<usize> = r.iter().map(|w| vocab[w]).collect();
    let mut ref_count = vec![0usize; vocab.len()];
    rw.iter().for_each(|&w| ref_count[w] += 1);
    let mut cand_count = vec![0usize; vocab.len()];
    cw.iter().for_each(|&w| cand_count[w] += 1);
    let matches: usize = (0..vocab.len()).map(|w| ref_count[w].min(cand_count[w])).sum();
    if matches == 0 {
        return Alignment { matches: 0, chunks: 0 };
    }
    if r.len() > 128 {
        let mut next = vec![Vec::new(); vocab.len()];
        for (j, &w) in rw.iter().enumerate().rev() {
            next[w].push(j);
        }
        let mut pairs: Vec<(usize, usize)> = cw
            .iter()
            .enumerate()
            .filter_map(|(i, &w)| next[w].pop().map(|j| (i, j)))
            .collect();
        return Alignment { matches, chunks: count_chunks(&mut pairs) };
    }
    let mut search = Search {
        cw: &cw,
        rw: &rw,
        cand_left: cand_count,
        ref_left: ref_count,
        memo: HashMap::new(),
    };
    let links = search.best(0, 0, None);
    Alignment { matches, chunks: matches - links }
}

struct Search<'a> {
    cw: &'a [usize],
    rw: &'a [usize],
    cand_left: Vec<usize>,
    ref_left: Vec<usize>,
    memo: HashMap<(usize, u128, Option<usize>), usize>,
}

impl Search<'_> {
    /// Most links obtainable from candidate position `i` onward.
    fn best(&mut self, i: usize, used: u128, prev: Option<usize>) -> usize {
        if i == self.cw.len() {
            return 0;
        }
        let key = (i, used, prev);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let w = self.cw[i];
        self.cand_left[w] -= 1;
        let mut best = None;
        if self.cand_left[w] + 1 > self.ref_left[w] {
            best = Some(self.best(i + 1, used, None));
        }
        if self.ref_left[w] > 0 {
            self.ref_left[w] -= 1;
            for j in 0..self.rw.len() {
                if self.rw[j] != w || used & (1 << j) != 0 {
                    continue;
                }
                let link = usize::from(prev.is_some_and(|p| p + 1 == j));
                let v = link + self.best(i + 1, used | (1 << j), Some(j));
                best = Some(best.map_or(v, |b: usize| b.max(v)));
            }
            self.ref_left[w] += 1;
        }
        self.cand_left[w] += 1;
        let v = best.unwrap_or(0);
        self.memo.insert(key, v);
        v
    }
}

/// Exact-match METEOR: `F · (1 − Pen)` with `F = 10PR / (R + 9P)` and
/// `Pen = 0.5 · (chunks / matches)³`. Empty inputs or no matches score 0.
pub fn meteor<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let a = align(candidate, reference);
    if a.matches == 0 {
        return 0.0;
    }
    let p = a.matches as f64 / candidate.len() as f64;
    let r = a.matches as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let pen = 0.5 * (a.chunks as f64 / a.matches as f64).powi(3);
    f * (1.0 - pen)
}

/// METEOR of raw captions after tokenisation.
pub fn meteor_text(candidate: &str, reference: &str) -> f64 {
    meteor(&tokenize(candidate), &tokenize(reference))
}

/// Best score against the ground truth or its neutral rewrite.
pub fn max_meteor(candidate: &str, truth: &str, neutral: Option<&str>) -> f64 {
    let neutral = neutral.map_or_else(|| neutralize_caption(truth), str::to_string);
    meteor_text(candidate, truth).max(meteor_text(candidate, &neutral))
}

pub const CAPTION_HEADER: &str = "image_id\ttrue_gender\tcaption\treference";

/// One generated caption with the subject's true gender and its reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRecord {
    pub image_id: String,
    pub true_gender: Gender,
    pub caption: String,
    pub reference: String,
    /// Gender-neutral reference; derived with `neutralize_caption` when absent.
    pub neutral_reference: Option<String>,
}

impl CaptionRecord {
    pub fn outcome(&self) -> GenderOutcome {
        GenderOutcome {
            true_gender: self.true_gender,
            detected: caption_gender(&self.caption),
        }
    }

    pub fn max_meteor(&self) -> f64 {
        max_meteor(&self.caption, &self.reference, self.neutral_reference.as_deref())
    }
}

/// Parses `image_id<TAB>true_gender<TAB>caption<TAB>reference[<TAB>neutral_reference]`.
pub fn parse_caption_records(text: &str, origin: &str) -> Result<Vec<CaptionRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let with_neutral = match lines.next() {
        Some((_, h)) => {
            let h = h.trim_end_matches('\r');
            if h == CAPTION_HEADER {
                false
            } else if h.strip_prefix(CAPTION_HEADER) == Some("\tneutral_reference") {
                true
            } else {
                return Err(data_err!("{origin}: expected header {CAPTION_HEADER:?}[\\tneutral_reference], got {h:?}"));
            }
        }
        None => return Err(data_err!("{origin}: empty caption file")),
    };
    let expect = if with_neutral { 5 } else { 4 };
    let records = lines
        .map(|(no, line)| {
            let f: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            if f.len() != expect {
                return Err(data_err!("{origin}:{}: expected {expect} fields, got {}", no + 1, f.len()));
            }
            let true_gender = match Gender::parse(f[1]) {
                Some(g @ (Gender::Male | Gender::Female)) => g,
                _ => return Err(data_err!("{origin}:{}: true gender must be male or female, got {:?}", no + 1, f[1])),
            };
            Ok(CaptionRecord {
                image_id: f[0].to_string(),
                true_gender,
                caption: f[2].to_string(),
                reference: f[3].to_string(),
                neutral_reference: with_neutral.then(|| f[4].to_string()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(data_err!("{origin}: caption file has a header but no rows"));
    }
    Ok(records)
}

pub fn read_caption_records(path: impl AsRef<Path>) -> Result<Vec<CaptionRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_caption_records(&text, &path.display().to_string())
}

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{data_err, Error, Result};

/// Per-sample sensitive-attribute labels plus optional downstream class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeTable {
    labels: Vec<usize>,
    attribute_names: Vec<String>,
    class_labels: Option<Vec<usize>>,
    class_names: Option<Vec<String>>,
}

impl AttributeTable {
    /// Builds a table and checks that every attribute value occurs at least once.
    pub fn new(labels: Vec<usize>, attribute_names: Vec<String>) -> Result<Self> {
        let table = Self::unchecked(labels, attribute_names)?;
        let mut seen = vec![false; table.n_attributes()];
        for &l in &table.labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(data_err!(
                "attribute value {missing} ({}) never occurs",
                table.attribute_names[missing]
            ));
        }
        Ok(table)
    }

    /// Like [`AttributeTable::new`] but allows values of the vocabulary to be
    /// absent, as happens for query subsets labelled with a training vocabulary.
    pub fn with_vocabulary(labels: Vec<usize>, attribute_names: Vec<String>) -> Result<Self> {
        Self::unchecked(labels, attribute_names)
    }

    fn unchecked(labels: Vec<usize>, attribute_names: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(data_err!("attribute table has no rows"));
        }
        if attribute_names.len() < 2 {
            return Err(data_err!(
                "need at least two attribute values, got {}",
                attribute_names.len()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= attribute_names.len()) {
            return Err(data_err!(
                "attribute label {bad} out of range for {} values",
                attribute_names.len()
            ));
        }
        Ok(Self {
            labels,
            attribute_names,
            class_labels: None,
            class_names: None,
        })
    }

    /// Binary table with names `a0`, `a1`, ... derived from the label range.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let a = labels.iter().max().map_or(0, |m| m + 1).max(2);
        Self::new(labels, (0..a).map(|i| format!("a{i}")).collect())
    }

    pub fn with_classes(mut self, class_labels: Vec<usize>, class_names: Option<Vec<String>>) -> Result<Self> {
        if class_labels.len() != self.labels.len() {
            return Err(data_err!(
                "{} class labels for {} samples",
                class_labels.len(),
                self.labels.len()
            ));
        }
        if let Some(names) = &class_names {
            if let Some(&bad) = class_labels.iter().find(|&&c| c >= names.len()) {
                return Err(data_err!("class label {bad} out of range for {} classes", names.len()));
            }
        }
        self.class_labels = Some(class_labels);
        self.class_names = class_names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn n_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn class_labels(&self) -> Option<&[usize]> {
        self.class_labels.as_deref()
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|n| n == name)
    }

    /// Number of distinct attribute values actually present.
    pub fn n_present(&self) -> usize {
        self.labels.iter().collect::<BTreeSet<_>>().len()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let pick = |v: &[usize]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(data_err!("row index {bad} out of range ({})", self.len()));
        }
        let mut out = Self::with_vocabulary(pick(&self.labels), self.attribute_names.clone())?;
        if let Some(c) = &self.class_labels {
            out.class_labels = Some(pick(c));
            out.class_names = self.class_names.clone();
        }
        Ok(out)
    }

    /// Fails unless the table pairs with a matrix of `n_samples` rows.
    pub fn check_pairing(&self, n_samples: usize) -> Result<()> {
        if self.len() != n_samples {
            return Err(data_err!(
                "attribute table has {} rows but the embedding matrix has {n_samples}",
                self.len()
            ));
        }
        Ok(())
    }
}

struct RawRow {
    attribute: String,
    class: Option<String>,
}

fn parse_rows(text: &str, origin: &str) -> Result<(Vec<RawRow>, bool)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| data_err!("{origin}: attribute file is empty"))?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let has_class = match cols.as_slice() {
        ["sample_id", "attribute"] => false,
        ["sample_id", "attribute", "class"] => true,
        _ => {
            return Err(data_err!(
                "{origin}: header must be `sample_id<TAB>attribute[<TAB>class]`, got {header:?}"
            ))
        }
    };
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let expect = if has_class { 3 } else { 2 };
        if fields.len() != expect || fields[1].is_empty() {
            return Err(data_err!(
                "{origin}:{}: expected {expect} tab-separated fields, got {:?}",
                lineno + 2,
                line
            ));
        }
        rows.push(RawRow {
            attribute: fields[1].to_string(),
            class: has_class.then(|| fields[2].to_string()),
        });
    }
    if rows.is_empty() {
        return Err(data_err!("{origin}: attribute file has a header but no rows"));
    }
    Ok((rows, has_class))
}

/// Maps class strings to dense indices. Purely numeric labels keep their
/// numeric value; anything else is indexed in sorted-name order.
fn index_classes(raw: &[String]) -> (Vec<usize>, Option<Vec<String>>) {
    if let Some(nums) = raw.iter().map(|s| s.parse::<usize>().ok()).collect::<Option<Vec<_>>>() {
        return (nums, None);
    }
    let names: Vec<String> = raw.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let idx = raw
        .iter()
        .map(|s| names.binary_search(s).unwrap())
        .collect();
    (idx, Some(names))
}

fn build(rows: Vec<RawRow>, has_class: bool, names: Vec<String>, strict: bool, origin: &str) -> Result<AttributeTable> {
    let labels = rows
        .iter()
        .map(|r| {
            names
                .iter()
                .position(|n| *n == r.attribute)
                .ok_or_else(|| data_err!("{origin}: unknown attribute value {:?}", r.attribute))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = if strict {
        AttributeTable::new(labels, names)?
    } else {
        AttributeTable::with_vocabulary(labels, names)?
    };
    if has_class {
        let raw: Vec<String> = rows.into_iter().map(|r| r.class.unwrap()).collect();
        let (idx, class_names) = index_classes(&raw);
        table.with_classes(idx, class_names)
    } else {
        Ok(table)
    }
}

/// Reads a tab-separated attribute file; attribute strings are mapped to
/// dense indices in sorted-name order.
pub fn read_attributes(path: impl AsRef<Path>) -> Result<AttributeTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_attributes(&text, &path.display().to_string())
}

pub(crate) fn parse_attributes(text: &str, origin: &str) -> Result<AttributeTable> {
    let (rows, has_class) = parse_rows(text, origin)?;
    let names: Vec<String> = rows
        .iter()
        .map(|r| r.attribute.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    build(rows, has_class, names, true, origin)
}

/// Reads an attribute file against a fixed vocabulary, so that training,
/// validation and query files agree on the index of every value.
pub fn read_attributes_with_vocabulary(path: impl AsRef<Path>, vocabulary: &[String]) -> Result<AttributeTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let (rows, has_class) = parse_rows(&text, &origin)?;
    build(rows, has_class, vocabulary.to_vec(), false, &origin)
}

pub fn write_attributes(table: &AttributeTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let classes = table.class_labels();
    out.push_str(if classes.is_some() { "sample_id\tattribute\tclass\n" } else { "sample_id\tattribute\n" });
    for (i, &l) in table.labels().iter().enumerate() {
        out.push_str(&format!("{i}\t{}", table.attribute_names()[l]));
        if let Some(c) = classes {
            match table.class_names() {
                Some(names) => out.push_str(&format!("\t{}", names[c[i]])),
                None => out.push_str(&format!("\t{}", c[i])),
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

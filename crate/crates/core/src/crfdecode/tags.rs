use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OUTSIDE: &str = "O";

/// BIO tag inventory: `O`, then `B-c`, `I-c` for every class in order.
/// Two virtual tags, START and END, sit just past the real ones.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TagSet {
    classes: Vec<String>,
    tags: Vec<String>,
}

impl From<Vec<String>> for TagSet {
    fn from(classes: Vec<String>) -> Self {
        let mut tags = vec![OUTSIDE.to_string()];
        for c in &classes {
            tags.push(format!("B-{c}"));
            tags.push(format!("I-{c}"));
        }
        Self { classes, tags }
    }
}

impl From<TagSet> for Vec<String> {
    fn from(t: TagSet) -> Self {
        t.classes
    }
}

impl TagSet {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Self {
        Self::from(classes.into_iter().map(Into::into).collect::<Vec<_>>())
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Number of real tags (`d_tags`).
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn start(&self) -> usize {
        self.len()
    }

    pub fn end(&self) -> usize {
        self.len() + 1
    }

    pub fn name(&self, tag: usize) -> &str {
        &self.tags[tag]
    }

    pub fn index(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    /// Class of a real tag, `None` for `O`.
    pub fn class_of(&self, tag: usize) -> Option<&str> {
        (tag > 0).then(|| self.classes[(tag - 1) / 2].as_str())
    }

    pub fn is_begin(&self, tag: usize) -> bool {
        tag > 0 && tag % 2 == 1
    }

    pub fn is_inside(&self, tag: usize) -> bool {
        tag > 0 && tag.is_multiple_of(2)
    }

    pub fn encode(&self, tags: &[String]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| {
                self.index(t)
                    .ok_or_else(|| Error::Config(format!("tag `{t}` is not in the tag set")))
            })
            .collect()
    }

    pub fn decode(&self, tags: &[usize]) -> Vec<String> {
        tags.iter().map(|&t| self.name(t).to_string()).collect()
    }

    /// Whether `to` may follow `from`; `None` stands for the sequence start.
    pub fn allowed(&self, from: Option<usize>, to: usize) -> bool {
        if !self.is_inside(to) {
            return true;
        }
        match from {
            Some(f) if f > 0 => self.class_of(f) == self.class_of(to),
            _ => false,
        }
    }

    /// I-x only ever follows B-x or I-x.
    pub fn is_bio_legal(&self, tags: &[usize]) -> bool {
        let mut prev = None;
        for &t in tags {
            if !self.allowed(prev, t) {
                return false;
            }
            prev = Some(t);
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_virtual_tags() {
        let t = TagSet::new(["date", "total"]);
        assert_eq!(t.len(), 5);
        assert_eq!((t.start(), t.end()), (5, 6));
        assert_eq!(t.name(3), "B-total");
        assert_eq!(t.class_of(4), Some("total"));
        assert_eq!(t.class_of(0), None);
        assert!(t.is_begin(1) && t.is_inside(2) && !t.is_inside(0));
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"["date","total"]"#);
        assert_eq!(serde_json::from_str::<TagSet>(&json).unwrap(), t);
    }

    #[test]
    fn bio_legality() {
        let t = TagSet::new(["date", "total"]);
        let enc = |s: &[&str]| t.encode(&s.iter().map(|x| x.to_string()).collect::<Vec<_>>()).unwrap();
        assert!(t.is_bio_legal(&enc(&["B-date", "I-date", "O", "B-total", "I-total"])));
        assert!(!t.is_bio_legal(&enc(&["I-date"])));
        assert!(!t.is_bio_legal(&enc(&["O", "I-date"])));
        assert!(!t.is_bio_legal(&enc(&["B-date", "I-total"])));
        assert!(t.encode(&["B-nope".to_string()]).is_err());
    }
}

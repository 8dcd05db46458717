use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{record, Determinism, FieldType, InputField, Tool, ToolDescriptor, ToolError, ToolRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: u64,
    pub rank: usize,
}

/// Offline stand-in for a web search: a few short market notes.
pub fn bundled_corpus() -> Vec<Document> {
    [
        (
            "market-overview",
            "The machine translation market keeps growing. Enterprise buyers want document \
             translation with terminology control, while consumer apps compete on price.",
        ),
        (
            "competitor-notes",
            "Large competitors bundle translation into cloud suites. Smaller vendors win on \
             domain adaptation for legal and medical text and on data residency.",
        ),
        (
            "pricing-survey",
            "Surveyed teams pay per character. Budgets for localization rarely exceed the \
             approved quarterly plan; most pilots start below one hundred thousand dollars.",
        ),
    ]
    .into_iter()
    .map(|(id, text)| Document {
        id: id.into(),
        text: text.into(),
    })
    .collect()
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub struct CorpusSearch {
    descriptor: ToolDescriptor,
    docs: Vec<Document>,
}

impl CorpusSearch {
    pub fn new(docs: Vec<Document>) -> Self {
        Self {
            descriptor: ToolDescriptor {
                name: "corpus_search".into(),
                description: "Ranks bundled documents by query-term frequency".into(),
                inputs: vec![
                    InputField::required("query", FieldType::Text),
                    InputField::optional("top_k", FieldType::Count),
                ],
                determinism: Determinism::Deterministic,
            },
            docs,
        }
    }

    /// Score is the total number of occurrences of query terms; ties go to
    /// the lexicographically smaller id. Documents scoring zero are dropped.
    pub fn search(&self, query: &str, top_k: usize) -> Vec<Hit> {
        let terms: Vec<String> = tokens(query).collect();
        let mut scored: Vec<(u64, &str)> = self
            .docs
            .iter()
            .map(|d| {
                let score = tokens(&d.text).filter(|t| terms.contains(t)).count() as u64;
                (score, d.id.as_str())
            })
            .filter(|(s, _)| *s > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
        scored
            .into_iter()
            .take(top_k)
            .enumerate()
            .map(|(i, (score, id))| Hit {
                id: id.to_string(),
                score,
                rank: i + 1,
            })
            .collect()
    }
}

impl Tool for CorpusSearch {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, inputs: &ToolRecord, _: &mut ChaCha8Rng) -> Result<ToolRecord, ToolError> {
        let query = inputs["query"].as_str().unwrap_or_default();
        let top_k = inputs.get("top_k").and_then(|v| v.as_u64()).unwrap_or(5) as usize;
        let hits = self.search(query, top_k);
        Ok(record([("hits", json!(hits))]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_match_ranks_first() {
        let search = CorpusSearch::new(bundled_corpus());
        let hits = search.search("residency", 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "competitor-notes");
        assert_eq!(hits[0].rank, 1);
    }

    #[test]
    fn frequency_orders_hits() {
        let docs = vec![
            Document { id: "b".into(), text: "cost cost".into() },
            Document { id: "a".into(), text: "cost".into() },
            Document { id: "c".into(), text: "COST, cost; cost".into() },
        ];
        let ids: Vec<_> = CorpusSearch::new(docs).search("Cost", 2).into_iter().map(|h| h.id).collect();
        assert_eq!(ids, vec!["c", "b"]);
    }
}

//! Prompt templates for every chat-completion purpose.
//!
//! Templates are plain strings with named `{slot}` markers. The section
//! markers ("Document:", "Query:", ...) are load-bearing: the mock backend's
//! echo fallback keys on them, so custom templates should keep them if echo
//! mode matters.

use super::LlmError;

/// Prompt families dispatched through the gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    TopicSelect,
    PhraseSelect,
    QueryPlain,
    QueryFewshot,
    QueryPairwise,
    Snippet,
    Hyde,
}

/// One in-prompt demonstration pair; `negative_query` only applies to the
/// pairwise scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewshotExample {
    pub document: String,
    pub query: String,
    pub negative_query: Option<String>,
}

/// A prompt body with named slots, plus optional few-shot examples rendered
/// into the `{examples}` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub body: String,
    pub fewshot: Vec<FewshotExample>,
}

/// Marker prefixes shared between templates and the echo mock.
pub const DOCUMENT_MARKER: &str = "Document: ";
pub const QUERY_MARKER: &str = "Query: ";
pub const QUESTION_MARKER: &str = "Question: ";
pub const TOPIC_CANDIDATES_MARKER: &str = "Candidate topic set: ";
pub const PHRASE_CANDIDATES_MARKER: &str = "Candidate phrase set: ";
pub const KEYWORDS_MARKER: &str = "following keywords: ";
pub const RELEVANT_PREFIX: &str = "RELEVANT:";
pub const IRRELEVANT_PREFIX: &str = "IRRELEVANT:";

/// The conditioning sentence appended to a query prompt, carrying the
/// sampled phrases verbatim.
pub fn condition_sentence(phrases: &[String]) -> String {
    format!("Generate a relevant query based on the {}{}", KEYWORDS_MARKER, phrases.join(", "))
}

const TOPIC_SELECT_BODY: &str = "You will receive a document along with a set of candidate topics. \
Your task is to select the topics that best align with the core theme of the document. \
Exclude topics that are too broad or less relevant. \
You may list up to {k} topics, using only the topic names in the candidate set.\n\
Document: {document}\n\
Candidate topic set: {candidates}";

const PHRASE_SELECT_BODY: &str = "You will receive a document along with a set of candidate phrases. \
Your task is to select the phrases that best align with the core theme of the document. \
Exclude phrases that are too broad or less relevant. \
You may list up to {k} phrases, using only the phrases in the candidate set.\n\
Document: {document}\n\
Candidate phrase set: {candidates}";

const QUERY_PLAIN_BODY: &str = "Given a document, generate a search query for which the document \
can be a perfect answer. Answer with the query only.\n\
Document: {document}";

const QUERY_FEWSHOT_BODY: &str = "Given a document, generate a search query for which the document \
can be a perfect answer. Answer with the query only.\n\n\
{examples}\
Document: {document}";

const QUERY_PAIRWISE_BODY: &str = "Given a document, first generate a relevant search query for which \
the document can be a perfect answer. Then generate a related but less relevant query for the same \
document. Answer with exactly two lines:\n\
RELEVANT: <query>\n\
IRRELEVANT: <query>\n\n\
{examples}\
Document: {document}";

const SNIPPET_BODY: &str = "Given a document and a query, generate one coherent paragraph \
(4-6 sentences) that explains how the document addresses the information need of the query, \
with emphasis on the concepts represented by the query's topics.\n\
Document: {document}\n\
Query: {query}";

const HYDE_BODY: &str = "Write a passage in the style of a scientific paper abstract that answers \
the following question.\n\
Question: {query}";

// Illustrative demonstrations only; swap in corpus-specific pairs for real runs.
fn placeholder_fewshot(pairwise: bool) -> Vec<FewshotExample> {
    vec![
        FewshotExample {
            document: "Adaptive step size selection for stochastic optimization. We analyze \
                       convergence of adaptive step size rules under relaxed smoothness assumptions."
                .into(),
            query: "adaptive step size convergence guarantees".into(),
            negative_query: pairwise.then(|| "general overview of gradient descent".to_string()),
        },
        FewshotExample {
            document: "Entity linking over scholarly text. We present a benchmark and a distantly \
                       supervised linker for scientific entity mentions."
                .into(),
            query: "distant supervision for scientific entity linking".into(),
            negative_query: pairwise.then(|| "entity recognition in news articles".to_string()),
        },
    ]
}

impl PromptTemplate {
    /// The stock template for a purpose.
    pub fn default_for(kind: TemplateKind) -> Self {
        let (body, fewshot) = match kind {
            TemplateKind::TopicSelect => (TOPIC_SELECT_BODY, Vec::new()),
            TemplateKind::PhraseSelect => (PHRASE_SELECT_BODY, Vec::new()),
            TemplateKind::QueryPlain => (QUERY_PLAIN_BODY, Vec::new()),
            TemplateKind::QueryFewshot => (QUERY_FEWSHOT_BODY, placeholder_fewshot(false)),
            TemplateKind::QueryPairwise => (QUERY_PAIRWISE_BODY, placeholder_fewshot(true)),
            TemplateKind::Snippet => (SNIPPET_BODY, Vec::new()),
            TemplateKind::Hyde => (HYDE_BODY, Vec::new()),
        };
        Self {
            kind,
            body: body.to_string(),
            fewshot,
        }
    }

    fn examples_block(&self) -> String {
        let mut out = String::new();
        for ex in &self.fewshot {
            out.push_str(DOCUMENT_MARKER);
            out.push_str(&ex.document);
            out.push('\n');
            match (&ex.negative_query, self.kind) {
                (Some(neg), TemplateKind::QueryPairwise) => {
                    out.push_str(RELEVANT_PREFIX);
                    out.push(' ');
                    out.push_str(&ex.query);
                    out.push('\n');
                    out.push_str(IRRELEVANT_PREFIX);
                    out.push(' ');
                    out.push_str(neg);
                    out.push('\n');
                }
                _ => {
                    out.push_str(QUERY_MARKER);
                    out.push_str(&ex.query);
                    out.push('\n');
                }
            }
            out.push('\n');
        }
        out
    }

    /// Fill the template. Every slot present in the body must be supplied;
    /// `{examples}` is filled from the template's own few-shot list.
    pub fn render(&self, slots: &[(&str, &str)]) -> Result<String, LlmError> {
        let mut out = self.body.clone();
        if out.contains("{examples}") {
            out = out.replace("{examples}", &self.examples_block());
        }
        for (name, value) in slots {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        for slot in ["document", "candidates", "query", "k", "examples"] {
            let marker = format!("{{{slot}}}");
            if out.contains(&marker) {
                return Err(LlmError::UnfilledSlot {
                    kind: format!("{:?}", self.kind),
                    slot: slot.to_string(),
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_fills_all_slots() {
        let t = PromptTemplate::default_for(TemplateKind::TopicSelect);
        let p = t
            .render(&[("document", "some text"), ("candidates", "a, b"), ("k", "10")])
            .unwrap();
        assert!(p.contains("Document: some text"));
        assert!(p.contains("Candidate topic set: a, b"));
        assert!(p.contains("up to 10 topics"));
    }

    #[test]
    fn unfilled_slot_is_rejected() {
        let t = PromptTemplate::default_for(TemplateKind::Snippet);
        let err = t.render(&[("document", "d")]).unwrap_err();
        assert!(matches!(err, LlmError::UnfilledSlot { slot, .. } if slot == "query"));
    }

    #[test]
    fn rendering_is_pure() {
        let t = PromptTemplate::default_for(TemplateKind::QueryPairwise);
        let a = t.render(&[("document", "same input")]).unwrap();
        let b = t.render(&[("document", "same input")]).unwrap();
        assert_eq!(a, b);
        assert!(a.contains(RELEVANT_PREFIX));
    }

    #[test]
    fn condition_sentence_lists_phrases() {
        let c = condition_sentence(&["cold-start problem".into(), "audio features".into()]);
        assert_eq!(
            c,
            "Generate a relevant query based on the following keywords: cold-start problem, audio features"
        );
    }
}

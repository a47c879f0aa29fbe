//! Building a verb vocabulary by asking a model which candidate verbs a
//! person can perform on an object. Uses canned answers unless
//! `UHOI_CHAT_URL` points at a chat-completions server.
//!
//!     cargo run --example verb_filter

use std::collections::BTreeMap;

use uhoi::generation::{ChatCompletionsProvider, GenerationProvider, MockProvider};
use uhoi::http::RetryPolicy;
use uhoi::vocab::{filter_wordnet_verbs, verb_filter_question};

fn main() -> uhoi::Result<()> {
    let candidates = ["ride", "sleep", "kick", "exist", "hold", "rain"];
    let provider: Box<dyn GenerationProvider> = match std::env::var("UHOI_CHAT_URL") {
        Ok(url) => {
            let model = std::env::var("UHOI_CHAT_MODEL").unwrap_or_default();
            Box::new(ChatCompletionsProvider::new(
                &url,
                &model,
                std::env::var("UHOI_API_KEY").ok(),
                RetryPolicy::default(),
            ))
        }
        Err(_) => {
            let answers: BTreeMap<String, Vec<String>> = [
                ("ride", "Yes."),
                ("sleep", "No."),
                ("kick", "Yes, for example a ball."),
                ("exist", "No"),
                ("hold", "yes"),
                ("rain", "It depends."),
            ]
            .into_iter()
            .map(|(v, a)| (v.to_string(), vec![a.to_string()]))
            .collect();
            Box::new(MockProvider::new(answers))
        }
    };
    println!("question: {}", verb_filter_question("<verb>"));
    let outcome = filter_wordnet_verbs(&candidates, provider.as_ref(), 8)?;
    println!("kept      {:?}", outcome.kept);
    println!("rejected  {:?}", outcome.rejected);
    println!("undecided {:?}", outcome.undecided);
    let vocab = outcome.into_vocabulary("filtered")?;
    println!("vocabulary of {} verbs", vocab.len());
    Ok(())
}

//! Splitting raw generations into reasoning and answer for each output mode,
//! and reading `[STEP]`-marked extraction replies.
//!
//! ```text
//! cargo run --example parse_outputs
//! ```

use race_core::extraction::fallback_segments;
use race_core::model::{parse_extractor_output, parse_output, OutputMode, ThinkTags};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tags = ThinkTags::default();

    let lrm = "<think>\nThe Eiffel Tower is in Paris.\n\nParis is the capital of France.\n</think>\n\nParis";
    let out = parse_output(lrm, OutputMode::Lrm, true, &tags)?;
    println!("lrm     reasoning={:?}\n        answer={:?}", out.reasoning, out.answer);

    // Some distilled models drop the opening tag.
    let no_open = "Paris is the capital.\n</think>\nParis";
    println!("no-open answer={:?}", parse_output(no_open, OutputMode::Lrm, true, &tags)?.answer);

    // The last Answer: wins over drafts.
    let cot = "Thought: France's capital is Lyon? No, it is Paris.\nAnswer: Lyon\nAnswer: Paris";
    let out = parse_output(cot, OutputMode::CotPrompt, true, &tags)?;
    println!("cot     reasoning={:?} answer={:?}", out.reasoning, out.answer);

    let direct = parse_output("  Paris \n", OutputMode::Direct, true, &tags)?;
    println!("direct  reasoning={:?} answer={:?}", direct.reasoning, direct.answer);

    // A truncated main output is an error; a truncated sample is kept.
    let truncated = "<think>\nStill thinking about it\nmaybe Paris";
    match parse_output(truncated, OutputMode::Lrm, true, &tags) {
        Ok(_) => unreachable!("main outputs need the closing tag"),
        Err(e) => println!("main    rejected: {e}"),
    }
    let sample = parse_output(truncated, OutputMode::Lrm, false, &tags)?;
    println!("sample  kept, answer={:?}", sample.answer);

    let reply = "Here are the steps.\n[STEP] The Eiffel Tower is in Paris.\n[STEP] Paris is the capital of France.\n[ANSWER] Paris";
    let cot = parse_extractor_output(reply)?;
    println!("steps   {:?} (answer hint {:?})", cot.steps, cot.answer_hint);

    let segments = fallback_segments("First idea.\n\n\n\nSecond idea.\n\n")?;
    println!("segments {:?}", segments.steps);
    Ok(())
}

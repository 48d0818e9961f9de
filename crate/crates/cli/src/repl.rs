//! Line-oriented question loop behind `memex ask`.
//!
//! Each round reads a question line and then one line per choice. A blank
//! question line or end of input ends the session. Anything the model
//! rejects is reported and the round starts over.

use std::io::{BufRead, Write};

use memex_core::engine::Engine;
use memex_core::mmlookup::Answer;
use memex_core::MemexNet;

use crate::CliError;

pub const CHOICES: usize = 4;

fn prompt(text: &str) {
    eprint!("{text}");
    let _ = std::io::stderr().flush();
}

/// Next line without its terminator; `None` at end of input.
fn read_line<R: BufRead>(input: &mut R) -> Result<Option<String>, CliError> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim_end_matches(['\n', '\r']).to_string()))
}

pub fn run<R: BufRead, W: Write>(
    engine: &Engine,
    net: &MemexNet,
    user: &str,
    explain: bool,
    json: bool,
    mut input: R,
    mut out: W,
) -> Result<(), CliError> {
    loop {
        prompt("question (blank to quit)> ");
        let Some(question) = read_line(&mut input)? else {
            return Ok(());
        };
        let question = question.trim().to_string();
        if question.is_empty() {
            return Ok(());
        }
        let mut choices = Vec::with_capacity(CHOICES);
        while choices.len() < CHOICES {
            prompt(&format!("choice {}> ", choices.len() + 1));
            let Some(choice) = read_line(&mut input)? else {
                return Ok(());
            };
            let choice = choice.trim();
            if choice.is_empty() {
                eprintln!("a choice cannot be empty");
                continue;
            }
            choices.push(choice.to_string());
        }
        match engine.answer(net, &question, &choices, user) {
            Ok(answer) => show(&mut out, &answer, explain, json)?,
            Err(e) => eprintln!("cannot answer: {e}; try again"),
        }
    }
}

fn show<W: Write>(out: &mut W, a: &Answer, explain: bool, json: bool) -> Result<(), CliError> {
    if json {
        writeln!(out, "{}", serde_json::to_string(a)?)?;
        return Ok(());
    }
    writeln!(
        out,
        "answer: {} (choice {}, confidence {:.3})",
        a.chosen,
        a.chosen_index + 1,
        a.confidence
    )?;
    if a.evidence.is_empty() {
        writeln!(out, "evidence: none")?;
    } else {
        writeln!(out, "evidence: {}", a.evidence.join(", "))?;
    }
    for m in &a.trace.attention {
        let w: Vec<String> = m.weights.iter().map(|w| format!("{w:.3}")).collect();
        writeln!(out, "  alpha {:<12} [{}]", m.modality.name(), w.join(", "))?;
    }
    if explain {
        writeln!(out, "{}", serde_json::to_string_pretty(&a.trace)?)?;
    }
    out.flush()?;
    Ok(())
}

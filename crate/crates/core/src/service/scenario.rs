use std::fmt::Write;

use serde_json::{json, Value};

use super::{Request, Service};

/// Source text for the scripted walk-through.
pub const ANNA_DOCUMENT: &str =
    "nasa reportedly found water . the harbor quietly reported a delay . \
the council still debated the budget . the museum often survived a flood .";

/// Interactions in the script, not counting session creation.
pub const SCENARIO_STEPS: usize = 11;

struct Script<'a> {
    service: &'a Service,
    transcript: String,
    last: Value,
    path: String,
}

impl Script<'_> {
    fn send(&mut self, label: &str, req: Request) -> Result<(), String> {
        let resp = self.service.handle(&req);
        let _ = writeln!(self.transcript, "### {label}");
        let _ = writeln!(self.transcript, "> {} {}", req.method, req.path);
        if !req.body.is_empty() {
            let _ = writeln!(self.transcript, "> {}", String::from_utf8_lossy(&req.body));
        }
        let _ = writeln!(self.transcript, "< {}", resp.status);
        let _ = writeln!(self.transcript, "< {}", resp.body);
        self.transcript.push('\n');
        self.last = serde_json::from_str(&resp.body)
            .map_err(|e| format!("{label}: response is not JSON: {e}"))?;
        if resp.status >= 400 {
            return Err(format!(
                "{label}: status {} body {}",
                resp.status, resp.body
            ));
        }
        Ok(())
    }

    fn post(&mut self, step: usize, what: &str, suffix: &str, body: Value) -> Result<(), String> {
        let path = format!("{}{suffix}", self.path);
        self.send(
            &format!("step {step}: {what}"),
            Request::post_json(&path, &body),
        )
    }

    fn summary(&self) -> Vec<Vec<String>> {
        self.last["summary"]
            .as_array()
            .map(|ss| {
                ss.iter()
                    .map(|s| {
                        s["tokens"]
                            .as_array()
                            .map(|t| {
                                t.iter()
                                    .filter_map(|w| w.as_str().map(str::to_string))
                                    .collect()
                            })
                            .unwrap_or_default()
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    fn numbers(v: &Value) -> Vec<f64> {
        v.as_array()
            .map(|a| a.iter().filter_map(Value::as_f64).collect())
            .unwrap_or_default()
    }

    fn indices(v: &Value) -> Vec<usize> {
        v.as_array()
            .map(|a| {
                a.iter()
                    .filter_map(Value::as_u64)
                    .map(|x| x as usize)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Sentence holding the most-used source word (lowest index on ties).
    fn top_covered_sentence(&self) -> Option<usize> {
        let usage = Self::numbers(&self.last["coverage"]["usage_probs"]);
        let spans = self.last["document"]["sentences"].as_array()?;
        let mut best: Option<(usize, f64)> = None;
        for (s, span) in spans.iter().enumerate() {
            let bounds = Self::indices(span);
            let top = usage[bounds[0]..bounds[1]]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            if best.is_none_or(|(_, b)| top > b) {
                best = Some((s, top));
            }
        }
        best.map(|(s, _)| s)
    }
}

/// Replays the scripted editing session against `service` and returns the
/// full request/response log. The script initializes a three-sentence
/// summary, matches the selection to coverage, adds and deletes sentences,
/// deselects the most covered sentence, completes a typed prefix, edits a
/// verb, selects only uncovered content and finally rewrites a sentence.
pub fn anna_scenario(service: &Service) -> Result<String, String> {
    let mut script = Script {
        service,
        transcript: String::new(),
        last: Value::Null,
        path: String::new(),
    };
    script.send(
        "setup: create session",
        Request::post_json("/sessions", &json!({ "document": ANNA_DOCUMENT })),
    )?;
    let id = script.last["id"]
        .as_str()
        .ok_or("create response lacks an id")?
        .to_string();
    script.path = format!("/sessions/{id}");

    script.post(
        1,
        "init with three sentences",
        "/generate",
        json!({ "mode": "init_with", "n_sentences": 3 }),
    )?;
    script.post(
        2,
        "match selection to coverage",
        "/selection",
        json!({ "template": "match" }),
    )?;
    script.post(
        3,
        "add a sentence",
        "/generate",
        json!({ "mode": "add_sentence" }),
    )?;
    script.post(
        4,
        "delete the first sentence",
        "/summary/0",
        json!({ "action": "delete" }),
    )?;

    let top = script
        .top_covered_sentence()
        .ok_or("no coverage to deselect from")?;
    let keep: Vec<usize> = Script::indices(&script.last["selection"])
        .into_iter()
        .filter(|&s| s != top)
        .collect();
    script.post(
        5,
        "deselect the most covered sentence",
        "/selection",
        json!({ "sentences": keep }),
    )?;
    script.post(
        6,
        "add a sentence",
        "/generate",
        json!({ "mode": "add_sentence" }),
    )?;
    script.post(
        7,
        "complete a typed prefix",
        "/generate",
        json!({ "mode": "complete", "prefix": "the water is ..." }),
    )?;

    let summary = script.summary();
    let last = summary
        .len()
        .checked_sub(1)
        .ok_or("summary is empty before the edit")?;
    let edited: Vec<&str> = summary[last]
        .iter()
        .map(|w| if w == "is" { "was" } else { w.as_str() })
        .collect();
    script.post(
        8,
        "change the verb tense",
        &format!("/summary/{last}"),
        json!({ "action": "edit", "text": edited.join(" ") }),
    )?;

    let covered = Script::indices(&script.last["coverage"]["covered_sentences"]);
    let n_sentences = script.last["document"]["sentences"]
        .as_array()
        .map_or(0, Vec::len);
    let uncovered: Vec<usize> = (0..n_sentences).filter(|s| !covered.contains(s)).collect();
    script.post(
        9,
        "select only uncovered sentences",
        "/selection",
        json!({ "sentences": uncovered }),
    )?;
    script.post(
        10,
        "add a sentence",
        "/generate",
        json!({ "mode": "add_sentence" }),
    )?;

    let last = script
        .summary()
        .len()
        .checked_sub(1)
        .ok_or("summary is empty before the rewrite")?;
    script.post(
        11,
        "rewrite the last sentence",
        &format!("/summary/{last}"),
        json!({ "action": "edit", "text": "anna adds her own closing remark ." }),
    )?;
    Ok(script.transcript)
}

//! Minimal external tracker: answers every frame with its initial box.
//!
//! Reference client of the line-delimited JSON protocol; scores exactly like
//! `builtin:static`. Run as `surgt evaluate --tracker exec:surgt-static-tracker`.

use std::io::{self, BufRead, Write};

use serde_json::{json, Value};

fn main() -> io::Result<()> {
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    let mut held: Option<(Value, Value)> = None;
    for line in stdin.lock().lines() {
        let msg: Value = serde_json::from_str(&line?).map_err(io::Error::other)?;
        let reply = match msg["type"].as_str() {
            Some("init") => {
                held = Some((msg["bbox_left"].clone(), msg["bbox_right"].clone()));
                json!({"type": "ready"})
            }
            Some("frame") => match &held {
                Some((l, r)) => json!({"type": "bbox", "left": l, "right": r}),
                None => json!({"type": "none"}),
            },
            other => return Err(io::Error::other(format!("unexpected message type {other:?}"))),
        };
        writeln!(stdout, "{reply}")?;
        stdout.flush()?;
    }
    Ok(())
}

//! Pulls the model program out of a chat response.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedCode {
    pub source: String,
    /// False when the response had no fenced block and the whole text was taken.
    pub fenced: bool,
    /// True when the block carried the target language label.
    pub labeled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("response contains no code")]
pub struct EmptyResponse;

struct Block {
    label: String,
    body: String,
}

fn fenced_blocks(text: &str) -> Vec<Block> {
    let mut blocks = Vec::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        match current.as_mut() {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    let label = info.split_whitespace().next().unwrap_or("").to_lowercase();
                    current = Some((label, Vec::new()));
                }
            }
            Some((_, lines)) => {
                if trimmed.trim_end() == "```" {
                    let (label, lines) = current.take().expect("open block");
                    blocks.push(Block {
                        label,
                        body: lines.join("\n"),
                    });
                } else {
                    lines.push(line);
                }
            }
        }
    }
    // an unterminated fence runs to the end of the response
    if let Some((label, lines)) = current {
        blocks.push(Block {
            label,
            body: lines.join("\n"),
        });
    }
    blocks
}

fn label_matches(label: &str, language: &str) -> bool {
    label == language || (language == "python" && label == "py")
}

/// First block labeled `language`; otherwise the largest block; otherwise
/// the whole text, flagged as unfenced.
pub fn extract_code_block(text: &str, language: &str) -> Result<ExtractedCode, EmptyResponse> {
    if text.trim().is_empty() {
        return Err(EmptyResponse);
    }
    let language = language.to_lowercase();
    let blocks = fenced_blocks(text);
    let chosen = if let Some(b) = blocks.iter().find(|b| label_matches(&b.label, &language)) {
        Some((b, true))
    } else {
        // max_by_key returns the last maximum; keep the first instead
        blocks
            .iter()
            .fold(None::<&Block>, |best, b| match best {
                Some(cur) if cur.body.trim().len() >= b.body.trim().len() => Some(cur),
                _ => Some(b),
            })
            .map(|b| (b, false))
    };
    let extracted = match chosen {
        Some((b, labeled)) => ExtractedCode {
            source: b.body.trim_matches('\n').to_string(),
            fenced: true,
            labeled,
        },
        None => ExtractedCode {
            source: text.trim().to_string(),
            fenced: false,
            labeled: false,
        },
    };
    if extracted.source.trim().is_empty() {
        return Err(EmptyResponse);
    }
    Ok(extracted)
}

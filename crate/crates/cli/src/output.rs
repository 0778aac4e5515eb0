use std::io::Write;

use serde::Serialize;

use crate::Format;

/// Writes either human-readable text or one JSON document to stdout.
pub struct Output {
    format: Format,
}

impl Output {
    pub fn new(format: Format) -> Self {
        Output { format }
    }

    pub fn format(&self) -> Format {
        self.format
    }

    /// Prints `text` in text mode and `json` serialized in JSON mode.
    pub fn emit<T: Serialize + ?Sized>(&self, text: &str, json: &T) {
        let mut stdout = std::io::stdout().lock();
        let result = match self.format {
            Format::Text => stdout.write_all(text.as_bytes()),
            Format::Json => serde_json::to_writer_pretty(&mut stdout, json)
                .map_err(std::io::Error::from)
                .and_then(|_| stdout.write_all(b"\n")),
        };
        if let Err(e) = result {
            log::warn!("failed to write output: {e}");
        }
    }
}

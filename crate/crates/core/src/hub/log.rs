use std::fmt;
use std::sync::{Arc, Mutex};

use tracing::Level;

/// Destination of channel-tagged log lines.
pub trait LogSink: Send + Sync {
    fn emit(&self, level: Level, channel: &str, message: &str);
}

/// Forwards to `tracing` with the channel as a structured field.
#[derive(Debug, Default, Clone, Copy)]
pub struct TracingSink;

impl LogSink for TracingSink {
    fn emit(&self, level: Level, channel: &str, message: &str) {
        match level {
            Level::ERROR => tracing::error!(channel, "{message}"),
            Level::WARN => tracing::warn!(channel, "{message}"),
            Level::INFO => tracing::info!(channel, "{message}"),
            Level::DEBUG => tracing::debug!(channel, "{message}"),
            _ => tracing::trace!(channel, "{message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub level: Level,
    pub channel: String,
    pub message: String,
}

/// Keeps every line in memory.
#[derive(Debug, Default)]
pub struct CaptureSink {
    records: Mutex<Vec<LogRecord>>,
}

impl CaptureSink {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn records(&self) -> Vec<LogRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn channel(&self, channel: &str) -> Vec<LogRecord> {
        self.records.lock().unwrap().iter().filter(|r| r.channel == channel).cloned().collect()
    }
}

impl LogSink for CaptureSink {
    fn emit(&self, level: Level, channel: &str, message: &str) {
        self.records.lock().unwrap().push(LogRecord { level, channel: channel.into(), message: message.into() });
    }
}

/// A logger bound to one channel tag. Every plugin gets its own.
#[derive(Clone)]
pub struct LogChannel {
    tag: Arc<str>,
    sink: Arc<dyn LogSink>,
}

impl fmt::Debug for LogChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("LogChannel").field(&self.tag).finish()
    }
}

impl LogChannel {
    pub fn new(tag: &str, sink: Arc<dyn LogSink>) -> Self {
        Self { tag: tag.into(), sink }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn log(&self, level: Level, message: impl fmt::Display) {
        self.sink.emit(level, &self.tag, &message.to_string());
    }

    pub fn error(&self, message: impl fmt::Display) {
        self.log(Level::ERROR, message);
    }

    pub fn warn(&self, message: impl fmt::Display) {
        self.log(Level::WARN, message);
    }

    pub fn info(&self, message: impl fmt::Display) {
        self.log(Level::INFO, message);
    }

    pub fn debug(&self, message: impl fmt::Display) {
        self.log(Level::DEBUG, message);
    }
}
